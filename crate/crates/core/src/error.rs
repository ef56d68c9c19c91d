//! Error types shared across the crate.

/// Snapshot attached to a NaN/Inf training abort: where it happened and the
/// parameter norms at that moment.
#[derive(Debug, Clone)]
pub struct NanDiagnostic {
    pub epoch: usize,
    pub batch: usize,
    pub loss: f64,
    /// (parameter name, L2 norm) pairs at the time of the abort.
    pub param_norms: Vec<(String, f64)>,
}

impl std::fmt::Display for NanDiagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "loss {} at epoch {}, batch {}; param norms:",
            self.loss, self.epoch, self.batch
        )?;
        for (name, norm) in &self.param_norms {
            write!(f, " {}={:.6e}", name, norm)?;
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("file format error: {0}")]
    Format(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("degenerate beamformer weights: {0}")]
    DegenerateWeights(String),

    #[error("undefined SINR: {0}")]
    UndefinedSinr(String),

    #[error("training aborted on non-finite loss: {0}")]
    NanAbort(NanDiagnostic),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
