//! Uplink multi-user SIMO receive beamforming toolkit.
//!
//! The crate combines a small dense complex linear algebra kernel, a
//! tapped-delay-line channel synthesizer, the classical ZFBF and MMSE
//! receive beamformers, and an unsupervised neural beamformer trained by
//! direct sum-rate maximization on a from-scratch reverse-mode autodiff
//! engine.
//!
//! With the `parallel` feature (default) the data-parallel inner loops
//! (channel generation, sweep evaluation, dense layer kernels) run on
//! rayon; without it every path falls back to the equivalent sequential
//! code and produces bit-identical results.

pub mod autodiff;
pub mod beamform;
pub mod channel;
pub mod error;
pub mod linalg;
pub mod nnbf;
pub mod rng;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Write `bytes` to `path` atomically: a temporary sibling file is written
/// first and renamed into place, so interrupted runs never leave partial
/// artifacts at the destination.
pub fn write_atomic(path: &std::path::Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}
