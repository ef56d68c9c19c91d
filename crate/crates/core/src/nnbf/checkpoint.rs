//! Model checkpoint file: magic "NNBW", format version, architecture dims,
//! then a flat list of named f64 arrays (trainable parameters followed by
//! the batchnorm running statistics), optionally followed by AdamW state.
//! All integers little-endian.

use super::{build_network_with, NnbfNetwork};
use crate::autodiff::optim::AdamW;
use crate::channel::SystemDims;
use crate::{Error, Result};
use std::io::Read;
use std::path::Path;

const MAGIC: &[u8; 4] = b"NNBW";
const VERSION: u32 = 1;

/// Optimizer state carried alongside a checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub step_count: u64,
    /// First/second moment vectors, one pair per trainable parameter in
    /// [`NnbfNetwork::named_parameters`] order.
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn of(opt: &AdamW) -> Self {
        let (m, v) = opt.moments();
        Self {
            step_count: opt.step_count(),
            first_moment: m.to_vec(),
            second_moment: v.to_vec(),
        }
    }
}

fn push_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn push_entry(buf: &mut Vec<u8>, name: &str, shape: &[usize], values: &[f64]) {
    push_u32(buf, name.len() as u32);
    buf.extend_from_slice(name.as_bytes());
    push_u32(buf, shape.len() as u32);
    for &d in shape {
        push_u32(buf, d as u32);
    }
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

/// Serialize the network (and optionally optimizer state) to `path`
/// atomically.
pub fn save_checkpoint(
    net: &NnbfNetwork,
    optimizer: Option<&OptimizerState>,
    path: &Path,
) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    push_u32(&mut buf, VERSION);
    push_u32(&mut buf, net.dims.n_ues as u32);
    push_u32(&mut buf, net.dims.m_rx as u32);
    push_u32(&mut buf, net.dims.k_subcarriers as u32);
    push_u32(&mut buf, net.hidden_width as u32);
    push_u32(&mut buf, u32::from(net.sigma_feature));

    let params = net.named_parameters();
    let buffers = net.named_buffers();
    push_u32(&mut buf, (params.len() + buffers.len()) as u32);
    for (name, tensor) in &params {
        push_entry(&mut buf, name, &tensor.shape(), &tensor.data_ref());
    }
    for (name, values) in &buffers {
        push_entry(&mut buf, name, &[values.len()], values);
    }

    match optimizer {
        Some(state) => {
            buf.push(1);
            buf.extend_from_slice(&state.step_count.to_le_bytes());
            for (m, v) in state.first_moment.iter().zip(&state.second_moment) {
                for x in m {
                    buf.extend_from_slice(&x.to_le_bytes());
                }
                for x in v {
                    buf.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
        None => buf.push(0),
    }

    crate::write_atomic(path, &buf)
}

struct Reader {
    bytes: Vec<u8>,
    pos: usize,
}

impl Reader {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format("truncated checkpoint".into()));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn f64s(&mut self, count: usize) -> Result<Vec<f64>> {
        let raw = self.take(count * 8)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

/// Load a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<(NnbfNetwork, Option<OptimizerState>)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut r = Reader { bytes, pos: 0 };

    if r.take(4)? != MAGIC {
        return Err(Error::Format(
            "bad magic bytes, not a model checkpoint".into(),
        ));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version}, expected {VERSION}"
        )));
    }
    let n_ues = r.u32()? as usize;
    let m_rx = r.u32()? as usize;
    let k_sub = r.u32()? as usize;
    let hidden = r.u32()? as usize;
    let sigma_feature = r.u32()? != 0;

    // The stored architecture is independent of the batch size.
    let dims = SystemDims::new(n_ues, m_rx, k_sub, 1)
        .map_err(|e| Error::Format(format!("invalid dims in checkpoint: {e}")))?;
    let mut net = build_network_with(&dims, hidden, sigma_feature, 0)
        .map_err(|e| Error::Format(format!("invalid architecture in checkpoint: {e}")))?;

    let entry_count = r.u32()? as usize;
    let mut remaining: std::collections::HashMap<String, crate::autodiff::Tensor> =
        net.named_parameters().into_iter().collect();
    let buffer_names: std::collections::HashSet<String> = net
        .named_buffers()
        .into_iter()
        .map(|(name, _)| name)
        .collect();

    for _ in 0..entry_count {
        let name_len = r.u32()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| Error::Format("non-utf8 entry name".into()))?;
        let ndim = r.u32()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u32()? as usize);
        }
        let len = shape.iter().product::<usize>();
        let values = r.f64s(len)?;

        if let Some(tensor) = remaining.remove(&name) {
            if tensor.shape() != shape {
                return Err(Error::Format(format!(
                    "parameter {name} has shape {shape:?}, expected {:?}",
                    tensor.shape()
                )));
            }
            tensor.set_data(&values);
        } else if buffer_names.contains(&name) {
            net.set_buffer(&name, values)?;
        } else {
            return Err(Error::Format(format!("unknown checkpoint entry {name}")));
        }
    }
    if !remaining.is_empty() {
        let mut missing: Vec<_> = remaining.keys().cloned().collect();
        missing.sort();
        return Err(Error::Format(format!(
            "checkpoint is missing parameters: {}",
            missing.join(", ")
        )));
    }

    let optimizer = match r.u8()? {
        0 => None,
        1 => {
            let step_count = r.u64()?;
            let mut first = Vec::new();
            let mut second = Vec::new();
            for (_, p) in net.named_parameters() {
                first.push(r.f64s(p.len())?);
                second.push(r.f64s(p.len())?);
            }
            Some(OptimizerState {
                step_count,
                first_moment: first,
                second_moment: second,
            })
        }
        other => {
            return Err(Error::Format(format!(
                "invalid optimizer flag {other} in checkpoint"
            )))
        }
    };
    if r.pos != r.bytes.len() {
        return Err(Error::Format(
            "trailing bytes after checkpoint payload".into(),
        ));
    }

    Ok((net, optimizer))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::layers::Mode;
    use crate::autodiff::no_grad;
    use crate::channel::{generate_batch, DelayProfile};
    use crate::nnbf::build_network;

    #[test]
    fn round_trip_preserves_parameters_and_buffers() {
        let dims = SystemDims::new(2, 3, 12, 2).unwrap();
        let mut net = build_network(&dims, 24, 5).unwrap();
        // Make running statistics non-trivial before saving.
        let h = generate_batch(&dims, &DelayProfile::toy(30e-9, 30e3), 6);
        no_grad(|| net.forward_graph(&h, Mode::Train, None)).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.nnbw");
        save_checkpoint(&net, None, &path).unwrap();
        let (loaded, opt) = load_checkpoint(&path).unwrap();
        assert!(opt.is_none());
        assert_eq!(loaded.hidden_width, 24);
        assert!(!loaded.sigma_feature);

        for ((na, pa), (nb, pb)) in net
            .named_parameters()
            .iter()
            .zip(loaded.named_parameters().iter())
        {
            assert_eq!(na, nb);
            assert_eq!(pa.data(), pb.data());
        }
        for ((na, ba), (nb, bb)) in net
            .named_buffers()
            .iter()
            .zip(loaded.named_buffers().iter())
        {
            assert_eq!(na, nb);
            assert_eq!(ba, bb);
        }

        // Same weights produce the same beamformer.
        let mut net_a = net;
        let mut net_b = loaded;
        let wa = net_a.forward_beamformer(&h).unwrap();
        let wb = net_b.forward_beamformer(&h).unwrap();
        assert_eq!(wa, wb);
    }

    #[test]
    fn round_trip_with_optimizer_state() {
        let dims = SystemDims::new(2, 2, 12, 1).unwrap();
        let net = build_network(&dims, 8, 7).unwrap();
        let state = OptimizerState {
            step_count: 42,
            first_moment: net
                .parameters()
                .iter()
                .map(|p| vec![0.5; p.len()])
                .collect(),
            second_moment: net
                .parameters()
                .iter()
                .map(|p| vec![0.25; p.len()])
                .collect(),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.nnbw");
        save_checkpoint(&net, Some(&state), &path).unwrap();
        let (_, loaded) = load_checkpoint(&path).unwrap();
        assert_eq!(loaded, Some(state));
    }

    #[test]
    fn corruption_is_rejected() {
        let dims = SystemDims::new(2, 2, 12, 1).unwrap();
        let net = build_network(&dims, 8, 8).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.nnbw");
        save_checkpoint(&net, None, &path).unwrap();
        let good = std::fs::read(&path).unwrap();

        let mut bad_magic = good.clone();
        bad_magic[2] = b'!';
        std::fs::write(&path, &bad_magic).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Format(_))));

        std::fs::write(&path, &good[..good.len() / 2]).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Format(_))));
    }
}
