//! Elementwise and reduction operations on [`Tensor`]s.

use super::Tensor;
use crate::{Error, Result};

fn same_shape(a: &Tensor, b: &Tensor) -> Result<Vec<usize>> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa != sb {
        return Err(Error::Shape(format!(
            "elementwise op on shapes {sa:?} and {sb:?}"
        )));
    }
    Ok(sa)
}

/// Elementwise sum.
pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let shape = same_shape(a, b)?;
    let data = a
        .data_ref()
        .iter()
        .zip(b.data_ref().iter())
        .map(|(x, y)| x + y)
        .collect();
    let (pa, pb) = (a.clone(), b.clone());
    Ok(Tensor::from_op(
        shape,
        data,
        vec![a.clone(), b.clone()],
        move |out_grad, store| {
            if pa.requires_grad() {
                store.accumulate(&pa, out_grad);
            }
            if pb.requires_grad() {
                store.accumulate(&pb, out_grad);
            }
        },
    ))
}

/// Elementwise difference.
pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let shape = same_shape(a, b)?;
    let data = a
        .data_ref()
        .iter()
        .zip(b.data_ref().iter())
        .map(|(x, y)| x - y)
        .collect();
    let (pa, pb) = (a.clone(), b.clone());
    Ok(Tensor::from_op(
        shape,
        data,
        vec![a.clone(), b.clone()],
        move |out_grad, store| {
            if pa.requires_grad() {
                store.accumulate(&pa, out_grad);
            }
            if pb.requires_grad() {
                let slot = store.slot(&pb);
                for (s, g) in slot.iter_mut().zip(out_grad) {
                    *s -= g;
                }
            }
        },
    ))
}

/// Elementwise product. Input values are captured at forward time so the
/// backward pass stays valid even when both operands are the same tensor.
pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let shape = same_shape(a, b)?;
    let va = a.data();
    let vb = b.data();
    let data = va.iter().zip(&vb).map(|(x, y)| x * y).collect();
    let (pa, pb) = (a.clone(), b.clone());
    Ok(Tensor::from_op(
        shape,
        data,
        vec![a.clone(), b.clone()],
        move |out_grad, store| {
            if pa.requires_grad() {
                let slot = store.slot(&pa);
                for ((s, g), y) in slot.iter_mut().zip(out_grad).zip(&vb) {
                    *s += g * y;
                }
            }
            if pb.requires_grad() {
                let slot = store.slot(&pb);
                for ((s, g), x) in slot.iter_mut().zip(out_grad).zip(&va) {
                    *s += g * x;
                }
            }
        },
    ))
}

/// Multiply by a real constant.
pub fn scale(a: &Tensor, factor: f64) -> Tensor {
    let data = a.data_ref().iter().map(|x| x * factor).collect();
    let pa = a.clone();
    Tensor::from_op(a.shape(), data, vec![a.clone()], move |out_grad, store| {
        let slot = store.slot(&pa);
        for (s, g) in slot.iter_mut().zip(out_grad) {
            *s += g * factor;
        }
    })
}

/// Sum of all elements, as a scalar tensor.
pub fn sum(a: &Tensor) -> Tensor {
    let total: f64 = a.data_ref().iter().sum();
    let pa = a.clone();
    Tensor::from_op(
        vec![1],
        vec![total],
        vec![a.clone()],
        move |out_grad, store| {
            let g = out_grad[0];
            let slot = store.slot(&pa);
            for s in slot.iter_mut() {
                *s += g;
            }
        },
    )
}

/// Mean of all elements, as a scalar tensor.
pub fn mean(a: &Tensor) -> Tensor {
    let n = a.len() as f64;
    let total: f64 = a.data_ref().iter().sum();
    let pa = a.clone();
    Tensor::from_op(
        vec![1],
        vec![total / n],
        vec![a.clone()],
        move |out_grad, store| {
            let g = out_grad[0] / n;
            let slot = store.slot(&pa);
            for s in slot.iter_mut() {
                *s += g;
            }
        },
    )
}

/// Exact GELU: `x * Phi(x)` with the Gaussian CDF expressed through erf.
pub fn gelu(x: &Tensor) -> Tensor {
    const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
    let vx = x.data();
    let data = vx
        .iter()
        .map(|&v| v * 0.5 * (1.0 + libm::erf(v * FRAC_1_SQRT_2)))
        .collect();
    let px = x.clone();
    Tensor::from_op(x.shape(), data, vec![x.clone()], move |out_grad, store| {
        let inv_sqrt_tau = 1.0 / (std::f64::consts::TAU).sqrt();
        let slot = store.slot(&px);
        for ((s, g), &v) in slot.iter_mut().zip(out_grad).zip(&vx) {
            let cdf = 0.5 * (1.0 + libm::erf(v * FRAC_1_SQRT_2));
            let pdf = inv_sqrt_tau * (-0.5 * v * v).exp();
            *s += g * (cdf + v * pdf);
        }
    })
}

/// Concatenate two rank-2 tensors along the second axis:
/// (B, F1) + (B, F2) -> (B, F1 + F2).
pub fn concat_cols(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.len() != 2 || sb.len() != 2 || sa[0] != sb[0] {
        return Err(Error::Shape(format!(
            "concat_cols on shapes {sa:?} and {sb:?}"
        )));
    }
    let (rows, fa, fb) = (sa[0], sa[1], sb[1]);
    let (va, vb) = (a.data_ref(), b.data_ref());
    let mut data = Vec::with_capacity(rows * (fa + fb));
    for r in 0..rows {
        data.extend_from_slice(&va[r * fa..(r + 1) * fa]);
        data.extend_from_slice(&vb[r * fb..(r + 1) * fb]);
    }
    drop((va, vb));
    let (pa, pb) = (a.clone(), b.clone());
    Ok(Tensor::from_op(
        vec![rows, fa + fb],
        data,
        vec![a.clone(), b.clone()],
        move |out_grad, store| {
            let width = fa + fb;
            if pa.requires_grad() {
                let slot = store.slot(&pa);
                for r in 0..rows {
                    for c in 0..fa {
                        slot[r * fa + c] += out_grad[r * width + c];
                    }
                }
            }
            if pb.requires_grad() {
                let slot = store.slot(&pb);
                for r in 0..rows {
                    for c in 0..fb {
                        slot[r * fb + c] += out_grad[r * width + fa + c];
                    }
                }
            }
        },
    ))
}
