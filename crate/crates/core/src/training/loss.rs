//! The signed pairwise ℓ2 loss and its analytic gradients.
//!
//! For an instance with sign `s` and `Δ = r(h, t) − r(h′, t′)` the loss is
//! `s‖Δ‖²`. The total loss sums instances and adds `λ‖A‖_F²`.

use ndarray::Array3;
use rayon::prelude::*;

use super::instances::AnalogyInstance;
use crate::compose::{frobenius_norm_a, BilinearOperator, ConstraintMode};
use crate::error::{Error, Result};

fn check_instance(op: &BilinearOperator, inst: &AnalogyInstance<'_>) -> Result<()> {
    for v in [inst.h, inst.t, inst.h2, inst.t2] {
        if v.len() != op.dim() {
            return Err(Error::DimensionMismatch {
                expected: op.dim(),
                found: v.len(),
            });
        }
    }
    Ok(())
}

/// `Δ` written into `delta`, using `scratch` for the second relation.
fn difference(
    op: &BilinearOperator,
    inst: &AnalogyInstance<'_>,
    delta: &mut [f64],
    scratch: &mut [f64],
) {
    op.compose_into(inst.h, inst.t, delta);
    op.compose_into(inst.h2, inst.t2, scratch);
    delta
        .iter_mut()
        .zip(scratch.iter())
        .for_each(|(d, s)| *d -= s);
}

/// `sign · ‖r(h, t) − r(h′, t′)‖²`.
pub fn instance_loss(op: &BilinearOperator, inst: &AnalogyInstance<'_>) -> Result<f64> {
    check_instance(op, inst)?;
    let d = op.dim();
    let (mut delta, mut scratch) = (vec![0.0; d], vec![0.0; d]);
    difference(op, inst, &mut delta, &mut scratch);
    Ok(inst.sign.value() * delta.iter().map(|x| x * x).sum::<f64>())
}

/// `Σ instance_loss + λ‖A‖_F²`.
pub fn total_loss(
    op: &BilinearOperator,
    instances: &[AnalogyInstance<'_>],
    lambda_a: f64,
) -> Result<f64> {
    let mut sum = 0.0;
    for inst in instances {
        sum += instance_loss(op, inst)?;
    }
    Ok(sum + lambda_a * frobenius_norm_a(op).powi(2))
}

/// Gradient of the total loss for a diagonal-mode operator.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub tensor: Array3<f64>,
    pub p: f64,
    pub q: f64,
}

/// Analytic gradient of [`total_loss`] with respect to `A`, `p` and `q`.
pub fn gradients(
    op: &BilinearOperator,
    batch: &[AnalogyInstance<'_>],
    lambda_a: f64,
) -> Result<Gradients> {
    if op.mode() != ConstraintMode::Diagonal {
        return Err(Error::UnsupportedMode);
    }
    let (flat, _) = flat_gradients(op, batch, lambda_a)?;
    let d = op.dim();
    let n = d * d * d;
    Ok(Gradients {
        tensor: Array3::from_shape_vec((d, d, d), flat[..n].to_vec()).expect("d^3 entries"),
        p: flat[n],
        q: flat[n + 1],
    })
}

/// Instances per partial sum. Fixed so the reduction order, and therefore
/// every bit of the result, does not depend on the thread count.
const CHUNK: usize = 16;

/// Gradient in the layout of [`BilinearOperator::flatten`], for either
/// mode, together with the batch loss (including the penalty).
pub fn flat_gradients(
    op: &BilinearOperator,
    batch: &[AnalogyInstance<'_>],
    lambda_a: f64,
) -> Result<(Vec<f64>, f64)> {
    for inst in batch {
        check_instance(op, inst)?;
    }
    let partials: Vec<(Vec<f64>, f64)> = batch
        .par_chunks(CHUNK)
        .map(|chunk| accumulate(op, chunk))
        .collect();

    let mut grad = vec![0.0; op.num_parameters()];
    let mut loss = 0.0;
    for (g, l) in partials {
        grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
        loss += l;
    }

    let tensor = op.tensor().as_slice().expect("standard layout");
    for (g, a) in grad.iter_mut().zip(tensor) {
        *g += 2.0 * lambda_a * a;
    }
    loss += lambda_a * tensor.iter().map(|a| a * a).sum::<f64>();
    Ok((grad, loss))
}

fn accumulate(op: &BilinearOperator, chunk: &[AnalogyInstance<'_>]) -> (Vec<f64>, f64) {
    let d = op.dim();
    let n = d * d * d;
    let mut grad = vec![0.0; op.num_parameters()];
    let (mut delta, mut scratch) = (vec![0.0; d], vec![0.0; d]);
    let mut loss = 0.0;

    for inst in chunk {
        difference(op, inst, &mut delta, &mut scratch);
        let s = inst.sign.value();
        loss += s * delta.iter().map(|x| x * x).sum::<f64>();

        // ∂/∂A⁽ᵏ⁾ᵢⱼ = 2sΔₖ(hᵢtⱼ − h′ᵢt′ⱼ)
        let (dt, rest) = grad.split_at_mut(n);
        for (k, slice) in dt.chunks_exact_mut(d * d).enumerate() {
            let w = 2.0 * s * delta[k];
            if w == 0.0 {
                continue;
            }
            for (i, row) in slice.chunks_exact_mut(d).enumerate() {
                let (a, b) = (w * inst.h[i], w * inst.h2[i]);
                for ((g, t), t2) in row.iter_mut().zip(inst.t).zip(inst.t2) {
                    *g += a * t - b * t2;
                }
            }
        }

        match op.mode() {
            ConstraintMode::Diagonal => {
                let mut dp = 0.0;
                let mut dq = 0.0;
                for k in 0..d {
                    dp += delta[k] * (inst.h[k] - inst.h2[k]);
                    dq += delta[k] * (inst.t[k] - inst.t2[k]);
                }
                rest[0] += 2.0 * s * dp;
                rest[1] += 2.0 * s * dq;
            }
            ConstraintMode::General => {
                let (gp, gq) = rest.split_at_mut(d * d);
                for k in 0..d {
                    let w = 2.0 * s * delta[k];
                    for col in 0..d {
                        gp[k * d + col] += w * (inst.h[col] - inst.h2[col]);
                        gq[k * d + col] += w * (inst.t[col] - inst.t2[col]);
                    }
                }
            }
        }
    }
    (grad, loss)
}
