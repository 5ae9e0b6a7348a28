use ndarray::{Array2, ArrayView2};
use rand::Rng;

use crate::model::{GaeGradients, GaeParams};

/// Zeroes each input unit independently with probability `rate`. The two
/// sides get independent masks; callers keep the clean inputs as targets.
pub fn corrupt_inputs<R: Rng + ?Sized>(
    x: ArrayView2<f64>,
    y: ArrayView2<f64>,
    rate: f64,
    rng: &mut R,
) -> (Array2<f64>, Array2<f64>) {
    let mut xc = x.to_owned();
    let mut yc = y.to_owned();
    if rate > 0.0 {
        for v in xc.iter_mut().chain(yc.iter_mut()) {
            if rng.random::<f64>() < rate {
                *v = 0.0;
            }
        }
    }
    (xc, yc)
}

/// Rescales the gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_gradients(grads: &mut GaeGradients, max_norm: Option<f64>) -> f64 {
    let norm = grads.global_norm();
    if let Some(limit) = max_norm {
        if norm > limit {
            grads.scale(limit / norm);
        }
    }
    norm
}

fn frobenius(m: &Array2<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Rounds every entry to the nearest f32 so parameters round-trip exactly
/// through f32 checkpoints.
pub(crate) fn quantize(m: &mut Array2<f64>) {
    m.mapv_inplace(|v| v as f32 as f64);
}

fn project_matrix(m: &mut Array2<f64>, limit: f64) {
    let mut norm = frobenius(m);
    if norm <= limit {
        return;
    }
    *m *= limit / norm;
    quantize(m);
    norm = frobenius(m);
    // f32 rounding can land a hair above the limit
    while norm > limit {
        *m *= (limit / norm) * (1.0 - 1e-7);
        quantize(m);
        norm = frobenius(m);
    }
}

/// Rescales each of `u`, `v`, `w` so its Frobenius norm is at most
/// `max_norm`, keeping entries on the f32 grid.
pub fn project_weights(params: &mut GaeParams, max_norm: Option<f64>) {
    if let Some(limit) = max_norm {
        project_matrix(&mut params.u, limit);
        project_matrix(&mut params.v, limit);
        project_matrix(&mut params.w, limit);
    }
}

/// Clipped SGD step followed by norm projection. Parameters stay on the f32
/// grid so that checkpoints reproduce them bit for bit.
pub fn apply_constraints(
    params: &mut GaeParams,
    grads: &mut GaeGradients,
    learning_rate: f64,
    grad_clip_norm: Option<f64>,
    max_weight_norm: Option<f64>,
) {
    clip_gradients(grads, grad_clip_norm);
    params.u.scaled_add(-learning_rate, &grads.du);
    params.v.scaled_add(-learning_rate, &grads.dv);
    params.w.scaled_add(-learning_rate, &grads.dw);
    quantize(&mut params.u);
    quantize(&mut params.v);
    quantize(&mut params.w);
    project_weights(params, max_weight_norm);
}
