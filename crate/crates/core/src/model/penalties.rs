use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::GaeParams;

/// Coefficients of the auxiliary training penalties.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct PenaltyConfig {
    /// L1 on mapping-unit activations.
    pub mapping_sparsity: f64,
    /// L1 on pooled factor activations.
    pub factor_sparsity: f64,
    /// Squared Frobenius norm of `u`, `v` and `w`.
    pub weight_decay: f64,
    /// Deviation of each input filter's norm from the mean filter norm, plus
    /// the squared mean of the filter's entries.
    pub filter_norm: f64,
}

impl PenaltyConfig {
    pub fn none() -> Self {
        PenaltyConfig::default()
    }
}

/// `Σ_f (‖f‖ − mean‖f‖)² + (mean of f)²` over the rows of one filter matrix.
pub fn filter_norm_penalty(filters: ArrayView2<f64>) -> f64 {
    let norms: Vec<f64> = filters
        .rows()
        .into_iter()
        .map(|f| f.dot(&f).sqrt())
        .collect();
    let mean_norm = norms.iter().sum::<f64>() / norms.len() as f64;
    filters
        .rows()
        .into_iter()
        .zip(&norms)
        .map(|(f, &n)| {
            let mu = f.mean().unwrap_or(0.0);
            (n - mean_norm).powi(2) + mu * mu
        })
        .sum()
}

/// Gradient of [`filter_norm_penalty`] with respect to the filter matrix.
pub(crate) fn filter_norm_gradient(filters: ArrayView2<f64>) -> Array2<f64> {
    let cols = filters.ncols() as f64;
    let norms: Vec<f64> = filters
        .rows()
        .into_iter()
        .map(|f| f.dot(&f).sqrt())
        .collect();
    let mean_norm = norms.iter().sum::<f64>() / norms.len() as f64;
    let mut grad = Array2::zeros(filters.raw_dim());
    for ((f, mut g), &n) in filters
        .rows()
        .into_iter()
        .zip(grad.rows_mut())
        .zip(&norms)
    {
        // deviations from the mean sum to zero, so the mean's own dependence drops out
        let radial = if n > 0.0 { 2.0 * (n - mean_norm) / n } else { 0.0 };
        let mu = f.mean().unwrap_or(0.0);
        g.zip_mut_with(&f, |gi, &fi| *gi = radial * fi + 2.0 * mu / cols);
    }
    grad
}

/// Sum of all auxiliary penalties. Activation terms are averaged over the rows
/// of `pooled_factors` and `codes` (one row per pair); weight terms are added
/// once.
pub fn auxiliary_penalties(
    params: &GaeParams,
    pooled_factors: ArrayView2<f64>,
    codes: ArrayView2<f64>,
    config: &PenaltyConfig,
) -> f64 {
    let rows = codes.nrows().max(1) as f64;
    let mut total = 0.0;
    if config.mapping_sparsity != 0.0 {
        total += config.mapping_sparsity * codes.iter().map(|v| v.abs()).sum::<f64>() / rows;
    }
    if config.factor_sparsity != 0.0 {
        total +=
            config.factor_sparsity * pooled_factors.iter().map(|v| v.abs()).sum::<f64>() / rows;
    }
    total + weight_penalties(params, config)
}

pub(crate) fn weight_penalties(params: &GaeParams, config: &PenaltyConfig) -> f64 {
    let mut total = 0.0;
    if config.weight_decay != 0.0 {
        let sq = |m: &Array2<f64>| m.iter().map(|v| v * v).sum::<f64>();
        total += config.weight_decay * (sq(&params.u) + sq(&params.v) + sq(&params.w));
    }
    if config.filter_norm != 0.0 {
        total += config.filter_norm
            * (filter_norm_penalty(params.u.view()) + filter_norm_penalty(params.v.view()));
    }
    total
}
