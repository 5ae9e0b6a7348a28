//! Gated autoencoder parameters and forward computations.
//!
//! Shapes: `u` and `v` are `num_factors × input_dim`, so `u·x` is a vector of
//! factor responses, and `w` is `num_mappings × num_factors/2`. Factor
//! responses of the two inputs are multiplied element-wise, adjacent factor
//! pairs are summed by the fixed pooling matrix, and `w` pools across the
//! resulting subspaces into the mapping units.
//!
//! Every forward function has a batched form operating on row-major matrices
//! (one pair per row) and a single-pair form for convenience.

mod gradients;
mod penalties;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, GaeError, Result};

pub use gradients::{loss_gradients, Batch, GaeGradients};
pub use penalties::{auxiliary_penalties, filter_norm_penalty, PenaltyConfig};

/// Squashing function applied to the mapping units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Nonlinearity {
    #[default]
    Sigmoid,
    Tanh,
}

impl Nonlinearity {
    pub fn apply(self, a: f64) -> f64 {
        match self {
            Nonlinearity::Sigmoid => 1.0 / (1.0 + (-a).exp()),
            Nonlinearity::Tanh => a.tanh(),
        }
    }

    /// Derivative expressed through the output value `s = apply(a)`.
    pub fn derivative_from_output(self, s: f64) -> f64 {
        match self {
            Nonlinearity::Sigmoid => s * (1.0 - s),
            Nonlinearity::Tanh => 1.0 - s * s,
        }
    }

    /// Open interval of attainable outputs.
    pub fn range(self) -> (f64, f64) {
        match self {
            Nonlinearity::Sigmoid => (0.0, 1.0),
            Nonlinearity::Tanh => (-1.0, 1.0),
        }
    }
}

impl std::fmt::Display for Nonlinearity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Nonlinearity::Sigmoid => "sigmoid",
            Nonlinearity::Tanh => "tanh",
        })
    }
}

impl std::str::FromStr for Nonlinearity {
    type Err = GaeError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sigmoid" => Ok(Nonlinearity::Sigmoid),
            "tanh" => Ok(Nonlinearity::Tanh),
            other => Err(GaeError::Config(format!("unknown nonlinearity '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GaeConfig {
    pub input_dim: usize,
    pub num_factors: usize,
    pub num_mappings: usize,
    #[serde(default)]
    pub mapping_nonlinearity: Nonlinearity,
}

impl GaeConfig {
    pub fn new(
        input_dim: usize,
        num_factors: usize,
        num_mappings: usize,
        mapping_nonlinearity: Nonlinearity,
    ) -> Result<Self> {
        let config = GaeConfig {
            input_dim,
            num_factors,
            num_mappings,
            mapping_nonlinearity,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(GaeError::Config("input_dim must be at least 1".into()));
        }
        if self.num_mappings == 0 {
            return Err(GaeError::Config("num_mappings must be at least 1".into()));
        }
        if self.num_factors == 0 || self.num_factors % 2 != 0 {
            return Err(GaeError::Config(format!(
                "num_factors must be a positive even number, got {}",
                self.num_factors
            )));
        }
        Ok(())
    }

    pub fn num_pooled(&self) -> usize {
        self.num_factors / 2
    }
}

/// Band-diagonal matrix summing adjacent factor pairs: row `r` has ones at
/// columns `2r` and `2r + 1`.
pub fn build_pooling_matrix(num_factors: usize) -> Result<Array2<f64>> {
    if num_factors == 0 || num_factors % 2 != 0 {
        return Err(GaeError::Config(format!(
            "pooling needs a positive even factor count, got {num_factors}"
        )));
    }
    let rows = num_factors / 2;
    let mut pool = Array2::zeros((rows, num_factors));
    for r in 0..rows {
        pool[[r, 2 * r]] = 1.0;
        pool[[r, 2 * r + 1]] = 1.0;
    }
    Ok(pool)
}

/// Applies the pooling matrix to every row: `(B × O) -> (B × O/2)`.
pub(crate) fn pool_rows(factors: &Array2<f64>) -> Array2<f64> {
    let (rows, cols) = factors.dim();
    let mut out = Array2::zeros((rows, cols / 2));
    Zip::from(out.rows_mut())
        .and(factors.rows())
        .for_each(|mut o, f| {
            for r in 0..cols / 2 {
                o[r] = f[2 * r] + f[2 * r + 1];
            }
        });
    out
}

/// Applies the transposed pooling matrix to every row: `(B × O/2) -> (B × O)`.
pub(crate) fn unpool_rows(pooled: &Array2<f64>) -> Array2<f64> {
    let (rows, cols) = pooled.dim();
    let mut out = Array2::zeros((rows, cols * 2));
    Zip::from(out.rows_mut())
        .and(pooled.rows())
        .for_each(|mut o, p| {
            for r in 0..cols {
                o[2 * r] = p[r];
                o[2 * r + 1] = p[r];
            }
        });
    out
}

/// Transformation code inferred from one input pair.
#[derive(Debug, Clone, PartialEq)]
pub struct MappingCode(pub Array1<f64>);

impl MappingCode {
    pub fn zeros(len: usize) -> Self {
        MappingCode(Array1::zeros(len))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn view(&self) -> ArrayView1<'_, f64> {
        self.0.view()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaeParams {
    config: GaeConfig,
    pub u: Array2<f64>,
    pub v: Array2<f64>,
    pub w: Array2<f64>,
    pool: Array2<f64>,
}

impl GaeParams {
    pub fn zeros(config: GaeConfig) -> Result<Self> {
        config.validate()?;
        Self::from_parts(
            config,
            Array2::zeros((config.num_factors, config.input_dim)),
            Array2::zeros((config.num_factors, config.input_dim)),
            Array2::zeros((config.num_mappings, config.num_pooled())),
        )
    }

    /// Uniform initialization in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn random<R: Rng + ?Sized>(config: GaeConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let filter_bound = 1.0 / (config.input_dim as f64).sqrt();
        let pool_bound = 1.0 / (config.num_pooled() as f64).sqrt();
        let mut draw = |shape: (usize, usize), bound: f64| {
            Array2::from_shape_simple_fn(shape, || rng.random_range(-bound..=bound))
        };
        let u = draw((config.num_factors, config.input_dim), filter_bound);
        let v = draw((config.num_factors, config.input_dim), filter_bound);
        let w = draw((config.num_mappings, config.num_pooled()), pool_bound);
        Self::from_parts(config, u, v, w)
    }

    pub fn from_parts(
        config: GaeConfig,
        u: Array2<f64>,
        v: Array2<f64>,
        w: Array2<f64>,
    ) -> Result<Self> {
        config.validate()?;
        let filters = (config.num_factors, config.input_dim);
        if u.dim() != filters {
            return Err(GaeError::Config(format!(
                "u has shape {:?}, expected {filters:?}",
                u.dim()
            )));
        }
        if v.dim() != filters {
            return Err(GaeError::Config(format!(
                "v has shape {:?}, expected {filters:?}",
                v.dim()
            )));
        }
        let mapping = (config.num_mappings, config.num_pooled());
        if w.dim() != mapping {
            return Err(GaeError::Config(format!(
                "w has shape {:?}, expected {mapping:?}",
                w.dim()
            )));
        }
        for (name, m) in [("u", &u), ("v", &v), ("w", &w)] {
            if m.iter().any(|x| !x.is_finite()) {
                return Err(GaeError::NonFinite(name.into()));
            }
        }
        Ok(GaeParams {
            config,
            u,
            v,
            w,
            pool: build_pooling_matrix(config.num_factors)?,
        })
    }

    pub fn config(&self) -> &GaeConfig {
        &self.config
    }

    pub fn pool(&self) -> &Array2<f64> {
        &self.pool
    }

    fn check_rows(&self, context: &'static str, m: &ArrayView2<f64>, cols: usize) -> Result<()> {
        check_len(context, cols, m.ncols())
    }

    /// Factor responses `x·Uᵀ` for a batch of `x` rows.
    pub fn factors_u(&self, x: ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.u.t())
    }

    /// Factor responses `y·Vᵀ` for a batch of `y` rows.
    pub fn factors_v(&self, y: ArrayView2<f64>) -> Array2<f64> {
        y.dot(&self.v.t())
    }

    /// Pre-activation of the mapping units given both factor responses.
    /// Returns `(pooled factors, pre-activations)`.
    pub(crate) fn mapping_preactivation(
        &self,
        gx: &Array2<f64>,
        gy: &Array2<f64>,
    ) -> (Array2<f64>, Array2<f64>) {
        let pooled = pool_rows(&(gx * gy));
        let pre = pooled.dot(&self.w.t());
        (pooled, pre)
    }

    fn squash(&self, mut pre: Array2<f64>) -> Array2<f64> {
        let f = self.config.mapping_nonlinearity;
        pre.mapv_inplace(|a| f.apply(a));
        pre
    }

    /// Mapping codes for a batch of pairs, one row per pair.
    pub fn infer_mappings(&self, x: ArrayView2<f64>, y: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_rows("infer_mappings x", &x, self.config.input_dim)?;
        self.check_rows("infer_mappings y", &y, self.config.input_dim)?;
        check_len("infer_mappings batch", x.nrows(), y.nrows())?;
        let (_, pre) = self.mapping_preactivation(&self.factors_u(x), &self.factors_v(y));
        Ok(self.squash(pre))
    }

    pub fn infer_mapping(&self, x: ArrayView1<f64>, y: ArrayView1<f64>) -> Result<MappingCode> {
        let codes = self.infer_mappings(x.insert_axis(Axis(0)), y.insert_axis(Axis(0)))?;
        Ok(MappingCode(codes.row(0).to_owned()))
    }

    /// Gating signal `Pᵀ·Wᵀ·m` for each row of codes.
    pub(crate) fn gates(&self, codes: ArrayView2<f64>) -> Array2<f64> {
        unpool_rows(&codes.dot(&self.w))
    }

    /// Batched reconstruction of `x` from `y`: rows of `Uᵀ(Pᵀ·Wᵀ·m ⊙ V·y)`.
    pub fn reconstruct_xs(&self, codes: ArrayView2<f64>, y: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_rows("reconstruct_x codes", &codes, self.config.num_mappings)?;
        self.check_rows("reconstruct_x y", &y, self.config.input_dim)?;
        check_len("reconstruct_x batch", codes.nrows(), y.nrows())?;
        let gated = self.gates(codes) * self.factors_v(y);
        Ok(gated.dot(&self.u))
    }

    /// Batched reconstruction of `y` from `x`: rows of `Vᵀ(Pᵀ·Wᵀ·m ⊙ U·x)`.
    pub fn reconstruct_ys(&self, codes: ArrayView2<f64>, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_rows("reconstruct_y codes", &codes, self.config.num_mappings)?;
        self.check_rows("reconstruct_y x", &x, self.config.input_dim)?;
        check_len("reconstruct_y batch", codes.nrows(), x.nrows())?;
        let gated = self.gates(codes) * self.factors_u(x);
        Ok(gated.dot(&self.v))
    }

    pub fn reconstruct_x(&self, m: &MappingCode, y: ArrayView1<f64>) -> Result<Array1<f64>> {
        let out = self.reconstruct_xs(m.view().insert_axis(Axis(0)), y.insert_axis(Axis(0)))?;
        Ok(out.row(0).to_owned())
    }

    pub fn reconstruct_y(&self, m: &MappingCode, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        let out = self.reconstruct_ys(m.view().insert_axis(Axis(0)), x.insert_axis(Axis(0)))?;
        Ok(out.row(0).to_owned())
    }

    /// Symmetric reconstruction error with the mapping inferred from the
    /// corrupted inputs and the clean pair as targets.
    pub fn symmetric_recon_error(
        &self,
        x: ArrayView1<f64>,
        y: ArrayView1<f64>,
        x_corrupt: ArrayView1<f64>,
        y_corrupt: ArrayView1<f64>,
    ) -> Result<f64> {
        check_len("symmetric_recon_error x", self.config.input_dim, x.len())?;
        check_len("symmetric_recon_error y", self.config.input_dim, y.len())?;
        let m = self.infer_mapping(x_corrupt, y_corrupt)?;
        self.symmetric_cross_recon_error(&m, x, y)
    }

    /// Reconstructs both sides of the pair `(x, y)` using a mapping code that
    /// was inferred from some other pair.
    pub fn cross_reconstruct(
        &self,
        m_partner: &MappingCode,
        x: ArrayView1<f64>,
        y: ArrayView1<f64>,
    ) -> Result<(Array1<f64>, Array1<f64>)> {
        Ok((
            self.reconstruct_x(m_partner, y)?,
            self.reconstruct_y(m_partner, x)?,
        ))
    }

    pub fn symmetric_cross_recon_error(
        &self,
        m_partner: &MappingCode,
        x: ArrayView1<f64>,
        y: ArrayView1<f64>,
    ) -> Result<f64> {
        let (xr, yr) = self.cross_reconstruct(m_partner, x, y)?;
        Ok(squared_distance(x, xr.view()) + squared_distance(y, yr.view()))
    }

    /// Per-row symmetric reconstruction errors `‖x − x̃‖² + ‖y − ỹ‖²` for a
    /// batch, reconstructing with the given codes.
    pub fn pair_errors(
        &self,
        codes: ArrayView2<f64>,
        x: ArrayView2<f64>,
        y: ArrayView2<f64>,
    ) -> Result<Array1<f64>> {
        let xr = self.reconstruct_xs(codes, y)?;
        let yr = self.reconstruct_ys(codes, x)?;
        let ex = (&xr - &x).mapv(|d| d * d).sum_axis(Axis(1));
        let ey = (&yr - &y).mapv(|d| d * d).sum_axis(Axis(1));
        Ok(ex + ey)
    }
}

pub(crate) fn squared_distance(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(p, q)| (p - q) * (p - q)).sum()
}

/// Interpolates the reconstruction and cross-reconstruction errors.
pub fn combined_loss(sre: f64, scre: f64, lambda: f64) -> f64 {
    (1.0 - lambda) * sre + lambda * scre
}

/// Per-component loss values. `total = (1 − λ)·sre + λ·scre + penalties`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub sre: f64,
    pub scre: f64,
    pub penalties: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(sre: f64, scre: f64, penalties: f64, lambda: f64) -> Self {
        LossBreakdown {
            sre,
            scre,
            penalties,
            total: combined_loss(sre, scre, lambda) + penalties,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.sre.is_finite()
            && self.scre.is_finite()
            && self.penalties.is_finite()
            && self.total.is_finite()
    }
}
