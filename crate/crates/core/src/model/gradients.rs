//! Analytic gradients of the training objective
//!
//! ```text
//! mean_i [ (1−λ)·sre_i + λ·scre_i + c_m·|m_i|₁ + c_f·|P(Ux̂_i ⊙ Vŷ_i)|₁ ] + weight penalties
//! ```
//!
//! where `x̂, ŷ` are the corrupted inputs used for mapping inference and the
//! reconstruction targets are the clean pair. Partner codes in the
//! cross-reconstruction term are constants.

use ndarray::{Array2, ArrayView2, Zip};

use super::penalties::{filter_norm_gradient, weight_penalties};
use super::{pool_rows, unpool_rows, GaeParams, LossBreakdown, PenaltyConfig};
use crate::error::{check_len, GaeError, Result};

/// One minibatch, one pair per row.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    pub x: ArrayView2<'a, f64>,
    pub y: ArrayView2<'a, f64>,
    pub x_corrupt: ArrayView2<'a, f64>,
    pub y_corrupt: ArrayView2<'a, f64>,
}

impl<'a> Batch<'a> {
    /// A batch without corruption.
    pub fn clean(x: ArrayView2<'a, f64>, y: ArrayView2<'a, f64>) -> Self {
        Batch {
            x,
            y,
            x_corrupt: x,
            y_corrupt: y,
        }
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }

    fn validate(&self, input_dim: usize) -> Result<()> {
        let rows = self.x.nrows();
        for (ctx, m) in [
            ("batch x", &self.x),
            ("batch y", &self.y),
            ("batch x_corrupt", &self.x_corrupt),
            ("batch y_corrupt", &self.y_corrupt),
        ] {
            check_len(ctx, input_dim, m.ncols())?;
            check_len(ctx, rows, m.nrows())?;
        }
        if rows == 0 {
            return Err(GaeError::Empty("batch has no pairs".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaeGradients {
    pub du: Array2<f64>,
    pub dv: Array2<f64>,
    pub dw: Array2<f64>,
}

impl GaeGradients {
    pub fn zeros_like(params: &GaeParams) -> Self {
        GaeGradients {
            du: Array2::zeros(params.u.raw_dim()),
            dv: Array2::zeros(params.v.raw_dim()),
            dw: Array2::zeros(params.w.raw_dim()),
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.du
            .iter()
            .chain(self.dv.iter())
            .chain(self.dw.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        self.du *= factor;
        self.dv *= factor;
        self.dw *= factor;
    }

    pub fn add_assign(&mut self, other: &GaeGradients) {
        self.du += &other.du;
        self.dv += &other.dv;
        self.dw += &other.dw;
    }

    pub fn check_finite(&self) -> Result<()> {
        for (name, m) in [("du", &self.du), ("dv", &self.dv), ("dw", &self.dw)] {
            if let Some(pos) = m.iter().position(|g| !g.is_finite()) {
                let (r, c) = (pos / m.ncols(), pos % m.ncols());
                return Err(GaeError::NonFinite(format!("gradient {name}[{r}, {c}]")));
            }
        }
        Ok(())
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn row_sq_sum(m: &Array2<f64>) -> f64 {
    m.iter().map(|v| v * v).sum()
}

/// Reconstruction of both sides with gating `h`, accumulating gradients.
/// Returns the summed squared error over the batch. `weight` multiplies the
/// squared error before differentiation. `dh` receives the gradient with
/// respect to the gating signal when requested.
#[allow(clippy::too_many_arguments)]
fn reconstruct_and_backprop(
    params: &GaeParams,
    h: &Array2<f64>,
    x: &ArrayView2<f64>,
    y: &ArrayView2<f64>,
    gx: &Array2<f64>,
    gy: &Array2<f64>,
    weight: f64,
    grads: &mut GaeGradients,
    dh: Option<&mut Array2<f64>>,
) -> f64 {
    let gated_y = h * gy;
    let gated_x = h * gx;
    let ex = gated_y.dot(&params.u) - x;
    let ey = gated_x.dot(&params.v) - y;
    let err = row_sq_sum(&ex) + row_sq_sum(&ey);
    if weight == 0.0 {
        return err;
    }
    let dxr = ex * (2.0 * weight);
    let dyr = ey * (2.0 * weight);
    grads.du += &gated_y.t().dot(&dxr);
    grads.dv += &gated_x.t().dot(&dyr);
    let back_x = dxr.dot(&params.u.t());
    let back_y = dyr.dot(&params.v.t());
    // through the clean factor responses Vy (in x̃) and Ux (in ỹ)
    grads.dv += &(h * &back_x).t().dot(y);
    grads.du += &(h * &back_y).t().dot(x);
    if let Some(dh) = dh {
        Zip::from(dh)
            .and(gy)
            .and(&back_x)
            .and(gx)
            .and(&back_y)
            .for_each(|d, &gy, &bx, &gx, &by| *d += gy * bx + gx * by);
    }
    err
}

/// Objective value and gradients with respect to `u`, `v`, `w`.
///
/// `partners` holds one detached partner code per row; when it is `None` the
/// cross-reconstruction term is skipped and reported as zero.
pub fn loss_gradients(
    params: &GaeParams,
    batch: &Batch<'_>,
    partners: Option<ArrayView2<f64>>,
    lambda: f64,
    penalties: &PenaltyConfig,
) -> Result<(LossBreakdown, GaeGradients)> {
    let config = *params.config();
    batch.validate(config.input_dim)?;
    if !(0.0..=1.0).contains(&lambda) {
        return Err(GaeError::Config(format!("lambda {lambda} outside [0, 1]")));
    }
    if let Some(p) = &partners {
        check_len("partner codes rows", batch.len(), p.nrows())?;
        check_len("partner codes cols", config.num_mappings, p.ncols())?;
    }
    let n = batch.len() as f64;
    let nonlin = config.mapping_nonlinearity;
    let mut grads = GaeGradients::zeros_like(params);

    // mapping inference on the corrupted inputs
    let gxc = params.factors_u(batch.x_corrupt);
    let gyc = params.factors_v(batch.y_corrupt);
    let (pooled, pre) = params.mapping_preactivation(&gxc, &gyc);
    let codes = pre.mapv(|a| nonlin.apply(a));
    let mapped = codes.dot(&params.w);
    let h = unpool_rows(&mapped);

    // reconstruction uses the clean other side
    let gx = params.factors_u(batch.x);
    let gy = params.factors_v(batch.y);

    let mut dh = Array2::zeros(h.raw_dim());
    let sre_sum = reconstruct_and_backprop(
        params,
        &h,
        &batch.x,
        &batch.y,
        &gx,
        &gy,
        (1.0 - lambda) / n,
        &mut grads,
        Some(&mut dh),
    );

    let scre_sum = match partners {
        Some(partner_codes) => {
            let partner_mapped = partner_codes.dot(&params.w);
            let hp = unpool_rows(&partner_mapped);
            let mut dhp = Array2::zeros(hp.raw_dim());
            let err = reconstruct_and_backprop(
                params,
                &hp,
                &batch.x,
                &batch.y,
                &gx,
                &gy,
                lambda / n,
                &mut grads,
                Some(&mut dhp),
            );
            if lambda != 0.0 {
                grads.dw += &partner_codes.t().dot(&pool_rows(&dhp));
            }
            err
        }
        None => 0.0,
    };

    // h = Pᵀ Wᵀ m
    let dmapped = pool_rows(&dh);
    grads.dw += &codes.t().dot(&dmapped);
    let mut dcodes = dmapped.dot(&params.w.t());
    if penalties.mapping_sparsity != 0.0 {
        let c = penalties.mapping_sparsity / n;
        Zip::from(&mut dcodes)
            .and(&codes)
            .for_each(|d, &m| *d += c * sign(m));
    }
    let dpre = Zip::from(&dcodes)
        .and(&codes)
        .map_collect(|&d, &m| d * nonlin.derivative_from_output(m));
    grads.dw += &dpre.t().dot(&pooled);
    let mut dpooled = dpre.dot(&params.w);
    if penalties.factor_sparsity != 0.0 {
        let c = penalties.factor_sparsity / n;
        Zip::from(&mut dpooled)
            .and(&pooled)
            .for_each(|d, &p| *d += c * sign(p));
    }
    let dfactors = unpool_rows(&dpooled);
    grads.du += &(&dfactors * &gyc).t().dot(&batch.x_corrupt);
    grads.dv += &(&dfactors * &gxc).t().dot(&batch.y_corrupt);

    if penalties.weight_decay != 0.0 {
        let c = 2.0 * penalties.weight_decay;
        grads.du.scaled_add(c, &params.u);
        grads.dv.scaled_add(c, &params.v);
        grads.dw.scaled_add(c, &params.w);
    }
    if penalties.filter_norm != 0.0 {
        grads
            .du
            .scaled_add(penalties.filter_norm, &filter_norm_gradient(params.u.view()));
        grads
            .dv
            .scaled_add(penalties.filter_norm, &filter_norm_gradient(params.v.view()));
    }

    let activation_penalty = penalties.mapping_sparsity * codes.iter().map(|v| v.abs()).sum::<f64>()
        / n
        + penalties.factor_sparsity * pooled.iter().map(|v| v.abs()).sum::<f64>() / n;
    let penalty_total = activation_penalty + weight_penalties(params, penalties);
    let breakdown = LossBreakdown::new(sre_sum / n, scre_sum / n, penalty_total, lambda);
    grads.check_finite()?;
    Ok((breakdown, grads))
}
