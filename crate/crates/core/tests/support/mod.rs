//! Straight-line reference implementation of the training objective, written
//! with plain loops and no shared code from the library.

#![allow(dead_code)]

pub type Mat = Vec<Vec<f64>>;

pub struct Coeffs {
    pub lambda: f64,
    pub mapping_l1: f64,
    pub factor_l1: f64,
    pub weight_decay: f64,
    pub filter_norm: f64,
    pub tanh: bool,
}

pub struct Pairs {
    pub x: Mat,
    pub y: Mat,
    pub xc: Mat,
    pub yc: Mat,
    pub partners: Mat,
}

fn matvec(m: &Mat, v: &[f64]) -> Vec<f64> {
    m.iter().map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum()).collect()
}

fn squash(a: f64, tanh: bool) -> f64 {
    if tanh {
        a.tanh()
    } else {
        1.0 / (1.0 + (-a).exp())
    }
}

/// `(pooled factors, mapping code)` of one pair.
pub fn code(u: &Mat, v: &Mat, w: &Mat, x: &[f64], y: &[f64], tanh: bool) -> (Vec<f64>, Vec<f64>) {
    let fu = matvec(u, x);
    let fv = matvec(v, y);
    let pooled: Vec<f64> = (0..fu.len() / 2)
        .map(|q| fu[2 * q] * fv[2 * q] + fu[2 * q + 1] * fv[2 * q + 1])
        .collect();
    let m = matvec(w, &pooled).into_iter().map(|a| squash(a, tanh)).collect();
    (pooled, m)
}

/// `‖x − x̃‖² + ‖y − ỹ‖²` reconstructing with the given code.
pub fn sre(u: &Mat, v: &Mat, w: &Mat, m: &[f64], x: &[f64], y: &[f64]) -> f64 {
    let fu = matvec(u, x);
    let fv = matvec(v, y);
    let f = u.len();
    let gate: Vec<f64> = (0..f)
        .map(|r| (0..m.len()).map(|k| w[k][r / 2] * m[k]).sum())
        .collect();
    let mut err = 0.0;
    for c in 0..x.len() {
        let xr: f64 = (0..f).map(|r| u[r][c] * gate[r] * fv[r]).sum();
        let yr: f64 = (0..f).map(|r| v[r][c] * gate[r] * fu[r]).sum();
        err += (x[c] - xr).powi(2) + (y[c] - yr).powi(2);
    }
    err
}

fn filter_penalty(f: &Mat) -> f64 {
    let norms: Vec<f64> = f.iter().map(|r| r.iter().map(|a| a * a).sum::<f64>().sqrt()).collect();
    let mean = norms.iter().sum::<f64>() / norms.len() as f64;
    f.iter()
        .zip(&norms)
        .map(|(r, n)| {
            let mu = r.iter().sum::<f64>() / r.len() as f64;
            (n - mean).powi(2) + mu * mu
        })
        .sum()
}

fn sum_sq(m: &Mat) -> f64 {
    m.iter().flatten().map(|a| a * a).sum()
}

/// Batch-mean objective with penalties.
pub fn objective(u: &Mat, v: &Mat, w: &Mat, pairs: &Pairs, c: &Coeffs) -> f64 {
    let n = pairs.x.len();
    let mut total = 0.0;
    for i in 0..n {
        let (pooled, m) = code(u, v, w, &pairs.xc[i], &pairs.yc[i], c.tanh);
        let own = sre(u, v, w, &m, &pairs.x[i], &pairs.y[i]);
        let cross = sre(u, v, w, &pairs.partners[i], &pairs.x[i], &pairs.y[i]);
        total += (1.0 - c.lambda) * own + c.lambda * cross;
        total += c.mapping_l1 * m.iter().map(|a| a.abs()).sum::<f64>();
        total += c.factor_l1 * pooled.iter().map(|a| a.abs()).sum::<f64>();
    }
    total / n as f64
        + c.weight_decay * (sum_sq(u) + sum_sq(v) + sum_sq(w))
        + c.filter_norm * (filter_penalty(u) + filter_penalty(v))
}

/// Central differences of [`objective`] for every entry of `u`, `v`, `w`.
pub fn numeric_gradients(u: &Mat, v: &Mat, w: &Mat, pairs: &Pairs, c: &Coeffs, step: f64) -> (Mat, Mat, Mat) {
    let mut params = [u.clone(), v.clone(), w.clone()];
    let mut grads = [u.clone(), v.clone(), w.clone()];
    for which in 0..3 {
        for r in 0..params[which].len() {
            for col in 0..params[which][r].len() {
                let orig = params[which][r][col];
                params[which][r][col] = orig + step;
                let plus = objective(&params[0], &params[1], &params[2], pairs, c);
                params[which][r][col] = orig - step;
                let minus = objective(&params[0], &params[1], &params[2], pairs, c);
                params[which][r][col] = orig;
                grads[which][r][col] = (plus - minus) / (2.0 * step);
            }
        }
    }
    let [gu, gv, gw] = grads;
    (gu, gv, gw)
}

/// `max |a − n| / max(|a|, |n|)`, ignoring entries where both sides are below
/// `floor` in magnitude.
pub fn max_relative_error(analytic: &Mat, numeric: &Mat, floor: f64) -> f64 {
    analytic
        .iter()
        .flatten()
        .zip(numeric.iter().flatten())
        .map(|(a, n)| {
            let scale = a.abs().max(n.abs());
            if scale < floor {
                0.0
            } else {
                (a - n).abs() / scale
            }
        })
        .fold(0.0, f64::max)
}

pub mod check {
    use super::*;
    use gae_core::model::{loss_gradients, Batch, GaeConfig, GaeParams, Nonlinearity, PenaltyConfig};
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub const STEP: f64 = 1e-5;

    fn to_mat(a: &Array2<f64>) -> Mat {
        a.rows().into_iter().map(|r| r.to_vec()).collect()
    }

    pub struct Outcome {
        pub description: String,
        pub max_rel_error: f64,
        pub max_abs_error_small: f64,
    }

    /// Random configuration number `seed`; checks λ ∈ {0, 0.5, 1} with every
    /// penalty switched on.
    pub fn gradient_case(seed: u64) -> Vec<Outcome> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = [4usize, 6, 9][rng.random_range(0..3)];
        let o = [4usize, 8][rng.random_range(0..2)];
        let l = [2usize, 4][rng.random_range(0..2)];
        let tanh = rng.random::<bool>();
        let nonlin = if tanh { Nonlinearity::Tanh } else { Nonlinearity::Sigmoid };
        let gae = GaeConfig::new(p, o, l, nonlin).unwrap();
        let params = GaeParams::random(gae, &mut rng).unwrap();
        let b = 3;
        let mut draw = |rows, cols| Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-1.5..1.5));
        let x = draw(b, p);
        let y = draw(b, p);
        let mask = |m: &Array2<f64>, r: &mut ChaCha8Rng| m.mapv(|v| if r.random::<f64>() < 0.3 { 0.0 } else { v });
        let mut mrng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
        let xc = mask(&x, &mut mrng);
        let yc = mask(&y, &mut mrng);
        let partners = Array2::from_shape_simple_fn((b, l), || mrng.random_range(-1.0..1.0));
        let penalties = PenaltyConfig {
            mapping_sparsity: 0.03,
            factor_sparsity: 0.02,
            weight_decay: 0.01,
            filter_norm: 0.05,
        };
        let pairs = Pairs {
            x: to_mat(&x),
            y: to_mat(&y),
            xc: to_mat(&xc),
            yc: to_mat(&yc),
            partners: to_mat(&partners),
        };
        let (u, v, w) = (to_mat(&params.u), to_mat(&params.v), to_mat(&params.w));
        let mut out = Vec::new();
        for lambda in [0.0, 0.5, 1.0] {
            let batch = Batch {
                x: x.view(),
                y: y.view(),
                x_corrupt: xc.view(),
                y_corrupt: yc.view(),
            };
            let (breakdown, grads) =
                loss_gradients(&params, &batch, Some(partners.view()), lambda, &penalties).unwrap();
            let coeffs = Coeffs {
                lambda,
                mapping_l1: penalties.mapping_sparsity,
                factor_l1: penalties.factor_sparsity,
                weight_decay: penalties.weight_decay,
                filter_norm: penalties.filter_norm,
                tanh,
            };
            let reference = objective(&u, &v, &w, &pairs, &coeffs);
            assert!(
                (breakdown.total - reference).abs() < 1e-10 * reference.abs().max(1.0),
                "objective {} vs oracle {reference}",
                breakdown.total
            );
            let (nu, nv, nw) = numeric_gradients(&u, &v, &w, &pairs, &coeffs, STEP);
            let floor = 1e-7;
            let analytic = [to_mat(&grads.du), to_mat(&grads.dv), to_mat(&grads.dw)];
            let numeric = [nu, nv, nw];
            let mut rel: f64 = 0.0;
            let mut small: f64 = 0.0;
            for (a, n) in analytic.iter().zip(&numeric) {
                rel = rel.max(max_relative_error(a, n, floor));
                for (ai, ni) in a.iter().flatten().zip(n.iter().flatten()) {
                    if ai.abs().max(ni.abs()) < floor {
                        small = small.max((ai - ni).abs());
                    }
                }
            }
            out.push(Outcome {
                description: format!(
                    "seed {seed}: input_dim {p}, factors {o}, mappings {l}, {nonlin:?}, lambda {lambda}"
                ),
                max_rel_error: rel,
                max_abs_error_small: small,
            });
        }
        out
    }
}
