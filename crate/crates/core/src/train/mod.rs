//! Denoising SGD training with optional content-invariance regularization.
//!
//! Each batch: corrupt inputs, infer mapping codes from the corrupted pair,
//! pick a partner for every pair among its in-batch mapping-space neighbors,
//! compute gradients of the interpolated objective, clip, step, project.

mod checkpoint;
mod constraints;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cir::{nearest_neighbors, sample_partner, CirSchedule};
use crate::data::PairDataset;
use crate::error::{GaeError, Result};
use crate::model::{loss_gradients, Batch, GaeConfig, GaeParams, LossBreakdown, PenaltyConfig};

pub use crate::model::auxiliary_penalties;
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint,
    CHECKPOINT_MAGIC,
};
pub use constraints::{apply_constraints, clip_gradients, corrupt_inputs, project_weights};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub input_dropout_rate: f64,
    pub mapping_sparsity_coeff: f64,
    pub factor_sparsity_coeff: f64,
    pub weight_decay_coeff: f64,
    pub max_weight_norm: Option<f64>,
    pub grad_clip_norm: Option<f64>,
    pub filter_norm_penalty_coeff: f64,
    /// When false the cross-reconstruction term is never computed.
    pub cir_enabled: bool,
    pub cir: CirSchedule,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            batch_size: 100,
            epochs: 600,
            input_dropout_rate: 0.5,
            mapping_sparsity_coeff: 1e-3,
            factor_sparsity_coeff: 1e-3,
            weight_decay_coeff: 1e-4,
            max_weight_norm: None,
            grad_clip_norm: None,
            filter_norm_penalty_coeff: 1e-2,
            cir_enabled: true,
            cir: CirSchedule::linear(1.0, 10, 3000).expect("valid default schedule"),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [("learning_rate", self.learning_rate)];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(GaeError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        let non_negative = [
            ("mapping_sparsity_coeff", self.mapping_sparsity_coeff),
            ("factor_sparsity_coeff", self.factor_sparsity_coeff),
            ("weight_decay_coeff", self.weight_decay_coeff),
            ("filter_norm_penalty_coeff", self.filter_norm_penalty_coeff),
        ];
        for (name, v) in non_negative {
            if !(v.is_finite() && v >= 0.0) {
                return Err(GaeError::Config(format!("{name} must be non-negative, got {v}")));
            }
        }
        for (name, v) in [
            ("max_weight_norm", self.max_weight_norm),
            ("grad_clip_norm", self.grad_clip_norm),
        ] {
            if let Some(v) = v {
                if !(v.is_finite() && v > 0.0) {
                    return Err(GaeError::Config(format!("{name} must be positive, got {v}")));
                }
            }
        }
        if !(0.0..1.0).contains(&self.input_dropout_rate) {
            return Err(GaeError::Config(format!(
                "input_dropout_rate must be in [0, 1), got {}",
                self.input_dropout_rate
            )));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(GaeError::Config("batch_size and epochs must be positive".into()));
        }
        if self.cir_enabled && self.batch_size < 2 {
            return Err(GaeError::Config(
                "batch_size must be at least 2 when CIR is enabled".into(),
            ));
        }
        self.cir.validate()
    }

    pub fn penalties(&self) -> PenaltyConfig {
        PenaltyConfig {
            mapping_sparsity: self.mapping_sparsity_coeff,
            factor_sparsity: self.factor_sparsity_coeff,
            weight_decay: self.weight_decay_coeff,
            filter_norm: self.filter_norm_penalty_coeff,
        }
    }

    /// `(λ, k)` for `epoch`; `(0, 0)` when CIR is disabled.
    pub fn cir_at(&self, epoch: usize) -> (f64, usize) {
        if self.cir_enabled {
            self.cir.at(epoch)
        } else {
            (0.0, 0)
        }
    }
}

/// Stream ids of the two RNGs derived from the run seed. Partner sampling has
/// its own stream so enabling the regularizer does not perturb shuffling or
/// corruption.
const MAIN_STREAM: u64 = 0;
const PARTNER_STREAM: u64 = 1;

/// Splits `n` shuffled indices into batches; a trailing batch with a single
/// pair is merged into its predecessor so every batch has a neighbor.
fn batch_bounds(n: usize, batch_size: usize) -> Vec<(usize, usize)> {
    let mut bounds: Vec<(usize, usize)> = (0..n)
        .step_by(batch_size)
        .map(|s| (s, (s + batch_size).min(n)))
        .collect();
    if bounds.len() > 1 {
        let (s, e) = bounds[bounds.len() - 1];
        if e - s < 2 {
            bounds.pop();
            bounds.last_mut().unwrap().1 = e;
        }
    }
    bounds
}

/// Complete training state: parameters, RNG streams and loss history.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub gae: GaeConfig,
    pub config: TrainConfig,
    pub params: GaeParams,
    /// Number of completed epochs.
    pub epoch: usize,
    pub history: Vec<LossBreakdown>,
    rng: ChaCha8Rng,
    partner_rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(gae: GaeConfig, config: TrainConfig) -> Result<Self> {
        gae.validate()?;
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(MAIN_STREAM);
        let mut partner_rng = ChaCha8Rng::seed_from_u64(config.seed);
        partner_rng.set_stream(PARTNER_STREAM);
        let mut params = GaeParams::random(gae, &mut rng)?;
        constraints::quantize(&mut params.u);
        constraints::quantize(&mut params.v);
        constraints::quantize(&mut params.w);
        Ok(Trainer {
            gae,
            config,
            params,
            epoch: 0,
            history: Vec::new(),
            rng,
            partner_rng,
        })
    }

    pub fn from_checkpoint(checkpoint: Checkpoint) -> Result<Self> {
        let (rng, partner_rng) = checkpoint::decode_rng_state(&checkpoint.rng_state)?;
        checkpoint.train.validate()?;
        Ok(Trainer {
            gae: checkpoint.gae,
            config: checkpoint.train,
            params: checkpoint.params,
            epoch: checkpoint.epoch,
            history: checkpoint.loss_history,
            rng,
            partner_rng,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            gae: self.gae,
            train: self.config.clone(),
            params: self.params.clone(),
            epoch: self.epoch,
            rng_state: checkpoint::encode_rng_state(&self.rng, &self.partner_rng),
            loss_history: self.history.clone(),
        }
    }

    /// Partner codes: for every row, the code of a pair drawn uniformly from
    /// its `k` nearest in-batch neighbors.
    fn partner_codes(&mut self, codes: &Array2<f64>, k: usize) -> Result<Array2<f64>> {
        let n = codes.nrows();
        let k = k.clamp(1, n - 1);
        let mut partners = Array2::zeros(codes.raw_dim());
        for i in 0..n {
            let neighbors = nearest_neighbors(codes.view(), i, k)?;
            let j = sample_partner(&neighbors, &mut self.partner_rng)?;
            partners.row_mut(i).assign(&codes.row(j));
        }
        Ok(partners)
    }

    /// One shuffled pass over `dataset`. Returns the epoch-mean losses.
    pub fn train_epoch(&mut self, dataset: &PairDataset) -> Result<LossBreakdown> {
        if dataset.input_dim() != self.gae.input_dim {
            return Err(GaeError::Shape {
                context: "training data input_dim",
                expected: self.gae.input_dim,
                actual: dataset.input_dim(),
            });
        }
        if !dataset.normalized {
            return Err(GaeError::Config(
                "training data must be contrast-normalized".into(),
            ));
        }
        if self.config.cir_enabled && dataset.len() < 2 {
            return Err(GaeError::InsufficientPopulation(
                "CIR needs at least two training pairs".into(),
            ));
        }
        let epoch = self.epoch;
        let (lambda, k) = self.config.cir_at(epoch);
        let penalties = self.config.penalties();

        let mut order: Vec<usize> = (0..dataset.len()).collect();
        order.shuffle(&mut self.rng);

        let mut sums = LossBreakdown::default();
        for (batch_idx, (start, end)) in batch_bounds(order.len(), self.config.batch_size)
            .into_iter()
            .enumerate()
        {
            let (x, y) = dataset.gather(&order[start..end]);
            let (xc, yc) =
                corrupt_inputs(x.view(), y.view(), self.config.input_dropout_rate, &mut self.rng);
            let partners = if self.config.cir_enabled && x.nrows() >= 2 {
                let codes = self.params.infer_mappings(xc.view(), yc.view())?;
                Some(self.partner_codes(&codes, k)?)
            } else {
                None
            };
            let batch = Batch {
                x: x.view(),
                y: y.view(),
                x_corrupt: xc.view(),
                y_corrupt: yc.view(),
            };
            let diverged = |detail: String| GaeError::Diverged {
                epoch,
                batch: batch_idx,
                detail,
            };
            let (loss, mut grads) = loss_gradients(
                &self.params,
                &batch,
                partners.as_ref().map(|p| p.view()),
                lambda,
                &penalties,
            )
            .map_err(|e| match e {
                GaeError::NonFinite(what) => diverged(what),
                other => other,
            })?;
            if !loss.is_finite() {
                return Err(diverged(format!(
                    "sre {}, scre {}, penalties {}, total {}",
                    loss.sre, loss.scre, loss.penalties, loss.total
                )));
            }
            apply_constraints(
                &mut self.params,
                &mut grads,
                self.config.learning_rate,
                self.config.grad_clip_norm,
                self.config.max_weight_norm,
            );
            let rows = (end - start) as f64;
            sums.sre += loss.sre * rows;
            sums.scre += loss.scre * rows;
            sums.penalties += loss.penalties * rows;
        }
        let n = dataset.len() as f64;
        let mean = LossBreakdown::new(sums.sre / n, sums.scre / n, sums.penalties / n, lambda);
        self.history.push(mean);
        self.epoch += 1;
        Ok(mean)
    }

    /// Trains until `self.epoch == config.epochs`, calling `on_epoch` after each.
    pub fn run(
        &mut self,
        dataset: &PairDataset,
        mut on_epoch: impl FnMut(&Trainer) -> Result<()>,
    ) -> Result<()> {
        while self.epoch < self.config.epochs {
            self.train_epoch(dataset)?;
            on_epoch(self)?;
        }
        Ok(())
    }
}
