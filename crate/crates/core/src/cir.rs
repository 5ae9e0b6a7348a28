//! Content-invariance regularization: nearest neighbors in mapping space,
//! partner sampling and the ramp schedule for the regularization strength.

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GaeError, Result};

/// Mapping codes of a population of pairs, one row per pair.
#[derive(Debug, Clone, PartialEq)]
pub struct MappingTable {
    pub codes: Array2<f64>,
    pub pair_ids: Vec<usize>,
}

impl MappingTable {
    /// Table whose pair ids are the row indices.
    pub fn new(codes: Array2<f64>) -> Result<Self> {
        let ids = (0..codes.nrows()).collect();
        Self::with_ids(codes, ids)
    }

    pub fn with_ids(codes: Array2<f64>, pair_ids: Vec<usize>) -> Result<Self> {
        if pair_ids.len() != codes.nrows() {
            return Err(GaeError::Shape {
                context: "mapping table ids",
                expected: codes.nrows(),
                actual: pair_ids.len(),
            });
        }
        if codes.iter().any(|v| !v.is_finite()) {
            return Err(GaeError::NonFinite("mapping table".into()));
        }
        Ok(MappingTable { codes, pair_ids })
    }

    pub fn len(&self) -> usize {
        self.codes.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.nrows() == 0
    }

    /// Row indices of the `k` nearest neighbors of row `i`.
    pub fn nearest_neighbors(&self, i: usize, k: usize) -> Result<Vec<usize>> {
        nearest_neighbors(self.codes.view(), i, k)
    }
}

/// Indices of the `k` rows closest to row `i` in Euclidean distance, excluding
/// `i` itself, nearest first. Ties go to the lower index.
pub fn nearest_neighbors(codes: ArrayView2<f64>, i: usize, k: usize) -> Result<Vec<usize>> {
    let n = codes.nrows();
    if i >= n {
        return Err(GaeError::Shape {
            context: "nearest_neighbors query index",
            expected: n,
            actual: i,
        });
    }
    if k == 0 {
        return Err(GaeError::Config("neighbor count must be positive".into()));
    }
    if k >= n {
        return Err(GaeError::InsufficientPopulation(format!(
            "{k} neighbors requested from a table of {n} codes"
        )));
    }
    let query = codes.row(i);
    let mut dist: Vec<(f64, usize)> = codes
        .rows()
        .into_iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(j, row)| {
            let d: f64 = row
                .iter()
                .zip(query.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            (d, j)
        })
        .collect();
    let by_distance = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < dist.len() {
        dist.select_nth_unstable_by(k - 1, by_distance);
        dist.truncate(k);
    }
    dist.sort_unstable_by(by_distance);
    Ok(dist.into_iter().map(|(_, j)| j).collect())
}

/// Uniform draw from a neighbor list.
pub fn sample_partner<R: Rng + ?Sized>(neighbors: &[usize], rng: &mut R) -> Result<usize> {
    if neighbors.is_empty() {
        return Err(GaeError::InsufficientPopulation(
            "no neighbors to sample a partner from".into(),
        ));
    }
    Ok(neighbors[rng.random_range(0..neighbors.len())])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleMode {
    Linear,
    Stepwise,
}

/// One step of a stepwise schedule: from `epoch` on, use `(lambda, k)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepPoint {
    pub epoch: usize,
    pub lambda: f64,
    pub k: usize,
}

/// Epoch-indexed ramp of the regularization strength λ and neighbor count k.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CirSchedule {
    pub mode: ScheduleMode,
    pub lambda_max: f64,
    pub k_max: usize,
    pub ramp_epochs: usize,
    #[serde(default)]
    pub step_points: Vec<StepPoint>,
}

impl CirSchedule {
    pub fn linear(lambda_max: f64, k_max: usize, ramp_epochs: usize) -> Result<Self> {
        let schedule = CirSchedule {
            mode: ScheduleMode::Linear,
            lambda_max,
            k_max,
            ramp_epochs,
            step_points: Vec::new(),
        };
        schedule.validate()?;
        Ok(schedule)
    }

    /// Steps at 25%, 50% and 75% of `total_epochs` through
    /// `(0.25, 3)`, `(0.5, 6)`, `(1.0, 10)`.
    pub fn default_stepwise(total_epochs: usize) -> Self {
        let at = |frac: usize| total_epochs * frac / 4;
        CirSchedule {
            mode: ScheduleMode::Stepwise,
            lambda_max: 1.0,
            k_max: 10,
            ramp_epochs: at(3).max(1),
            step_points: vec![
                StepPoint { epoch: 0, lambda: 0.0, k: 1 },
                StepPoint { epoch: at(1), lambda: 0.25, k: 3 },
                StepPoint { epoch: at(2), lambda: 0.5, k: 6 },
                StepPoint { epoch: at(3), lambda: 1.0, k: 10 },
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda_max) {
            return Err(GaeError::Config(format!(
                "lambda_max {} outside [0, 1]",
                self.lambda_max
            )));
        }
        if self.k_max == 0 {
            return Err(GaeError::Config("k_max must be positive".into()));
        }
        if self.ramp_epochs == 0 {
            return Err(GaeError::Config("ramp_epochs must be positive".into()));
        }
        if self.mode == ScheduleMode::Stepwise {
            if self.step_points.is_empty() {
                return Err(GaeError::Config("stepwise schedule needs step points".into()));
            }
            if self.step_points.windows(2).any(|w| w[0].epoch > w[1].epoch) {
                return Err(GaeError::Config("step points must be sorted by epoch".into()));
            }
            for p in &self.step_points {
                if !(0.0..=1.0).contains(&p.lambda) || p.k == 0 {
                    return Err(GaeError::Config(format!(
                        "invalid step point at epoch {}: lambda {}, k {}",
                        p.epoch, p.lambda, p.k
                    )));
                }
            }
        }
        Ok(())
    }

    /// `(λ, k)` in effect during `epoch`.
    pub fn at(&self, epoch: usize) -> (f64, usize) {
        schedule_at(self, epoch)
    }
}

pub fn schedule_at(schedule: &CirSchedule, epoch: usize) -> (f64, usize) {
    match schedule.mode {
        ScheduleMode::Linear => {
            let progress = (epoch as f64 / schedule.ramp_epochs as f64).min(1.0);
            let lambda = schedule.lambda_max * progress;
            let k_float = 1.0 + (schedule.k_max as f64 - 1.0) * progress;
            // round half up
            let k = ((k_float + 0.5).floor() as usize).clamp(1, schedule.k_max);
            (lambda, k)
        }
        ScheduleMode::Stepwise => schedule
            .step_points
            .iter()
            .take_while(|p| p.epoch <= epoch)
            .last()
            .map(|p| (p.lambda, p.k))
            .unwrap_or((0.0, 1)),
    }
}
