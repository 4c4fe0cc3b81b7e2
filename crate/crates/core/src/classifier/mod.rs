//! Per-date exercise classifiers imitating a fitted stopping rule.
//!
//! Paths alive at date `k` are labeled by what the rule did there: stopped
//! (exercise) or carried on (continuation). One network per date learns the
//! split; the rule "exercise when the exercise probability is at least one
//! half" then replaces the regression.

pub mod network;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lsmc::{evaluate_rule, state_features, FeedMode, HarvestProblem, StoppingOutcome, StoppingRule};
use crate::model::PathSet;
use crate::rng;
use network::{AdamConfig, Architecture, Mlp, Trainer};

/// Exercise and continuation path indices per date `k = 1..N-1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSets {
    pub state_dim: usize,
    /// Entry `i` belongs to date `i + 1`.
    pub exercise: Vec<Vec<u32>>,
    pub continuation: Vec<Vec<u32>>,
    /// Seed of the paths the indices refer to.
    pub paths_seed: u64,
}

impl LabeledSets {
    pub fn dates(&self) -> usize {
        self.exercise.len()
    }

    /// Dates with no exercise sample.
    pub fn no_exercise_dates(&self) -> Vec<usize> {
        (0..self.dates())
            .filter(|&i| self.exercise[i].is_empty())
            .map(|i| i + 1)
            .collect()
    }

    /// Feature rows `(log S, δ, ...)` of the given paths at date `k`.
    pub fn features(&self, paths: &PathSet, k: usize, idx: &[u32]) -> Array2<f32> {
        let d = self.state_dim;
        let mut out = Array2::zeros((idx.len(), d));
        let mut f = [0.0; 4];
        for (row, &p) in idx.iter().enumerate() {
            state_features(paths.state(p as usize, k), d, &mut f);
            for j in 0..d {
                out[[row, j]] = f[j] as f32;
            }
        }
        out
    }
}

/// Splits the paths alive at each date by whether `stops` harvests there.
/// Paths stopped earlier appear in neither set.
pub fn build_labeled_sets(paths: &PathSet, stops: &StoppingOutcome, state_dim: usize) -> Result<LabeledSets> {
    if stops.n_paths() != paths.n_paths() {
        return Err(Error::DimensionMismatch {
            expected: paths.n_paths(),
            got: stops.n_paths(),
        });
    }
    if state_dim > paths.dim() || state_dim == 0 || !state_dim.is_multiple_of(2) {
        return Err(Error::DimensionMismatch {
            expected: paths.dim(),
            got: state_dim,
        });
    }
    let n = paths.grid().steps;
    let mut exercise = vec![Vec::new(); n.saturating_sub(1)];
    let mut continuation = vec![Vec::new(); n.saturating_sub(1)];
    for (p, &tau) in stops.stop_index.iter().enumerate() {
        let tau = tau as usize;
        if tau > n {
            return Err(Error::InvalidInput(format!("stopping index {tau} beyond the grid")));
        }
        for k in 1..n.min(tau + 1) {
            if k == tau {
                exercise[k - 1].push(p as u32);
            } else {
                continuation[k - 1].push(p as u32);
            }
        }
    }
    Ok(LabeledSets {
        state_dim,
        exercise,
        continuation,
        paths_seed: paths.seed(),
    })
}

/// Training hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Samples drawn from each class per batch.
    pub per_class: usize,
    pub adam: AdamConfig,
    pub bn_momentum: f64,
    pub bn_eps: f64,
    /// Lower limit on the number of batches per date.
    pub min_batches: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            per_class: 128,
            adam: AdamConfig::default(),
            bn_momentum: 0.99,
            bn_eps: 1e-3,
            min_batches: 50,
            seed: 0,
        }
    }
}

/// Class-balanced batch stream for one date: the larger class is visited in
/// shuffled passes, the smaller one resampled with replacement.
pub struct BatchPlan {
    exercise: usize,
    continuation: usize,
    per_class: usize,
    batches: usize,
    order: Vec<u32>,
    cursor: usize,
    emitted: usize,
}

impl BatchPlan {
    pub fn new(exercise: usize, continuation: usize, per_class: usize, min_batches: usize) -> Result<Self> {
        if exercise == 0 || continuation == 0 || per_class == 0 {
            return Err(Error::InvalidInput("both classes must be non-empty".into()));
        }
        let batches = exercise.max(continuation).div_ceil(per_class).max(min_batches);
        Ok(Self {
            exercise,
            continuation,
            per_class,
            batches,
            order: Vec::new(),
            cursor: 0,
            emitted: 0,
        })
    }

    pub fn batches(&self) -> usize {
        self.batches
    }

    /// Positions into the exercise and continuation sets for the next batch.
    pub fn next_batch(&mut self, rng: &mut ChaCha8Rng) -> Option<(Vec<u32>, Vec<u32>)> {
        if self.emitted == self.batches {
            return None;
        }
        self.emitted += 1;
        let exercise_larger = self.exercise > self.continuation;
        let (big, small) = if exercise_larger {
            (self.exercise, self.continuation)
        } else {
            (self.continuation, self.exercise)
        };
        let mut from_big = Vec::with_capacity(self.per_class);
        while from_big.len() < self.per_class {
            if self.cursor == self.order.len() {
                self.order = (0..big as u32).collect();
                self.order.shuffle(rng);
                self.cursor = 0;
            }
            from_big.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        let from_small: Vec<u32> = (0..self.per_class).map(|_| rng.random_range(0..small as u32)).collect();
        Some(if exercise_larger {
            (from_big, from_small)
        } else {
            (from_small, from_big)
        })
    }
}

/// Network or constant decision for one date.
#[allow(clippy::large_enum_variant)]
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DateClassifier {
    Network {
        net: Mlp<f32>,
        batches: usize,
        final_loss: f32,
        n_exercise: usize,
        n_continuation: usize,
    },
    /// No exercise sample: never harvest.
    AlwaysContinue,
    /// Exercise samples only: always harvest.
    AlwaysExercise,
}

impl DateClassifier {
    fn exercise_probability(&self, x: &Array2<f32>) -> Vec<f32> {
        match self {
            DateClassifier::Network { net, .. } => net.predict(&x.view()).column(1).to_vec(),
            DateClassifier::AlwaysContinue => vec![0.0; x.nrows()],
            DateClassifier::AlwaysExercise => vec![1.0; x.nrows()],
        }
    }
}

/// Trained per-date classifiers acting as a stopping rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierRule {
    pub mode: FeedMode,
    pub state_dim: usize,
    pub training_seed: u64,
    pub config: TrainConfig,
    /// Entry `i` belongs to date `i + 1`.
    pub dates: Vec<DateClassifier>,
}

impl ClassifierRule {
    /// Exercise probabilities at date `k` for raw states (row-major).
    pub fn probabilities(&self, k: usize, states: &[f64]) -> Result<Vec<f32>> {
        let d = self.state_dim;
        if !states.len().is_multiple_of(d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: states.len() % d,
            });
        }
        if k == 0 || k > self.dates.len() {
            return Err(Error::InvalidInput(format!(
                "date {k} outside 1..={}",
                self.dates.len()
            )));
        }
        Ok(self.probabilities_unchecked(k, states))
    }

    fn probabilities_unchecked(&self, k: usize, states: &[f64]) -> Vec<f32> {
        let d = self.state_dim;
        let rows = states.len() / d;
        let mut x = Array2::zeros((rows, d));
        let mut f = [0.0; 4];
        for (i, s) in states.chunks_exact(d).enumerate() {
            state_features(s, d, &mut f);
            for j in 0..d {
                x[[i, j]] = f[j] as f32;
            }
        }
        self.dates[k - 1].exercise_probability(&x)
    }

    /// Decision and exercise probability for a single state.
    pub fn decide_one(&self, k: usize, state: &[f64]) -> Result<(bool, f32)> {
        if state.len() != self.state_dim {
            return Err(Error::DimensionMismatch {
                expected: self.state_dim,
                got: state.len(),
            });
        }
        let p = self.probabilities(k, state)?[0];
        Ok((exercises(p), p))
    }
}

/// The threshold rule: exercise at probability one half or more.
#[inline]
pub fn exercises(p: f32) -> bool {
    p >= 0.5
}

impl StoppingRule for ClassifierRule {
    fn state_dim(&self) -> usize {
        self.state_dim
    }

    fn training_seed(&self) -> u64 {
        self.training_seed
    }

    fn decide(&self, k: usize, states: &[f64], _harvest: &[f64], stop: &mut [bool]) {
        for (s, p) in stop.iter_mut().zip(self.probabilities_unchecked(k, states)) {
            *s = exercises(p);
        }
    }
}

fn train_date(paths: &PathSet, sets: &LabeledSets, k: usize, cfg: &TrainConfig) -> Result<DateClassifier> {
    let ex = &sets.exercise[k - 1];
    let co = &sets.continuation[k - 1];
    match (ex.is_empty(), co.is_empty()) {
        (true, _) => return Ok(DateClassifier::AlwaysContinue),
        (false, true) => return Ok(DateClassifier::AlwaysExercise),
        _ => {}
    }
    let x_ex = sets.features(paths, k, ex);
    let x_co = sets.features(paths, k, co);
    let date_seed = rng::derive_seed(cfg.seed, k as u64);
    let mut init_rng = rng::substream(date_seed, 0);
    let mut batch_rng = rng::substream(date_seed, 1);
    let arch = Architecture {
        inputs: sets.state_dim,
        bn_eps: cfg.bn_eps,
    };
    let mut trainer = Trainer::new(Mlp::<f32>::new(arch, &mut init_rng), cfg.adam, cfg.bn_momentum);
    let mut plan = BatchPlan::new(ex.len(), co.len(), cfg.per_class, cfg.min_batches)?;
    let d = sets.state_dim;
    let n = 2 * cfg.per_class;
    let labels: Vec<u8> = (0..n).map(|i| u8::from(i < cfg.per_class)).collect();
    let mut x = Array2::<f32>::zeros((n, d));
    let mut loss = 0.0f32;
    let mut batch = 0;
    while let Some((ie, ic)) = plan.next_batch(&mut batch_rng) {
        for (row, &i) in ie.iter().enumerate() {
            x.row_mut(row).assign(&x_ex.row(i as usize));
        }
        for (row, &i) in ic.iter().enumerate() {
            x.row_mut(cfg.per_class + row).assign(&x_co.row(i as usize));
        }
        loss = trainer.step(&x.view(), &labels);
        if !loss.is_finite() || !trainer.net.is_finite() {
            return Err(Error::NonFiniteLoss {
                date: k,
                batch,
                detail: format!(
                    "loss {loss} with learning rate {} and fan-in uniform initialization; \
                     {} exercise / {} continuation samples",
                    cfg.adam.learning_rate,
                    ex.len(),
                    co.len()
                ),
            });
        }
        batch += 1;
    }
    Ok(DateClassifier::Network {
        net: trainer.finish(),
        batches: batch,
        final_loss: loss,
        n_exercise: ex.len(),
        n_continuation: co.len(),
    })
}

/// Trains one network per date, in parallel across dates.
pub fn train(paths: &PathSet, sets: &LabeledSets, mode: FeedMode, cfg: &TrainConfig) -> Result<ClassifierRule> {
    if sets.paths_seed != paths.seed() {
        return Err(Error::InvalidInput(
            "labeled sets were built from a different path set".into(),
        ));
    }
    if sets.state_dim != mode.state_dim() {
        return Err(Error::DimensionMismatch {
            expected: mode.state_dim(),
            got: sets.state_dim,
        });
    }
    if sets.dates() + 1 != paths.grid().steps {
        return Err(Error::DimensionMismatch {
            expected: paths.grid().steps - 1,
            got: sets.dates(),
        });
    }
    let dates = (1..=sets.dates())
        .into_par_iter()
        .map(|k| train_date(paths, sets, k, cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok(ClassifierRule {
        mode,
        state_dim: sets.state_dim,
        training_seed: paths.seed(),
        config: *cfg,
        dates,
    })
}

/// Out-of-sample value of a classifier rule under stochastic feed costs.
pub fn evaluate_classifier(
    rule: &ClassifierRule,
    fresh: &PathSet,
    problem: &HarvestProblem,
) -> Result<StoppingOutcome> {
    evaluate_rule(rule, fresh, problem)
}

/// Classification quality at one date against reference labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DateAccuracy {
    pub date: usize,
    pub n_exercise: usize,
    pub n_continuation: usize,
    /// Fraction of exercise states classified as exercise.
    pub exercise_recall: Option<f64>,
    pub continuation_recall: Option<f64>,
    /// Mean of the two recalls; absent unless both classes are present.
    pub balanced_accuracy: Option<f64>,
    /// Fraction of all labeled states where the decisions agree.
    pub agreement: Option<f64>,
}

/// Per-date accuracy of `rule` on states labeled by another rule (usually the
/// generating LSMC rule on held-out paths).
pub fn held_out_accuracy(rule: &ClassifierRule, paths: &PathSet, sets: &LabeledSets) -> Result<Vec<DateAccuracy>> {
    if sets.paths_seed != paths.seed() {
        return Err(Error::InvalidInput(
            "labeled sets were built from a different path set".into(),
        ));
    }
    if sets.state_dim != rule.state_dim || sets.dates() != rule.dates.len() {
        return Err(Error::DimensionMismatch {
            expected: rule.dates.len(),
            got: sets.dates(),
        });
    }
    let recall = |k: usize, idx: &[u32], want: bool| -> Option<(usize, f64)> {
        if idx.is_empty() {
            return None;
        }
        let x = sets.features(paths, k, idx);
        let hits = rule.dates[k - 1]
            .exercise_probability(&x)
            .into_iter()
            .filter(|&p| exercises(p) == want)
            .count();
        Some((hits, hits as f64 / idx.len() as f64))
    };
    Ok((1..=sets.dates())
        .into_par_iter()
        .map(|k| {
            let ex = &sets.exercise[k - 1];
            let co = &sets.continuation[k - 1];
            let re = recall(k, ex, true);
            let rc = recall(k, co, false);
            let total = ex.len() + co.len();
            let agreement = (total > 0).then(|| (re.map_or(0, |r| r.0) + rc.map_or(0, |r| r.0)) as f64 / total as f64);
            DateAccuracy {
                date: k,
                n_exercise: ex.len(),
                n_continuation: co.len(),
                exercise_recall: re.map(|r| r.1),
                continuation_recall: rc.map(|r| r.1),
                balanced_accuracy: re.zip(rc).map(|(a, b)| 0.5 * (a.1 + b.1)),
                agreement,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests;
