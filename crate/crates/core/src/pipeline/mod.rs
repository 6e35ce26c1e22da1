//! Training loop, open-set inference and evaluation.

mod ablation;
mod optim;
mod report;

pub use ablation::{run_ablation, run_ablations, train_binary_head, AblationMode, AblationOutcome, BinaryHead};
pub use optim::{Optimizer, OptimizerKind};
pub use report::{truth_index, EvalReport, Prediction};

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{sample_batch_triple, sample_target, DatasetPool, TrainView};
use crate::error::{Error, Result};
use crate::evt::{exceeds_median, extract_tail, fit_gev_mle_with, FitPool, GevFit, GevParams, TailConfig};
use crate::model::{ModelParams, ModelSpecs};
use crate::objective::{row_entropy, total_step_gradients, LossWeights, WeightConfig, ZMode};
use crate::tensor::Tensor;

/// Independent random streams derived from one seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    Batches = 2,
    Tail = 3,
    Head = 4,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub loss_weights: LossWeights,
    pub weights: WeightConfig,
    pub tail: TailConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 64,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::default(),
            loss_weights: LossWeights::default(),
            weights: WeightConfig::default(),
            tail: TailConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be finite and nonnegative, got {}",
                self.learning_rate
            )));
        }
        self.loss_weights.validate()?;
        self.tail.validate()
    }
}

/// Per-epoch averages, written as one JSON line each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub steps: usize,
    pub loss_domain: f64,
    pub loss_entropy_unknown: f64,
    pub loss_classification: f64,
    pub loss_total: f64,
    pub mean_weight: f64,
    pub max_weight: f64,
    pub known_entropy: f64,
    pub unknown_entropy: f64,
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub params: ModelParams,
    pub gev: GevParams,
    pub fit: GevFit,
    pub tail: Vec<f64>,
    pub log: Vec<EpochLog>,
}

/// Runs `epochs` passes of the joint objective and leaves the parameters
/// untouched by the GEV fit.
pub fn train_params(
    view: &TrainView<'_>,
    specs: &ModelSpecs,
    tc: &TrainConfig,
) -> Result<(ModelParams, Vec<EpochLog>)> {
    tc.validate()?;
    specs.validate()?;
    if specs.classes() != view.classes || specs.input_dim() != view.dim() {
        return Err(Error::Config(format!(
            "model expects {} inputs and {} classes, data has {} and {}",
            specs.input_dim(),
            specs.classes(),
            view.dim(),
            view.classes
        )));
    }
    let mut params = ModelParams::init_with(specs, &mut stream_rng(tc.seed, Stream::Init))?;
    let mut rng = stream_rng(tc.seed, Stream::Batches);
    let mut opt = Optimizer::new(tc.optimizer, tc.learning_rate, &params);
    let steps = view.source_known.len().div_ceil(tc.batch_size).max(1);
    let mut log = Vec::with_capacity(tc.epochs);

    for epoch in 0..tc.epochs {
        let mut acc = EpochLog {
            epoch,
            steps,
            loss_domain: 0.0,
            loss_entropy_unknown: 0.0,
            loss_classification: 0.0,
            loss_total: 0.0,
            mean_weight: 0.0,
            max_weight: 0.0,
            known_entropy: 0.0,
            unknown_entropy: 0.0,
        };
        for step in 0..steps {
            let mut batch = sample_batch_triple(view, tc.batch_size, &mut rng)?;
            if tc.weights.z_mode != ZMode::SameBatch {
                batch.aux_target_x = Some(sample_target(view, tc.batch_size, &mut rng)?);
            }
            let out = total_step_gradients(&batch, &params, &tc.loss_weights, &tc.weights).map_err(|e| match e {
                Error::NonFinite { op } => Error::Divergence {
                    epoch,
                    step,
                    detail: format!("non-finite value in {op}"),
                },
                other => other,
            })?;
            let l = out.losses;
            if ![l.domain, l.entropy_unknown, l.classification, l.total]
                .iter()
                .all(|v| v.is_finite())
            {
                return Err(Error::Divergence {
                    epoch,
                    step,
                    detail: format!("loss {l:?}"),
                });
            }
            opt.step(&mut params, &out.grads);
            if params.tensors().any(|t| !t.all_finite()) {
                return Err(Error::Divergence {
                    epoch,
                    step,
                    detail: "non-finite parameter after update".into(),
                });
            }
            acc.loss_domain += l.domain;
            acc.loss_entropy_unknown += l.entropy_unknown;
            acc.loss_classification += l.classification;
            acc.loss_total += l.total;
            acc.mean_weight += out.weights.iter().sum::<f64>() / out.weights.len() as f64;
            acc.max_weight = out.weights.iter().copied().fold(acc.max_weight, f64::max);
            acc.known_entropy += mean(&out.known_entropies);
            acc.unknown_entropy += mean(&out.unknown_entropies);
        }
        let n = steps as f64;
        acc.loss_domain /= n;
        acc.loss_entropy_unknown /= n;
        acc.loss_classification /= n;
        acc.loss_total /= n;
        acc.mean_weight /= n;
        acc.known_entropy /= n;
        acc.unknown_entropy /= n;
        log.push(acc);
    }
    Ok((params, log))
}

/// Entropies of the source samples selected by `pool`.
pub fn source_entropies(params: &ModelParams, view: &TrainView<'_>, pool: FitPool) -> Result<Vec<f64>> {
    let mut h = entropies(params, &view.source_known.features)?;
    if pool == FitPool::KnownPlusUnknown && view.source_unknown.rows() > 0 {
        h.extend(entropies(params, view.source_unknown)?);
    }
    Ok(h)
}

pub fn entropies(params: &ModelParams, x: &Tensor) -> Result<Vec<f64>> {
    Ok(params.predict_probs(x)?.row_iter().map(row_entropy).collect())
}

/// Fits the entropy-tail GEV for an already trained model.
pub fn fit_tail(
    params: &ModelParams,
    view: &TrainView<'_>,
    tail: &TailConfig,
    seed: u64,
) -> Result<(Vec<f64>, GevFit)> {
    let h = source_entropies(params, view, tail.source_pool)?;
    let tail_seed = stream_rng(seed, Stream::Tail).next_u64();
    let values = extract_tail(&h, tail, tail_seed)?;
    let fit = fit_gev_mle_with(&values, Default::default())?;
    Ok((values, fit))
}

pub fn train(view: &TrainView<'_>, specs: &ModelSpecs, tc: &TrainConfig) -> Result<Trained> {
    let (params, log) = train_params(view, specs, tc)?;
    let (tail, fit) = fit_tail(&params, view, &tc.tail, tc.seed)?;
    Ok(Trained {
        params,
        gev: fit.params,
        fit,
        tail,
        log,
    })
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// How a sample is routed to the unknown class.
#[derive(Debug, Clone, PartialEq)]
pub enum RejectRule {
    /// Reject when the GEV cdf of the entropy exceeds one half.
    Gev(GevParams),
    /// Reject when the entropy exceeds a fixed value.
    Threshold(f64),
    /// Reject when a binary head on the features says unknown.
    Binary(BinaryHead),
}

/// Open-set decision for one probability row under the GEV rule.
pub fn decide(probs: &[f64], gev: &GevParams) -> Prediction {
    if exceeds_median(gev.cdf(row_entropy(probs))) {
        Prediction::Unknown
    } else {
        Prediction::Known(argmax(probs))
    }
}

pub fn predict_with(params: &ModelParams, rule: &RejectRule, x: &Tensor) -> Result<Vec<Prediction>> {
    let features = params.forward_features(x)?;
    let probs = params.forward_classifier(&features)?;
    let unknown: Vec<bool> = match rule {
        RejectRule::Gev(p) => probs
            .row_iter()
            .map(|r| exceeds_median(p.cdf(row_entropy(r))))
            .collect(),
        RejectRule::Threshold(tau) => probs.row_iter().map(|r| row_entropy(r) > *tau).collect(),
        RejectRule::Binary(head) => head.prob_unknown(&features)?.iter().map(|&p| p > 0.5).collect(),
    };
    Ok(probs
        .row_iter()
        .zip(unknown)
        .map(|(r, u)| {
            if u {
                Prediction::Unknown
            } else {
                Prediction::Known(argmax(r))
            }
        })
        .collect())
}

pub fn predict(params: &ModelParams, gev: &GevParams, x: &Tensor) -> Result<Vec<Prediction>> {
    predict_with(params, &RejectRule::Gev(*gev), x)
}

/// Classifies a single feature vector.
pub fn infer(params: &ModelParams, gev: &GevParams, x: &[f64]) -> Result<Prediction> {
    let x = Tensor::new(vec![1, x.len()], x.to_vec())?;
    Ok(predict(params, gev, &x)?[0])
}

/// Scores the target pool against its hidden ground truth.
pub fn evaluate(params: &ModelParams, rule: &RejectRule, pool: &DatasetPool) -> Result<EvalReport> {
    let preds = predict_with(params, rule, pool.target_features())?;
    let mut report = EvalReport::from_predictions(pool.classes(), pool.target_truth(), &preds);
    if let RejectRule::Gev(p) = rule {
        report.gev = Some(*p);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{apply_roles, gen_shifted_blobs, BlobShiftConfig, RoleSplit};

    pub(crate) fn small_pool() -> DatasetPool {
        let raw = gen_shifted_blobs(&BlobShiftConfig {
            source_per_class: 40,
            target_per_class: 20,
            ..Default::default()
        })
        .unwrap();
        apply_roles(&raw.source, &raw.target, &RoleSplit::digits()).unwrap()
    }

    fn quick() -> TrainConfig {
        TrainConfig {
            epochs: 2,
            batch_size: 16,
            tail: TailConfig {
                method: crate::evt::TailMethod::BlockMaxima { block_size: 4 },
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[0.25, 0.5, 0.5, 0.25]), 1);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
        assert_eq!(argmax(&[0.1, 0.2, 0.7]), 2);
    }

    #[test]
    fn streams_differ() {
        let a = stream_rng(5, Stream::Init).next_u64();
        let b = stream_rng(5, Stream::Batches).next_u64();
        assert_ne!(a, b);
        assert_eq!(a, stream_rng(5, Stream::Init).next_u64());
    }

    #[test]
    fn training_is_deterministic() {
        let pool = small_pool();
        let specs = ModelSpecs::standard(2, pool.classes());
        let a = train(&pool.train_view(), &specs, &quick()).unwrap();
        let b = train(&pool.train_view(), &specs, &quick()).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.gev, b.gev);
        assert_eq!(a.log, b.log);
        assert_eq!(a.log.len(), 2);
        // 160 source-known samples in batches of 16
        assert_eq!(a.log[0].steps, 10);
    }

    #[test]
    fn wrong_specs_are_rejected() {
        let pool = small_pool();
        let specs = ModelSpecs::standard(3, pool.classes());
        assert!(matches!(
            train(&pool.train_view(), &specs, &quick()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn absurd_learning_rate_diverges() {
        let pool = small_pool();
        let specs = ModelSpecs::standard(2, pool.classes());
        let tc = TrainConfig {
            learning_rate: 1e300,
            optimizer: OptimizerKind::sgd_momentum(),
            ..quick()
        };
        assert!(matches!(
            train_params(&pool.train_view(), &specs, &tc),
            Err(Error::Divergence { .. })
        ));
    }

    #[test]
    fn report_counts_every_target() {
        let pool = small_pool();
        let specs = ModelSpecs::standard(2, pool.classes());
        let t = train(&pool.train_view(), &specs, &quick()).unwrap();
        let r = evaluate(&t.params, &RejectRule::Gev(t.gev), &pool).unwrap();
        assert_eq!(r.samples as usize, pool.target_features().rows());
        assert!((0.0..=1.0).contains(&r.os));
        let single = infer(&t.params, &t.gev, pool.target_features().row(0)).unwrap();
        let batch = predict(&t.params, &t.gev, pool.target_features()).unwrap();
        assert_eq!(single, batch[0]);
    }

    #[test]
    fn threshold_rule_extremes() {
        let pool = small_pool();
        let specs = ModelSpecs::standard(2, pool.classes());
        let params = ModelParams::init(&specs, 0).unwrap();
        let x = pool.target_features();
        let all_unknown = predict_with(&params, &RejectRule::Threshold(-1.0), x).unwrap();
        assert!(all_unknown.iter().all(|p| *p == Prediction::Unknown));
        let none = predict_with(&params, &RejectRule::Threshold(f64::INFINITY), x).unwrap();
        assert!(none.iter().all(|p| matches!(p, Prediction::Known(_))));
    }
}
