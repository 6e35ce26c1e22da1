use serde::{Deserialize, Serialize};

use super::{
    evaluate, stream_rng, train, EvalReport, Optimizer, OptimizerKind, RejectRule, Stream, TrainConfig, Trained,
};
use crate::autodiff::Graph;
use crate::data::DatasetPool;
use crate::error::{Error, Result};
use crate::model::{Activation, Head, Mlp, MlpSpec, ModelSpecs};
use crate::objective::WeightMode;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum AblationMode {
    Full,
    /// Every target sample weighs the same in the domain loss.
    NoReweight,
    /// A binary known/unknown head on frozen features replaces the GEV.
    NoEvtBinary,
    /// Fixed entropy threshold; defaults to `0.5 ln K`.
    HardThreshold {
        tau: Option<f64>,
    },
}

impl AblationMode {
    pub fn name(&self) -> &'static str {
        match self {
            AblationMode::Full => "full",
            AblationMode::NoReweight => "no_reweight",
            AblationMode::NoEvtBinary => "no_evt_binary",
            AblationMode::HardThreshold { .. } => "hard_threshold",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(AblationMode::Full),
            "no_reweight" => Ok(AblationMode::NoReweight),
            "no_evt_binary" => Ok(AblationMode::NoEvtBinary),
            "hard_threshold" => Ok(AblationMode::HardThreshold { tau: None }),
            _ => Err(Error::Config(format!("unknown ablation variant '{s}'"))),
        }
    }

    fn uses_uniform_weights(&self) -> bool {
        matches!(self, AblationMode::NoReweight)
    }
}

/// Small sigmoid MLP scoring features as unknown.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryHead {
    pub mlp: Mlp,
}

const HEAD_HIDDEN: usize = 32;
const HEAD_STEPS: usize = 400;
const HEAD_LR: f64 = 1e-2;

impl BinaryHead {
    pub fn prob_unknown(&self, features: &Tensor) -> Result<Vec<f64>> {
        Ok(self.mlp.forward(features)?.into_data())
    }
}

/// Full-batch logistic training on source-known (label 0) and
/// source-unknown (label 1) features, with both classes weighted equally.
pub fn train_binary_head(known: &Tensor, unknown: &Tensor, seed: u64) -> Result<BinaryHead> {
    if known.rows() == 0 {
        return Err(Error::EmptyPool("source known"));
    }
    if unknown.rows() == 0 {
        return Err(Error::EmptyPool("source unknown"));
    }
    let spec = MlpSpec::new(vec![known.cols(), HEAD_HIDDEN, 1], Activation::Relu, Head::Sigmoid);
    let mut mlp = Mlp::init(&spec, &mut stream_rng(seed, Stream::Head))?;
    let x = Tensor::concat_rows(&[known, unknown])?;
    let (nk, nu) = (known.rows(), unknown.rows());
    let pos: Vec<f64> = (0..nk + nu)
        .map(|i| if i < nk { 0.0 } else { 0.5 / nu as f64 })
        .collect();
    let neg: Vec<f64> = (0..nk + nu)
        .map(|i| if i < nk { 0.5 / nk as f64 } else { 0.0 })
        .collect();
    let mut opt = Optimizer::for_tensors(OptimizerKind::adam(), HEAD_LR, mlp.tensors());
    for _ in 0..HEAD_STEPS {
        let mut g = Graph::new();
        let vars = mlp.bind(&mut g);
        let input = g.constant(x.clone());
        let p = vars.forward(&mut g, input)?;
        let log_p = g.log_clamped(p)?;
        let q = g.one_minus(p)?;
        let log_q = g.log_clamped(q)?;
        let a = g.weighted_sum(log_p, &pos)?;
        let b = g.weighted_sum(log_q, &neg)?;
        let ll = g.add(a, b)?;
        let loss = g.neg(ll)?;
        g.backward(loss)?;
        let grads = vars.gradients(&g);
        opt.step_tensors(mlp.tensors_mut(), grads.iter());
    }
    Ok(BinaryHead { mlp })
}

#[derive(Debug, Clone)]
pub struct AblationOutcome {
    pub mode: AblationMode,
    pub report: EvalReport,
    pub trained: Trained,
}

fn outcome(pool: &DatasetPool, trained: &Trained, mode: AblationMode, seed: u64) -> Result<AblationOutcome> {
    let rule = match mode {
        AblationMode::Full | AblationMode::NoReweight => RejectRule::Gev(trained.gev),
        AblationMode::NoEvtBinary => {
            let view = pool.train_view();
            let known = trained.params.forward_features(&view.source_known.features)?;
            let unknown = trained.params.forward_features(view.source_unknown)?;
            RejectRule::Binary(train_binary_head(&known, &unknown, seed)?)
        }
        AblationMode::HardThreshold { tau } => RejectRule::Threshold(tau.unwrap_or(0.5 * (pool.classes() as f64).ln())),
    };
    let mut report = evaluate(&trained.params, &rule, pool)?;
    report.variant = Some(mode.name().to_string());
    Ok(AblationOutcome {
        mode,
        report,
        trained: trained.clone(),
    })
}

pub fn run_ablation(
    pool: &DatasetPool,
    specs: &ModelSpecs,
    tc: &TrainConfig,
    mode: AblationMode,
) -> Result<AblationOutcome> {
    Ok(run_ablations(pool, specs, tc, &[mode])?.remove(0))
}

/// Runs several variants; variants that share the training configuration
/// share one trained model.
pub fn run_ablations(
    pool: &DatasetPool,
    specs: &ModelSpecs,
    tc: &TrainConfig,
    modes: &[AblationMode],
) -> Result<Vec<AblationOutcome>> {
    let mut adapted: Option<Trained> = None;
    let mut uniform: Option<Trained> = None;
    let mut out = Vec::with_capacity(modes.len());
    for &mode in modes {
        let slot = if mode.uses_uniform_weights() {
            &mut uniform
        } else {
            &mut adapted
        };
        if slot.is_none() {
            let mut cfg = tc.clone();
            if mode.uses_uniform_weights() {
                cfg.weights.weight_mode = WeightMode::Uniform;
            }
            *slot = Some(train(&pool.train_view(), specs, &cfg)?);
        }
        let trained = slot.as_ref().expect("trained above");
        out.push(outcome(pool, trained, mode, tc.seed)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mode_names_round_trip() {
        for m in [
            AblationMode::Full,
            AblationMode::NoReweight,
            AblationMode::NoEvtBinary,
            AblationMode::HardThreshold { tau: None },
        ] {
            assert_eq!(AblationMode::parse(m.name()).unwrap(), m);
        }
        assert!(AblationMode::parse("nope").is_err());
    }

    #[test]
    fn binary_head_separates_separable_features() {
        let known = Tensor::from_rows(&[[-1.0, 0.2], [-1.5, -0.3], [-0.8, 0.0], [-2.0, 0.5]]).unwrap();
        let unknown = Tensor::from_rows(&[[1.0, 0.1], [1.4, -0.2], [0.9, 0.4]]).unwrap();
        let head = train_binary_head(&known, &unknown, 0).unwrap();
        assert!(head.prob_unknown(&known).unwrap().iter().all(|&p| p < 0.5));
        assert!(head.prob_unknown(&unknown).unwrap().iter().all(|&p| p > 0.5));
    }

    #[test]
    fn binary_head_needs_both_pools() {
        let known = Tensor::from_rows(&[[0.0]]).unwrap();
        let none = Tensor::zeros(vec![0, 1]);
        assert!(matches!(train_binary_head(&known, &none, 0), Err(Error::EmptyPool(_))));
    }
}
