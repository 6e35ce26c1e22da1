//! Entropy, target instance weights, the three loss terms and the joint
//! gradient step.
//!
//! The step minimizes `L = -λ_d L_d + λ_e L_e + λ_c L_c` for the feature
//! extractor and classifier while the domain classifier maximizes it. One
//! backward pass realizes both: the domain head sees the features through a
//! gradient reversal node and the graph minimizes
//! `J = λ_d L_d + λ_e L_e + λ_c L_c`. The domain parameters therefore
//! descend `λ_d L_d`, and the feature parameters receive `-λ_d ∇L_d`.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId, LOG_FLOOR};
use crate::data::DomainBatch;
use crate::error::{Error, Result};
use crate::model::{ModelGrads, ModelParams};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lambda_d: f64,
    pub lambda_e: f64,
    pub lambda_c: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_d: 0.5,
            lambda_e: 1.0,
            lambda_c: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_d", self.lambda_d),
            ("lambda_e", self.lambda_e),
            ("lambda_c", self.lambda_c),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and nonnegative, got {v}")));
            }
        }
        Ok(())
    }
}

/// How unnormalized target weights depend on prediction entropy `H`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    /// `exp(-H)`: confident targets count more.
    NegEntropy,
    /// `exp(+H)`, the formula read literally.
    PaperLiteral,
    /// Every target weighs the same.
    Uniform,
}

/// Which samples form the partition function `Z`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZMode {
    SameBatch,
    FreshBatch,
    Combined,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct WeightConfig {
    pub weight_mode: WeightMode,
    pub z_mode: ZMode,
}

impl Default for WeightConfig {
    fn default() -> Self {
        WeightConfig {
            weight_mode: WeightMode::NegEntropy,
            z_mode: ZMode::SameBatch,
        }
    }
}

fn check_probabilities(probs: &Tensor) -> Result<()> {
    if probs.rank() != 2 {
        return Err(Error::Shape {
            op: "entropy",
            detail: format!("need [B, K], got {:?}", probs.shape()),
        });
    }
    for (row, values) in probs.row_iter().enumerate() {
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > 1e-6 || values.iter().any(|&p| !(p >= 0.0)) {
            return Err(Error::NotProbability { row, sum });
        }
    }
    Ok(())
}

/// Shannon entropy of one probability row, with `0 ln 0 = 0`.
pub fn row_entropy(row: &[f64]) -> f64 {
    -row.iter().map(|&p| p * p.max(LOG_FLOOR).ln()).sum::<f64>()
}

/// Per-row entropy `H_i = -Σ_c p_ic ln p_ic` of a `[B, K]` probability matrix.
pub fn entropy(probs: &Tensor) -> Result<Vec<f64>> {
    check_probabilities(probs)?;
    Ok(probs.row_iter().map(row_entropy).collect())
}

/// Graph version of [`entropy`]; returns a `[B]` node.
pub fn entropy_node(g: &mut Graph, probs: NodeId) -> Result<NodeId> {
    let logp = g.log_clamped(probs)?;
    let plogp = g.mul(probs, logp)?;
    let s = g.row_sum(plogp)?;
    g.neg(s)
}

fn unnormalized(h: f64, mode: WeightMode) -> f64 {
    match mode {
        WeightMode::NegEntropy => (-h).exp(),
        WeightMode::PaperLiteral => h.exp(),
        WeightMode::Uniform => 1.0,
    }
}

/// Normalized target weights `w_i = u_i / Z`. They are plain numbers, so
/// no gradient ever flows through them.
///
/// `aux` is the entropy of a second target batch and is required unless
/// `Z` comes from the same batch.
pub fn batch_weights(entropies: &[f64], cfg: &WeightConfig, aux: Option<&[f64]>) -> Result<Vec<f64>> {
    if entropies.is_empty() {
        return Err(Error::EmptyPool("target batch"));
    }
    let u: Vec<f64> = entropies.iter().map(|&h| unnormalized(h, cfg.weight_mode)).collect();
    let aux_sum = |aux: Option<&[f64]>| -> Result<f64> {
        let aux = aux.ok_or_else(|| Error::Config(format!("z mode {:?} needs a second target batch", cfg.z_mode)))?;
        Ok(aux.iter().map(|&h| unnormalized(h, cfg.weight_mode)).sum())
    };
    let z = match cfg.z_mode {
        ZMode::SameBatch => u.iter().sum(),
        ZMode::FreshBatch => aux_sum(aux)?,
        ZMode::Combined => u.iter().sum::<f64>() + aux_sum(aux)?,
    };
    if !(z > 0.0) || !z.is_finite() {
        return Err(Error::PartitionUnderflow);
    }
    Ok(u.into_iter().map(|v| v / z).collect())
}

fn weights_sum_to_one(w: &[f64]) -> Result<()> {
    let sum: f64 = w.iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(Error::WeightSum(sum));
    }
    Ok(())
}

/// `mean_s ln d_s + Σ_t w_t ln(1 - d_t)`, where `d` is the predicted
/// probability of the target domain.
pub fn domain_loss_node(g: &mut Graph, d_src: NodeId, d_tgt: NodeId, w: &[f64]) -> Result<NodeId> {
    let log_src = g.log_clamped(d_src)?;
    let src_term = g.mean(log_src)?;
    let not_tgt = g.one_minus(d_tgt)?;
    let log_tgt = g.log_clamped(not_tgt)?;
    let tgt_term = g.weighted_sum(log_tgt, w)?;
    g.add(src_term, tgt_term)
}

/// Plain evaluation of the domain loss; requires `Σ w = 1`.
pub fn loss_domain(d_src: &Tensor, d_tgt: &Tensor, w: &[f64]) -> Result<f64> {
    weights_sum_to_one(w)?;
    let mut g = Graph::new();
    let s = g.constant(d_src.clone());
    let t = g.constant(d_tgt.clone());
    let l = domain_loss_node(&mut g, s, t, w)?;
    Ok(g.value(l).data()[0])
}

/// `L_e = -mean_i H(p_i)` over source-unknown predictions.
pub fn entropy_unknown_node(g: &mut Graph, probs: NodeId) -> Result<NodeId> {
    let h = entropy_node(g, probs)?;
    let m = g.mean(h)?;
    g.neg(m)
}

pub fn loss_entropy_unknown(probs: &Tensor) -> Result<f64> {
    check_probabilities(probs)?;
    let mut g = Graph::new();
    let p = g.constant(probs.clone());
    let l = entropy_unknown_node(&mut g, p)?;
    Ok(g.value(l).data()[0])
}

fn one_hot(labels: &[usize], classes: usize) -> Result<Tensor> {
    let mut data = vec![0.0; labels.len() * classes];
    for (i, &y) in labels.iter().enumerate() {
        if y >= classes {
            return Err(Error::LabelOutOfRange { label: y, classes });
        }
        data[i * classes + y] = 1.0;
    }
    Tensor::new(vec![labels.len(), classes], data)
}

/// Mean cross-entropy `-ln p_i[y_i]`.
pub fn classification_node(g: &mut Graph, probs: NodeId, labels: &[usize]) -> Result<NodeId> {
    let (rows, classes) = (g.value(probs).rows(), g.value(probs).cols());
    if rows != labels.len() {
        return Err(Error::Shape {
            op: "loss_classification",
            detail: format!("{rows} rows vs {} labels", labels.len()),
        });
    }
    let target = g.constant(one_hot(labels, classes)?);
    let logp = g.log_clamped(probs)?;
    let picked = g.mul(target, logp)?;
    let per_row = g.row_sum(picked)?;
    let m = g.mean(per_row)?;
    g.neg(m)
}

pub fn loss_classification(probs: &Tensor, labels: &[usize]) -> Result<f64> {
    check_probabilities(probs)?;
    let mut g = Graph::new();
    let p = g.constant(probs.clone());
    let l = classification_node(&mut g, p, labels)?;
    Ok(g.value(l).data()[0])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLosses {
    pub domain: f64,
    pub entropy_unknown: f64,
    pub classification: f64,
    /// `-λ_d L_d + λ_e L_e + λ_c L_c`
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct StepOutput {
    pub grads: ModelGrads,
    pub losses: StepLosses,
    /// Target weights fed to the domain loss.
    pub weights: Vec<f64>,
    pub target_entropies: Vec<f64>,
    pub known_entropies: Vec<f64>,
    pub unknown_entropies: Vec<f64>,
    /// Domain-classifier outputs on the source and target batches.
    pub d_src: Vec<f64>,
    pub d_tgt: Vec<f64>,
}

/// Builds the joint objective for one batch and returns every group's
/// gradient. See the module docs for the sign routing.
pub fn total_step_gradients(
    batch: &DomainBatch,
    params: &ModelParams,
    lw: &LossWeights,
    wc: &WeightConfig,
) -> Result<StepOutput> {
    let mut g = Graph::new();
    let vars = params.bind(&mut g);

    let xs = g.constant(batch.source_x.clone());
    let xu = g.constant(batch.unknown_x.clone());
    let xt = g.constant(batch.target_x.clone());

    let fs = vars.feature.forward(&mut g, xs)?;
    let fu = vars.feature.forward(&mut g, xu)?;
    let ft = vars.feature.forward(&mut g, xt)?;
    let ps = vars.classifier.forward(&mut g, fs)?;
    let pu = vars.classifier.forward(&mut g, fu)?;
    let pt = vars.classifier.forward(&mut g, ft)?;

    let target_entropies: Vec<f64> = g.value(pt).row_iter().map(row_entropy).collect();
    let aux_entropies = match (wc.z_mode, &batch.aux_target_x) {
        (ZMode::SameBatch, _) => None,
        (_, Some(aux)) => Some(
            params
                .predict_probs(aux)?
                .row_iter()
                .map(row_entropy)
                .collect::<Vec<_>>(),
        ),
        (_, None) => {
            return Err(Error::Config(format!(
                "z mode {:?} needs an auxiliary target batch",
                wc.z_mode
            )))
        }
    };
    let weights = batch_weights(&target_entropies, wc, aux_entropies.as_deref())?;

    let ds = vars.domain_probs(&mut g, fs, Some(1.0))?;
    let dt = vars.domain_probs(&mut g, ft, Some(1.0))?;
    let l_d = domain_loss_node(&mut g, ds, dt, &weights)?;
    let l_e = entropy_unknown_node(&mut g, pu)?;
    let l_c = classification_node(&mut g, ps, &batch.source_y)?;

    let a = g.scale(l_d, lw.lambda_d)?;
    let b = g.scale(l_e, lw.lambda_e)?;
    let c = g.scale(l_c, lw.lambda_c)?;
    let ab = g.add(a, b)?;
    let objective = g.add(ab, c)?;
    g.backward(objective)?;

    let value = |id: NodeId| g.value(id).data()[0];
    let (ld, le, lc) = (value(l_d), value(l_e), value(l_c));
    Ok(StepOutput {
        grads: vars.gradients(&g),
        losses: StepLosses {
            domain: ld,
            entropy_unknown: le,
            classification: lc,
            total: -lw.lambda_d * ld + lw.lambda_e * le + lw.lambda_c * lc,
        },
        weights,
        target_entropies,
        known_entropies: g.value(ps).row_iter().map(row_entropy).collect(),
        unknown_entropies: g.value(pu).row_iter().map(row_entropy).collect(),
        d_src: g.value(ds).data().to_vec(),
        d_tgt: g.value(dt).data().to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::LN_2;

    fn probs(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn entropy_cases() {
        let h = entropy(&probs(&[
            &[0.25, 0.25, 0.25, 0.25],
            &[0.0, 1.0, 0.0, 0.0],
            &[0.5, 0.5, 0.0, 0.0],
        ]))
        .unwrap();
        assert!((h[0] - 4f64.ln()).abs() < 1e-9);
        assert_eq!(h[1], 0.0);
        assert!((h[2] - LN_2).abs() < 1e-12);
    }

    #[test]
    fn entropy_rejects_non_probabilities() {
        assert!(matches!(
            entropy(&probs(&[&[0.5, 0.6]])),
            Err(Error::NotProbability { row: 0, .. })
        ));
    }

    #[test]
    fn weights_hand_cases() {
        let h = [0.0, LN_2];
        let same = |mode| WeightConfig {
            weight_mode: mode,
            z_mode: ZMode::SameBatch,
        };
        let w = batch_weights(&h, &same(WeightMode::NegEntropy), None).unwrap();
        assert!((w[0] - 2.0 / 3.0).abs() < 1e-15 && (w[1] - 1.0 / 3.0).abs() < 1e-15);
        let w = batch_weights(&h, &same(WeightMode::PaperLiteral), None).unwrap();
        assert!((w[0] - 1.0 / 3.0).abs() < 1e-15 && (w[1] - 2.0 / 3.0).abs() < 1e-15);
        let w = batch_weights(&h, &same(WeightMode::Uniform), None).unwrap();
        assert_eq!(w, vec![0.5, 0.5]);
    }

    #[test]
    fn equal_entropies_give_uniform_weights() {
        let h = [0.4; 5];
        for weight_mode in [WeightMode::NegEntropy, WeightMode::PaperLiteral, WeightMode::Uniform] {
            for z_mode in [ZMode::SameBatch, ZMode::FreshBatch, ZMode::Combined] {
                let aux = [0.4; 5];
                let cfg = WeightConfig { weight_mode, z_mode };
                let w = batch_weights(&h, &cfg, Some(&aux)).unwrap();
                let expected = if z_mode == ZMode::Combined { 0.1 } else { 0.2 };
                assert!(w.iter().all(|&v| (v - expected).abs() < 1e-15), "{cfg:?}: {w:?}");
            }
        }
    }

    #[test]
    fn fresh_and_combined_normalization_sets() {
        let h = [0.0, 1.0];
        let aux = [0.5, 2.0];
        let u = |x: f64| (-x).exp();
        let fresh = WeightConfig {
            weight_mode: WeightMode::NegEntropy,
            z_mode: ZMode::FreshBatch,
        };
        let w = batch_weights(&h, &fresh, Some(&aux)).unwrap();
        let z = u(0.5) + u(2.0);
        assert!((w[0] - 1.0 / z).abs() < 1e-15 && (w[1] - u(1.0) / z).abs() < 1e-15);

        let combined = WeightConfig {
            z_mode: ZMode::Combined,
            ..fresh
        };
        let w = batch_weights(&h, &combined, Some(&aux)).unwrap();
        let aux_w: f64 = aux.iter().map(|&x| u(x)).sum::<f64>() / (z + 1.0 + u(1.0));
        assert!((w.iter().sum::<f64>() + aux_w - 1.0).abs() < 1e-12);

        assert!(matches!(batch_weights(&h, &fresh, None), Err(Error::Config(_))));
    }

    #[test]
    fn domain_loss_cases() {
        let half = Tensor::filled(vec![3, 1], 0.5);
        let l = loss_domain(&half, &half, &[0.2, 0.3, 0.5]).unwrap();
        assert!((l + 2.0 * LN_2).abs() < 1e-12);

        let src = Tensor::filled(vec![2, 1], 0.1);
        let tgt = Tensor::filled(vec![2, 1], 0.9);
        let l = loss_domain(&src, &tgt, &[0.5, 0.5]).unwrap();
        assert!((l - 2.0 * 0.1f64.ln()).abs() < 1e-12);
        assert!((l + 4.60517).abs() < 1e-5);

        let l = loss_domain(&tgt, &src, &[0.5, 0.5]).unwrap();
        assert!((l - 2.0 * 0.9f64.ln()).abs() < 1e-12);
        assert!((l + 0.21072).abs() < 1e-5);

        assert!(matches!(loss_domain(&src, &tgt, &[0.5, 0.6]), Err(Error::WeightSum(_))));
    }

    #[test]
    fn domain_loss_uniform_weights_match_two_term_form() {
        let src = Tensor::vector(vec![0.2, 0.7, 0.4]).select_rows(&[0, 1, 2]);
        let src = Tensor::new(vec![3, 1], src.into_data()).unwrap();
        let tgt = Tensor::new(vec![3, 1], vec![0.6, 0.1, 0.35]).unwrap();
        let w = [1.0 / 3.0; 3];
        let l = loss_domain(&src, &tgt, &w).unwrap();
        let plain: f64 = src.data().iter().map(|d| d.ln()).sum::<f64>() / 3.0
            + tgt.data().iter().map(|d| (1.0 - d).ln()).sum::<f64>() / 3.0;
        assert!((l - plain).abs() < 1e-14);
        let reversed = loss_domain(&src.select_rows(&[2, 1, 0]), &tgt.select_rows(&[2, 1, 0]), &w).unwrap();
        assert!((l - reversed).abs() < 1e-14);
    }

    #[test]
    fn entropy_loss_cases() {
        let u = [0.25; 4];
        let one = [1.0, 0.0, 0.0, 0.0];
        assert!((loss_entropy_unknown(&probs(&[&u, &u])).unwrap() + 4f64.ln()).abs() < 1e-12);
        assert_eq!(loss_entropy_unknown(&probs(&[&one])).unwrap(), 0.0);
        let mixed = loss_entropy_unknown(&probs(&[&u, &one])).unwrap();
        assert!((mixed + 4f64.ln() / 2.0).abs() < 1e-12);
    }

    #[test]
    fn classification_loss_cases() {
        let p = probs(&[&[1.0, 0.0, 0.0, 0.0], &[0.0, 0.0, 1.0, 0.0]]);
        assert_eq!(loss_classification(&p, &[0, 2]).unwrap(), 0.0);
        let u = probs(&[&[0.25; 4]]);
        assert!((loss_classification(&u, &[3]).unwrap() - 4f64.ln()).abs() < 1e-12);
        let h = probs(&[&[0.5, 0.5], &[0.5, 0.5]]);
        assert!((loss_classification(&h, &[0, 1]).unwrap() - LN_2).abs() < 1e-12);
        assert!(matches!(
            loss_classification(&h, &[0, 2]),
            Err(Error::LabelOutOfRange { label: 2, classes: 2 })
        ));
    }
}
