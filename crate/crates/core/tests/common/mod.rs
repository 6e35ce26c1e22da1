#![allow(dead_code)]

use adagev::autodiff::Graph;
use adagev::data::{apply_roles, gen_shifted_blobs, BlobShiftConfig, DatasetPool, DomainBatch, RoleSplit};
use adagev::model::{Activation, Group, Head, MlpSpec, ModelParams, ModelSpecs};
use adagev::objective::{classification_node, domain_loss_node, entropy_unknown_node, LossWeights};
use adagev::Tensor;
use rand::Rng;

pub const FD_STEP: f64 = 1e-5;

/// Relative error with a small floor so gradients that are zero on both
/// sides compare equal.
pub fn rel_err(a: f64, b: f64) -> f64 {
    let denom = a.abs().max(b.abs()).max(1e-6);
    (a - b).abs() / denom
}

pub fn random_tensor(rng: &mut impl Rng, shape: Vec<usize>, scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

pub fn random_specs(rng: &mut impl Rng) -> ModelSpecs {
    let d = rng.random_range(1..=3);
    let f = rng.random_range(2..=4);
    let k = rng.random_range(2..=4);
    let act = if rng.random_bool(0.5) {
        Activation::Tanh
    } else {
        Activation::Relu
    };
    ModelSpecs {
        feature: MlpSpec::new(vec![d, rng.random_range(2..=5), f], act, Head::None),
        classifier: MlpSpec::new(vec![f, k], act, Head::Softmax),
        domain: MlpSpec::new(vec![f, rng.random_range(2..=4), 1], act, Head::Sigmoid),
    }
}

/// Parameters drawn uniformly, biases included, so that no ReLU input sits
/// exactly on its kink.
pub fn random_params(rng: &mut impl Rng, specs: &ModelSpecs) -> ModelParams {
    let mut p = ModelParams::init_with(specs, rng).unwrap();
    randomize(rng, p.tensors_mut());
    p
}

pub fn randomize<'a>(rng: &mut impl Rng, tensors: impl Iterator<Item = &'a mut Tensor>) {
    for t in tensors {
        for v in t.data_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
    }
}

pub fn random_batch(rng: &mut impl Rng, specs: &ModelSpecs) -> DomainBatch {
    let b = rng.random_range(1..=4);
    let d = specs.input_dim();
    DomainBatch {
        source_x: random_tensor(rng, vec![b, d], 2.0),
        source_y: (0..b).map(|_| rng.random_range(0..specs.classes())).collect(),
        unknown_x: random_tensor(rng, vec![b, d], 2.0),
        target_x: random_tensor(rng, vec![b, d], 2.0),
        aux_target_x: None,
    }
}

/// `(L_d, L_e, L_c)` with the target weights held fixed.
pub fn loss_terms(params: &ModelParams, batch: &DomainBatch, weights: &[f64]) -> (f64, f64, f64) {
    let mut g = Graph::new();
    let vars = params.bind(&mut g);
    let xs = g.constant(batch.source_x.clone());
    let xu = g.constant(batch.unknown_x.clone());
    let xt = g.constant(batch.target_x.clone());
    let fs = vars.feature.forward(&mut g, xs).unwrap();
    let fu = vars.feature.forward(&mut g, xu).unwrap();
    let ft = vars.feature.forward(&mut g, xt).unwrap();
    let ps = vars.classifier.forward(&mut g, fs).unwrap();
    let pu = vars.classifier.forward(&mut g, fu).unwrap();
    let ds = vars.domain_probs(&mut g, fs, None).unwrap();
    let dt = vars.domain_probs(&mut g, ft, None).unwrap();
    let ld = domain_loss_node(&mut g, ds, dt, weights).unwrap();
    let le = entropy_unknown_node(&mut g, pu).unwrap();
    let lc = classification_node(&mut g, ps, &batch.source_y).unwrap();
    let v = |id| g.value(id).data()[0];
    (v(ld), v(le), v(lc))
}

/// Gradient the given group should receive: θ^d descends `λ_d L_d`, the
/// other two descend `-λ_d L_d + λ_e L_e + λ_c L_c`.
pub fn routed_objective(group: Group, lw: &LossWeights, terms: (f64, f64, f64)) -> f64 {
    let (ld, le, lc) = terms;
    match group {
        Group::Domain => lw.lambda_d * ld,
        Group::Feature | Group::Classifier => -lw.lambda_d * ld + lw.lambda_e * le + lw.lambda_c * lc,
    }
}

/// Central differences of `f` with respect to every entry of `group`.
pub fn fd_group(params: &ModelParams, group: Group, mut f: impl FnMut(&ModelParams) -> f64) -> Vec<Vec<f64>> {
    let mut work = params.clone();
    let count = params.group(group).tensors().count();
    let mut out = Vec::with_capacity(count);
    for ti in 0..count {
        let len = params.group(group).tensors().nth(ti).unwrap().len();
        let mut grads = Vec::with_capacity(len);
        for j in 0..len {
            let orig = work.group(group).tensors().nth(ti).unwrap().data()[j];
            set(&mut work, group, ti, j, orig + FD_STEP);
            let up = f(&work);
            set(&mut work, group, ti, j, orig - FD_STEP);
            let down = f(&work);
            set(&mut work, group, ti, j, orig);
            grads.push((up - down) / (2.0 * FD_STEP));
        }
        out.push(grads);
    }
    out
}

fn set(params: &mut ModelParams, group: Group, ti: usize, j: usize, v: f64) {
    params.group_mut(group).tensors_mut().nth(ti).unwrap().data_mut()[j] = v;
}

/// The default synthetic benchmark with the digits role split.
pub fn benchmark_pool(seed: u64) -> DatasetPool {
    let raw = gen_shifted_blobs(&BlobShiftConfig {
        seed,
        ..Default::default()
    })
    .unwrap();
    apply_roles(&raw.source, &raw.target, &RoleSplit::digits()).unwrap()
}

/// Adaptive Simpson quadrature.
pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        (m, fm, (b - a) / 6.0 * (fa + 4.0 * fm + fb))
    }
    #[allow(clippy::too_many_arguments)]
    fn rec(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        m: f64,
        fm: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let (lm, flm, left) = simpson(f, a, fa, m, fm);
        let (rm, frm, right) = simpson(f, m, fm, b, fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        rec(f, a, fa, m, fm, lm, flm, left, tol / 2.0, depth - 1)
            + rec(f, m, fm, b, fb, rm, frm, right, tol / 2.0, depth - 1)
    }
    let (fa, fb) = (f(a), f(b));
    let (m, fm, whole) = simpson(f, a, fa, b, fb);
    rec(f, a, fa, b, fb, m, fm, whole, tol, 48)
}
