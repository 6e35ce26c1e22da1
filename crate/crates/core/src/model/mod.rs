//! Feature extractor, K-way classifier and domain discriminator, all small
//! MLPs evaluated on the [`Graph`](crate::autodiff::Graph) engine.

mod checkpoint;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

/// Output nonlinearity applied after the last layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    None,
    Softmax,
    Sigmoid,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    /// Input width followed by the output width of every layer.
    pub widths: Vec<usize>,
    pub activation: Activation,
    pub head: Head,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>, activation: Activation, head: Head) -> Self {
        MlpSpec {
            widths,
            activation,
            head,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 {
            return Err(Error::Config(format!(
                "an MLP needs at least one layer, got widths {:?}",
                self.widths
            )));
        }
        if self.widths.contains(&0) {
            return Err(Error::Config(format!(
                "MLP widths must be positive, got {:?}",
                self.widths
            )));
        }
        Ok(())
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().expect("validated spec")
    }

    pub fn layer_count(&self) -> usize {
        self.widths.len() - 1
    }
}

/// Specs of the three networks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpecs {
    pub feature: MlpSpec,
    pub classifier: MlpSpec,
    pub domain: MlpSpec,
}

impl ModelSpecs {
    /// `g = [d, 64, 64]`, `clf = [64, K]`, `clf^d = [64, 32, 1]`.
    pub fn standard(input_dim: usize, classes: usize) -> Self {
        ModelSpecs {
            feature: MlpSpec::new(vec![input_dim, 64, 64], Activation::Relu, Head::None),
            classifier: MlpSpec::new(vec![64, classes], Activation::Relu, Head::Softmax),
            domain: MlpSpec::new(vec![64, 32, 1], Activation::Relu, Head::Sigmoid),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.feature.validate()?;
        self.classifier.validate()?;
        self.domain.validate()?;
        let f = self.feature.output_width();
        if self.classifier.input_width() != f || self.domain.input_width() != f {
            return Err(Error::Config(format!(
                "feature width {f} must equal classifier input {} and domain input {}",
                self.classifier.input_width(),
                self.domain.input_width()
            )));
        }
        if self.classifier.output_width() < 2 || self.classifier.head != Head::Softmax {
            return Err(Error::Config(
                "classifier needs a softmax head over at least 2 classes".into(),
            ));
        }
        if self.domain.output_width() != 1 || self.domain.head != Head::Sigmoid {
            return Err(Error::Config("domain classifier needs a single sigmoid output".into()));
        }
        Ok(())
    }

    pub fn classes(&self) -> usize {
        self.classifier.output_width()
    }

    pub fn input_dim(&self) -> usize {
        self.feature.input_width()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `[in, out]`
    pub weight: Tensor,
    /// `[1, out]`
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub layers: Vec<Linear>,
}

/// Scaled-uniform bound `sqrt(6 / (fan_in + fan_out))`.
pub fn init_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

impl Mlp {
    pub fn init(spec: &MlpSpec, rng: &mut impl Rng) -> Result<Self> {
        spec.validate()?;
        let layers = spec
            .widths
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = init_bound(fan_in, fan_out);
                let data = (0..fan_in * fan_out)
                    .map(|_| rng.random_range(-bound..=bound))
                    .collect();
                Linear {
                    weight: Tensor::new(vec![fan_in, fan_out], data).expect("init shape"),
                    bias: Tensor::zeros(vec![1, fan_out]),
                }
            })
            .collect();
        Ok(Mlp {
            spec: spec.clone(),
            layers,
        })
    }

    /// Constructs an MLP from explicit layers, checking them against `spec`.
    pub fn from_layers(spec: MlpSpec, layers: Vec<Linear>) -> Result<Self> {
        spec.validate()?;
        if layers.len() != spec.layer_count() {
            return Err(Error::Config(format!(
                "spec has {} layers, got {}",
                spec.layer_count(),
                layers.len()
            )));
        }
        for (layer, w) in layers.iter().zip(spec.widths.windows(2)) {
            if layer.weight.shape() != [w[0], w[1]] || layer.bias.shape() != [1, w[1]] {
                return Err(Error::Config(format!(
                    "layer shapes {:?}/{:?} do not match widths {w:?}",
                    layer.weight.shape(),
                    layer.bias.shape()
                )));
            }
        }
        Ok(Mlp { spec, layers })
    }

    pub fn bind(&self, graph: &mut Graph) -> MlpVars {
        let layers = self
            .layers
            .iter()
            .map(|l| (graph.param(l.weight.clone()), graph.param(l.bias.clone())))
            .collect();
        MlpVars {
            activation: self.spec.activation,
            head: self.spec.head,
            input_width: self.spec.input_width(),
            layers,
        }
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias])
    }

    /// Plain forward pass, head included.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g);
        let input = g.constant(x.clone());
        let out = vars.forward(&mut g, input)?;
        Ok(g.value(out).clone())
    }
}

/// Graph handles for one bound MLP.
#[derive(Debug, Clone)]
pub struct MlpVars {
    activation: Activation,
    head: Head,
    input_width: usize,
    layers: Vec<(NodeId, NodeId)>,
}

impl MlpVars {
    pub fn forward(&self, g: &mut Graph, x: NodeId) -> Result<NodeId> {
        let pre = self.logits(g, x)?;
        match self.head {
            Head::None => Ok(pre),
            Head::Softmax => g.softmax(pre),
            Head::Sigmoid => g.sigmoid(pre),
        }
    }

    /// Output of the last layer before the head.
    pub fn logits(&self, g: &mut Graph, x: NodeId) -> Result<NodeId> {
        let width = g.value(x).cols();
        if g.value(x).rank() != 2 || width != self.input_width {
            return Err(Error::Shape {
                op: "mlp",
                detail: format!(
                    "input {:?} does not match width {}",
                    g.value(x).shape(),
                    self.input_width
                ),
            });
        }
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            let z = g.matmul(h, w)?;
            h = g.add_bias(z, b)?;
            if i < last {
                h = match self.activation {
                    Activation::Relu => g.relu(h)?,
                    Activation::Tanh => g.tanh(h)?,
                };
            }
        }
        Ok(h)
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.layers.iter().flat_map(|&(w, b)| [w, b])
    }

    /// Gradients of the bound parameters, in weight/bias order per layer.
    pub fn gradients(&self, g: &Graph) -> Vec<Tensor> {
        self.node_ids().map(|id| g.grad(id).clone()).collect()
    }
}

/// The three parameter groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Group {
    Feature,
    Classifier,
    Domain,
}

impl Group {
    pub const ALL: [Group; 3] = [Group::Feature, Group::Classifier, Group::Domain];

    pub fn name(self) -> &'static str {
        match self {
            Group::Feature => "theta_g",
            Group::Classifier => "theta_c",
            Group::Domain => "theta_d",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub feature: Mlp,
    pub classifier: Mlp,
    pub domain: Mlp,
}

impl ModelParams {
    /// Scaled-uniform weights and zero biases, deterministic in `seed`.
    pub fn init(specs: &ModelSpecs, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::init_with(specs, &mut rng)
    }

    pub fn init_with(specs: &ModelSpecs, rng: &mut impl Rng) -> Result<Self> {
        specs.validate()?;
        Ok(ModelParams {
            feature: Mlp::init(&specs.feature, rng)?,
            classifier: Mlp::init(&specs.classifier, rng)?,
            domain: Mlp::init(&specs.domain, rng)?,
        })
    }

    pub fn specs(&self) -> ModelSpecs {
        ModelSpecs {
            feature: self.feature.spec.clone(),
            classifier: self.classifier.spec.clone(),
            domain: self.domain.spec.clone(),
        }
    }

    pub fn classes(&self) -> usize {
        self.classifier.spec.output_width()
    }

    pub fn group(&self, group: Group) -> &Mlp {
        match group {
            Group::Feature => &self.feature,
            Group::Classifier => &self.classifier,
            Group::Domain => &self.domain,
        }
    }

    pub fn group_mut(&mut self, group: Group) -> &mut Mlp {
        match group {
            Group::Feature => &mut self.feature,
            Group::Classifier => &mut self.classifier,
            Group::Domain => &mut self.domain,
        }
    }

    /// Every tensor in manifest order: feature, classifier, domain groups.
    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.feature
            .tensors()
            .chain(self.classifier.tensors())
            .chain(self.domain.tensors())
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.feature
            .tensors_mut()
            .chain(self.classifier.tensors_mut())
            .chain(self.domain.tensors_mut())
    }

    pub fn bind(&self, g: &mut Graph) -> ModelVars {
        ModelVars {
            feature: self.feature.bind(g),
            classifier: self.classifier.bind(g),
            domain: self.domain.bind(g),
        }
    }

    /// `g(x)` for a `[B, d]` batch.
    pub fn forward_features(&self, x: &Tensor) -> Result<Tensor> {
        self.feature.forward(x)
    }

    /// Softmax class probabilities `[B, K]` for a batch of features.
    pub fn forward_classifier(&self, features: &Tensor) -> Result<Tensor> {
        self.classifier.forward(features)
    }

    /// Probability of the target domain, `[B, 1]`. The reversal layer only
    /// affects gradients, so `use_grl` never changes the returned values.
    pub fn forward_domain(&self, features: &Tensor, use_grl: bool, grl_scale: f64) -> Result<Tensor> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g);
        let f = g.constant(features.clone());
        let out = vars.domain_probs(&mut g, f, use_grl.then_some(grl_scale))?;
        Ok(g.value(out).clone())
    }

    /// Class probabilities straight from raw inputs.
    pub fn predict_probs(&self, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g);
        let input = g.constant(x.clone());
        let f = vars.feature.forward(&mut g, input)?;
        let p = vars.classifier.forward(&mut g, f)?;
        Ok(g.value(p).clone())
    }
}

/// Graph handles for all three groups.
#[derive(Debug, Clone)]
pub struct ModelVars {
    pub feature: MlpVars,
    pub classifier: MlpVars,
    pub domain: MlpVars,
}

impl ModelVars {
    pub fn domain_probs(&self, g: &mut Graph, features: NodeId, grl: Option<f64>) -> Result<NodeId> {
        let input = match grl {
            Some(scale) => g.grad_reverse(features, scale)?,
            None => features,
        };
        self.domain.forward(g, input)
    }

    pub fn gradients(&self, g: &Graph) -> ModelGrads {
        ModelGrads {
            feature: self.feature.gradients(g),
            classifier: self.classifier.gradients(g),
            domain: self.domain.gradients(g),
        }
    }
}

/// Per-group gradients, each aligned with [`Mlp::tensors`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads {
    pub feature: Vec<Tensor>,
    pub classifier: Vec<Tensor>,
    pub domain: Vec<Tensor>,
}

impl ModelGrads {
    pub fn group(&self, group: Group) -> &[Tensor] {
        match group {
            Group::Feature => &self.feature,
            Group::Classifier => &self.classifier,
            Group::Domain => &self.domain,
        }
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.feature.iter().chain(&self.classifier).chain(&self.domain)
    }
}
