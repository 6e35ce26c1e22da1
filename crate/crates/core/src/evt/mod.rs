//! Generalized extreme value (GEV) modelling of the entropy tail.
//!
//! With `t(x) = (1 + c (x - l) / s)^(-1/c)` the density is
//! `t^(1+c) exp(-t) / s` and the CDF is `exp(-t)`. For `|c| < 1e-6` the
//! Gumbel limit `t = exp(-(x - l) / s)` is used instead.

pub mod simplex;

use rand::distr::Open01;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use simplex::{minimize, SimplexOptions};

/// Shape magnitudes below this use the Gumbel closed forms.
pub const GUMBEL_EPS: f64 = 1e-6;

const EULER_GAMMA: f64 = 0.5772;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGev")]
pub struct GevParams {
    pub l: f64,
    pub s: f64,
    pub c: f64,
}

#[derive(Deserialize)]
struct RawGev {
    l: f64,
    s: f64,
    c: f64,
}

impl TryFrom<RawGev> for GevParams {
    type Error = Error;

    fn try_from(r: RawGev) -> Result<Self> {
        GevParams::new(r.l, r.s, r.c)
    }
}

impl GevParams {
    pub fn new(l: f64, s: f64, c: f64) -> Result<Self> {
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::NonPositiveScale(s));
        }
        if !l.is_finite() || !c.is_finite() {
            return Err(Error::Config(format!("GEV parameters must be finite: l={l}, c={c}")));
        }
        Ok(GevParams { l, s, c })
    }

    pub fn is_gumbel(&self) -> bool {
        self.c.abs() < GUMBEL_EPS
    }

    /// `ln t(x)`; `+inf` below a lower endpoint, `-inf` above an upper one.
    fn ln_t(&self, x: f64) -> f64 {
        let z = (x - self.l) / self.s;
        if self.is_gumbel() {
            return -z;
        }
        let a = self.c * z;
        if a <= -1.0 {
            return if self.c > 0.0 { f64::INFINITY } else { f64::NEG_INFINITY };
        }
        -a.ln_1p() / self.c
    }

    pub fn t(&self, x: f64) -> f64 {
        self.ln_t(x).exp()
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        let ln_t = self.ln_t(x);
        if !ln_t.is_finite() {
            return f64::NEG_INFINITY;
        }
        -self.s.ln() + (1.0 + self.c) * ln_t - ln_t.exp()
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.ln_pdf(x).exp()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        (-self.t(x)).exp()
    }

    /// Inverse CDF for `u` in `(0, 1)`.
    pub fn quantile(&self, u: f64) -> f64 {
        let y = -u.ln();
        if self.is_gumbel() {
            self.l - self.s * y.ln()
        } else {
            self.l + self.s * (y.powf(-self.c) - 1.0) / self.c
        }
    }

    /// Finite lower endpoint of the support, when `c > 0`.
    pub fn lower_endpoint(&self) -> Option<f64> {
        (!self.is_gumbel() && self.c > 0.0).then(|| self.l - self.s / self.c)
    }

    /// Finite upper endpoint of the support, when `c < 0`.
    pub fn upper_endpoint(&self) -> Option<f64> {
        (!self.is_gumbel() && self.c < 0.0).then(|| self.l - self.s / self.c)
    }
}

pub fn gev_t(x: f64, p: &GevParams) -> f64 {
    p.t(x)
}

pub fn gev_pdf(x: f64, p: &GevParams) -> f64 {
    p.pdf(x)
}

pub fn gev_cdf(x: f64, p: &GevParams) -> f64 {
    p.cdf(x)
}

/// `n` inverse-CDF draws, deterministic in `seed`.
pub fn gev_sample(p: &GevParams, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    gev_sample_with(p, n, &mut rng)
}

pub fn gev_sample_with(p: &GevParams, n: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let u: f64 = rng.sample(Open01);
            p.quantile(u)
        })
        .collect()
}

/// The unknown-class rule: reject when the CDF strictly exceeds one half.
pub fn reject_unknown(entropy: f64, p: &GevParams) -> bool {
    exceeds_median(p.cdf(entropy))
}

pub fn exceeds_median(cdf: f64) -> bool {
    cdf > 0.5
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum TailMethod {
    BlockMaxima { block_size: usize },
    TopFraction { fraction: f64 },
}

/// Which source entropies enter the fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitPool {
    KnownOnly,
    KnownPlusUnknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TailConfig {
    pub method: TailMethod,
    pub source_pool: FitPool,
    /// Minimum number of tail values required for a fit.
    pub min_tail: usize,
}

impl Default for TailConfig {
    fn default() -> Self {
        TailConfig {
            method: TailMethod::BlockMaxima { block_size: 20 },
            source_pool: FitPool::KnownOnly,
            min_tail: 30,
        }
    }
}

impl TailConfig {
    pub fn validate(&self) -> Result<()> {
        match self.method {
            TailMethod::BlockMaxima { block_size: 0 } => Err(Error::Config("block size must be positive".into())),
            TailMethod::TopFraction { fraction } if !(fraction > 0.0 && fraction < 1.0) => Err(Error::Config(format!(
                "tail fraction must lie in (0, 1), got {fraction}"
            ))),
            _ => Ok(()),
        }
    }
}

/// Selects the tail of an entropy sample.
///
/// Block maxima shuffle the values deterministically, cut them into blocks
/// and keep each block's maximum; a partial last block is dropped.
pub fn extract_tail(entropies: &[f64], tc: &TailConfig, seed: u64) -> Result<Vec<f64>> {
    tc.validate()?;
    let tail = match tc.method {
        TailMethod::BlockMaxima { block_size } => {
            let mut values = entropies.to_vec();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            values.shuffle(&mut rng);
            values
                .chunks_exact(block_size)
                .map(|b| b.iter().copied().fold(f64::NEG_INFINITY, f64::max))
                .collect::<Vec<_>>()
        }
        TailMethod::TopFraction { fraction } => {
            let keep = (fraction * entropies.len() as f64).ceil() as usize;
            let mut values = entropies.to_vec();
            values.sort_by(|a, b| b.total_cmp(a));
            values.truncate(keep);
            values.reverse();
            values
        }
    };
    if tail.len() < tc.min_tail.max(1) {
        return Err(Error::InsufficientData {
            needed: tc.min_tail.max(1),
            got: tail.len(),
        });
    }
    Ok(tail)
}

pub const MIN_FIT_VALUES: usize = 30;

#[derive(Debug, Clone, Serialize)]
pub struct GevFit {
    pub params: GevParams,
    pub log_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Total log-likelihood; `-inf` if any value falls outside the support.
pub fn log_likelihood(values: &[f64], p: &GevParams) -> f64 {
    let mut total = 0.0;
    for &x in values {
        let lp = p.ln_pdf(x);
        if !lp.is_finite() {
            return f64::NEG_INFINITY;
        }
        total += lp;
    }
    total
}

/// Maximum-likelihood GEV fit by simplex search over `(l, ln s, c)`.
pub fn fit_gev_mle(values: &[f64]) -> Result<GevParams> {
    fit_gev_mle_with(values, SimplexOptions::default()).map(|f| f.params)
}

pub fn fit_gev_mle_with(values: &[f64], opts: SimplexOptions) -> Result<GevFit> {
    if values.len() < MIN_FIT_VALUES {
        return Err(Error::InsufficientData {
            needed: MIN_FIT_VALUES,
            got: values.len(),
        });
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { op: "fit_gev_mle" });
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let std = var.sqrt();
    if !(std > 1e-12) {
        return Err(Error::ZeroVariance);
    }

    let s0 = 6f64.sqrt() * std / std::f64::consts::PI;
    let l0 = mean - EULER_GAMMA * s0;
    let nll = |x: &[f64]| {
        let s = x[1].exp();
        if !(s > 0.0 && s.is_finite()) {
            return f64::INFINITY;
        }
        let p = GevParams { l: x[0], s, c: x[2] };
        -log_likelihood(values, &p)
    };

    // The moment start with c = 0.1 can miss the support of left-skewed
    // data; the Gumbel start never can.
    let mut start = [l0, s0.ln(), 0.1];
    if !nll(&start).is_finite() {
        start[2] = 0.0;
        if !nll(&start).is_finite() {
            return Err(Error::NoFeasiblePoint);
        }
    }
    let steps = [0.25 * s0, 0.25, 0.1];
    let r = minimize(nll, &start, &steps, opts);
    if !r.value.is_finite() {
        return Err(Error::NoFeasiblePoint);
    }
    Ok(GevFit {
        params: GevParams::new(r.x[0], r.x[1].exp(), r.x[2])?,
        log_likelihood: -r.value,
        iterations: r.iterations,
        converged: r.converged,
    })
}
