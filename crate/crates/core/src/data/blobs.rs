use std::io::{BufRead, Write};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{LabeledSamples, RawDomains};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const BLOBS_HEADER: &str = "adagev-blobs v1";

/// Gaussian clusters on a circle; the target domain is a rotated and
/// translated copy of the source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BlobShiftConfig {
    pub classes: usize,
    pub dim: usize,
    pub cluster_std: f64,
    /// Radians.
    pub rotation: f64,
    /// Offset applied to the first two coordinates of target means.
    pub translation: [f64; 2],
    pub source_per_class: usize,
    pub target_per_class: usize,
    pub seed: u64,
}

impl Default for BlobShiftConfig {
    fn default() -> Self {
        BlobShiftConfig {
            classes: 10,
            dim: 2,
            cluster_std: 0.35,
            rotation: 25f64.to_radians(),
            translation: [0.3, -0.2],
            source_per_class: 200,
            target_per_class: 150,
            seed: 0,
        }
    }
}

const RADIUS: f64 = 3.0;

impl BlobShiftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes == 0 || self.dim < 2 {
            return Err(Error::Config(format!(
                "need at least one class and two dimensions, got {} classes in {} dims",
                self.classes, self.dim
            )));
        }
        if !(self.cluster_std > 0.0 && self.cluster_std.is_finite()) {
            return Err(Error::Config(format!(
                "cluster std must be positive, got {}",
                self.cluster_std
            )));
        }
        if self.source_per_class == 0 || self.target_per_class == 0 {
            return Err(Error::Config("per-class counts must be positive".into()));
        }
        if !self.rotation.is_finite() || self.translation.iter().any(|t| !t.is_finite()) {
            return Err(Error::Config("rotation and translation must be finite".into()));
        }
        Ok(())
    }

    /// Source mean of class `c`, embedded in the first two coordinates.
    pub fn source_mean(&self, c: usize) -> Vec<f64> {
        let theta = std::f64::consts::TAU * c as f64 / self.classes as f64;
        let mut m = vec![0.0; self.dim];
        m[0] = RADIUS * theta.cos();
        m[1] = RADIUS * theta.sin();
        m
    }

    pub fn target_mean(&self, c: usize) -> Vec<f64> {
        let mut m = self.source_mean(c);
        let (sin, cos) = self.rotation.sin_cos();
        let (x, y) = (m[0], m[1]);
        m[0] = cos * x - sin * y + self.translation[0];
        m[1] = sin * x + cos * y + self.translation[1];
        m
    }
}

pub fn gen_shifted_blobs(cfg: &BlobShiftConfig) -> Result<RawDomains> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut draw = |per_class: usize, mean: &dyn Fn(usize) -> Vec<f64>| {
        let mut data = Vec::with_capacity(cfg.classes * per_class * cfg.dim);
        let mut labels = Vec::with_capacity(cfg.classes * per_class);
        for c in 0..cfg.classes {
            let mu = mean(c);
            for _ in 0..per_class {
                for m in &mu {
                    let z: f64 = rng.sample(StandardNormal);
                    data.push(m + cfg.cluster_std * z);
                }
                labels.push(c);
            }
        }
        let features = Tensor::new(vec![labels.len(), cfg.dim], data).expect("blob shape");
        LabeledSamples { features, labels }
    };
    let source = draw(cfg.source_per_class, &|c| cfg.source_mean(c));
    let target = draw(cfg.target_per_class, &|c| cfg.target_mean(c));
    Ok(RawDomains { source, target })
}

/// Writes the `adagev-blobs v1` CSV export: one `domain,class,feat...` row
/// per sample. Floats use shortest round-trip formatting.
pub fn write_blobs_csv<W: Write>(mut w: W, raw: &RawDomains) -> Result<()> {
    writeln!(w, "{BLOBS_HEADER}")?;
    for (name, samples) in [("source", &raw.source), ("target", &raw.target)] {
        for (row, label) in samples.features.row_iter().zip(&samples.labels) {
            write!(w, "{name},{label}")?;
            for v in row {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_blobs_csv<R: BufRead>(r: R) -> Result<RawDomains> {
    let mut lines = r.lines();
    match lines.next() {
        Some(Ok(h)) if h.trim_end() == BLOBS_HEADER => {}
        _ => return Err(Error::Format(format!("missing '{BLOBS_HEADER}' header"))),
    }
    let mut parts: [(Vec<f64>, Vec<usize>); 2] = Default::default();
    let mut dim = None;
    for (n, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let lineno = n + 2;
        let bad = |what: &str| Error::Format(format!("line {lineno}: {what}"));
        let mut fields = line.trim_end().split(',');
        let slot = match fields.next() {
            Some("source") => 0,
            Some("target") => 1,
            _ => return Err(bad("domain must be 'source' or 'target'")),
        };
        let class: usize = fields
            .next()
            .and_then(|f| f.parse().ok())
            .ok_or_else(|| bad("bad class"))?;
        let feats = fields
            .map(|f| f.parse::<f64>().map_err(|_| bad("bad feature value")))
            .collect::<Result<Vec<_>>>()?;
        if feats.is_empty() || *dim.get_or_insert(feats.len()) != feats.len() {
            return Err(bad("inconsistent feature count"));
        }
        parts[slot].0.extend(feats);
        parts[slot].1.push(class);
    }
    let dim = dim.ok_or_else(|| Error::Format("no samples".into()))?;
    let [(sx, sy), (tx, ty)] = parts;
    let build = |x: Vec<f64>, y: Vec<usize>| -> Result<LabeledSamples> {
        LabeledSamples::new(Tensor::new(vec![y.len(), dim], x)?, y)
    };
    Ok(RawDomains {
        source: build(sx, sy)?,
        target: build(tx, ty)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts() {
        let cfg = BlobShiftConfig {
            source_per_class: 100,
            target_per_class: 100,
            ..Default::default()
        };
        let raw = gen_shifted_blobs(&cfg).unwrap();
        assert_eq!(raw.source.len(), 1000);
        assert_eq!(raw.target.len(), 1000);
        assert_eq!(raw.source.dim(), 2);
    }

    #[test]
    fn no_shift_means_coincide() {
        let cfg = BlobShiftConfig {
            rotation: 0.0,
            translation: [0.0, 0.0],
            ..Default::default()
        };
        for c in 0..cfg.classes {
            assert_eq!(cfg.source_mean(c), cfg.target_mean(c));
        }
    }

    #[test]
    fn higher_dims_embed_circle() {
        let cfg = BlobShiftConfig {
            dim: 5,
            ..Default::default()
        };
        let m = cfg.target_mean(3);
        assert_eq!(m.len(), 5);
        assert!(m[2..].iter().all(|&v| v == 0.0));
        let raw = gen_shifted_blobs(&cfg).unwrap();
        assert_eq!(raw.target.dim(), 5);
    }

    #[test]
    fn deterministic_per_seed() {
        let cfg = BlobShiftConfig::default();
        assert_eq!(gen_shifted_blobs(&cfg).unwrap(), gen_shifted_blobs(&cfg).unwrap());
        let other = BlobShiftConfig { seed: 1, ..cfg.clone() };
        assert_ne!(gen_shifted_blobs(&cfg).unwrap(), gen_shifted_blobs(&other).unwrap());
    }

    #[test]
    fn sample_means_track_class_means() {
        let cfg = BlobShiftConfig::default();
        let raw = gen_shifted_blobs(&cfg).unwrap();
        for c in [0, 4, 9] {
            let rows: Vec<&[f64]> = raw
                .target
                .features
                .row_iter()
                .zip(&raw.target.labels)
                .filter(|(_, &y)| y == c)
                .map(|(r, _)| r)
                .collect();
            let mean_x = rows.iter().map(|r| r[0]).sum::<f64>() / rows.len() as f64;
            assert!((mean_x - cfg.target_mean(c)[0]).abs() < 0.1);
        }
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let cfg = BlobShiftConfig {
            source_per_class: 3,
            target_per_class: 2,
            ..Default::default()
        };
        let raw = gen_shifted_blobs(&cfg).unwrap();
        let mut buf = Vec::new();
        write_blobs_csv(&mut buf, &raw).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("adagev-blobs v1\nsource,0,"));
        assert_eq!(read_blobs_csv(&buf[..]).unwrap(), raw);
    }

    #[test]
    fn csv_errors() {
        assert!(read_blobs_csv(&b"nope\n"[..]).is_err());
        assert!(read_blobs_csv(&b"adagev-blobs v1\nsource,0,1.0\nsource,1,1.0,2.0\n"[..]).is_err());
        assert!(read_blobs_csv(&b"adagev-blobs v1\nmoon,0,1.0\n"[..]).is_err());
    }
}
