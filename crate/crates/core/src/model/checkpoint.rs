//! Binary checkpoint format.
//!
//! ```text
//! b"ADAGEV1\0"
//! u32 LE     manifest length in bytes
//! [u8]       UTF-8 JSON manifest: groups (name, spec, tensor shapes), gev flag
//! [f64 LE]   tensor values in manifest order, then l, s, c if gev is set
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Group, Linear, Mlp, MlpSpec, ModelParams};
use crate::error::{Error, Result};
use crate::evt::GevParams;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"ADAGEV1\0";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub gev: Option<GevParams>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    groups: Vec<GroupManifest>,
    gev: bool,
}

#[derive(Serialize, Deserialize)]
struct GroupManifest {
    name: String,
    spec: MlpSpec,
    shapes: Vec<Vec<usize>>,
}

pub fn write_checkpoint<W: Write>(mut w: W, params: &ModelParams, gev: Option<&GevParams>) -> Result<()> {
    let manifest = Manifest {
        groups: Group::ALL
            .iter()
            .map(|&g| {
                let mlp = params.group(g);
                GroupManifest {
                    name: g.name().to_string(),
                    spec: mlp.spec.clone(),
                    shapes: mlp.tensors().map(|t| t.shape().to_vec()).collect(),
                }
            })
            .collect(),
        gev: gev.is_some(),
    };
    let json = serde_json::to_vec(&manifest).map_err(|e| Error::Format(e.to_string()))?;
    let len = u32::try_from(json.len()).map_err(|_| Error::Format("manifest too large".into()))?;
    w.write_all(MAGIC)?;
    w.write_all(&len.to_le_bytes())?;
    w.write_all(&json)?;
    for t in params.tensors() {
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    if let Some(p) = gev {
        for v in [p.l, p.s, p.c] {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let corrupt = |m: &str| Error::CorruptCheckpoint(m.to_string());

    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let body = &bytes[12..];
    if body.len() < len {
        return Err(corrupt("truncated manifest"));
    }
    let manifest: Manifest = serde_json::from_slice(&body[..len]).map_err(|e| corrupt(&format!("manifest: {e}")))?;
    let payload = &body[len..];
    if payload.len() % 8 != 0 {
        return Err(corrupt("payload is not a whole number of f64 values"));
    }
    let mut values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));

    let expected_names: Vec<&str> = Group::ALL.iter().map(|g| g.name()).collect();
    let names: Vec<&str> = manifest.groups.iter().map(|g| g.name.as_str()).collect();
    if names != expected_names {
        return Err(corrupt(&format!("unexpected groups {names:?}")));
    }
    let needed: usize = manifest
        .groups
        .iter()
        .flat_map(|g| g.shapes.iter().map(|s| s.iter().product::<usize>()))
        .sum::<usize>()
        + if manifest.gev { 3 } else { 0 };
    if payload.len() / 8 != needed {
        return Err(corrupt(&format!(
            "manifest declares {needed} values, payload holds {}",
            payload.len() / 8
        )));
    }

    let mut groups = Vec::with_capacity(3);
    for gm in &manifest.groups {
        if gm.shapes.len() % 2 != 0 {
            return Err(corrupt("odd tensor count in group"));
        }
        let mut layers = Vec::with_capacity(gm.shapes.len() / 2);
        for pair in gm.shapes.chunks(2) {
            let mut take = |shape: &Vec<usize>| {
                let n = shape.iter().product();
                let data: Vec<f64> = values.by_ref().take(n).collect();
                Tensor::new(shape.clone(), data)
            };
            let weight = take(&pair[0])?;
            let bias = take(&pair[1])?;
            layers.push(Linear { weight, bias });
        }
        let mlp = Mlp::from_layers(gm.spec.clone(), layers).map_err(|e| corrupt(&format!("group {}: {e}", gm.name)))?;
        groups.push(mlp);
    }
    let gev = if manifest.gev {
        let (l, s, c) = (
            values.next().expect("counted"),
            values.next().expect("counted"),
            values.next().expect("counted"),
        );
        Some(GevParams::new(l, s, c).map_err(|e| corrupt(&format!("gev: {e}")))?)
    } else {
        None
    };
    let mut it = groups.into_iter();
    let params = ModelParams {
        feature: it.next().expect("three groups"),
        classifier: it.next().expect("three groups"),
        domain: it.next().expect("three groups"),
    };
    params.specs().validate().map_err(|e| corrupt(&format!("specs: {e}")))?;
    Ok(Checkpoint { params, gev })
}

pub fn save_checkpoint(path: impl AsRef<Path>, params: &ModelParams, gev: Option<&GevParams>) -> Result<()> {
    let file = File::create(path)?;
    write_checkpoint(BufWriter::new(file), params, gev)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let file = File::open(path)?;
    read_checkpoint(BufReader::new(file))
}
