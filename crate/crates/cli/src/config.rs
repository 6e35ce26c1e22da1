use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use adagev::data::{
    apply_roles, gen_shifted_blobs, load_idx, read_blobs_csv, BlobShiftConfig, DatasetPool, RawDomains, RoleSplit,
};
use adagev::model::ModelSpecs;
use adagev::pipeline::{AblationMode, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Where samples come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    /// Generated in memory, so the echo alone reproduces the data.
    Synthetic(BlobShiftConfig),
    /// A file written by `gen-data`.
    Csv { path: PathBuf },
    Idx {
        source_images: PathBuf,
        source_labels: PathBuf,
        target_images: PathBuf,
        target_labels: PathBuf,
    },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic(BlobShiftConfig::default())
    }
}

impl DataSource {
    pub fn load(&self) -> Result<RawDomains, CliError> {
        Ok(match self {
            DataSource::Synthetic(cfg) => gen_shifted_blobs(cfg)?,
            DataSource::Csv { path } => {
                let file = File::open(path).map_err(|e| CliError::io(path, e))?;
                read_blobs_csv(BufReader::new(file)).map_err(CliError::at(path))?
            }
            DataSource::Idx {
                source_images,
                source_labels,
                target_images,
                target_labels,
            } => RawDomains {
                source: load_idx(source_images, source_labels)?,
                target: load_idx(target_images, target_labels)?,
            },
        })
    }

    /// Makes file paths absolute so the echo works from any directory.
    fn absolutize(&mut self) -> Result<(), CliError> {
        let fix = |p: &mut PathBuf| -> Result<(), CliError> {
            *p = std::fs::canonicalize(&*p).map_err(|e| CliError::io(p, e))?;
            Ok(())
        };
        match self {
            DataSource::Synthetic(_) => Ok(()),
            DataSource::Csv { path } => fix(path),
            DataSource::Idx {
                source_images,
                source_labels,
                target_images,
                target_labels,
            } => {
                for p in [source_images, source_labels, target_images, target_labels] {
                    fix(p)?;
                }
                Ok(())
            }
        }
    }
}

/// Everything needed to repeat a run. Written as `config.json` next to
/// every output.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub data: DataSource,
    pub split: RoleSplit,
    /// `None` picks the standard architecture for the data's dimension.
    pub model: Option<ModelSpecs>,
    pub train: TrainConfig,
    pub variant: Option<AblationMode>,
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    /// Loads the data, applies the role split and fills in the model.
    pub fn resolve(&mut self) -> Result<DatasetPool, CliError> {
        self.data.absolutize()?;
        self.train.validate()?;
        let raw = self.data.load()?;
        let pool = apply_roles(&raw.source, &raw.target, &self.split)?;
        let specs = self
            .model
            .get_or_insert_with(|| ModelSpecs::standard(pool.dim(), pool.classes()));
        specs.validate()?;
        if specs.classes() != pool.classes() || specs.input_dim() != pool.dim() {
            return Err(CliError::Usage(format!(
                "model expects {} inputs and {} classes, data has {} and {}",
                specs.input_dim(),
                specs.classes(),
                pool.dim(),
                pool.classes()
            )));
        }
        Ok(pool)
    }

    pub fn specs(&self) -> &ModelSpecs {
        self.model.as_ref().expect("resolve fills the model")
    }
}
