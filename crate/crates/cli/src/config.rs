//! The JSON run configuration shared by every command.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use monoenv_core::cgl::CglConfig;
use monoenv_core::data::{load_csv_path, make_folds, Fold, LoadedDataset, Schema};
use monoenv_core::nn::MonotoneSpec;
use monoenv_core::solver::SolverConfig;
use monoenv_core::trainer::{Architecture, GridSpec};
use serde::{Deserialize, Serialize};

fn default_folds() -> usize {
    3
}

fn default_train_fraction() -> f64 {
    0.8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// Dataset label used in reports; defaults to the CSV file stem.
    #[serde(default)]
    pub name: Option<String>,
    pub csv: PathBuf,
    pub schema: PathBuf,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    /// Monotone feature names; defaults to every monotone column of the schema.
    #[serde(default)]
    pub monotone: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimingSection {
    /// Architectures timed against each other.
    pub architectures: Vec<Architecture>,
    /// Training epochs for each timed model.
    #[serde(default = "default_timing_epochs")]
    pub epochs: usize,
    /// Test points per measurement.
    #[serde(default = "default_timing_points")]
    pub points: usize,
}

fn default_timing_epochs() -> usize {
    50
}

fn default_timing_points() -> usize {
    20
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkSection {
    /// Monotone feature sets, one report row each.
    pub feature_sets: Vec<Vec<String>>,
    /// Caps the train and test points scored per fold (desk-scale runs).
    #[serde(default)]
    pub max_points: Option<usize>,
    #[serde(default)]
    pub timing: Option<TimingSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Write measured times into logs and histories; off keeps reruns byte-identical.
    #[serde(default)]
    pub record_timing: bool,
    #[serde(default)]
    pub data: Option<DataSection>,
    #[serde(default)]
    pub grid: Option<GridSpec>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub cgl: Option<CglConfig>,
    /// Explicit monotone spec by feature index, for models without a dataset.
    #[serde(default)]
    pub spec: Option<MonotoneSpec>,
    #[serde(default)]
    pub benchmark: Option<BenchmarkSection>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let de = &mut serde_json::Deserializer::from_str(&text);
        let mut cfg: RunConfig = serde_path_to_error::deserialize(de)
            .map_err(|e| anyhow::anyhow!("config {} at `{}`: {}", path.display(), e.path(), e.inner()))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.solver.validate()?;
        if let Some(g) = &self.grid {
            g.validate()?;
        }
        if let Some(c) = &self.cgl {
            c.validate()?;
        }
        if let Some(s) = &self.spec {
            MonotoneSpec::new(s.entries().to_vec())?;
        }
        Ok(())
    }

    /// Resolves `p` against the config file's directory.
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn data_section(&self) -> Result<&DataSection> {
        self.data.as_ref().context("config has no `data` section")
    }

    pub fn load_data(&self) -> Result<Dataset> {
        let section = self.data_section()?;
        let schema_path = self.resolve(&section.schema);
        let csv_path = self.resolve(&section.csv);
        let schema = Schema::load(&schema_path).with_context(|| format!("loading schema {}", schema_path.display()))?;
        let loaded = load_csv_path(&csv_path, &schema).with_context(|| format!("loading data {}", csv_path.display()))?;
        let folds = make_folds(loaded.data.len(), section.folds, section.train_fraction, self.seed)?;
        let name = section.name.clone().unwrap_or_else(|| {
            csv_path.file_stem().map_or("dataset".into(), |s| s.to_string_lossy().into_owned())
        });
        Ok(Dataset { name, loaded, folds })
    }

    /// Monotone spec: the config's explicit spec, else the data section's
    /// feature names, else every monotone schema column.
    pub fn monotone_spec(&self, data: Option<&Dataset>) -> Result<MonotoneSpec> {
        if let Some(s) = &self.spec {
            return Ok(MonotoneSpec::new(s.entries().to_vec())?);
        }
        let Some(d) = data else {
            bail!("no monotone spec: add `spec` or a `data` section to the config, or pass --feature");
        };
        match &self.data_section()?.monotone {
            Some(names) => Ok(d.loaded.spec_for(names)?),
            None => d
                .loaded
                .spec
                .clone()
                .context("the schema declares no monotone columns"),
        }
    }
}

pub struct Dataset {
    pub name: String,
    pub loaded: LoadedDataset,
    pub folds: Vec<Fold>,
}

impl Dataset {
    pub fn fold(&self, k: usize) -> Result<&Fold> {
        self.folds
            .get(k)
            .with_context(|| format!("fold {k} requested but the config defines {}", self.folds.len()))
    }

    pub fn points(&self, indices: &[usize]) -> Vec<Vec<f64>> {
        indices.iter().map(|&i| self.loaded.data.inputs()[i].clone()).collect()
    }
}
