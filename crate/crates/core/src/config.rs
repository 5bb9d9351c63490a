//! Run configuration: one TOML document describing the structure family,
//! features, chains and stopping rule.
//!
//! Any leaf can be overridden with `path.to.key=value`, where `value` is
//! parsed as a TOML value (bare words fall back to strings).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::chain::{Aligner, ChainSpec, Method, SubspaceDim};
use crate::error::{Error, Result};
use crate::harness::{Stopping, SEM_BATCH};
use crate::structfam::{build_templates, ChainTemplate, DamageSpec, FeatureConfig, MorphSpec, StructureParams};

/// α values along the family: explicit, or `n_interior` linearly spaced
/// values from the floor (inclusive) towards 1, bracketed by 0 and 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alphas: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_interior: Option<usize>,
}

/// Settings shared by every chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainDefaults {
    pub subspace_dim: SubspaceDim,
    pub aligner: Aligner,
    pub labelled_healthy_fraction: f64,
    #[serde(default = "one")]
    pub svm_c: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pseudo_label_margin: Option<f64>,
}

fn one() -> f64 {
    1.0
}

/// A chain written as explicit indices, or `"direct"` (source to target) or
/// `"all"` (every structure in order).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ChainSelection {
    Indices(Vec<usize>),
    Named(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferConfig {
    pub chains: Vec<ChainSelection>,
    pub methods: Vec<Method>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchConfig {
    pub k_values: Vec<usize>,
    pub n_chains: usize,
    pub n_realisations: usize,
    pub methods: Vec<Method>,
}

fn default_min() -> usize {
    SEM_BATCH
}

fn default_batch() -> usize {
    SEM_BATCH
}

/// Exactly one of `n_realisations` and `sem_target` must be given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HarnessConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_realisations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sem_target: Option<f64>,
    #[serde(default = "default_min")]
    pub min_realisations: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_realisations: Option<usize>,
    #[serde(default = "default_batch")]
    pub batch: usize,
}

impl HarnessConfig {
    pub fn stopping(&self) -> Result<Stopping> {
        let stop = match (self.n_realisations, self.sem_target) {
            (Some(n), None) => Stopping::Fixed { n_realisations: n },
            (None, Some(t)) => Stopping::Sem {
                sem_target: t,
                min: self.min_realisations,
                max: self
                    .max_realisations
                    .ok_or_else(|| Error::Config("harness.max_realisations is required with sem_target".into()))?,
                batch: self.batch,
            },
            _ => {
                return Err(Error::Config(
                    "harness needs exactly one of n_realisations and sem_target".into(),
                ))
            }
        };
        stop.validate()?;
        Ok(stop)
    }
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    pub structure: StructureParams,
    pub morph: MorphSpec,
    #[serde(default)]
    pub damage: Vec<DamageSpec>,
    pub family: FamilyConfig,
    pub features: FeatureConfig,
    pub chain: ChainDefaults,
    pub harness: HarnessConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transfer: Option<TransferConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub search: Option<SearchConfig>,
}

fn parse_value(text: &str) -> Value {
    match format!("v = {text}").parse::<Table>() {
        Ok(mut t) => t.remove("v").expect("key inserted above"),
        Err(_) => Value::String(text.to_string()),
    }
}

/// Applies `path.to.key=value` overrides to a parsed document.
pub fn apply_overrides(doc: &mut Table, overrides: &[String]) -> Result<()> {
    for item in overrides {
        let (path, value) = item
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{item}` is not of the form key=value")))?;
        let keys: Vec<&str> = path.trim().split('.').collect();
        if keys.iter().any(|k| k.is_empty()) {
            return Err(Error::Config(format!("override `{item}` has an empty key")));
        }
        let mut table = &mut *doc;
        for key in &keys[..keys.len() - 1] {
            table = table
                .entry(key.to_string())
                .or_insert_with(|| Value::Table(Table::new()))
                .as_table_mut()
                .ok_or_else(|| Error::Config(format!("override `{item}`: `{key}` is not a table")))?;
        }
        table.insert(keys[keys.len() - 1].to_string(), parse_value(value.trim()));
    }
    Ok(())
}

impl RunConfig {
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let cfg: RunConfig = if overrides.is_empty() {
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?
        } else {
            let mut doc: Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
            apply_overrides(&mut doc, overrides)?;
            Value::Table(doc)
                .try_into()
                .map_err(|e: toml::de::Error| Error::Config(format!("after overrides: {e}")))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text, overrides).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn alphas(&self) -> Result<Vec<f64>> {
        match (&self.family.alphas, self.family.n_interior) {
            (Some(a), None) => Ok(a.clone()),
            (None, Some(n)) => {
                let floor = self.morph.alpha_floor;
                let mut a = vec![0.0];
                a.extend((0..n).map(|i| floor + (1.0 - floor) * i as f64 / n as f64));
                a.push(1.0);
                Ok(a)
            }
            _ => Err(Error::Config("family needs exactly one of alphas and n_interior".into())),
        }
    }

    pub fn n_structures(&self) -> Result<usize> {
        Ok(self.alphas()?.len())
    }

    /// Checks everything that can be checked without solving the model.
    pub fn validate(&self) -> Result<()> {
        let cfg_err = |e: Error| match e {
            Error::Config(_) | Error::ExcludedConfiguration { .. } => e,
            other => Error::Config(other.to_string()),
        };
        self.structure.validate().map_err(cfg_err)?;
        self.features.validate().map_err(cfg_err)?;
        let alphas = self.alphas()?;
        if alphas.len() < 2 || alphas.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Config(format!("alphas must be strictly ascending: {alphas:?}")));
        }
        for &a in &alphas {
            crate::structfam::morph(&self.structure, &self.morph, a).map_err(cfg_err)?;
        }
        let n = alphas.len();
        self.harness.stopping()?;
        self.spec(vec![1, n], Method::Linear).validate()?;
        if let Some(t) = &self.transfer {
            if t.methods.is_empty() || t.chains.is_empty() {
                return Err(Error::Config("transfer needs at least one chain and one method".into()));
            }
            for sel in &t.chains {
                for m in &t.methods {
                    let spec = self.spec(self.resolve_chain(sel)?, *m);
                    spec.validate()?;
                    if let SubspaceDim::Fixed(d) = spec.subspace_dim {
                        if *m == Method::Gfk && 2 * d > self.feature_width() {
                            return Err(Error::Config(format!(
                                "subspace_dim = {d} exceeds half the feature width {} for gfk",
                                self.feature_width()
                            )));
                        }
                    }
                }
            }
        }
        if let Some(s) = &self.search {
            if s.methods.is_empty() || s.k_values.is_empty() || s.n_chains == 0 || s.n_realisations == 0 {
                return Err(Error::Config("search needs methods, k_values, n_chains ≥ 1 and n_realisations ≥ 1".into()));
            }
            if let Some(k) = s.k_values.iter().find(|&&k| k > n - 2) {
                return Err(Error::Config(format!("k = {k} exceeds the {} intermediates", n - 2)));
            }
        }
        Ok(())
    }

    fn feature_width(&self) -> usize {
        match &self.features {
            FeatureConfig::Frequency { n_modes, .. } => *n_modes,
            FeatureConfig::Frf { n_points, .. } => *n_points,
        }
    }

    pub fn resolve_chain(&self, sel: &ChainSelection) -> Result<Vec<usize>> {
        let n = self.n_structures()?;
        let idx = match sel {
            ChainSelection::Indices(v) => v.clone(),
            ChainSelection::Named(name) if name == "direct" => vec![1, n],
            ChainSelection::Named(name) if name == "all" => (1..=n).collect(),
            ChainSelection::Named(name) => {
                return Err(Error::Config(format!("unknown chain `{name}`; use indices, \"direct\" or \"all\"")))
            }
        };
        if idx.first() != Some(&1) || idx.last() != Some(&n) {
            return Err(Error::Config(format!(
                "chain {idx:?} must start at 1 and end at {n}"
            )));
        }
        Ok(idx)
    }

    pub fn spec(&self, structure_indices: Vec<usize>, method: Method) -> ChainSpec {
        ChainSpec {
            structure_indices,
            method,
            subspace_dim: self.chain.subspace_dim,
            aligner: self.chain.aligner,
            labelled_healthy_fraction: self.chain.labelled_healthy_fraction,
            svm_c: self.chain.svm_c,
            pseudo_label_margin: self.chain.pseudo_label_margin,
        }
    }

    pub fn transfer_specs(&self) -> Result<Vec<ChainSpec>> {
        let t = self
            .transfer
            .as_ref()
            .ok_or_else(|| Error::Config("config has no [transfer] block".into()))?;
        let mut specs = Vec::new();
        for sel in &t.chains {
            let idx = self.resolve_chain(sel)?;
            for &m in &t.methods {
                specs.push(self.spec(idx.clone(), m));
            }
        }
        Ok(specs)
    }

    pub fn template(&self) -> Result<ChainTemplate> {
        build_templates(&self.structure, &self.morph, &self.damage, &self.alphas()?, &self.features)
    }
}
