//! The work behind each CLI subcommand. Every output file is written through
//! a temporary sibling and renamed into place.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::align::{alignment_curve, path_length, AlignmentCurve, PathLengthReport};
use crate::chain::{align_domains, chain_notation, search_chains, Method, SearchRow};
use crate::config::RunConfig;
use crate::dataset::DomainDataset;
use crate::error::{Error, Result};
use crate::harness::{
    curve_csv, run_experiment, to_json, write_experiment, write_file, ExperimentConfig, ExperimentRow,
    SummaryTable, SEARCH_CAVEAT,
};
use crate::structfam::ChainTemplate;

pub const MANIFEST: &str = "manifest.json";
const TRIANGLE_SLACK: f64 = 1e-8;

/// Process exit status for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::ExcludedConfiguration { .. } => 2,
        Error::Data(_) => 3,
        _ => 1,
    }
}

pub const EXIT_NOT_CONVERGED: i32 = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestFile {
    pub structure_index: usize,
    pub alpha: f64,
    pub channel: String,
    pub path: String,
    pub n_samples: usize,
    pub n_features: usize,
}

/// Record of a `generate` run: library version, seed, every file written and
/// the full configuration that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub seed: u64,
    pub alphas: Vec<f64>,
    pub files: Vec<ManifestFile>,
    pub config: RunConfig,
}

impl Manifest {
    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| {
            Error::Data(format!("cannot read {} (run `generate` first): {e}", path.display()))
        })?;
        serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
    }

    /// Fails unless the datasets were generated from the same family,
    /// features and seed as `cfg`.
    pub fn check_matches(&self, cfg: &RunConfig) -> Result<()> {
        let g = &self.config;
        if g.seed != cfg.seed
            || g.structure != cfg.structure
            || g.morph != cfg.morph
            || g.damage != cfg.damage
            || g.family != cfg.family
            || g.features != cfg.features
        {
            return Err(Error::Data(
                "datasets on disk were generated from a different family, feature block or seed; rerun `generate`"
                    .into(),
            ));
        }
        Ok(())
    }
}

fn channel_tag(template: &ChainTemplate, channel: usize) -> String {
    match template.features.sensor_id(channel) {
        Some(s) => format!("sensor{s}"),
        None => "freq".to_string(),
    }
}

pub fn dataset_file_name(structure_index: usize, channel: &str) -> String {
    format!("s{structure_index:03}_{channel}.csv")
}

/// Writes realisation 0 of every structure and channel plus the manifest.
pub fn cmd_generate(cfg: &RunConfig) -> Result<Manifest> {
    let template = cfg.template()?;
    let dir = &cfg.out_dir;
    let mut files = Vec::new();
    for s in &template.structures {
        for ch in 0..template.n_channels() {
            let ds = template.realise_structure(s.index, ch, cfg.seed, 0, cfg.chain.labelled_healthy_fraction)?;
            let tag = channel_tag(&template, ch);
            let name = dataset_file_name(s.index, &tag);
            write_file(&dir.join(&name), &ds.to_csv())?;
            files.push(ManifestFile {
                structure_index: s.index,
                alpha: s.alpha,
                channel: tag,
                path: name,
                n_samples: ds.n_samples(),
                n_features: ds.dim(),
            });
        }
    }
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.seed,
        alphas: cfg.alphas()?,
        files,
        config: cfg.clone(),
    };
    write_file(&dir.join(MANIFEST), &to_json(&manifest)?)?;
    Ok(manifest)
}

fn load_channel(dir: &Path, manifest: &Manifest, channel: &str) -> Result<Vec<DomainDataset>> {
    let cfg = &manifest.config;
    let kind = cfg.features.kind();
    let mut entries: Vec<&ManifestFile> = manifest.files.iter().filter(|f| f.channel == channel).collect();
    entries.sort_by_key(|f| f.structure_index);
    entries
        .iter()
        .map(|f| {
            let path = dir.join(&f.path);
            let text = fs::read_to_string(&path)
                .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
            let sensor = channel.strip_prefix("sensor").and_then(|s| s.parse().ok());
            let ds = DomainDataset::from_csv(&text, kind, sensor)
                .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
            if ds.meta.structure_index != f.structure_index {
                return Err(Error::Data(format!(
                    "{} holds structure {}, manifest says {}",
                    path.display(),
                    ds.meta.structure_index,
                    f.structure_index
                )));
            }
            Ok(ds)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnosis {
    pub channel: String,
    pub subspace_dim: usize,
    pub curve: AlignmentCurve,
    pub path_length: PathLengthReport,
    pub triangle_holds: bool,
}

/// Cosine curves and Gaussian path length of the full generated chain, after
/// the configured alignment.
pub fn cmd_diagnose(cfg: &RunConfig) -> Result<Vec<Diagnosis>> {
    let dir = &cfg.out_dir;
    let manifest = Manifest::read(dir)?;
    manifest.check_matches(cfg)?;
    let mut channels: Vec<String> = Vec::new();
    for f in &manifest.files {
        if !channels.contains(&f.channel) {
            channels.push(f.channel.clone());
        }
    }
    let mut out = Vec::new();
    for channel in channels {
        let data = load_channel(dir, &manifest, &channel)?;
        let aligned = align_domains(&data, &cfg.chain.aligner)?;
        let spec = cfg.spec(data.iter().map(|d| d.meta.structure_index).collect(), Method::Linear);
        let d = spec.resolve_dim(&aligned[0])?;
        let curve = alignment_curve(&aligned, d)?;
        let report = path_length(&aligned)?;
        let sub = dir.join("diagnose").join(&channel);
        write_file(&sub.join("curve.csv"), &curve_csv(&curve))?;
        write_file(&sub.join("path_length.json"), &to_json(&report)?)?;
        out.push(Diagnosis {
            channel,
            subspace_dim: d,
            triangle_holds: report.triangle_holds(TRIANGLE_SLACK),
            curve,
            path_length: report,
        });
    }
    Ok(out)
}

pub struct TransferOutcome {
    pub rows: Vec<ExperimentRow>,
    pub converged: bool,
}

/// Runs every configured chain and method on every channel through the
/// harness; reports land in `<out>/transfer/<channel>/`.
pub fn cmd_transfer(cfg: &RunConfig) -> Result<TransferOutcome> {
    let manifest = Manifest::read(&cfg.out_dir)?;
    manifest.check_matches(cfg)?;
    let template = cfg.template()?;
    let exp = ExperimentConfig {
        chains: cfg.transfer_specs()?,
        stopping: cfg.harness.stopping()?,
        master_seed: cfg.seed,
        channels: (0..template.n_channels()).collect(),
    };
    let rows = run_experiment(&template, &exp)?;
    for ch in 0..template.n_channels() {
        let subset: Vec<ExperimentRow> = rows.iter().filter(|r| r.channel == ch).cloned().collect();
        write_experiment(&cfg.out_dir.join("transfer").join(channel_tag(&template, ch)), &subset)?;
    }
    let converged = rows.iter().all(|r| r.converged);
    Ok(TransferOutcome { rows, converged })
}

pub struct SearchOutcome {
    /// Search-stage winners per channel, method and k.
    pub best: Vec<(usize, SearchRow)>,
    /// The winners re-run by the harness on fresh realisations.
    pub evaluated: Vec<ExperimentRow>,
    pub converged: bool,
}

fn search_report(rows: &[SearchRow]) -> String {
    let mut out = format!("{SEARCH_CAVEAT}\n\n");
    out += &SummaryTable::from_search(rows).to_text();
    for r in rows.iter().filter(|r| r.exhaustive) {
        out += &format!(
            "k = {} ({}): all {} candidate chains evaluated\n",
            r.k,
            r.method.name(),
            r.n_candidates
        );
    }
    out
}

/// Label-informed chain search per k and method, followed by a harness
/// re-evaluation of each winner with a different seed.
pub fn cmd_search(cfg: &RunConfig) -> Result<SearchOutcome> {
    let s = cfg
        .search
        .as_ref()
        .ok_or_else(|| Error::Config("config has no [search] block".into()))?;
    let manifest = Manifest::read(&cfg.out_dir)?;
    manifest.check_matches(cfg)?;
    let template = cfg.template()?;
    let n = cfg.n_structures()?;
    let mut best = Vec::new();
    let mut evaluated = Vec::new();
    for ch in 0..template.n_channels() {
        let mut rows = Vec::new();
        for &m in &s.methods {
            let base = cfg.spec(vec![1, n], m);
            rows.extend(search_chains(&template, &base, ch, &s.k_values, s.n_chains, s.n_realisations, cfg.seed)?);
        }
        rows.sort_by_key(|r| (r.k, r.method));
        let exp = ExperimentConfig {
            chains: rows.iter().map(|r| cfg.spec(r.chain.clone(), r.method)).collect(),
            stopping: cfg.harness.stopping()?,
            master_seed: cfg.seed,
            channels: vec![ch],
        };
        let eval = run_experiment(&template, &exp)?;

        let dir = cfg.out_dir.join("search").join(channel_tag(&template, ch));
        write_file(&dir.join("search.csv"), &SummaryTable::from_search(&rows).to_csv())?;
        write_file(&dir.join("search.txt"), &search_report(&rows))?;
        write_file(
            &dir.join("search.json"),
            &to_json(&serde_json::json!({ "caveat": SEARCH_CAVEAT, "rows": rows }))?,
        )?;
        write_experiment(&dir.join("evaluation"), &eval)?;
        best.extend(rows.into_iter().map(|r| (ch, r)));
        evaluated.extend(eval);
    }
    let converged = evaluated.iter().all(|r| r.converged);
    Ok(SearchOutcome {
        best,
        evaluated,
        converged,
    })
}

/// One-line description of a search winner.
pub fn describe(row: &SearchRow) -> String {
    format!(
        "k={} {} {} {:.2} ± {:.2} %",
        row.k,
        row.method.name(),
        chain_notation(&row.chain),
        100.0 * row.accuracy_mean,
        100.0 * row.accuracy_std
    )
}
