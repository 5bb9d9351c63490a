//! Sequential transfer along a chain of domains.
//!
//! Each hop treats domain `h` (true labels for the source, pseudo-labels
//! afterwards) as the labelled side and domain `h+1` as the target. Samples
//! whose healthy label is known keep it at every hop.

use std::collections::{BTreeMap, HashSet};

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::align::{nca_apply, nca_fit, wrms_normalise, WrmsConfig};
use crate::classify::{svm_predict, svm_train};
use crate::dataset::{class_name, DomainDataset, Label, HEALTHY};
use crate::error::{Error, Result};
use crate::gfk::{build_kernel, embed};
use crate::seed::{rng_for, stream};
use crate::structfam::ChainTemplate;
use crate::subspace::{dimension_for_variance, fit_pca, leading_cosine, pca_variances, Subspace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Linear,
    Gfk,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Linear => "linear",
            Method::Gfk => "gfk",
        }
    }
}

/// Subspace dimension: explicit, or the smallest count explaining a variance
/// fraction of the source data, capped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum SubspaceDim {
    Fixed(usize),
    Variance { variance_threshold: f64, cap: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aligner {
    /// Per-domain standardisation on the labelled healthy samples.
    Nca,
    /// Weighted-RMS normalisation of each row.
    Wrms(WrmsConfig),
    None,
}

fn default_c() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainSpec {
    /// Strictly ascending; first is the source, last the target.
    pub structure_indices: Vec<usize>,
    pub method: Method,
    pub subspace_dim: SubspaceDim,
    pub aligner: Aligner,
    pub labelled_healthy_fraction: f64,
    #[serde(default = "default_c")]
    pub svm_c: f64,
    /// When set, pseudo-labels whose decision margin falls below this value
    /// are not used to train the next hop.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pseudo_label_margin: Option<f64>,
}

impl ChainSpec {
    pub fn n_intermediates(&self) -> usize {
        self.structure_indices.len().saturating_sub(2)
    }

    pub fn validate(&self) -> Result<()> {
        let idx = &self.structure_indices;
        if idx.len() < 2 {
            return Err(Error::Config("a chain needs a source and a target".into()));
        }
        if idx.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "chain indices must be strictly ascending: {}",
                chain_notation(idx)
            )));
        }
        if !(0.0..=1.0).contains(&self.labelled_healthy_fraction) {
            return Err(Error::Config(format!(
                "labelled_healthy_fraction = {} outside [0, 1]",
                self.labelled_healthy_fraction
            )));
        }
        if !(self.svm_c > 0.0) || !self.svm_c.is_finite() {
            return Err(Error::Config(format!("svm_c = {} must be positive", self.svm_c)));
        }
        match self.subspace_dim {
            SubspaceDim::Fixed(0) => return Err(Error::Config("subspace_dim must be ≥ 1".into())),
            SubspaceDim::Variance { variance_threshold, cap } => {
                if !(variance_threshold > 0.0 && variance_threshold <= 1.0) || cap == 0 {
                    return Err(Error::Config(format!(
                        "variance_threshold = {variance_threshold} must lie in (0, 1] and cap ≥ 1"
                    )));
                }
            }
            SubspaceDim::Fixed(_) => {}
        }
        if let Aligner::Wrms(cfg) = &self.aligner {
            cfg.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        if let Some(m) = self.pseudo_label_margin {
            if !(m >= 0.0) {
                return Err(Error::Config(format!("pseudo_label_margin = {m} must be ≥ 0")));
            }
        }
        Ok(())
    }

    /// The subspace dimension for data of width `ambient` whose source domain
    /// is `source` (already aligned).
    pub fn resolve_dim(&self, source: &DMatrix<f64>) -> Result<usize> {
        let ambient = source.ncols();
        let d = match self.subspace_dim {
            SubspaceDim::Fixed(d) => {
                if self.method == Method::Gfk && 2 * d > ambient {
                    return Err(Error::UnsupportedDimension { d, ambient });
                }
                d
            }
            SubspaceDim::Variance {
                variance_threshold,
                cap,
            } => {
                let d = dimension_for_variance(&pca_variances(source)?, variance_threshold).min(cap);
                if self.method == Method::Gfk {
                    d.min(ambient / 2).max(1)
                } else {
                    d
                }
            }
        };
        Ok(d)
    }
}

/// Table-style chain notation, e.g. `[1 4 12 13 18]`.
pub fn chain_notation(indices: &[usize]) -> String {
    let parts: Vec<String> = indices.iter().map(|i| i.to_string()).collect();
    format!("[{}]", parts.join(" "))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HopRecord {
    pub source_index: usize,
    pub target_index: usize,
    pub cosine_to_target: f64,
    pub cosine_to_origin: f64,
    /// Predicted labels over all target samples, by class name.
    pub pseudo_label_counts: BTreeMap<String, usize>,
    pub classifier_collapsed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HopOutcome {
    pub labels: Vec<Label>,
    /// Winning minus runner-up decision value; infinite for fixed labels and
    /// for the constant fallback.
    pub margins: Vec<f64>,
    pub record: HopRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainResult {
    /// Fraction of unlabelled target samples classified correctly.
    pub final_accuracy: f64,
    /// Row = true class, column = predicted class, both in `classes` order;
    /// unlabelled target samples only.
    pub confusion: Vec<Vec<u64>>,
    pub classes: Vec<Label>,
    pub hops: Vec<HopRecord>,
    pub realisation_seed: u64,
}

impl ChainResult {
    pub fn n_unlabelled(&self) -> u64 {
        self.confusion.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..self.classes.len()).map(|i| self.confusion[i][i]).sum()
    }
}

/// Applies the chain's aligner to every domain. NCA is fitted separately on
/// each domain's labelled healthy samples.
pub fn align_domains(data: &[DomainDataset], aligner: &Aligner) -> Result<Vec<DMatrix<f64>>> {
    data.iter()
        .map(|ds| match aligner {
            Aligner::Nca => {
                let rows = ds.labelled_healthy();
                if rows.len() < 2 {
                    return Err(Error::Input(format!(
                        "structure {} has {} labelled healthy samples; alignment needs 2",
                        ds.meta.structure_index,
                        rows.len()
                    )));
                }
                let t = nca_fit(&ds.features.select_rows(rows.iter()))?;
                nca_apply(&t, &ds.features)
            }
            Aligner::Wrms(cfg) => wrms_normalise(cfg, &ds.features),
            Aligner::None => Ok(ds.features.clone()),
        })
        .collect()
}

fn count_labels(labels: &[Label]) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    for &l in labels {
        *counts.entry(class_name(l)).or_insert(0) += 1;
    }
    counts
}

fn majority(labels: &[Label]) -> Label {
    let mut counts: BTreeMap<Label, usize> = BTreeMap::new();
    for &l in labels {
        *counts.entry(l).or_insert(0) += 1;
    }
    // Ties go to the smallest label.
    counts
        .iter()
        .fold((HEALTHY, 0), |best, (&l, &c)| if c > best.1 { (l, c) } else { best })
        .0
}

fn leading(data: &DMatrix<f64>) -> Result<Subspace> {
    fit_pca(data, 1)
}

/// One transfer step on aligned features.
///
/// `source_labels` are the true or pseudo labels of the source rows;
/// `target_fixed` marks target rows whose healthy label is known.
pub fn run_hop(
    source: &DMatrix<f64>,
    source_labels: &[Label],
    target: &DMatrix<f64>,
    target_fixed: &[bool],
    spec: &ChainSpec,
    d: usize,
) -> Result<HopOutcome> {
    if source.ncols() != target.ncols() {
        return Err(Error::Dimension(format!(
            "source has {} features, target {}",
            source.ncols(),
            target.ncols()
        )));
    }
    if source_labels.len() != source.nrows() || target_fixed.len() != target.nrows() {
        return Err(Error::Dimension("labels or mask do not match the data".into()));
    }
    let (train, test) = match spec.method {
        Method::Linear => {
            let s = fit_pca(source, d)?;
            (s.project(source)?, s.project(target)?)
        }
        Method::Gfk => {
            let k = build_kernel(&fit_pca(source, d)?, &fit_pca(target, d)?)?;
            (embed(&k, source)?, embed(&k, target)?)
        }
    };
    let (mut labels, mut margins) = match svm_train(&train, source_labels, spec.svm_c) {
        Ok(model) => {
            let p = svm_predict(&model, &test)?;
            let margins = (0..target.nrows()).map(|i| p.margin(i)).collect();
            (p.labels, margins)
        }
        Err(Error::DegenerateTraining(_)) => (
            vec![majority(source_labels); target.nrows()],
            vec![f64::INFINITY; target.nrows()],
        ),
        Err(e) => return Err(e),
    };
    for (i, &fixed) in target_fixed.iter().enumerate() {
        if fixed {
            labels[i] = HEALTHY;
            margins[i] = f64::INFINITY;
        }
    }
    let mut free = (0..labels.len()).filter(|&i| !target_fixed[i]).map(|i| labels[i]);
    let collapsed = match free.next() {
        Some(first) => free.all(|l| l == first),
        None => false,
    };
    let cosine = leading_cosine(&leading(source)?, &leading(target)?)?;
    Ok(HopOutcome {
        record: HopRecord {
            source_index: 0,
            target_index: 0,
            cosine_to_target: cosine,
            cosine_to_origin: cosine,
            pseudo_label_counts: count_labels(&labels),
            classifier_collapsed: collapsed,
        },
        labels,
        margins,
    })
}

/// Runs every hop of a chain and scores the final target.
///
/// The first dataset is the fully labelled source; every other dataset carries
/// its labelled-healthy mask and its true labels, which are only used for
/// scoring.
pub fn propagate(chain_data: &[DomainDataset], spec: &ChainSpec) -> Result<ChainResult> {
    spec.validate()?;
    if chain_data.len() != spec.structure_indices.len() {
        return Err(Error::Input(format!(
            "chain {} needs {} datasets, got {}",
            chain_notation(&spec.structure_indices),
            spec.structure_indices.len(),
            chain_data.len()
        )));
    }
    for (ds, &idx) in chain_data.iter().zip(&spec.structure_indices) {
        if ds.meta.structure_index != idx {
            return Err(Error::Input(format!(
                "dataset for structure {} found where {idx} was expected",
                ds.meta.structure_index
            )));
        }
    }
    let aligned = align_domains(chain_data, &spec.aligner)?;
    let d = spec.resolve_dim(&aligned[0])?;
    let origin = leading(&aligned[0])?;

    let mut source = aligned[0].clone();
    let mut source_labels = chain_data[0].labels.clone();
    let mut hops = Vec::with_capacity(chain_data.len() - 1);
    let mut last = Vec::new();
    for h in 1..chain_data.len() {
        let target = &chain_data[h];
        let mut out = run_hop(&source, &source_labels, &aligned[h], &target.labelled, spec, d)?;
        out.record.source_index = chain_data[h - 1].meta.structure_index;
        out.record.target_index = target.meta.structure_index;
        out.record.cosine_to_origin = leading_cosine(&origin, &leading(&aligned[h])?)?;
        hops.push(out.record);

        let keep: Vec<usize> = match spec.pseudo_label_margin {
            Some(m) => (0..target.n_samples()).filter(|&i| out.margins[i] >= m).collect(),
            None => (0..target.n_samples()).collect(),
        };
        source = aligned[h].select_rows(keep.iter());
        source_labels = keep.iter().map(|&i| out.labels[i]).collect();
        last = out.labels;
    }

    let target = &chain_data[chain_data.len() - 1];
    score(target, &last, hops)
}

fn score(target: &DomainDataset, predicted: &[Label], hops: Vec<HopRecord>) -> Result<ChainResult> {
    let mut classes: Vec<Label> = target.labels.iter().chain(predicted).copied().collect();
    classes.sort_unstable();
    classes.dedup();
    let pos = |l: Label| classes.binary_search(&l).expect("label collected above");
    let mut confusion = vec![vec![0u64; classes.len()]; classes.len()];
    for i in (0..target.n_samples()).filter(|&i| !target.labelled[i]) {
        confusion[pos(target.labels[i])][pos(predicted[i])] += 1;
    }
    let total: u64 = confusion.iter().flatten().sum();
    if total == 0 {
        return Err(Error::Input("target has no unlabelled samples to score".into()));
    }
    let correct: u64 = (0..classes.len()).map(|i| confusion[i][i]).sum();
    Ok(ChainResult {
        final_accuracy: correct as f64 / total as f64,
        confusion,
        classes,
        hops,
        realisation_seed: 0,
    })
}

/// Scores a fixed prediction for every unlabelled target sample; used to
/// reason about collapsed classifiers.
pub fn score_predictions(target: &DomainDataset, predicted: &[Label]) -> Result<ChainResult> {
    if predicted.len() != target.n_samples() {
        return Err(Error::Dimension(format!(
            "{} predictions for {} samples",
            predicted.len(),
            target.n_samples()
        )));
    }
    score(target, predicted, Vec::new())
}

fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc.saturating_mul((n - i) as u128) / (i + 1) as u128)
}

fn all_subsets(pool: &[usize], k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut pick: Vec<usize> = (0..k).collect();
    loop {
        out.push(pick.iter().map(|&i| pool[i]).collect());
        let Some(i) = (0..k).rev().find(|&i| pick[i] < pool.len() - k + i) else {
            return out;
        };
        pick[i] += 1;
        for j in i + 1..k {
            pick[j] = pick[j - 1] + 1;
        }
    }
}

/// Candidate chains with `k` intermediates drawn from `pool`: every subset
/// when there are at most `n_chains`, otherwise `n_chains` distinct subsets
/// sampled uniformly. Each is returned as source, sorted subset, target.
pub fn enumerate_chains(
    source: usize,
    target: usize,
    pool: &[usize],
    k: usize,
    n_chains: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    if k > pool.len() {
        return Err(Error::Input(format!(
            "cannot pick {k} intermediates from a pool of {}",
            pool.len()
        )));
    }
    let mut pool = pool.to_vec();
    pool.sort_unstable();
    pool.dedup();
    if pool.iter().any(|&p| p <= source || p >= target) {
        return Err(Error::Input(format!(
            "intermediates must lie strictly between {source} and {target}"
        )));
    }
    let wrap = |subset: Vec<usize>| {
        let mut c = Vec::with_capacity(subset.len() + 2);
        c.push(source);
        c.extend(subset);
        c.push(target);
        c
    };
    if binomial(pool.len(), k) <= n_chains as u128 {
        return Ok(all_subsets(&pool, k).into_iter().map(wrap).collect());
    }
    let mut rng = rng_for(seed, &[stream::CHAINS, k as u64]);
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(n_chains);
    while out.len() < n_chains {
        let mut subset: Vec<usize> = sample(&mut rng, pool.len(), k).into_iter().map(|i| pool[i]).collect();
        subset.sort_unstable();
        if seen.insert(subset.clone()) {
            out.push(wrap(subset));
        }
    }
    Ok(out)
}

/// Evaluates a chain on realisations `first..first + count` drawn from the
/// template with `master_seed`. Realisations run in parallel and come back in
/// index order.
pub fn evaluate_chain(
    template: &ChainTemplate,
    spec: &ChainSpec,
    channel: usize,
    master_seed: u64,
    first: u64,
    count: u64,
) -> Result<Vec<ChainResult>> {
    spec.validate()?;
    (first..first + count)
        .into_par_iter()
        .map(|r| {
            let data = template.realise(
                &spec.structure_indices,
                channel,
                master_seed,
                r,
                spec.labelled_healthy_fraction,
            )?;
            let mut result = propagate(&data, spec)?;
            result.realisation_seed = r;
            Ok(result)
        })
        .collect()
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    // Offsets from the first value keep a constant stream at exactly zero
    // spread.
    let shift = values[0];
    let offset = values.iter().map(|v| v - shift).sum::<f64>() / n as f64;
    let mean = shift + offset;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - shift - offset).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Best chain found for one number of intermediates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchRow {
    pub k: usize,
    pub method: Method,
    pub chain: Vec<usize>,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub n_realisations: usize,
    pub n_candidates: usize,
    /// Every subset of the pool was evaluated.
    pub exhaustive: bool,
}

/// For each `k`, evaluates candidate chains over `n_realisations` noise and
/// mask draws and keeps the one with the highest mean accuracy (ties: lower
/// std, then lexicographic index order). The selection uses target labels.
pub fn search_chains(
    template: &ChainTemplate,
    spec: &ChainSpec,
    channel: usize,
    k_values: &[usize],
    n_chains: usize,
    n_realisations: usize,
    seed: u64,
) -> Result<Vec<SearchRow>> {
    let source = template.source_index();
    let target = template.target_index();
    let pool: Vec<usize> = template
        .indices()
        .into_iter()
        .filter(|&i| i != source && i != target)
        .collect();
    let mut rows = Vec::with_capacity(k_values.len());
    for &k in k_values {
        let candidates = enumerate_chains(source, target, &pool, k, n_chains, seed)?;
        let exhaustive = binomial(pool.len(), k) <= n_chains as u128;
        let mut best: Option<(Vec<usize>, f64, f64)> = None;
        for chain in &candidates {
            let candidate = ChainSpec {
                structure_indices: chain.clone(),
                ..spec.clone()
            };
            let accs: Vec<f64> = evaluate_chain(template, &candidate, channel, seed, 0, n_realisations as u64)?
                .iter()
                .map(|r| r.final_accuracy)
                .collect();
            let (mean, std) = mean_std(&accs);
            let better = match &best {
                None => true,
                Some((c, m, s)) => {
                    mean > *m || (mean == *m && (std < *s || (std == *s && chain < c)))
                }
            };
            if better {
                best = Some((chain.clone(), mean, std));
            }
        }
        let (chain, accuracy_mean, accuracy_std) = best.expect("at least one candidate");
        rows.push(SearchRow {
            k,
            method: spec.method,
            chain,
            accuracy_mean,
            accuracy_std,
            n_realisations,
            n_candidates: candidates.len(),
            exhaustive,
        });
    }
    Ok(rows)
}
