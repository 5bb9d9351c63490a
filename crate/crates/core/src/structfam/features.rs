use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::beam::{assemble, solve_modes};
use super::family::{apply_damage, morph, DamageSpec, MorphSpec, StructureParams};
use crate::dataset::{DatasetMeta, DomainDataset, FeatureKind, Label, HEALTHY};
use crate::error::{Error, Result};
use crate::seed::{rng_for, stream};

/// Which features a structure emits and how they are replicated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FeatureConfig {
    /// The first `n_modes` natural frequencies, each replicate perturbed by
    /// Gaussian noise with σ = `noise_frac` × clean value.
    Frequency {
        n_modes: usize,
        noise_frac: f64,
        n_reps: usize,
    },
    /// Receptance FRF magnitudes at each sensor for a drive point, on a
    /// uniform grid over `band` (Hz), with additive noise at `snr_db`.
    Frf {
        sensors: Vec<f64>,
        drive: f64,
        band: [f64; 2],
        n_points: usize,
        snr_db: f64,
        n_reps: usize,
    },
}

impl FeatureConfig {
    pub fn n_reps(&self) -> usize {
        match self {
            FeatureConfig::Frequency { n_reps, .. } | FeatureConfig::Frf { n_reps, .. } => *n_reps,
        }
    }

    pub fn n_channels(&self) -> usize {
        match self {
            FeatureConfig::Frequency { .. } => 1,
            FeatureConfig::Frf { sensors, .. } => sensors.len(),
        }
    }

    pub fn kind(&self) -> FeatureKind {
        match self {
            FeatureConfig::Frequency { .. } => FeatureKind::Frequency,
            FeatureConfig::Frf { .. } => FeatureKind::Frf,
        }
    }

    /// Sensor id (1-based) of a channel, `None` for frequency features.
    pub fn sensor_id(&self, channel: usize) -> Option<usize> {
        match self {
            FeatureConfig::Frequency { .. } => None,
            FeatureConfig::Frf { .. } => Some(channel + 1),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            FeatureConfig::Frequency {
                n_modes,
                noise_frac,
                n_reps,
            } => {
                if *n_modes == 0 || *n_reps == 0 || !(*noise_frac >= 0.0) {
                    return Err(Error::Input(format!("invalid frequency features: {self:?}")));
                }
            }
            FeatureConfig::Frf {
                sensors,
                drive,
                band,
                n_points,
                snr_db,
                n_reps,
            } => {
                let unit = |x: f64| (0.0..=1.0).contains(&x);
                if sensors.is_empty()
                    || !sensors.iter().all(|&s| unit(s))
                    || !unit(*drive)
                    || *n_points < 8
                    || *n_reps == 0
                    || !(band[0] >= 0.0 && band[1] > band[0])
                    || !snr_db.is_finite()
                {
                    return Err(Error::Input(format!("invalid FRF features: {self:?}")));
                }
            }
        }
        Ok(())
    }
}

fn frequencies_of(params: &StructureParams, n_modes: usize) -> Result<Vec<f64>> {
    let (k, m) = assemble(params)?;
    Ok(solve_modes(&k, &m, n_modes)?.frequencies)
}

/// Receptance magnitudes `|H(ω)|` at each sensor for a unit force at `drive`,
/// by modal superposition over every mode below twice the band's upper edge.
pub fn frf_magnitudes(
    params: &StructureParams,
    sensors: &[f64],
    drive: f64,
    band: [f64; 2],
    n_points: usize,
) -> Result<Vec<DVector<f64>>> {
    if n_points < 8 {
        return Err(Error::Input(format!("n_points = {n_points} must be at least 8")));
    }
    if !(band[0] >= 0.0 && band[1] > band[0]) {
        return Err(Error::Input(format!("invalid band {band:?}")));
    }
    let (k, m) = assemble(params)?;
    let modes = solve_modes(&k, &m, k.nrows())?;
    let needed = 2.0 * band[1];
    let available = *modes.frequencies.last().unwrap_or(&0.0);
    if available < needed {
        return Err(Error::Coverage {
            f_hi: band[1],
            needed,
            available,
        });
    }
    let used: Vec<usize> = (0..modes.frequencies.len())
        .filter(|&r| modes.frequencies[r] <= needed)
        .collect();
    let zeta = params.damping_ratio;
    let drive_dof = 2 * params.nearest_node(drive);
    let grid: Vec<f64> = (0..n_points)
        .map(|i| band[0] + (band[1] - band[0]) * i as f64 / (n_points - 1) as f64)
        .collect();

    let mut out = Vec::with_capacity(sensors.len());
    for &s in sensors {
        let dof = 2 * params.nearest_node(s);
        let mut mags = DVector::zeros(n_points);
        for (p, f) in grid.iter().enumerate() {
            let w = 2.0 * PI * f;
            let (mut re, mut im) = (0.0, 0.0);
            for &r in &used {
                let wr = 2.0 * PI * modes.frequencies[r];
                let a = wr * wr - w * w;
                let b = 2.0 * zeta * wr * w;
                let den = a * a + b * b;
                if den == 0.0 {
                    return Err(Error::Input("undamped rigid-body mode in FRF band".into()));
                }
                let num = modes.shapes[(dof, r)] * modes.shapes[(drive_dof, r)];
                re += num * a / den;
                im -= num * b / den;
            }
            mags[p] = re.hypot(im);
        }
        out.push(mags);
    }
    Ok(out)
}

/// Noise-free feature vector of each channel.
pub fn clean_features(params: &StructureParams, cfg: &FeatureConfig) -> Result<Vec<DVector<f64>>> {
    cfg.validate()?;
    match cfg {
        FeatureConfig::Frequency { n_modes, .. } => {
            Ok(vec![DVector::from_vec(frequencies_of(params, *n_modes)?)])
        }
        FeatureConfig::Frf {
            sensors,
            drive,
            band,
            n_points,
            ..
        } => frf_magnitudes(params, sensors, *drive, *band, *n_points),
    }
}

/// Replicates a clean feature vector with the configured noise model.
fn replicate<R: Rng + ?Sized>(clean: &DVector<f64>, cfg: &FeatureConfig, rng: &mut R) -> DMatrix<f64> {
    let n_reps = cfg.n_reps();
    let dim = clean.len();
    match cfg {
        FeatureConfig::Frequency { noise_frac, .. } => DMatrix::from_fn(n_reps, dim, |_, j| {
            let z: f64 = rng.sample(StandardNormal);
            clean[j] + noise_frac * clean[j] * z
        }),
        FeatureConfig::Frf { snr_db, .. } => {
            let power = clean.norm_squared() / dim as f64;
            let sigma = (power / 10f64.powf(snr_db / 10.0)).sqrt();
            DMatrix::from_fn(n_reps, dim, |_, j| {
                let z: f64 = rng.sample(StandardNormal);
                (clean[j] + sigma * z).abs()
            })
        }
    }
}

/// Natural-frequency dataset of one class: `n_reps` noisy replicates of the
/// first `n_modes` frequencies. Every sample starts unlabelled.
pub fn frequency_features(
    params: &StructureParams,
    n_modes: usize,
    n_reps: usize,
    noise_frac: f64,
    seed: u64,
    label: Label,
    structure_index: usize,
) -> Result<DomainDataset> {
    let cfg = FeatureConfig::Frequency {
        n_modes,
        noise_frac,
        n_reps,
    };
    let clean = clean_features(params, &cfg)?;
    let mut rng = rng_for(seed, &[stream::NOISE]);
    let features = replicate(&clean[0], &cfg, &mut rng);
    DomainDataset::new(
        features,
        vec![label; n_reps],
        vec![false; n_reps],
        DatasetMeta {
            structure_index,
            kind: FeatureKind::Frequency,
            sensor: None,
        },
    )
}

/// FRF datasets of one class, one per sensor.
#[allow(clippy::too_many_arguments)]
pub fn frf_features(
    params: &StructureParams,
    sensors: &[f64],
    drive: f64,
    band: [f64; 2],
    n_points: usize,
    n_reps: usize,
    noise_snr_db: f64,
    seed: u64,
    label: Label,
    structure_index: usize,
) -> Result<Vec<DomainDataset>> {
    let cfg = FeatureConfig::Frf {
        sensors: sensors.to_vec(),
        drive,
        band,
        n_points,
        snr_db: noise_snr_db,
        n_reps,
    };
    let clean = clean_features(params, &cfg)?;
    clean
        .iter()
        .enumerate()
        .map(|(ch, c)| {
            let mut rng = rng_for(seed, &[stream::NOISE, ch as u64]);
            DomainDataset::new(
                replicate(c, &cfg, &mut rng),
                vec![label; n_reps],
                vec![false; n_reps],
                DatasetMeta {
                    structure_index,
                    kind: FeatureKind::Frf,
                    sensor: Some(ch + 1),
                },
            )
        })
        .collect()
}

/// One condition of one structure with its noise-free features.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassTemplate {
    pub label: Label,
    pub params: StructureParams,
    /// One clean vector per channel.
    pub clean: Vec<DVector<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StructureTemplate {
    /// 1-based position in the family; 1 is the source.
    pub index: usize,
    pub alpha: f64,
    pub classes: Vec<ClassTemplate>,
}

/// Noise-free description of a whole structure family, from which any number
/// of noisy realisations can be drawn.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainTemplate {
    pub structures: Vec<StructureTemplate>,
    pub features: FeatureConfig,
}

impl ChainTemplate {
    pub fn n_channels(&self) -> usize {
        self.features.n_channels()
    }

    pub fn indices(&self) -> Vec<usize> {
        self.structures.iter().map(|s| s.index).collect()
    }

    pub fn source_index(&self) -> usize {
        self.structures[0].index
    }

    pub fn target_index(&self) -> usize {
        self.structures[self.structures.len() - 1].index
    }

    pub fn structure(&self, index: usize) -> Result<&StructureTemplate> {
        self.structures
            .iter()
            .find(|s| s.index == index)
            .ok_or_else(|| Error::Input(format!("no structure with index {index}")))
    }

    /// Draws realisation `realisation` of one structure on one channel.
    ///
    /// Noise for class `c` is keyed by (master, realisation, structure, class,
    /// channel), the labelled-healthy mask by (master, realisation, structure),
    /// so the same structure gets the same data in every chain. The source
    /// structure is fully labelled; elsewhere a `labelled_fraction` of the
    /// healthy samples is labelled.
    pub fn realise_structure(
        &self,
        index: usize,
        channel: usize,
        master_seed: u64,
        realisation: u64,
        labelled_fraction: f64,
    ) -> Result<DomainDataset> {
        let s = self.structure(index)?;
        let meta = DatasetMeta {
            structure_index: s.index,
            kind: self.features.kind(),
            sensor: self.features.sensor_id(channel),
        };
        let mut parts = Vec::with_capacity(s.classes.len());
        for class in &s.classes {
            let clean = class.clean.get(channel).ok_or_else(|| {
                Error::Input(format!("channel {channel} out of range"))
            })?;
            let mut rng = rng_for(
                master_seed,
                &[
                    stream::NOISE,
                    realisation,
                    s.index as u64,
                    class.label as u64,
                    channel as u64,
                ],
            );
            let features = replicate(clean, &self.features, &mut rng);
            let n = features.nrows();
            parts.push(DomainDataset::new(
                features,
                vec![class.label; n],
                vec![false; n],
                meta.clone(),
            )?);
        }
        let mut ds = DomainDataset::stack(&parts)?;
        if s.index == self.source_index() {
            ds.labelled.iter_mut().for_each(|l| *l = true);
        } else {
            let healthy: Vec<usize> = (0..ds.n_samples())
                .filter(|&i| ds.labels[i] == HEALTHY)
                .collect();
            let count = ((labelled_fraction * healthy.len() as f64).round() as usize).min(healthy.len());
            let mut rng = rng_for(master_seed, &[stream::MASK, realisation, s.index as u64]);
            for pick in sample(&mut rng, healthy.len(), count) {
                ds.labelled[healthy[pick]] = true;
            }
        }
        Ok(ds)
    }

    /// Realises the structures listed in `indices`, in order.
    pub fn realise(
        &self,
        indices: &[usize],
        channel: usize,
        master_seed: u64,
        realisation: u64,
        labelled_fraction: f64,
    ) -> Result<Vec<DomainDataset>> {
        indices
            .iter()
            .map(|&i| self.realise_structure(i, channel, master_seed, realisation, labelled_fraction))
            .collect()
    }
}

/// Builds the noise-free family: one structure per α (source first), with a
/// healthy class and one class per damage spec.
pub fn build_templates(
    base: &StructureParams,
    spec: &MorphSpec,
    damage_specs: &[DamageSpec],
    alphas: &[f64],
    features: &FeatureConfig,
) -> Result<ChainTemplate> {
    features.validate()?;
    if alphas.len() < 2 {
        return Err(Error::Input("a chain needs at least two alphas".into()));
    }
    if alphas.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Input(format!("alphas must be strictly ascending: {alphas:?}")));
    }
    let params = alphas
        .iter()
        .map(|&a| morph(base, spec, a))
        .collect::<Result<Vec<_>>>()?;
    let structures = params
        .par_iter()
        .enumerate()
        .map(|(i, healthy)| {
            let mut variants = vec![(HEALTHY, healthy.clone())];
            for (k, d) in damage_specs.iter().enumerate() {
                variants.push((k + 1, apply_damage(healthy, d)?));
            }
            let classes = variants
                .into_iter()
                .map(|(label, params)| {
                    let clean = clean_features(&params, features)?;
                    Ok(ClassTemplate { label, params, clean })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(StructureTemplate {
                index: i + 1,
                alpha: alphas[i],
                classes,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ChainTemplate {
        structures,
        features: features.clone(),
    })
}

/// Builds the family and draws its first realisation: for each structure,
/// one dataset per channel with all classes stacked.
pub fn build_chain(
    base: &StructureParams,
    spec: &MorphSpec,
    damage_specs: &[DamageSpec],
    alphas: &[f64],
    features: &FeatureConfig,
    master_seed: u64,
    labelled_fraction: f64,
) -> Result<Vec<Vec<DomainDataset>>> {
    let template = build_templates(base, spec, damage_specs, alphas, features)?;
    template
        .structures
        .iter()
        .map(|s| {
            (0..template.n_channels())
                .map(|ch| template.realise_structure(s.index, ch, master_seed, 0, labelled_fraction))
                .collect()
        })
        .collect()
}
