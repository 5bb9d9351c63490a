//! Statistical pre-alignment of domains and chain diagnostics.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::subspace::{fit_pca, leading_cosine};

/// Per-feature affine normalisation fitted on labelled healthy data.
#[derive(Debug, Clone, PartialEq)]
pub struct NcaTransform {
    pub mean: DVector<f64>,
    pub scale: DVector<f64>,
}

/// Weighted-RMS FRF normalisation parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WrmsConfig {
    /// Weight on the row RMS; `1 − mix` goes to the dataset reference RMS.
    pub mix: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

fn default_epsilon() -> f64 {
    1e-12
}

impl WrmsConfig {
    pub fn new(mix: f64, epsilon: f64) -> Result<Self> {
        let cfg = Self { mix, epsilon };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.mix) {
            return Err(Error::Input(format!("mix = {} outside [0, 1]", self.mix)));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Input(format!("epsilon = {} must be positive", self.epsilon)));
        }
        Ok(())
    }
}

/// Gaussian 2-Wasserstein distances along a chain.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathLengthReport {
    pub hop_distances: Vec<f64>,
    pub total: f64,
    pub direct: f64,
}

impl PathLengthReport {
    /// `direct ≤ total` up to a relative slack.
    pub fn triangle_holds(&self, slack: f64) -> bool {
        self.total >= self.direct - slack * self.total.max(1.0)
    }
}

/// Leading-direction cosines along a chain.
///
/// Row `h` pairs domain `h` with domain `h+1`: `to_target[h]` is the cosine
/// between their leading directions, `to_origin[h]` the cosine between domain
/// `h+1` and the original source, so the last entry is the final target.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlignmentCurve {
    pub to_target: Vec<f64>,
    pub to_origin: Vec<f64>,
}

pub fn nca_fit(healthy_labelled: &DMatrix<f64>) -> Result<NcaTransform> {
    let (m, dim) = healthy_labelled.shape();
    if m < 2 {
        return Err(Error::Input(format!(
            "normal-condition alignment needs at least 2 healthy samples, got {m}"
        )));
    }
    let mut mean = DVector::zeros(dim);
    let mut scale = DVector::zeros(dim);
    for (j, col) in healthy_labelled.column_iter().enumerate() {
        // Second pass corrects the rounding of the plain sum.
        let rough = col.sum() / m as f64;
        let mu = rough + col.iter().map(|x| x - rough).sum::<f64>() / m as f64;
        let var = col.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (m as f64 - 1.0);
        if !mu.is_finite() || !var.is_finite() {
            return Err(Error::Input(format!("feature {j} is not finite")));
        }
        if var <= 0.0 {
            return Err(Error::DegenerateFeature { index: j });
        }
        mean[j] = mu;
        scale[j] = var.sqrt();
    }
    Ok(NcaTransform { mean, scale })
}

pub fn nca_apply(t: &NcaTransform, data: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if data.ncols() != t.mean.len() {
        return Err(Error::Dimension(format!(
            "data has {} features, transform has {}",
            data.ncols(),
            t.mean.len()
        )));
    }
    Ok(DMatrix::from_fn(data.nrows(), data.ncols(), |i, j| {
        (data[(i, j)] - t.mean[j]) / t.scale[j]
    }))
}

fn rms<'a>(values: impl Iterator<Item = &'a f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v * v, n + 1));
    (sum / n as f64).sqrt()
}

/// Divides each FRF row by `mix·RMS_row + (1 − mix)·RMS_ref + ε`, with the
/// reference taken over every entry of the matrix.
pub fn wrms_normalise(cfg: &WrmsConfig, frfs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    cfg.validate()?;
    if frfs.is_empty() {
        return Err(Error::Input("empty FRF matrix".into()));
    }
    if frfs.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::Input("FRF magnitudes must be finite and non-negative".into()));
    }
    let reference = rms(frfs.iter());
    let mut out = frfs.clone();
    for mut row in out.row_iter_mut() {
        let denom = cfg.mix * rms(row.iter()) + (1.0 - cfg.mix) * reference + cfg.epsilon;
        row /= denom;
    }
    Ok(out)
}

/// Mixing grid scanned by [`select_mix`].
pub const MIX_GRID_STEPS: usize = 100;
/// Bootstrap resamples per grid point.
pub const BOOTSTRAP_COUNT: usize = 20;

/// Smallest mix on {0.00, 0.01, …, 1.00} whose leading PCA direction is
/// stable under bootstrap resampling (mean |cos| to the full-data direction at
/// least `threshold`). The same resamples are reused at every grid point.
pub fn select_mix<R: Rng + ?Sized>(
    frfs_source: &DMatrix<f64>,
    threshold: f64,
    rng: &mut R,
) -> Result<f64> {
    let n = frfs_source.nrows();
    if n < 10 {
        return Err(Error::Input(format!("mix selection needs at least 10 FRFs, got {n}")));
    }
    let resamples: Vec<Vec<usize>> = (0..BOOTSTRAP_COUNT)
        .map(|_| (0..n).map(|_| rng.random_range(0..n)).collect())
        .collect();
    let mut best = f64::NEG_INFINITY;
    for step in 0..=MIX_GRID_STEPS {
        let mix = step as f64 / MIX_GRID_STEPS as f64;
        let normalised = wrms_normalise(&WrmsConfig { mix, epsilon: default_epsilon() }, frfs_source)?;
        let full = fit_pca(&normalised, 1)?;
        let mut total = 0.0;
        for rows in &resamples {
            let boot = normalised.select_rows(rows.iter());
            total += leading_cosine(&full, &fit_pca(&boot, 1)?)?;
        }
        let mean = total / BOOTSTRAP_COUNT as f64;
        if mean >= threshold {
            return Ok(mix);
        }
        best = best.max(mean);
    }
    Err(Error::MixSelection { best_cosine: best })
}

/// Cosine-alignment curves for an ordered chain of (normalised) datasets.
pub fn alignment_curve(chain_data: &[DMatrix<f64>], d: usize) -> Result<AlignmentCurve> {
    if chain_data.len() < 2 {
        return Err(Error::Input("alignment curve needs at least 2 domains".into()));
    }
    let subspaces = chain_data
        .iter()
        .map(|x| fit_pca(x, d))
        .collect::<Result<Vec<_>>>()?;
    let mut curve = AlignmentCurve {
        to_target: Vec::with_capacity(subspaces.len() - 1),
        to_origin: Vec::with_capacity(subspaces.len() - 1),
    };
    for pair in subspaces.windows(2) {
        curve.to_target.push(leading_cosine(&pair[0], &pair[1])?);
        curve.to_origin.push(leading_cosine(&subspaces[0], &pair[1])?);
    }
    Ok(curve)
}

fn check_covariance(c: &DMatrix<f64>, dim: usize) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    if c.shape() != (dim, dim) {
        return Err(Error::Dimension(format!(
            "covariance is {}×{}, expected {dim}×{dim}",
            c.nrows(),
            c.ncols()
        )));
    }
    let scale = c.amax().max(f64::MIN_POSITIVE);
    if (c - c.transpose()).amax() > 1e-9 * scale {
        return Err(Error::Covariance("not symmetric".into()));
    }
    let eig = SymmetricEigen::new((c + c.transpose()) * 0.5);
    let top = eig.eigenvalues.max();
    let low = eig.eigenvalues.min();
    if low < -1e-9 * top.max(0.0) {
        return Err(Error::Covariance(format!("eigenvalue {low:.3e} is negative")));
    }
    Ok(eig)
}

fn psd_sqrt(eig: &SymmetricEigen<f64, nalgebra::Dyn>) -> DMatrix<f64> {
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// 2-Wasserstein distance between two Gaussians.
pub fn gaussian_w2(
    mu1: &DVector<f64>,
    cov1: &DMatrix<f64>,
    mu2: &DVector<f64>,
    cov2: &DMatrix<f64>,
) -> Result<f64> {
    let dim = mu1.len();
    if mu2.len() != dim {
        return Err(Error::Dimension(format!("means have lengths {dim} and {}", mu2.len())));
    }
    check_covariance(cov1, dim)?;
    let eig2 = check_covariance(cov2, dim)?;
    if mu1 == mu2 && cov1 == cov2 {
        return Ok(0.0);
    }
    let root2 = psd_sqrt(&eig2);
    let cross = &root2 * cov1 * &root2;
    let cross = (&cross + cross.transpose()) * 0.5;
    let cross_trace: f64 = SymmetricEigen::new(cross)
        .eigenvalues
        .iter()
        .map(|l| l.max(0.0).sqrt())
        .sum();
    let w2 = (mu1 - mu2).norm_squared() + cov1.trace() + cov2.trace() - 2.0 * cross_trace;
    Ok(w2.max(0.0).sqrt())
}

/// Sample mean and covariance with `1e-9·trace/D` added to the diagonal.
pub fn gaussian_fit(data: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (n, dim) = data.shape();
    if n < 2 {
        return Err(Error::Input(format!("Gaussian fit needs at least 2 samples, got {n}")));
    }
    let mean = data.row_mean().transpose();
    let mut centred = data.clone();
    for mut row in centred.row_iter_mut() {
        row -= mean.transpose();
    }
    let mut cov = centred.transpose() * &centred / (n as f64 - 1.0);
    let ridge = 1e-9 * cov.trace() / dim as f64;
    for i in 0..dim {
        cov[(i, i)] += ridge;
    }
    Ok((mean, cov))
}

/// Per-hop, total and direct Gaussian W2 distances of a chain.
pub fn path_length(chain_data: &[DMatrix<f64>]) -> Result<PathLengthReport> {
    if chain_data.len() < 2 {
        return Err(Error::Input("path length needs at least 2 domains".into()));
    }
    let fits = chain_data
        .iter()
        .map(gaussian_fit)
        .collect::<Result<Vec<_>>>()?;
    let hop_distances = fits
        .windows(2)
        .map(|w| gaussian_w2(&w[0].0, &w[0].1, &w[1].0, &w[1].1))
        .collect::<Result<Vec<_>>>()?;
    let first = &fits[0];
    let last = &fits[fits.len() - 1];
    let direct = gaussian_w2(&first.0, &first.1, &last.0, &last.1)?;
    Ok(PathLengthReport {
        total: hop_distances.iter().sum(),
        hop_distances,
        direct,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal, StandardNormal};

    fn col(values: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(values.len(), 1, values)
    }

    #[test]
    fn nca_two_points() {
        let t = nca_fit(&col(&[1.0, 3.0])).unwrap();
        assert_eq!(t.mean[0], 2.0);
        assert!((t.scale[0] - 2f64.sqrt()).abs() < 1e-15);
        let z = nca_apply(&t, &col(&[1.0, 3.0])).unwrap();
        assert!((z[0] + 0.5f64.sqrt()).abs() < 1e-15);
        assert!((z[1] - 0.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(nca_apply(&t, &col(&[2.0])).unwrap()[0], 0.0);
    }

    #[test]
    fn nca_degenerate_feature() {
        let data = DMatrix::from_row_slice(3, 2, &[1.0, 5.0, 2.0, 5.0, 3.0, 5.0]);
        assert_eq!(nca_fit(&data), Err(Error::DegenerateFeature { index: 1 }));
    }

    #[test]
    fn nca_large_sample() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let dist = Normal::new(7.0, 2.0).unwrap();
        let data = DMatrix::from_fn(1000, 1, |_, _| dist.sample(&mut rng));
        let t = nca_fit(&data).unwrap();
        assert!((t.mean[0] - 7.0).abs() <= 0.2);
        assert!((t.scale[0] - 2.0).abs() <= 0.2);
    }

    #[test]
    fn nca_is_idempotent_on_fitting_set() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data = DMatrix::from_fn(40, 5, |_, j| (j as f64 + 1.0) * 10.0 + rng.sample::<f64, _>(StandardNormal));
        let z = nca_apply(&nca_fit(&data).unwrap(), &data).unwrap();
        let again = nca_fit(&z).unwrap();
        assert!(again.mean.amax() <= 1e-12);
        assert!(again.scale.iter().all(|s| (s - 1.0).abs() <= 1e-12));
        assert!(nca_apply(&again, &DMatrix::zeros(2, 4)).is_err());
    }

    #[test]
    fn wrms_row_scaling() {
        let cfg = WrmsConfig::new(1.0, 1e-15).unwrap();
        let out = wrms_normalise(&cfg, &DMatrix::from_row_slice(1, 2, &[3.0, 4.0])).unwrap();
        assert!((out[0] - 0.8485).abs() < 1e-3);
        assert!((out[1] - 1.1314).abs() < 1e-3);
    }

    #[test]
    fn wrms_global_scaling_preserves_ratios() {
        let cfg = WrmsConfig::new(0.0, 1e-12).unwrap();
        let data = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 4.0, 3.0, 0.5, 8.0]);
        let out = wrms_normalise(&cfg, &data).unwrap();
        let k = out[(0, 0)] / data[(0, 0)];
        for (o, d) in out.iter().zip(data.iter()) {
            assert!((o / d - k).abs() <= 1e-15 * k);
        }
    }

    #[test]
    fn wrms_operating_point_on_ones() {
        let cfg = WrmsConfig::new(0.53, 1e-6).unwrap();
        let out = wrms_normalise(&cfg, &DMatrix::from_element(4, 5, 1.0)).unwrap();
        assert!(out.iter().all(|v| (v - 1.0 / (1.0 + 1e-6)).abs() < 1e-15));
    }

    #[test]
    fn wrms_rejects_bad_input() {
        let cfg = WrmsConfig::new(0.5, 1e-9).unwrap();
        assert!(wrms_normalise(&cfg, &DMatrix::zeros(0, 0)).is_err());
        assert!(wrms_normalise(&cfg, &col(&[-1.0])).is_err());
        assert!(WrmsConfig::new(1.5, 1e-9).is_err());
        assert!(WrmsConfig::new(0.5, 0.0).is_err());
    }

    fn jittered_frfs(seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape: Vec<f64> = (0..16).map(|k| 1.0 + (k as f64 * 0.7).sin().abs() * 3.0).collect();
        DMatrix::from_fn(30, 16, |i, k| {
            let amp = 1.0 + 0.3 * ((i * 7919 % 13) as f64 / 13.0);
            (amp * shape[k] * (1.0 + 0.02 * rng.sample::<f64, _>(StandardNormal))).abs()
        })
    }

    #[test]
    fn select_mix_stable_direction_passes_at_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        // Rank-one variation along a fixed direction plus tiny noise.
        let dir: Vec<f64> = (0..8).map(|k| 1.0 + k as f64).collect();
        let data = DMatrix::from_fn(20, 8, |i, k| {
            10.0 + (i as f64) * dir[k] + 1e-3 * rng.sample::<f64, _>(StandardNormal)
        });
        let mut boot = ChaCha8Rng::seed_from_u64(2);
        assert_eq!(select_mix(&data, 0.95, &mut boot).unwrap(), 0.0);
    }

    #[test]
    fn select_mix_impossible_threshold() {
        let mut boot = ChaCha8Rng::seed_from_u64(2);
        let err = select_mix(&jittered_frfs(4), 1.0 + 1e-9, &mut boot).unwrap_err();
        assert!(matches!(err, Error::MixSelection { best_cosine } if best_cosine <= 1.0));
    }

    #[test]
    fn select_mix_is_reproducible() {
        let data = jittered_frfs(9);
        let a = select_mix(&data, 0.9, &mut ChaCha8Rng::seed_from_u64(5));
        let b = select_mix(&data, 0.9, &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a, b);
    }

    #[test]
    fn alignment_curve_identical_chain() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = DMatrix::from_fn(30, 4, |_, j| (j as f64 + 1.0) * rng.sample::<f64, _>(StandardNormal));
        let curve = alignment_curve(&[x.clone(), x.clone(), x.clone()], 2).unwrap();
        assert!(curve.to_target.iter().chain(&curve.to_origin).all(|&c| (c - 1.0).abs() < 1e-12));
        let two = alignment_curve(&[x.clone(), x], 1).unwrap();
        assert_eq!(two.to_target.len(), 1);
        assert_eq!(two.to_origin[0], two.to_target[0]);
    }

    #[test]
    fn w2_simple_cases() {
        let one = DMatrix::from_element(1, 1, 1.0);
        let four = DMatrix::from_element(1, 1, 4.0);
        let z = DVector::from_element(1, 0.0);
        let three = DVector::from_element(1, 3.0);
        assert_eq!(gaussian_w2(&z, &one, &z, &one).unwrap(), 0.0);
        assert!((gaussian_w2(&z, &one, &three, &one).unwrap() - 3.0).abs() < 1e-12);
        assert!((gaussian_w2(&z, &one, &z, &four).unwrap() - 1.0).abs() < 1e-12);
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let z2 = DVector::zeros(2);
        assert!(matches!(
            gaussian_w2(&z2, &bad, &z2, &DMatrix::identity(2, 2)),
            Err(Error::Covariance(_))
        ));
    }

    #[test]
    fn path_length_two_and_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let a = DMatrix::from_fn(50, 3, |_, _| rng.sample::<f64, _>(StandardNormal));
        let b = DMatrix::from_fn(50, 3, |_, _| 2.0 + rng.sample::<f64, _>(StandardNormal));
        let r = path_length(&[a.clone(), b]).unwrap();
        assert_eq!(r.total, r.direct);
        let r = path_length(&[a.clone(), a.clone(), a]).unwrap();
        assert!(r.hop_distances.iter().all(|&d| d == 0.0));
        assert_eq!(r.direct, 0.0);
    }
}
