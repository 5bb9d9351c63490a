//! PCA subspaces and Grassmannian geometry.
//!
//! A [`Subspace`] is a point on Gr(d, D) represented by a D×d matrix with
//! orthonormal columns. This module fits such bases from data, completes them
//! to a full orthogonal frame and computes the cosine-sine decomposition
//! between two subspaces that the geodesic flow is built from.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Angles below this are treated as exactly zero when recovering the sine
/// factor of the cosine-sine decomposition.
pub const ANGLE_FLOOR: f64 = 1e-7;

const ORTHONORMAL_TOL: f64 = 1e-10;

/// Orthonormal basis of a d-dimensional subspace of R^D.
#[derive(Debug, Clone, PartialEq)]
pub struct Subspace {
    basis: DMatrix<f64>,
}

impl Subspace {
    /// Wraps a basis, checking `basisᵀ·basis = I` to 1e-10 (Frobenius).
    pub fn new(basis: DMatrix<f64>) -> Result<Self> {
        let (ambient, dim) = basis.shape();
        if dim == 0 || dim > ambient {
            return Err(Error::Input(format!(
                "subspace dimension {dim} must lie in 1..={ambient}"
            )));
        }
        if basis.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("basis contains non-finite entries".into()));
        }
        let gram = basis.transpose() * &basis;
        let err = (gram - DMatrix::identity(dim, dim)).norm();
        if err > ORTHONORMAL_TOL {
            return Err(Error::Input(format!(
                "basis columns are not orthonormal (‖BᵀB − I‖ = {err:.3e})"
            )));
        }
        Ok(Self { basis })
    }

    /// Orthonormalises the columns of `m` (thin QR) and applies the sign
    /// convention. The columns must be linearly independent.
    pub fn orthonormalize(m: &DMatrix<f64>) -> Result<Self> {
        let (ambient, dim) = m.shape();
        if dim == 0 || dim > ambient {
            return Err(Error::Input(format!(
                "cannot span {dim} directions in R^{ambient}"
            )));
        }
        let qr = m.clone().qr();
        let r = qr.r();
        let scale = r.diagonal().amax().max(f64::MIN_POSITIVE);
        if r.diagonal().iter().any(|v| v.abs() <= scale * 1e-12) {
            return Err(Error::Input("columns are linearly dependent".into()));
        }
        let mut q = qr.q();
        apply_sign_convention(&mut q);
        Self::new(q)
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn ambient_dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn sub_dim(&self) -> usize {
        self.basis.ncols()
    }

    /// Leading basis direction.
    pub fn leading(&self) -> DVector<f64> {
        self.basis.column(0).into_owned()
    }

    /// Coordinates of each row of `data` in this basis (N×d).
    pub fn project(&self, data: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if data.ncols() != self.ambient_dim() {
            return Err(Error::Dimension(format!(
                "data has {} columns, subspace lives in R^{}",
                data.ncols(),
                self.ambient_dim()
            )));
        }
        Ok(data * &self.basis)
    }
}

/// Orthogonal completion `q = [basis | r]` of a subspace.
#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

/// Cosine-sine decomposition of a subspace pair.
///
/// `S1ᵀS2 = v1·diag(cos θ)·vᵀ` and `R1ᵀS2 = −v2_tilde·diag(sin θ)·vᵀ`, with the
/// angles ascending in [0, π/2].
#[derive(Debug, Clone, PartialEq)]
pub struct CsDecomposition {
    pub v1: DMatrix<f64>,
    pub v2_tilde: DMatrix<f64>,
    pub v: DMatrix<f64>,
    pub angles: Vec<f64>,
}

/// Flips each column so that its entry of largest magnitude is non-negative.
/// Ties go to the lowest row index.
pub fn apply_sign_convention(m: &mut DMatrix<f64>) {
    for mut col in m.column_iter_mut() {
        let mut best = 0;
        let mut best_abs = -1.0;
        for (i, v) in col.iter().enumerate() {
            if v.abs() > best_abs {
                best_abs = v.abs();
                best = i;
            }
        }
        if col[best] < 0.0 {
            col.neg_mut();
        }
    }
}

fn check_finite(data: &DMatrix<f64>) -> Result<()> {
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("data contains non-finite values".into()));
    }
    Ok(())
}

fn centred(data: &DMatrix<f64>) -> DMatrix<f64> {
    let mut x = data.clone();
    let n = data.nrows() as f64;
    for mut col in x.column_iter_mut() {
        let mean = col.sum() / n;
        col.add_scalar_mut(-mean);
    }
    x
}

/// Singular values (descending) and matching right singular vectors (columns)
/// of the column-centred data.
fn centred_spectrum(data: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let x = centred(data);
    let svd = x.svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors were requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let values = order.iter().map(|&i| svd.singular_values[i]).collect();
    let mut vectors = DMatrix::zeros(data.ncols(), order.len());
    for (j, &i) in order.iter().enumerate() {
        vectors.set_column(j, &v_t.row(i).transpose());
    }
    (values, vectors)
}

fn numerical_rank(values: &[f64], nrows: usize, ncols: usize) -> usize {
    let top = values.first().copied().unwrap_or(0.0);
    if top <= 0.0 {
        return 0;
    }
    let tol = top * nrows.max(ncols) as f64 * f64::EPSILON;
    values.iter().filter(|&&s| s > tol).count()
}

/// Top-`d` principal directions of the column-centred data.
pub fn fit_pca(data: &DMatrix<f64>, d: usize) -> Result<Subspace> {
    let (n, ambient) = data.shape();
    if n < 2 {
        return Err(Error::Input(format!("PCA needs at least 2 samples, got {n}")));
    }
    if d == 0 || d > ambient.min(n - 1) {
        return Err(Error::Input(format!(
            "PCA dimension {d} must lie in 1..={} for {n} samples in R^{ambient}",
            ambient.min(n - 1)
        )));
    }
    check_finite(data)?;
    let (values, vectors) = centred_spectrum(data);
    let rank = numerical_rank(&values, n, ambient);
    if rank < d {
        return Err(Error::RankDeficient {
            requested: d,
            achievable: rank,
        });
    }
    let mut basis = vectors.columns(0, d).into_owned();
    apply_sign_convention(&mut basis);
    Subspace::new(basis)
}

/// Per-component sample variances of the centred data, descending.
pub fn pca_variances(data: &DMatrix<f64>) -> Result<Vec<f64>> {
    let n = data.nrows();
    if n < 2 {
        return Err(Error::Input(format!("PCA needs at least 2 samples, got {n}")));
    }
    check_finite(data)?;
    let (values, _) = centred_spectrum(data);
    Ok(values.iter().map(|s| s * s / (n as f64 - 1.0)).collect())
}

/// Smallest dimension whose leading components explain `threshold` of the
/// total variance.
pub fn dimension_for_variance(variances: &[f64], threshold: f64) -> usize {
    let total: f64 = variances.iter().sum();
    if total <= 0.0 {
        return 1;
    }
    let mut acc = 0.0;
    for (i, v) in variances.iter().enumerate() {
        acc += v;
        if acc / total >= threshold {
            return i + 1;
        }
    }
    variances.len().max(1)
}

/// Extends `existing` (orthonormal columns in R^n) by `extra` further
/// orthonormal columns using Householder QR of `[existing | I]`.
fn extend_orthonormal(existing: &DMatrix<f64>, extra: usize) -> DMatrix<f64> {
    let n = existing.nrows();
    let k = existing.ncols();
    let mut aug = DMatrix::zeros(n, k + n);
    aug.columns_mut(0, k).copy_from(existing);
    aug.columns_mut(k, n).fill_with_identity();
    let q = aug.qr().q();
    let mut out = q.columns(k, extra).into_owned();
    apply_sign_convention(&mut out);
    out
}

/// Orthogonal completion of a subspace basis.
pub fn complete(s: &Subspace) -> Completion {
    let d = s.sub_dim();
    let ambient = s.ambient_dim();
    let r = extend_orthonormal(s.basis(), ambient - d);
    let mut q = DMatrix::zeros(ambient, ambient);
    q.columns_mut(0, d).copy_from(s.basis());
    q.columns_mut(d, ambient - d).copy_from(&r);
    Completion { q, r }
}

fn check_pair(s1: &Subspace, s2: &Subspace) -> Result<()> {
    if s1.ambient_dim() != s2.ambient_dim() {
        return Err(Error::Dimension(format!(
            "ambient dimensions differ ({} vs {})",
            s1.ambient_dim(),
            s2.ambient_dim()
        )));
    }
    Ok(())
}

/// Rotation pair and angles of `s1ᵀ·s2`, sorted by ascending angle.
struct AngleFrame {
    u: DMatrix<f64>,
    v: DMatrix<f64>,
    angles: Vec<f64>,
}

fn angle_frame(s1: &Subspace, s2: &Subspace) -> AngleFrame {
    let m = s1.basis().transpose() * s2.basis();
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("left vectors requested");
    let v = svd.v_t.expect("right vectors requested").transpose();
    let sv = svd.singular_values;
    // (I − s1·s1ᵀ)·s2·v, whose column norms are the sines.
    let residual = (s2.basis() - s1.basis() * &m) * &v;
    let raw: Vec<f64> = (0..sv.len())
        .map(|i| {
            let c = sv[i].clamp(0.0, 1.0);
            let s = residual.column(i).norm().clamp(0.0, 1.0);
            s.atan2(c)
        })
        .collect();
    let mut order: Vec<usize> = (0..raw.len()).collect();
    order.sort_by(|&a, &b| raw[a].total_cmp(&raw[b]));
    let pick = |m: &DMatrix<f64>| {
        let mut out = DMatrix::zeros(m.nrows(), order.len());
        for (j, &i) in order.iter().enumerate() {
            out.set_column(j, &m.column(i));
        }
        out
    };
    AngleFrame {
        u: pick(&u),
        v: pick(&v),
        angles: order.iter().map(|&i| raw[i]).collect(),
    }
}

/// Principal angles between two equal-dimension subspaces, ascending.
///
/// Angles come from `atan2(sin, cos)` with the sine taken from the residual of
/// `s2` off `s1`, which stays accurate for nearly coincident subspaces.
pub fn principal_angles(s1: &Subspace, s2: &Subspace) -> Result<Vec<f64>> {
    check_pair(s1, s2)?;
    if s1.sub_dim() != s2.sub_dim() {
        return Err(Error::Dimension(format!(
            "subspace dimensions differ ({} vs {})",
            s1.sub_dim(),
            s2.sub_dim()
        )));
    }
    Ok(angle_frame(s1, s2).angles)
}

/// Cosine-sine decomposition of `Qᵀ·S2` where `Q` completes `s1`.
pub fn cs_decompose(s1: &Subspace, s2: &Subspace) -> Result<CsDecomposition> {
    check_pair(s1, s2)?;
    let d = s1.sub_dim();
    let ambient = s1.ambient_dim();
    if s2.sub_dim() != d {
        return Err(Error::Dimension(format!(
            "subspace dimensions differ ({d} vs {})",
            s2.sub_dim()
        )));
    }
    if 2 * d > ambient {
        return Err(Error::UnsupportedDimension { d, ambient });
    }
    let completion = complete(s1);
    let frame = angle_frame(s1, s2);
    // R1ᵀ·S2·V, columns have norm sin θ.
    let w = completion.r.transpose() * s2.basis() * &frame.v;

    let rows = ambient - d;
    let mut v2 = DMatrix::zeros(rows, d);
    let mut filled = Vec::new();
    let mut missing = Vec::new();
    for (i, &theta) in frame.angles.iter().enumerate() {
        if theta > ANGLE_FLOOR {
            let col = w.column(i);
            v2.set_column(i, &(-col / col.norm()));
            filled.push(i);
        } else {
            missing.push(i);
        }
    }
    if !missing.is_empty() {
        let mut existing = DMatrix::zeros(rows, filled.len());
        for (j, &i) in filled.iter().enumerate() {
            existing.set_column(j, &v2.column(i));
        }
        let extra = extend_orthonormal(&existing, missing.len());
        for (j, &i) in missing.iter().enumerate() {
            v2.set_column(i, &extra.column(j));
        }
    }
    Ok(CsDecomposition {
        v1: frame.u,
        v2_tilde: v2,
        v: frame.v,
        angles: frame.angles,
    })
}

/// `|u1·u2|` for the leading directions of the two subspaces.
pub fn leading_cosine(s1: &Subspace, s2: &Subspace) -> Result<f64> {
    check_pair(s1, s2)?;
    Ok(s1.leading().dot(&s2.leading()).abs().min(1.0))
}

/// Uniformly distributed random subspace (QR of a Gaussian matrix).
pub fn random_subspace<R: Rng + ?Sized>(rng: &mut R, ambient: usize, dim: usize) -> Subspace {
    loop {
        let m = DMatrix::from_fn(ambient, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        if let Ok(s) = Subspace::orthonormalize(&m) {
            return s;
        }
    }
}
