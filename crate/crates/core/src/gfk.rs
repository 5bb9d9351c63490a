//! Geodesic flow between two subspaces and the closed-form flow kernel.
//!
//! The kernel is the exact integral `G = ∫₀¹ Φ(t)·Φ(t)ᵀ dt`. For each
//! principal angle θ it contributes the 2×2 block
//!
//! ```text
//! ½·[ 1 + sin2θ/2θ      (1 − cos2θ)/2θ ]
//!   [ (1 − cos2θ)/2θ    1 − sin2θ/2θ   ]
//! ```
//!
//! on the pair of directions `(S1·V1, −R1·Ṽ2)`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::subspace::{complete, cs_decompose, Completion, CsDecomposition, Subspace};

/// Below this angle the diagonal terms use their Taylor expansions.
const SERIES_FLOOR: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct FlowKernel {
    g: DMatrix<f64>,
    embedding: DMatrix<f64>,
    angles: Vec<f64>,
}

impl FlowKernel {
    pub fn g(&self) -> &DMatrix<f64> {
        &self.g
    }

    /// Square-root factor `E` with `EᵀE = g`.
    pub fn embedding(&self) -> &DMatrix<f64> {
        &self.embedding
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    pub fn dim(&self) -> usize {
        self.g.nrows()
    }
}

/// Per-angle integrals `(∫cos², ∫cos·sin, ∫sin²)` over t ∈ [0,1] of the flow
/// coordinates `cos(tθ)` and `sin(tθ)`.
pub fn angle_integrals(theta: f64) -> (f64, f64, f64) {
    if theta < SERIES_FLOOR {
        let t2 = theta * theta;
        let sinc = 1.0 - 2.0 * t2 / 3.0;
        (0.5 * (1.0 + sinc), 0.5 * theta, 0.5 * (1.0 - sinc))
    } else {
        let sinc = (2.0 * theta).sin() / (2.0 * theta);
        let cross = theta.sin().powi(2) / (2.0 * theta);
        (0.5 * (1.0 + sinc), cross, 0.5 * (1.0 - sinc))
    }
}

/// Point `Φ(t)` on the geodesic from S1 (t = 0) to S2 (t = 1).
pub fn flow_point(cs: &CsDecomposition, comp: &Completion, t: f64) -> Result<Subspace> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Input(format!("flow parameter t = {t} outside [0, 1]")));
    }
    let d = cs.angles.len();
    let ambient = comp.q.nrows();
    let cos = DVector::from_iterator(d, cs.angles.iter().map(|a| (t * a).cos()));
    let sin = DVector::from_iterator(d, cs.angles.iter().map(|a| (t * a).sin()));
    let mut stacked = DMatrix::zeros(ambient, d);
    stacked
        .rows_mut(0, d)
        .copy_from(&(&cs.v1 * DMatrix::from_diagonal(&cos)));
    stacked
        .rows_mut(d, ambient - d)
        .copy_from(&(-&cs.v2_tilde * DMatrix::from_diagonal(&sin)));
    Subspace::new(&comp.q * stacked)
}

/// Closed-form geodesic flow kernel between two equal-dimension subspaces.
pub fn build_kernel(s1: &Subspace, s2: &Subspace) -> Result<FlowKernel> {
    let cs = cs_decompose(s1, s2)?;
    let comp = complete(s1);
    let d = cs.angles.len();
    let ambient = s1.ambient_dim();

    // Directions (S1·V1, −R1·Ṽ2) and the per-angle 2×2 blocks.
    let mut dirs = DMatrix::zeros(ambient, 2 * d);
    dirs.columns_mut(0, d).copy_from(&(s1.basis() * &cs.v1));
    dirs.columns_mut(d, d).copy_from(&(-&comp.r * &cs.v2_tilde));
    let mut middle = DMatrix::zeros(2 * d, 2 * d);
    for (i, &theta) in cs.angles.iter().enumerate() {
        let (cc, cs_, ss) = angle_integrals(theta);
        middle[(i, i)] = cc;
        middle[(i, d + i)] = cs_;
        middle[(d + i, i)] = cs_;
        middle[(d + i, d + i)] = ss;
    }
    let mut g = &dirs * middle * dirs.transpose();
    g = (&g + g.transpose()) * 0.5;

    let embedding = psd_factor(&g);
    Ok(FlowKernel {
        g,
        embedding,
        angles: cs.angles,
    })
}

/// `E = diag(√λ⁺)·Uᵀ` from the symmetric eigendecomposition `g = U·Λ·Uᵀ`.
fn psd_factor(g: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(g.clone());
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// `xᵀ·g·y`.
pub fn kernel_value(k: &FlowKernel, x: &DVector<f64>, y: &DVector<f64>) -> Result<f64> {
    if x.len() != k.dim() || y.len() != k.dim() {
        return Err(Error::Dimension(format!(
            "kernel is {}-dimensional, vectors have lengths {} and {}",
            k.dim(),
            x.len(),
            y.len()
        )));
    }
    Ok(x.dot(&(&k.g * y)))
}

/// Maps each row `x` of `data` to `E·x`.
pub fn embed(k: &FlowKernel, data: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if data.ncols() != k.dim() {
        return Err(Error::Dimension(format!(
            "data has {} columns, kernel is {}-dimensional",
            data.ncols(),
            k.dim()
        )));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("data contains non-finite values".into()));
    }
    Ok(data * k.embedding.transpose())
}
