use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, SymmetricEigen};

use super::family::StructureParams;
use crate::error::{Error, Result};

/// Natural frequencies and mass-normalised mode shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct Modes {
    /// Hz, ascending.
    pub frequencies: Vec<f64>,
    /// n_dof × n_modes, `φᵀMφ = I`.
    pub shapes: DMatrix<f64>,
}

/// Hermitian-cubic element stiffness, DOF order (w₁, θ₁, w₂, θ₂).
fn element_stiffness(ei: f64, l: f64) -> [[f64; 4]; 4] {
    let k = ei / l.powi(3);
    let (l2, l1) = (l * l, l);
    [
        [12.0 * k, 6.0 * l1 * k, -12.0 * k, 6.0 * l1 * k],
        [6.0 * l1 * k, 4.0 * l2 * k, -6.0 * l1 * k, 2.0 * l2 * k],
        [-12.0 * k, -6.0 * l1 * k, 12.0 * k, -6.0 * l1 * k],
        [6.0 * l1 * k, 2.0 * l2 * k, -6.0 * l1 * k, 4.0 * l2 * k],
    ]
}

/// Consistent element mass.
fn element_mass(rho_a: f64, l: f64) -> [[f64; 4]; 4] {
    let m = rho_a * l / 420.0;
    let l2 = l * l;
    [
        [156.0 * m, 22.0 * l * m, 54.0 * m, -13.0 * l * m],
        [22.0 * l * m, 4.0 * l2 * m, 13.0 * l * m, -3.0 * l2 * m],
        [54.0 * m, 13.0 * l * m, 156.0 * m, -22.0 * l * m],
        [-13.0 * l * m, -3.0 * l2 * m, -22.0 * l * m, 4.0 * l2 * m],
    ]
}

/// Global K and M for a chain of equal-length elements with per-element EI.
/// Two DOFs per node (deflection, rotation); no supports.
pub fn assemble_beam(element_ei: &[f64], rho_a: f64, element_length: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let n_dof = 2 * (element_ei.len() + 1);
    let mut k = DMatrix::zeros(n_dof, n_dof);
    let mut m = DMatrix::zeros(n_dof, n_dof);
    let me = element_mass(rho_a, element_length);
    for (e, &ei) in element_ei.iter().enumerate() {
        let ke = element_stiffness(ei, element_length);
        let base = 2 * e;
        for a in 0..4 {
            for b in 0..4 {
                k[(base + a, base + b)] += ke[a][b];
                m[(base + a, base + b)] += me[a][b];
            }
        }
    }
    (k, m)
}

/// Assembles the supported, damaged deck.
pub fn assemble(params: &StructureParams) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    params.validate()?;
    let (mut k, mut m) = assemble_beam(&params.element_ei(), params.deck_rho_a, params.element_length());
    let last = 2 * params.n_elements;
    k[(0, 0)] += params.boundary_springs;
    k[(last, last)] += params.boundary_springs;
    for s in &params.supports {
        let dof = 2 * params.nearest_node(s.position);
        k[(dof, dof)] += s.stiffness;
        m[(dof, dof)] += s.mass;
    }
    for p in &params.point_masses {
        let dof = 2 * params.nearest_node(p.position);
        m[(dof, dof)] += p.mass;
    }
    Ok((k, m))
}

/// Generalised eigenproblem `Kφ = ω²Mφ` by Cholesky reduction `M = LLᵀ`
/// to the standard symmetric problem `L⁻¹KL⁻ᵀy = ω²y`, `φ = L⁻ᵀy`.
pub fn solve_modes(k: &DMatrix<f64>, m: &DMatrix<f64>, n_modes: usize) -> Result<Modes> {
    let n = k.nrows();
    if k.shape() != (n, n) || m.shape() != (n, n) {
        return Err(Error::Dimension(format!(
            "K is {:?} and M is {:?}",
            k.shape(),
            m.shape()
        )));
    }
    if n_modes == 0 || n_modes > n {
        return Err(Error::Input(format!("n_modes = {n_modes} must lie in 1..={n}")));
    }
    let chol = Cholesky::new(m.clone()).ok_or(Error::IndefiniteMass)?;
    let l = chol.l();
    let x = l
        .solve_lower_triangular(k)
        .ok_or(Error::IndefiniteMass)?;
    let a = l
        .solve_lower_triangular(&x.transpose())
        .ok_or(Error::IndefiniteMass)?;
    let a = (&a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::new(a);

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    order.truncate(n_modes);

    let mut y = DMatrix::zeros(n, n_modes);
    for (c, &i) in order.iter().enumerate() {
        y.set_column(c, &eig.eigenvectors.column(i));
    }
    let shapes = l
        .transpose()
        .solve_upper_triangular(&y)
        .ok_or(Error::IndefiniteMass)?;
    let frequencies = order
        .iter()
        .map(|&i| eig.eigenvalues[i].max(0.0).sqrt() / (2.0 * PI))
        .collect();
    Ok(Modes { frequencies, shapes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structfam::family::{apply_damage, DamageSpec, PointMass, Support};

    fn deck(n_elements: usize) -> StructureParams {
        StructureParams {
            deck_length: 32.0,
            deck_ei: 2e11 * 7.0 * 0.7f64.powi(3) / 12.0,
            deck_rho_a: 7850.0 * 4.9,
            n_elements,
            supports: vec![],
            boundary_springs: 1e12,
            point_masses: vec![],
            damping_ratio: 0.01,
            patches: vec![],
        }
    }

    fn pinned_f1(p: &StructureParams) -> f64 {
        (PI / p.deck_length).powi(2) * (p.deck_ei / p.deck_rho_a).sqrt() / (2.0 * PI)
    }

    #[test]
    fn two_element_hand_assembly() {
        // Hand-assembled 2-element beam with EI = 1, ρA = 420, element length 1.
        let (k, m) = assemble_beam(&[1.0, 1.0], 420.0, 1.0);
        #[rustfmt::skip]
        let k_hand = DMatrix::from_row_slice(6, 6, &[
            12.0, 6.0, -12.0, 6.0, 0.0, 0.0,
            6.0, 4.0, -6.0, 2.0, 0.0, 0.0,
            -12.0, -6.0, 24.0, 0.0, -12.0, 6.0,
            6.0, 2.0, 0.0, 8.0, -6.0, 2.0,
            0.0, 0.0, -12.0, -6.0, 12.0, -6.0,
            0.0, 0.0, 6.0, 2.0, -6.0, 4.0,
        ]);
        #[rustfmt::skip]
        let m_hand = DMatrix::from_row_slice(6, 6, &[
            156.0, 22.0, 54.0, -13.0, 0.0, 0.0,
            22.0, 4.0, 13.0, -3.0, 0.0, 0.0,
            54.0, 13.0, 312.0, 0.0, 54.0, -13.0,
            -13.0, -3.0, 0.0, 8.0, 13.0, -3.0,
            0.0, 0.0, 54.0, 13.0, 156.0, -22.0,
            0.0, 0.0, -13.0, -3.0, -22.0, 4.0,
        ]);
        assert!((k - k_hand).amax() < 1e-12);
        assert!((m - m_hand).amax() < 1e-12);
    }

    #[test]
    fn free_free_beam_has_two_rigid_modes() {
        let mut p = deck(20);
        p.boundary_springs = 0.0;
        let (k, _) = assemble(&p).unwrap();
        let eig = SymmetricEigen::new(k.clone());
        let top = eig.eigenvalues.amax();
        let zeros = eig.eigenvalues.iter().filter(|v| v.abs() < 1e-9 * top).count();
        assert_eq!(zeros, 2);
    }

    #[test]
    fn point_mass_adds_to_diagonal() {
        let p = deck(20);
        let (_, m0) = assemble(&p).unwrap();
        let mut q = p.clone();
        q.point_masses.push(PointMass { position: 0.5, mass: 7.5 });
        let (_, m1) = assemble(&q).unwrap();
        let dof = 2 * 10;
        assert_eq!(m1[(dof, dof)] - m0[(dof, dof)], 7.5);
        assert_eq!((&m1 - &m0).iter().filter(|v| **v != 0.0).count(), 1);
    }

    #[test]
    fn pinned_beam_first_frequency() {
        let p = deck(200);
        let (k, m) = assemble(&p).unwrap();
        let modes = solve_modes(&k, &m, 5).unwrap();
        let rel = (modes.frequencies[0] - pinned_f1(&p)).abs() / pinned_f1(&p);
        assert!(rel < 0.005, "relative error {rel}");
        assert!(modes.frequencies.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn shapes_are_mass_normalised() {
        let mut p = deck(100);
        p.supports.push(Support { position: 0.5, stiffness: 1e10, mass: 1e4 });
        let (k, m) = assemble(&p).unwrap();
        let modes = solve_modes(&k, &m, 15).unwrap();
        let g = modes.shapes.transpose() * &m * &modes.shapes;
        assert!((g - DMatrix::identity(15, 15)).amax() < 1e-8);
    }

    #[test]
    fn doubling_rho_a_scales_frequencies() {
        // A coarse mesh keeps ω²_max/ω²_min small enough for the eigensolver's
        // rounding to stay below the tolerance.
        let p = deck(20);
        let mut heavy = p.clone();
        heavy.deck_rho_a *= 2.0;
        let a = {
            let (k, m) = assemble(&p).unwrap();
            solve_modes(&k, &m, 10).unwrap().frequencies
        };
        let b = {
            let (k, m) = assemble(&heavy).unwrap();
            solve_modes(&k, &m, 10).unwrap().frequencies
        };
        for (fa, fb) in a.iter().zip(&b) {
            let rel = (fb * 2f64.sqrt() - fa).abs() / fa;
            assert!(rel < 1e-10, "relative deviation {rel}");
        }
    }

    #[test]
    fn mesh_convergence() {
        let coarse = deck(200);
        let fine = deck(400);
        let fc = {
            let (k, m) = assemble(&coarse).unwrap();
            solve_modes(&k, &m, 5).unwrap().frequencies
        };
        let ff = {
            let (k, m) = assemble(&fine).unwrap();
            solve_modes(&k, &m, 5).unwrap().frequencies
        };
        for (a, b) in fc.iter().zip(&ff) {
            assert!((a - b).abs() / b < 1e-3);
        }
    }

    #[test]
    fn identity_damage_keeps_frequencies() {
        let p = deck(100);
        let d = apply_damage(
            &p,
            &DamageSpec::DeckPatch { centre: 0.85, extent: 0.05, ei_factor: 1.0 },
        )
        .unwrap();
        let f = |q: &StructureParams| {
            let (k, m) = assemble(q).unwrap();
            solve_modes(&k, &m, 10).unwrap().frequencies
        };
        assert_eq!(f(&p), f(&d));
    }

    #[test]
    fn indefinite_mass_is_rejected() {
        let k = DMatrix::identity(2, 2);
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert_eq!(solve_modes(&k, &m, 1), Err(Error::IndefiniteMass));
        assert!(solve_modes(&k, &DMatrix::identity(2, 2), 3).is_err());
    }
}
