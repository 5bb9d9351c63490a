use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Elastic support attached to the nearest deck node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Support {
    /// Fraction of the span in [0, 1].
    pub position: f64,
    /// N/m
    pub stiffness: f64,
    /// kg
    #[serde(default)]
    pub mass: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointMass {
    pub position: f64,
    pub mass: f64,
}

/// Bending-stiffness reduction over the elements whose centroids fall in
/// `[centre − extent/2, centre + extent/2]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EiPatch {
    pub centre: f64,
    pub extent: f64,
    pub factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StructureParams {
    /// m
    pub deck_length: f64,
    /// N·m²
    pub deck_ei: f64,
    /// kg/m
    pub deck_rho_a: f64,
    pub n_elements: usize,
    #[serde(default)]
    pub supports: Vec<Support>,
    /// Translational springs at both deck ends, N/m.
    pub boundary_springs: f64,
    #[serde(default)]
    pub point_masses: Vec<PointMass>,
    /// Uniform modal damping ratio used for FRF synthesis.
    pub damping_ratio: f64,
    #[serde(default)]
    pub patches: Vec<EiPatch>,
}

const EDGE_TOL: f64 = 1e-12;

fn in_unit(x: f64) -> bool {
    (0.0..=1.0).contains(&x)
}

impl StructureParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("deck_length", self.deck_length),
            ("deck_ei", self.deck_ei),
            ("deck_rho_a", self.deck_rho_a),
            ("damping_ratio", self.damping_ratio),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Input(format!("{name} = {v} must be positive")));
            }
        }
        if !(self.boundary_springs >= 0.0) || !self.boundary_springs.is_finite() {
            return Err(Error::Input("boundary_springs must be non-negative".into()));
        }
        if self.n_elements < 10 {
            return Err(Error::Input(format!(
                "n_elements = {} must be at least 10",
                self.n_elements
            )));
        }
        for (i, s) in self.supports.iter().enumerate() {
            if !in_unit(s.position) || !(s.stiffness >= 0.0) || !(s.mass >= 0.0) {
                return Err(Error::Input(format!("support {i} is invalid: {s:?}")));
            }
        }
        for (i, p) in self.point_masses.iter().enumerate() {
            if !in_unit(p.position) || !(p.mass >= 0.0) {
                return Err(Error::Input(format!("point mass {i} is invalid: {p:?}")));
            }
        }
        for p in &self.patches {
            if !(p.factor > 0.0 && p.factor <= 1.0) {
                return Err(Error::Input(format!("EI factor {} outside (0, 1]", p.factor)));
            }
        }
        Ok(())
    }

    pub fn element_length(&self) -> f64 {
        self.deck_length / self.n_elements as f64
    }

    /// Node index nearest to a span fraction.
    pub fn nearest_node(&self, position: f64) -> usize {
        ((position * self.n_elements as f64).round() as usize).min(self.n_elements)
    }

    /// Elements whose centroid lies within the patch, edges inclusive.
    pub fn elements_in(&self, centre: f64, extent: f64) -> Vec<usize> {
        let lo = centre - 0.5 * extent - EDGE_TOL;
        let hi = centre + 0.5 * extent + EDGE_TOL;
        (0..self.n_elements)
            .filter(|&e| {
                let c = (e as f64 + 0.5) / self.n_elements as f64;
                c >= lo && c <= hi
            })
            .collect()
    }

    /// Per-element EI after applying all damage patches.
    pub fn element_ei(&self) -> Vec<f64> {
        let mut ei = vec![self.deck_ei; self.n_elements];
        for p in &self.patches {
            for e in self.elements_in(p.centre, p.extent) {
                ei[e] *= p.factor;
            }
        }
        ei
    }
}

/// α-driven path of the moving support.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MorphSpec {
    pub moving_support_start: f64,
    pub moving_support_end: f64,
    pub full_stiffness: f64,
    pub full_mass: f64,
    /// Smallest admissible non-zero α.
    pub alpha_floor: f64,
}

/// Adds the moving support for a given α.
///
/// α = 0 is the unmorphed source (the support has no stiffness or mass, so
/// its position is immaterial). Any other α below the floor is rejected:
/// there the moving support would overlap the fixed one.
pub fn morph(base: &StructureParams, spec: &MorphSpec, alpha: f64) -> Result<StructureParams> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Input(format!("alpha = {alpha} outside [0, 1]")));
    }
    if alpha != 0.0 && alpha < spec.alpha_floor {
        return Err(Error::ExcludedConfiguration {
            alpha,
            floor: spec.alpha_floor,
        });
    }
    let mut out = base.clone();
    out.supports.push(Support {
        position: spec.moving_support_start
            + alpha * (spec.moving_support_end - spec.moving_support_start),
        stiffness: alpha * spec.full_stiffness,
        mass: alpha * spec.full_mass,
    });
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DamageSpec {
    DeckPatch {
        centre: f64,
        extent: f64,
        ei_factor: f64,
    },
    SupportCut {
        support_index: usize,
        stiffness_factor: f64,
    },
}

pub fn apply_damage(params: &StructureParams, d: &DamageSpec) -> Result<StructureParams> {
    let mut out = params.clone();
    match *d {
        DamageSpec::DeckPatch {
            centre,
            extent,
            ei_factor,
        } => {
            if !(ei_factor > 0.0 && ei_factor <= 1.0) {
                return Err(Error::Input(format!("ei_factor = {ei_factor} outside (0, 1]")));
            }
            if !(extent > 0.0) || centre - 0.5 * extent < -EDGE_TOL || centre + 0.5 * extent > 1.0 + EDGE_TOL {
                return Err(Error::Input(format!(
                    "patch centred at {centre} with extent {extent} leaves the span"
                )));
            }
            if params.elements_in(centre, extent).is_empty() {
                return Err(Error::EmptyPatch { centre, extent });
            }
            out.patches.push(EiPatch {
                centre,
                extent,
                factor: ei_factor,
            });
        }
        DamageSpec::SupportCut {
            support_index,
            stiffness_factor,
        } => {
            if !(stiffness_factor > 0.0 && stiffness_factor <= 1.0) {
                return Err(Error::Input(format!(
                    "stiffness_factor = {stiffness_factor} outside (0, 1]"
                )));
            }
            let support = out.supports.get_mut(support_index).ok_or_else(|| {
                Error::Input(format!("no support with index {support_index}"))
            })?;
            support.stiffness *= stiffness_factor;
        }
    }
    Ok(out)
}

/// Ratio of the second moment of area of a `width × depth` rectangle after a
/// top cut spanning `width_frac` of the width and `depth_frac` of the depth,
/// to that of the intact section.
pub fn cut_section_ei_factor(width: f64, depth: f64, width_frac: f64, depth_frac: f64) -> f64 {
    // Intact lower slab plus the uncut strip beside the notch.
    let lower_h = depth * (1.0 - depth_frac);
    let strip_w = width * (1.0 - width_frac);
    let strip_h = depth * depth_frac;
    let parts = [
        (width * lower_h, 0.5 * lower_h, width * lower_h.powi(3) / 12.0),
        (
            strip_w * strip_h,
            lower_h + 0.5 * strip_h,
            strip_w * strip_h.powi(3) / 12.0,
        ),
    ];
    let area: f64 = parts.iter().map(|p| p.0).sum();
    let centroid = parts.iter().map(|p| p.0 * p.1).sum::<f64>() / area;
    let second_moment: f64 = parts
        .iter()
        .map(|&(a, y, own)| own + a * (y - centroid).powi(2))
        .sum();
    second_moment / (width * depth.powi(3) / 12.0)
}
