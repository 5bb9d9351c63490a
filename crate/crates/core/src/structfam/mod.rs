//! Parametric beam structure families.
//!
//! A deck is modelled as an Euler–Bernoulli beam on elastic supports. A
//! moving support materialises and translates as the morph parameter α goes
//! from 0 to 1, turning a two-span structure into a three-span one. Damage
//! classes reduce local bending stiffness or support stiffness, and modal
//! solutions feed natural-frequency or FRF feature datasets.

mod beam;
mod family;
mod features;

pub use beam::{assemble, assemble_beam, solve_modes, Modes};
pub use family::{
    apply_damage, cut_section_ei_factor, morph, DamageSpec, EiPatch, MorphSpec, PointMass,
    StructureParams, Support,
};
pub use features::{
    build_chain, build_templates, clean_features, frequency_features, frf_features,
    frf_magnitudes, ChainTemplate, ClassTemplate, FeatureConfig, StructureTemplate,
};
