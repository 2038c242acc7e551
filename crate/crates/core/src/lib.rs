//! Forward simulation and inverse constitutive identification for
//! heterogeneous hyperelastic thin plates.
//!
//! The crate covers the full loop at desk scale:
//!
//! 1. [`synthdata`] runs a displacement-controlled forward FEM solve on a
//!    single-element-thick wedge mesh and optionally perturbs it with
//!    measurement noise and kernel-ridge denoising.
//! 2. [`assembly`] turns a mesh, a displacement field and boundary forces
//!    into the weak-form linear system `A theta = b` whose unknowns are the
//!    per-segment coefficients of the energy library in [`constitutive`].
//! 3. [`segmentation`] locates material interfaces from the residual forces
//!    of a homogenized fit and grows element islands into segments.
//! 4. [`sampler`] solves the segmented system by nonnegative spike-slab
//!    Gibbs sampling, yielding sparse coefficient posteriors.
//! 5. [`validation`] scores recovered models against ground truth along
//!    canonical deformation paths.

pub mod assembly;
pub mod constitutive;
pub mod error;
pub mod mesh;
pub mod rng;
pub mod sampler;
pub mod segmentation;
pub mod synthdata;
pub mod validation;

pub use error::{Error, Result};
