//! Computational toolkit for uniformly rectifiable sets in the Heisenberg group.
//!
//! The pipeline runs on finite weighted point clouds: dyadic cubes, beta
//! numbers, a corona decomposition into stopping-time regions, Lipschitz
//! graph models for the regions, and a bilipschitz parametrization of a big
//! piece of the cloud.

pub mod error;
pub mod hgroup;
pub mod hplanes;
pub mod cloud;
pub mod cubes;
pub mod beta;
pub mod corona;
pub mod graphify;
pub mod param;
mod optim;
mod par;

pub use beta::{beta1, beta_inf, carleson_sum, fit_isotropic_plane, wgl_count, FitMode, PlaneFit};
pub use error::{Error, Result};
pub use hgroup::{apply_rotation, group_inv, group_mul, koranyi_dist, symplectic_form, HPoint, Rotation};
pub use hplanes::{dist_to_plane, isotropic_gram_schmidt, plane_angle, project, spanning_points, HPlane, IsotropicFrame};
