//! Reduced-order thermo-mechanical crystal plasticity on voxel polycrystals.
//!
//! The crate precomputes influence-function coefficient tensors on a periodic
//! voxel RVE (elastic, eigenstrain and thermal loading cases), integrates a
//! dislocation-density viscoplastic model at macroscale material points using
//! the reduced part-wise system, and post-processes grain-pair fatigue
//! indicators. A desk-scale full-field solver and a Taylor model are included
//! as verification oracles.
//!
//! Conventions used throughout:
//! - Voigt order `(11, 22, 33, 23, 13, 12)`; strain vectors carry engineering
//!   shear components (doubled), stress vectors carry tensor components.
//! - Stresses and moduli in MPa, temperatures in kelvin, densities in 1/m²,
//!   time in seconds.
//! - Euler angles are Bunge Z-X-Z, radians.

pub mod constitutive;
pub mod driver;
pub mod error;
pub mod fe;
pub mod fip;
pub mod influence;
pub mod material;
pub mod microstructure;
pub mod oracle;
pub mod point;
pub mod voigt;

pub use error::EhmError;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, EhmError>;
