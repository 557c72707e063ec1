//! Keypoint-based visual imitation: sparse geometric constraint extraction
//! from corresponded point trajectories, via-point movement primitives, and a
//! keypoint admittance controller driving a simulated rigid body.

pub mod cluster;
pub mod constraint;
pub mod error;
pub mod extract;
pub mod geometry;
pub mod kac;
pub mod metrics;
pub mod ingest;
pub mod par;
pub mod pce_linear;
pub mod pce_nonlinear;
pub mod pme;
pub mod sim;
pub mod spline;
pub mod synth;
pub mod task;
pub mod vmp;

pub use error::{KvilError, Result};
pub use geometry::{RigidTransform, Trajectory, Vec3};
pub use par::Execution;
