//! Geometric core of an egocentric 3D perception pipeline: SE(3) and
//! gravity alignment, fisheye cameras, gravity-aligned voxel lifting, exact
//! oriented-box IoU, online box tracking, TSDF and occupancy fusion, surface
//! and detection metrics, training losses, and a synthetic scene generator.

pub mod autodiff;
pub mod bvh;
pub mod camera;
pub mod error;
pub mod fusion;
pub mod geom;
pub mod gradcheck;
pub mod io;
pub mod losses;
pub mod mcubes;
pub mod mesh;
pub mod metrics;
pub mod obb;
pub mod pipeline;
pub mod scenegen;
pub mod tracker;
pub mod voxel;

pub use error::{Error, Result};
