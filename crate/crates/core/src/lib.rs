//! Geometric core of a scale-normalized 6DoF pose estimation pipeline for
//! stacked bin-picking scenes.
//!
//! Scenes are split per category, mapped into a scale-normalized coordinate
//! space (SNCS) where every object has the same diameter, clustered and voted
//! there, and mapped back. Learned components are replaced by the
//! [`predictor::PointPredictor`] interface and a seeded noisy oracle.

pub mod aggregate;
pub mod bounding;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod io;
pub mod pipeline;
pub mod predictor;
pub mod scenegen;
pub mod shapes;
pub mod simtoreal;
pub mod sncs;

pub use error::{Error, Result};
pub use geometry::{CameraIntrinsics, DepthImage, ObjectModel, Point3, RigidPose, SymmetryClass, SymmetryKind};
