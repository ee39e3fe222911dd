//! Three-dimensional left-ventricle segmentation for late-gadolinium-enhanced
//! (LGE) cardiac MR.
//!
//! The pipeline realigns short-axis (SA) slices against long-axis (LA) slices,
//! propagates cine contours onto the LGE slices by pattern-intensity
//! translational registration, detects paired endo/epicardial edge points
//! with a 1D intensity-profile model, and deforms two coupled simplex meshes
//! towards those points. A procedural phantom with analytic ground truth is
//! included for end-to-end validation.

#[cfg(test)]
macro_rules! assert_close {
    ($a:expr, $b:expr, $tol:expr) => {{
        let (a, b, tol): (f64, f64, f64) = ($a, $b, $tol);
        assert!((a - b).abs() <= tol, "{} vs {} (tol {})", a, b, tol);
    }};
}

pub mod align;
pub mod bundle;
pub mod config;
pub mod error;
pub mod geometry;
pub mod mesh;
pub mod metrics;
pub mod phantom;
pub mod pipeline;
pub mod profile;
pub mod register;

pub use error::{Error, Result};
pub use geometry::{Image, Ray, ReferenceFrame, SliceLabel, SlicePlane, Vec2, Vec3};
pub use mesh::{DeformParams, SimplexMesh, VertexPairing};
pub use profile::{EdgePoint, EdgePointSet, IntensityModel, PolarContour, TemplateParams};
pub use config::PipelineConfig;
