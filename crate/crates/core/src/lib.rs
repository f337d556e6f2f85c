//! Fingerprint orientation fields: block-wise coarse estimation, global
//! Fourier-basis models (least squares, OMP, compressed sensing), a sparse
//! coefficient index, and SVG rendering.
//!
//! Parallel work goes through [`par`]; with the `parallel` feature disabled
//! everything runs sequentially with identical results.

pub mod basis;
pub mod coarse;
pub mod error;
pub mod imgio;
pub mod indexing;
pub mod model;
pub mod par;
pub mod render;
pub mod sensing;
pub mod solvers;
pub mod synth;
pub mod trials;

pub use basis::{build_basis, BasisSpec};
pub use coarse::{estimate_coarse, CoarseOptions, OrientationField};
pub use error::{Error, Result};
pub use imgio::{load_image, load_mask, BlockMask, GrayImage};
pub use indexing::{extract_feature, FilterMode, IndexStore, SparseFeature};
pub use model::{fit, fit_batch, reconstruct, FitConfig, FitReport, OrientationModel, Variant};
pub use par::Execution;
pub use render::{render_svg, RenderStyle};
