//! Low-light enhancement driven by the bright channel prior, with a
//! thermal-derived spatial attention map.
//!
//! The crate is `no_std` (it only needs `alloc`). Everything here is a pure
//! function over immutable inputs; file formats and the command-line front
//! end live in the companion `bcpnet` crate.
//!
//! Pipeline, in order:
//!
//! 1. [`prior::estimate_ambient`] picks the ambient light from the darkest
//!    pixels of the visible frame.
//! 2. [`prior::initial_illumination`] turns the patch-wise bright channel
//!    into a coarse illumination map.
//! 3. [`attention::build_attention`] raises the thermal V channel to a power.
//! 4. The coarse map is refined either by [`solver::refine_illumination`]
//!    (direct minimization of the matting-regularized quadratic) or by the
//!    small attention-gated encoder-decoder in [`net`].
//! 5. [`enhance::recover`] inverts the image formation model.
#![no_std]
// `!(x >= lo)` rejects NaN along with out-of-range values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(feature = "std")]
extern crate std;

pub mod attention;
pub mod detector;
pub mod enhance;
mod error;
pub mod image;
pub mod laplacian;
pub mod net;
pub mod prior;
pub mod solver;

pub use attention::AttentionMap;
pub use enhance::{
    enhance_pair, enhance_pair_observed, recover, resynthesize, PipelineConfig, PipelineOutput,
    SolverChoice, Stage,
};
pub use error::{Error, Result};
pub use image::{PixelIndex, RasterImage};
pub use laplacian::{LossBreakdown, SparseAffinity};
pub use prior::{AmbientLight, IlluminationMap, PatchSpec};
