//! Winograd convolution for CPUs with three interchangeable engines: a direct
//! oracle, the classic 3-stage pipeline, and a cache-fused task pipeline whose
//! kernel matrices stay in the shared last-level cache while each worker keeps
//! its intermediates in one private scratch buffer. The [`roofline`] module
//! plans the task size, and [`bench`] drives layer sweeps.

pub mod bench;
pub mod engine;
pub mod error;
pub mod roofline;
pub mod tensor;
pub mod tile;
pub mod transform;
pub mod winograd;

pub use engine::{
    build_engine, conv_direct, conv_fused, conv_three_stage, ConvEngine, ConvStats, EngineConfig,
    EngineKind,
};
pub use error::{ConvError, Result};
pub use tensor::{Fill, LayerSpec, Tensor4D};
pub use tile::TilePlan;
pub use transform::{transform_kernels, KernelPack};
pub use winograd::{default_points, Rational, WinogradBasis};

/// `max |a - b| / max |b|`: error normalized by the reference's largest magnitude.
pub fn max_relative_error(actual: &[f32], reference: &[f32]) -> f64 {
    assert_eq!(actual.len(), reference.len());
    let scale = reference
        .iter()
        .fold(0.0f64, |m, &v| m.max((v as f64).abs()));
    let diff = actual
        .iter()
        .zip(reference)
        .fold(0.0f64, |m, (&a, &b)| m.max((a as f64 - b as f64).abs()));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}
