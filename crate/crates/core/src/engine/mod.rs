//! Convolution engines behind one interface: a direct oracle, the 3-stage
//! Winograd pipeline, and the cache-fused task pipeline.

mod buffer;
mod direct;
mod fused;
mod probe;
mod three_stage;

use std::time::Duration;

use serde::{Deserialize, Serialize};

pub use buffer::{buffer_layout, BufferLayout, SharedBuffer};
pub use direct::{conv_direct, DirectEngine};
pub use fused::{conv_fused, FusedEngine};
pub use probe::{BufferProbe, NoProbe, Slot, TagProbe};
pub use three_stage::{conv_three_stage, ThreeStageEngine};

use crate::error::{ConvError, Result};
use crate::tensor::{LayerSpec, Tensor4D};
use crate::winograd::{Rational, WinogradBasis, MAX_TILE, MIN_TILE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EngineKind {
    Direct,
    ThreeStage,
    Fused,
}

impl EngineKind {
    pub const ALL: [EngineKind; 3] = [
        EngineKind::Direct,
        EngineKind::ThreeStage,
        EngineKind::Fused,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EngineKind::Direct => "direct",
            EngineKind::ThreeStage => "three_stage",
            EngineKind::Fused => "fused",
        }
    }
}

impl std::fmt::Display for EngineKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for EngineKind {
    type Err = ConvError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "direct" => Ok(EngineKind::Direct),
            "three_stage" | "three-stage" | "3stage" => Ok(EngineKind::ThreeStage),
            "fused" => Ok(EngineKind::Fused),
            other => Err(ConvError::InvalidParameter(format!(
                "unknown engine `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    pub kind: EngineKind,
    /// Input tile side `T`.
    pub tile: usize,
    /// Tiles per fused task (`R`).
    pub tasks_r: usize,
    pub workers: usize,
    /// Interpolation nodes overriding the default set for `tile`.
    pub points: Option<Vec<Rational>>,
    /// Track shared-buffer ownership and count overwrite violations (fused only).
    pub instrument: bool,
    /// Warn when a worker's shared buffer exceeds this many bytes (fused only).
    pub l2_budget_bytes: Option<usize>,
    /// Claim fused tasks in a seeded shuffled order instead of ascending.
    pub task_shuffle_seed: Option<u64>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            kind: EngineKind::Fused,
            tile: 7,
            tasks_r: 24,
            workers: default_workers(),
            points: None,
            instrument: false,
            l2_budget_bytes: None,
            task_shuffle_seed: None,
        }
    }
}

impl EngineConfig {
    pub fn new(kind: EngineKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    pub fn with_tile(mut self, tile: usize) -> Self {
        self.tile = tile;
        self
    }

    pub fn with_r(mut self, r: usize) -> Self {
        self.tasks_r = r;
        self
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers;
        self
    }

    pub fn instrumented(mut self) -> Self {
        self.instrument = true;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 {
            return Err(ConvError::InvalidParameter(
                "worker count must be >= 1".into(),
            ));
        }
        if self.kind == EngineKind::Direct {
            return Ok(());
        }
        if !(MIN_TILE..=MAX_TILE).contains(&self.tile) {
            return Err(ConvError::UnsupportedTile(self.tile));
        }
        if self.kind == EngineKind::Fused && self.tasks_r == 0 {
            return Err(ConvError::InvalidParameter("R must be >= 1".into()));
        }
        Ok(())
    }

    pub fn basis(&self, kernel: usize) -> Result<WinogradBasis> {
        match &self.points {
            Some(points) => WinogradBasis::new(self.tile, kernel, points),
            None => WinogradBasis::with_default_points(self.tile, kernel),
        }
    }

    pub(crate) fn pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
            .map_err(|e| ConvError::InvalidParameter(format!("thread pool: {e}")))
    }
}

pub fn default_workers() -> usize {
    std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConvStats {
    pub wall: Duration,
    /// Per-stage wall times (3-stage) or per-phase times summed over workers (fused).
    pub phases: Vec<(String, Duration)>,
    pub flops: u64,
    pub tasks: usize,
    /// Bytes of intermediate storage allocated for the call (3-stage matrices or
    /// all fused shared buffers).
    pub intermediate_bytes: usize,
    pub overwrite_violations: u64,
    /// `(task, flops)` for every fused task, recorded only in instrumented mode.
    pub task_flops: Vec<(usize, u64)>,
    pub warnings: Vec<String>,
}

/// A configured convolution for one layer; kernels are prepared at construction.
pub trait ConvEngine: Send {
    fn kind(&self) -> EngineKind;
    fn spec(&self) -> &LayerSpec;
    fn run(&mut self, input: &Tensor4D) -> Result<(Tensor4D, ConvStats)>;
}

/// Build an engine for `spec`, transforming `kernels` up front.
pub fn build_engine(
    config: &EngineConfig,
    spec: LayerSpec,
    kernels: &Tensor4D,
) -> Result<Box<dyn ConvEngine>> {
    Ok(match config.kind {
        EngineKind::Direct => Box::new(DirectEngine::new(config, spec, kernels)?),
        EngineKind::ThreeStage => Box::new(ThreeStageEngine::new(config, spec, kernels)?),
        EngineKind::Fused => Box::new(FusedEngine::new(config, spec, kernels)?),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        assert!(EngineConfig::default().validate().is_ok());
        assert!(EngineConfig::default().with_tile(9).validate().is_err());
        assert!(EngineConfig::default().with_r(0).validate().is_err());
        assert!(EngineConfig::new(EngineKind::ThreeStage)
            .with_r(0)
            .validate()
            .is_ok());
        assert!(EngineConfig::default().with_workers(0).validate().is_err());
    }

    #[test]
    fn engine_names_parse() {
        for kind in EngineKind::ALL {
            assert_eq!(kind.name().parse::<EngineKind>().unwrap(), kind);
        }
        assert!("fft".parse::<EngineKind>().is_err());
    }
}
