//! Roofline model of the fused pipeline and selection of the task size `R`.
//!
//! Per task, the multiplications cost `α · 2 R C C' T²` FLOPs (`α = 1` for
//! Winograd, `2` for FFT). They stream `4 C C' T²` bytes of kernel matrices from
//! L3, and the transforms move `4 R T² (C + C')` bytes to and from main memory.
//! A level is compute-bound when its arithmetic intensity reaches the machine's
//! compute-to-memory ratio (CMR) for that level.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::engine::BufferLayout;
use crate::tensor::LayerSpec;

pub const WINOGRAD_ALPHA: f64 = 1.0;
pub const FFT_ALPHA: f64 = 2.0;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("machine model: {0}")]
    Parse(toml::de::Error),
    #[error("machine model field `{0}` must be positive")]
    NonPositive(&'static str),
    #[error("reading machine model: {0}")]
    Io(std::io::Error),
}

impl From<std::io::Error> for ModelError {
    fn from(e: std::io::Error) -> Self {
        ModelError::Io(e)
    }
}

impl From<toml::de::Error> for ModelError {
    fn from(e: toml::de::Error) -> Self {
        ModelError::Parse(e)
    }
}

/// Machine description for planning. Values are measured or taken from data sheets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MachineModel {
    pub name: String,
    pub peak_flops: f64,
    pub mem_bandwidth_bytes_per_s: f64,
    pub l3_bandwidth_bytes_per_s: f64,
    pub l2_bytes_per_core: u64,
    pub l3_bytes: u64,
    pub cores: u32,
}

impl MachineModel {
    pub fn from_toml(text: &str) -> Result<Self, ModelError> {
        let model: Self = toml::from_str(text)?;
        model.validate()?;
        Ok(model)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("machine model serializes")
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let checks = [
            ("peak_flops", self.peak_flops > 0.0),
            (
                "mem_bandwidth_bytes_per_s",
                self.mem_bandwidth_bytes_per_s > 0.0,
            ),
            (
                "l3_bandwidth_bytes_per_s",
                self.l3_bandwidth_bytes_per_s > 0.0,
            ),
            ("l2_bytes_per_core", self.l2_bytes_per_core > 0),
            ("l3_bytes", self.l3_bytes > 0),
            ("cores", self.cores > 0),
        ];
        match checks.iter().find(|(_, ok)| !ok) {
            Some((field, _)) => Err(ModelError::NonPositive(field)),
            None => Ok(()),
        }
    }

    pub fn cmr_mem(&self) -> f64 {
        self.peak_flops / self.mem_bandwidth_bytes_per_s
    }

    pub fn cmr_l3(&self) -> f64 {
        self.peak_flops / self.l3_bandwidth_bytes_per_s
    }

    /// Sample model of an 18-core AVX-512 desktop (CMR 35 to memory, 10 to L3).
    pub fn skylakex() -> Self {
        Self::from_toml(include_str!("../machines/skylakex.toml")).expect("bundled model")
    }

    /// Sample model of a 4-core AVX2 laptop (CMR 13 to memory, 4 to L3).
    pub fn i7() -> Self {
        Self::from_toml(include_str!("../machines/i7.toml")).expect("bundled model")
    }
}

/// Bytes of kernel matrices, `4 C C' T²`, and whether they fit in `occupancy` of L3.
pub fn l3_fit(c: usize, c_out: usize, tile: usize, l3_bytes: u64, occupancy: f64) -> (bool, u64) {
    let required = 4 * (c * c_out * tile * tile) as u64;
    (required as f64 <= occupancy * l3_bytes as f64, required)
}

/// Arithmetic intensity of a task against L3: `α · R / 2`.
pub fn ai_l3(r: usize, alpha: f64) -> f64 {
    alpha * r as f64 / 2.0
}

/// Smallest `R` whose L3 intensity reaches `cmr_l3`.
pub fn r_lower_bound(cmr_l3: f64, alpha: f64) -> usize {
    let exact = 2.0 * cmr_l3 / alpha;
    // Absorb representation error so that e.g. a CMR of exactly 10 gives 20.
    ((exact - 1e-9 * exact.max(1.0)).ceil() as usize).max(1)
}

/// Arithmetic intensity against main memory: `C C' / (2 (C + C'))`.
pub fn ai_mem(c: usize, c_out: usize) -> f64 {
    (c * c_out) as f64 / (2.0 * (c + c_out) as f64)
}

/// `min(C, C') / 4`, a lower bound on [`ai_mem`].
pub fn ai_mem_lower(c: usize, c_out: usize) -> f64 {
    c.min(c_out) as f64 / 4.0
}

/// Float elements of L2 available to the shared buffer: `fraction · l2 / 4`.
pub fn l2_element_budget(l2_bytes: u64, fraction: f64) -> u64 {
    (fraction * l2_bytes as f64 / 4.0).floor() as u64
}

/// Largest `R` with `R · max(C, C') · (T² + 1) <= fraction · l2 / 4`; zero if none.
pub fn r_upper_bound(c: usize, c_out: usize, tile: usize, l2_bytes: u64, fraction: f64) -> usize {
    let per_r = (c.max(c_out) * (tile * tile + 1)) as u64;
    (l2_element_budget(l2_bytes, fraction) / per_r) as usize
}

/// Cache occupancy fractions used by the planner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanOptions {
    pub l2_fraction: f64,
    pub l3_fraction: f64,
}

impl Default for PlanOptions {
    fn default() -> Self {
        Self {
            l2_fraction: 0.5,
            l3_fraction: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanReport {
    pub machine: String,
    pub layer: LayerSpec,
    pub tile: usize,
    pub alpha: f64,
    pub l3_fits: bool,
    pub l3_required_bytes: u64,
    pub r_lower: usize,
    pub r_upper: usize,
    pub chosen_r: usize,
    /// `r_lower <= r_upper`.
    pub r_feasible: bool,
    /// Shared-buffer bytes per worker at `chosen_r`.
    pub buffer_bytes: usize,
    pub utilization_l3: f64,
    pub utilization_mem: f64,
    pub utilization: f64,
}

impl PlanReport {
    /// Kernel matrices fit in L3 and some `R` satisfies both bounds.
    pub fn feasible(&self) -> bool {
        self.l3_fits && self.r_feasible
    }
}

/// Plan with the default occupancy fractions.
pub fn plan(layer: &LayerSpec, tile: usize, machine: &MachineModel, alpha: f64) -> PlanReport {
    plan_with(layer, tile, machine, alpha, PlanOptions::default())
}

/// Pick the largest `R` the L2 bound admits and predict utilization at it.
///
/// When no `R >= 1` fits in L2 the plan falls back to `R = 1` and is marked infeasible.
pub fn plan_with(
    layer: &LayerSpec,
    tile: usize,
    machine: &MachineModel,
    alpha: f64,
    opts: PlanOptions,
) -> PlanReport {
    let (c, c_out) = (layer.in_channels, layer.out_channels);
    let (l3_fits, l3_required_bytes) = l3_fit(c, c_out, tile, machine.l3_bytes, opts.l3_fraction);
    let r_lower = r_lower_bound(machine.cmr_l3(), alpha);
    let r_upper = r_upper_bound(c, c_out, tile, machine.l2_bytes_per_core, opts.l2_fraction);
    let chosen_r = r_upper.max(1);
    let utilization_l3 = (ai_l3(chosen_r, alpha) / machine.cmr_l3()).min(1.0);
    let utilization_mem = (alpha * ai_mem(c, c_out) / machine.cmr_mem()).min(1.0);
    PlanReport {
        machine: machine.name.clone(),
        layer: *layer,
        tile,
        alpha,
        l3_fits,
        l3_required_bytes,
        r_lower,
        r_upper,
        chosen_r,
        r_feasible: r_upper >= 1 && r_lower <= r_upper,
        buffer_bytes: BufferLayout::new(chosen_r, c, c_out, tile).capacity,
        utilization_l3,
        utilization_mem,
        utilization: utilization_l3.min(utilization_mem),
    }
}

impl fmt::Display for PlanReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let l = &self.layer;
        writeln!(f, "machine        {}", self.machine)?;
        writeln!(
            f,
            "layer          B={} C={} C'={} D={} W={} K={} pad={}/{}",
            l.batch,
            l.in_channels,
            l.out_channels,
            l.in_height,
            l.in_width,
            l.kernel,
            l.pad_lo,
            l.pad_hi
        )?;
        writeln!(f, "tile           T={} alpha={}", self.tile, self.alpha)?;
        writeln!(
            f,
            "l3_fit         {} ({} bytes of kernel matrices)",
            self.l3_fits, self.l3_required_bytes
        )?;
        writeln!(f, "r_lower        {}", self.r_lower)?;
        writeln!(f, "r_upper        {}", self.r_upper)?;
        writeln!(
            f,
            "chosen_r       {} (shared buffer {} bytes)",
            self.chosen_r, self.buffer_bytes
        )?;
        writeln!(f, "util_l3        {:.3}", self.utilization_l3)?;
        writeln!(f, "util_mem       {:.3}", self.utilization_mem)?;
        writeln!(f, "utilization    {:.3}", self.utilization)?;
        write!(f, "feasible       {}", self.feasible())
    }
}
