//! Fused task pipeline.
//!
//! Tiles are grouped into tasks of `R`. A worker runs a whole task against its
//! private [`SharedBuffer`]: forward transforms produce the `T²` left-hand
//! matrices, multiplication `i` writes result `i` into space the earlier
//! left-hand matrices no longer need, and the inverse transform scatters the
//! results. The kernel pack is only ever read, so it stays resident in the
//! shared cache across workers.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::buffer::{BufferLayout, SharedBuffer};
use super::probe::{BufferProbe, NoProbe, TagProbe};
use super::three_stage::check_pack;
use super::{ConvEngine, ConvStats, EngineConfig, EngineKind};
use crate::error::Result;
use crate::tensor::{LayerSpec, Tensor4D};
use crate::tile::{OutputView, TilePlan};
use crate::transform::{
    block_flops, forward_one_tile, gemm, inverse_one_tile, transform_kernels, KernelPack,
    StridedWriter, TileScratch,
};
use crate::winograd::WinogradBasis;

pub fn conv_fused(
    input: &Tensor4D,
    pack: &KernelPack,
    spec: &LayerSpec,
    config: &EngineConfig,
) -> Result<(Tensor4D, ConvStats)> {
    FusedEngine::from_pack(config, *spec, pack.clone())?.run(input)
}

struct Worker {
    buffer: SharedBuffer,
    probe: Option<TagProbe>,
    scratch: TileScratch,
    flops: u64,
    tasks: usize,
    task_flops: Vec<(usize, u64)>,
    times: [Duration; 3],
}

pub struct FusedEngine {
    spec: LayerSpec,
    plan: TilePlan,
    basis: WinogradBasis,
    pack: KernelPack,
    r: usize,
    layout: BufferLayout,
    workers: Vec<Worker>,
    pool: rayon::ThreadPool,
    l2_budget: Option<usize>,
    shuffle_seed: Option<u64>,
}

/// Read-only state shared by all workers during one run.
struct TaskCtx<'a> {
    input: &'a Tensor4D,
    output: OutputView,
    plan: &'a TilePlan,
    basis: &'a WinogradBasis,
    pack: &'a KernelPack,
    layout: &'a BufferLayout,
    r: usize,
}

impl FusedEngine {
    pub fn new(config: &EngineConfig, spec: LayerSpec, kernels: &Tensor4D) -> Result<Self> {
        config.validate()?;
        spec.validate()?;
        spec.check_kernels(kernels)?;
        let basis = config.basis(spec.kernel)?;
        let pack = transform_kernels(kernels, &basis)?;
        Self::assemble(config, spec, basis, pack)
    }

    pub fn from_pack(config: &EngineConfig, spec: LayerSpec, pack: KernelPack) -> Result<Self> {
        config.validate()?;
        let basis = config.basis(spec.kernel)?;
        Self::assemble(config, spec, basis, pack)
    }

    fn assemble(
        config: &EngineConfig,
        spec: LayerSpec,
        basis: WinogradBasis,
        pack: KernelPack,
    ) -> Result<Self> {
        let plan = TilePlan::new(spec, config.tile)?;
        check_pack(&pack, &spec, config.tile)?;
        let r = config.tasks_r;
        let layout = BufferLayout::new(r, spec.in_channels, spec.out_channels, config.tile);
        let workers = (0..config.workers)
            .map(|_| Worker {
                buffer: SharedBuffer::new(layout),
                probe: config
                    .instrument
                    .then(|| TagProbe::new(layout.capacity / 4)),
                scratch: TileScratch::new(&basis),
                flops: 0,
                tasks: 0,
                task_flops: Vec::new(),
                times: [Duration::ZERO; 3],
            })
            .collect();
        Ok(Self {
            spec,
            plan,
            basis,
            pack,
            r,
            layout,
            workers,
            pool: config.pool()?,
            l2_budget: config.l2_budget_bytes,
            shuffle_seed: config.task_shuffle_seed,
        })
    }

    pub fn layout(&self) -> &BufferLayout {
        &self.layout
    }

    pub fn n_task(&self) -> usize {
        self.plan.n_tile.div_ceil(self.r)
    }

    /// Total scratch held by all workers.
    pub fn scratch_bytes(&self) -> usize {
        self.workers.len() * self.layout.capacity
    }
}

/// Run task `task` on one worker's buffer; returns FLOPs spent multiplying.
fn run_task<P: BufferProbe>(
    ctx: &TaskCtx<'_>,
    task: usize,
    buf: &mut [f32],
    probe: &mut P,
    scratch: &mut TileScratch,
    times: &mut [Duration; 3],
) -> u64 {
    let plan = ctx.plan;
    let (c, c_out) = (plan.spec.in_channels, plan.spec.out_channels);
    let t2 = plan.tile * plan.tile;
    let first = task * ctx.r;
    let rows = ctx.r.min(plan.n_tile - first);
    let left = |i: usize| ctx.layout.left_offset(i) / 4;
    let result = |i: usize| ctx.layout.result_offset(i) / 4;
    let left_len = rows * c;
    let result_len = rows * c_out;

    let t0 = Instant::now();
    // Left-hand matrices are spaced by the full-task size R*C even when rows < R.
    let writer = StridedWriter::new(buf[left(1)..].as_mut_ptr(), ctx.r * c, c);
    for r in 0..rows {
        // SAFETY: rows < R and the writer spans T² matrices of R*C slots inside `buf`.
        unsafe { forward_one_tile(ctx.input, plan, ctx.basis, first + r, r, writer, scratch) };
    }
    for i in 1..=t2 {
        probe.left_written(i, left(i)..left(i) + left_len);
    }
    let t1 = Instant::now();

    for i in 1..=t2 {
        let (head, tail) = buf.split_at_mut(left(i));
        probe.left_read(i, left(i)..left(i) + left_len);
        probe.result_written(i, result(i)..result(i) + result_len);
        gemm(
            &tail[..left_len],
            ctx.pack.matrix(i - 1),
            &mut head[result(i)..result(i) + result_len],
            rows,
            c,
            c_out,
        );
    }
    let t2_time = Instant::now();

    for i in 1..=t2 {
        probe.result_read(i, result(i)..result(i) + result_len);
    }
    let res: &[f32] = buf;
    let stride = ctx.r * c_out;
    let get = |p: usize, r: usize, co: usize| res[p * stride + r * c_out + co];
    for r in 0..rows {
        // SAFETY: each tile belongs to exactly one task, so output writes are disjoint.
        unsafe { inverse_one_tile(&get, plan, ctx.basis, first + r, r, ctx.output, scratch) };
    }
    let t3 = Instant::now();

    times[0] += t1 - t0;
    times[1] += t2_time - t1;
    times[2] += t3 - t2_time;
    block_flops(rows, c, c_out, plan.tile)
}

impl ConvEngine for FusedEngine {
    fn kind(&self) -> EngineKind {
        EngineKind::Fused
    }

    fn spec(&self) -> &LayerSpec {
        &self.spec
    }

    fn run(&mut self, input: &Tensor4D) -> Result<(Tensor4D, ConvStats)> {
        self.spec.check_input(input)?;
        let start = Instant::now();
        let mut output = Tensor4D::zeros(self.spec.output_tensor_dims())?;
        let n_task = self.n_task();
        let order: Option<Vec<usize>> = self.shuffle_seed.map(|seed| {
            let mut v: Vec<usize> = (0..n_task).collect();
            v.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            v
        });
        let ctx = TaskCtx {
            input,
            output: OutputView::new(&mut output),
            plan: &self.plan,
            basis: &self.basis,
            pack: &self.pack,
            layout: &self.layout,
            r: self.r,
        };
        let cursor = AtomicUsize::new(0);

        for w in &mut self.workers {
            w.flops = 0;
            w.tasks = 0;
            w.task_flops.clear();
            w.times = [Duration::ZERO; 3];
        }
        let workers = &mut self.workers;
        self.pool.scope(|scope| {
            for w in workers.iter_mut() {
                let (ctx, cursor, order) = (&ctx, &cursor, &order);
                scope.spawn(move |_| loop {
                    let k = cursor.fetch_add(1, Ordering::Relaxed);
                    if k >= n_task {
                        break;
                    }
                    let task = order.as_ref().map_or(k, |o| o[k]);
                    let buf = w.buffer.as_mut_slice();
                    let flops = match &mut w.probe {
                        Some(p) => {
                            let f = run_task(ctx, task, buf, p, &mut w.scratch, &mut w.times);
                            w.task_flops.push((task, f));
                            f
                        }
                        None => {
                            run_task(ctx, task, buf, &mut NoProbe, &mut w.scratch, &mut w.times)
                        }
                    };
                    w.flops += flops;
                    w.tasks += 1;
                });
            }
        });

        let mut stats = ConvStats {
            wall: start.elapsed(),
            flops: self.workers.iter().map(|w| w.flops).sum(),
            tasks: self.workers.iter().map(|w| w.tasks).sum(),
            intermediate_bytes: self.scratch_bytes(),
            overwrite_violations: self
                .workers
                .iter()
                .filter_map(|w| w.probe.as_ref())
                .map(|p| p.violations())
                .sum(),
            ..ConvStats::default()
        };
        stats.task_flops = self
            .workers
            .iter()
            .flat_map(|w| w.task_flops.iter().copied())
            .collect();
        stats.task_flops.sort_unstable();
        for (k, name) in ["forward", "multiply", "inverse"].into_iter().enumerate() {
            stats.phases.push((
                name.to_string(),
                self.workers.iter().map(|w| w.times[k]).sum(),
            ));
        }
        if let Some(budget) = self.l2_budget {
            if self.layout.capacity > budget {
                stats.warnings.push(format!(
                    "shared buffer of {} bytes exceeds L2 budget of {budget} bytes",
                    self.layout.capacity
                ));
            }
        }
        Ok((output, stats))
    }
}
