//! Baseline pipeline: transform every tile, run `T²` large multiplications one
//! at a time, then inverse-transform everything. Intermediates scale with `n_tile`.

use std::time::Instant;

use rayon::prelude::*;

use super::{ConvEngine, ConvStats, EngineConfig, EngineKind};
use crate::error::{ConvError, Result};
use crate::tensor::{AlignedVec, LayerSpec, Tensor4D};
use crate::tile::{OutputView, TilePlan};
use crate::transform::{
    block_flops, forward_one_tile, gemm, inverse_one_tile, transform_kernels, KernelPack,
    StridedWriter, TileScratch,
};
use crate::winograd::WinogradBasis;

/// Rows of one stage-2 matmul handed to a worker at a time.
const ROW_BLOCK: usize = 64;

pub fn conv_three_stage(
    input: &Tensor4D,
    pack: &KernelPack,
    spec: &LayerSpec,
    config: &EngineConfig,
) -> Result<(Tensor4D, ConvStats)> {
    ThreeStageEngine::from_pack(config, *spec, pack.clone())?.run(input)
}

pub struct ThreeStageEngine {
    spec: LayerSpec,
    plan: TilePlan,
    basis: WinogradBasis,
    pack: KernelPack,
    pool: rayon::ThreadPool,
}

impl ThreeStageEngine {
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
        Ok(Self {
            spec,
            plan,
            basis,
            pack,
            pool: config.pool()?,
        })
    }

    /// Bytes of the `T²` left-hand and result matrices spanning all tiles.
    pub fn intermediate_bytes(&self) -> usize {
        let t2 = self.plan.tile * self.plan.tile;
        4 * self.plan.n_tile * (self.spec.in_channels + self.spec.out_channels) * t2
    }
}

pub(crate) fn check_pack(pack: &KernelPack, spec: &LayerSpec, tile: usize) -> Result<()> {
    if pack.tile() != tile
        || pack.in_channels() != spec.in_channels
        || pack.out_channels() != spec.out_channels
    {
        return Err(ConvError::ShapeMismatch(format!(
            "kernel pack (T={}, C={}, C'={}) does not match layer (T={tile}, C={}, C'={})",
            pack.tile(),
            pack.in_channels(),
            pack.out_channels(),
            spec.in_channels,
            spec.out_channels
        )));
    }
    Ok(())
}

impl ConvEngine for ThreeStageEngine {
    fn kind(&self) -> EngineKind {
        EngineKind::ThreeStage
    }

    fn spec(&self) -> &LayerSpec {
        &self.spec
    }

    fn run(&mut self, input: &Tensor4D) -> Result<(Tensor4D, ConvStats)> {
        self.spec.check_input(input)?;
        let start = Instant::now();
        let plan = &self.plan;
        let basis = &self.basis;
        let pack = &self.pack;
        let n = plan.n_tile;
        let (c, c_out) = (self.spec.in_channels, self.spec.out_channels);
        let t2 = plan.tile * plan.tile;

        let mut lhs = AlignedVec::try_zeros(t2 * n * c, "3-stage left-hand matrices")?;
        let mut results = AlignedVec::try_zeros(t2 * n * c_out, "3-stage result matrices")?;
        let mut output = Tensor4D::zeros(self.spec.output_tensor_dims())?;
        let mut phases = Vec::with_capacity(3);

        let t0 = Instant::now();
        let writer = StridedWriter::new(lhs.as_mut_ptr(), n * c, c);
        self.pool.install(|| {
            (0..n).into_par_iter().for_each_init(
                || TileScratch::new(basis),
                // SAFETY: each tile index writes only its own row of every matrix.
                |scratch, ti| unsafe {
                    forward_one_tile(input, plan, basis, ti, ti, writer, scratch)
                },
            )
        });
        phases.push(("forward".to_string(), t0.elapsed()));

        let t0 = Instant::now();
        for p in 0..t2 {
            let a = &lhs[p * n * c..(p + 1) * n * c];
            let b = pack.matrix(p);
            let out = &mut results[p * n * c_out..(p + 1) * n * c_out];
            self.pool.install(|| {
                out.par_chunks_mut(ROW_BLOCK * c_out)
                    .enumerate()
                    .for_each(|(blk, dst)| {
                        let rows = dst.len() / c_out;
                        gemm(&a[blk * ROW_BLOCK * c..], b, dst, rows, c, c_out);
                    })
            });
        }
        phases.push(("multiply".to_string(), t0.elapsed()));

        let t0 = Instant::now();
        let view = OutputView::new(&mut output);
        let res: &[f32] = &results;
        let get = |p: usize, r: usize, co: usize| res[(p * n + r) * c_out + co];
        self.pool.install(|| {
            (0..n).into_par_iter().for_each_init(
                || TileScratch::new(basis),
                // SAFETY: output tiles are disjoint.
                |scratch, ti| unsafe { inverse_one_tile(&get, plan, basis, ti, ti, view, scratch) },
            )
        });
        phases.push(("inverse".to_string(), t0.elapsed()));

        let stats = ConvStats {
            wall: start.elapsed(),
            phases,
            flops: block_flops(n, c, c_out, plan.tile),
            tasks: 0,
            intermediate_bytes: (lhs.len() + results.len()) * 4,
            ..ConvStats::default()
        };
        Ok((output, stats))
    }
}
