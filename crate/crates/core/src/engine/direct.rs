//! Direct cross-correlation with implicit zero padding; the ground-truth oracle.

use std::time::Instant;

use rayon::prelude::*;

use super::{ConvEngine, ConvStats, EngineConfig, EngineKind};
use crate::error::Result;
use crate::tensor::{LayerSpec, Tensor4D};

/// `out[b, c'] = sum_c in[b, c] ⋆ w[c', c]`, accumulated in f64 and rounded on store.
pub fn conv_direct(
    input: &Tensor4D,
    kernels: &Tensor4D,
    spec: &LayerSpec,
) -> Result<(Tensor4D, ConvStats)> {
    DirectEngine::with_pool(None, *spec, kernels)?.run(input)
}

pub struct DirectEngine {
    spec: LayerSpec,
    kernels: Tensor4D,
    pool: Option<rayon::ThreadPool>,
}

impl DirectEngine {
    pub fn new(config: &EngineConfig, spec: LayerSpec, kernels: &Tensor4D) -> Result<Self> {
        config.validate()?;
        Self::with_pool(Some(config.pool()?), spec, kernels)
    }

    fn with_pool(
        pool: Option<rayon::ThreadPool>,
        spec: LayerSpec,
        kernels: &Tensor4D,
    ) -> Result<Self> {
        spec.validate()?;
        spec.check_kernels(kernels)?;
        Ok(Self {
            spec,
            kernels: kernels.clone(),
            pool,
        })
    }

    fn plane(&self, input: &Tensor4D, b: usize, co: usize, out: &mut [f32], acc: &mut [f64]) {
        let s = &self.spec;
        let (dh, dw) = s.output_dims();
        let k = s.kernel;
        let pad = s.pad_lo as isize;
        acc.fill(0.0);
        for c in 0..s.in_channels {
            let src = input.plane(b, c);
            let w = self.kernels.plane(co, c);
            for ky in 0..k {
                // Output rows whose input row y + ky - pad is inside the image.
                let y_lo = (pad - ky as isize).max(0) as usize;
                let y_hi = ((s.in_height as isize + pad - ky as isize).max(0) as usize).min(dh);
                for kx in 0..k {
                    let wv = w[ky * k + kx] as f64;
                    let x_lo = (pad - kx as isize).max(0) as usize;
                    let x_hi = ((s.in_width as isize + pad - kx as isize).max(0) as usize).min(dw);
                    if x_lo >= x_hi {
                        continue;
                    }
                    for y in y_lo..y_hi {
                        let iy = (y + ky) as isize - pad;
                        let row = &src[iy as usize * s.in_width..][..s.in_width];
                        let base = (x_lo + kx) as isize - pad;
                        let srow = &row[base as usize..base as usize + (x_hi - x_lo)];
                        for (a, &v) in acc[y * dw + x_lo..y * dw + x_hi].iter_mut().zip(srow) {
                            *a += wv * v as f64;
                        }
                    }
                }
            }
        }
        for (o, &a) in out.iter_mut().zip(acc.iter()) {
            *o = a as f32;
        }
    }
}

impl ConvEngine for DirectEngine {
    fn kind(&self) -> EngineKind {
        EngineKind::Direct
    }

    fn spec(&self) -> &LayerSpec {
        &self.spec
    }

    fn run(&mut self, input: &Tensor4D) -> Result<(Tensor4D, ConvStats)> {
        self.spec.check_input(input)?;
        let start = Instant::now();
        let s = self.spec;
        let mut output = Tensor4D::zeros(s.output_tensor_dims())?;
        let (dh, dw) = s.output_dims();
        let plane_len = dh * dw;
        let work = |(idx, out): (usize, &mut [f32])| {
            let mut acc = vec![0.0f64; plane_len];
            self.plane(
                input,
                idx / s.out_channels,
                idx % s.out_channels,
                out,
                &mut acc,
            );
        };
        match &self.pool {
            Some(pool) => pool.install(|| {
                output
                    .data_mut()
                    .par_chunks_mut(plane_len)
                    .enumerate()
                    .for_each(work)
            }),
            None => output
                .data_mut()
                .chunks_mut(plane_len)
                .enumerate()
                .for_each(work),
        }
        let flops =
            2 * (s.batch * s.out_channels * plane_len * s.in_channels * s.kernel * s.kernel) as u64;
        let stats = ConvStats {
            wall: start.elapsed(),
            flops,
            ..ConvStats::default()
        };
        Ok((output, stats))
    }
}
