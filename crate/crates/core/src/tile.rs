//! Overlap-add tiling: output tiles of side `T'` abut, input tiles of side `T`
//! overlap by `K - 1`. Padding is implicit, out-of-range input reads as zero.

use crate::error::{ConvError, Result};
use crate::tensor::{LayerSpec, Tensor4D};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TileCoord {
    pub index: usize,
    pub batch: usize,
    pub row: usize,
    pub col: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TilePlan {
    pub spec: LayerSpec,
    pub tile: usize,
    pub out_tile: usize,
    pub tiles_y: usize,
    pub tiles_x: usize,
    pub n_tile: usize,
}

impl TilePlan {
    pub fn new(spec: LayerSpec, tile: usize) -> Result<Self> {
        spec.validate()?;
        if tile <= spec.kernel {
            return Err(ConvError::InvalidParameter(format!(
                "tile side {tile} must exceed kernel side {}",
                spec.kernel
            )));
        }
        let out_tile = tile - spec.kernel + 1;
        let (d, w) = spec.output_dims();
        let tiles_y = d.div_ceil(out_tile);
        let tiles_x = w.div_ceil(out_tile);
        Ok(Self {
            spec,
            tile,
            out_tile,
            tiles_y,
            tiles_x,
            n_tile: spec.batch * tiles_y * tiles_x,
        })
    }

    /// Decode a linear tile index (batch-major, then row, then column).
    #[inline]
    pub fn coord(&self, index: usize) -> TileCoord {
        debug_assert!(index < self.n_tile);
        let per_image = self.tiles_y * self.tiles_x;
        let rem = index % per_image;
        TileCoord {
            index,
            batch: index / per_image,
            row: rem / self.tiles_x,
            col: rem % self.tiles_x,
        }
    }

    #[inline]
    pub fn encode(&self, batch: usize, row: usize, col: usize) -> usize {
        (batch * self.tiles_y + row) * self.tiles_x + col
    }

    /// Top-left input coordinate of the tile's `T x T` window (may be negative).
    #[inline]
    pub fn input_origin(&self, t: TileCoord) -> (isize, isize) {
        let pad = self.spec.pad_lo as isize;
        (
            (t.row * self.out_tile) as isize - pad,
            (t.col * self.out_tile) as isize - pad,
        )
    }

    #[inline]
    pub fn output_origin(&self, t: TileCoord) -> (usize, usize) {
        (t.row * self.out_tile, t.col * self.out_tile)
    }
}

/// Copy the `T x T` input window of tile `t`, channel `c` into `dst`, zero-filling
/// positions outside the input.
pub fn gather_input_tile(
    input: &Tensor4D,
    plan: &TilePlan,
    t: TileCoord,
    c: usize,
    dst: &mut [f32],
) {
    let n = plan.tile;
    debug_assert_eq!(dst.len(), n * n);
    let [_, _, height, width] = input.dims();
    let plane = input.plane(t.batch, c);
    let (oy, ox) = plan.input_origin(t);
    let x_lo = (-ox).clamp(0, n as isize) as usize;
    let x_hi = (width as isize - ox).clamp(0, n as isize) as usize;
    for (i, row) in dst.chunks_exact_mut(n).enumerate() {
        let y = oy + i as isize;
        if y < 0 || y >= height as isize || x_lo >= x_hi {
            row.fill(0.0);
            continue;
        }
        row[..x_lo].fill(0.0);
        row[x_hi..].fill(0.0);
        let start = y as usize * width + (ox + x_lo as isize) as usize;
        row[x_lo..x_hi].copy_from_slice(&plane[start..start + (x_hi - x_lo)]);
    }
}

/// Raw, shareable handle to an output tensor. Writes through it are only sound
/// when concurrent callers target disjoint tiles.
#[derive(Clone, Copy)]
pub(crate) struct OutputView {
    ptr: *mut f32,
    dims: [usize; 4],
}

// SAFETY: the view is only used for writes to disjoint tile regions.
unsafe impl Send for OutputView {}
unsafe impl Sync for OutputView {}

impl OutputView {
    pub(crate) fn new(output: &mut Tensor4D) -> Self {
        Self {
            ptr: output.as_mut_ptr(),
            dims: output.dims(),
        }
    }

    /// # Safety
    /// No other thread may write the same `(tile, channel)` region concurrently,
    /// and the tensor must outlive the view.
    pub(crate) unsafe fn scatter(&self, plan: &TilePlan, t: TileCoord, c_out: usize, tile: &[f32]) {
        let n = plan.out_tile;
        debug_assert_eq!(tile.len(), n * n);
        let [_, channels, height, width] = self.dims;
        debug_assert!(t.batch < self.dims[0] && c_out < channels);
        let (oy, ox) = plan.output_origin(t);
        let rows = n.min(height - oy);
        let cols = n.min(width - ox);
        let base = (t.batch * channels + c_out) * height * width;
        for i in 0..rows {
            let dst = self.ptr.add(base + (oy + i) * width + ox);
            std::ptr::copy_nonoverlapping(tile.as_ptr().add(i * n), dst, cols);
        }
    }
}

/// Store the valid part of a `T' x T'` result tile at its output location.
pub fn scatter_output_tile(
    output: &mut Tensor4D,
    plan: &TilePlan,
    t: TileCoord,
    c_out: usize,
    tile: &[f32],
) {
    let (d, w) = plan.spec.output_dims();
    assert_eq!(
        output.dims(),
        [plan.spec.batch, output.dims()[1], d, w],
        "output does not match plan"
    );
    assert!(t.index < plan.n_tile && c_out < output.dims()[1]);
    let view = OutputView::new(output);
    // SAFETY: exclusive borrow of `output` for the duration of the call.
    unsafe { view.scatter(plan, t, c_out, tile) }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Fill;
    use proptest::prelude::*;

    fn enumerate_tiles(spec: LayerSpec, out_tile: usize) -> usize {
        // Count tile origins needed to touch every output cell.
        let (d, w) = spec.output_dims();
        let mut ys = std::collections::BTreeSet::new();
        let mut xs = std::collections::BTreeSet::new();
        for y in 0..d {
            ys.insert(y / out_tile);
        }
        for x in 0..w {
            xs.insert(x / out_tile);
        }
        spec.batch * ys.len() * xs.len()
    }

    #[test]
    fn plan_counts() {
        let resnet = LayerSpec::square(64, 64, 64, 56, 3, 1);
        let p = TilePlan::new(resnet, 7).unwrap();
        assert_eq!(
            (p.out_tile, p.tiles_y, p.tiles_x, p.n_tile),
            (5, 12, 12, 9216)
        );
        assert_eq!(enumerate_tiles(resnet, 5), 9216);

        let single = TilePlan::new(LayerSpec::square(1, 1, 1, 5, 3, 0), 7).unwrap();
        assert_eq!((single.tiles_y, single.tiles_x, single.n_tile), (1, 1, 1));

        let vgg = LayerSpec::square(64, 64, 64, 224, 3, 1);
        let p = TilePlan::new(vgg, 7).unwrap();
        assert_eq!((p.tiles_y, p.tiles_x, p.n_tile), (45, 45, 129_600));
        assert_eq!(enumerate_tiles(vgg, 5), 129_600);
    }

    #[test]
    fn plan_rejects_small_tile() {
        let spec = LayerSpec::square(1, 1, 1, 8, 3, 0);
        assert!(matches!(
            TilePlan::new(spec, 3),
            Err(ConvError::InvalidParameter(_))
        ));
    }

    #[test]
    fn coord_round_trip() {
        let p = TilePlan::new(LayerSpec::square(3, 1, 1, 13, 3, 1), 5).unwrap();
        for i in 0..p.n_tile {
            let t = p.coord(i);
            assert_eq!(p.encode(t.batch, t.row, t.col), i);
        }
    }

    #[test]
    fn gather_with_padding() {
        let spec = LayerSpec::square(1, 1, 1, 3, 3, 1);
        let input = Tensor4D::new(spec.input_dims(), Fill::Value(1.0)).unwrap();
        let plan = TilePlan::new(spec, 4).unwrap();
        let mut tile = [9.0; 16];
        gather_input_tile(&input, &plan, plan.coord(0), 0, &mut tile);
        #[rustfmt::skip]
        let want = [0., 0., 0., 0.,
                    0., 1., 1., 1.,
                    0., 1., 1., 1.,
                    0., 1., 1., 1.];
        assert_eq!(tile, want);
    }

    #[test]
    fn gather_interior_is_plain_copy() {
        let spec = LayerSpec::square(1, 2, 1, 20, 3, 0);
        let input = Tensor4D::new(spec.input_dims(), Fill::Random(5)).unwrap();
        let plan = TilePlan::new(spec, 6).unwrap();
        let t = plan.coord(plan.encode(0, 1, 2));
        let mut tile = [0.0; 36];
        gather_input_tile(&input, &plan, t, 1, &mut tile);
        for i in 0..6 {
            for j in 0..6 {
                assert_eq!(tile[i * 6 + j], input.get([0, 1, 4 + i, 8 + j]));
            }
        }
    }

    #[test]
    fn gather_bottom_right_edge() {
        let spec = LayerSpec::square(1, 1, 1, 56, 3, 1);
        let input = Tensor4D::new(spec.input_dims(), Fill::Random(1)).unwrap();
        let plan = TilePlan::new(spec, 7).unwrap();
        let t = plan.coord(plan.encode(0, 11, 11));
        assert_eq!(plan.input_origin(t), (54, 54));
        let mut tile = [0.0; 49];
        gather_input_tile(&input, &plan, t, 0, &mut tile);
        for i in 0..7 {
            for j in 0..7 {
                let want = if i < 2 && j < 2 {
                    input.get([0, 0, 54 + i, 54 + j])
                } else {
                    0.0
                };
                assert_eq!(tile[i * 7 + j], want, "({i},{j})");
            }
        }
    }

    #[test]
    fn scatter_clips_edge_tile() {
        let spec = LayerSpec::square(1, 1, 1, 56, 3, 1);
        let plan = TilePlan::new(spec, 7).unwrap();
        let mut out = Tensor4D::zeros(spec.output_tensor_dims()).unwrap();
        let tile: Vec<f32> = (1..=25).map(|v| v as f32).collect();
        let t = plan.coord(plan.encode(0, 11, 0));
        scatter_output_tile(&mut out, &plan, t, 0, &tile);
        let written: Vec<_> = (0..out.len())
            .filter(|&i| out.data()[i] != 0.0)
            .map(|i| out.unflatten(i))
            .collect();
        assert_eq!(written.len(), 5);
        assert!(written.iter().all(|idx| idx[2] == 55 && idx[3] < 5));
        assert_eq!(out.get([0, 0, 55, 0]), 1.0);
    }

    fn padded_copy(input: &Tensor4D, spec: &LayerSpec, extra: usize) -> (Vec<f32>, usize, usize) {
        let h = spec.in_height + spec.pad_lo + spec.pad_hi + extra;
        let w = spec.in_width + spec.pad_lo + spec.pad_hi + extra;
        let mut v = vec![0.0; h * w];
        for y in 0..spec.in_height {
            for x in 0..spec.in_width {
                v[(y + spec.pad_lo) * w + x + spec.pad_lo] = input.get([0, 0, y, x]);
            }
        }
        (v, h, w)
    }

    proptest! {
        #[test]
        fn gather_matches_explicit_padding(d in 1usize..20, w in 1usize..20, pad in 0usize..3, tile in 4usize..9, seed in 0u64..1000) {
            let spec = LayerSpec { batch: 1, in_channels: 1, out_channels: 1, in_height: d, in_width: w, kernel: 3, pad_lo: pad, pad_hi: pad };
            prop_assume!(spec.validate().is_ok());
            let plan = TilePlan::new(spec, tile).unwrap();
            let input = Tensor4D::new(spec.input_dims(), Fill::Random(seed)).unwrap();
            let (padded, _, pw) = padded_copy(&input, &spec, tile);
            let mut buf = vec![0.0; tile * tile];
            for i in 0..plan.n_tile {
                let t = plan.coord(i);
                gather_input_tile(&input, &plan, t, 0, &mut buf);
                let (oy, ox) = plan.output_origin(t);
                for r in 0..tile {
                    for c in 0..tile {
                        prop_assert_eq!(buf[r * tile + c], padded[(oy + r) * pw + ox + c]);
                    }
                }
            }
        }

        #[test]
        fn scatter_covers_output_once(b in 1usize..3, d in 1usize..25, w in 1usize..25, pad in 0usize..2, tile in 4usize..9) {
            let spec = LayerSpec { batch: b, in_channels: 1, out_channels: 1, in_height: d, in_width: w, kernel: 3, pad_lo: pad, pad_hi: pad };
            prop_assume!(spec.validate().is_ok());
            let plan = TilePlan::new(spec, tile).unwrap();
            let n = plan.out_tile;
            let mut counts = vec![0u32; spec.output_tensor_dims().iter().product()];
            for i in 0..plan.n_tile {
                let mut out = Tensor4D::zeros(spec.output_tensor_dims()).unwrap();
                scatter_output_tile(&mut out, &plan, plan.coord(i), 0, &vec![1.0; n * n]);
                for (cnt, v) in counts.iter_mut().zip(out.data()) {
                    *cnt += *v as u32;
                }
            }
            prop_assert!(counts.iter().all(|&c| c == 1));
        }
    }
}
