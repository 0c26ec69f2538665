//! Applying a Winograd basis: kernel packing, forward/inverse tile transforms
//! and the per-position matrix multiplication.

use std::ops::Range;

use crate::error::{ConvError, Result};
use crate::tensor::{AlignedVec, Tensor4D};
use crate::tile::{gather_input_tile, OutputView, TilePlan};
use crate::winograd::WinogradBasis;

/// The `T²` transformed kernel matrices, laid out `[p][c][c']`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelPack {
    tile: usize,
    in_channels: usize,
    out_channels: usize,
    data: AlignedVec,
}

impl KernelPack {
    pub fn tile(&self) -> usize {
        self.tile
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn positions(&self) -> usize {
        self.tile * self.tile
    }

    /// Right-hand matrix for tile position `p`, row-major `C x C'`.
    #[inline]
    pub fn matrix(&self, p: usize) -> &[f32] {
        let sz = self.in_channels * self.out_channels;
        &self.data[p * sz..(p + 1) * sz]
    }

    #[inline]
    pub fn at(&self, p: usize, c: usize, c_out: usize) -> f32 {
        self.matrix(p)[c * self.out_channels + c_out]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn bytes(&self) -> usize {
        self.data.len() * 4
    }
}

/// Transform `C' x C x K x K` kernels into `G w Gᵀ` per channel pair, evaluated in f64.
pub fn transform_kernels(kernels: &Tensor4D, basis: &WinogradBasis) -> Result<KernelPack> {
    let [c_out, c_in, kh, kw] = kernels.dims();
    let k = basis.kernel();
    if kh != k || kw != k {
        return Err(ConvError::ShapeMismatch(format!(
            "kernel {kh}x{kw} does not match basis kernel side {k}"
        )));
    }
    let t = basis.tile();
    let positions = t * t;
    let g = basis.g_f64();
    let mut data = AlignedVec::try_zeros(positions * c_in * c_out, "kernel pack")?;
    let mut gw = vec![0.0f64; t * k];
    for co in 0..c_out {
        for ci in 0..c_in {
            let w = kernels.plane(co, ci);
            for i in 0..t {
                for j in 0..k {
                    gw[i * k + j] = (0..k).map(|l| g[i * k + l] * w[l * k + j] as f64).sum();
                }
            }
            for i in 0..t {
                for j in 0..t {
                    let v: f64 = (0..k).map(|l| gw[i * k + l] * g[j * k + l]).sum();
                    data[((i * t + j) * c_in + ci) * c_out + co] = v as f32;
                }
            }
        }
    }
    Ok(KernelPack {
        tile: t,
        in_channels: c_in,
        out_channels: c_out,
        data,
    })
}

/// `T²` row-major matrices of `rows x cols`, matrix `p` starting at `p * stride`.
///
/// Used both for left-hand blocks (`cols = C`) and result blocks (`cols = C'`).
#[derive(Debug)]
pub struct MatrixSet<'a> {
    data: &'a mut [f32],
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub stride: usize,
}

pub type LeftHandBlock<'a> = MatrixSet<'a>;

impl<'a> MatrixSet<'a> {
    pub fn new(data: &'a mut [f32], count: usize, rows: usize, cols: usize, stride: usize) -> Self {
        assert!(
            rows >= 1 && stride >= rows * cols,
            "matrix stride too small"
        );
        assert!(
            data.len() >= (count - 1) * stride + rows * cols,
            "matrix set exceeds storage"
        );
        Self {
            data,
            count,
            rows,
            cols,
            stride,
        }
    }

    /// Densely packed set (`stride = rows * cols`).
    pub fn packed(data: &'a mut [f32], count: usize, rows: usize, cols: usize) -> Self {
        Self::new(data, count, rows, cols, rows * cols)
    }

    #[inline]
    pub fn matrix(&self, p: usize) -> &[f32] {
        &self.data[p * self.stride..][..self.rows * self.cols]
    }

    #[inline]
    pub fn matrix_mut(&mut self, p: usize) -> &mut [f32] {
        &mut self.data[p * self.stride..][..self.rows * self.cols]
    }

    #[inline]
    pub fn at(&self, p: usize, r: usize, c: usize) -> f32 {
        self.matrix(p)[r * self.cols + c]
    }

    pub(crate) fn writer(&mut self) -> StridedWriter {
        StridedWriter {
            ptr: self.data.as_mut_ptr(),
            stride: self.stride,
            cols: self.cols,
        }
    }
}

/// Raw write handle into a strided matrix set; concurrent users must write distinct rows.
#[derive(Clone, Copy)]
pub(crate) struct StridedWriter {
    ptr: *mut f32,
    stride: usize,
    cols: usize,
}

// SAFETY: writers are only shared across threads that touch disjoint rows.
unsafe impl Send for StridedWriter {}
unsafe impl Sync for StridedWriter {}

impl StridedWriter {
    pub(crate) fn new(ptr: *mut f32, stride: usize, cols: usize) -> Self {
        Self { ptr, stride, cols }
    }

    /// # Safety
    /// `(p, row, col)` must be in bounds for every `p < values.len()` and no
    /// other thread may write this row concurrently.
    #[inline]
    pub(crate) unsafe fn scatter_column(&self, row: usize, col: usize, values: &[f32]) {
        let base = self.ptr.add(row * self.cols + col);
        for (p, &v) in values.iter().enumerate() {
            *base.add(p * self.stride) = v;
        }
    }
}

/// Small per-worker buffers for single-tile transforms.
#[derive(Debug, Clone)]
pub struct TileScratch {
    tile: Vec<f32>,
    tmp: Vec<f32>,
    transformed: Vec<f32>,
    out: Vec<f32>,
}

impl TileScratch {
    pub fn new(basis: &WinogradBasis) -> Self {
        let t = basis.tile();
        let o = basis.out_tile();
        Self {
            tile: vec![0.0; t * t],
            tmp: vec![0.0; t * t],
            transformed: vec![0.0; t * t],
            out: vec![0.0; o * o],
        }
    }
}

/// `B x Bᵀ` for one `T x T` tile, in f32 with a fixed summation order.
#[inline]
pub fn forward_tile(basis: &WinogradBasis, x: &[f32], tmp: &mut [f32], out: &mut [f32]) {
    let t = basis.tile();
    let b = basis.b_f32();
    for i in 0..t {
        let brow = &b[i * t..(i + 1) * t];
        let trow = &mut tmp[i * t..(i + 1) * t];
        trow.fill(0.0);
        for (k, &bik) in brow.iter().enumerate() {
            let xrow = &x[k * t..(k + 1) * t];
            for (acc, &xv) in trow.iter_mut().zip(xrow) {
                *acc += bik * xv;
            }
        }
    }
    for i in 0..t {
        let trow = &tmp[i * t..(i + 1) * t];
        for j in 0..t {
            let brow = &b[j * t..(j + 1) * t];
            let mut acc = 0.0f32;
            for (&tv, &bv) in trow.iter().zip(brow) {
                acc += tv * bv;
            }
            out[i * t + j] = acc;
        }
    }
}

/// `Aᵀ M A` for one `T x T` matrix of gathered products, giving `T' x T'`.
#[inline]
pub fn inverse_tile(basis: &WinogradBasis, m: &[f32], tmp: &mut [f32], out: &mut [f32]) {
    let t = basis.tile();
    let o = basis.out_tile();
    let a = basis.a_f32();
    // tmp (T' x T) = Aᵀ M
    for y in 0..o {
        let trow = &mut tmp[y * t..(y + 1) * t];
        trow.fill(0.0);
        for k in 0..t {
            let aky = a[k * o + y];
            for (acc, &mv) in trow.iter_mut().zip(&m[k * t..(k + 1) * t]) {
                *acc += aky * mv;
            }
        }
    }
    for y in 0..o {
        let trow = &tmp[y * t..(y + 1) * t];
        for x in 0..o {
            let mut acc = 0.0f32;
            for (k, &tv) in trow.iter().enumerate() {
                acc += tv * a[k * o + x];
            }
            out[y * o + x] = acc;
        }
    }
}

/// Forward-transform one tile (all channels) as row `row` of the strided left-hand set.
///
/// # Safety
/// `dst` must be valid for row `row` of `T²` matrices with `C` columns, and not
/// written concurrently at that row.
pub(crate) unsafe fn forward_one_tile(
    input: &Tensor4D,
    plan: &TilePlan,
    basis: &WinogradBasis,
    tile_index: usize,
    row: usize,
    dst: StridedWriter,
    scratch: &mut TileScratch,
) {
    let coord = plan.coord(tile_index);
    for c in 0..plan.spec.in_channels {
        gather_input_tile(input, plan, coord, c, &mut scratch.tile);
        forward_tile(
            basis,
            &scratch.tile,
            &mut scratch.tmp,
            &mut scratch.transformed,
        );
        dst.scatter_column(row, c, &scratch.transformed);
    }
}

/// Forward-transform tiles `tiles` into `dst`, tile `tiles.start + r` becoming row `r`.
pub fn forward_transform_tiles(
    input: &Tensor4D,
    plan: &TilePlan,
    basis: &WinogradBasis,
    tiles: Range<usize>,
    dst: &mut LeftHandBlock<'_>,
) {
    let t2 = plan.tile * plan.tile;
    assert!(tiles.end <= plan.n_tile && tiles.len() <= dst.rows);
    assert!(
        dst.count == t2 && dst.cols == plan.spec.in_channels,
        "left-hand block shape"
    );
    let writer = dst.writer();
    let mut scratch = TileScratch::new(basis);
    for (r, ti) in tiles.enumerate() {
        // SAFETY: shape asserted above; `dst` is exclusively borrowed.
        unsafe { forward_one_tile(input, plan, basis, ti, r, writer, &mut scratch) };
    }
}

/// Inverse-transform row `row` of `results` (tile `tile_index`) for every output channel.
///
/// # Safety
/// No other thread may write this tile of `output` concurrently.
pub(crate) unsafe fn inverse_one_tile(
    results: &dyn Fn(usize, usize, usize) -> f32,
    plan: &TilePlan,
    basis: &WinogradBasis,
    tile_index: usize,
    row: usize,
    output: OutputView,
    scratch: &mut TileScratch,
) {
    let coord = plan.coord(tile_index);
    let t2 = plan.tile * plan.tile;
    for co in 0..plan.spec.out_channels {
        for p in 0..t2 {
            scratch.tile[p] = results(p, row, co);
        }
        inverse_tile(basis, &scratch.tile, &mut scratch.tmp, &mut scratch.out);
        output.scatter(plan, coord, co, &scratch.out);
    }
}

/// Inverse-transform result rows for tiles `tiles` and scatter them into `output`.
pub fn inverse_transform_tiles(
    results: &MatrixSet<'_>,
    basis: &WinogradBasis,
    plan: &TilePlan,
    tiles: Range<usize>,
    output: &mut Tensor4D,
) {
    assert!(tiles.end <= plan.n_tile && tiles.len() <= results.rows);
    assert_eq!(results.cols, plan.spec.out_channels);
    assert_eq!(output.dims(), plan.spec.output_tensor_dims());
    let view = OutputView::new(output);
    let mut scratch = TileScratch::new(basis);
    let get = |p: usize, r: usize, c: usize| results.at(p, r, c);
    for (r, ti) in tiles.enumerate() {
        // SAFETY: `output` is exclusively borrowed.
        unsafe { inverse_one_tile(&get, plan, basis, ti, r, view, &mut scratch) };
    }
}

const MR: usize = 4;
const NR: usize = 8;

/// `out (m x n) = a (m x k) · b (k x n)`, row-major, f32 accumulation.
///
/// Every output element is summed over `k` in ascending order starting from zero,
/// independent of `m`, so row-blocked callers produce bit-identical values.
pub fn gemm(a: &[f32], b: &[f32], out: &mut [f32], m: usize, k: usize, n: usize) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && out.len() >= m * n);
    let mut i = 0;
    while i + MR <= m {
        gemm_rows::<MR>(&a[i * k..], b, &mut out[i * n..], k, n);
        i += MR;
    }
    while i < m {
        gemm_rows::<1>(&a[i * k..], b, &mut out[i * n..], k, n);
        i += 1;
    }
}

#[inline(always)]
fn gemm_rows<const M: usize>(a: &[f32], b: &[f32], out: &mut [f32], k: usize, n: usize) {
    let mut j = 0;
    while j < n {
        let w = NR.min(n - j);
        let mut acc = [[0.0f32; NR]; M];
        if w == NR {
            for c in 0..k {
                let brow: &[f32; NR] = b[c * n + j..c * n + j + NR].try_into().unwrap();
                for (mi, accr) in acc.iter_mut().enumerate() {
                    let av = a[mi * k + c];
                    for x in 0..NR {
                        accr[x] += av * brow[x];
                    }
                }
            }
        } else {
            for c in 0..k {
                let brow = &b[c * n + j..c * n + j + w];
                for (mi, accr) in acc.iter_mut().enumerate() {
                    let av = a[mi * k + c];
                    for (x, &bv) in brow.iter().enumerate() {
                        accr[x] += av * bv;
                    }
                }
            }
        }
        for (mi, accr) in acc.iter().enumerate() {
            out[mi * n + j..mi * n + j + w].copy_from_slice(&accr[..w]);
        }
        j += w;
    }
}

/// `dst_p = lhs_p · pack_p` for every tile position; returns the FLOP count
/// `2 · rows · C · C' · T²`.
pub fn multiply_block(lhs: &MatrixSet<'_>, pack: &KernelPack, dst: &mut MatrixSet<'_>) -> u64 {
    assert_eq!(lhs.count, pack.positions());
    assert_eq!(dst.count, pack.positions());
    assert_eq!(lhs.cols, pack.in_channels());
    assert_eq!(dst.cols, pack.out_channels());
    assert_eq!(lhs.rows, dst.rows);
    let (rows, c, c_out) = (lhs.rows, pack.in_channels(), pack.out_channels());
    for p in 0..pack.positions() {
        gemm(
            lhs.matrix(p),
            pack.matrix(p),
            dst.matrix_mut(p),
            rows,
            c,
            c_out,
        );
    }
    block_flops(rows, c, c_out, pack.tile())
}

#[inline]
pub fn block_flops(rows: usize, c: usize, c_out: usize, tile: usize) -> u64 {
    2 * (rows * c * c_out * tile * tile) as u64
}
