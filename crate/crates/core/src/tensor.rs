//! Dense 4-D tensors and layer descriptions.

use std::fmt;
use std::ops::{Deref, DerefMut};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{ConvError, Result};

pub const CACHE_LINE: usize = 64;
const LINE_FLOATS: usize = CACHE_LINE / std::mem::size_of::<f32>();

#[derive(Clone, Copy)]
#[repr(C, align(64))]
struct Line([f32; LINE_FLOATS]);

/// Heap storage of `f32` whose first element sits on a cache-line boundary.
#[derive(Clone)]
pub struct AlignedVec {
    lines: Vec<Line>,
    len: usize,
}

impl AlignedVec {
    pub fn zeros(len: usize) -> Self {
        Self {
            lines: vec![Line([0.0; LINE_FLOATS]); len.div_ceil(LINE_FLOATS)],
            len,
        }
    }

    /// Like [`AlignedVec::zeros`] but reports allocation failure instead of aborting.
    pub fn try_zeros(len: usize, what: &'static str) -> Result<Self> {
        let n = len.div_ceil(LINE_FLOATS);
        let mut lines = Vec::new();
        lines
            .try_reserve_exact(n)
            .map_err(|_| ConvError::Allocation {
                what,
                bytes: len * 4,
            })?;
        lines.resize(n, Line([0.0; LINE_FLOATS]));
        Ok(Self { lines, len })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn as_ptr(&self) -> *const f32 {
        self.lines.as_ptr().cast()
    }

    pub fn as_mut_ptr(&mut self) -> *mut f32 {
        self.lines.as_mut_ptr().cast()
    }
}

impl Deref for AlignedVec {
    type Target = [f32];
    fn deref(&self) -> &[f32] {
        // SAFETY: `Line` is a repr(C) array of f32 with no padding; len <= 16 * lines.len().
        unsafe { std::slice::from_raw_parts(self.as_ptr(), self.len) }
    }
}

impl DerefMut for AlignedVec {
    fn deref_mut(&mut self) -> &mut [f32] {
        // SAFETY: see Deref.
        unsafe { std::slice::from_raw_parts_mut(self.as_mut_ptr(), self.len) }
    }
}

impl fmt::Debug for AlignedVec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.iter()).finish()
    }
}

impl PartialEq for AlignedVec {
    fn eq(&self, other: &Self) -> bool {
        self[..] == other[..]
    }
}

/// How a freshly allocated tensor is initialized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Fill {
    Value(f32),
    /// Uniform in `[-1, 1)`, reproducible from the seed.
    Random(u64),
}

/// Dense tensor in `n0 x n1 x n2 x n3` row-major order (n3 innermost).
///
/// Activations are `B x C x D x W`, kernels are `C' x C x K x K`.
#[derive(Clone, PartialEq)]
pub struct Tensor4D {
    dims: [usize; 4],
    data: AlignedVec,
}

impl Tensor4D {
    pub fn new(dims: [usize; 4], fill: Fill) -> Result<Self> {
        if let Some(axis) = dims.iter().position(|&d| d == 0) {
            return Err(ConvError::InvalidDimension(format!(
                "extent {axis} of {dims:?} is zero"
            )));
        }
        let len = dims.iter().product();
        let mut data = AlignedVec::try_zeros(len, "tensor")?;
        match fill {
            Fill::Value(v) => data.fill(v),
            Fill::Random(seed) => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                data.iter_mut().for_each(|x| *x = rng.gen_range(-1.0..1.0));
            }
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: [usize; 4]) -> Result<Self> {
        Self::new(dims, Fill::Value(0.0))
    }

    pub fn from_vec(dims: [usize; 4], values: Vec<f32>) -> Result<Self> {
        let mut t = Self::zeros(dims)?;
        if values.len() != t.len() {
            return Err(ConvError::ShapeMismatch(format!(
                "{} values for dims {dims:?}",
                values.len()
            )));
        }
        t.data.copy_from_slice(&values);
        Ok(t)
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn as_mut_ptr(&mut self) -> *mut f32 {
        self.data.as_mut_ptr()
    }

    #[inline]
    pub fn flatten(&self, idx: [usize; 4]) -> usize {
        let [_, n1, n2, n3] = self.dims;
        ((idx[0] * n1 + idx[1]) * n2 + idx[2]) * n3 + idx[3]
    }

    #[inline]
    pub fn unflatten(&self, mut i: usize) -> [usize; 4] {
        let [_, n1, n2, n3] = self.dims;
        let i3 = i % n3;
        i /= n3;
        let i2 = i % n2;
        i /= n2;
        [i / n1, i % n1, i2, i3]
    }

    #[inline]
    pub fn get(&self, idx: [usize; 4]) -> f32 {
        self.data[self.flatten(idx)]
    }

    #[inline]
    pub fn set(&mut self, idx: [usize; 4], v: f32) {
        let i = self.flatten(idx);
        self.data[i] = v;
    }

    /// The contiguous `n2 x n3` plane at `(i0, i1)`.
    pub fn plane(&self, i0: usize, i1: usize) -> &[f32] {
        let sz = self.dims[2] * self.dims[3];
        let start = (i0 * self.dims[1] + i1) * sz;
        &self.data[start..start + sz]
    }
}

impl fmt::Debug for Tensor4D {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor4D")
            .field("dims", &self.dims)
            .finish_non_exhaustive()
    }
}

/// A 2-D convolutional layer with an isotropic kernel and symmetric-per-side padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct LayerSpec {
    pub batch: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub in_height: usize,
    pub in_width: usize,
    pub kernel: usize,
    pub pad_lo: usize,
    pub pad_hi: usize,
}

impl LayerSpec {
    /// Square layer with equal padding on both sides, the shape used by the benchmark suites.
    pub fn square(
        batch: usize,
        channels: usize,
        out_channels: usize,
        size: usize,
        kernel: usize,
        pad: usize,
    ) -> Self {
        Self {
            batch,
            in_channels: channels,
            out_channels,
            in_height: size,
            in_width: size,
            kernel,
            pad_lo: pad,
            pad_hi: pad,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let extents = [
            ("batch", self.batch),
            ("in_channels", self.in_channels),
            ("out_channels", self.out_channels),
            ("in_height", self.in_height),
            ("in_width", self.in_width),
            ("kernel", self.kernel),
        ];
        if let Some((name, _)) = extents.iter().find(|(_, v)| *v == 0) {
            return Err(ConvError::InvalidDimension(format!("{name} must be >= 1")));
        }
        let pad = self.pad_lo + self.pad_hi;
        if self.in_height + pad < self.kernel || self.in_width + pad < self.kernel {
            return Err(ConvError::InvalidDimension(format!(
                "padded input {}x{} smaller than kernel {}",
                self.in_height + pad,
                self.in_width + pad,
                self.kernel
            )));
        }
        Ok(())
    }

    /// Output spatial extents `(D', W')`.
    pub fn output_dims(&self) -> (usize, usize) {
        let pad = self.pad_lo + self.pad_hi;
        (
            self.in_height + pad + 1 - self.kernel,
            self.in_width + pad + 1 - self.kernel,
        )
    }

    pub fn input_dims(&self) -> [usize; 4] {
        [self.batch, self.in_channels, self.in_height, self.in_width]
    }

    pub fn kernel_dims(&self) -> [usize; 4] {
        [
            self.out_channels,
            self.in_channels,
            self.kernel,
            self.kernel,
        ]
    }

    pub fn output_tensor_dims(&self) -> [usize; 4] {
        let (d, w) = self.output_dims();
        [self.batch, self.out_channels, d, w]
    }

    pub fn with_batch(mut self, batch: usize) -> Self {
        self.batch = batch;
        self
    }

    pub(crate) fn check_input(&self, input: &Tensor4D) -> Result<()> {
        self.validate()?;
        if input.dims() != self.input_dims() {
            return Err(ConvError::ShapeMismatch(format!(
                "input {:?}, layer expects {:?}",
                input.dims(),
                self.input_dims()
            )));
        }
        Ok(())
    }

    pub(crate) fn check_kernels(&self, kernels: &Tensor4D) -> Result<()> {
        if kernels.dims() != self.kernel_dims() {
            return Err(ConvError::ShapeMismatch(format!(
                "kernels {:?}, layer expects {:?}",
                kernels.dims(),
                self.kernel_dims()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn fills() {
        let z = Tensor4D::new([1, 1, 2, 2], Fill::Value(0.0)).unwrap();
        assert_eq!(z.data(), &[0.0; 4]);
        let ones = Tensor4D::new([2, 3, 4, 5], Fill::Value(1.0)).unwrap();
        assert_eq!(ones.len(), 120);
        assert!(ones.data().iter().all(|&v| v == 1.0));
        let a = Tensor4D::new([1, 1, 3, 3], Fill::Random(42)).unwrap();
        let b = Tensor4D::new([1, 1, 3, 3], Fill::Random(42)).unwrap();
        assert_eq!(a, b);
        assert!(a.data().iter().all(|v| (-1.0..1.0).contains(v)));
        assert_ne!(a, Tensor4D::new([1, 1, 3, 3], Fill::Random(43)).unwrap());
    }

    #[test]
    fn zero_extent_rejected() {
        assert!(matches!(
            Tensor4D::zeros([1, 0, 2, 2]),
            Err(ConvError::InvalidDimension(_))
        ));
    }

    #[test]
    fn aligned_allocations() {
        for n in [1, 3, 17, 1000] {
            let mut t = Tensor4D::zeros([1, 1, 1, n]).unwrap();
            assert_eq!(t.as_mut_ptr() as usize % CACHE_LINE, 0);
            assert_eq!(t.data().as_ptr() as usize % CACHE_LINE, 0);
        }
    }

    #[test]
    fn output_dims_examples() {
        assert_eq!(
            LayerSpec::square(64, 64, 64, 56, 3, 1).output_dims(),
            (56, 56)
        );
        assert_eq!(LayerSpec::square(1, 1, 1, 7, 3, 0).output_dims(), (5, 5));
        assert_eq!(
            LayerSpec::square(64, 64, 64, 224, 3, 1).output_dims(),
            (224, 224)
        );
    }

    #[test]
    fn layer_too_small() {
        assert!(LayerSpec::square(1, 1, 1, 2, 3, 0).validate().is_err());
        assert!(LayerSpec::square(1, 1, 1, 1, 3, 1).validate().is_ok());
    }

    proptest! {
        #[test]
        fn index_round_trip(dims in prop::array::uniform4(1usize..6), frac in 0.0f64..1.0) {
            let t = Tensor4D::zeros(dims).unwrap();
            let i = ((t.len() as f64) * frac) as usize;
            prop_assert_eq!(t.flatten(t.unflatten(i)), i);
        }
    }
}
