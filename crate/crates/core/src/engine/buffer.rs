//! Per-worker scratch region shared between left-hand and result matrices.
//!
//! Result matrix `i` is written from the front of the buffer while left-hand
//! matrices sit flush with its end. Multiplication `i` may overwrite left-hand
//! matrices `1..i` (already consumed) but never matrix `i` or later ones.

use crate::tensor::AlignedVec;

/// Byte layout of a shared buffer. Matrix indices are 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BufferLayout {
    pub positions: usize,
    pub left_bytes: usize,
    pub result_bytes: usize,
    pub capacity: usize,
}

impl BufferLayout {
    /// Layout for tasks of `r` tiles with `c` input and `c_out` output channels.
    pub fn new(r: usize, c: usize, c_out: usize, tile: usize) -> Self {
        Self::from_sizes(tile * tile, 4 * r * c, 4 * r * c_out)
    }

    pub fn from_sizes(positions: usize, left_bytes: usize, result_bytes: usize) -> Self {
        let s_max = left_bytes.max(result_bytes);
        let s_min = left_bytes.min(result_bytes);
        Self {
            positions,
            left_bytes,
            result_bytes,
            capacity: positions * s_max + s_min,
        }
    }

    #[inline]
    pub fn left_offset(&self, i: usize) -> usize {
        debug_assert!((1..=self.positions).contains(&i));
        self.capacity - (self.positions - i + 1) * self.left_bytes
    }

    #[inline]
    pub fn result_offset(&self, i: usize) -> usize {
        debug_assert!((1..=self.positions).contains(&i));
        (i - 1) * self.result_bytes
    }

    /// Bytes needed to hold both matrix families in separate storage.
    pub fn separate_bytes(&self) -> usize {
        self.positions * (self.left_bytes + self.result_bytes)
    }

    /// Fraction of the separate-storage footprint saved by sharing.
    pub fn savings(&self) -> f64 {
        1.0 - self.capacity as f64 / self.separate_bytes() as f64
    }

    /// `result_offset(i) + S_R <= left_offset(i)` for every `i`.
    pub fn is_safe(&self) -> bool {
        (1..=self.positions)
            .all(|i| self.result_offset(i) + self.result_bytes <= self.left_offset(i))
    }
}

/// `(capacity, left_offsets, result_offsets)` in bytes, offsets listed for `i = 1..=T²`.
pub fn buffer_layout(
    r: usize,
    c: usize,
    c_out: usize,
    tile: usize,
) -> (usize, Vec<usize>, Vec<usize>) {
    let layout = BufferLayout::new(r, c, c_out, tile);
    let left = (1..=layout.positions)
        .map(|i| layout.left_offset(i))
        .collect();
    let result = (1..=layout.positions)
        .map(|i| layout.result_offset(i))
        .collect();
    (layout.capacity, left, result)
}

#[derive(Debug, Clone)]
pub struct SharedBuffer {
    layout: BufferLayout,
    data: AlignedVec,
}

impl SharedBuffer {
    pub fn new(layout: BufferLayout) -> Self {
        debug_assert!(layout.capacity.is_multiple_of(4));
        Self {
            layout,
            data: AlignedVec::zeros(layout.capacity / 4),
        }
    }

    pub fn layout(&self) -> &BufferLayout {
        &self.layout
    }

    pub fn capacity(&self) -> usize {
        self.layout.capacity
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f32] {
        &mut self.data
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_sizes_case() {
        let l = BufferLayout::from_sizes(4, 32, 32);
        assert_eq!(l.capacity, 160);
        assert_eq!(l.capacity / 4, 40);
        assert_eq!(l.separate_bytes(), 256);
        assert!((l.savings() - 0.375).abs() < 1e-12);
        // First result lands in the leading gap, later ones replace consumed left-hand matrices.
        assert_eq!(l.result_offset(1), 0);
        assert_eq!(l.left_offset(1), 32);
        assert_eq!(l.result_offset(2), l.left_offset(1));
    }

    #[test]
    fn unequal_sizes_case() {
        let l = BufferLayout::from_sizes(4, 24, 40);
        assert_eq!(l.capacity, 184);
        assert_eq!(l.capacity / 4, 46);
        assert_eq!(l.separate_bytes() / 4, 64);
        assert!((l.savings() - 0.28125).abs() < 1e-12);
        assert!(l.is_safe());
    }

    #[test]
    fn layout_vectors() {
        let (cap, left, result) = buffer_layout(2, 3, 5, 4);
        assert_eq!(cap, 16 * 40 + 24);
        assert_eq!(left.len(), 16);
        assert_eq!(left[15], cap - 24);
        assert_eq!(result[15], 15 * 40);
    }

    #[test]
    fn safety_holds_for_small_sweep() {
        for t2 in 1..12 {
            for sl in 1..20 {
                for sr in 1..20 {
                    assert!(BufferLayout::from_sizes(t2, sl * 4, sr * 4).is_safe());
                }
            }
        }
    }
}
