//! Ownership tracking for the shared buffer.

use std::ops::Range;

/// Observes accesses to a shared buffer, in `f32` slot units. Matrix indices are 1-based.
pub trait BufferProbe {
    fn left_written(&mut self, i: usize, slots: Range<usize>);
    fn left_read(&mut self, i: usize, slots: Range<usize>);
    fn result_written(&mut self, i: usize, slots: Range<usize>);
    fn result_read(&mut self, i: usize, slots: Range<usize>);
    fn violations(&self) -> u64;
}

/// Benchmark-mode probe: compiles to nothing.
#[derive(Debug, Default, Clone, Copy)]
pub struct NoProbe;

impl BufferProbe for NoProbe {
    #[inline(always)]
    fn left_written(&mut self, _: usize, _: Range<usize>) {}
    #[inline(always)]
    fn left_read(&mut self, _: usize, _: Range<usize>) {}
    #[inline(always)]
    fn result_written(&mut self, _: usize, _: Range<usize>) {}
    #[inline(always)]
    fn result_read(&mut self, _: usize, _: Range<usize>) {}
    #[inline(always)]
    fn violations(&self) -> u64 {
        0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    Empty,
    Left(usize),
    Result(usize),
}

/// Tags every slot with its current owner and counts reads of data that has
/// been overwritten, plus writes that clobber a left-hand matrix not yet consumed.
#[derive(Debug, Clone)]
pub struct TagProbe {
    tags: Vec<Slot>,
    violations: u64,
}

impl TagProbe {
    pub fn new(slots: usize) -> Self {
        Self {
            tags: vec![Slot::Empty; slots],
            violations: 0,
        }
    }

    pub fn tags(&self) -> &[Slot] {
        &self.tags
    }

    fn expect(&mut self, slots: Range<usize>, want: Slot) {
        let bad = self.tags[slots].iter().filter(|&&t| t != want).count();
        self.violations += bad as u64;
    }
}

impl BufferProbe for TagProbe {
    fn left_written(&mut self, i: usize, slots: Range<usize>) {
        self.tags[slots].fill(Slot::Left(i));
    }

    fn left_read(&mut self, i: usize, slots: Range<usize>) {
        self.expect(slots, Slot::Left(i));
    }

    fn result_written(&mut self, i: usize, slots: Range<usize>) {
        for tag in &mut self.tags[slots] {
            if let Slot::Left(j) = *tag {
                if j >= i {
                    self.violations += 1;
                }
            }
            *tag = Slot::Result(i);
        }
    }

    fn result_read(&mut self, i: usize, slots: Range<usize>) {
        self.expect(slots, Slot::Result(i));
    }

    fn violations(&self) -> u64 {
        self.violations
    }
}
