//! Execution policy for the data-parallel inner loops.
//!
//! Every parallel loop in this crate writes disjoint outputs and never
//! reduces across threads, so both policies produce bit-identical results.
//! Without the `parallel` feature, [`Execution::Parallel`] runs sequentially.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    /// True when this policy actually fans out to the rayon pool.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }

    /// Order-preserving map.
    pub fn map<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            return items.par_iter().map(f).collect();
        }
        items.iter().map(f).collect()
    }

    /// Order-preserving map over `0..n`.
    pub fn map_range<R, F>(self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            return (0..n).into_par_iter().map(f).collect();
        }
        (0..n).map(f).collect()
    }

    /// Calls `f(i, row)` for each `width`-wide row of `data`.
    pub fn for_each_row<T, F>(self, data: &mut [T], width: usize, f: F)
    where
        T: Send,
        F: Fn(usize, &mut [T]) + Sync + Send,
    {
        if width == 0 {
            return;
        }
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            // Group rows so each task carries enough work.
            let rows_per_task = (4096 / width).max(1);
            data.par_chunks_mut(width * rows_per_task)
                .enumerate()
                .for_each(|(c, chunk)| {
                    for (r, row) in chunk.chunks_mut(width).enumerate() {
                        f(c * rows_per_task + r, row);
                    }
                });
            return;
        }
        data.chunks_mut(width).enumerate().for_each(|(i, row)| f(i, row));
    }

    /// Calls `f(first_row, rows)` on contiguous groups of `width`-wide rows.
    /// Sequentially the whole of `data` is one group.
    pub fn for_each_row_block<T, F>(self, data: &mut [T], width: usize, f: F)
    where
        T: Send,
        F: Fn(usize, &mut [T]) + Sync + Send,
    {
        if width == 0 || data.is_empty() {
            return;
        }
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            let rows = data.len() / width;
            let rows_per_task = (4096 / width).max(rows / (4 * rayon::current_num_threads())).max(1);
            data.par_chunks_mut(width * rows_per_task)
                .enumerate()
                .for_each(|(c, chunk)| f(c * rows_per_task, chunk));
            return;
        }
        f(0, data)
    }
}
