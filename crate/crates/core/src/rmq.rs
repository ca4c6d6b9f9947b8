//! Doubling tables for range-minimum and range-maximum queries.
//!
//! Level `k` holds, for every start `i`, the position of the extremum of
//! `values[i..i + 2^k]`. An inclusive query `[lo, hi]` is answered from two
//! overlapping power-of-two windows.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Extremum {
    Min,
    Max,
}

#[derive(Debug, Clone)]
pub struct SparseTable {
    values: Vec<f64>,
    levels: Vec<Vec<u32>>,
    which: Extremum,
}

impl SparseTable {
    pub fn new(values: Vec<f64>, which: Extremum) -> Self {
        assert!(values.len() < u32::MAX as usize, "sparse table supports up to 2^32 - 1 values");
        let n = values.len();
        let mut levels: Vec<Vec<u32>> = vec![(0..n as u32).collect()];
        let mut width = 1usize;
        while 2 * width <= n {
            let prev = levels.last().expect("level 0 exists");
            let next: Vec<u32> = (0..=n - 2 * width)
                .map(|i| {
                    let a = prev[i];
                    let b = prev[i + width];
                    if better(which, values[b as usize], values[a as usize]) {
                        b
                    } else {
                        a
                    }
                })
                .collect();
            levels.push(next);
            width *= 2;
        }
        SparseTable { values, levels, which }
    }

    pub fn min_table(values: &[f64]) -> Self {
        Self::new(values.to_vec(), Extremum::Min)
    }

    pub fn max_table(values: &[f64]) -> Self {
        Self::new(values.to_vec(), Extremum::Max)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Position of the extremum over the inclusive range `[lo, hi]`.
    /// Ties resolve to the leftmost position.
    #[inline]
    pub fn index(&self, lo: usize, hi: usize) -> usize {
        debug_assert!(lo <= hi && hi < self.values.len());
        let span = hi - lo + 1;
        let k = (usize::BITS - 1 - span.leading_zeros()) as usize;
        let a = self.levels[k][lo] as usize;
        let b = self.levels[k][hi + 1 - (1 << k)] as usize;
        if better(self.which, self.values[b], self.values[a]) {
            b
        } else {
            a
        }
    }

    #[inline]
    pub fn value(&self, lo: usize, hi: usize) -> f64 {
        self.values[self.index(lo, hi)]
    }

    /// First position `p >= start` whose value is strictly beyond `level`
    /// (below it for a min table, above it for a max table).
    pub fn first_beyond(&self, start: usize, level: f64) -> Option<usize> {
        self.first_matching(start, |v| !better(self.which, v, level))
    }

    /// First position `p >= start` whose value is at or beyond `level`.
    pub fn first_at_or_beyond(&self, start: usize, level: f64) -> Option<usize> {
        self.first_matching(start, |v| !(better(self.which, v, level) || v == level))
    }

    /// Last position `p <= end` whose value is strictly beyond `level`.
    pub fn last_beyond(&self, end: usize, level: f64) -> Option<usize> {
        self.last_matching(end, |v| !better(self.which, v, level))
    }

    /// Last position `p <= end` whose value is at or beyond `level`.
    pub fn last_at_or_beyond(&self, end: usize, level: f64) -> Option<usize> {
        self.last_matching(end, |v| !(better(self.which, v, level) || v == level))
    }

    // `keep_going(extremum)` is true while a whole window can be skipped.
    fn first_matching(&self, start: usize, keep_going: impl Fn(f64) -> bool) -> Option<usize> {
        let n = self.values.len();
        if start >= n {
            return None;
        }
        let mut pos = start;
        for k in (0..self.levels.len()).rev() {
            let w = 1usize << k;
            if pos + w <= n {
                let v = self.values[self.levels[k][pos] as usize];
                if keep_going(v) {
                    pos += w;
                }
            }
        }
        (pos < n).then_some(pos)
    }

    fn last_matching(&self, end: usize, keep_going: impl Fn(f64) -> bool) -> Option<usize> {
        let n = self.values.len();
        if n == 0 {
            return None;
        }
        let mut stop = end.min(n - 1) + 1;
        for k in (0..self.levels.len()).rev() {
            let w = 1usize << k;
            if stop >= w {
                let v = self.values[self.levels[k][stop - w] as usize];
                if keep_going(v) {
                    stop -= w;
                }
            }
        }
        stop.checked_sub(1)
    }
}

// `a` strictly more extreme than `b`.
#[inline]
fn better(which: Extremum, a: f64, b: f64) -> bool {
    match which {
        Extremum::Min => a < b,
        Extremum::Max => a > b,
    }
}
