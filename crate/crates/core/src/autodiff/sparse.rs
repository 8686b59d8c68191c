use serde::{Deserialize, Serialize};

/// Sparsity structure of a square row-compressed matrix. Column indices are
/// ascending within each row; values live separately so one pattern can be
/// shared by many channels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsrPattern {
    n: usize,
    offsets: Vec<usize>,
    indices: Vec<usize>,
}

impl CsrPattern {
    pub fn new(n: usize, offsets: Vec<usize>, indices: Vec<usize>) -> Self {
        assert_eq!(offsets.len(), n + 1, "offsets must have n + 1 entries");
        assert_eq!(*offsets.last().unwrap(), indices.len());
        debug_assert!((0..n).all(|r| indices[offsets[r]..offsets[r + 1]].windows(2).all(|w| w[0] < w[1])));
        Self { n, offsets, indices }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn row(&self, r: usize) -> std::ops::Range<usize> {
        self.offsets[r]..self.offsets[r + 1]
    }

    /// `(row, col)` for every stored entry in storage order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n).flat_map(move |r| self.row(r).map(move |k| (r, self.indices[k])))
    }

    /// Position of `(r, c)` in storage, if present.
    pub fn position(&self, r: usize, c: usize) -> Option<usize> {
        let range = self.row(r);
        self.indices[range.clone()].binary_search(&c).ok().map(|k| range.start + k)
    }

    /// `y = M x` for values `m` laid out on this pattern.
    pub fn matvec(&self, m: &[f64], x: &[f64], y: &mut [f64]) {
        for r in 0..self.n {
            let mut acc = 0.0;
            for k in self.row(r) {
                acc += m[k] * x[self.indices[k]];
            }
            y[r] = acc;
        }
    }
}

/// A list of index sets stored contiguously; set `s` is
/// `indices[offsets[s]..offsets[s + 1]]`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct IndexSets {
    offsets: Vec<usize>,
    indices: Vec<usize>,
}

impl IndexSets {
    pub fn new() -> Self {
        Self { offsets: vec![0], indices: Vec::new() }
    }

    pub fn from_sets<I, S>(sets: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: IntoIterator<Item = usize>,
    {
        let mut out = Self::new();
        for s in sets {
            out.push(s);
        }
        out
    }

    pub fn push(&mut self, set: impl IntoIterator<Item = usize>) {
        self.indices.extend(set);
        self.offsets.push(self.indices.len());
    }

    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, s: usize) -> &[usize] {
        &self.indices[self.offsets[s]..self.offsets[s + 1]]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[usize]> + '_ {
        (0..self.len()).map(move |s| self.get(s))
    }

    pub fn max_index(&self) -> Option<usize> {
        self.indices.iter().copied().max()
    }
}
