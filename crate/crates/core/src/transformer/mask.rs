//! Row layout of the input matrix and the causal attention mask over it.
//!
//! Layout: `n` start rows, then for each usable step a block of `n` state
//! rows followed by a block of `n` look-ahead rows. Every rule below is a
//! statement about `(kind, t, i)` triples; the layout only makes the allowed
//! set of each row a prefix plus two short runs.

use ndarray::Array2;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RowKind {
    Start,
    State,
    Lookahead,
}

/// Bijection between `(kind, t, i)` and row positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RowIndex {
    pub t_eff: usize,
    pub n: usize,
}

impl RowIndex {
    pub fn new(t_eff: usize, n: usize) -> Result<Self> {
        if t_eff == 0 || n == 0 {
            return Err(Error::Shape(format!(
                "row index needs at least one step and one player (got {t_eff} x {n})"
            )));
        }
        Ok(RowIndex { t_eff, n })
    }

    /// `2 T_eff N + N`.
    pub fn len(&self) -> usize {
        2 * self.t_eff * self.n + self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Row position; `t` is ignored for start rows.
    pub fn flat(&self, kind: RowKind, t: usize, i: usize) -> usize {
        debug_assert!(i < self.n && (kind == RowKind::Start || t < self.t_eff));
        match kind {
            RowKind::Start => i,
            RowKind::State => self.n + 2 * t * self.n + i,
            RowKind::Lookahead => self.n + 2 * t * self.n + self.n + i,
        }
    }

    pub fn decode(&self, flat: usize) -> (RowKind, usize, usize) {
        assert!(flat < self.len(), "row {flat} out of range");
        if flat < self.n {
            return (RowKind::Start, 0, flat);
        }
        let r = flat - self.n;
        let (t, w) = (r / (2 * self.n), r % (2 * self.n));
        if w < self.n {
            (RowKind::State, t, w)
        } else {
            (RowKind::Lookahead, t, w - self.n)
        }
    }

    /// State rows in `(t, i)` order.
    pub fn state_rows(&self) -> Vec<u32> {
        (0..self.t_eff)
            .flat_map(|t| (0..self.n).map(move |i| self.flat(RowKind::State, t, i) as u32))
            .collect()
    }
}

/// Boolean attention mask (`true` = may attend) with its row index.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMask {
    pub allowed: Array2<bool>,
    pub index: RowIndex,
}

/// Builds the mask:
/// 1. start rows see all start rows;
/// 2. state row `(t, i)` sees start rows, every row of earlier steps, state
///    rows `(t, j <= i)` and look-ahead rows `(t, j < i)`;
/// 3. look-ahead row `(t, i)` sees start rows, every row of earlier steps and
///    both state and look-ahead rows `(t, j <= i)`.
pub fn build_attention_mask(t_eff: usize, n: usize) -> Result<AttentionMask> {
    let index = RowIndex::new(t_eff, n)?;
    let len = index.len();
    let mut allowed = Array2::from_elem((len, len), false);
    for i in 0..n {
        allowed.row_mut(i).slice_mut(ndarray::s![..n]).fill(true);
    }
    for t in 0..t_eff {
        let prefix = index.flat(RowKind::State, t, 0);
        for i in 0..n {
            for (kind, own_lookahead) in [(RowKind::State, i), (RowKind::Lookahead, i + 1)] {
                let mut row = allowed.row_mut(index.flat(kind, t, i));
                row.slice_mut(ndarray::s![..prefix]).fill(true);
                row.slice_mut(ndarray::s![prefix..=prefix + i]).fill(true);
                let la = prefix + n;
                row.slice_mut(ndarray::s![la..la + own_lookahead]).fill(true);
            }
        }
    }
    Ok(AttentionMask { allowed, index })
}

/// Row-major bit packing, most significant bit first, rows padded to bytes.
pub fn pack_mask(mask: &Array2<bool>) -> Vec<u8> {
    let stride = mask.ncols().div_ceil(8);
    let mut out = vec![0u8; mask.nrows() * stride];
    for ((r, c), &v) in mask.indexed_iter() {
        if v {
            out[r * stride + c / 8] |= 0x80 >> (c % 8);
        }
    }
    out
}

pub fn unpack_mask(bytes: &[u8], rows: usize, cols: usize) -> Result<Array2<bool>> {
    let stride = cols.div_ceil(8);
    if bytes.len() != rows * stride {
        return Err(Error::Shape(format!(
            "packed mask has {} bytes, expected {} for {rows} x {cols}",
            bytes.len(),
            rows * stride
        )));
    }
    Ok(Array2::from_shape_fn((rows, cols), |(r, c)| {
        bytes[r * stride + c / 8] & (0x80 >> (c % 8)) != 0
    }))
}
