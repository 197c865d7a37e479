//! Salient position selection.
//!
//! Each spatial position of the query matrix `[c_i, n]` is scored by the sum
//! of squares of its channel vector; the `k` highest-scoring positions are
//! kept, and their query columns become the keys.

use crate::error::{Error, Result};
use crate::tensor::{square_sum_columns, top_k_indices, ChannelMatrix};

/// Saliency scores plus the chosen positions, in descending score order.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    pub scores: Vec<f64>,
    pub indices: Vec<usize>,
}

impl SelectionResult {
    pub fn k(&self) -> usize {
        self.indices.len()
    }

    /// Score gap between the last selected position and the best unselected
    /// one. `None` when every position is selected.
    pub fn boundary_gap(&self) -> Option<f64> {
        let k = self.indices.len();
        if k == self.scores.len() {
            return None;
        }
        let mut selected = vec![false; self.scores.len()];
        for &i in &self.indices {
            selected[i] = true;
        }
        let best_unselected = self
            .scores
            .iter()
            .zip(&selected)
            .filter(|(_, &s)| !s)
            .map(|(&v, _)| v)
            .fold(f64::NEG_INFINITY, f64::max);
        Some(self.scores[self.indices[k - 1]] - best_unselected)
    }

    pub fn is_selected(&self) -> Vec<bool> {
        let mut flags = vec![false; self.scores.len()];
        for &i in &self.indices {
            flags[i] = true;
        }
        flags
    }
}

pub fn saliency_scores(q: &ChannelMatrix) -> Result<Vec<f64>> {
    square_sum_columns(q)
}

pub fn select(q: &ChannelMatrix, k: usize) -> Result<SelectionResult> {
    if k == 0 || k > q.cols() {
        return Err(Error::argument(format!(
            "k = {k} is outside [1, {}] for {} spatial positions",
            q.cols(),
            q.cols()
        )));
    }
    let scores = saliency_scores(q)?;
    let indices = top_k_indices(&scores, k)?;
    Ok(SelectionResult { scores, indices })
}

/// Query columns at the selected positions, in selection order.
pub fn gather_keys(q: &ChannelMatrix, sel: &SelectionResult) -> ChannelMatrix {
    gather_columns(q, &sel.indices)
}

pub(crate) fn gather_columns(m: &ChannelMatrix, indices: &[usize]) -> ChannelMatrix {
    let k = indices.len();
    let mut out = ChannelMatrix::zeros(m.rows(), k);
    for r in 0..m.rows() {
        let src = m.row(r);
        let dst = &mut out.data_mut()[r * k..(r + 1) * k];
        for (d, &i) in dst.iter_mut().zip(indices) {
            *d = src[i];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ChannelMatrix {
        ChannelMatrix::from_rows(&[&[1.0, 2.0, 0.0], &[0.0, 1.0, 3.0]])
    }

    #[test]
    fn scores_examples() {
        assert_eq!(saliency_scores(&ChannelMatrix::zeros(2, 5)).unwrap(), vec![0.0; 5]);
        assert_eq!(saliency_scores(&sample()).unwrap(), vec![1.0, 5.0, 9.0]);
        let single = ChannelMatrix::from_rows(&[&[-2.0, 0.5, 3.0]]);
        assert_eq!(saliency_scores(&single).unwrap(), vec![4.0, 0.25, 9.0]);
    }

    #[test]
    fn select_examples() {
        let q = sample();
        assert_eq!(select(&q, 2).unwrap().indices, vec![2, 1]);
        let mut all = select(&q, 3).unwrap().indices;
        all.sort_unstable();
        assert_eq!(all, vec![0, 1, 2]);
        assert_eq!(
            select(&q.scaled(7.3), 2).unwrap().indices,
            select(&q, 2).unwrap().indices
        );
    }

    #[test]
    fn select_rejects_bad_k() {
        assert!(matches!(select(&sample(), 0), Err(Error::Argument(_))));
        assert!(matches!(select(&sample(), 4), Err(Error::Argument(_))));
    }

    #[test]
    fn gather_examples() {
        let q = sample();
        let identity = SelectionResult {
            scores: vec![0.0; 3],
            indices: vec![0, 1, 2],
        };
        assert_eq!(gather_keys(&q, &identity), q);

        let sel = select(&q, 2).unwrap();
        let k = gather_keys(&q, &sel);
        assert_eq!(k, ChannelMatrix::from_rows(&[&[0.0, 2.0], &[3.0, 1.0]]));

        let top = gather_keys(&q, &select(&q, 1).unwrap());
        assert_eq!(top, ChannelMatrix::from_rows(&[&[0.0], &[3.0]]));
    }

    #[test]
    fn boundary_gap() {
        let sel = select(&sample(), 2).unwrap();
        assert_eq!(sel.boundary_gap(), Some(4.0));
        assert_eq!(select(&sample(), 3).unwrap().boundary_gap(), None);
    }
}
