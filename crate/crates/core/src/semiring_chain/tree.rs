use rayon::prelude::*;

use super::{ChainError, ChainScores, Mat, MaxMarginalTable, MaxPlus, ScanTrace, Semiring};

/// Below this many multiply-adds a level runs on the calling thread.
const PAR_THRESHOLD: usize = 1 << 14;

/// Balanced-tree inside/outside scan over a chain of transition matrices.
///
/// Leaves are padded to a power of two with all-`one` edges that feed a
/// single absorbing state, so every true path extends through the padding
/// in exactly one way with weight `one`. Returns the semiring marginal of
/// every true cell: the ⊕ over full paths of their ⊗-weight, restricted to
/// paths using that cell.
pub fn tree_scan<S: Semiring>(leaves: Vec<Mat<S>>) -> (Vec<Mat<S>>, ScanTrace) {
    let true_edges = leaves.len();
    assert!(true_edges > 0, "tree_scan needs at least one edge");
    let width = true_edges.next_power_of_two();
    let height = width.trailing_zeros() as usize;
    let mut trace = ScanTrace {
        levels_up: height,
        levels_down: height,
        cell_ops: 0,
    };

    let mut level0 = leaves;
    let last_cols = level0[true_edges - 1].cols;
    for j in true_edges..width {
        let rows = if j == true_edges { last_cols } else { 1 };
        level0.push(Mat::filled(rows, 1, S::one()));
    }

    // Bottom-up: chart[i][j] covers leaves j*2^i .. (j+1)*2^i.
    let mut chart: Vec<Vec<Mat<S>>> = vec![level0];
    for _ in 0..height {
        let below = chart.last().expect("non-empty chart");
        let work: usize = below
            .chunks(2)
            .map(|p| p[0].rows * p[0].cols * p[1].cols)
            .sum();
        let merged: Vec<Mat<S>> = if work >= PAR_THRESHOLD {
            below.par_chunks(2).map(|p| p[0].matmul(&p[1])).collect()
        } else {
            below.chunks(2).map(|p| p[0].matmul(&p[1])).collect()
        };
        trace.cell_ops += merged.iter().map(|m| (m.rows * m.cols) as u64).sum::<u64>();
        chart.push(merged);
    }

    // Top-down: prefix[j] is the best score over positions left of block j,
    // indexed by the block's left boundary state; suffix likewise on the right.
    let root = &chart[height][0];
    let mut prefix: Vec<Vec<S>> = vec![vec![S::one(); root.rows]];
    let mut suffix: Vec<Vec<S>> = vec![vec![S::one(); root.cols]];
    for i in (0..height).rev() {
        let below = &chart[i];
        let step = |j: usize| {
            let left = &below[2 * j];
            let right = &below[2 * j + 1];
            let p_left = prefix[j].clone();
            let p_right = left.left_apply(&prefix[j]);
            let s_right = suffix[j].clone();
            let s_left = right.right_apply(&suffix[j]);
            ((p_left, p_right), (s_left, s_right))
        };
        let parents = prefix.len();
        let work: usize = below.iter().map(|m| m.rows * m.cols).sum();
        let pairs: Vec<_> = if work >= PAR_THRESHOLD {
            (0..parents).into_par_iter().map(step).collect()
        } else {
            (0..parents).map(step).collect()
        };
        let mut next_prefix = Vec::with_capacity(parents * 2);
        let mut next_suffix = Vec::with_capacity(parents * 2);
        for ((pl, pr), (sl, sr)) in pairs {
            trace.cell_ops += (pr.len() + sl.len()) as u64;
            next_prefix.push(pl);
            next_prefix.push(pr);
            next_suffix.push(sl);
            next_suffix.push(sr);
        }
        prefix = next_prefix;
        suffix = next_suffix;
    }

    let leaves = &chart[0];
    let combine = |j: usize| {
        let c = &leaves[j];
        let mut data = Vec::with_capacity(c.rows * c.cols);
        for (k1, p) in prefix[j].iter().enumerate() {
            for (k2, s) in suffix[j].iter().enumerate() {
                data.push(p.times(c.at(k1, k2)).times(s));
            }
        }
        Mat {
            rows: c.rows,
            cols: c.cols,
            data,
        }
    };
    let work: usize = leaves[..true_edges].iter().map(|m| m.rows * m.cols).sum();
    let marginals: Vec<Mat<S>> = if work >= PAR_THRESHOLD {
        (0..true_edges).into_par_iter().map(combine).collect()
    } else {
        (0..true_edges).map(combine).collect()
    };
    trace.cell_ops += work as u64;
    (marginals, trace)
}

/// Edge max-marginals by the parallel tree scan.
///
/// `MM[e][k1][k2]` is the best total log-score over all full paths that take
/// state `k1` at position `e` and `k2` at position `e + 1`.
pub fn tree_max_marginals(
    chain: &ChainScores,
) -> Result<(MaxMarginalTable, ScanTrace), ChainError> {
    chain.check_scorable()?;
    let leaves: Vec<Mat<MaxPlus>> = chain
        .edges()
        .iter()
        .map(|edge| {
            edge.to_mat(|feasible, s| {
                if feasible {
                    MaxPlus(s)
                } else {
                    MaxPlus::zero()
                }
            })
        })
        .collect();
    let (marginals, trace) = tree_scan(leaves);
    let table = MaxMarginalTable::from_mats(marginals);
    if table.edge_max(0) == f64::NEG_INFINITY {
        return Err(ChainError::EmptyMaxMarginalSet { edge: None });
    }
    Ok((table, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::semiring_chain::Counting;
    use num_bigint::BigUint;

    #[test]
    fn single_edge_is_identity() {
        let chain = ChainScores::new(vec![2, 2], vec![vec![0.0, -1.0, -2.0, 3.0]]).unwrap();
        let (mm, trace) = tree_max_marginals(&chain).unwrap();
        let got: Vec<f64> = mm.edge_values(0).collect();
        assert_eq!(got, vec![0.0, -1.0, -2.0, 3.0]);
        assert_eq!(trace.levels_up, 0);
        assert_eq!(trace.levels_down, 0);
    }

    #[test]
    fn degenerate_chain() {
        let chain = ChainScores::new(vec![3], vec![]).unwrap();
        assert_eq!(tree_max_marginals(&chain), Err(ChainError::Degenerate));
    }

    #[test]
    fn fully_masked_edge() {
        let ninf = f64::NEG_INFINITY;
        let chain =
            ChainScores::new(vec![1, 2, 1], vec![vec![0.0, 1.0], vec![ninf, ninf]]).unwrap();
        assert_eq!(
            tree_max_marginals(&chain),
            Err(ChainError::EmptyMaxMarginalSet { edge: Some(1) })
        );
    }

    #[test]
    fn disconnected_chain_has_no_path() {
        let ninf = f64::NEG_INFINITY;
        // edge 0 only reaches state 0, edge 1 only leaves state 1
        let chain = ChainScores::new(
            vec![1, 2, 1],
            vec![vec![0.0, ninf], vec![ninf, 0.0]],
        )
        .unwrap();
        assert_eq!(
            tree_max_marginals(&chain),
            Err(ChainError::EmptyMaxMarginalSet { edge: None })
        );
    }

    #[test]
    fn counting_marginals_sum_to_total() {
        // 3 edges, K=2, fully feasible: 16 paths, each cell used by 4.
        let leaves = vec![Mat::filled(2, 2, Counting::one()); 3];
        let (m, trace) = tree_scan(leaves);
        assert_eq!(trace.levels_up, 2);
        for edge in &m {
            for c in &edge.data {
                assert_eq!(c.0, BigUint::from(4u32));
            }
        }
    }
}
