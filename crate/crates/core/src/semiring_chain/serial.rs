use num_bigint::BigUint;
use num_traits::Zero;

use super::{ChainError, ChainScores, Mat, MaxMarginalTable, MaxPlus};

/// Best score of any prefix path ending in each state, per position.
fn forward_best(chain: &ChainScores) -> Vec<Vec<f64>> {
    let counts = chain.state_counts();
    let mut alpha = Vec::with_capacity(counts.len());
    alpha.push(vec![0.0; counts[0]]);
    for (e, edge) in chain.edges().iter().enumerate() {
        let prev = &alpha[e];
        let next: Vec<f64> = (0..edge.cols())
            .map(|k2| {
                (0..edge.rows())
                    .map(|k1| prev[k1] + edge.score(k1, k2))
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
        alpha.push(next);
    }
    alpha
}

/// Best score of any suffix path starting in each state, per position.
fn backward_best(chain: &ChainScores) -> Vec<Vec<f64>> {
    let counts = chain.state_counts();
    let n = counts.len();
    let mut beta = vec![Vec::new(); n];
    beta[n - 1] = vec![0.0; counts[n - 1]];
    for e in (0..chain.num_edges()).rev() {
        let edge = chain.edge(e);
        beta[e] = (0..edge.rows())
            .map(|k1| {
                (0..edge.cols())
                    .map(|k2| edge.score(k1, k2) + beta[e + 1][k2])
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
    }
    beta
}

/// Edge max-marginals by the serial forward-backward recursion, O(K²L).
pub fn serial_max_marginals(chain: &ChainScores) -> Result<MaxMarginalTable, ChainError> {
    chain.check_scorable()?;
    let alpha = forward_best(chain);
    let beta = backward_best(chain);
    let mats = chain
        .edges()
        .iter()
        .enumerate()
        .map(|(e, edge)| {
            let mut data = Vec::with_capacity(edge.rows() * edge.cols());
            for (k1, a) in alpha[e].iter().enumerate() {
                for (k2, b) in beta[e + 1].iter().enumerate() {
                    data.push(MaxPlus(a + edge.score(k1, k2) + b));
                }
            }
            Mat {
                rows: edge.rows(),
                cols: edge.cols(),
                data,
            }
        })
        .collect();
    let table = MaxMarginalTable::from_mats(mats);
    if table.edge_max(0) == f64::NEG_INFINITY {
        return Err(ChainError::EmptyMaxMarginalSet { edge: None });
    }
    Ok(table)
}

/// Highest-scoring state path and its log-score.
///
/// Among equal-scoring paths the lexicographically smallest state sequence
/// wins. Selection walks forward against the backward table, comparing each
/// candidate with the exact value it was maximized into, so ties are exact.
pub fn viterbi(chain: &ChainScores) -> Result<(Vec<usize>, f64), ChainError> {
    chain.check_scorable()?;
    let beta = backward_best(chain);
    let best = beta[0].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if best == f64::NEG_INFINITY {
        return Err(ChainError::EmptyMaxMarginalSet { edge: None });
    }
    let mut path = Vec::with_capacity(chain.num_positions());
    let first = beta[0]
        .iter()
        .position(|&v| v == best)
        .expect("maximum is attained");
    path.push(first);
    for e in 0..chain.num_edges() {
        let edge = chain.edge(e);
        let k1 = path[e];
        let target = beta[e][k1];
        let k2 = (0..edge.cols())
            .find(|&k2| edge.score(k1, k2) + beta[e + 1][k2] == target)
            .expect("backward maximum is attained");
        path.push(k2);
    }
    Ok((path, best))
}

/// Exact number of feasible state paths (counting semiring over the mask).
pub fn count_paths(chain: &ChainScores) -> BigUint {
    let counts = chain.state_counts();
    let mut acc: Vec<BigUint> = vec![BigUint::from(1u32); counts[0]];
    for edge in chain.edges() {
        acc = (0..edge.cols())
            .map(|k2| {
                let mut total = BigUint::zero();
                for (k1, a) in acc.iter().enumerate() {
                    if edge.is_feasible(k1, k2) && !a.is_zero() {
                        total += a;
                    }
                }
                total
            })
            .collect();
    }
    acc.into_iter().sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_edge() -> ChainScores {
        // states a=0, b=1; row-major [aa, ab, ba, bb]
        ChainScores::new(
            vec![2, 2, 2],
            vec![vec![1.0, 0.0, 0.0, 2.0], vec![0.0, 1.0, 2.0, 0.0]],
        )
        .unwrap()
    }

    #[test]
    fn two_edge_max_marginals() {
        let mm = serial_max_marginals(&two_edge()).unwrap();
        assert_eq!(mm.edge_values(0).collect::<Vec<_>>(), vec![2.0, 2.0, 1.0, 4.0]);
        assert_eq!(mm.edge_values(1).collect::<Vec<_>>(), vec![1.0, 2.0, 4.0, 2.0]);
    }

    #[test]
    fn two_edge_viterbi() {
        let (path, score) = viterbi(&two_edge()).unwrap();
        assert_eq!(path, vec![1, 1, 0]);
        assert_eq!(score, 4.0);
    }

    #[test]
    fn uniform_chain_all_zero() {
        let chain = ChainScores::new(vec![3, 3, 3, 3], vec![vec![0.0; 9]; 3]).unwrap();
        let mm = serial_max_marginals(&chain).unwrap();
        for e in 0..3 {
            assert!(mm.edge_values(e).all(|v| v == 0.0));
        }
        let (path, score) = viterbi(&chain).unwrap();
        assert_eq!(path, vec![0, 0, 0, 0]);
        assert_eq!(score, 0.0);
    }

    #[test]
    fn all_zero_k3_single_edge_pair() {
        let chain = ChainScores::new(vec![3, 3, 3], vec![vec![0.0; 9]; 2]).unwrap();
        let (path, score) = viterbi(&chain).unwrap();
        assert_eq!(path, vec![0, 0, 0]);
        assert_eq!(score, 0.0);
    }

    #[test]
    fn counts() {
        let full = ChainScores::new(vec![2, 2, 2], vec![vec![0.0; 4]; 2]).unwrap();
        assert_eq!(count_paths(&full), BigUint::from(8u32));
        let ninf = f64::NEG_INFINITY;
        let diag = ChainScores::new(
            vec![2, 2, 2],
            vec![vec![0.0, ninf, ninf, 0.0], vec![0.0; 4]],
        )
        .unwrap();
        assert_eq!(count_paths(&diag), BigUint::from(4u32));
        let single = ChainScores::new(vec![5], vec![]).unwrap();
        assert_eq!(count_paths(&single), BigUint::from(5u32));
    }

    #[test]
    fn viterbi_reports_no_path() {
        let ninf = f64::NEG_INFINITY;
        let chain = ChainScores::new(vec![1, 2, 1], vec![vec![0.0, ninf], vec![ninf, 0.0]]).unwrap();
        assert!(viterbi(&chain).is_err());
    }
}
