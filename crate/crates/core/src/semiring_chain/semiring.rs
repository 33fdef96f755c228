use num_bigint::BigUint;
use num_traits::{One, Zero};

/// A commutative semiring `(S, ⊕, ⊗, 0, 1)` used by the chain recursions.
///
/// | Semiring | ⊕   | ⊗ | 0  | 1 |
/// |----------|-----|---|----|---|
/// | MaxPlus  | max | + | -∞ | 0 |
/// | Counting | +   | × | 0  | 1 |
pub trait Semiring: Clone + Send + Sync {
    fn zero() -> Self;
    fn one() -> Self;
    fn plus(&self, rhs: &Self) -> Self;
    fn times(&self, rhs: &Self) -> Self;
}

/// Log-space score under `(max, +)`. `-∞` is the additive identity and is
/// closed under both operations; `+∞` and NaN never enter the semiring.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct MaxPlus(pub f64);

impl Semiring for MaxPlus {
    #[inline]
    fn zero() -> Self {
        MaxPlus(f64::NEG_INFINITY)
    }

    #[inline]
    fn one() -> Self {
        MaxPlus(0.0)
    }

    #[inline]
    fn plus(&self, rhs: &Self) -> Self {
        if rhs.0 > self.0 {
            *rhs
        } else {
            *self
        }
    }

    #[inline]
    fn times(&self, rhs: &Self) -> Self {
        MaxPlus(self.0 + rhs.0)
    }
}

/// Path counting over feasibility indicators.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Counting(pub BigUint);

impl Semiring for Counting {
    fn zero() -> Self {
        Counting(BigUint::zero())
    }

    fn one() -> Self {
        Counting(BigUint::one())
    }

    fn plus(&self, rhs: &Self) -> Self {
        Counting(&self.0 + &rhs.0)
    }

    fn times(&self, rhs: &Self) -> Self {
        if self.0.is_zero() || rhs.0.is_zero() {
            return Counting::zero();
        }
        Counting(&self.0 * &rhs.0)
    }
}

/// Dense row-major matrix of semiring values.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat<S> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<S>,
}

impl<S: Semiring> Mat<S> {
    pub fn filled(rows: usize, cols: usize, value: S) -> Self {
        Mat {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> &S {
        &self.data[r * self.cols + c]
    }

    /// `(self ⊗ rhs)[i][j] = ⊕_k self[i][k] ⊗ rhs[k][j]`.
    pub fn matmul(&self, rhs: &Mat<S>) -> Mat<S> {
        debug_assert_eq!(self.cols, rhs.rows);
        let mut out = Vec::with_capacity(self.rows * rhs.cols);
        for i in 0..self.rows {
            for j in 0..rhs.cols {
                let mut acc = S::zero();
                for k in 0..self.cols {
                    acc = acc.plus(&self.at(i, k).times(rhs.at(k, j)));
                }
                out.push(acc);
            }
        }
        Mat {
            rows: self.rows,
            cols: rhs.cols,
            data: out,
        }
    }

    /// Row vector times matrix.
    pub fn left_apply(&self, v: &[S]) -> Vec<S> {
        debug_assert_eq!(v.len(), self.rows);
        (0..self.cols)
            .map(|j| {
                let mut acc = S::zero();
                for (k, vk) in v.iter().enumerate() {
                    acc = acc.plus(&vk.times(self.at(k, j)));
                }
                acc
            })
            .collect()
    }

    /// Matrix times column vector.
    pub fn right_apply(&self, v: &[S]) -> Vec<S> {
        debug_assert_eq!(v.len(), self.cols);
        (0..self.rows)
            .map(|i| {
                let mut acc = S::zero();
                for (k, vk) in v.iter().enumerate() {
                    acc = acc.plus(&self.at(i, k).times(vk));
                }
                acc
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn max_plus_identities() {
        let a = MaxPlus(3.5);
        assert_eq!(a.plus(&MaxPlus::zero()), a);
        assert_eq!(a.times(&MaxPlus::one()), a);
        assert_eq!(a.times(&MaxPlus::zero()), MaxPlus::zero());
        let ninf = MaxPlus::zero();
        assert_eq!(ninf.times(&ninf), MaxPlus::zero());
    }

    #[test]
    fn counting_annihilates() {
        let two = Counting(BigUint::from(2u32));
        assert_eq!(two.times(&Counting::zero()), Counting::zero());
        assert_eq!(two.plus(&Counting::one()), Counting(BigUint::from(3u32)));
    }

    #[test]
    fn max_plus_matmul_small() {
        let a = Mat {
            rows: 2,
            cols: 2,
            data: vec![MaxPlus(1.0), MaxPlus(0.0), MaxPlus(0.0), MaxPlus(2.0)],
        };
        let b = Mat {
            rows: 2,
            cols: 2,
            data: vec![MaxPlus(0.0), MaxPlus(1.0), MaxPlus(2.0), MaxPlus(0.0)],
        };
        let c = a.matmul(&b);
        // paths a->?->? maximized over the middle state
        assert_eq!(
            c.data,
            vec![MaxPlus(2.0), MaxPlus(2.0), MaxPlus(4.0), MaxPlus(2.0)]
        );
    }
}
