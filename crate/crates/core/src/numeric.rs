//! Deterministic reductions.
//!
//! Sums in this crate must be bitwise reproducible regardless of worker
//! count, so reductions use a pairwise tree whose shape depends only on the
//! slice length. The tree also keeps rounding error well below a naive
//! left-to-right sum, which matters for the f32 gradient checks.

use crate::scalar::Scalar;

const LEAF: usize = 64;
const PAR_MIN: usize = 1 << 16;

/// Pairwise sum with a fixed tree shape.
///
/// The result depends only on the contents and length of `xs`, never on the
/// rayon thread count.
pub fn det_sum<T: Scalar>(xs: &[T]) -> T {
    if xs.len() <= LEAF {
        let mut s = T::zero();
        for &x in xs {
            s = s + x;
        }
        return s;
    }
    let (a, b) = xs.split_at(xs.len() / 2);
    if xs.len() >= PAR_MIN {
        let (sa, sb) = rayon::join(|| det_sum(a), || det_sum(b));
        sa + sb
    } else {
        det_sum(a) + det_sum(b)
    }
}

/// Mean with the same determinism guarantee as [`det_sum`].
pub fn det_mean<T: Scalar>(xs: &[T]) -> T {
    if xs.is_empty() {
        return T::zero();
    }
    det_sum(xs) / T::from(xs.len()).unwrap()
}
