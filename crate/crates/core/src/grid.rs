//! Deterministic low-discrepancy sampling of balls.

use nalgebra::DVector;

const PRIMES: [u32; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];

/// Radical inverse of `index` in `base` (one Halton coordinate).
pub fn radical_inverse(mut index: u64, base: u32) -> f64 {
    let b = u64::from(base);
    let inv = 1.0 / f64::from(base);
    let mut f = inv;
    let mut r = 0.0;
    while index > 0 {
        r += f * (index % b) as f64;
        index /= b;
        f *= inv;
    }
    r
}

/// `count` Halton points inside the closed ball of `radius` around `center`.
///
/// Points come from the Halton sequence on `[-1, 1]^n` (index 0 skipped),
/// rejected outside the unit ball, then scaled. The same arguments always
/// yield the same points.
pub fn ball_points(center: &DVector<f64>, radius: f64, count: usize) -> Vec<DVector<f64>> {
    let n = center.len();
    assert!(n <= PRIMES.len(), "ball_points supports up to {} dimensions", PRIMES.len());
    let mut out = Vec::with_capacity(count);
    let mut index = 1u64;
    while out.len() < count {
        let p = DVector::from_iterator(n, (0..n).map(|d| 2.0 * radical_inverse(index, PRIMES[d]) - 1.0));
        index += 1;
        if p.norm_squared() <= 1.0 {
            out.push(center + p * radius);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn radical_inverse_base_two() {
        let got: Vec<f64> = (1..5).map(|i| radical_inverse(i, 2)).collect();
        assert_eq!(got, vec![0.5, 0.25, 0.75, 0.125]);
    }

    #[test]
    fn points_stay_in_ball_and_are_reproducible() {
        let c = DVector::from_vec(vec![1.0, -1.0, 0.5]);
        let a = ball_points(&c, 0.3, 500);
        assert_eq!(a.len(), 500);
        assert!(a.iter().all(|p| (p - &c).norm() <= 0.3 + 1e-15));
        assert_eq!(a, ball_points(&c, 0.3, 500));
    }
}
