//! Central finite differences for gradient verification.
//!
//! Test support: independent of every backward implementation, it only ever
//! evaluates the supplied loss closure.

use crate::scalar::Scalar;

/// Numeric gradient of `loss` at `x` by central differences with step `h`.
pub fn numeric_grad<F: Scalar>(mut loss: impl FnMut(&[F]) -> F, x: &[F], h: F) -> Vec<F> {
    let mut point = x.to_vec();
    let two_h = h + h;
    (0..x.len())
        .map(|i| {
            let orig = point[i];
            point[i] = orig + h;
            let up = loss(&point);
            point[i] = orig - h;
            let down = loss(&point);
            point[i] = orig;
            (up - down) / two_h
        })
        .collect()
}

/// Largest error |a - n| / max(|a|, |n|, floor) between two gradients. The
/// floor guards entries smaller than what central differences can resolve:
/// an O(1) loss carries ~1e-16 relative roundoff, so the difference quotient
/// over 2e-5 has ~1e-10 absolute noise regardless of the true gradient.
pub fn max_rel_error<F: Scalar>(analytic: &[F], numeric: &[F], floor: F) -> F {
    assert_eq!(analytic.len(), numeric.len());
    let mut worst = F::zero();
    for (&a, &n) in analytic.iter().zip(numeric) {
        let scale = a.abs().max(n.abs()).max(floor);
        worst = worst.max((a - n).abs() / scale);
    }
    worst
}

/// Default magnitude floor for [`max_rel_error`]: the smallest gradient a
/// 1e-5-step f64 central difference can certify at 1e-4 relative tolerance.
pub const REL_ERROR_FLOOR: f64 = 1e-5;

/// Panics unless every analytic entry matches its central-difference value
/// within `rel_tol`.
pub fn assert_grad_close<F: Scalar>(analytic: &[F], numeric: &[F], rel_tol: F, context: &str) {
    let err = max_rel_error(analytic, numeric, F::from_f64(REL_ERROR_FLOOR));
    assert!(
        err <= rel_tol,
        "{context}: max relative gradient error {err} exceeds {rel_tol}"
    );
}
