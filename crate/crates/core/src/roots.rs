//! Bracketing root finder used by every fixed-point solve in the crate.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Root {
    pub x: f64,
    /// `|f(x)|` at the returned point.
    pub residual: f64,
    pub iterations: usize,
    /// Final bracket.
    pub bracket: (f64, f64),
}

/// Bisection for a sign change of `f` on `[lo, hi]`.
///
/// Stops once `|f(mid)| <= ftol` or the bracket has shrunk to a few ulps,
/// whichever comes first. The returned point is the bracket end or midpoint
/// with the smallest residual.
pub fn bisect(
    mut f: impl FnMut(f64) -> f64,
    lo: f64,
    hi: f64,
    ftol: f64,
    max_iter: usize,
) -> Result<Root> {
    let (mut lo, mut hi) = (lo.min(hi), lo.max(hi));
    let mut f_lo = f(lo);
    let f_hi = f(hi);
    if !(f_lo.is_finite() && f_hi.is_finite()) {
        return Err(Error::Solver(format!(
            "non-finite value at bracket ends: f({lo}) = {f_lo}, f({hi}) = {f_hi}"
        )));
    }
    if f_lo.abs() <= ftol {
        return Ok(Root {
            x: lo,
            residual: f_lo.abs(),
            iterations: 0,
            bracket: (lo, hi),
        });
    }
    if f_hi.abs() <= ftol {
        return Ok(Root {
            x: hi,
            residual: f_hi.abs(),
            iterations: 0,
            bracket: (lo, hi),
        });
    }
    if f_lo.signum() == f_hi.signum() {
        return Err(Error::Solver(format!(
            "no sign change on [{lo}, {hi}]: f(lo) = {f_lo:e}, f(hi) = {f_hi:e}"
        )));
    }

    let mut best = if f_lo.abs() < f_hi.abs() { (lo, f_lo.abs()) } else { (hi, f_hi.abs()) };
    for iteration in 1..=max_iter {
        let mid = 0.5 * (lo + hi);
        let f_mid = f(mid);
        if !f_mid.is_finite() {
            return Err(Error::Solver(format!("non-finite value f({mid}) = {f_mid}")));
        }
        if f_mid.abs() < best.1 {
            best = (mid, f_mid.abs());
        }
        if f_mid.abs() <= ftol {
            return Ok(Root {
                x: mid,
                residual: f_mid.abs(),
                iterations: iteration,
                bracket: (lo, hi),
            });
        }
        if f_mid.signum() == f_lo.signum() {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
        let ulps = 4.0 * f64::EPSILON * lo.abs().max(hi.abs()).max(f64::MIN_POSITIVE);
        if hi - lo <= ulps {
            return Ok(Root {
                x: best.0,
                residual: best.1,
                iterations: iteration,
                bracket: (lo, hi),
            });
        }
    }
    Err(Error::Solver(format!(
        "bisection did not converge in {max_iter} iterations; bracket [{lo}, {hi}], best |f| = {:e}",
        best.1
    )))
}
