//! Multi-leader-follower Nash equilibrium: the firms play a two-player game
//! in which each anticipates how the consumers' mean-field equilibrium
//! responds to its advertising.
//!
//! With clipping inactive the consumers settle at
//! `mu(u1, u2) = (u1 - u2 + 1 + u0_mean) / 3`. Substituting it into the firm
//! costs leaves strictly convex problems (second derivative `2/3 + c`) with
//! best responses
//!
//! ```text
//! u1 = (2 u2 - m u2 - m + 5) / (3c u2 + 3c + 2 u2 + 2)
//! u2 = (u1 + m u1 + m + 4)   / (3c u1 + 3c + 2 u1 + 2)
//! ```
//!
//! where `m = u0_mean`. The positive solution has a closed form, which the
//! solver evaluates verbatim and then confirms against a damped iteration of
//! the two maps.

use std::cell::RefCell;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_input, Error, Result};
use crate::model::{
    major_cost_unchecked, mean_field_fixed_point_with, mean_field_sensitivity, ClippingMasses, Equilibrium,
    EquilibriumKind, MeanField, MinorPolicy, SolveMethod, SolveReport,
};
use crate::ne::NE_MAX_BISECTIONS;
use crate::params::{Firm, InitialDistribution, ModelParams, MIN_UNIT_COST};
use crate::roots::bisect;

pub const BR_DAMPING: f64 = 0.5;
pub const BR_MAX_ITER: usize = 100_000;
pub const BR_TOL: f64 = 1e-12;
/// Largest allowed gap between the closed form and the iterated best responses.
pub const CROSS_CHECK_TOL: f64 = 1e-6;

const INNER_TOL: f64 = 1e-14;
/// Grid intervals scanned for local minima by [`mlf_best_response_numerical`].
pub const SCAN_POINTS: usize = 256;
/// Iteration cap of [`solve_mlfne_numerical`].
pub const NUMERICAL_MAX_ITER: usize = 2_000;

fn check_inputs(c: f64, u0_mean: f64) -> Result<()> {
    ensure_input!(
        c.is_finite() && c >= MIN_UNIT_COST,
        "unit cost c must be >= {MIN_UNIT_COST}, got {c}"
    );
    ensure_input!(
        (0.0..=1.0).contains(&u0_mean),
        "u0_mean must lie in [0, 1], got {u0_mean}"
    );
    Ok(())
}

/// Consumers' equilibrium share as the firms anticipate it, `(u1 - u2 + 1 + m) / 3`.
///
/// Not clamped: outside [0, 1] it signals that clipping would bind, which
/// never happens at the equilibrium itself.
pub fn anticipated_mean_field(u1: f64, u2: f64, u0_mean: f64) -> f64 {
    (u1 - u2 + 1.0 + u0_mean) / 3.0
}

/// Best response of `firm` when it anticipates the consumers' response.
pub fn major_br_mlf(firm: Firm, other_u: f64, c: f64, u0_mean: f64) -> Result<f64> {
    check_inputs(c, u0_mean)?;
    ensure_input!(other_u.is_finite() && other_u >= 0.0, "other_u must be >= 0, got {other_u}");
    Ok(br_mlf(firm, other_u, c, u0_mean))
}

fn br_mlf(firm: Firm, v: f64, c: f64, m: f64) -> f64 {
    let den = 3.0 * c * v + 3.0 * c + 2.0 * v + 2.0;
    match firm {
        Firm::One => (2.0 * v - m * v - m + 5.0) / den,
        Firm::Two => (v + m * v + m + 4.0) / den,
    }
}

/// First-order minimizer of the substituted cost when a fraction `p1` (`p2`)
/// of consumers is clipped at 0 (1), so that
/// `mu = (q (u1 - u2 + m + 1) + 4 p2) / (4 - q)` with `q = 1 - p1 - p2`.
///
/// Only meaningful off equilibrium (at equilibrium `p1 = p2 = 0` and this is
/// [`major_br_mlf`]).
pub fn generalized_major_br_mlf(
    firm: Firm,
    other_u: f64,
    c: f64,
    u0_mean: f64,
    masses: &ClippingMasses,
) -> Result<f64> {
    check_inputs(c, u0_mean)?;
    ensure_input!(other_u.is_finite() && other_u >= 0.0, "other_u must be >= 0, got {other_u}");
    ensure_input!(
        masses.p1 >= 0.0 && masses.p2 >= 0.0 && masses.p1 + masses.p2 <= 1.0 + 1e-12,
        "invalid clipping masses {masses:?}"
    );
    let (p2, m) = (masses.p2, u0_mean);
    let q = masses.interior();
    let soc = c + 2.0 * q / (4.0 - q);
    let drift = match firm {
        Firm::One => (4.0 * (1.0 - p2) - q * (2.0 + m)) / (4.0 - q),
        Firm::Two => (4.0 * p2 + q * (1.0 + m)) / (4.0 - q),
    };
    Ok(((1.0 / (other_u + 1.0) + drift) / soc).max(0.0))
}

/// Closed-form positive solution of the firms' anticipating game.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MlfneClosedForm {
    pub u1_star: f64,
    pub u2_star: f64,
    pub mu_bar: f64,
    pub delta: f64,
}

pub fn mlfne_closed_form(c: f64, u0_mean: f64) -> Result<MlfneClosedForm> {
    check_inputs(c, u0_mean)?;
    let m = u0_mean;
    let denom = 4.0 + 3.0 * c - m;
    if !(denom > 0.0) {
        return Err(Error::Consistency(format!("4 + 3c - m = {denom} is not positive")));
    }
    let delta = ((3.0 + 3.0 * c + m) * (36.0 + 57.0 * c + 9.0 * c * c + m - m * m) / denom).sqrt();
    let two_k = 2.0 * (2.0 + 3.0 * c);
    let u2 = (-1.0 - 3.0 * c + m + delta) / two_k;
    let u1 = (1.0 - 2.0 * m + (1.0 + 3.0 * c - m - delta) * (m - 3.0 * c - 4.0) / two_k)
        / (3.0 + 3.0 * c + m);
    Ok(MlfneClosedForm {
        u1_star: u1,
        u2_star: u2,
        mu_bar: anticipated_mean_field(u1, u2, m),
        delta,
    })
}

/// Damped simultaneous iteration of the two best-response maps.
/// Returns `(u1, u2, iterations)`.
pub fn mlf_best_response_iteration(
    c: f64,
    u0_mean: f64,
    start: (f64, f64),
    damping: f64,
    max_iter: usize,
    tol: f64,
) -> Result<(f64, f64, usize)> {
    check_inputs(c, u0_mean)?;
    ensure_input!(damping > 0.0 && damping <= 1.0, "damping must lie in (0, 1], got {damping}");
    let (mut u1, mut u2) = start;
    for it in 1..=max_iter {
        let n1 = br_mlf(Firm::One, u2, c, u0_mean);
        let n2 = br_mlf(Firm::Two, u1, c, u0_mean);
        if (n1 - u1).abs().max((n2 - u2).abs()) <= tol {
            return Ok((n1, n2, it));
        }
        u1 += damping * (n1 - u1);
        u2 += damping * (n2 - u2);
    }
    Err(Error::Solver(format!(
        "MLF best-response iteration did not reach {tol:e} in {max_iter} steps (c={c}, m={u0_mean})"
    )))
}

/// MLF-NE. Canonical parameters use the closed form with an iteration cross-check;
/// otherwise [`solve_mlfne_numerical`] with a mean-only initial law.
pub fn solve_mlfne(params: &ModelParams, u0_mean: f64, tol: f64) -> Result<Equilibrium> {
    params.validate()?;
    ensure_input!(tol > 0.0 && tol.is_finite(), "tolerance must be positive, got {tol}");
    let dist = InitialDistribution::mean_only(u0_mean)?;
    if !params.is_canonical() {
        return solve_mlfne_numerical(params, &dist, tol);
    }
    let c = params.c;
    let cf = mlfne_closed_form(c, u0_mean)?;
    let (i1, i2, iterations) =
        mlf_best_response_iteration(c, u0_mean, (1.0, 1.0), BR_DAMPING, BR_MAX_ITER, BR_TOL)?;
    let disagreement = (cf.u1_star - i1).abs().max((cf.u2_star - i2).abs());
    if disagreement > CROSS_CHECK_TOL {
        return Err(Error::Consistency(format!(
            "closed form ({}, {}) and best-response iteration ({i1}, {i2}) disagree by {disagreement:e}",
            cf.u1_star, cf.u2_star
        )));
    }
    let (u1, u2, mu) = (cf.u1_star, cf.u2_star, cf.mu_bar);
    if !(u1 > 0.0 && u2 > 0.0) {
        return Err(Error::Consistency(format!("closed form is not positive: ({u1}, {u2})")));
    }
    let policy = MinorPolicy::new(mu, u1, u2);
    let consumer_mean = dist.expect(|u0| policy.evaluate(u0));
    let residuals = vec![
        (u1 - br_mlf(Firm::One, u2, c, u0_mean)).abs(),
        (u2 - br_mlf(Firm::Two, u1, c, u0_mean)).abs(),
        (mu - consumer_mean).abs(),
        disagreement,
    ];
    finish(residuals, tol, u1, u2, mu, iterations, SolveMethod::ClosedForm)
}

/// Firm `firm`'s anticipating best response for general parameters and laws.
///
/// The consumers' clipped fixed point is re-solved at every trial control.
/// Clipping makes the substituted cost nonconvex, so the derivative is scanned
/// on [`SCAN_POINTS`] points of `[0, (rho + 1/eps) / c]`, every sign change
/// from negative to positive is bisected, and the cheapest local minimum wins.
pub fn mlf_best_response_numerical(
    params: &ModelParams,
    dist: &InitialDistribution,
    firm: Firm,
    other_u: f64,
) -> Result<f64> {
    let upper = (params.rho(firm) + 1.0 / params.epsilon) / params.c;
    let failure = RefCell::new(None);
    let d = |own: f64| match substituted_cost_derivative(params, dist, firm, own, other_u) {
        Ok(v) => v,
        Err(e) => {
            failure.borrow_mut().get_or_insert(e);
            f64::NAN
        }
    };
    let grid: Vec<f64> = (0..=SCAN_POINTS)
        .map(|k| upper * k as f64 / SCAN_POINTS as f64)
        .collect();
    let slopes: Vec<f64> = grid.iter().map(|&x| d(x)).collect();
    if let Some(e) = failure.borrow_mut().take() {
        return Err(e);
    }
    let mut candidates = Vec::new();
    if slopes[0] >= 0.0 {
        candidates.push(0.0);
    }
    for k in 0..SCAN_POINTS {
        if slopes[k] < 0.0 && slopes[k + 1] >= 0.0 {
            let root = bisect(&d, grid[k], grid[k + 1], 1e-13, NE_MAX_BISECTIONS);
            if let Some(e) = failure.borrow_mut().take() {
                return Err(e);
            }
            candidates.push(root?.x);
        }
    }
    let mut best: Option<(f64, f64)> = None;
    for x in candidates {
        let v = substituted_cost(params, dist, firm, x, other_u)?;
        if best.map_or(true, |(_, bv)| v < bv) {
            best = Some((x, v));
        }
    }
    best.map(|(x, _)| x).ok_or_else(|| {
        Error::Solver(format!(
            "no minimizer of the substituted cost on [0, {upper}] for {firm:?} at other_u={other_u}"
        ))
    })
}

/// Firm cost with the consumers' clipped fixed point re-solved at `(own_u, other_u)`.
pub fn substituted_cost(
    params: &ModelParams,
    dist: &InitialDistribution,
    firm: Firm,
    own_u: f64,
    other_u: f64,
) -> Result<f64> {
    let (u1, u2) = firm.arrange(own_u, other_u);
    let mf = mean_field_fixed_point_with(params, u1, u2, dist, INNER_TOL)?;
    Ok(major_cost_unchecked(firm, own_u, other_u, mf.mu_bar, params))
}

/// `d/d(own)` of the firm cost with the consumers' share re-equilibrated.
pub fn substituted_cost_derivative(
    params: &ModelParams,
    dist: &InitialDistribution,
    firm: Firm,
    own_u: f64,
    other_u: f64,
) -> Result<f64> {
    let (u1, u2) = firm.arrange(own_u, other_u);
    let MeanField { mu_bar, masses, .. } =
        mean_field_fixed_point_with(params, u1, u2, dist, INNER_TOL)?;
    let s = mean_field_sensitivity(params, &masses);
    let share_gain = match firm {
        Firm::One => 1.0 - mu_bar,
        Firm::Two => mu_bar,
    };
    Ok(-params.rho(firm) * share_gain + (params.rho1 * u1 + params.rho2 * u2) * s
        - 1.0 / (other_u + params.epsilon)
        + params.c * own_u)
}

/// MLF-NE for general parameters and initial laws: damped best-response
/// iteration (damping 0.5 from (1, 1)) over [`mlf_best_response_numerical`].
pub fn solve_mlfne_numerical(
    params: &ModelParams,
    dist: &InitialDistribution,
    tol: f64,
) -> Result<Equilibrium> {
    params.validate()?;
    ensure_input!(tol > 0.0 && tol.is_finite(), "tolerance must be positive, got {tol}");
    let (mut u1, mut u2) = (1.0, 1.0);
    for it in 1..=NUMERICAL_MAX_ITER {
        let n1 = mlf_best_response_numerical(params, dist, Firm::One, u2)?;
        let n2 = mlf_best_response_numerical(params, dist, Firm::Two, u1)?;
        let step = (n1 - u1).abs().max((n2 - u2).abs());
        if step <= 0.1 * tol {
            let mf = mean_field_fixed_point_with(params, n1, n2, dist, INNER_TOL)?;
            let residuals = vec![
                (n1 - mlf_best_response_numerical(params, dist, Firm::One, n2)?).abs(),
                (n2 - mlf_best_response_numerical(params, dist, Firm::Two, n1)?).abs(),
                mf.residual,
            ];
            return finish(residuals, tol, n1, n2, mf.mu_bar, it, SolveMethod::BestResponseIteration);
        }
        u1 += BR_DAMPING * (n1 - u1);
        u2 += BR_DAMPING * (n2 - u2);
    }
    Err(Error::Solver(format!(
        "numerical MLF-NE did not converge in {NUMERICAL_MAX_ITER} iterations (last u1={u1}, u2={u2})"
    )))
}

fn finish(
    residuals: Vec<f64>,
    tol: f64,
    u1: f64,
    u2: f64,
    mu: f64,
    iterations: usize,
    method: SolveMethod,
) -> Result<Equilibrium> {
    let final_residual = residuals.iter().copied().fold(0.0, f64::max);
    if final_residual > tol {
        return Err(Error::Solver(format!(
            "MLF-NE residuals {residuals:?} exceed tolerance {tol:e} (u1={u1}, u2={u2}, mu={mu})"
        )));
    }
    Ok(Equilibrium {
        kind: EquilibriumKind::Mlfne,
        u1,
        u2,
        mu_bar: mu,
        policy: MinorPolicy::new(mu, u1, u2),
        residuals,
        report: SolveReport {
            iterations,
            final_residual,
            method,
            converged: true,
            bracket: None,
            tolerance: tol,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ne::DEFAULT_TOL;

    const SYM_U: f64 = 0.661_187_420_807_834_2;

    #[test]
    fn anticipated_field_examples() {
        assert_eq!(anticipated_mean_field(0.7, 0.7, 0.5), 0.5);
        assert!((anticipated_mean_field(1.499667, 1.231606, 0.3) - 0.522687).abs() < 1e-6);
        assert!((anticipated_mean_field(0.0, 0.0, 0.0) - 1.0 / 3.0).abs() < 1e-16);
    }

    #[test]
    fn br_examples() {
        let v = major_br_mlf(Firm::Two, 0.661187, 1.0, 0.5).unwrap();
        assert!((v - 0.661187).abs() < 1e-6);
        assert!((major_br_mlf(Firm::One, 0.0, 1.0, 0.0).unwrap() - 1.0).abs() < 1e-15);
        assert!(major_br_mlf(Firm::One, 0.0, 0.0, 0.0).unwrap_err().is_input_error());
    }

    #[test]
    fn br_is_argmin_of_substituted_cost() {
        // Finite-difference argmin of J1(u1; u2, mu(u1, u2)) with the linear share.
        let (c, m, u2) = (1.0, 0.0, 0.0);
        let p = ModelParams::canonical(c);
        let j = |u1: f64| major_cost_unchecked(Firm::One, u1, u2, anticipated_mean_field(u1, u2, m), &p);
        let (mut lo, mut hi) = (0.0f64, 5.0f64);
        for _ in 0..200 {
            let a = lo + (hi - lo) / 3.0;
            let b = hi - (hi - lo) / 3.0;
            if j(a) < j(b) { hi = b } else { lo = a }
        }
        assert!((0.5 * (lo + hi) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn symmetric_iteration_converges_to_equal_controls() {
        for start in [(0.1, 3.0), (5.0, 0.2), (1.0, 1.0)] {
            let (u1, u2, _) = mlf_best_response_iteration(1.0, 0.5, start, 0.5, 10_000, 1e-14).unwrap();
            assert!((u1 - u2).abs() < 1e-12);
        }
    }

    #[test]
    fn symmetric_closed_form() {
        let cf = mlfne_closed_form(1.0, 0.5).unwrap();
        assert!((cf.delta - 102.25f64.sqrt()).abs() < 1e-14);
        assert!((cf.u1_star - SYM_U).abs() < 1e-14 && (cf.u2_star - SYM_U).abs() < 1e-14);
        assert!((cf.mu_bar - 0.5).abs() < 1e-15);
    }

    #[test]
    fn leader_flip_closed_form() {
        let cf = mlfne_closed_form(0.01, 0.3).unwrap();
        assert!((cf.u1_star - 1.49967).abs() < 1e-5);
        assert!((cf.u2_star - 1.23161).abs() < 1e-5);
        assert!((cf.mu_bar - 0.52269).abs() < 1e-5);
    }

    #[test]
    fn solve_symmetric_and_below_ne() {
        let eq = solve_mlfne(&ModelParams::canonical(1.0), 0.5, DEFAULT_TOL).unwrap();
        assert!((eq.u1 - SYM_U).abs() < 1e-12 && (eq.u2 - SYM_U).abs() < 1e-12);
        assert!(eq.u1 < 1.0);
        assert!(eq.residuals[3] < 1e-8, "cross-check gap {}", eq.residuals[3]);
        assert_eq!(eq.report.method, SolveMethod::ClosedForm);
    }

    #[test]
    fn generalized_br_reduces_without_clipping() {
        for &(v, c, m) in &[(0.3, 1.0, 0.2), (2.0, 0.01, 0.9), (0.0, 7.0, 0.5)] {
            for firm in [Firm::One, Firm::Two] {
                let a = generalized_major_br_mlf(firm, v, c, m, &ClippingMasses::default()).unwrap();
                let b = major_br_mlf(firm, v, c, m).unwrap();
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn generalized_br_with_full_clipping_ignores_the_share_channel() {
        // Everyone clipped at 1: mu = 1 regardless of u1, so firm 1's marginal
        // share gain is zero and only the ratio term drives it.
        let m = ClippingMasses { p1: 0.0, p2: 1.0 };
        let v = generalized_major_br_mlf(Firm::One, 1.0, 2.0, 0.5, &m).unwrap();
        assert!((v - 0.25).abs() < 1e-15);
        assert!(generalized_major_br_mlf(Firm::One, 1.0, 2.0, 0.5, &ClippingMasses { p1: 0.7, p2: 0.7 }).is_err());
    }

    #[test]
    fn numerical_path_matches_closed_form() {
        for &(c, m) in &[(1.0, 0.5), (0.1, 0.3), (10.0, 0.8)] {
            let p = ModelParams::canonical(c);
            let a = solve_mlfne(&p, m, DEFAULT_TOL).unwrap();
            let b = solve_mlfne_numerical(&p, &InitialDistribution::MeanOnly(m), DEFAULT_TOL).unwrap();
            assert!((a.u1 - b.u1).abs() < 1e-8 && (a.u2 - b.u2).abs() < 1e-8, "{c} {m}");
            assert!((a.mu_bar - b.mu_bar).abs() < 1e-8);
        }
    }

    #[test]
    fn non_canonical_dispatch() {
        let p = ModelParams {
            c: 0.5,
            rho2: 1.3,
            eta: 2.0,
            ..Default::default()
        };
        let eq = solve_mlfne(&p, 0.4, DEFAULT_TOL).unwrap();
        assert_eq!(eq.report.method, SolveMethod::BestResponseIteration);
        for (firm, own, other) in [(Firm::One, eq.u1, eq.u2), (Firm::Two, eq.u2, eq.u1)] {
            let d = substituted_cost_derivative(&p, &InitialDistribution::MeanOnly(0.4), firm, own, other)
                .unwrap();
            assert!(d.abs() < 1e-9, "{firm:?}: {d}");
        }
    }

    #[test]
    fn low_cost_closed_form_is_only_a_local_minimizer() {
        // At c = 0.01 saturating every consumer beats the stationary point.
        let (c, m) = (0.01, 0.3);
        let p = ModelParams::canonical(c);
        let dist = InitialDistribution::MeanOnly(m);
        let cf = mlfne_closed_form(c, m).unwrap();
        let at_cf = substituted_cost(&p, &dist, Firm::One, cf.u1_star, cf.u2_star).unwrap();
        let flood = substituted_cost(&p, &dist, Firm::One, 10.0, cf.u2_star).unwrap();
        assert!(flood < at_cf - 1.0);
        assert!(solve_mlfne_numerical(&p, &dist, DEFAULT_TOL).is_err());
    }
}
