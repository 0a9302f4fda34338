//! Nash equilibrium among both firms and the consumer continuum.
//!
//! At a fixed market share `mu` the firms' first-order conditions
//!
//! ```text
//! u1 = ((1 - mu) + 1/(u2 + 1)) / c,    u2 = (mu + 1/(u1 + 1)) / c
//! ```
//!
//! reduce to a quadratic in `u1` with exactly one positive root. With
//! clipping inactive the consumers' fixed point is `mu = (u1 - u2 + 1 + u0_mean) / 3`,
//! so the equilibrium share is the zero of
//!
//! ```text
//! gap(mu) = mu - (u1(mu) - u2(mu) + 1 + u0_mean) / 3
//! ```
//!
//! which is strictly increasing on [0, 1], negative at 0 and positive at 1.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_input, Error, Result};
use crate::model::{
    major_cost_derivative, mean_field_fixed_point_with, Equilibrium, EquilibriumKind,
    MinorPolicy, SolveMethod, SolveReport,
};
use crate::params::{Firm, InitialDistribution, ModelParams, MIN_UNIT_COST};
use crate::roots::bisect;

/// Default residual tolerance of the equilibrium solvers.
pub const DEFAULT_TOL: f64 = 1e-10;

/// Iteration cap of the outer bisection on the market share.
pub const NE_MAX_BISECTIONS: usize = 200;

const SUBGAME_RESIDUAL_TOL: f64 = 1e-10;

fn check_cost(c: f64) -> Result<()> {
    ensure_input!(
        c.is_finite() && c >= MIN_UNIT_COST,
        "unit cost c must be >= {MIN_UNIT_COST}, got {c}"
    );
    Ok(())
}

fn check_share(mu_bar: f64) -> Result<()> {
    ensure_input!(
        mu_bar.is_finite() && (0.0..=1.0).contains(&mu_bar),
        "mu_bar must lie in [0, 1], got {mu_bar}"
    );
    Ok(())
}

/// Firm best response with the market share held fixed (canonical parameters),
/// floored at zero.
pub fn major_br_given_field(firm: Firm, other_u: f64, mu_bar: f64, c: f64) -> Result<f64> {
    check_cost(c)?;
    check_share(mu_bar)?;
    ensure_input!(other_u.is_finite() && other_u >= 0.0, "other_u must be >= 0, got {other_u}");
    Ok(major_br_given_field_with(&ModelParams::canonical(c), firm, other_u, mu_bar))
}

/// General-parameter version of [`major_br_given_field`]; the firm cost is
/// strictly convex in its own control, so this is the zero of
/// [`major_cost_derivative`] floored at zero.
pub fn major_br_given_field_with(p: &ModelParams, firm: Firm, other_u: f64, mu_bar: f64) -> f64 {
    let share_gain = match firm {
        Firm::One => 1.0 - mu_bar,
        Firm::Two => mu_bar,
    };
    ((p.rho(firm) * share_gain + 1.0 / (other_u + p.epsilon)) / p.c).max(0.0)
}

/// The firms' two-player equilibrium at a fixed market share.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeSubgameSolution {
    pub u1_star: f64,
    pub u2_star: f64,
    pub mu_bar_input: f64,
    /// Discriminant of the quadratic in `u1`.
    pub discriminant: f64,
}

/// Positive root pair of the firms' subgame at market share `mu_bar`.
///
/// Substituting firm 2's response into firm 1's gives
/// `a u1^2 + b u1 + k = 0` with `a = c^2 + c mu`, `b = c^2 + 2 c mu - c - mu + mu^2`,
/// `k = -2c - 1 + c mu + mu^2`. Since `a > 0 > k` the roots have opposite
/// signs; the positive one is taken in the cancellation-free form.
pub fn solve_major_subgame_ne(mu_bar: f64, c: f64) -> Result<NeSubgameSolution> {
    check_cost(c)?;
    check_share(mu_bar)?;
    let mu = mu_bar;
    let a = c * c + c * mu;
    let b = c * c + 2.0 * c * mu - c - mu + mu * mu;
    let k = -2.0 * c - 1.0 + c * mu + mu * mu;
    let disc = b * b - 4.0 * a * k;
    if !(disc > 0.0) {
        return Err(Error::Consistency(format!(
            "subgame discriminant {disc:e} is not positive at mu={mu}, c={c}"
        )));
    }
    let sq = disc.sqrt();
    let u1 = if b >= 0.0 { 2.0 * k / (-b - sq) } else { (-b + sq) / (2.0 * a) };
    let p = ModelParams::canonical(c);
    let u2 = major_br_given_field_with(&p, Firm::Two, u1, mu);
    let r1 = (u1 - major_br_given_field_with(&p, Firm::One, u2, mu)).abs();
    let r2 = (u2 - major_br_given_field_with(&p, Firm::Two, u1, mu)).abs();
    let scale = 1.0 + u1.max(u2);
    if !(u1 > 0.0 && u2 > 0.0) || r1.max(r2) > SUBGAME_RESIDUAL_TOL * scale {
        return Err(Error::Consistency(format!(
            "subgame root (u1={u1}, u2={u2}) at mu={mu}, c={c} fails its best responses: \
             residuals {r1:e}, {r2:e}"
        )));
    }
    Ok(NeSubgameSolution {
        u1_star: u1,
        u2_star: u2,
        mu_bar_input: mu,
        discriminant: disc,
    })
}

/// `gap(mu) = mu - (u1(mu) - u2(mu) + 1 + u0_mean) / 3`; its zero is the NE share.
pub fn ne_gap(mu_bar: f64, c: f64, u0_mean: f64) -> Result<f64> {
    ensure_input!(
        (0.0..=1.0).contains(&u0_mean),
        "u0_mean must lie in [0, 1], got {u0_mean}"
    );
    let s = solve_major_subgame_ne(mu_bar, c)?;
    Ok(mu_bar - (s.u1_star - s.u2_star + 1.0 + u0_mean) / 3.0)
}

/// Nash equilibrium. Canonical parameters use the closed-form subgame and a
/// bisection on [`ne_gap`]; anything else goes through [`solve_ne_numerical`].
pub fn solve_ne(params: &ModelParams, dist: &InitialDistribution, tol: f64) -> Result<Equilibrium> {
    params.validate()?;
    ensure_input!(tol > 0.0 && tol.is_finite(), "tolerance must be positive, got {tol}");
    if !params.is_canonical() {
        return solve_ne_numerical(params, dist, tol);
    }
    let c = params.c;
    let u0_mean = dist.mean();

    let mut failure = None;
    let root = bisect(
        |mu| match ne_gap(mu, c, u0_mean) {
            Ok(v) => v,
            Err(e) => {
                failure.get_or_insert(e);
                f64::NAN
            }
        },
        0.0,
        1.0,
        0.25 * tol,
        NE_MAX_BISECTIONS,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    let root = root.map_err(|e| {
        Error::Solver(format!("NE share bisection at c={c}, u0_mean={u0_mean}: {e}"))
    })?;
    let mu = root.x;
    let sub = solve_major_subgame_ne(mu, c)?;
    finish_ne(
        params,
        dist,
        tol,
        mu,
        sub.u1_star,
        sub.u2_star,
        root.iterations,
        SolveMethod::ClosedForm,
        Some(root.bracket),
    )
}

/// NE for arbitrary parameters by nested bisection:
///
/// * inner: the firms' subgame at fixed `mu`, as a root of
///   `u1 - BR1(BR2(u1))` on `[0, (rho1 + 1/eps)/c]`;
/// * inner: the consumers' clipped fixed point for those controls;
/// * outer: `mu - Phi(u1(mu), u2(mu))` on [0, 1], increasing because
///   firm 1 advertises less as its share grows.
pub fn solve_ne_numerical(
    params: &ModelParams,
    dist: &InitialDistribution,
    tol: f64,
) -> Result<Equilibrium> {
    params.validate()?;
    ensure_input!(tol > 0.0 && tol.is_finite(), "tolerance must be positive, got {tol}");
    let inner_tol = (0.01 * tol).max(1e-15);

    let subgame = |mu: f64| -> Result<(f64, f64)> {
        let upper = (params.rho1 + 1.0 / params.epsilon) / params.c;
        let g = |u1: f64| {
            let u2 = major_br_given_field_with(params, Firm::Two, u1, mu);
            u1 - major_br_given_field_with(params, Firm::One, u2, mu)
        };
        let r = bisect(g, 0.0, upper, inner_tol, NE_MAX_BISECTIONS)?;
        let u1 = r.x;
        Ok((u1, major_br_given_field_with(params, Firm::Two, u1, mu)))
    };

    let mut failure = None;
    let mut inner_iterations = 0usize;
    let outer = bisect(
        |mu| {
            let step = subgame(mu).and_then(|(u1, u2)| {
                mean_field_fixed_point_with(params, u1, u2, dist, inner_tol)
            });
            match step {
                Ok(mf) => {
                    inner_iterations += mf.iterations;
                    mu - mf.mu_bar
                }
                Err(e) => {
                    failure.get_or_insert(e);
                    f64::NAN
                }
            }
        },
        0.0,
        1.0,
        0.25 * tol,
        NE_MAX_BISECTIONS,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    let outer = outer.map_err(|e| Error::Solver(format!("numerical NE share bisection: {e}")))?;
    let (u1, u2) = subgame(outer.x)?;
    finish_ne(
        params,
        dist,
        tol,
        outer.x,
        u1,
        u2,
        outer.iterations,
        SolveMethod::Bisection,
        Some(outer.bracket),
    )
}

#[allow(clippy::too_many_arguments)]
fn finish_ne(
    params: &ModelParams,
    dist: &InitialDistribution,
    tol: f64,
    mu: f64,
    u1: f64,
    u2: f64,
    iterations: usize,
    method: SolveMethod,
    bracket: Option<(f64, f64)>,
) -> Result<Equilibrium> {
    let policy = MinorPolicy::new(mu, u1, u2);
    let consumer_mean = dist.expect(|u0| policy.evaluate_with(params, u0));
    let residuals = vec![
        (u1 - major_br_given_field_with(params, Firm::One, u2, mu)).abs(),
        (u2 - major_br_given_field_with(params, Firm::Two, u1, mu)).abs(),
        (mu - consumer_mean).abs(),
    ];
    let final_residual = residuals.iter().copied().fold(0.0, f64::max);
    if final_residual > tol {
        return Err(Error::Solver(format!(
            "NE residuals {residuals:?} exceed tolerance {tol:e} (u1={u1}, u2={u2}, mu={mu}, c={})",
            params.c
        )));
    }
    // Interior optimum: the floor at zero must not be active.
    debug_assert!(major_cost_derivative(Firm::One, u1, u2, mu, params).abs() < 1e-6 * (1.0 + u1));
    Ok(Equilibrium {
        kind: EquilibriumKind::Ne,
        u1,
        u2,
        mu_bar: mu,
        policy,
        residuals,
        report: SolveReport {
            iterations,
            final_residual,
            method,
            converged: true,
            bracket,
            tolerance: tol,
        },
    })
}
