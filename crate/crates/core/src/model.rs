//! Cost functionals, the consumer best response and the clipped mean-field
//! fixed point. Everything the two equilibrium solvers share lives here.
//!
//! A representative consumer with initial preference `u0` picks a preference
//! rate `u_c` in [0, 1] for product 1, minimizing
//!
//! ```text
//! beta/2 (u_c - u0)^2 + eta/2 (u_c - mu)^2
//!     - [(alpha + u1) u_c + (alpha + u2)(1 - u_c) - (u_c^2 + (1 - u_c)^2 - 2 gamma u_c (1 - u_c)) / 2]
//! ```
//!
//! where `mu` is the population mean preference (product 1's market share).
//! The cost is a strictly convex quadratic in `u_c`, so the best response is
//! its vertex clipped to [0, 1]:
//!
//! ```text
//! u_c* = clip((beta u0 + eta mu + u1 - u2 + 1 + gamma) / (beta + eta + 2 + 2 gamma))
//! ```
//!
//! which at canonical parameters is `clip((mu + u1 - u2 + u0 + 1) / 4)`.
//!
//! Firm 1 minimizes
//! `-(rho1 u1 (1 - mu) - rho2 u2 mu) - (u1 + eps)/(u2 + eps) + c/2 u1^2`,
//! firm 2 the mirrored cost.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_input, Error, Result};
use crate::params::{Firm, InitialDistribution, ModelParams};
use crate::roots::bisect;

/// Tolerance of the mean-field bisection when callers have no better choice.
pub const FIXED_POINT_TOL: f64 = 1e-12;
/// Iteration cap for the mean-field bisection.
pub const FIXED_POINT_MAX_ITER: usize = 200;

fn check_unit(name: &str, v: f64) -> Result<()> {
    ensure_input!(
        v.is_finite() && (0.0..=1.0).contains(&v),
        "{name} must lie in [0, 1], got {v}"
    );
    Ok(())
}

fn check_control(name: &str, v: f64) -> Result<()> {
    ensure_input!(v.is_finite() && v >= 0.0, "{name} must be a finite value >= 0, got {v}");
    Ok(())
}

/// Pointwise consumer cost at preference `u_c` given initial preference `u0`.
pub fn minor_cost(
    u_c: f64,
    u0: f64,
    mu_bar: f64,
    u1: f64,
    u2: f64,
    params: &ModelParams,
) -> Result<f64> {
    check_unit("u_c", u_c)?;
    check_unit("u0", u0)?;
    check_unit("mu_bar", mu_bar)?;
    check_control("u1", u1)?;
    check_control("u2", u2)?;
    params.validate()?;
    Ok(minor_cost_unchecked(u_c, u0, mu_bar, u1, u2, params))
}

pub(crate) fn minor_cost_unchecked(
    u_c: f64,
    u0: f64,
    mu_bar: f64,
    u1: f64,
    u2: f64,
    p: &ModelParams,
) -> f64 {
    let loyalty = 0.5 * p.beta * (u_c - u0).powi(2);
    let conformity = 0.5 * p.eta * (u_c - mu_bar).powi(2);
    let v = 1.0 - u_c;
    let utility = (p.alpha + u1) * u_c + (p.alpha + u2) * v
        - 0.5 * (u_c * u_c + v * v - 2.0 * p.gamma * u_c * v);
    loyalty + conformity - utility
}

/// `d/du_c` of [`minor_cost`].
pub fn minor_cost_derivative(
    u_c: f64,
    u0: f64,
    mu_bar: f64,
    u1: f64,
    u2: f64,
    p: &ModelParams,
) -> f64 {
    p.beta * (u_c - u0) + p.eta * (u_c - mu_bar) - (u1 - u2) + (1.0 + p.gamma) * (2.0 * u_c - 1.0)
}

/// Cost of `firm` given its own control, the rival's and the market share of product 1.
pub fn major_cost(
    firm: Firm,
    own_u: f64,
    other_u: f64,
    mu_bar: f64,
    params: &ModelParams,
) -> Result<f64> {
    check_control("own_u", own_u)?;
    check_control("other_u", other_u)?;
    check_unit("mu_bar", mu_bar)?;
    params.validate()?;
    Ok(major_cost_unchecked(firm, own_u, other_u, mu_bar, params))
}

pub(crate) fn major_cost_unchecked(
    firm: Firm,
    own_u: f64,
    other_u: f64,
    mu_bar: f64,
    p: &ModelParams,
) -> f64 {
    let (u1, u2) = firm.arrange(own_u, other_u);
    let gain1 = p.rho1 * u1 * (1.0 - mu_bar) - p.rho2 * u2 * mu_bar;
    let share_term = match firm {
        Firm::One => gain1,
        Firm::Two => -gain1,
    };
    -share_term - (own_u + p.epsilon) / (other_u + p.epsilon) + 0.5 * p.c * own_u * own_u
}

/// `d/d(own_u)` of [`major_cost`] with the market share held fixed.
pub fn major_cost_derivative(
    firm: Firm,
    own_u: f64,
    other_u: f64,
    mu_bar: f64,
    p: &ModelParams,
) -> f64 {
    let share_gain = match firm {
        Firm::One => 1.0 - mu_bar,
        Firm::Two => mu_bar,
    };
    -p.rho(firm) * share_gain - 1.0 / (other_u + p.epsilon) + p.c * own_u
}

/// Vertex of the consumer cost before clipping, for general parameters.
pub fn unclipped_minor_response(p: &ModelParams, mu_bar: f64, u1: f64, u2: f64, u0: f64) -> f64 {
    (p.beta * u0 + p.eta * mu_bar + u1 - u2 + 1.0 + p.gamma)
        / (p.beta + p.eta + 2.0 + 2.0 * p.gamma)
}

/// Consumer best response for general parameters.
pub fn minor_best_response_with(p: &ModelParams, mu_bar: f64, u1: f64, u2: f64, u0: f64) -> f64 {
    unclipped_minor_response(p, mu_bar, u1, u2, u0).clamp(0.0, 1.0)
}

/// Consumer best response at canonical parameters: `clip((mu + u1 - u2 + u0 + 1) / 4)`.
pub fn minor_best_response(mu_bar: f64, u1: f64, u2: f64, u0: f64) -> Result<f64> {
    check_unit("mu_bar", mu_bar)?;
    check_unit("u0", u0)?;
    check_control("u1", u1)?;
    check_control("u2", u2)?;
    Ok(((mu_bar + (u1 - u2) + u0 + 1.0) / 4.0).clamp(0.0, 1.0))
}

/// The consumers' feedback rule `u0 -> u_c*` at fixed mean field and firm controls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinorPolicy {
    pub mu_bar: f64,
    pub u1: f64,
    pub u2: f64,
}

impl MinorPolicy {
    pub fn new(mu_bar: f64, u1: f64, u2: f64) -> Self {
        MinorPolicy { mu_bar, u1, u2 }
    }

    /// Canonical-parameter response before clipping.
    pub fn unclipped(&self, u0: f64) -> f64 {
        (self.mu_bar + (self.u1 - self.u2) + u0 + 1.0) / 4.0
    }

    pub fn evaluate(&self, u0: f64) -> f64 {
        self.unclipped(u0).clamp(0.0, 1.0)
    }

    pub fn evaluate_with(&self, params: &ModelParams, u0: f64) -> f64 {
        minor_best_response_with(params, self.mu_bar, self.u1, self.u2, u0)
    }

    /// True when the unclipped response stays in [0, 1] on the whole of [0, 1].
    /// The response is affine and increasing in `u0`, so the endpoints decide.
    pub fn clipping_inactive(&self, params: &ModelParams) -> bool {
        let lo = unclipped_minor_response(params, self.mu_bar, self.u1, self.u2, 0.0);
        let hi = unclipped_minor_response(params, self.mu_bar, self.u1, self.u2, 1.0);
        lo >= 0.0 && hi <= 1.0
    }
}

/// Probability masses of initial preferences whose unconstrained response
/// falls below 0 (`p1`) or above 1 (`p2`).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ClippingMasses {
    pub p1: f64,
    pub p2: f64,
}

impl ClippingMasses {
    /// Mass of consumers whose response is interior.
    pub fn interior(&self) -> f64 {
        (1.0 - self.p1 - self.p2).max(0.0)
    }
}

/// Clipping masses at canonical parameters. Needs concrete atoms.
pub fn clipping_masses(
    mu_bar: f64,
    u1: f64,
    u2: f64,
    dist: &InitialDistribution,
) -> Result<ClippingMasses> {
    clipping_masses_with(&ModelParams::default(), mu_bar, u1, u2, dist)
}

pub fn clipping_masses_with(
    params: &ModelParams,
    mu_bar: f64,
    u1: f64,
    u2: f64,
    dist: &InitialDistribution,
) -> Result<ClippingMasses> {
    if let InitialDistribution::MeanOnly(_) = dist {
        return Err(Error::UnsupportedDistribution);
    }
    check_unit("mu_bar", mu_bar)?;
    check_control("u1", u1)?;
    check_control("u2", u2)?;
    Ok(masses_unchecked(params, mu_bar, u1, u2, dist))
}

fn masses_unchecked(
    p: &ModelParams,
    mu_bar: f64,
    u1: f64,
    u2: f64,
    dist: &InitialDistribution,
) -> ClippingMasses {
    let resp = |u0| unclipped_minor_response(p, mu_bar, u1, u2, u0);
    ClippingMasses {
        p1: dist.mass_where(|u0| resp(u0) < 0.0),
        p2: dist.mass_where(|u0| resp(u0) > 1.0),
    }
}

/// Solution of the consumers' mean-field consistency condition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanField {
    pub mu_bar: f64,
    /// Clipping masses evaluated at `mu_bar`.
    pub masses: ClippingMasses,
    /// `|mu_bar - E[u_c*(u0)]|`.
    pub residual: f64,
    pub iterations: usize,
}

/// Consumers' equilibrium market share at canonical parameters.
///
/// Solves `mu = E[clip((mu + u1 - u2 + u0 + 1) / 4)]` by bisection on [0, 1].
/// The right-hand side has slope at most 1/4 in `mu`, so
/// `mu - E[...]` is strictly increasing and the root is unique.
pub fn mean_field_fixed_point(
    u1: f64,
    u2: f64,
    dist: &InitialDistribution,
    tol: f64,
) -> Result<MeanField> {
    mean_field_fixed_point_with(&ModelParams::default(), u1, u2, dist, tol)
}

/// General-parameter version of [`mean_field_fixed_point`]; the slope of the
/// right-hand side is `eta / (beta + eta + 2 + 2 gamma) < 1`.
pub fn mean_field_fixed_point_with(
    params: &ModelParams,
    u1: f64,
    u2: f64,
    dist: &InitialDistribution,
    tol: f64,
) -> Result<MeanField> {
    check_control("u1", u1)?;
    check_control("u2", u2)?;
    ensure_input!(tol > 0.0 && tol.is_finite(), "tolerance must be positive, got {tol}");
    let gap = |mu: f64| {
        mu - dist.expect(|u0| minor_best_response_with(params, mu, u1, u2, u0))
    };
    let root = bisect(gap, 0.0, 1.0, tol, FIXED_POINT_MAX_ITER).map_err(|e| {
        Error::Solver(format!("mean-field fixed point at u1={u1}, u2={u2}: {e}"))
    })?;
    if root.residual > tol {
        return Err(Error::Solver(format!(
            "mean-field fixed point at u1={u1}, u2={u2}: residual {:e} above tolerance {tol:e} \
             after {} iterations",
            root.residual, root.iterations
        )));
    }
    Ok(MeanField {
        mu_bar: root.x,
        masses: masses_unchecked(params, root.x, u1, u2, dist),
        residual: root.residual,
        iterations: root.iterations,
    })
}

/// `d mu / d(u1 - u2)` of the consumers' fixed point when the interior mass
/// is held at `masses.interior()`. Equals 1/3 at canonical parameters with
/// no clipping.
pub fn mean_field_sensitivity(params: &ModelParams, masses: &ClippingMasses) -> f64 {
    let k = params.beta + params.eta + 2.0 + 2.0 * params.gamma;
    let q = masses.interior();
    q / (k - q * params.eta)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EquilibriumKind {
    /// Nash equilibrium among both firms and the consumer continuum.
    #[serde(rename = "NE")]
    Ne,
    /// Firms play a two-player game anticipating the consumers' response.
    #[serde(rename = "MLFNE")]
    Mlfne,
}

impl EquilibriumKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EquilibriumKind::Ne => "NE",
            EquilibriumKind::Mlfne => "MLFNE",
        }
    }
}

impl std::fmt::Display for EquilibriumKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for EquilibriumKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ne" => Ok(EquilibriumKind::Ne),
            "mlfne" | "mlf-ne" => Ok(EquilibriumKind::Mlfne),
            other => Err(Error::InvalidInput(format!(
                "unknown equilibrium kind `{other}` (expected ne or mlfne)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveMethod {
    ClosedForm,
    Bisection,
    BestResponseIteration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub final_residual: f64,
    pub method: SolveMethod,
    pub converged: bool,
    pub bracket: Option<(f64, f64)>,
    /// Tolerance the residuals were checked against.
    pub tolerance: f64,
}

/// A solved equilibrium tuple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Equilibrium {
    pub kind: EquilibriumKind,
    pub u1: f64,
    pub u2: f64,
    pub mu_bar: f64,
    pub policy: MinorPolicy,
    /// Absolute residual of each defining equation.
    pub residuals: Vec<f64>,
    pub report: SolveReport,
}

impl Equilibrium {
    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().copied().fold(0.0, f64::max)
    }

    /// Both firms' costs at the equilibrium market share.
    pub fn firm_costs(&self, params: &ModelParams) -> (f64, f64) {
        (
            major_cost_unchecked(Firm::One, self.u1, self.u2, self.mu_bar, params),
            major_cost_unchecked(Firm::Two, self.u2, self.u1, self.mu_bar, params),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::Atom;

    fn canon() -> ModelParams {
        ModelParams::canonical(1.0)
    }

    fn uniform_atoms(n: usize) -> InitialDistribution {
        let values: Vec<f64> = (0..n).map(|k| (k as f64 + 0.5) / n as f64).collect();
        InitialDistribution::empirical(&values).unwrap()
    }

    #[test]
    fn minor_cost_examples() {
        let v = minor_cost(0.5, 0.5, 0.5, 1.0, 1.0, &canon()).unwrap();
        assert!((v - (-0.75)).abs() < 1e-15);
        let v = minor_cost(0.0, 0.0, 0.0, 0.0, 0.0, &canon()).unwrap();
        assert!((v - 0.5).abs() < 1e-15);
    }

    #[test]
    fn minor_cost_grid_argmin() {
        // Dense grid oracle, step 1e-6.
        let p = canon();
        let (mut best, mut best_v) = (0.0, f64::INFINITY);
        for k in 0..=1_000_000 {
            let u = k as f64 * 1e-6;
            let v = minor_cost_unchecked(u, 0.0, 0.4, 0.2, 0.1, &p);
            if v < best_v {
                best_v = v;
                best = u;
            }
        }
        assert!((best - 0.375).abs() <= 1e-6);
        assert!((minor_best_response(0.4, 0.2, 0.1, 0.0).unwrap() - 0.375).abs() < 1e-15);
    }

    #[test]
    fn minor_cost_rejects_out_of_range() {
        assert!(minor_cost(1.2, 0.5, 0.5, 1.0, 1.0, &canon()).unwrap_err().is_input_error());
        assert!(minor_cost(0.5, 0.5, 0.5, -1.0, 1.0, &canon()).is_err());
        assert!(major_cost(Firm::One, -0.1, 1.0, 0.5, &canon()).is_err());
    }

    #[test]
    fn major_cost_examples() {
        let p = canon();
        assert!((major_cost(Firm::One, 1.0, 1.0, 0.5, &p).unwrap() + 0.5).abs() < 1e-15);
        assert!((major_cost(Firm::One, 0.0, 0.0, 0.0, &p).unwrap() + 1.0).abs() < 1e-15);
        assert!((major_cost(Firm::Two, 1.0, 1.0, 0.5, &p).unwrap() + 0.5).abs() < 1e-15);
    }

    #[test]
    fn minor_best_response_examples() {
        assert_eq!(minor_best_response(0.5, 1.0, 1.0, 0.5).unwrap(), 0.5);
        assert_eq!(minor_best_response(0.5, 3.0, 0.0, 1.0).unwrap(), 1.0);
        assert!(minor_best_response(1.5, 0.0, 0.0, 0.5).is_err());
    }

    #[test]
    fn general_response_reduces_to_canonical() {
        let p = canon();
        for &(mu, u1, u2, u0) in &[(0.3, 0.2, 1.1, 0.9), (0.8, 2.0, 0.1, 0.0)] {
            let a = minor_best_response_with(&p, mu, u1, u2, u0);
            let b = minor_best_response(mu, u1, u2, u0).unwrap();
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn general_response_is_grid_argmin() {
        let p = ModelParams {
            beta: 0.7,
            eta: 1.9,
            gamma: 0.4,
            alpha: 0.3,
            ..Default::default()
        };
        let (mu, u1, u2, u0) = (0.35, 0.8, 0.2, 0.1);
        let best = (0..=100_000)
            .map(|k| k as f64 * 1e-5)
            .min_by(|a, b| {
                minor_cost_unchecked(*a, u0, mu, u1, u2, &p)
                    .total_cmp(&minor_cost_unchecked(*b, u0, mu, u1, u2, &p))
            })
            .unwrap();
        assert!((best - minor_best_response_with(&p, mu, u1, u2, u0)).abs() <= 1e-5);
    }

    #[test]
    fn clipping_masses_examples() {
        let d = uniform_atoms(101);
        let m = clipping_masses(0.5, 0.7, 0.7, &d).unwrap();
        assert_eq!((m.p1, m.p2), (0.0, 0.0));
        let m = clipping_masses(0.0, 5.0, 0.0, &d).unwrap();
        assert!((m.p2 - 1.0).abs() < 1e-12 && m.p1 == 0.0);
        let m = clipping_masses(0.0, 0.0, 3.0, &d).unwrap();
        assert!((m.p1 - 1.0).abs() < 1e-12 && m.p2 == 0.0);
        assert!(matches!(
            clipping_masses(0.5, 1.0, 1.0, &InitialDistribution::MeanOnly(0.5)),
            Err(Error::UnsupportedDistribution)
        ));
    }

    #[test]
    fn fixed_point_examples() {
        let mf = mean_field_fixed_point(1.0, 1.0, &InitialDistribution::MeanOnly(0.5), 1e-12).unwrap();
        assert!((mf.mu_bar - 0.5).abs() < 1e-12);
        let mf = mean_field_fixed_point(1.0, 1.0, &InitialDistribution::MeanOnly(0.2), 1e-12).unwrap();
        assert!((mf.mu_bar - 0.4).abs() < 1e-12);
        assert_eq!(mf.masses, ClippingMasses::default());
        for d in [InitialDistribution::MeanOnly(0.1), uniform_atoms(50)] {
            let mf = mean_field_fixed_point(5.0, 0.0, &d, 1e-12).unwrap();
            assert!((mf.mu_bar - 1.0).abs() < 1e-12);
            assert!((mf.masses.p2 - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn fixed_point_with_partial_clipping_matches_direct_solve() {
        // Two atoms, only the upper one clips: mu = 0.5 * 1 + 0.5 * (mu + d + 0 + 1)/4.
        let d = InitialDistribution::atoms(vec![
            Atom { value: 0.0, weight: 0.5 },
            Atom { value: 1.0, weight: 0.5 },
        ])
        .unwrap();
        let (u1, u2) = (1.6, 0.0);
        let mf = mean_field_fixed_point(u1, u2, &d, 1e-13).unwrap();
        let expected = (0.5 + 0.125 * (u1 + 1.0)) / (1.0 - 0.125);
        assert!((mf.mu_bar - expected).abs() < 1e-12, "{} vs {expected}", mf.mu_bar);
        assert!((mf.masses.p2 - 0.5).abs() < 1e-15);
        // Clipped lower atom check: (mu + 1.6 + 0 + 1)/4 < 1 at the solution.
        assert!((mf.mu_bar + u1 + 1.0) / 4.0 < 1.0);
    }

    #[test]
    fn sensitivity_is_one_third_without_clipping() {
        let s = mean_field_sensitivity(&canon(), &ClippingMasses::default());
        assert!((s - 1.0 / 3.0).abs() < 1e-15);
        let s = mean_field_sensitivity(&canon(), &ClippingMasses { p1: 0.0, p2: 1.0 });
        assert_eq!(s, 0.0);
    }

    #[test]
    fn kind_parses() {
        assert_eq!("ne".parse::<EquilibriumKind>().unwrap(), EquilibriumKind::Ne);
        assert_eq!("MLFNE".parse::<EquilibriumKind>().unwrap(), EquilibriumKind::Mlfne);
        assert!("nash".parse::<EquilibriumKind>().is_err());
    }
}
