//! Deviation-scan certificates for the mean-field equilibria.
//!
//! A certificate records the largest cost reduction any single player can
//! reach on a fixed grid while everything else stays at the equilibrium.
//! Under NE the market share is held fixed; under MLF-NE it is re-solved for
//! every firm deviation with the clipped consumer map.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_input, Result};
use crate::mlfne::substituted_cost;
use crate::model::{major_cost_unchecked, minor_cost_unchecked, Equilibrium, EquilibriumKind};
use crate::oracle::{CONSUMER_GRID_POINTS, FIRM_GRID_MAX, FIRM_GRID_POINTS};
use crate::params::{Firm, InitialDistribution, ModelParams};

/// Initial preferences at which consumers are checked: 0, 0.01, ..., 1.
pub const CONSUMER_U0_SAMPLES: usize = 101;
/// Gain above which an equilibrium is rejected.
pub const CERTIFICATE_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub kind: EquilibriumKind,
    pub max_consumer_gain: f64,
    pub max_firm_gain: f64,
    /// Firm and control achieving `max_firm_gain`.
    pub best_firm_deviation: (Firm, f64),
}

impl Certificate {
    pub fn max_gain(&self) -> f64 {
        self.max_consumer_gain.max(self.max_firm_gain)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max_gain() <= tol
    }
}

fn grid(points: usize, max: f64) -> impl Iterator<Item = f64> + Clone {
    (0..points).map(move |k| max * k as f64 / (points - 1) as f64)
}

fn consumer_gain(p: &ModelParams, eq: &Equilibrium) -> f64 {
    let mut worst = f64::NEG_INFINITY;
    for k in 0..CONSUMER_U0_SAMPLES {
        let u0 = k as f64 / (CONSUMER_U0_SAMPLES - 1) as f64;
        let cost = |v: f64| minor_cost_unchecked(v, u0, eq.mu_bar, eq.u1, eq.u2, p);
        let current = cost(eq.policy.evaluate_with(p, u0));
        let best = grid(CONSUMER_GRID_POINTS, 1.0).map(cost).fold(f64::INFINITY, f64::min);
        worst = worst.max(current - best);
    }
    worst
}

/// Scans both firms' deviations. `cost(firm, own, other)` prices a deviation.
fn firm_gain(
    eq: &Equilibrium,
    mut cost: impl FnMut(Firm, f64, f64) -> Result<f64>,
) -> Result<(f64, (Firm, f64))> {
    let mut worst = (f64::NEG_INFINITY, (Firm::One, eq.u1));
    for firm in [Firm::One, Firm::Two] {
        let (own, other) = match firm {
            Firm::One => (eq.u1, eq.u2),
            Firm::Two => (eq.u2, eq.u1),
        };
        let current = cost(firm, own, other)?;
        for v in grid(FIRM_GRID_POINTS, FIRM_GRID_MAX) {
            let gain = current - cost(firm, v, other)?;
            if gain > worst.0 {
                worst = (gain, (firm, v));
            }
        }
    }
    Ok(worst)
}

/// NE certificate: firms deviate against the fixed equilibrium share.
pub fn certify_ne(params: &ModelParams, eq: &Equilibrium) -> Result<Certificate> {
    ensure_input!(eq.kind == EquilibriumKind::Ne, "expected an NE, got {}", eq.kind);
    let mu = eq.mu_bar;
    let (max_firm_gain, best_firm_deviation) =
        firm_gain(eq, |firm, own, other| Ok(major_cost_unchecked(firm, own, other, mu, params)))?;
    Ok(Certificate {
        kind: eq.kind,
        max_consumer_gain: consumer_gain(params, eq),
        max_firm_gain,
        best_firm_deviation,
    })
}

/// MLF-NE certificate: every firm deviation re-solves the consumers' clipped
/// fixed point under `dist`, so saturating deviations are priced correctly.
pub fn certify_mlfne(
    params: &ModelParams,
    dist: &InitialDistribution,
    eq: &Equilibrium,
) -> Result<Certificate> {
    ensure_input!(eq.kind == EquilibriumKind::Mlfne, "expected an MLF-NE, got {}", eq.kind);
    let (max_firm_gain, best_firm_deviation) =
        firm_gain(eq, |firm, own, other| substituted_cost(params, dist, firm, own, other))?;
    Ok(Certificate {
        kind: eq.kind,
        max_consumer_gain: consumer_gain(params, eq),
        max_firm_gain,
        best_firm_deviation,
    })
}

/// Certificate for either kind, using a mean-only law at `u0_mean` for MLF-NE.
pub fn certify(params: &ModelParams, eq: &Equilibrium, u0_mean: f64) -> Result<Certificate> {
    match eq.kind {
        EquilibriumKind::Ne => certify_ne(params, eq),
        EquilibriumKind::Mlfne => certify_mlfne(params, &InitialDistribution::mean_only(u0_mean)?, eq),
    }
}
