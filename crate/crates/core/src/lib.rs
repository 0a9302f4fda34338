//! Equilibria of a mean-field advertising duopoly.
//!
//! Two firms choose advertising efforts `u1`, `u2`; a continuum of consumers
//! chooses how strongly to prefer product 1, pulled between their initial
//! preference, the population mean and the firms' advertising. The crate
//! solves two solution concepts:
//!
//! * [`solve_ne`]: all players move simultaneously (Nash equilibrium).
//! * [`solve_mlfne`]: the firms anticipate the consumers' equilibrium
//!   response (multi-leader-follower Nash equilibrium).
//!
//! [`oracle`] is an independent brute-force N-player solver used to validate
//! both, [`certify`] checks solved points against unilateral deviations, and
//! [`sweep`] runs parameter grids and writes CSV tables.
//!
//! ```
//! use mfg_duopoly::{solve_ne, InitialDistribution, ModelParams, DEFAULT_TOL};
//!
//! let eq = solve_ne(&ModelParams::canonical(1.0), &InitialDistribution::MeanOnly(0.5), DEFAULT_TOL)?;
//! assert!((eq.u1 - 1.0).abs() < 1e-9 && (eq.mu_bar - 0.5).abs() < 1e-12);
//! # Ok::<(), mfg_duopoly::Error>(())
//! ```

pub mod certify;
pub mod error;
pub mod mlfne;
pub mod model;
pub mod ne;
pub mod oracle;
pub mod params;
pub mod roots;
pub mod sweep;

pub use certify::{certify, certify_mlfne, certify_ne, Certificate, CERTIFICATE_TOL};
pub use error::{Error, Result};
pub use mlfne::{
    anticipated_mean_field, major_br_mlf, mlfne_closed_form, solve_mlfne, solve_mlfne_numerical,
    MlfneClosedForm,
};
pub use model::{
    clipping_masses, major_cost, mean_field_fixed_point, minor_best_response, minor_cost,
    ClippingMasses, Equilibrium, EquilibriumKind, MeanField, MinorPolicy, SolveMethod,
    SolveReport,
};
pub use ne::{
    major_br_given_field, ne_gap, solve_major_subgame_ne, solve_ne, solve_ne_numerical,
    NeSubgameSolution, DEFAULT_TOL,
};
pub use oracle::{
    solve_finite_mlfne, solve_finite_mlfne_with, solve_finite_ne, solve_finite_ne_with,
    FinitePopulation, OracleConfig, OracleResult, U0Sampling,
};
pub use params::{Atom, Firm, InitialDistribution, ModelParams};
pub use sweep::{compare_report, run_sweep, ComparisonRow, SweepRow, SweepSpec};
