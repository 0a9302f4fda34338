//! Model constants, player identities and the consumers' initial-preference law.

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_input, Error, Result};

/// Smallest advertising unit cost the solvers accept. The `c -> 0` limit
/// (market shares driven to 0.5) is a limit, not a solvable point.
pub const MIN_UNIT_COST: f64 = 1e-6;

/// Tolerance on atom weights summing to one.
pub const ATOM_WEIGHT_TOL: f64 = 1e-12;

/// Looser tolerance for atom files; weights within it are renormalized.
pub const CSV_WEIGHT_TOL: f64 = 1e-6;

/// Scalar constants of the duopoly model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Advertising unit cost shared by both firms.
    pub c: f64,
    /// True (common) product quality.
    pub alpha: f64,
    /// Offset in the relative-advertising ratio `(u_i + eps) / (u_j + eps)`.
    pub epsilon: f64,
    pub rho1: f64,
    pub rho2: f64,
    /// Consumer weight on staying close to the initial preference.
    pub beta: f64,
    /// Consumer weight on staying close to the population mean.
    pub eta: f64,
    /// Substitutability degree of the two products.
    pub gamma: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams {
            c: 1.0,
            alpha: 0.0,
            epsilon: 1.0,
            rho1: 1.0,
            rho2: 1.0,
            beta: 1.0,
            eta: 1.0,
            gamma: 0.0,
        }
    }
}

impl ModelParams {
    /// Canonical parameters with the given unit cost.
    pub fn canonical(c: f64) -> Self {
        ModelParams {
            c,
            ..Default::default()
        }
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.c,
            self.alpha,
            self.epsilon,
            self.rho1,
            self.rho2,
            self.beta,
            self.eta,
            self.gamma,
        ]
        .iter()
        .all(|v| v.is_finite());
        ensure_input!(finite, "model parameters must be finite: {self:?}");
        ensure_input!(
            self.c >= MIN_UNIT_COST,
            "unit cost c must be >= {MIN_UNIT_COST}, got {}",
            self.c
        );
        ensure_input!(self.alpha >= 0.0, "alpha must be >= 0, got {}", self.alpha);
        ensure_input!(self.epsilon > 0.0, "epsilon must be > 0, got {}", self.epsilon);
        ensure_input!(
            self.rho1 > 0.0 && self.rho2 > 0.0,
            "rho1, rho2 must be > 0, got {}, {}",
            self.rho1,
            self.rho2
        );
        ensure_input!(
            self.beta > 0.0 && self.eta > 0.0,
            "beta, eta must be > 0, got {}, {}",
            self.beta,
            self.eta
        );
        ensure_input!(
            (0.0..=1.0).contains(&self.gamma),
            "gamma must lie in [0, 1], got {}",
            self.gamma
        );
        Ok(())
    }

    /// beta = eta = rho1 = rho2 = epsilon = 1 and gamma = 0. The closed forms
    /// only hold here; `c` and `alpha` are free.
    pub fn is_canonical(&self) -> bool {
        self.beta == 1.0
            && self.eta == 1.0
            && self.rho1 == 1.0
            && self.rho2 == 1.0
            && self.epsilon == 1.0
            && self.gamma == 0.0
    }

    pub fn require_canonical(&self) -> Result<()> {
        if self.is_canonical() {
            Ok(())
        } else {
            Err(Error::NonCanonical(format!(
                "beta={}, eta={}, rho1={}, rho2={}, epsilon={}, gamma={}",
                self.beta, self.eta, self.rho1, self.rho2, self.epsilon, self.gamma
            )))
        }
    }

    pub(crate) fn rho(&self, firm: Firm) -> f64 {
        match firm {
            Firm::One => self.rho1,
            Firm::Two => self.rho2,
        }
    }
}

/// One of the two major players.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Firm {
    One,
    Two,
}

impl Firm {
    pub fn other(self) -> Firm {
        match self {
            Firm::One => Firm::Two,
            Firm::Two => Firm::One,
        }
    }

    pub fn from_index(which: u8) -> Result<Firm> {
        match which {
            1 => Ok(Firm::One),
            2 => Ok(Firm::Two),
            _ => Err(Error::InvalidInput(format!("firm index must be 1 or 2, got {which}"))),
        }
    }

    /// Orders `(own, other)` into `(u1, u2)`.
    pub fn arrange(self, own: f64, other: f64) -> (f64, f64) {
        match self {
            Firm::One => (own, other),
            Firm::Two => (other, own),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub value: f64,
    pub weight: f64,
}

/// Law of the consumers' initial preference for product 1, supported on [0, 1].
///
/// `MeanOnly` carries just the mean. Quantities that depend on more than the
/// mean (clipped expectations away from equilibrium) treat it as a point mass
/// at the mean, which is exact whenever clipping is inactive or total.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum InitialDistribution {
    MeanOnly(f64),
    Atoms(Vec<Atom>),
}

impl InitialDistribution {
    pub fn mean_only(mean: f64) -> Result<Self> {
        ensure_input!(
            (0.0..=1.0).contains(&mean),
            "initial mean must lie in [0, 1], got {mean}"
        );
        Ok(InitialDistribution::MeanOnly(mean))
    }

    /// Atom list; weights must be positive and sum to one within 1e-12.
    pub fn atoms(atoms: Vec<Atom>) -> Result<Self> {
        validate_atoms(&atoms)?;
        let total: f64 = atoms.iter().map(|a| a.weight).sum();
        ensure_input!(
            (total - 1.0).abs() <= ATOM_WEIGHT_TOL,
            "atom weights sum to {total}, expected 1"
        );
        Ok(InitialDistribution::Atoms(atoms))
    }

    pub fn point_mass(value: f64) -> Result<Self> {
        Self::atoms(vec![Atom { value, weight: 1.0 }])
    }

    /// Equal-weight atoms at the given values.
    pub fn empirical(values: &[f64]) -> Result<Self> {
        ensure_input!(!values.is_empty(), "empirical distribution needs at least one value");
        let w = 1.0 / values.len() as f64;
        let atoms: Vec<Atom> = values.iter().map(|&value| Atom { value, weight: w }).collect();
        validate_atoms(&atoms)?;
        Ok(InitialDistribution::Atoms(atoms))
    }

    /// Reads a `value,weight` CSV. Weights within 1e-6 of summing to one are
    /// renormalized; anything further off is rejected.
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        ensure_input!(
            headers.len() == 2 && &headers[0] == "value" && &headers[1] == "weight",
            "atom CSV header must be `value,weight`, got `{}`",
            headers.iter().collect::<Vec<_>>().join(",")
        );
        let mut atoms = Vec::new();
        for (line, record) in rdr.deserialize::<Atom>().enumerate() {
            let atom = record.map_err(|e| {
                Error::InvalidInput(format!("atom CSV row {}: {e}", line + 1))
            })?;
            atoms.push(atom);
        }
        validate_atoms(&atoms)?;
        let total: f64 = atoms.iter().map(|a| a.weight).sum();
        ensure_input!(
            (total - 1.0).abs() <= CSV_WEIGHT_TOL,
            "atom weights sum to {total}, expected 1 within {CSV_WEIGHT_TOL}"
        );
        for a in &mut atoms {
            a.weight /= total;
        }
        Ok(InitialDistribution::Atoms(atoms))
    }

    pub fn from_csv_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv_reader(file)
    }

    pub fn mean(&self) -> f64 {
        match self {
            InitialDistribution::MeanOnly(m) => *m,
            InitialDistribution::Atoms(atoms) => {
                atoms.iter().map(|a| a.value * a.weight).sum::<f64>().clamp(0.0, 1.0)
            }
        }
    }

    /// Image under `u0 -> 1 - u0`.
    pub fn reflected(&self) -> Self {
        match self {
            InitialDistribution::MeanOnly(m) => InitialDistribution::MeanOnly(1.0 - m),
            InitialDistribution::Atoms(atoms) => InitialDistribution::Atoms(
                atoms
                    .iter()
                    .map(|a| Atom {
                        value: 1.0 - a.value,
                        weight: a.weight,
                    })
                    .collect(),
            ),
        }
    }

    /// `E[f(u0)]`; a mean-only law is evaluated as a point mass at its mean.
    pub fn expect(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        match self {
            InitialDistribution::MeanOnly(m) => f(*m),
            InitialDistribution::Atoms(atoms) => atoms.iter().map(|a| a.weight * f(a.value)).sum(),
        }
    }

    /// Probability of the set `{u0 : pred(u0)}` under the same convention as [`expect`].
    ///
    /// [`expect`]: InitialDistribution::expect
    pub fn mass_where(&self, mut pred: impl FnMut(f64) -> bool) -> f64 {
        self.expect(|u0| if pred(u0) { 1.0 } else { 0.0 })
    }
}

fn validate_atoms(atoms: &[Atom]) -> Result<()> {
    ensure_input!(!atoms.is_empty(), "atom distribution must have at least one atom");
    for (i, a) in atoms.iter().enumerate() {
        ensure_input!(
            a.value.is_finite() && (0.0..=1.0).contains(&a.value),
            "atom {i}: value {} outside [0, 1]",
            a.value
        );
        ensure_input!(
            a.weight.is_finite() && a.weight > 0.0,
            "atom {i}: weight {} must be positive",
            a.weight
        );
    }
    Ok(())
}
