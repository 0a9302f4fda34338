//! Brute-force N-player version of the game, coded independently of the
//! mean-field solvers so that it can validate them.
//!
//! Consumer `i` sees the leave-one-out mean `(S - u_i) / (N - 1)` of the other
//! consumers; firms see the realized mean `S / N`. Equilibria are found by
//! damped synchronous best-response sweeps and then certified by exhaustive
//! unilateral deviation scans on fixed grids.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_input, Error, Result};
use crate::model::EquilibriumKind;
use crate::params::{Firm, InitialDistribution, ModelParams};

/// Points in the consumer deviation grid on [0, 1].
pub const CONSUMER_GRID_POINTS: usize = 1_000;
/// Points in the firm deviation grid on [0, [`FIRM_GRID_MAX`]].
pub const FIRM_GRID_POINTS: usize = 10_000;
pub const FIRM_GRID_MAX: f64 = 10.0;
pub const DEFAULT_EPS: f64 = 1e-6;

const INNER_MAX_ITER: usize = 200;
const FIRM_SCAN_POINTS: usize = 64;
const GOLDEN_TOL: f64 = 1e-11;
const MIN_DAMPING: f64 = 1e-6;

/// How initial preferences are drawn from a distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum U0Sampling {
    /// Quantiles at `(k + 1/2) / N`.
    Stratified,
    /// Independent draws from a ChaCha8 stream.
    Iid { seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    /// Firm tolerance; consumers are held to `eps / N`.
    pub eps: f64,
    pub sampling: U0Sampling,
    pub max_sweeps: usize,
    /// Stop when no player moves by more than this in one sweep.
    pub step_tol: f64,
    /// Initial damping; halved when the residual blows up or stalls.
    pub damping: f64,
    /// Upper end of the MLF firms' best-response search.
    /// `None` means `(rho + 1/epsilon) / c`, beyond which the cost only grows.
    pub firm_search_upper: Option<f64>,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            eps: DEFAULT_EPS,
            sampling: U0Sampling::Stratified,
            max_sweeps: 100_000,
            step_tol: 1e-12,
            damping: 0.5,
            firm_search_upper: None,
        }
    }
}

impl OracleConfig {
    pub fn with_eps(mut self, eps: f64) -> Self {
        self.eps = eps;
        self
    }

    pub fn with_sampling(mut self, sampling: U0Sampling) -> Self {
        self.sampling = sampling;
        self
    }

    fn validate(&self) -> Result<()> {
        ensure_input!(self.eps > 0.0 && self.eps.is_finite(), "eps must be positive, got {}", self.eps);
        ensure_input!(
            self.damping > 0.0 && self.damping <= 1.0,
            "damping must lie in (0, 1], got {}",
            self.damping
        );
        ensure_input!(self.step_tol > 0.0, "step tolerance must be positive");
        if let Some(u) = self.firm_search_upper {
            ensure_input!(u > 0.0 && u.is_finite(), "firm search bound must be positive, got {u}");
        }
        Ok(())
    }
}

/// State of the N-player game.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinitePopulation {
    pub u0: Vec<f64>,
    pub u: Vec<f64>,
    pub u1: f64,
    pub u2: f64,
}

impl FinitePopulation {
    pub fn new(u0: Vec<f64>, u: Vec<f64>, u1: f64, u2: f64) -> Result<Self> {
        ensure_input!(u0.len() >= 2, "population needs at least 2 consumers, got {}", u0.len());
        ensure_input!(u0.len() == u.len(), "u0 and u have different lengths");
        for (name, v) in [("u0", &u0), ("u", &u)] {
            ensure_input!(
                v.iter().all(|x| (0.0..=1.0).contains(x)),
                "every {name} entry must lie in [0, 1]"
            );
        }
        ensure_input!(
            u1.is_finite() && u1 >= 0.0 && u2.is_finite() && u2 >= 0.0,
            "firm controls must be finite and >= 0, got ({u1}, {u2})"
        );
        Ok(FinitePopulation { u0, u, u1, u2 })
    }

    /// Consumers start at their initial preferences, firms at 1.
    pub fn at_rest(u0: Vec<f64>) -> Result<Self> {
        let u = u0.clone();
        Self::new(u0, u, 1.0, 1.0)
    }

    pub fn len(&self) -> usize {
        self.u0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u0.is_empty()
    }

    pub fn mean_pref(&self) -> f64 {
        self.u.iter().sum::<f64>() / self.len() as f64
    }

    /// Writes the `u0,u_final` snapshot.
    pub fn write_snapshot(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        let mut body = String::from("u0,u_final\n");
        for (a, b) in self.u0.iter().zip(&self.u) {
            body.push_str(&format!("{a},{b}\n"));
        }
        w.write_all(body.as_bytes())
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub kind: EquilibriumKind,
    pub n: usize,
    pub u1: f64,
    pub u2: f64,
    pub mean_pref: f64,
    /// Outer best-response rounds.
    pub sweeps: usize,
    /// Largest cost reduction found by any player on its deviation grid.
    pub max_unilateral_gain: f64,
    pub max_consumer_gain: f64,
    pub max_firm_gain: f64,
    /// Tolerances the gains were held to.
    pub eps_consumer: f64,
    pub eps_firm: f64,
    pub population: FinitePopulation,
}

/// Initial preferences for `n` consumers.
///
/// Atom laws are sampled through their quantile function. A mean-only law
/// `m` is realized as `lambda U[0, 1] + (1 - lambda) delta_e` with
/// `lambda = 2 min(m, 1 - m)` and `e` the nearer endpoint, which has mean `m`.
pub fn population_u0(n: usize, dist: &InitialDistribution, sampling: U0Sampling) -> Result<Vec<f64>> {
    ensure_input!(n >= 2, "population needs at least 2 consumers, got {n}");
    let probs: Vec<f64> = match sampling {
        U0Sampling::Stratified => (0..n).map(|k| (k as f64 + 0.5) / n as f64).collect(),
        U0Sampling::Iid { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..n).map(|_| rng.gen::<f64>()).collect()
        }
    };
    Ok(probs.into_iter().map(|p| quantile(dist, p)).collect())
}

fn quantile(dist: &InitialDistribution, p: f64) -> f64 {
    match dist {
        InitialDistribution::MeanOnly(m) => {
            let lambda = 2.0 * m.min(1.0 - m);
            if lambda <= 0.0 {
                return m.round();
            }
            let x = if *m <= 0.5 {
                (p - (1.0 - lambda)) / lambda
            } else {
                p / lambda
            };
            x.clamp(0.0, 1.0)
        }
        InitialDistribution::Atoms(atoms) => {
            let mut sorted: Vec<_> = atoms.iter().collect();
            sorted.sort_by(|a, b| a.value.total_cmp(&b.value));
            let mut acc = 0.0;
            for a in &sorted {
                acc += a.weight;
                if p < acc {
                    return a.value;
                }
            }
            sorted.last().map_or(0.0, |a| a.value)
        }
    }
}

fn consumer_cost(p: &ModelParams, u: f64, u0: f64, others: f64, u1: f64, u2: f64) -> f64 {
    let v = 1.0 - u;
    0.5 * p.beta * (u - u0) * (u - u0) + 0.5 * p.eta * (u - others) * (u - others)
        - ((p.alpha + u1) * u + (p.alpha + u2) * v - 0.5 * (u * u + v * v - 2.0 * p.gamma * u * v))
}

fn firm_cost(p: &ModelParams, firm: Firm, u1: f64, u2: f64, share: f64) -> f64 {
    let rate = p.rho1 * u1 * (1.0 - share) - p.rho2 * u2 * share;
    match firm {
        Firm::One => -rate - (u1 + p.epsilon) / (u2 + p.epsilon) + 0.5 * p.c * u1 * u1,
        Firm::Two => rate - (u2 + p.epsilon) / (u1 + p.epsilon) + 0.5 * p.c * u2 * u2,
    }
}

fn consumer_br(p: &ModelParams, u0: f64, others: f64, u1: f64, u2: f64) -> f64 {
    let k = p.beta + p.eta + 2.0 + 2.0 * p.gamma;
    ((p.beta * u0 + p.eta * others + u1 - u2 + 1.0 + p.gamma) / k).clamp(0.0, 1.0)
}

fn firm_br(p: &ModelParams, firm: Firm, other: f64, share: f64) -> f64 {
    let (rho, gain) = match firm {
        Firm::One => (p.rho1, 1.0 - share),
        Firm::Two => (p.rho2, share),
    };
    ((rho * gain + 1.0 / (other + p.epsilon)) / p.c).max(0.0)
}

fn loo(sum: f64, own: f64, n: usize) -> f64 {
    ((sum - own) / (n - 1) as f64).clamp(0.0, 1.0)
}

/// Consumer `i`'s exact best response against the leave-one-out mean.
pub fn consumer_br_finite(i: usize, pop: &FinitePopulation, params: &ModelParams) -> Result<f64> {
    ensure_input!(i < pop.len(), "consumer index {i} out of range for N = {}", pop.len());
    let sum: f64 = pop.u.iter().sum();
    Ok(consumer_br(params, pop.u0[i], loo(sum, pop.u[i], pop.len()), pop.u1, pop.u2))
}

fn ne_targets(pop: &FinitePopulation, p: &ModelParams) -> (Vec<f64>, f64, f64) {
    let n = pop.len();
    let sum: f64 = pop.u.iter().sum();
    let share = sum / n as f64;
    let u = pop
        .u0
        .iter()
        .zip(&pop.u)
        .map(|(&u0, &ui)| consumer_br(p, u0, loo(sum, ui, n), pop.u1, pop.u2))
        .collect();
    (u, firm_br(p, Firm::One, pop.u2, share), firm_br(p, Firm::Two, pop.u1, share))
}

/// One synchronous round: every player best-responds to the current state
/// and moves a fraction `damping` of the way there.
pub fn best_response_sweep(pop: &FinitePopulation, params: &ModelParams, damping: f64) -> Result<FinitePopulation> {
    ensure_input!(damping > 0.0 && damping <= 1.0, "damping must lie in (0, 1], got {damping}");
    let (targets, b1, b2) = ne_targets(pop, params);
    Ok(blend(pop, &targets, b1, b2, damping))
}

fn blend(pop: &FinitePopulation, targets: &[f64], b1: f64, b2: f64, damping: f64) -> FinitePopulation {
    FinitePopulation {
        u0: pop.u0.clone(),
        u: pop.u.iter().zip(targets).map(|(&a, &b)| a + damping * (b - a)).collect(),
        u1: pop.u1 + damping * (b1 - pop.u1),
        u2: pop.u2 + damping * (b2 - pop.u2),
    }
}

fn ne_step(pop: &FinitePopulation, p: &ModelParams) -> ((Vec<f64>, f64, f64), f64) {
    let t = ne_targets(pop, p);
    let step = pop
        .u
        .iter()
        .zip(&t.0)
        .map(|(a, b)| (a - b).abs())
        .fold((t.1 - pop.u1).abs().max((t.2 - pop.u2).abs()), f64::max);
    (t, step)
}

pub fn solve_finite_ne(n: usize, dist: &InitialDistribution, params: &ModelParams, eps: f64) -> Result<OracleResult> {
    solve_finite_ne_with(n, dist, params, &OracleConfig::default().with_eps(eps))
}

/// N-player Nash equilibrium by damped synchronous best responses.
///
/// The damping starts at `config.damping`; whenever the step grows past twice
/// the best step seen, the state reverts to the best one and the damping is halved.
pub fn solve_finite_ne_with(
    n: usize,
    dist: &InitialDistribution,
    params: &ModelParams,
    config: &OracleConfig,
) -> Result<OracleResult> {
    params.validate()?;
    config.validate()?;
    let pop = FinitePopulation::at_rest(population_u0(n, dist, config.sampling)?)?;
    let (pop, sweeps) = iterate_ne(pop, params, config)?;
    certify(EquilibriumKind::Ne, pop, sweeps, params, config)
}

fn iterate_ne(mut pop: FinitePopulation, p: &ModelParams, config: &OracleConfig) -> Result<(FinitePopulation, usize)> {
    let mut guard = DampingGuard::new(config.damping);
    for sweep in 1..=config.max_sweeps {
        let ((targets, b1, b2), step) = ne_step(&pop, p);
        if !step.is_finite() {
            return Err(Error::Oracle(format!("non-finite best response at sweep {sweep}")));
        }
        if step <= config.step_tol {
            return Ok((blend(&pop, &targets, b1, b2, 1.0), sweep));
        }
        match guard.observe(sweep, step, &pop)? {
            Some(back) => pop = back,
            None => pop = blend(&pop, &targets, b1, b2, guard.damping),
        }
    }
    Err(Error::Oracle(format!(
        "no convergence in {} sweeps; best step {:e}, damping {}",
        config.max_sweeps, guard.best_step, guard.damping
    )))
}

/// Adaptive damping for synchronous best responses. The rotation in the
/// firm/consumer loop makes residuals grow transiently even when the damped
/// map converges, so only a large blow-up (revert to the best state) or a
/// stalled window halves the damping.
struct DampingGuard {
    damping: f64,
    best: Option<FinitePopulation>,
    best_step: f64,
    window_start: usize,
    window_best: f64,
}

const BLOW_UP: f64 = 1e3;
const WINDOW: usize = 500;

impl DampingGuard {
    fn new(damping: f64) -> Self {
        DampingGuard {
            damping,
            best: None,
            best_step: f64::INFINITY,
            window_start: 0,
            window_best: f64::INFINITY,
        }
    }

    fn halve(&mut self, sweep: usize) -> Result<()> {
        self.damping *= 0.5;
        self.window_start = sweep;
        self.window_best = self.best_step;
        if self.damping < MIN_DAMPING {
            return Err(Error::Oracle(format!(
                "best-response dynamics do not settle; best step {:e} at sweep {sweep}",
                self.best_step
            )));
        }
        Ok(())
    }

    /// Returns a state to restart from when the current one blew up.
    fn observe(&mut self, sweep: usize, step: f64, pop: &FinitePopulation) -> Result<Option<FinitePopulation>> {
        if step > BLOW_UP * self.best_step {
            self.halve(sweep)?;
            return Ok(self.best.clone());
        }
        if step < self.best_step {
            self.best_step = step;
            self.best = Some(pop.clone());
        }
        if sweep - self.window_start >= WINDOW {
            if self.best_step > 0.5 * self.window_best {
                self.halve(sweep)?;
            } else {
                self.window_start = sweep;
                self.window_best = self.best_step;
            }
        }
        Ok(None)
    }
}

/// Consumers' N-player equilibrium at fixed firm controls.
///
/// With `S` the total preference, consumer `i`'s condition
/// `u = clip(a_i + b (S - u))` has the unique solution
/// `u_i(S) = clip((a_i + b S) / (1 + b))`, so the whole equilibrium is the root
/// of the increasing scalar map `S - sum_i u_i(S)`. It is piecewise linear,
/// and a bracketed Newton iteration started from the sum of `u` lands on it
/// in a few passes. On return `u` holds the equilibrium.
fn consumer_equilibrium(p: &ModelParams, u0: &[f64], u: &mut [f64], u1: f64, u2: f64) -> Result<usize> {
    let n = u0.len();
    let k = p.beta + p.eta + 2.0 + 2.0 * p.gamma;
    let b = p.eta / (k * (n - 1) as f64);
    let shift = (u1 - u2 + 1.0 + p.gamma) / k;
    let at = |s: f64, i: usize| ((p.beta * u0[i] / k + shift + b * s) / (1.0 + b)).clamp(0.0, 1.0);
    // Returns h(S) and the number of interior consumers.
    let eval = |s: f64| {
        let mut total = 0.0;
        let mut interior = 0usize;
        for i in 0..n {
            let v = at(s, i);
            total += v;
            interior += usize::from(v > 0.0 && v < 1.0);
        }
        (s - total, interior)
    };
    let (mut lo, mut hi) = (0.0, n as f64);
    let mut s: f64 = u.iter().sum::<f64>().clamp(lo, hi);
    for iteration in 1..=INNER_MAX_ITER {
        // Roundoff floor of the n-term sum.
        let tol = 4.0 * f64::EPSILON * n as f64 * (1.0 + s);
        let (h, interior) = eval(s);
        if h.abs() <= tol {
            for (i, ui) in u.iter_mut().enumerate() {
                *ui = at(s, i);
            }
            return Ok(iteration);
        }
        if h < 0.0 {
            lo = s;
        } else {
            hi = s;
        }
        let slope = 1.0 - b / (1.0 + b) * interior as f64;
        let newton = s - h / slope;
        s = if (lo..=hi).contains(&newton) { newton } else { 0.5 * (lo + hi) };
        if hi - lo <= tol {
            s = 0.5 * (lo + hi);
        }
    }
    Err(Error::Oracle(format!(
        "consumer equilibrium did not converge in {INNER_MAX_ITER} steps at u1={u1}, u2={u2}"
    )))
}

/// Firm cost after the consumers re-equilibrate, starting from `warm`.
fn mlf_cost(p: &ModelParams, firm: Firm, own: f64, other: f64, u0: &[f64], warm: &[f64]) -> Result<f64> {
    let (u1, u2) = firm.arrange(own, other);
    let mut u = warm.to_vec();
    consumer_equilibrium(p, u0, &mut u, u1, u2)?;
    let share = u.iter().sum::<f64>() / u.len() as f64;
    Ok(firm_cost(p, firm, u1, u2, share))
}

fn golden_min(mut f: impl FnMut(f64) -> Result<f64>, mut a: f64, mut b: f64) -> Result<(f64, f64)> {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = b - r * (b - a);
    let mut x2 = a + r * (b - a);
    let (mut f1, mut f2) = (f(x1)?, f(x2)?);
    while b - a > GOLDEN_TOL * (1.0 + a.abs().max(b.abs())) {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - r * (b - a);
            f1 = f(x1)?;
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + r * (b - a);
            f2 = f(x2)?;
        }
    }
    Ok(if f1 <= f2 { (x1, f1) } else { (x2, f2) })
}

/// Firm best response with the consumers' N-player equilibrium re-solved per
/// trial control: a coarse scan, then golden-section refinement around every
/// local minimum of the scan.
fn mlf_firm_br(p: &ModelParams, firm: Firm, other: f64, pop: &FinitePopulation, upper: f64) -> Result<f64> {
    let xs: Vec<f64> = (0..=FIRM_SCAN_POINTS)
        .map(|k| upper * k as f64 / FIRM_SCAN_POINTS as f64)
        .collect();
    let cost = |x: f64| mlf_cost(p, firm, x, other, &pop.u0, &pop.u);
    let vals = xs.iter().map(|&x| cost(x)).collect::<Result<Vec<_>>>()?;
    let mut best = (f64::NAN, f64::INFINITY);
    for k in 0..xs.len() {
        let left = k == 0 || vals[k] <= vals[k - 1];
        let right = k + 1 == xs.len() || vals[k] <= vals[k + 1];
        if !(left && right) {
            continue;
        }
        let lo = xs[k.saturating_sub(1)];
        let hi = xs[(k + 1).min(xs.len() - 1)];
        let (x, v) = golden_min(cost, lo, hi)?;
        let (x, v) = if vals[k] < v { (xs[k], vals[k]) } else { (x, v) };
        if v < best.1 {
            best = (x, v);
        }
    }
    if !best.0.is_finite() {
        return Err(Error::Oracle(format!("firm best response scan failed for {firm:?}")));
    }
    Ok(best.0)
}

pub fn solve_finite_mlfne(n: usize, dist: &InitialDistribution, params: &ModelParams, eps: f64) -> Result<OracleResult> {
    solve_finite_mlfne_with(n, dist, params, &OracleConfig::default().with_eps(eps))
}

/// N-player multi-leader-follower equilibrium: consumers always sit at their
/// N-player equilibrium given the firms; firms run damped best responses
/// against that response.
pub fn solve_finite_mlfne_with(
    n: usize,
    dist: &InitialDistribution,
    params: &ModelParams,
    config: &OracleConfig,
) -> Result<OracleResult> {
    params.validate()?;
    config.validate()?;
    let p = params;
    let mut pop = FinitePopulation::at_rest(population_u0(n, dist, config.sampling)?)?;
    consumer_equilibrium(p, &pop.u0, &mut pop.u, pop.u1, pop.u2)?;
    let upper = |firm: Firm| config.firm_search_upper.unwrap_or((p.rho(firm) + 1.0 / p.epsilon) / p.c);
    // Golden-section argmins carry noise near sqrt(machine eps).
    let tol = config.step_tol.max(1e-7);
    let mut guard = DampingGuard::new(config.damping);
    for sweep in 1..=config.max_sweeps {
        let b1 = mlf_firm_br(p, Firm::One, pop.u2, &pop, upper(Firm::One))?;
        let b2 = mlf_firm_br(p, Firm::Two, pop.u1, &pop, upper(Firm::Two))?;
        let step = (b1 - pop.u1).abs().max((b2 - pop.u2).abs());
        if step <= tol {
            return certify(EquilibriumKind::Mlfne, pop, sweep, params, config);
        }
        if let Some(back) = guard.observe(sweep, step, &pop)? {
            pop = back;
            continue;
        }
        pop.u1 += guard.damping * (b1 - pop.u1);
        pop.u2 += guard.damping * (b2 - pop.u2);
        consumer_equilibrium(p, &pop.u0, &mut pop.u, pop.u1, pop.u2)?;
    }
    Err(Error::Oracle(format!(
        "no convergence in {} rounds; best step {:e}",
        config.max_sweeps, guard.best_step
    )))
}

fn grid(points: usize, max: f64) -> impl Iterator<Item = f64> {
    (0..points).map(move |k| max * k as f64 / (points - 1) as f64)
}

/// Largest cost reduction any consumer finds on the consumer grid.
fn consumer_gain(pop: &FinitePopulation, p: &ModelParams) -> f64 {
    let n = pop.len();
    let sum: f64 = pop.u.iter().sum();
    let mut worst = f64::NEG_INFINITY;
    for (&u0, &ui) in pop.u0.iter().zip(&pop.u) {
        let others = loo(sum, ui, n);
        let current = consumer_cost(p, ui, u0, others, pop.u1, pop.u2);
        let best = grid(CONSUMER_GRID_POINTS, 1.0)
            .map(|v| consumer_cost(p, v, u0, others, pop.u1, pop.u2))
            .fold(f64::INFINITY, f64::min);
        worst = worst.max(current - best);
    }
    worst
}

fn firm_gain(kind: EquilibriumKind, pop: &FinitePopulation, p: &ModelParams) -> Result<f64> {
    let share = pop.mean_pref();
    let mut worst = f64::NEG_INFINITY;
    for firm in [Firm::One, Firm::Two] {
        let (own, other) = match firm {
            Firm::One => (pop.u1, pop.u2),
            Firm::Two => (pop.u2, pop.u1),
        };
        let (u1, u2) = firm.arrange(own, other);
        let current = firm_cost(p, firm, u1, u2, share);
        let mut best = f64::INFINITY;
        for v in grid(FIRM_GRID_POINTS, FIRM_GRID_MAX) {
            let cost = match kind {
                EquilibriumKind::Ne => {
                    let (a, b) = firm.arrange(v, other);
                    firm_cost(p, firm, a, b, share)
                }
                EquilibriumKind::Mlfne => mlf_cost(p, firm, v, other, &pop.u0, &pop.u)?,
            };
            best = best.min(cost);
        }
        worst = worst.max(current - best);
    }
    Ok(worst)
}

fn certify(
    kind: EquilibriumKind,
    pop: FinitePopulation,
    sweeps: usize,
    p: &ModelParams,
    config: &OracleConfig,
) -> Result<OracleResult> {
    let n = pop.len();
    let eps_consumer = config.eps / n as f64;
    let max_consumer_gain = consumer_gain(&pop, p);
    let max_firm_gain = firm_gain(kind, &pop, p)?;
    let result = OracleResult {
        kind,
        n,
        u1: pop.u1,
        u2: pop.u2,
        mean_pref: pop.mean_pref(),
        sweeps,
        max_unilateral_gain: max_consumer_gain.max(max_firm_gain),
        max_consumer_gain,
        max_firm_gain,
        eps_consumer,
        eps_firm: config.eps,
        population: pop,
    };
    if max_consumer_gain > eps_consumer || max_firm_gain > config.eps {
        let (gain, eps) = if max_consumer_gain > eps_consumer {
            (max_consumer_gain, eps_consumer)
        } else {
            (max_firm_gain, config.eps)
        };
        return Err(Error::NotCertified {
            gain,
            eps,
            result: Box::new(result),
        });
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn atoms_at(v: f64) -> InitialDistribution {
        InitialDistribution::point_mass(v).unwrap()
    }

    #[test]
    fn consumer_br_examples() {
        let pop = FinitePopulation::new(vec![0.5, 0.5], vec![0.5, 0.5], 1.0, 1.0).unwrap();
        let p = ModelParams::default();
        assert_eq!(consumer_br_finite(0, &pop, &p).unwrap(), 0.5);
        assert_eq!(consumer_br_finite(1, &pop, &p).unwrap(), 0.5);
        let pop = FinitePopulation::new(vec![0.0, 0.9, 0.4], vec![0.2, 0.1, 0.7], 5.0, 0.0).unwrap();
        for i in 0..3 {
            assert_eq!(consumer_br_finite(i, &pop, &p).unwrap(), 1.0);
        }
        assert!(consumer_br_finite(3, &pop, &p).is_err());
    }

    #[test]
    fn consumer_br_matches_grid_search() {
        let p = ModelParams::default();
        let pop = FinitePopulation::new(vec![0.1, 0.8, 0.35], vec![0.3, 0.6, 0.45], 0.7, 1.1).unwrap();
        let sum: f64 = pop.u.iter().sum();
        for i in 0..3 {
            let others = loo(sum, pop.u[i], 3);
            let best = (0..=100_000)
                .map(|k| k as f64 * 1e-5)
                .min_by(|a, b| {
                    consumer_cost(&p, *a, pop.u0[i], others, pop.u1, pop.u2)
                        .total_cmp(&consumer_cost(&p, *b, pop.u0[i], others, pop.u1, pop.u2))
                })
                .unwrap();
            assert!((best - consumer_br_finite(i, &pop, &p).unwrap()).abs() <= 1e-5);
        }
    }

    #[test]
    fn sampling_matches_law_mean() {
        for m in [0.0, 0.2, 0.5, 0.7, 1.0] {
            let d = InitialDistribution::MeanOnly(m);
            let xs = population_u0(10_000, &d, U0Sampling::Stratified).unwrap();
            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
            assert!((mean - m).abs() < 1e-3, "{m}: {mean}");
            let xs = population_u0(20_000, &d, U0Sampling::Iid { seed: 3 }).unwrap();
            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
            assert!((mean - m).abs() < 1e-2, "{m}: {mean}");
        }
        let xs = population_u0(4, &atoms_at(0.3), U0Sampling::Stratified).unwrap();
        assert_eq!(xs, vec![0.3; 4]);
    }

    #[test]
    fn sweep_at_mean_field_point_moves_little() {
        let n = 100;
        let p = ModelParams::default();
        let u0 = population_u0(n, &InitialDistribution::MeanOnly(0.5), U0Sampling::Stratified).unwrap();
        let u = u0.iter().map(|&x| (0.5 + x + 1.0) / 4.0).collect();
        let pop = FinitePopulation::new(u0, u, 1.0, 1.0).unwrap();
        let next = best_response_sweep(&pop, &p, 1.0).unwrap();
        let step = pop.u.iter().zip(&next.u).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(step <= 2.0 / n as f64);
        assert!((next.u1 - 1.0).abs() <= 2.0 / n as f64);
    }

    #[test]
    fn undamped_sweep_preserves_symmetry() {
        let pop = FinitePopulation::new(vec![0.2, 0.8, 0.5, 0.5], vec![0.375, 0.625, 0.5, 0.5], 0.8, 0.8)
            .unwrap();
        let next = best_response_sweep(&pop, &ModelParams::default(), 1.0).unwrap();
        assert_eq!(next.u1, next.u2);
        assert_eq!(next.u[0] + next.u[1], 1.0);
        assert_eq!(next.u[2], 0.5);
    }

    #[test]
    fn random_start_converges_to_symmetric_ne() {
        let p = ModelParams::default();
        let u0 = population_u0(200, &InitialDistribution::MeanOnly(0.5), U0Sampling::Stratified).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let u = (0..200).map(|_| rng.gen::<f64>()).collect();
        let pop = FinitePopulation::new(u0, u, 3.0, 0.2).unwrap();
        let (pop, _) = iterate_ne(pop, &p, &OracleConfig::default()).unwrap();
        assert!((pop.u1 - 1.0).abs() < 0.02 && (pop.u2 - 1.0).abs() < 0.02);
    }

    #[test]
    fn finite_ne_near_mean_field() {
        let r = solve_finite_ne(100, &atoms_at(0.5), &ModelParams::default(), DEFAULT_EPS).unwrap();
        assert!((0.98..=1.02).contains(&r.u1) && (0.98..=1.02).contains(&r.u2));
        assert!((0.49..=0.51).contains(&r.mean_pref));
        assert!(r.max_unilateral_gain <= DEFAULT_EPS);
    }

    #[test]
    fn two_player_symmetric() {
        let r = solve_finite_ne(2, &atoms_at(0.5), &ModelParams::default(), DEFAULT_EPS).unwrap();
        assert_eq!(r.u1, r.u2);
        assert_eq!(r.population.u[0], r.population.u[1]);
    }

    #[test]
    fn low_cost_needs_adaptive_damping() {
        let p = ModelParams::canonical(0.1);
        let r = solve_finite_ne(50, &atoms_at(0.3), &p, DEFAULT_EPS).unwrap();
        assert!(r.mean_pref < 0.5);
    }

    #[test]
    fn finite_mlfne_near_closed_form() {
        let r = solve_finite_mlfne(100, &atoms_at(0.5), &ModelParams::default(), DEFAULT_EPS).unwrap();
        assert!((r.u1 - 0.661187).abs() < 0.02 && (r.u2 - 0.661187).abs() < 0.02);
        assert!((r.u1 - r.u2).abs() < 1e-6);
    }

    #[test]
    fn low_cost_leader_flip_is_local_only() {
        // Searching near the stationary point reproduces the flip, but the full
        // firm grid finds a saturating deviation.
        let config = OracleConfig {
            firm_search_upper: Some(3.0),
            ..Default::default()
        };
        let err = solve_finite_mlfne_with(100, &atoms_at(0.3), &ModelParams::canonical(0.01), &config)
            .unwrap_err();
        match err {
            Error::NotCertified { gain, result, .. } => {
                assert!(result.mean_pref > 0.5, "{}", result.mean_pref);
                assert!(gain > 1.0);
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn fixed_seed_is_deterministic() {
        let cfg = OracleConfig::default().with_sampling(U0Sampling::Iid { seed: 42 });
        let d = InitialDistribution::MeanOnly(0.3);
        let a = solve_finite_ne_with(60, &d, &ModelParams::default(), &cfg).unwrap();
        let b = solve_finite_ne_with(60, &d, &ModelParams::default(), &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn snapshot_has_header_and_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("snap.csv");
        let pop = FinitePopulation::new(vec![0.25, 0.5], vec![0.5, 0.75], 1.0, 1.0).unwrap();
        pop.write_snapshot(&path).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "u0,u_final\n0.25,0.5\n0.5,0.75\n");
    }

    #[test]
    fn consumer_equilibrium_is_a_best_response_fixed_point() {
        let p = ModelParams {
            eta: 2.0,
            beta: 0.5,
            ..Default::default()
        };
        let u0 = population_u0(300, &InitialDistribution::MeanOnly(0.35), U0Sampling::Iid { seed: 5 }).unwrap();
        for (u1, u2) in [(0.4, 0.9), (3.0, 0.0), (0.0, 2.5), (1.2, 1.0)] {
            let mut u = vec![0.5; u0.len()];
            consumer_equilibrium(&p, &u0, &mut u, u1, u2).unwrap();
            let pop = FinitePopulation::new(u0.clone(), u, u1, u2).unwrap();
            for i in 0..pop.len() {
                let br = consumer_br_finite(i, &pop, &p).unwrap();
                assert!((br - pop.u[i]).abs() < 1e-13, "{u1} {u2} {i}: {br} vs {}", pop.u[i]);
            }
        }
    }
}
