//! Exact computations on finite supports.
//!
//! With `K` support points every expectation is a finite sum, so the
//! objective's identities can be checked to rounding error instead of to
//! sampling error. [`run_suite`] turns them into seeded property checks.

use std::fmt;

use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::losses::lvar_value;
use crate::sampling::RngState;

/// Entries of `f_N` this far below zero are rounding noise and clamp to 0.
const NEGATIVE_SLACK: f64 = 1e-12;

/// `f = π f_P + (1 - π) f_N` over `K` abstract points.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteJoint {
    f: Vec<f64>,
    f_p: Vec<f64>,
    f_n: Vec<f64>,
    pi_p: f64,
}

fn check_distribution(v: &[f64], name: &str) -> Result<()> {
    if v.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
        return Err(Error::contract(format!("{name} has a negative or non-finite entry")));
    }
    let s: f64 = v.iter().sum();
    if (s - 1.0).abs() > 1e-12 {
        return Err(Error::contract(format!("{name} sums to {s}, not 1")));
    }
    Ok(())
}

impl DiscreteJoint {
    /// From the marginal and the positive conditional; `f_N` is derived.
    pub fn new(f: Vec<f64>, f_p: Vec<f64>, pi_p: f64) -> Result<Self> {
        if f.len() != f_p.len() || f.is_empty() {
            return Err(Error::contract("f and f_P must have the same nonzero length"));
        }
        if !(pi_p > 0.0 && pi_p < 1.0) {
            return Err(Error::contract(format!("pi_p {pi_p} outside (0, 1)")));
        }
        check_distribution(&f, "f")?;
        check_distribution(&f_p, "f_P")?;
        let mut f_n = Vec::with_capacity(f.len());
        for (i, (a, b)) in f.iter().zip(&f_p).enumerate() {
            let v = (a - pi_p * b) / (1.0 - pi_p);
            if v < -NEGATIVE_SLACK {
                return Err(Error::contract(format!("f_N({i}) = {v} is negative")));
            }
            f_n.push(v.max(0.0));
        }
        Ok(DiscreteJoint { f, f_p, f_n, pi_p })
    }

    /// From both class conditionals; `f` is derived.
    pub fn from_conditionals(f_p: Vec<f64>, f_n: Vec<f64>, pi_p: f64) -> Result<Self> {
        if f_p.len() != f_n.len() || f_p.is_empty() {
            return Err(Error::contract("f_P and f_N must have the same nonzero length"));
        }
        if !(pi_p > 0.0 && pi_p < 1.0) {
            return Err(Error::contract(format!("pi_p {pi_p} outside (0, 1)")));
        }
        check_distribution(&f_p, "f_P")?;
        check_distribution(&f_n, "f_N")?;
        let f = f_p.iter().zip(&f_n).map(|(p, n)| pi_p * p + (1.0 - pi_p) * n).collect();
        Ok(DiscreteJoint { f, f_p, f_n, pi_p })
    }

    pub fn k(&self) -> usize {
        self.f.len()
    }

    pub fn f(&self) -> &[f64] {
        &self.f
    }

    pub fn f_p(&self) -> &[f64] {
        &self.f_p
    }

    pub fn f_n(&self) -> &[f64] {
        &self.f_n
    }

    pub fn pi_p(&self) -> f64 {
        self.pi_p
    }
}

/// `Φ*(i) = π f_P(i) / f(i)`, zero off the support of `f`.
pub fn bayes_phi(d: &DiscreteJoint) -> Vec<f64> {
    d.f.iter()
        .zip(&d.f_p)
        .map(|(&f, &fp)| if f > 0.0 { (d.pi_p * fp / f).min(1.0) } else { 0.0 })
        .collect()
}

fn expect(weights: &[f64], values: &[f64]) -> f64 {
    weights.iter().zip(values).map(|(w, v)| w * v).sum()
}

/// `log E_f[Φ] - E_{f_P}[log Φ]`; `+∞` when Φ vanishes on the support of `f_P`.
pub fn exact_lvar(d: &DiscreteJoint, phi: &[f64]) -> f64 {
    let mut cross = 0.0;
    for (&fp, &p) in d.f_p.iter().zip(phi) {
        if fp > 0.0 {
            if p <= 0.0 {
                return f64::INFINITY;
            }
            cross += fp * p.ln();
        }
    }
    expect(&d.f, phi).ln() - cross
}

/// `f_Φ = Φ f / E_f[Φ]`, renormalized to sum to one.
pub fn induced_f_phi(d: &DiscreteJoint, phi: &[f64]) -> Result<Vec<f64>> {
    let raw: Vec<f64> = d.f.iter().zip(phi).map(|(f, p)| f * p).collect();
    let z: f64 = raw.iter().sum();
    if !(z > 0.0) {
        return Err(Error::contract("E_f[Φ] must be positive"));
    }
    Ok(raw.into_iter().map(|v| v / z).collect())
}

/// `KL(p ‖ q)`; `+∞` when `q` misses mass of `p`.
pub fn kl(p: &[f64], q: &[f64]) -> f64 {
    let mut s = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        if a > 0.0 {
            if b <= 0.0 {
                return f64::INFINITY;
            }
            s += a * (a / b).ln();
        }
    }
    s
}

/// `|KL(f_P ‖ f_Φ) - (L_var(Φ) - L_var(Φ*))|`.
pub fn kl_identity_residual(d: &DiscreteJoint, phi: &[f64]) -> Result<f64> {
    kl_gap_residual(d, phi, None)
}

fn kl_gap_residual(d: &DiscreteJoint, phi: &[f64], fault: Option<Fault>) -> Result<f64> {
    let divergence = kl(&d.f_p, &induced_f_phi(d, phi)?);
    let optimum = match fault {
        Some(Fault::DropOptimalLvar) => 0.0,
        None => exact_lvar(d, &bayes_phi(d)),
    };
    Ok((divergence - (exact_lvar(d, phi) - optimum)).abs())
}

/// `r(i) / max r` for `r = f_P / f`; the minimizer of `L_var` with maximum 1.
pub fn minimize_lvar_for(f: &[f64], f_p: &[f64]) -> Result<Vec<f64>> {
    if f.len() != f_p.len() {
        return Err(Error::contract("f and f_P differ in length"));
    }
    let mut ratio = Vec::with_capacity(f.len());
    for (i, (&a, &b)) in f.iter().zip(f_p).enumerate() {
        if a > 0.0 {
            ratio.push(b / a);
        } else if b > 0.0 {
            return Err(Error::contract(format!("f({i}) = 0 where f_P({i}) > 0")));
        } else {
            ratio.push(0.0);
        }
    }
    let max = ratio.iter().copied().fold(0.0, f64::max);
    if !(max > 0.0) {
        return Err(Error::contract("f_P has no mass on the support of f"));
    }
    Ok(ratio.into_iter().map(|r| r / max).collect())
}

pub fn minimize_lvar_exact(d: &DiscreteJoint) -> Result<Vec<f64>> {
    minimize_lvar_for(&d.f, &d.f_p)
}

/// `Σ f(i) · [Φ*(i) if Φ(i) < 0.5 else 1 - Φ*(i)]`.
pub fn misclassification_rate(d: &DiscreteJoint, phi: &[f64]) -> f64 {
    let star = bayes_phi(d);
    d.f.iter()
        .zip(phi)
        .zip(&star)
        .map(|((f, &p), &s)| f * if p < 0.5 { s } else { 1.0 - s })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiasBound {
    pub c1: f64,
    pub c2: f64,
    pub epsilon: f64,
    pub bound: f64,
}

/// `max{c₂/c₁ - 1, 1 - c₁(1-ε)/c₂}`.
pub fn bias_bound(c1: f64, c2: f64, epsilon: f64) -> f64 {
    if !(c1 > 0.0) {
        return f64::INFINITY;
    }
    (c2 / c1 - 1.0).max(1.0 - c1 * (1.0 - epsilon) / c2)
}

/// Tight density-ratio constants of `f_P'` against `f_P` and `ε = 1 - max Φ*`.
pub fn bias_constants(d: &DiscreteJoint, f_p_prime: &[f64]) -> Result<BiasBound> {
    if f_p_prime.len() != d.k() {
        return Err(Error::contract("f_P' has the wrong length"));
    }
    check_distribution(f_p_prime, "f_P'")?;
    let mut c1 = f64::INFINITY;
    let mut c2: f64 = 0.0;
    for (i, (&b, &p)) in f_p_prime.iter().zip(&d.f_p).enumerate() {
        if p > 0.0 {
            c1 = c1.min(b / p);
            c2 = c2.max(b / p);
        } else if b > 0.0 {
            return Err(Error::contract(format!("f_P'({i}) > 0 outside the support of f_P")));
        }
    }
    let epsilon = 1.0 - bayes_phi(d).into_iter().fold(0.0, f64::max);
    Ok(BiasBound {
        c1,
        c2,
        epsilon,
        bound: bias_bound(c1, c2, epsilon),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiasBoundOutcome {
    pub lhs: f64,
    pub constants: BiasBound,
    pub holds: bool,
}

/// Trains (exactly) on biased positives `f_P'` and compares error rates against the bound.
pub fn check_bias_bound(d: &DiscreteJoint, f_p_prime: &[f64]) -> Result<BiasBoundOutcome> {
    let constants = bias_constants(d, f_p_prime)?;
    let phi = minimize_lvar_for(&d.f, f_p_prime)?;
    let lhs = (misclassification_rate(d, &phi) - misclassification_rate(d, &bayes_phi(d))).abs();
    Ok(BiasBoundOutcome {
        lhs,
        constants,
        holds: lhs <= constants.bound + 1e-12,
    })
}

/// Some support point of `f_P` with `f_N / f_P ≤ tol`.
pub fn check_irreducibility(d: &DiscreteJoint, tol: f64) -> bool {
    d.f_p
        .iter()
        .zip(&d.f_n)
        .any(|(&p, &n)| p > 0.0 && n / p <= tol)
}

/// The same condition stated on the posterior: `max Φ* ≥ 1 / (1 + tol (1-π)/π)`.
///
/// The threshold carries a relative slack of `1e-12`: when the ratio sits exactly
/// at `tol` the two sides are computed along different rounding paths.
pub fn irreducible_by_posterior(d: &DiscreteJoint, tol: f64) -> bool {
    let threshold = 1.0 / (1.0 + tol * (1.0 - d.pi_p) / d.pi_p);
    bayes_phi(d).into_iter().fold(0.0, f64::max) >= threshold * (1.0 - 1e-12)
}

/// `E_f[Φ²] / E_f[Φ]² - 2 E_{f_P}[Φ] / E_f[Φ]`.
pub fn exact_l2(d: &DiscreteJoint, phi: &[f64]) -> f64 {
    let sq: Vec<f64> = phi.iter().map(|p| p * p).collect();
    let m1 = expect(&d.f, phi);
    expect(&d.f, &sq) / (m1 * m1) - 2.0 * expect(&d.f_p, phi) / m1
}

/// `Σ (f_Φ - f_P)² / f` over the support of `f`.
pub fn weighted_l2_distance(d: &DiscreteJoint, phi: &[f64]) -> Result<f64> {
    let f_phi = induced_f_phi(d, phi)?;
    Ok(d.f
        .iter()
        .zip(&f_phi)
        .zip(&d.f_p)
        .filter(|((f, _), _)| **f > 0.0)
        .map(|((f, a), b)| (a - b).powi(2) / f)
        .sum())
}

fn logistic(x: f64) -> f64 {
    crate::autodiff::sigmoid(x)
}

/// Population uPU risk with prior `pi` and per-point scores `g`.
pub fn upu_population_risk(d: &DiscreteJoint, pi: f64, g: &[f64]) -> f64 {
    let mut r = 0.0;
    for ((&gi, &fp), &f) in g.iter().zip(&d.f_p).zip(&d.f) {
        let (lp, ln) = (logistic(-gi), logistic(gi));
        r += pi * fp * (lp - ln) + f * ln;
    }
    r
}

/// `Σ min(π f_P, (1-π) f_N)`: the infimum of the sigmoid-loss risk at the true prior.
pub fn bayes_risk_floor(d: &DiscreteJoint) -> f64 {
    d.f_p
        .iter()
        .zip(&d.f_n)
        .map(|(p, n)| (d.pi_p * p).min((1.0 - d.pi_p) * n))
        .sum()
}

// ---- random instances ----

/// Dirichlet(1, ..., 1) with each entry independently zeroed with probability `drop`.
fn sparse_dirichlet(k: usize, drop: f64, rng: &mut RngState) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..k)
            .map(|_| {
                let e: f64 = Exp1.sample(rng);
                if rng.uniform() < drop { 0.0 } else { e }
            })
            .collect();
        let s: f64 = v.iter().sum();
        if s > 0.0 {
            return normalize(v);
        }
    }
}

fn normalize(v: Vec<f64>) -> Vec<f64> {
    let s: f64 = v.iter().sum();
    let mut out: Vec<f64> = v.into_iter().map(|x| x / s).collect();
    // push the rounding residue onto the largest entry so the sum is 1 to an ulp
    let resid = 1.0 - out.iter().sum::<f64>();
    if let Some(m) = (0..out.len()).max_by(|&a, &b| out[a].total_cmp(&out[b])) {
        out[m] += resid;
    }
    out
}

/// Random joint with `2 ≤ K ≤ max_k`, `π ~ U(0.05, 0.95)`. With `anchor`, one point of
/// the positive support gets `f_N = 0`, so the irreducibility assumption holds.
pub fn random_instance(max_k: usize, anchor: bool, rng: &mut RngState) -> DiscreteJoint {
    let k = 2 + rng.below(max_k.max(2) - 1);
    let f_p = sparse_dirichlet(k, 0.2, rng);
    let mut f_n = sparse_dirichlet(k, 0.2, rng);
    if anchor {
        let support: Vec<usize> = (0..k).filter(|&i| f_p[i] > 0.0).collect();
        let a = support[rng.below(support.len())];
        f_n[a] = 0.0;
        if f_n.iter().all(|&v| v == 0.0) {
            let other = (a + 1) % k;
            f_n[other] = 1.0;
        }
        f_n = normalize(f_n);
    }
    let pi = 0.05 + 0.9 * rng.uniform();
    DiscreteJoint::from_conditionals(f_p, f_n, pi).expect("generated distributions are valid")
}

/// Φ with entries uniform in `[lo, 1]`.
pub fn random_phi(k: usize, lo: f64, rng: &mut RngState) -> Vec<f64> {
    (0..k).map(|_| lo + (1.0 - lo) * rng.uniform()).collect()
}

/// `f_P' ∝ f_P · w` with `w ~ U(0.2, 1.8)`: same support, bounded density ratio.
pub fn random_biased_positive(d: &DiscreteJoint, rng: &mut RngState) -> Vec<f64> {
    normalize(d.f_p.iter().map(|p| p * (0.2 + 1.6 * rng.uniform())).collect())
}

/// Draws `n` support indices from `weights`.
fn sample_support(weights: &[f64], n: usize, rng: &mut RngState) -> Vec<usize> {
    (0..n)
        .map(|_| {
            let mut u = rng.uniform();
            for (i, &w) in weights.iter().enumerate() {
                u -= w;
                if u < 0.0 {
                    return i;
                }
            }
            weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
        })
        .collect()
}

// ---- property suite ----

/// Deliberate bugs used to confirm the suite can fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Leave out the `L_var(Φ*)` term of the KL-identity residual.
    DropOptimalLvar,
}

#[derive(Debug, Clone)]
pub struct SuiteConfig {
    pub trials: usize,
    pub seed: u64,
    pub fault: Option<Fault>,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            trials: 1000,
            seed: 0,
            fault: None,
        }
    }
}

/// Outcome of one trial: the checked quantity and whether it passed.
struct Trial {
    residual: f64,
    pass: bool,
    instance: String,
}

#[derive(Debug, Clone)]
pub struct PropertyReport {
    pub name: &'static str,
    pub trials: usize,
    pub passed: usize,
    pub tolerance: f64,
    /// Largest residual seen, with the seed and description of that trial.
    pub worst: f64,
    pub worst_seed: u64,
    pub worst_instance: String,
    pub first_failure: Option<(u64, String)>,
}

impl PropertyReport {
    pub fn ok(&self) -> bool {
        self.passed == self.trials
    }
}

type Check = fn(&mut RngState, Option<Fault>) -> Trial;

const PROPERTIES: [(&str, f64, Check); 9] = [
    ("kl_identity", 1e-10, prop_kl_identity),
    ("kl_nonnegative", 1e-12, prop_kl_nonnegative),
    ("scale_invariance", 1e-10, prop_scale_invariance),
    ("minimizer_family", 1e-9, prop_minimizer),
    ("induced_uniqueness", 1e-9, prop_uniqueness),
    ("l2_identity", 1e-10, prop_l2_identity),
    ("bias_bound", 1e-12, prop_bias_bound),
    ("irreducibility", 0.0, prop_irreducibility),
    ("prior_trivial_minimum", 1e-12, prop_trivial_minimum),
];

pub fn property_names() -> Vec<&'static str> {
    PROPERTIES.iter().map(|p| p.0).collect()
}

/// Runs every property for `trials` seeds `seed, seed + 1, ...`.
pub fn run_suite(config: &SuiteConfig) -> Vec<PropertyReport> {
    PROPERTIES
        .iter()
        .map(|&(name, tolerance, check)| run_property(name, tolerance, check, config))
        .collect()
}

pub fn run_named(name: &str, config: &SuiteConfig) -> Option<PropertyReport> {
    PROPERTIES
        .iter()
        .find(|p| p.0 == name)
        .map(|&(name, tol, check)| run_property(name, tol, check, config))
}

fn run_property(name: &'static str, tolerance: f64, check: Check, config: &SuiteConfig) -> PropertyReport {
    let results: Vec<(u64, Trial)> = (0..config.trials as u64)
        .into_par_iter()
        .map(|t| {
            let seed = config.seed.wrapping_add(t);
            (seed, check(&mut RngState::new(seed), config.fault))
        })
        .collect();
    let mut report = PropertyReport {
        name,
        trials: config.trials,
        passed: 0,
        tolerance,
        worst: 0.0,
        worst_seed: config.seed,
        worst_instance: String::new(),
        first_failure: None,
    };
    for (seed, trial) in results {
        if trial.pass {
            report.passed += 1;
        } else if report.first_failure.is_none() {
            report.first_failure = Some((seed, trial.instance.clone()));
        }
        if trial.residual > report.worst || report.worst_instance.is_empty() {
            report.worst = trial.residual;
            report.worst_seed = seed;
            report.worst_instance = trial.instance;
        }
    }
    report
}

impl fmt::Display for PropertyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<24} {:>6} {:>6}  {:>12.3e}  {:>8.1e}  {}",
            self.name,
            self.trials,
            self.passed,
            self.worst,
            self.tolerance,
            if self.ok() { "PASS" } else { "FAIL" }
        )
    }
}

pub fn report_header() -> String {
    format!(
        "{:<24} {:>6} {:>6}  {:>12}  {:>8}  {}",
        "property", "trials", "passed", "worst", "tol", "status"
    )
}

fn describe(d: &DiscreteJoint, phi: Option<&[f64]>) -> String {
    let mut s = format!("pi_p={:?} f={:?} f_p={:?}", d.pi_p, d.f, d.f_p);
    if let Some(p) = phi {
        s.push_str(&format!(" phi={p:?}"));
    }
    s
}

fn finite_or_max(v: f64) -> f64 {
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

fn prop_kl_identity(rng: &mut RngState, fault: Option<Fault>) -> Trial {
    let d = random_instance(32, false, rng);
    let phi = random_phi(d.k(), 1e-3, rng);
    let r = kl_gap_residual(&d, &phi, fault).map_or(f64::INFINITY, finite_or_max);
    Trial {
        residual: r,
        pass: r <= 1e-10,
        instance: describe(&d, Some(&phi)),
    }
}

fn prop_kl_nonnegative(rng: &mut RngState, _: Option<Fault>) -> Trial {
    let d = random_instance(32, false, rng);
    let phi = random_phi(d.k(), 1e-3, rng);
    let gap = exact_lvar(&d, &phi) - exact_lvar(&d, &bayes_phi(&d));
    let shortfall = (-gap).max(0.0);
    Trial {
        residual: shortfall,
        pass: gap >= -1e-12,
        instance: describe(&d, Some(&phi)),
    }
}

fn prop_scale_invariance(rng: &mut RngState, _: Option<Fault>) -> Trial {
    let d = random_instance(32, false, rng);
    let phi = random_phi(d.k(), 1e-3, rng);
    let ip = sample_support(&d.f_p, 50, rng);
    let iu = sample_support(&d.f, 200, rng);
    let empirical = |scale: f64| {
        let p: Vec<f64> = ip.iter().map(|&i| scale * phi[i]).collect();
        let u: Vec<f64> = iu.iter().map(|&i| scale * phi[i]).collect();
        lvar_value(&p, &u)
    };
    let exact = exact_lvar(&d, &phi);
    let emp = empirical(1.0);
    let mut worst: f64 = 0.0;
    for c in [0.1, 0.5, 0.9] {
        let scaled: Vec<f64> = phi.iter().map(|p| c * p).collect();
        worst = worst.max((exact_lvar(&d, &scaled) - exact).abs());
        worst = worst.max((empirical(c) - emp).abs());
    }
    let worst = finite_or_max(worst);
    Trial {
        residual: worst,
        pass: worst <= 1e-10,
        instance: describe(&d, Some(&phi)),
    }
}

fn prop_minimizer(rng: &mut RngState, _: Option<Fault>) -> Trial {
    let d = random_instance(32, true, rng);
    let star = bayes_phi(&d);
    let Ok(phi) = minimize_lvar_exact(&d) else {
        return Trial {
            residual: f64::INFINITY,
            pass: false,
            instance: describe(&d, None),
        };
    };
    let max = phi.iter().copied().fold(0.0, f64::max);
    let dev = phi
        .iter()
        .zip(&star)
        .map(|(a, b)| (a / max - b).abs())
        .fold(0.0, f64::max);
    // no random perturbation may do better
    let best = exact_lvar(&d, &phi);
    let mut beaten = false;
    for _ in 0..100 {
        let perturbed: Vec<f64> = phi
            .iter()
            .map(|p| (p * (1.0 + 0.2 * (rng.uniform() - 0.5))).clamp(1e-6, 1.0))
            .collect();
        if exact_lvar(&d, &perturbed) < best - 1e-12 {
            beaten = true;
        }
    }
    Trial {
        residual: dev,
        pass: dev <= 1e-9 && !beaten,
        instance: describe(&d, Some(&phi)),
    }
}

fn prop_uniqueness(rng: &mut RngState, _: Option<Fault>) -> Trial {
    let d = random_instance(32, true, rng);
    let star = bayes_phi(&d);
    let scaled: Vec<f64> = {
        let c = 0.05 + 0.95 * rng.uniform();
        star.iter().map(|s| c * s).collect()
    };
    let random = random_phi(d.k(), 1e-3, rng);
    let mut pass = true;
    let mut worst: f64 = 0.0;
    for phi in [&star, &scaled, &random] {
        let Ok(f_phi) = induced_f_phi(&d, phi) else {
            pass = false;
            continue;
        };
        let dist = f_phi.iter().zip(&d.f_p).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let max = phi.iter().copied().fold(0.0, f64::max);
        let phi_dist = phi.iter().zip(&star).map(|(p, s)| (p / max - s).abs()).fold(0.0, f64::max);
        let induced_match = dist <= 1e-12;
        let normalized_match = phi_dist <= 1e-9;
        if induced_match != normalized_match {
            pass = false;
        }
        if normalized_match {
            worst = worst.max(phi_dist);
        }
    }
    Trial {
        residual: worst,
        pass,
        instance: describe(&d, Some(&random)),
    }
}

fn prop_l2_identity(rng: &mut RngState, _: Option<Fault>) -> Trial {
    let d = random_instance(32, false, rng);
    let phi = random_phi(d.k(), 1e-3, rng);
    let lhs = exact_l2(&d, &phi) - exact_l2(&d, &bayes_phi(&d));
    let r = weighted_l2_distance(&d, &phi).map_or(f64::INFINITY, |rhs| finite_or_max((lhs - rhs).abs()));
    Trial {
        residual: r,
        pass: r <= 1e-10,
        instance: describe(&d, Some(&phi)),
    }
}

fn prop_bias_bound(rng: &mut RngState, _: Option<Fault>) -> Trial {
    let d = random_instance(16, false, rng);
    let biased = random_biased_positive(&d, rng);
    match check_bias_bound(&d, &biased) {
        Ok(out) => Trial {
            residual: (out.lhs - out.constants.bound).max(0.0),
            pass: out.holds,
            instance: format!("{} f_p_prime={biased:?}", describe(&d, None)),
        },
        Err(e) => Trial {
            residual: f64::INFINITY,
            pass: false,
            instance: format!("{} error={e}", describe(&d, None)),
        },
    }
}

fn prop_irreducibility(rng: &mut RngState, _: Option<Fault>) -> Trial {
    let anchor = rng.uniform() < 0.5;
    let d = random_instance(32, anchor, rng);
    let tol = [0.0, 1e-9, 1e-3, 0.1, 0.5, 1.0][rng.below(6)];
    let agree = check_irreducibility(&d, tol) == irreducible_by_posterior(&d, tol);
    Trial {
        residual: if agree { 0.0 } else { 1.0 },
        pass: agree,
        instance: format!("{} tol={tol}", describe(&d, None)),
    }
}

/// uPU at prior 1 with a constant score `C` never exceeds the uPU risk at the true
/// prior of the Bayes-sign scorer with the same magnitude.
fn prop_trivial_minimum(rng: &mut RngState, _: Option<Fault>) -> Trial {
    let d = random_instance(32, false, rng);
    let c = 40.0 * rng.uniform();
    let trivial = upu_population_risk(&d, 1.0, &vec![c; d.k()]);
    let signs: Vec<f64> = bayes_phi(&d)
        .into_iter()
        .map(|s| if s >= 0.5 { c } else { -c })
        .collect();
    let honest = upu_population_risk(&d, d.pi_p, &signs);
    let excess = trivial - honest;
    Trial {
        residual: excess.max(0.0),
        pass: excess <= 1e-12,
        instance: format!("{} C={c}", describe(&d, None)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_point() -> DiscreteJoint {
        DiscreteJoint::new(vec![0.5, 0.5], vec![1.0, 0.0], 0.5).unwrap()
    }

    #[test]
    fn two_point_enumeration() {
        let d = two_point();
        assert_eq!(bayes_phi(&d), vec![1.0, 0.0]);
        assert_eq!(exact_lvar(&d, &[1.0, 1.0]), 0.0);
        assert!((exact_lvar(&d, &[1.0, 0.5]) - 0.75f64.ln()).abs() < 1e-15);
        assert!((exact_lvar(&d, &[1.0, 0.0]) - 0.5f64.ln()).abs() < 1e-15);
        let f_phi = induced_f_phi(&d, &[1.0, 0.5]).unwrap();
        assert!((f_phi[0] - 2.0 / 3.0).abs() < 1e-15 && (f_phi[1] - 1.0 / 3.0).abs() < 1e-15);
        assert!((kl(d.f_p(), &f_phi) - 1.5f64.ln()).abs() < 1e-15);
        assert!(kl_identity_residual(&d, &[1.0, 0.5]).unwrap() < 1e-15);
        assert_eq!(minimize_lvar_exact(&d).unwrap(), vec![1.0, 0.0]);
        assert_eq!(exact_lvar(&d, &[0.0, 1.0]), f64::INFINITY);
    }

    #[test]
    fn no_signal_posterior_is_the_prior() {
        let f = vec![0.2, 0.3, 0.5];
        let d = DiscreteJoint::new(f.clone(), f, 0.3).unwrap();
        for s in bayes_phi(&d) {
            assert!((s - 0.3).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_negative_negatives() {
        assert!(DiscreteJoint::new(vec![0.9, 0.1], vec![0.0, 1.0], 0.5).is_err());
    }

    #[test]
    fn misclassification_examples() {
        let d = two_point();
        assert_eq!(misclassification_rate(&d, &bayes_phi(&d)), 0.0);
        let d = DiscreteJoint::new(vec![0.25, 0.25, 0.5], vec![0.3, 0.5, 0.2], 0.4).unwrap();
        assert!((misclassification_rate(&d, &[1.0; 3]) - 0.6).abs() < 1e-15);
        assert!((misclassification_rate(&d, &[0.0; 3]) - 0.4).abs() < 1e-15);
    }

    #[test]
    fn bound_arithmetic() {
        assert_eq!(bias_bound(1.0, 1.0, 0.0), 0.0);
        let b = bias_bound(0.9, 1.1, 0.05);
        assert!((b - (1.0 - 0.9 * 0.95 / 1.1)).abs() < 1e-15);
        assert!((b - 0.222727).abs() < 1e-6);
        let d = DiscreteJoint::from_conditionals(vec![0.5, 0.5, 0.0], vec![0.0, 0.5, 0.5], 0.5).unwrap();
        let out = check_bias_bound(&d, d.f_p()).unwrap();
        assert_eq!(out.lhs, 0.0);
        assert_eq!(out.constants.epsilon, 0.0);
        assert_eq!(out.constants.bound, 0.0);
        assert!(out.holds);
    }

    #[test]
    fn irreducibility_examples() {
        let d = DiscreteJoint::from_conditionals(vec![1.0, 0.0], vec![0.0, 1.0], 0.5).unwrap();
        assert!(check_irreducibility(&d, 1e-9));
        let f_p = vec![0.5, 0.3, 0.2];
        let f_n: Vec<f64> = f_p.iter().zip([0.1, 0.1, 0.8]).map(|(p, g)| 0.3 * p + 0.7 * g).collect();
        let d = DiscreteJoint::from_conditionals(f_p, f_n, 0.4).unwrap();
        assert!(!check_irreducibility(&d, 1e-9));
        assert!(!irreducible_by_posterior(&d, 1e-9));
    }

    #[test]
    fn minimizer_requires_support() {
        assert!(minimize_lvar_for(&[1.0, 0.0], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn instances_are_reproducible() {
        let a = random_instance(32, true, &mut RngState::new(5));
        let b = random_instance(32, true, &mut RngState::new(5));
        assert_eq!(a, b);
        assert!(check_irreducibility(&a, 0.0));
    }

    #[test]
    fn suite_passes_and_detects_a_fault() {
        let config = SuiteConfig {
            trials: 50,
            seed: 11,
            fault: None,
        };
        for r in run_suite(&config) {
            assert!(r.ok(), "{r}\n{}", r.worst_instance);
        }
        let faulty = SuiteConfig {
            fault: Some(Fault::DropOptimalLvar),
            ..config
        };
        let r = run_named("kl_identity", &faulty).unwrap();
        assert!(!r.ok());
    }
}
