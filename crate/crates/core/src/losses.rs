//! Training objectives over mini-batches.
//!
//! Each objective exists at two levels: a formula over already-computed
//! probability (or margin) nodes, and a model-level wrapper that runs the
//! network forward first. The formula level is what the oracle tests and
//! the gradient checks exercise directly.

use std::fmt;
use std::str::FromStr;

use crate::autodiff::{Differentiable, Graph, Var, DEFAULT_LOG_FLOOR};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::MlpArchitecture;
use crate::sampling::MixupPairs;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    Vpu,
    VpuL2,
    Upu,
    Nnpu,
}

impl Objective {
    pub const ALL: [Objective; 4] = [Objective::Vpu, Objective::VpuL2, Objective::Upu, Objective::Nnpu];

    /// True for the risk estimators that need the class prior.
    pub fn is_baseline(self) -> bool {
        matches!(self, Objective::Upu | Objective::Nnpu)
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Objective::Vpu => "vpu",
            Objective::VpuL2 => "vpu_l2",
            Objective::Upu => "upu",
            Objective::Nnpu => "nnpu",
        })
    }
}

impl FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Objective::ALL
            .into_iter()
            .find(|o| o.to_string() == s)
            .ok_or_else(|| Error::Config(format!("unknown objective `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegVariant {
    MsleMixupPu,
    None,
    MsleMixupPOnly,
    MsleMixupPuPu,
    MseMixupPu,
    LargeMargin,
}

impl RegVariant {
    pub const ALL: [RegVariant; 6] = [
        RegVariant::MsleMixupPu,
        RegVariant::None,
        RegVariant::MsleMixupPOnly,
        RegVariant::MsleMixupPuPu,
        RegVariant::MseMixupPu,
        RegVariant::LargeMargin,
    ];

    pub fn uses_mixup(self) -> bool {
        !matches!(self, RegVariant::None | RegVariant::LargeMargin)
    }

    /// Residual of the consistency term.
    pub fn residual(self) -> Residual {
        match self {
            RegVariant::MseMixupPu => Residual::Squared,
            _ => Residual::SquaredLog,
        }
    }
}

impl fmt::Display for RegVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RegVariant::MsleMixupPu => "msle_mixup_pu",
            RegVariant::None => "none",
            RegVariant::MsleMixupPOnly => "msle_mixup_p_only",
            RegVariant::MsleMixupPuPu => "msle_mixup_pupu",
            RegVariant::MseMixupPu => "mse_mixup_pu",
            RegVariant::LargeMargin => "large_margin",
        })
    }
}

impl FromStr for RegVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RegVariant::ALL
            .into_iter()
            .find(|v| v.to_string() == s)
            .ok_or_else(|| Error::Config(format!("unknown regularizer `{s}`")))
    }
}

/// How a MixUp residual between target and prediction is penalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Residual {
    /// `(log target - log pred)^2`
    SquaredLog,
    /// `(target - pred)^2`
    Squared,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossSpec {
    pub objective: Objective,
    pub reg_variant: RegVariant,
    pub lambda: f64,
    pub alpha: f64,
    pub pi_p: Option<f64>,
}

impl Default for LossSpec {
    fn default() -> Self {
        LossSpec {
            objective: Objective::Vpu,
            reg_variant: RegVariant::MsleMixupPu,
            lambda: 0.03,
            alpha: 0.3,
            pi_p: None,
        }
    }
}

impl LossSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda {} must be >= 0", self.lambda)));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha {} must be > 0", self.alpha)));
        }
        match (self.objective.is_baseline(), self.pi_p) {
            (true, None) => Err(Error::Config(format!("objective {} needs pi_p", self.objective))),
            (true, Some(p)) if !(p > 0.0 && p <= 1.0) => {
                Err(Error::Config(format!("pi_p {p} must lie in (0, 1]")))
            }
            (false, Some(_)) => Err(Error::Config(format!(
                "pi_p is only used by baseline objectives, not {}",
                self.objective
            ))),
            _ => Ok(()),
        }
    }

    /// True when the regularizer term is part of the loss at all.
    pub fn regularized(&self) -> bool {
        !self.objective.is_baseline() && self.reg_variant != RegVariant::None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    Positive,
    Unlabeled,
}

/// Mini-batch of feature rows tagged with the set they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    features: Matrix,
    origin: Origin,
}

impl Batch {
    pub fn new(features: Matrix, origin: Origin) -> Self {
        Batch { features, origin }
    }

    pub fn positive(features: Matrix) -> Self {
        Batch::new(features, Origin::Positive)
    }

    pub fn unlabeled(features: Matrix) -> Self {
        Batch::new(features, Origin::Unlabeled)
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn origin(&self) -> Origin {
        self.origin
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

// ---- formulas over probability / margin nodes ----

/// `log mean(Φ_u) - mean(log Φ_p)`.
pub fn lvar_from_phi(g: &mut Graph, phi_p: Var, phi_u: Var) -> Var {
    let mu = g.mean(phi_u);
    let log_mu = g.log(mu);
    let lp = g.log(phi_p);
    let mean_lp = g.mean(lp);
    g.sub(log_mu, mean_lp)
}

/// `mean(Φ_u²) / mean(Φ_u)² - 2 mean(Φ_p) / mean(Φ_u)`.
pub fn l2_from_phi(g: &mut Graph, phi_p: Var, phi_u: Var) -> Var {
    let sq = g.square(phi_u);
    let second = g.mean(sq);
    let first = g.mean(phi_u);
    let first_sq = g.square(first);
    let ratio = g.div(second, first_sq);
    let mp = g.mean(phi_p);
    let cross = g.div(mp, first);
    let cross = g.scale(cross, 2.0);
    g.sub(ratio, cross)
}

/// Mean residual between MixUp targets and predictions at the mixed points.
pub fn consistency_from_phi(g: &mut Graph, target: Var, pred: Var, residual: Residual) -> Var {
    let diff = match residual {
        Residual::SquaredLog => {
            let lt = g.log(target);
            let lp = g.log(pred);
            g.sub(lt, lp)
        }
        Residual::Squared => g.sub(target, pred),
    };
    let sq = g.square(diff);
    g.mean(sq)
}

/// `mean log(1 + α(1-Φ)/Φ)`, evaluated as `log(Φ(1-α) + α) - log Φ`.
pub fn margin_from_phi(g: &mut Graph, phi_p: Var, alpha: f64) -> Var {
    let inner = g.scale(phi_p, 1.0 - alpha);
    let inner = g.shift(inner, alpha);
    let num = g.log(inner);
    let den = g.log(phi_p);
    let per_point = g.sub(num, den);
    g.mean(per_point)
}

/// Sigmoid surrogate means over a margin node: `(mean σ(-g), mean σ(g))`.
fn surrogate_means(g: &mut Graph, margins: Var) -> (Var, Var) {
    let neg = g.neg(margins);
    let pos_loss = g.sigmoid(neg);
    let neg_loss = g.sigmoid(margins);
    (g.mean(pos_loss), g.mean(neg_loss))
}

/// `π (mean_p ℓ₊ - mean_p ℓ₋) + mean_u ℓ₋`.
pub fn upu_from_margins(g: &mut Graph, margin_p: Var, margin_u: Var, pi_p: f64) -> Var {
    let (p_plus, p_minus) = surrogate_means(g, margin_p);
    let (_, u_minus) = surrogate_means(g, margin_u);
    let d = g.sub(p_plus, p_minus);
    let d = g.scale(d, pi_p);
    g.add(d, u_minus)
}

/// `π mean_p ℓ₊ + max(0, mean_u ℓ₋ - π mean_p ℓ₋)`; at the kink the gradient follows the risk term.
pub fn nnpu_from_margins(g: &mut Graph, margin_p: Var, margin_u: Var, pi_p: f64) -> Var {
    let (p_plus, p_minus) = surrogate_means(g, margin_p);
    let (_, u_minus) = surrogate_means(g, margin_u);
    let pos = g.scale(p_plus, pi_p);
    let scaled = g.scale(p_minus, pi_p);
    let neg_risk = g.sub(u_minus, scaled);
    let zero = g.scalar(0.0);
    let clamped = g.max(neg_risk, zero);
    g.add(pos, clamped)
}

// ---- model-level losses ----

fn check_batches(batch_p: &Batch, batch_u: &Batch) -> Result<()> {
    if batch_p.origin() != Origin::Positive || batch_u.origin() != Origin::Unlabeled {
        return Err(Error::contract("expected a positive and an unlabeled batch"));
    }
    if batch_p.is_empty() || batch_u.is_empty() {
        return Err(Error::contract("batches must be nonempty"));
    }
    if batch_p.features().cols() != batch_u.features().cols() {
        return Err(Error::contract("batches have different dimensions"));
    }
    Ok(())
}

pub fn variational_loss(g: &mut Graph, net: &MlpArchitecture, params: Var, batch_p: &Batch, batch_u: &Batch) -> Var {
    let phi_p = net.graph_proba(g, params, batch_p.features());
    let phi_u = net.graph_proba(g, params, batch_u.features());
    lvar_from_phi(g, phi_p, phi_u)
}

pub fn l2_variational_loss(g: &mut Graph, net: &MlpArchitecture, params: Var, batch_p: &Batch, batch_u: &Batch) -> Var {
    let phi_p = net.graph_proba(g, params, batch_p.features());
    let phi_u = net.graph_proba(g, params, batch_u.features());
    l2_from_phi(g, phi_p, phi_u)
}

pub fn large_margin_reg(g: &mut Graph, net: &MlpArchitecture, params: Var, batch_p: &Batch, alpha: f64) -> Var {
    let phi_p = net.graph_proba(g, params, batch_p.features());
    margin_from_phi(g, phi_p, alpha)
}

pub fn upu_risk(g: &mut Graph, net: &MlpArchitecture, params: Var, batch_p: &Batch, batch_u: &Batch, pi_p: f64) -> Var {
    let mp = net.graph_logits(g, params, batch_p.features());
    let mu = net.graph_logits(g, params, batch_u.features());
    upu_from_margins(g, mp, mu, pi_p)
}

pub fn nnpu_risk(g: &mut Graph, net: &MlpArchitecture, params: Var, batch_p: &Batch, batch_u: &Batch, pi_p: f64) -> Var {
    let mp = net.graph_logits(g, params, batch_p.features());
    let mu = net.graph_logits(g, params, batch_u.features());
    nnpu_from_margins(g, mp, mu, pi_p)
}

/// MixUp consistency term for prebuilt pairs.
///
/// Endpoints of unlabeled origin contribute `Φ(x)` to the target; with
/// `stop_target` those values enter as constants.
pub fn mixup_consistency_reg(
    g: &mut Graph,
    net: &MlpArchitecture,
    params: Var,
    pairs: &MixupPairs,
    residual: Residual,
    stop_target: bool,
) -> Var {
    let n = pairs.len();
    let mut base = vec![0.0; n];
    let mut wl = vec![0.0; n];
    let mut wr = vec![0.0; n];
    for i in 0..n {
        let (gl, gr) = (pairs.gamma[i], 1.0 - pairs.gamma[i]);
        if pairs.left_positive[i] { base[i] += gl } else { wl[i] = gl }
        if pairs.right_positive[i] { base[i] += gr } else { wr[i] = gr }
    }
    let mut target = g.constant(Matrix::column(&base));
    for (weights, side) in [(wl, &pairs.left), (wr, &pairs.right)] {
        if weights.iter().all(|&w| w == 0.0) {
            continue;
        }
        let mut phi = net.graph_proba(g, params, side);
        if stop_target {
            phi = g.stop_gradient(phi);
        }
        let w = g.constant(Matrix::column(&weights));
        let term = g.mul(w, phi);
        target = g.add(target, term);
    }
    let pred = net.graph_proba(g, params, &pairs.mixed());
    consistency_from_phi(g, target, pred, residual)
}

/// Node handles of a recorded total loss.
#[derive(Debug, Clone, Copy)]
pub struct LossParts {
    pub total: Var,
    pub objective: Var,
    pub reg: Option<Var>,
}

/// Objective plus `λ ·` regularizer, as one differentiable expression.
///
/// The MixUp pairs (and their γ) are drawn by the caller so that this value
/// is a deterministic function of the parameters.
#[derive(Debug, Clone)]
pub struct TrainingLoss<'a> {
    spec: &'a LossSpec,
    net: &'a MlpArchitecture,
    batch_p: &'a Batch,
    batch_u: &'a Batch,
    pairs: Option<&'a MixupPairs>,
    stop_target: bool,
    log_floor: f64,
}

impl<'a> TrainingLoss<'a> {
    pub fn new(
        spec: &'a LossSpec,
        net: &'a MlpArchitecture,
        batch_p: &'a Batch,
        batch_u: &'a Batch,
        pairs: Option<&'a MixupPairs>,
    ) -> Result<Self> {
        spec.validate()?;
        check_batches(batch_p, batch_u)?;
        if batch_p.features().cols() != net.input_dim() {
            return Err(Error::contract("batch dimension does not match the network"));
        }
        if spec.regularized() && spec.reg_variant.uses_mixup() {
            match pairs {
                Some(p) if !p.is_empty() => {}
                _ => return Err(Error::contract(format!("{} needs MixUp pairs", spec.reg_variant))),
            }
        }
        Ok(TrainingLoss {
            spec,
            net,
            batch_p,
            batch_u,
            pairs,
            stop_target: true,
            log_floor: DEFAULT_LOG_FLOOR,
        })
    }

    pub fn stop_target(mut self, on: bool) -> Self {
        self.stop_target = on;
        self
    }

    pub fn with_log_floor(mut self, floor: f64) -> Self {
        self.log_floor = floor;
        self
    }

    pub fn record(&self, g: &mut Graph, params: Var) -> LossParts {
        let (net, bp, bu) = (self.net, self.batch_p, self.batch_u);
        let objective = match self.spec.objective {
            Objective::Vpu => variational_loss(g, net, params, bp, bu),
            Objective::VpuL2 => l2_variational_loss(g, net, params, bp, bu),
            Objective::Upu => upu_risk(g, net, params, bp, bu, self.spec.pi_p.unwrap_or(1.0)),
            Objective::Nnpu => nnpu_risk(g, net, params, bp, bu, self.spec.pi_p.unwrap_or(1.0)),
        };
        if !self.spec.regularized() {
            return LossParts {
                total: objective,
                objective,
                reg: None,
            };
        }
        let reg = match (self.spec.reg_variant, self.pairs) {
            (RegVariant::LargeMargin, _) => large_margin_reg(g, net, params, bp, self.spec.alpha),
            (variant, Some(pairs)) => {
                mixup_consistency_reg(g, net, params, pairs, variant.residual(), self.stop_target)
            }
            (_, None) => unreachable!("checked in TrainingLoss::new"),
        };
        let weighted = g.scale(reg, self.spec.lambda);
        LossParts {
            total: g.add(objective, weighted),
            objective,
            reg: Some(reg),
        }
    }
}

impl Differentiable for TrainingLoss<'_> {
    fn build(&self, graph: &mut Graph, params: Var) -> Var {
        self.record(graph, params).total
    }

    fn log_floor(&self) -> f64 {
        self.log_floor
    }
}

// ---- plain evaluation on value slices ----

fn eval_pair(phi_p: &[f64], phi_u: &[f64], f: impl Fn(&mut Graph, Var, Var) -> Var) -> f64 {
    let mut g = Graph::new();
    let p = g.constant(Matrix::column(phi_p));
    let u = g.constant(Matrix::column(phi_u));
    let out = f(&mut g, p, u);
    g.scalar_value(out)
}

/// Empirical variational loss of given Φ values.
pub fn lvar_value(phi_p: &[f64], phi_u: &[f64]) -> f64 {
    eval_pair(phi_p, phi_u, lvar_from_phi)
}

pub fn l2_value(phi_p: &[f64], phi_u: &[f64]) -> f64 {
    eval_pair(phi_p, phi_u, l2_from_phi)
}

pub fn consistency_value(target: &[f64], pred: &[f64], residual: Residual) -> f64 {
    eval_pair(target, pred, |g, t, p| consistency_from_phi(g, t, p, residual))
}

pub fn margin_value(phi_p: &[f64], alpha: f64) -> f64 {
    eval_pair(phi_p, &[], |g, p, _| margin_from_phi(g, p, alpha))
}

pub fn upu_value(margin_p: &[f64], margin_u: &[f64], pi_p: f64) -> f64 {
    eval_pair(margin_p, margin_u, |g, p, u| upu_from_margins(g, p, u, pi_p))
}

pub fn nnpu_value(margin_p: &[f64], margin_u: &[f64], pi_p: f64) -> f64 {
    eval_pair(margin_p, margin_u, |g, p, u| nnpu_from_margins(g, p, u, pi_p))
}
