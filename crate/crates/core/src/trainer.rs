//! The stochastic training loop, Adam, validation-based model selection and
//! the λ sweep.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::autodiff::{value_and_gradient, DEFAULT_LOG_FLOOR};
use crate::data::PuDataset;
use crate::error::{Error, Result};
use crate::eval;
use crate::losses::{lvar_value, Batch, LossSpec, TrainingLoss};
use crate::matrix::Matrix;
use crate::model::{Activation, ClassifierModel, MlpArchitecture};
use crate::sampling::{pairs_for_variant, sample_minibatch, streams, MixWeight, MixupPairs, RngState};

pub const DEFAULT_LAMBDA_GRID: [f64; 10] = [1e-4, 3e-4, 1e-3, 3e-3, 1e-2, 3e-2, 0.1, 0.3, 1.0, 3.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EarlyStop {
    ValLvar,
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub loss: LossSpec,
    pub hidden_widths: Vec<usize>,
    pub activation: Activation,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub seed: u64,
    pub early_stop: EarlyStop,
    /// Treat `Φ(x'')` inside MixUp targets as a constant.
    pub target_stop_gradient: bool,
    /// One γ per pair instead of one per mini-batch.
    pub per_sample_gamma: bool,
    pub log_floor: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss: LossSpec::default(),
            hidden_widths: vec![64, 64],
            activation: Activation::Relu,
            batch_size: 500,
            epochs: 50,
            learning_rate: 3e-4,
            adam_beta1: 0.5,
            adam_beta2: 0.99,
            adam_epsilon: 1e-8,
            seed: 0,
            early_stop: EarlyStop::ValLvar,
            target_stop_gradient: true,
            per_sample_gamma: false,
            log_floor: DEFAULT_LOG_FLOOR,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must lie in [0, 1)")));
            }
        }
        if !(self.adam_epsilon > 0.0) {
            return Err(Error::Config("adam_epsilon must be positive".into()));
        }
        if !(self.log_floor > 0.0 && self.log_floor < 1.0) {
            return Err(Error::Config("log_floor must lie in (0, 1)".into()));
        }
        Ok(())
    }

    pub fn architecture(&self, input_dim: usize) -> Result<MlpArchitecture> {
        MlpArchitecture::new(input_dim, self.hidden_widths.clone(), self.activation)
    }
}

/// First and second moment estimates of Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
}

impl AdamState {
    pub fn new(len: usize, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
            beta1,
            beta2,
            epsilon,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(state: &mut AdamState, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::contract(format!(
            "adam shapes differ: {} params, {} grads, {} state",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.t += 1;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + state.epsilon);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_lvar: f64,
    pub val_lvar: Option<f64>,
    pub val_reg: Option<f64>,
    pub test_acc: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    /// Epoch 0 is the untrained model.
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub final_model: ClassifierModel,
    pub selected_lambda: Option<f64>,
}

impl TrainReport {
    pub fn best(&self) -> &EpochRecord {
        &self.history[self.best_epoch]
    }

    pub fn last(&self) -> &EpochRecord {
        self.history.last().expect("history holds at least epoch 0")
    }

    pub fn history_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.10e}")).unwrap_or_default();
        let mut out = String::from("epoch,train_lvar,val_lvar,val_reg,test_acc\n");
        for r in &self.history {
            let _ = writeln!(
                out,
                "{},{:.10e},{},{},{}",
                r.epoch,
                r.train_lvar,
                opt(r.val_lvar),
                opt(r.val_reg),
                opt(r.test_acc)
            );
        }
        out
    }
}

/// Fixed validation pairs so the regularizer is comparable across epochs.
fn validation_pairs(config: &TrainConfig, vp: &Batch, vu: &Batch) -> Result<Option<MixupPairs>> {
    let variant = config.loss.reg_variant;
    if !variant.uses_mixup() || config.loss.objective.is_baseline() {
        return Ok(None);
    }
    let mut rng = RngState::with_stream(config.seed, streams::VALIDATION);
    let vu = sample_minibatch(vu, vp.len(), &mut rng)?;
    let weight = MixWeight::draw(config.loss.alpha, vp.len(), config.per_sample_gamma, &mut rng)?;
    pairs_for_variant(variant, vp, &vu, &weight, &mut rng)
}

struct Evaluator<'a> {
    config: &'a TrainConfig,
    data: &'a PuDataset,
    val: Option<(Batch, Batch, Option<MixupPairs>)>,
}

impl<'a> Evaluator<'a> {
    fn new(config: &'a TrainConfig, data: &'a PuDataset) -> Result<Self> {
        let val = match data.validation() {
            Some((vp, vu)) => {
                let vp = Batch::positive(vp.clone());
                let vu = Batch::unlabeled(vu.clone());
                let pairs = validation_pairs(config, &vp, &vu)?;
                Some((vp, vu, pairs))
            }
            None => None,
        };
        Ok(Evaluator { config, data, val })
    }

    fn lvar(model: &ClassifierModel, p: &Matrix, u: &Matrix) -> Result<f64> {
        Ok(lvar_value(&model.raw_proba(p)?, &model.raw_proba(u)?))
    }

    fn record(&self, epoch: usize, model: &ClassifierModel) -> Result<EpochRecord> {
        let train_lvar = Self::lvar(model, self.data.positive(), self.data.unlabeled())?;
        let (val_lvar, val_reg) = match &self.val {
            Some((vp, vu, pairs)) => {
                let v = Self::lvar(model, vp.features(), vu.features())?;
                let reg = self.val_reg(model, vp, vu, pairs.as_ref())?;
                (Some(v), reg)
            }
            None => (None, None),
        };
        let test_acc = match self.data.test() {
            Some(t) if !t.is_empty() => Some(eval::accuracy(model, t)?),
            _ => None,
        };
        Ok(EpochRecord {
            epoch,
            train_lvar,
            val_lvar,
            val_reg,
            test_acc,
        })
    }

    fn val_reg(&self, model: &ClassifierModel, vp: &Batch, vu: &Batch, pairs: Option<&MixupPairs>) -> Result<Option<f64>> {
        let spec = &self.config.loss;
        if !spec.regularized() {
            return Ok(None);
        }
        let loss = TrainingLoss::new(spec, model.arch(), vp, vu, pairs)?.with_log_floor(self.config.log_floor);
        let mut g = crate::autodiff::Graph::with_log_floor(self.config.log_floor);
        let p = g.parameters(model.params());
        let parts = loss.record(&mut g, p);
        g.check_finite()?;
        Ok(parts.reg.map(|r| g.scalar_value(r)))
    }
}

fn divergence(epoch: usize, iteration: usize, err: Error) -> Error {
    match err {
        Error::NumericFailure { node, op, value } => Error::Divergence {
            epoch,
            iteration,
            detail: format!("node {node} ({op}) produced {value}"),
        },
        other => other,
    }
}

/// Runs the training loop and returns the selected model. VPU models are
/// normalized on `P ∪ U`; the baselines already estimate the posterior and
/// keep a scale of 1.
pub fn train(config: &TrainConfig, data: &PuDataset) -> Result<TrainReport> {
    config.validate()?;
    if config.early_stop == EarlyStop::ValLvar && data.validation().is_none() {
        return Err(Error::contract("early stopping on validation L_var needs a validation split"));
    }
    let arch = config.architecture(data.dim())?;
    let mut model = ClassifierModel::init(&arch, config.seed);
    let mut rng = RngState::with_stream(config.seed, streams::TRAIN);
    let mut adam = AdamState::new(
        model.params().len(),
        config.adam_beta1,
        config.adam_beta2,
        config.adam_epsilon,
    );
    let pool_p = Batch::positive(data.positive().clone());
    let pool_u = Batch::unlabeled(data.unlabeled().clone());
    let evaluator = Evaluator::new(config, data)?;
    let spec = &config.loss;
    let needs_pairs = spec.regularized() && spec.reg_variant.uses_mixup();
    let iterations = data.n().div_ceil(config.batch_size);

    let mut history = vec![evaluator.record(0, &model)?];
    let mut best_epoch = 0;
    let mut best_params = model.params().clone();

    for epoch in 1..=config.epochs {
        for it in 0..iterations {
            let bp = sample_minibatch(&pool_p, config.batch_size, &mut rng)?;
            let bu = sample_minibatch(&pool_u, config.batch_size, &mut rng)?;
            let pairs = if needs_pairs {
                let w = MixWeight::draw(spec.alpha, bp.len(), config.per_sample_gamma, &mut rng)?;
                pairs_for_variant(spec.reg_variant, &bp, &bu, &w, &mut rng)?
            } else {
                None
            };
            let loss = TrainingLoss::new(spec, &arch, &bp, &bu, pairs.as_ref())?
                .stop_target(config.target_stop_gradient)
                .with_log_floor(config.log_floor);
            let (value, grad) =
                value_and_gradient(&loss, model.params()).map_err(|e| divergence(epoch, it, e))?;
            if !value.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    iteration: it,
                    detail: format!("loss {value}"),
                });
            }
            adam_step(&mut adam, model.params_mut().values_mut(), grad.values(), config.learning_rate)?;
        }
        let rec = evaluator.record(epoch, &model)?;
        if let (EarlyStop::ValLvar, Some(v)) = (config.early_stop, rec.val_lvar) {
            let best = history[best_epoch].val_lvar.unwrap_or(f64::INFINITY);
            if v < best {
                best_epoch = epoch;
                best_params = model.params().clone();
            }
        }
        history.push(rec);
    }

    if config.early_stop == EarlyStop::None {
        best_epoch = config.epochs;
    } else {
        *model.params_mut() = best_params;
    }
    let final_model = if spec.objective.is_baseline() { model } else { model.normalize(data)? };
    Ok(TrainReport {
        history,
        best_epoch,
        final_model,
        selected_lambda: None,
    })
}

#[derive(Debug, Clone)]
pub struct SweepCell {
    pub lambda: f64,
    pub val_lvar: Option<f64>,
    pub test_acc: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub best: TrainReport,
    pub best_index: usize,
    pub cells: Vec<SweepCell>,
}

impl SweepReport {
    /// `lambda,val_lvar,test_acc` with the selected row marked by `*`.
    pub fn table_csv(&self) -> String {
        let mut out = String::from("lambda,val_lvar,test_acc\n");
        for (i, c) in self.cells.iter().enumerate() {
            let mark = if i == self.best_index { "*" } else { "" };
            let v = c.val_lvar.map(|x| format!("{x:.10e}")).unwrap_or_default();
            let a = c.test_acc.map(|x| format!("{x:.6}")).unwrap_or_default();
            let _ = writeln!(out, "{}{mark},{v},{a}", c.lambda);
        }
        out
    }
}

/// Index of the smallest score; ties go to the smaller λ.
pub fn select_lambda(cells: &[(f64, f64)]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &(lambda, score)) in cells.iter().enumerate() {
        if !score.is_finite() {
            continue;
        }
        best = match best {
            None => Some(i),
            Some(b) => {
                let (bl, bs) = cells[b];
                if score < bs || (score == bs && lambda < bl) {
                    Some(i)
                } else {
                    Some(b)
                }
            }
        };
    }
    best
}

/// Trains one run per λ (seed `base.seed + index`) and keeps the one with the lowest validation L_var.
pub fn sweep_lambda(base: &TrainConfig, grid: &[f64], data: &PuDataset) -> Result<SweepReport> {
    if grid.is_empty() {
        return Err(Error::Config("lambda grid is empty".into()));
    }
    if data.validation().is_none() {
        return Err(Error::contract("a lambda sweep needs a validation split"));
    }
    let runs: Vec<Result<TrainReport>> = grid
        .par_iter()
        .enumerate()
        .map(|(i, &lambda)| {
            let mut cfg = base.clone();
            cfg.loss.lambda = lambda;
            cfg.seed = base.seed.wrapping_add(i as u64);
            train(&cfg, data)
        })
        .collect();

    let mut cells = Vec::with_capacity(grid.len());
    let mut scores = Vec::with_capacity(grid.len());
    let mut first_error = None;
    for (&lambda, run) in grid.iter().zip(&runs) {
        match run {
            Ok(r) => {
                let best = r.best();
                scores.push((lambda, best.val_lvar.unwrap_or(f64::INFINITY)));
                cells.push(SweepCell {
                    lambda,
                    val_lvar: best.val_lvar,
                    test_acc: best.test_acc,
                    error: None,
                });
            }
            Err(e) => {
                scores.push((lambda, f64::INFINITY));
                first_error.get_or_insert_with(|| e.to_string());
                cells.push(SweepCell {
                    lambda,
                    val_lvar: None,
                    test_acc: None,
                    error: Some(e.to_string()),
                });
            }
        }
    }
    let Some(best_index) = select_lambda(&scores) else {
        return Err(runs
            .into_iter()
            .find_map(Result::err)
            .unwrap_or_else(|| Error::Config("no sweep cell produced a finite validation loss".into())));
    };
    let mut best = runs
        .into_iter()
        .nth(best_index)
        .expect("index within grid")
        .expect("selected cell succeeded");
    best.selected_lambda = Some(grid[best_index]);
    Ok(SweepReport {
        best,
        best_index,
        cells,
    })
}
