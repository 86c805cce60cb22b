//! Command-line front end: flat `key = value` configuration, one flag per
//! key, and the six subcommands.
//!
//! Exit codes: 0 success, 1 failed property or runtime error, 2 usage or
//! configuration error, 3 numeric failure during training.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Arg, ArgMatches, Command};
use rayon::prelude::*;

use crate::data::{self, bias_counts, inject_selection_bias, GaussianComponent, GaussianMixtureSpec, Label, PuDataset};
use crate::error::{Error, Result};
use crate::eval::MetricsReport;
use crate::losses::{LossSpec, Objective, RegVariant};
use crate::model::ClassifierModel;
use crate::oracle::{self, bias_bound, Fault, SuiteConfig};
use crate::sampling::{streams, RngState};
use crate::trainer::{self, EarlyStop, TrainConfig, TrainReport};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

pub const DEFAULT_MIXTURE: &str = "+1:0.5:2,0:1,1;-1:0.5:-2,0:1,1";

/// Three positive and three negative unit Gaussians alternating on a circle of radius 4.
pub const DEFAULT_BIAS_MIXTURE: &str = "+1:0.1:4,0:1,1;\
-1:0.2333333333333333:2,3.464101615137754:1,1;\
+1:0.1:-2,3.464101615137754:1,1;\
-1:0.2333333333333333:-4,0:1,1;\
+1:0.1:-2,-3.464101615137754:1,1;\
-1:0.2333333333333334:2,-3.464101615137754:1,1";

/// `(key, default, help)`; an empty default means unset.
const KEYS: &[(&str, &str, &str)] = &[
    ("seed", "0", "random seed"),
    ("out", "", "output directory"),
    ("data", "", "dataset CSV (synthetic data is generated when unset)"),
    ("model", "", "model file to evaluate"),
    ("mixture", DEFAULT_MIXTURE, "Gaussian mixture: label:weight:mean:variance;..."),
    ("m", "500", "labeled positives to generate"),
    ("n", "2000", "unlabeled points to generate"),
    ("n_test", "2000", "labeled test points to generate"),
    ("val_fraction", "0.16666666666666666", "fraction of P and U held out for validation"),
    ("objective", "vpu", "vpu | vpu_l2 | upu | nnpu"),
    ("reg_variant", "msle_mixup_pu", "msle_mixup_pu | none | msle_mixup_p_only | msle_mixup_pupu | mse_mixup_pu | large_margin"),
    ("lambda", "0.03", "regularizer weight"),
    ("alpha", "0.3", "Beta(alpha, alpha) shape, or the large-margin constant"),
    ("pi_p", "", "class prior for upu/nnpu (defaults to the dataset's)"),
    ("hidden_widths", "64,64", "hidden layer widths"),
    ("activation", "relu", "relu | tanh"),
    ("batch_size", "500", "mini-batch size"),
    ("epochs", "50", "training epochs"),
    ("learning_rate", "0.0003", "Adam step size"),
    ("adam_beta1", "0.5", "Adam first-moment decay"),
    ("adam_beta2", "0.99", "Adam second-moment decay"),
    ("adam_epsilon", "1e-8", "Adam denominator offset"),
    ("early_stop", "val_lvar", "val_lvar | none"),
    ("target_stop_gradient", "true", "treat MixUp targets as constants"),
    ("per_sample_gamma", "false", "draw one MixUp weight per pair"),
    ("log_floor", "1e-12", "lower clamp inside log"),
    ("lambda_grid", "0.0001,0.0003,0.001,0.003,0.01,0.03,0.1,0.3,1,3", "lambda values to sweep"),
    ("trials", "1000", "oracle trials per property"),
    ("inject_fault", "none", "none | drop_optimal_lvar"),
    ("ratios", "1,2,3,4,5,6,7,8,9,10", "selection-bias ratios n1/n4"),
    ("bias_total", "3000", "labeled positives in the bias experiment"),
    ("bias_unlabeled", "3000", "unlabeled points in the bias experiment"),
    ("bias_mixture", DEFAULT_BIAS_MIXTURE, "mixture for the bias experiment"),
];

const PATH_KEYS: [&str; 3] = ["out", "data", "model"];

/// Effective configuration: defaults, then the config file, then flags.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

fn absolute(base: &Path, value: &str) -> String {
    if value.is_empty() {
        return String::new();
    }
    let p = Path::new(value);
    let joined = if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
    joined.to_string_lossy().into_owned()
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            values: KEYS.iter().map(|(k, v, _)| (k.to_string(), v.to_string())).collect(),
        }
    }
}

impl RunConfig {
    /// Applies a `key = value` file; relative paths resolve against the file's directory.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let base = if base.as_os_str().is_empty() { cwd()? } else { absolute_dir(&base)? };
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("{}:{}: expected `key = value`", path.display(), i + 1))
            })?;
            self.set(k.trim(), v.trim(), &base)
                .map_err(|e| Error::Config(format!("{}:{}: {e}", path.display(), i + 1)))?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str, base: &Path) -> Result<()> {
        let Some(slot) = self.values.get_mut(key) else {
            return Err(Error::Config(format!("unknown key `{key}`")));
        };
        *slot = if PATH_KEYS.contains(&key) { absolute(base, value) } else { value.to_string() };
        Ok(())
    }

    pub fn get(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).expect("key is declared")
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self.get(key);
        v.parse()
            .map_err(|_| Error::Config(format!("invalid value `{v}` for `{key}`")))
    }

    fn list<T: std::str::FromStr>(&self, key: &str) -> Result<Vec<T>> {
        self.get(key)
            .split(',')
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("invalid entry `{s}` in `{key}`")))
            })
            .collect()
    }

    fn path(&self, key: &str) -> Option<PathBuf> {
        Some(self.get(key)).filter(|v| !v.is_empty()).map(PathBuf::from)
    }

    fn required_path(&self, key: &str) -> Result<PathBuf> {
        self.path(key).ok_or_else(|| Error::Config(format!("missing required `--{key}`")))
    }

    pub fn seed(&self) -> Result<u64> {
        self.parse("seed")
    }

    /// Every key, one `key = value` line each, sorted.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.values {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn train_config(&self, data_pi: Option<f64>) -> Result<TrainConfig> {
        let objective: Objective = self.get("objective").parse()?;
        let explicit_pi: Option<f64> = match self.get("pi_p") {
            "" => None,
            _ => Some(self.parse("pi_p")?),
        };
        let pi_p = if objective.is_baseline() {
            Some(explicit_pi.or(data_pi).ok_or_else(|| {
                Error::Config(format!("objective {objective} needs `pi_p` (not in config or data)"))
            })?)
        } else if explicit_pi.is_some() {
            return Err(Error::Config(format!("`pi_p` is not used by objective {objective}")));
        } else {
            None
        };
        let early_stop = match self.get("early_stop") {
            "val_lvar" => EarlyStop::ValLvar,
            "none" => EarlyStop::None,
            other => return Err(Error::Config(format!("unknown early_stop `{other}`"))),
        };
        let cfg = TrainConfig {
            loss: LossSpec {
                objective,
                reg_variant: self.get("reg_variant").parse()?,
                lambda: self.parse("lambda")?,
                alpha: self.parse("alpha")?,
                pi_p,
            },
            hidden_widths: self.list("hidden_widths")?,
            activation: self.get("activation").parse()?,
            batch_size: self.parse("batch_size")?,
            epochs: self.parse("epochs")?,
            learning_rate: self.parse("learning_rate")?,
            adam_beta1: self.parse("adam_beta1")?,
            adam_beta2: self.parse("adam_beta2")?,
            adam_epsilon: self.parse("adam_epsilon")?,
            seed: self.seed()?,
            early_stop,
            target_stop_gradient: self.parse("target_stop_gradient")?,
            per_sample_gamma: self.parse("per_sample_gamma")?,
            log_floor: self.parse("log_floor")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn cwd() -> Result<PathBuf> {
    std::env::current_dir().map_err(|e| Error::io(".", e))
}

fn absolute_dir(p: &Path) -> Result<PathBuf> {
    Ok(if p.is_absolute() { p.to_path_buf() } else { cwd()?.join(p) })
}

/// `label:weight:mean,..:variance,..` components separated by `;`.
pub fn parse_mixture(s: &str) -> Result<GaussianMixtureSpec> {
    let bad = |c: &str, why: &str| Error::Config(format!("mixture component `{c}`: {why}"));
    let mut comps = Vec::new();
    for c in s.split(';').map(str::trim).filter(|c| !c.is_empty()) {
        let parts: Vec<&str> = c.split(':').collect();
        if parts.len() != 4 {
            return Err(bad(c, "expected label:weight:mean:variance"));
        }
        let label = match parts[0] {
            "+1" | "1" => Label::Positive,
            "-1" => Label::Negative,
            _ => return Err(bad(c, "label must be +1 or -1")),
        };
        let nums = |p: &str| -> Result<Vec<f64>> {
            p.split(',')
                .map(|v| v.trim().parse::<f64>().map_err(|_| bad(c, "non-numeric entry")))
                .collect()
        };
        comps.push(GaussianComponent {
            label,
            weight: parts[1].parse().map_err(|_| bad(c, "bad weight"))?,
            mean: nums(parts[2])?,
            variance: nums(parts[3])?,
        });
    }
    GaussianMixtureSpec::new(comps).map_err(|e| Error::Config(e.to_string()))
}

fn build_command() -> Command {
    let mut cmd = Command::new("vpu")
        .about("Positive-unlabeled learning with the variational objective")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .arg(
            Arg::new("config")
                .long("config")
                .value_name("PATH")
                .global(true)
                .help("key = value configuration file"),
        );
    for (key, default, help) in KEYS {
        let help = if default.is_empty() || default.len() > 40 {
            help.to_string()
        } else {
            format!("{help} [default: {default}]")
        };
        cmd = cmd.arg(Arg::new(*key).long(*key).value_name("VALUE").global(true).help(help));
    }
    cmd.subcommands([
        Command::new("generate").about("Write a synthetic PU dataset"),
        Command::new("train").about("Train one model"),
        Command::new("sweep").about("Train over a lambda grid and keep the best"),
        Command::new("eval").about("Score a saved model on a labeled test set"),
        Command::new("oracle-check").about("Run the exact finite-support property suites"),
        Command::new("bias-exp").about("Accuracy under growing selection bias"),
    ])
}

fn resolve(matches: &ArgMatches) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = matches.get_one::<String>("config") {
        cfg.apply_file(&absolute_dir(Path::new(path))?)?;
    }
    let here = cwd()?;
    for (key, _, _) in KEYS {
        if let Some(v) = matches.get_one::<String>(key) {
            cfg.set(key, v, &here)?;
        }
    }
    Ok(cfg)
}

/// Parses `args` (program name first), runs the subcommand and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match build_command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let (name, sub) = matches.subcommand().expect("subcommand is required");
    let outcome = resolve(sub).and_then(|cfg| match name {
        "generate" => cmd_generate(&cfg),
        "train" => cmd_train(&cfg),
        "sweep" => cmd_sweep(&cfg),
        "eval" => cmd_eval(&cfg),
        "oracle-check" => cmd_oracle_check(&cfg),
        "bias-exp" => cmd_bias_experiment(&cfg),
        other => unreachable!("unregistered subcommand {other}"),
    });
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    }
}

pub fn exit_code_for(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_USAGE,
        e if e.is_numeric() => EXIT_NUMERIC,
        _ => EXIT_FAILURE,
    }
}

fn prepare_out(cfg: &RunConfig) -> Result<PathBuf> {
    let out = cfg.required_path("out")?;
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    write_file(&out.join("config.resolved"), &cfg.render())?;
    Ok(out)
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn say(text: &str) {
    let mut stdout = std::io::stdout().lock();
    let _ = stdout.write_all(text.as_bytes());
    let _ = stdout.flush();
}

fn synthetic(cfg: &RunConfig) -> Result<PuDataset> {
    let spec = parse_mixture(cfg.get("mixture"))?;
    data::generate(&spec, cfg.parse("m")?, cfg.parse("n")?, cfg.parse("n_test")?, cfg.seed()?)
}

/// The configured dataset with a validation split when training needs one.
fn training_data(cfg: &RunConfig, train: &TrainConfig) -> Result<PuDataset> {
    let data = match cfg.path("data") {
        Some(p) => data::load_csv(&p)?,
        None => synthetic(cfg)?,
    };
    if data.validation().is_some() {
        return Ok(data);
    }
    let fraction: f64 = cfg.parse("val_fraction")?;
    if fraction > 0.0 {
        data.split_validation(fraction, cfg.seed()?)
    } else if train.early_stop == EarlyStop::ValLvar {
        Err(Error::Config("early_stop = val_lvar needs val_fraction > 0 or VP/VU rows".into()))
    } else {
        Ok(data)
    }
}

fn data_prior(cfg: &RunConfig) -> Result<Option<f64>> {
    match cfg.path("data") {
        Some(p) => Ok(data::load_csv(&p)?.pi_p()),
        None => Ok(Some(parse_mixture(cfg.get("mixture"))?.pi_p())),
    }
}

pub fn cmd_generate(cfg: &RunConfig) -> Result<i32> {
    let out = prepare_out(cfg)?;
    let data = synthetic(cfg)?;
    data::write_csv(&data, &out.join("data.csv"))?;
    say(&format!(
        "M={} N={} n_test={} pi_p={}\n",
        data.m(),
        data.n(),
        data.test().map_or(0, |t| t.len()),
        data.pi_p().unwrap_or(f64::NAN)
    ));
    Ok(EXIT_OK)
}

fn write_run(out: &Path, report: &TrainReport, data: &PuDataset) -> Result<()> {
    report.final_model.save(&out.join("model.txt"))?;
    write_file(&out.join("history.csv"), &report.history_csv())?;
    if let Some(test) = data.test() {
        let m = MetricsReport::compute(&report.final_model, test)?;
        write_file(&out.join("metrics.txt"), &m.to_key_values())?;
        write_file(
            &out.join("metrics.csv"),
            &format!("{}\n{}\n", MetricsReport::csv_header(), m.to_csv_row()),
        )?;
        say(&m.to_key_values());
    }
    say(&format!("best_epoch={}\n", report.best_epoch));
    Ok(())
}

pub fn cmd_train(cfg: &RunConfig) -> Result<i32> {
    let train = cfg.train_config(data_prior(cfg)?)?;
    let out = prepare_out(cfg)?;
    let data = training_data(cfg, &train)?;
    let report = trainer::train(&train, &data)?;
    write_run(&out, &report, &data)?;
    Ok(EXIT_OK)
}

pub fn cmd_sweep(cfg: &RunConfig) -> Result<i32> {
    let train = cfg.train_config(data_prior(cfg)?)?;
    let grid: Vec<f64> = cfg.list("lambda_grid")?;
    let out = prepare_out(cfg)?;
    let data = training_data(cfg, &train)?;
    let sweep = trainer::sweep_lambda(&train, &grid, &data)?;
    write_file(&out.join("sweep.csv"), &sweep.table_csv())?;
    say(&sweep.table_csv());
    write_run(&out, &sweep.best, &data)?;
    Ok(EXIT_OK)
}

pub fn cmd_eval(cfg: &RunConfig) -> Result<i32> {
    let model = ClassifierModel::load(&cfg.required_path("model")?)?;
    let data = data::load_csv(&cfg.required_path("data")?)?;
    let test = data
        .test()
        .ok_or_else(|| Error::Config("the dataset has no T rows to evaluate on".into()))?;
    let m = MetricsReport::compute(&model, test)?;
    if let Some(out) = cfg.path("out") {
        std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
        write_file(&out.join("config.resolved"), &cfg.render())?;
        write_file(&out.join("metrics.txt"), &m.to_key_values())?;
        write_file(
            &out.join("metrics.csv"),
            &format!("{}\n{}\n", MetricsReport::csv_header(), m.to_csv_row()),
        )?;
    }
    say(&m.to_key_values());
    Ok(EXIT_OK)
}

pub fn cmd_oracle_check(cfg: &RunConfig) -> Result<i32> {
    let fault = match cfg.get("inject_fault") {
        "none" => None,
        "drop_optimal_lvar" => Some(Fault::DropOptimalLvar),
        other => return Err(Error::Config(format!("unknown fault `{other}`"))),
    };
    let suite = SuiteConfig {
        trials: cfg.parse("trials")?,
        seed: cfg.seed()?,
        fault,
    };
    let reports = oracle::run_suite(&suite);
    let mut text = oracle::report_header();
    text.push('\n');
    for r in &reports {
        let _ = writeln!(text, "{r}");
    }
    for r in reports.iter().filter(|r| !r.ok()) {
        if let Some((seed, inst)) = &r.first_failure {
            let _ = writeln!(text, "counterexample {} seed={seed}: {inst}", r.name);
        }
    }
    say(&text);
    if let Some(out) = cfg.path("out") {
        std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
        write_file(&out.join("config.resolved"), &cfg.render())?;
        write_file(&out.join("oracle.txt"), &text)?;
    }
    Ok(if reports.iter().all(|r| r.ok()) { EXIT_OK } else { EXIT_FAILURE })
}

/// One ratio of the selection-bias experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasRow {
    pub ratio: f64,
    pub counts: [usize; 3],
    pub vpu_accuracy: f64,
    pub nnpu_accuracy: f64,
    pub c1: f64,
    pub c2: f64,
    pub epsilon: f64,
    pub bound: f64,
}

#[derive(Debug, Clone)]
pub struct BiasSetup {
    pub mixture: GaussianMixtureSpec,
    pub ratios: Vec<f64>,
    pub total: usize,
    pub unlabeled: usize,
    pub n_test: usize,
    pub val_fraction: f64,
    pub train: TrainConfig,
}

impl BiasRow {
    /// Accuracy lost relative to the unbiased run.
    pub fn vpu_drop(&self, baseline: &BiasRow) -> f64 {
        baseline.vpu_accuracy - self.vpu_accuracy
    }
}

/// Trains VPU and nnPU (true prior, no early stopping) on positives drawn `n₁ : n₄ : n₇` from three
/// positive subclasses, for each ratio `n₁ / n₄`.
pub fn bias_experiment(setup: &BiasSetup) -> Result<Vec<BiasRow>> {
    let spec = &setup.mixture;
    let subclasses = spec.positive_components();
    if subclasses.len() != 3 {
        return Err(Error::Config(format!(
            "the bias experiment needs exactly 3 positive components, found {}",
            subclasses.len()
        )));
    }
    let seed = setup.train.seed;
    let mut rng = RngState::with_stream(seed, streams::DATA);
    let pools: Vec<_> = subclasses
        .iter()
        .map(|&k| spec.sample_component(k, setup.total, &mut rng))
        .collect();
    let (unlabeled, _) = spec.sample_joint(setup.unlabeled, &mut rng);
    let (test_x, test_y) = spec.sample_joint(setup.n_test, &mut rng);
    let test = data::LabeledSet::new(test_x, test_y)?;

    // ε from the largest posterior seen on the unlabeled and test points
    let max_post = unlabeled
        .iter_rows()
        .chain(test.features().iter_rows())
        .map(|x| spec.posterior(x))
        .fold(0.0, f64::max);
    let epsilon = 1.0 - max_post;
    let pi = spec.pi_p();
    let shares: Vec<f64> = subclasses.iter().map(|&k| spec.components()[k].weight / pi).collect();

    let rows: Vec<Result<BiasRow>> = setup
        .ratios
        .par_iter()
        .map(|&ratio| {
            let counts = bias_counts(ratio, setup.total)?;
            let mut pick = RngState::with_stream(seed.wrapping_add(ratio.to_bits()), streams::SPLIT);
            let positive = inject_selection_bias(&pools, &counts, &mut pick)?;
            let data = PuDataset::new(positive, unlabeled.clone())?
                .with_pi_p(pi)?
                .with_test(test.clone())?
                .split_validation(setup.val_fraction, seed)?;
            let ratios: Vec<f64> = counts
                .iter()
                .zip(&shares)
                .map(|(&c, s)| c as f64 / setup.total as f64 / s)
                .collect();
            let c1 = ratios.iter().copied().fold(f64::INFINITY, f64::min);
            let c2 = ratios.iter().copied().fold(0.0, f64::max);

            let vpu = trainer::train(&setup.train, &data)?;
            let mut nn_cfg = setup.train.clone();
            nn_cfg.loss = LossSpec {
                objective: Objective::Nnpu,
                reg_variant: RegVariant::None,
                pi_p: Some(pi),
                ..setup.train.loss.clone()
            };
            // the non-negative clamp is nnPU's own guard; validation L_var is not its criterion
            nn_cfg.early_stop = EarlyStop::None;
            let nnpu = trainer::train(&nn_cfg, &data)?;
            Ok(BiasRow {
                ratio,
                counts,
                vpu_accuracy: crate::eval::accuracy(&vpu.final_model, &test)?,
                nnpu_accuracy: crate::eval::accuracy(&nnpu.final_model, &test)?,
                c1,
                c2,
                epsilon,
                bound: bias_bound(c1, c2, epsilon),
            })
        })
        .collect();
    rows.into_iter().collect()
}

pub fn bias_csv(rows: &[BiasRow]) -> String {
    let mut out = String::from("ratio,method,accuracy\n");
    for r in rows {
        let _ = writeln!(out, "{},vpu,{:.6}", r.ratio, r.vpu_accuracy);
        let _ = writeln!(out, "{},nnpu,{:.6}", r.ratio, r.nnpu_accuracy);
    }
    out
}

pub fn bias_bound_csv(rows: &[BiasRow]) -> String {
    let mut out = String::from("ratio,n1,n4,n7,c1,c2,epsilon,bound,vpu_drop\n");
    let Some(base) = rows.iter().find(|r| r.ratio == 1.0).or(rows.first()) else {
        return out;
    };
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{:.6},{:.6},{:.6e},{:.6},{:.6}",
            r.ratio,
            r.counts[0],
            r.counts[1],
            r.counts[2],
            r.c1,
            r.c2,
            r.epsilon,
            r.bound,
            r.vpu_drop(base)
        );
    }
    out
}

pub fn cmd_bias_experiment(cfg: &RunConfig) -> Result<i32> {
    let mixture = parse_mixture(cfg.get("bias_mixture"))?;
    let mut train = cfg.train_config(None)?;
    if train.loss.objective != Objective::Vpu {
        return Err(Error::Config("bias-exp trains objective vpu against nnpu".into()));
    }
    train.seed = cfg.seed()?;
    let setup = BiasSetup {
        mixture,
        ratios: cfg.list("ratios")?,
        total: cfg.parse("bias_total")?,
        unlabeled: cfg.parse("bias_unlabeled")?,
        n_test: cfg.parse("n_test")?,
        val_fraction: cfg.parse("val_fraction")?,
        train,
    };
    let out = prepare_out(cfg)?;
    let rows = bias_experiment(&setup)?;
    write_file(&out.join("bias.csv"), &bias_csv(&rows))?;
    write_file(&out.join("bias_bound.csv"), &bias_bound_csv(&rows))?;
    say(&bias_csv(&rows));
    Ok(EXIT_OK)
}
