//! PU datasets: synthetic Gaussian-mixture tasks, selection bias, CSV I/O and
//! validation splits.
//!
//! CSV layout: an optional `# pi_p = <value>` line, a header
//! `set,x0,...,x{d-1},y`, then one row per point. `set` is one of `P`, `U`,
//! `VP`, `VU`, `T`; `y` (`+1`/`-1`) is filled only for `T` rows.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::index;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::sampling::{streams, RngState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Positive,
    Negative,
}

impl Label {
    pub fn sign(self) -> i8 {
        match self {
            Label::Positive => 1,
            Label::Negative => -1,
        }
    }

    pub fn from_sign(s: i8) -> Label {
        if s > 0 {
            Label::Positive
        } else {
            Label::Negative
        }
    }

    fn parse(s: &str) -> Option<Label> {
        match s {
            "+1" | "1" => Some(Label::Positive),
            "-1" => Some(Label::Negative),
            _ => None,
        }
    }
}

/// Points with their true labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    features: Matrix,
    labels: Vec<Label>,
}

impl LabeledSet {
    pub fn new(features: Matrix, labels: Vec<Label>) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::contract(format!(
                "{} points but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        Ok(LabeledSet { features, labels })
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PuDataset {
    positive: Matrix,
    unlabeled: Matrix,
    val_positive: Option<Matrix>,
    val_unlabeled: Option<Matrix>,
    test: Option<LabeledSet>,
    pi_p: Option<f64>,
}

impl PuDataset {
    pub fn new(positive: Matrix, unlabeled: Matrix) -> Result<Self> {
        if positive.rows() == 0 {
            return Err(Error::contract("positive set empty"));
        }
        if unlabeled.rows() == 0 {
            return Err(Error::contract("unlabeled set empty"));
        }
        if positive.cols() != unlabeled.cols() {
            return Err(Error::contract(format!(
                "positive points have dimension {}, unlabeled {}",
                positive.cols(),
                unlabeled.cols()
            )));
        }
        Ok(PuDataset {
            positive,
            unlabeled,
            val_positive: None,
            val_unlabeled: None,
            test: None,
            pi_p: None,
        })
    }

    fn check_dim(&self, m: &Matrix, what: &str) -> Result<()> {
        if m.rows() > 0 && m.cols() != self.dim() {
            return Err(Error::contract(format!(
                "{what} points have dimension {}, expected {}",
                m.cols(),
                self.dim()
            )));
        }
        Ok(())
    }

    pub fn with_validation(mut self, positive: Matrix, unlabeled: Matrix) -> Result<Self> {
        self.check_dim(&positive, "validation positive")?;
        self.check_dim(&unlabeled, "validation unlabeled")?;
        if positive.rows() == 0 || unlabeled.rows() == 0 {
            return Err(Error::contract("validation sets must be nonempty"));
        }
        self.val_positive = Some(positive);
        self.val_unlabeled = Some(unlabeled);
        Ok(self)
    }

    pub fn with_test(mut self, test: LabeledSet) -> Result<Self> {
        self.check_dim(test.features(), "test")?;
        self.test = Some(test);
        Ok(self)
    }

    pub fn with_pi_p(mut self, pi_p: f64) -> Result<Self> {
        if !(pi_p > 0.0 && pi_p < 1.0) {
            return Err(Error::contract(format!("class prior {pi_p} outside (0, 1)")));
        }
        self.pi_p = Some(pi_p);
        Ok(self)
    }

    pub fn without_test(mut self) -> Self {
        self.test = None;
        self
    }

    pub fn positive(&self) -> &Matrix {
        &self.positive
    }

    pub fn unlabeled(&self) -> &Matrix {
        &self.unlabeled
    }

    /// `(val_positive, val_unlabeled)` when a split exists.
    pub fn validation(&self) -> Option<(&Matrix, &Matrix)> {
        self.val_positive.as_ref().zip(self.val_unlabeled.as_ref())
    }

    pub fn test(&self) -> Option<&LabeledSet> {
        self.test.as_ref()
    }

    pub fn pi_p(&self) -> Option<f64> {
        self.pi_p
    }

    pub fn dim(&self) -> usize {
        self.positive.cols()
    }

    pub fn m(&self) -> usize {
        self.positive.rows()
    }

    pub fn n(&self) -> usize {
        self.unlabeled.rows()
    }

    /// Moves `fraction` of the positives and of the unlabeled points into validation sets.
    pub fn split_validation(&self, fraction: f64, seed: u64) -> Result<PuDataset> {
        if !(fraction > 0.0 && fraction < 1.0) {
            return Err(Error::contract(format!("validation fraction {fraction} outside (0, 1)")));
        }
        let mut rng = RngState::with_stream(seed, streams::SPLIT);
        let (p_train, p_val) = split_rows(&self.positive, fraction, &mut rng)?;
        let (u_train, u_val) = split_rows(&self.unlabeled, fraction, &mut rng)?;
        let mut out = PuDataset::new(p_train, u_train)?.with_validation(p_val, u_val)?;
        out.test = self.test.clone();
        out.pi_p = self.pi_p;
        Ok(out)
    }
}

fn split_rows(m: &Matrix, fraction: f64, rng: &mut RngState) -> Result<(Matrix, Matrix)> {
    let n = m.rows();
    let n_val = (n as f64 * fraction).round() as usize;
    if n_val == 0 || n_val == n {
        return Err(Error::contract(format!(
            "validation fraction {fraction} of {n} points leaves one side empty"
        )));
    }
    let mut val = index::sample(rng, n, n).into_vec();
    let mut train = val.split_off(n_val);
    val.sort_unstable();
    train.sort_unstable();
    Ok((m.select_rows(&train), m.select_rows(&val)))
}

/// One Gaussian with diagonal covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianComponent {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub label: Label,
    pub weight: f64,
}

impl GaussianComponent {
    pub fn density(&self, x: &[f64]) -> f64 {
        let mut log_d = 0.0;
        for ((xi, mu), var) in x.iter().zip(&self.mean).zip(&self.variance) {
            log_d += -0.5 * (xi - mu).powi(2) / var - 0.5 * (2.0 * std::f64::consts::PI * var).ln();
        }
        log_d.exp()
    }

    fn sample(&self, rng: &mut RngState) -> Vec<f64> {
        self.mean
            .iter()
            .zip(&self.variance)
            .map(|(mu, var)| mu + var.sqrt() * rng.standard_normal())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixtureSpec {
    components: Vec<GaussianComponent>,
}

impl GaussianMixtureSpec {
    pub fn new(components: Vec<GaussianComponent>) -> Result<Self> {
        let Some(first) = components.first() else {
            return Err(Error::contract("mixture has no components"));
        };
        let d = first.mean.len();
        if d == 0 {
            return Err(Error::contract("mixture components need a dimension"));
        }
        for (k, c) in components.iter().enumerate() {
            if c.mean.len() != d || c.variance.len() != d {
                return Err(Error::contract(format!("component {k} has the wrong dimension")));
            }
            if !(c.weight > 0.0) {
                return Err(Error::contract(format!("component {k} weight must be positive")));
            }
            if c.variance.iter().any(|v| !(*v > 0.0)) {
                return Err(Error::contract(format!("component {k} variance must be positive")));
            }
            if c.mean.iter().any(|v| !v.is_finite()) {
                return Err(Error::contract(format!("component {k} mean is not finite")));
            }
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::contract(format!("mixture weights sum to {total}, not 1")));
        }
        let has = |l: Label| components.iter().any(|c| c.label == l);
        if !has(Label::Positive) || !has(Label::Negative) {
            return Err(Error::contract("mixture needs both a positive and a negative component"));
        }
        Ok(GaussianMixtureSpec { components })
    }

    /// Two isotropic unit-variance Gaussians at `±(shift, 0, ...)`.
    pub fn two_gaussians(shift: f64, dim: usize, pi_p: f64) -> Result<Self> {
        let mut pos = vec![0.0; dim];
        let mut neg = vec![0.0; dim];
        if dim > 0 {
            pos[0] = shift;
            neg[0] = -shift;
        }
        GaussianMixtureSpec::new(vec![
            GaussianComponent {
                mean: pos,
                variance: vec![1.0; dim],
                label: Label::Positive,
                weight: pi_p,
            },
            GaussianComponent {
                mean: neg,
                variance: vec![1.0; dim],
                label: Label::Negative,
                weight: 1.0 - pi_p,
            },
        ])
    }

    pub fn components(&self) -> &[GaussianComponent] {
        &self.components
    }

    pub fn dim(&self) -> usize {
        self.components[0].mean.len()
    }

    pub fn pi_p(&self) -> f64 {
        self.class_weight(Label::Positive)
    }

    fn class_weight(&self, label: Label) -> f64 {
        self.components.iter().filter(|c| c.label == label).map(|c| c.weight).sum()
    }

    /// Indices of the positive components, in order.
    pub fn positive_components(&self) -> Vec<usize> {
        (0..self.components.len())
            .filter(|&k| self.components[k].label == Label::Positive)
            .collect()
    }

    /// Class-conditional density `f_P` or `f_N`.
    pub fn class_density(&self, label: Label, x: &[f64]) -> f64 {
        let w = self.class_weight(label);
        self.components
            .iter()
            .filter(|c| c.label == label)
            .map(|c| c.weight / w * c.density(x))
            .sum()
    }

    /// Posterior `P(y = +1 | x)`.
    pub fn posterior(&self, x: &[f64]) -> f64 {
        let pos: f64 = self
            .components
            .iter()
            .filter(|c| c.label == Label::Positive)
            .map(|c| c.weight * c.density(x))
            .sum();
        let all: f64 = self.components.iter().map(|c| c.weight * c.density(x)).sum();
        if all > 0.0 {
            pos / all
        } else {
            0.0
        }
    }

    fn pick(&self, candidates: &[usize], rng: &mut RngState) -> usize {
        let total: f64 = candidates.iter().map(|&k| self.components[k].weight).sum();
        let mut u = rng.uniform() * total;
        for &k in candidates {
            u -= self.components[k].weight;
            if u < 0.0 {
                return k;
            }
        }
        *candidates.last().expect("nonempty candidates")
    }

    /// `n` draws from component `k` alone.
    pub fn sample_component(&self, k: usize, n: usize, rng: &mut RngState) -> Matrix {
        let rows: Vec<Vec<f64>> = (0..n).map(|_| self.components[k].sample(rng)).collect();
        to_matrix(rows, self.dim())
    }

    /// `n` labeled draws from the joint distribution.
    pub fn sample_joint(&self, n: usize, rng: &mut RngState) -> (Matrix, Vec<Label>) {
        let all: Vec<usize> = (0..self.components.len()).collect();
        let mut rows = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let k = self.pick(&all, rng);
            rows.push(self.components[k].sample(rng));
            labels.push(self.components[k].label);
        }
        (to_matrix(rows, self.dim()), labels)
    }

    /// `n` draws from the positive class conditional.
    pub fn sample_positive(&self, n: usize, rng: &mut RngState) -> Matrix {
        let pos = self.positive_components();
        let rows = (0..n)
            .map(|_| {
                let k = self.pick(&pos, rng);
                self.components[k].sample(rng)
            })
            .collect();
        to_matrix(rows, self.dim())
    }
}

fn to_matrix(rows: Vec<Vec<f64>>, dim: usize) -> Matrix {
    if rows.is_empty() {
        return Matrix::zeros(0, dim);
    }
    Matrix::from_rows(&rows).expect("rows share the mixture dimension")
}

/// Draws `M` labeled positives, `N` unlabeled points and `n_test` labeled test points.
pub fn generate(spec: &GaussianMixtureSpec, m: usize, n: usize, n_test: usize, seed: u64) -> Result<PuDataset> {
    let mut rng = RngState::with_stream(seed, streams::DATA);
    let positive = spec.sample_positive(m, &mut rng);
    let (unlabeled, _) = spec.sample_joint(n, &mut rng);
    let mut data = PuDataset::new(positive, unlabeled)?.with_pi_p(spec.pi_p())?;
    if n_test > 0 {
        let (x, y) = spec.sample_joint(n_test, &mut rng);
        data = data.with_test(LabeledSet::new(x, y)?)?;
    }
    Ok(data)
}

/// Labeled positives drawn `counts[i]` at a time from `pools[i]`, without replacement.
pub fn inject_selection_bias(pools: &[Matrix], counts: &[usize], rng: &mut RngState) -> Result<Matrix> {
    if pools.len() != counts.len() {
        return Err(Error::contract(format!("{} pools but {} counts", pools.len(), counts.len())));
    }
    let mut out: Option<Matrix> = None;
    for (i, (pool, &count)) in pools.iter().zip(counts).enumerate() {
        if count > pool.rows() {
            return Err(Error::contract(format!(
                "subclass {i}: count {count} exceeds pool of {}",
                pool.rows()
            )));
        }
        let picked = pool.select_rows(&index::sample(rng, pool.rows(), count).into_vec());
        out = Some(match out {
            None => picked,
            Some(acc) => acc.vstack(&picked)?,
        });
    }
    out.filter(|m| m.rows() > 0)
        .ok_or_else(|| Error::contract("selection produced no positives"))
}

/// `(n₁, n₄, n₇)` with `n₁ / n₄ ≈ ratio`, `n₄ = n₇` and a fixed total.
pub fn bias_counts(ratio: f64, total: usize) -> Result<[usize; 3]> {
    if !(ratio >= 1.0 && ratio.is_finite()) {
        return Err(Error::contract(format!("bias ratio {ratio} must be >= 1")));
    }
    let minor = (total as f64 / (ratio + 2.0)).round() as usize;
    let major = total - 2 * minor;
    Ok([major, minor, minor])
}

fn fmt_row(out: &mut String, tag: &str, row: &[f64], label: Option<Label>) {
    out.push_str(tag);
    for v in row {
        let _ = write!(out, ",{v:.16e}");
    }
    match label {
        Some(Label::Positive) => out.push_str(",+1\n"),
        Some(Label::Negative) => out.push_str(",-1\n"),
        None => out.push_str(",\n"),
    }
}

pub fn to_csv(data: &PuDataset) -> String {
    let mut out = String::new();
    if let Some(pi) = data.pi_p {
        let _ = writeln!(out, "# pi_p = {pi:.16e}");
    }
    out.push_str("set");
    for j in 0..data.dim() {
        let _ = write!(out, ",x{j}");
    }
    out.push_str(",y\n");
    let mut emit = |tag: &str, m: &Matrix| {
        for r in m.iter_rows() {
            fmt_row(&mut out, tag, r, None);
        }
    };
    emit("P", &data.positive);
    emit("U", &data.unlabeled);
    if let Some((vp, vu)) = data.validation() {
        emit("VP", vp);
        emit("VU", vu);
    }
    if let Some(t) = &data.test {
        for (r, &y) in t.features.iter_rows().zip(&t.labels) {
            fmt_row(&mut out, "T", r, Some(y));
        }
    }
    out
}

pub fn write_csv(data: &PuDataset, path: &Path) -> Result<()> {
    std::fs::write(path, to_csv(data)).map_err(|e| Error::io(path, e))
}

pub fn load_csv(path: &Path) -> Result<PuDataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&text, path)
}

pub fn parse_csv(text: &str, path: &Path) -> Result<PuDataset> {
    let err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut pi_p = None;
    let mut dim = None;
    let mut has_y = false;
    let mut sets: [Vec<Vec<f64>>; 5] = Default::default();
    let mut labels = Vec::new();

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some((key, value)) = comment.split_once('=') {
                if key.trim() == "pi_p" {
                    let v: f64 = value
                        .trim()
                        .parse()
                        .map_err(|_| err(line_no, format!("bad pi_p `{}`", value.trim())))?;
                    pi_p = Some(v);
                }
            }
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let Some(d) = dim else {
            if fields.first() != Some(&"set") {
                return Err(err(line_no, "header must start with `set`".into()));
            }
            has_y = fields.last() == Some(&"y");
            let d = fields.len() - 1 - usize::from(has_y);
            for (j, name) in fields[1..=d].iter().enumerate() {
                if *name != format!("x{j}") {
                    return Err(err(line_no, format!("expected column x{j}, found `{name}`")));
                }
            }
            if d == 0 {
                return Err(err(line_no, "no feature columns".into()));
            }
            dim = Some(d);
            continue;
        };
        let expected = 1 + d + usize::from(has_y);
        if fields.len() != expected {
            return Err(err(
                line_no,
                format!("expected {expected} fields, found {}", fields.len()),
            ));
        }
        let slot = match fields[0] {
            "P" => 0,
            "U" => 1,
            "VP" => 2,
            "VU" => 3,
            "T" => 4,
            other => return Err(err(line_no, format!("unknown set `{other}`"))),
        };
        let row = fields[1..=d]
            .iter()
            .map(|s| s.parse::<f64>().ok().filter(|v| v.is_finite()))
            .collect::<Option<Vec<f64>>>()
            .ok_or_else(|| err(line_no, "non-numeric feature".into()))?;
        let y = if has_y { fields[d + 1] } else { "" };
        if slot == 4 {
            let label = Label::parse(y).ok_or_else(|| err(line_no, format!("test row needs label +1/-1, got `{y}`")))?;
            labels.push(label);
        } else if !y.is_empty() {
            return Err(err(line_no, "only T rows carry a label".into()));
        }
        sets[slot].push(row);
    }

    let d = dim.ok_or_else(|| err(1, "missing header".into()))?;
    let [p, u, vp, vu, t] = sets;
    if p.is_empty() {
        return Err(err(0, "positive set empty".into()));
    }
    if u.is_empty() {
        return Err(err(0, "unlabeled set empty".into()));
    }
    let mut data = PuDataset::new(to_matrix(p, d), to_matrix(u, d))?;
    match (vp.is_empty(), vu.is_empty()) {
        (true, true) => {}
        (false, false) => data = data.with_validation(to_matrix(vp, d), to_matrix(vu, d))?,
        _ => return Err(err(0, "validation needs both VP and VU rows".into())),
    }
    if !t.is_empty() {
        data = data.with_test(LabeledSet::new(to_matrix(t, d), labels)?)?;
    }
    if let Some(pi) = pi_p {
        data = data.with_pi_p(pi).map_err(|e| err(1, e.to_string()))?;
    }
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> &'static Path {
        Path::new("t.csv")
    }

    #[test]
    fn parse_minimal_csv() {
        let d = parse_csv("set,x0,x1\nP,1.0,2.0\nU,0.0,0.0\n", p()).unwrap();
        assert_eq!((d.m(), d.n(), d.dim()), (1, 1, 2));
        assert!(d.test().is_none());
    }

    #[test]
    fn parse_test_labels() {
        let d = parse_csv("set,x0,y\nP,1,\nU,0,\nT,2,+1\nT,-2,-1\n", p()).unwrap();
        let t = d.test().unwrap();
        assert_eq!(t.labels(), &[Label::Positive, Label::Negative]);
    }

    #[test]
    fn parse_errors_name_the_line() {
        let e = parse_csv("set,x0\nP,1\nU,abc\n", p()).unwrap_err();
        assert!(matches!(e, Error::Parse { line: 3, .. }), "{e}");
        let e = parse_csv("set,x0,x1\nP,1\n", p()).unwrap_err();
        assert!(matches!(e, Error::Parse { line: 2, .. }));
        let e = parse_csv("set,x0\nU,1\n", p()).unwrap_err();
        assert!(e.to_string().contains("positive set empty"));
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let spec = GaussianMixtureSpec::two_gaussians(2.0, 2, 0.5).unwrap();
        let d = generate(&spec, 30, 50, 20, 4).unwrap().split_validation(0.2, 1).unwrap();
        let back = parse_csv(&to_csv(&d), p()).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn generated_prior_and_determinism() {
        let spec = GaussianMixtureSpec::two_gaussians(2.0, 2, 0.5).unwrap();
        let a = generate(&spec, 500, 2000, 2000, 9).unwrap();
        assert_eq!(a.pi_p(), Some(0.5));
        assert_eq!((a.m(), a.n(), a.test().unwrap().len()), (500, 2000, 2000));
        assert_eq!(a, generate(&spec, 500, 2000, 2000, 9).unwrap());
    }

    #[test]
    fn unlabeled_positive_fraction_concentrates() {
        let spec = GaussianMixtureSpec::two_gaussians(1.0, 1, 0.3).unwrap();
        let (_, labels) = spec.sample_joint(100_000, &mut RngState::new(17));
        let frac = labels.iter().filter(|&&l| l == Label::Positive).count() as f64 / 1e5;
        assert!((frac - 0.3).abs() < 0.01, "{frac}");
    }

    #[test]
    fn split_is_a_partition() {
        let spec = GaussianMixtureSpec::two_gaussians(2.0, 2, 0.5).unwrap();
        let d = generate(&spec, 600, 1200, 0, 2).unwrap();
        let s = d.split_validation(1.0 / 6.0, 3).unwrap();
        let (vp, vu) = s.validation().unwrap();
        assert_eq!((s.m(), vp.rows()), (500, 100));
        assert_eq!((s.n(), vu.rows()), (1000, 200));
        let mut all: Vec<Vec<f64>> = s.positive().to_rows();
        all.extend(vp.to_rows());
        let mut orig = d.positive().to_rows();
        let key = |a: &Vec<f64>, b: &Vec<f64>| a.partial_cmp(b).unwrap();
        all.sort_by(key);
        orig.sort_by(key);
        assert_eq!(all, orig);
        assert!(d.split_validation(0.0001, 3).is_err());
    }

    #[test]
    fn selection_bias_counts() {
        assert_eq!(bias_counts(1.0, 3000).unwrap(), [1000, 1000, 1000]);
        assert_eq!(bias_counts(4.0, 3000).unwrap(), [2000, 500, 500]);
        let mut rng = RngState::new(1);
        let pools: Vec<Matrix> = (0..3).map(|k| Matrix::filled(2500, 1, k as f64)).collect();
        let p = inject_selection_bias(&pools, &[2000, 500, 500], &mut rng).unwrap();
        let count = |k: f64| p.data().iter().filter(|&&v| v == k).count();
        assert_eq!((count(0.0), count(1.0), count(2.0)), (2000, 500, 500));
        assert!(inject_selection_bias(&pools, &[2600, 0, 0], &mut rng).is_err());
    }

    #[test]
    fn mixture_validation() {
        assert!(GaussianMixtureSpec::two_gaussians(1.0, 2, 1.0).is_err());
        let spec = GaussianMixtureSpec::two_gaussians(1.0, 2, 0.5).unwrap();
        assert!((spec.posterior(&[0.0, 3.0]) - 0.5).abs() < 1e-12);
    }
}
