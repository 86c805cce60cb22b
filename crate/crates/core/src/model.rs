//! The classifier: an MLP with a sigmoid head, its post-training normalization,
//! the label rule and a plain-text weight format.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;

use crate::autodiff::{sigmoid, Graph, Layout, ParameterVector, Var};
use crate::data::PuDataset;
use crate::error::{Error, Result};
use crate::matrix::{matmul, Matrix};
use crate::sampling::{streams, RngState};

const FORMAT_TAG: &str = "vpu-model";
const FORMAT_VERSION: &str = "v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        })
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::Config(format!("unknown activation `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpArchitecture {
    input_dim: usize,
    hidden_widths: Vec<usize>,
    activation: Activation,
}

impl MlpArchitecture {
    pub fn new(input_dim: usize, hidden_widths: Vec<usize>, activation: Activation) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::contract("input dimension must be positive"));
        }
        if hidden_widths.is_empty() {
            return Err(Error::contract("at least one hidden layer is required"));
        }
        if hidden_widths.contains(&0) {
            return Err(Error::contract("hidden widths must be positive"));
        }
        Ok(MlpArchitecture {
            input_dim,
            hidden_widths,
            activation,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_widths(&self) -> &[usize] {
        &self.hidden_widths
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    /// `(fan_in, fan_out)` of every affine layer, head last.
    fn shapes(&self) -> Vec<(usize, usize)> {
        let mut dims = vec![self.input_dim];
        dims.extend(&self.hidden_widths);
        dims.push(1);
        dims.windows(2).map(|w| (w[0], w[1])).collect()
    }

    /// Weights then bias for each hidden layer, then the head.
    pub fn layout(&self) -> Layout {
        let mut layout = Layout::new();
        let shapes = self.shapes();
        let last = shapes.len() - 1;
        for (i, &(fan_in, fan_out)) in shapes.iter().enumerate() {
            let name = if i == last { "head".to_string() } else { format!("layer{i}") };
            layout.push(format!("{name}.weight"), fan_in, fan_out);
            layout.push(format!("{name}.bias"), 1, fan_out);
        }
        layout
    }

    pub fn param_count(&self) -> usize {
        self.shapes().iter().map(|(i, o)| (i + 1) * o).sum()
    }

    /// Logits `n x 1` for the rows of `x`, recorded on `graph`.
    pub fn graph_logits(&self, graph: &mut Graph, params: Var, x: &Matrix) -> Var {
        assert_eq!(x.cols(), self.input_dim, "input dimension mismatch");
        let layout = self.layout();
        let segs = layout.segments();
        let mut h = graph.constant(x.clone());
        let layers = segs.len() / 2;
        for l in 0..layers {
            let w = graph.segment(params, &segs[2 * l]);
            let b = graph.segment(params, &segs[2 * l + 1]);
            let z = graph.matmul(h, w);
            h = graph.add_row(z, b);
            if l + 1 < layers {
                h = match self.activation {
                    Activation::Relu => graph.relu(h),
                    Activation::Tanh => graph.tanh(h),
                };
            }
        }
        h
    }

    /// Raw (un-normalized) Φ for the rows of `x`, recorded on `graph`.
    pub fn graph_proba(&self, graph: &mut Graph, params: Var, x: &Matrix) -> Var {
        let z = self.graph_logits(graph, params, x);
        graph.sigmoid(z)
    }

    fn logits(&self, params: &ParameterVector, x: &Matrix) -> Vec<f64> {
        let layout = params.layout();
        let segs = layout.segments();
        let layers = segs.len() / 2;
        let mut h = x.data().to_vec();
        let rows = x.rows();
        let mut width = x.cols();
        for l in 0..layers {
            let (ws, bs) = (&segs[2 * l], &segs[2 * l + 1]);
            let mut z = matmul(&h, params.segment_values(ws), rows, width, ws.cols);
            let bias = params.segment_values(bs);
            let last = l + 1 == layers;
            for row in z.chunks_exact_mut(ws.cols) {
                for (v, b) in row.iter_mut().zip(bias) {
                    *v += b;
                    if !last {
                        *v = self.activation.apply(*v);
                    }
                }
            }
            h = z;
            width = ws.cols;
        }
        h
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel {
    arch: MlpArchitecture,
    params: ParameterVector,
    normalization_scale: f64,
}

impl ClassifierModel {
    /// Glorot-uniform weights, zero biases, scale 1.
    pub fn init(arch: &MlpArchitecture, seed: u64) -> Self {
        let layout = arch.layout();
        let mut rng = RngState::with_stream(seed, streams::INIT);
        let mut values = vec![0.0; layout.len()];
        for seg in layout.segments().iter().filter(|s| s.name.ends_with(".weight")) {
            let limit = (6.0 / (seg.rows + seg.cols) as f64).sqrt();
            for v in &mut values[seg.range()] {
                *v = rng.random_range(-limit..=limit);
            }
        }
        ClassifierModel {
            arch: arch.clone(),
            params: ParameterVector::new(values, layout).expect("finite initial weights"),
            normalization_scale: 1.0,
        }
    }

    pub fn from_parts(arch: MlpArchitecture, params: ParameterVector, normalization_scale: f64) -> Result<Self> {
        if params.layout() != &arch.layout() {
            return Err(Error::contract("parameter layout does not match the architecture"));
        }
        check_scale(normalization_scale)?;
        Ok(ClassifierModel {
            arch,
            params,
            normalization_scale,
        })
    }

    pub fn arch(&self) -> &MlpArchitecture {
        &self.arch
    }

    pub fn params(&self) -> &ParameterVector {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterVector {
        &mut self.params
    }

    pub fn normalization_scale(&self) -> f64 {
        self.normalization_scale
    }

    pub fn with_normalization_scale(mut self, scale: f64) -> Result<Self> {
        check_scale(scale)?;
        self.normalization_scale = scale;
        Ok(self)
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.rows() > 0 && x.cols() != self.arch.input_dim {
            return Err(Error::contract(format!(
                "input has dimension {}, model expects {}",
                x.cols(),
                self.arch.input_dim
            )));
        }
        Ok(())
    }

    /// Real-valued scores `g(x)`; the baselines use these as margins.
    pub fn logits(&self, x: &Matrix) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.arch.logits(&self.params, x))
    }

    /// `sigmoid(g(x))` before normalization.
    pub fn raw_proba(&self, x: &Matrix) -> Result<Vec<f64>> {
        Ok(self.logits(x)?.into_iter().map(sigmoid).collect())
    }

    /// `min(raw / scale, 1)` for each row of `x`.
    pub fn predict_proba_batch(&self, x: &Matrix) -> Result<Vec<f64>> {
        let s = self.normalization_scale;
        Ok(self.raw_proba(x)?.into_iter().map(|p| (p / s).min(1.0)).collect())
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<f64> {
        let m = Matrix::new(1, x.len(), x.to_vec())?;
        if x.len() != self.arch.input_dim {
            return Err(Error::contract(format!(
                "input has dimension {}, model expects {}",
                x.len(),
                self.arch.input_dim
            )));
        }
        Ok(self.predict_proba_batch(&m)?[0])
    }

    /// Sets the scale to the largest raw output over the given point sets.
    pub fn normalized_on(&self, sets: &[&Matrix]) -> Result<Self> {
        let mut max = f64::NEG_INFINITY;
        for x in sets {
            for p in self.raw_proba(x)? {
                max = max.max(p);
            }
        }
        if max == f64::NEG_INFINITY {
            return Err(Error::contract("cannot normalize on an empty set"));
        }
        self.clone().with_normalization_scale(max)
    }

    /// Normalization over the training positives and unlabeled points.
    pub fn normalize(&self, data: &PuDataset) -> Result<Self> {
        self.normalized_on(&[data.positive(), data.unlabeled()])
    }

    pub fn to_text(&self) -> String {
        let widths: Vec<String> = self.arch.hidden_widths.iter().map(usize::to_string).collect();
        let mut out = format!(
            "{FORMAT_TAG} {FORMAT_VERSION} {} {} {} {:.16e}\n",
            self.arch.input_dim,
            widths.join(","),
            self.arch.activation,
            self.normalization_scale
        );
        for v in self.params.values() {
            out.push_str(&format!("{v:.16e}\n"));
        }
        out
    }

    pub fn from_text(text: &str, path: &Path) -> Result<Self> {
        let parse_err = |line: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| parse_err(1, "empty model file".into()))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 6 || fields[0] != FORMAT_TAG || fields[1] != FORMAT_VERSION {
            return Err(parse_err(1, format!("bad header `{header}`")));
        }
        let input_dim: usize = fields[2]
            .parse()
            .map_err(|_| parse_err(1, format!("bad input dimension `{}`", fields[2])))?;
        let widths = fields[3]
            .split(',')
            .map(|w| w.parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| parse_err(1, format!("bad hidden widths `{}`", fields[3])))?;
        let activation: Activation = fields[4].parse().map_err(|e: Error| parse_err(1, e.to_string()))?;
        let scale: f64 = fields[5]
            .parse()
            .map_err(|_| parse_err(1, format!("bad scale `{}`", fields[5])))?;
        let arch = MlpArchitecture::new(input_dim, widths, activation).map_err(|e| parse_err(1, e.to_string()))?;

        let mut values = Vec::with_capacity(arch.param_count());
        for (i, line) in lines.enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            values.push(
                line.parse::<f64>()
                    .map_err(|_| parse_err(i + 2, format!("bad weight `{line}`")))?,
            );
        }
        if values.len() != arch.param_count() {
            return Err(parse_err(
                1,
                format!("expected {} weights, found {}", arch.param_count(), values.len()),
            ));
        }
        let params = ParameterVector::new(values, arch.layout()).map_err(|e| parse_err(1, e.to_string()))?;
        ClassifierModel::from_parts(arch, params, scale).map_err(|e| parse_err(1, e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ClassifierModel::from_text(&text, path)
    }
}

fn check_scale(scale: f64) -> Result<()> {
    if scale > 0.0 && scale.is_finite() {
        Ok(())
    } else {
        Err(Error::contract(format!("normalization scale {scale} must be positive")))
    }
}

/// Class label in the `±1` convention.
pub fn predict_label(p: f64) -> i8 {
    if p >= 0.5 {
        1
    } else {
        -1
    }
}
