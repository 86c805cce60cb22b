//! Seeded randomness: the generator, Beta(α, α) draws, mini-batches and MixUp pairs.
//!
//! The generator is ChaCha8 (`rand_chacha`), seeded through
//! `SeedableRng::seed_from_u64`. ChaCha is counter based, so a seed plus a
//! stream id plus a word position fully identify the state, and the output
//! sequence is the same on every platform.

use rand::seq::index;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};
use crate::losses::{Batch, Origin, RegVariant};
use crate::matrix::Matrix;
use crate::model::ClassifierModel;

/// Stream ids used to separate independent uses of one seed.
pub mod streams {
    pub const INIT: u64 = 0;
    pub const TRAIN: u64 = 1;
    pub const DATA: u64 = 2;
    pub const SPLIT: u64 = 3;
    pub const VALIDATION: u64 = 4;
}

#[derive(Debug, Clone)]
pub struct RngState {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        RngState::with_stream(seed, 0)
    }

    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        RngState {
            seed,
            stream,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Number of 32-bit words consumed so far.
    pub fn position(&self) -> u128 {
        self.inner.get_word_pos()
    }

    /// Generator for trial `index` of a parallel experiment: seed `seed + index`.
    pub fn child(&self, index: u64) -> RngState {
        RngState::with_stream(self.seed.wrapping_add(index), self.stream)
    }

    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }
}

impl RngCore for RngState {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// One Gamma(shape, 1) draw (Marsaglia–Tsang, boosted for shape < 1).
pub fn sample_gamma(shape: f64, rng: &mut RngState) -> Result<f64> {
    let dist = Gamma::new(shape, 1.0)
        .map_err(|e| Error::contract(format!("gamma shape {shape}: {e}")))?;
    Ok(dist.sample(rng))
}

/// Beta(a, b) as `X / (X + Y)` with `X ~ Gamma(a)`, `Y ~ Gamma(b)`.
///
/// Draws that round to exactly 0 or 1 are rejected so the result is always
/// strictly inside the unit interval.
pub fn sample_beta_ab(a: f64, b: f64, rng: &mut RngState) -> Result<f64> {
    if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
        return Err(Error::contract(format!("beta shapes ({a}, {b}) must be > 0")));
    }
    let ga = Gamma::new(a, 1.0).map_err(|e| Error::contract(e.to_string()))?;
    let gb = Gamma::new(b, 1.0).map_err(|e| Error::contract(e.to_string()))?;
    loop {
        let x: f64 = ga.sample(rng);
        let y: f64 = gb.sample(rng);
        let s = x + y;
        if s > 0.0 {
            let v = x / s;
            if v > 0.0 && v < 1.0 {
                return Ok(v);
            }
        }
    }
}

pub fn sample_beta(alpha: f64, rng: &mut RngState) -> Result<f64> {
    sample_beta_ab(alpha, alpha, rng)
}

/// Row indices for a mini-batch of `size` from a pool of `pool_len`.
///
/// Without replacement when `size <= pool_len`, uniformly with replacement otherwise.
pub fn sample_indices(pool_len: usize, size: usize, rng: &mut RngState) -> Result<Vec<usize>> {
    if pool_len == 0 {
        return Err(Error::contract("cannot sample from an empty pool"));
    }
    if size == 0 {
        return Err(Error::contract("batch size must be at least 1"));
    }
    if size <= pool_len {
        Ok(index::sample(rng, pool_len, size).into_vec())
    } else {
        Ok((0..size).map(|_| rng.below(pool_len)).collect())
    }
}

pub fn sample_minibatch(pool: &Batch, size: usize, rng: &mut RngState) -> Result<Batch> {
    let idx = sample_indices(pool.len(), size, rng)?;
    Ok(Batch::new(pool.features().select_rows(&idx), pool.origin()))
}

/// Interpolation weights: one γ shared by the batch, or one per pair.
#[derive(Debug, Clone, PartialEq)]
pub enum MixWeight {
    PerBatch(f64),
    PerSample(Vec<f64>),
}

impl MixWeight {
    pub fn draw(alpha: f64, pairs: usize, per_sample: bool, rng: &mut RngState) -> Result<Self> {
        if per_sample {
            let g = (0..pairs)
                .map(|_| sample_beta(alpha, rng))
                .collect::<Result<Vec<_>>>()?;
            Ok(MixWeight::PerSample(g))
        } else {
            Ok(MixWeight::PerBatch(sample_beta(alpha, rng)?))
        }
    }

    fn expand(&self, n: usize) -> Result<Vec<f64>> {
        let g = match self {
            MixWeight::PerBatch(g) => vec![*g; n],
            MixWeight::PerSample(g) if g.len() == n => g.clone(),
            MixWeight::PerSample(g) => {
                return Err(Error::contract(format!(
                    "{} per-sample weights for {n} pairs",
                    g.len()
                )))
            }
        };
        if let Some(bad) = g.iter().find(|x| !(0.0..=1.0).contains(*x)) {
            return Err(Error::contract(format!("mix weight {bad} outside [0, 1]")));
        }
        Ok(g)
    }
}

/// Paired points `(x', x'')` with their origins and interpolation weights.
///
/// The mixed point is `γ x' + (1 - γ) x''` and the guessed probability is
/// `γ t' + (1 - γ) t''`, where `t = 1` for a labeled positive and `Φ(x)` for
/// an unlabeled point.
#[derive(Debug, Clone)]
pub struct MixupPairs {
    pub left: Matrix,
    pub right: Matrix,
    pub left_positive: Vec<bool>,
    pub right_positive: Vec<bool>,
    pub gamma: Vec<f64>,
}

impl MixupPairs {
    pub fn len(&self) -> usize {
        self.gamma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gamma.is_empty()
    }

    /// The interpolated inputs `x̃`.
    pub fn mixed(&self) -> Matrix {
        let d = self.left.cols();
        let mut out = Vec::with_capacity(self.len() * d);
        for (i, &g) in self.gamma.iter().enumerate() {
            for (a, b) in self.left.row(i).iter().zip(self.right.row(i)) {
                out.push(g * a + (1.0 - g) * b);
            }
        }
        Matrix::new(self.len(), d, out).expect("pair shapes checked at construction")
    }

    /// `γ t' + (1 - γ) t''` given model outputs for the left and right points.
    pub fn targets(&self, phi_left: &[f64], phi_right: &[f64]) -> Vec<f64> {
        (0..self.len())
            .map(|i| {
                let tl = if self.left_positive[i] { 1.0 } else { phi_left[i] };
                let tr = if self.right_positive[i] { 1.0 } else { phi_right[i] };
                self.gamma[i] * tl + (1.0 - self.gamma[i]) * tr
            })
            .collect()
    }

    fn build(
        left: Matrix,
        right: Matrix,
        left_positive: Vec<bool>,
        right_positive: Vec<bool>,
        weight: &MixWeight,
    ) -> Result<Self> {
        if left.rows() != right.rows() {
            return Err(Error::contract(format!(
                "mixup needs equal sizes, got {} and {}",
                left.rows(),
                right.rows()
            )));
        }
        if left.rows() > 0 && left.cols() != right.cols() {
            return Err(Error::contract("mixup points have different dimensions"));
        }
        let gamma = weight.expand(left.rows())?;
        Ok(MixupPairs {
            left,
            right,
            left_positive,
            right_positive,
            gamma,
        })
    }
}

/// Positional pairs `x'_i ∈ B^P`, `x''_i ∈ B^U`.
pub fn pair_positive_unlabeled(
    batch_p: &Batch,
    batch_u: &Batch,
    weight: &MixWeight,
) -> Result<MixupPairs> {
    check_origin(batch_p, Origin::Positive)?;
    check_origin(batch_u, Origin::Unlabeled)?;
    let n = batch_p.len();
    let m = batch_u.len();
    MixupPairs::build(
        batch_p.features().clone(),
        batch_u.features().clone(),
        vec![true; n],
        vec![false; m],
        weight,
    )
}

/// Pairs drawn inside the positive batch: `x'_i` positional, `x''_i` a random permutation.
pub fn pair_positive_only(
    batch_p: &Batch,
    weight: &MixWeight,
    rng: &mut RngState,
) -> Result<MixupPairs> {
    check_origin(batch_p, Origin::Positive)?;
    let n = batch_p.len();
    let perm = sample_indices(n, n, rng)?;
    MixupPairs::build(
        batch_p.features().clone(),
        batch_p.features().select_rows(&perm),
        vec![true; n],
        vec![true; n],
        weight,
    )
}

/// Both endpoints drawn without replacement from the pooled `B^P ∪ B^U`.
pub fn pair_pooled(
    batch_p: &Batch,
    batch_u: &Batch,
    pairs: usize,
    weight: &MixWeight,
    rng: &mut RngState,
) -> Result<MixupPairs> {
    check_origin(batch_p, Origin::Positive)?;
    check_origin(batch_u, Origin::Unlabeled)?;
    let pool = batch_p.features().vstack(batch_u.features())?;
    let positive: Vec<bool> = (0..pool.rows()).map(|i| i < batch_p.len()).collect();
    let li = sample_indices(pool.rows(), pairs, rng)?;
    let ri = sample_indices(pool.rows(), pairs, rng)?;
    MixupPairs::build(
        pool.select_rows(&li),
        pool.select_rows(&ri),
        li.iter().map(|&i| positive[i]).collect(),
        ri.iter().map(|&i| positive[i]).collect(),
        weight,
    )
}

/// Pair construction for a MixUp-based regularizer variant. `None` for variants without pairs.
pub fn pairs_for_variant(
    variant: RegVariant,
    batch_p: &Batch,
    batch_u: &Batch,
    weight: &MixWeight,
    rng: &mut RngState,
) -> Result<Option<MixupPairs>> {
    match variant {
        RegVariant::MsleMixupPu | RegVariant::MseMixupPu => {
            pair_positive_unlabeled(batch_p, batch_u, weight).map(Some)
        }
        RegVariant::MsleMixupPOnly => pair_positive_only(batch_p, weight, rng).map(Some),
        RegVariant::MsleMixupPuPu => {
            pair_pooled(batch_p, batch_u, batch_p.len(), weight, rng).map(Some)
        }
        RegVariant::None | RegVariant::LargeMargin => Ok(None),
    }
}

/// Concrete `(x̃_i, Φ̃_i)` for positive/unlabeled MixUp, with `Φ(x''_i)` taken
/// from the raw (un-normalized) model output.
pub fn build_mixup_pairs(
    batch_p: &Batch,
    batch_u: &Batch,
    gamma: f64,
    model: &ClassifierModel,
) -> Result<Vec<(Vec<f64>, f64)>> {
    let pairs = pair_positive_unlabeled(batch_p, batch_u, &MixWeight::PerBatch(gamma))?;
    let phi_right = model.raw_proba(&pairs.right)?;
    let targets = pairs.targets(&[], &phi_right);
    Ok(pairs.mixed().iter_rows().map(<[f64]>::to_vec).zip(targets).collect())
}

fn check_origin(batch: &Batch, expected: Origin) -> Result<()> {
    if batch.origin() != expected {
        return Err(Error::contract(format!(
            "expected a {expected:?} batch, got {:?}",
            batch.origin()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Activation, MlpArchitecture};

    fn batch(rows: &[[f64; 2]], origin: Origin) -> Batch {
        Batch::new(Matrix::from_rows(rows).unwrap(), origin)
    }

    #[test]
    fn same_seed_same_sequence() {
        let mut a = RngState::new(11);
        let mut b = RngState::new(11);
        let xa: Vec<u64> = (0..8).map(|_| a.next_u64()).collect();
        let xb: Vec<u64> = (0..8).map(|_| b.next_u64()).collect();
        assert_eq!(xa, xb);
        assert_eq!(a.position(), b.position());
        assert!(a.position() > 0);
        let mut c = RngState::with_stream(11, 1);
        assert_ne!(xa[0], c.next_u64());
    }

    #[test]
    fn beta_draws_are_strictly_interior() {
        let mut rng = RngState::new(3);
        for _ in 0..20_000 {
            let g = sample_beta(0.3, &mut rng).unwrap();
            assert!(g > 0.0 && g < 1.0);
        }
        assert!(sample_beta(0.0, &mut rng).is_err());
    }

    #[test]
    fn beta_moments() {
        let mut rng = RngState::new(2024);
        let n = 100_000;
        let draws: Vec<f64> = (0..n).map(|_| sample_beta(0.3, &mut rng).unwrap()).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 0.005, "mean {mean}");
        // αβ/((α+β)²(α+β+1)) at α=β=0.3
        assert!((var - 0.15625).abs() < 0.01, "var {var}");
    }

    #[test]
    fn full_size_batch_is_a_permutation() {
        let pool = batch(&[[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [3.0, 0.0]], Origin::Positive);
        let mut rng = RngState::new(5);
        let b = sample_minibatch(&pool, 4, &mut rng).unwrap();
        let mut firsts: Vec<f64> = b.features().iter_rows().map(|r| r[0]).collect();
        firsts.sort_by(f64::total_cmp);
        assert_eq!(firsts, vec![0.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn minibatch_edge_cases() {
        let single = batch(&[[7.0, 8.0]], Origin::Unlabeled);
        let mut rng = RngState::new(0);
        let b = sample_minibatch(&single, 1, &mut rng).unwrap();
        assert_eq!(b.features().row(0), &[7.0, 8.0]);
        // oversize request falls back to replacement
        let b = sample_minibatch(&single, 3, &mut rng).unwrap();
        assert_eq!(b.len(), 3);

        let empty = Batch::new(Matrix::zeros(0, 2), Origin::Unlabeled);
        assert!(sample_minibatch(&empty, 1, &mut rng).is_err());

        let pool = batch(&[[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]], Origin::Positive);
        let x = sample_minibatch(&pool, 2, &mut RngState::new(9)).unwrap();
        let y = sample_minibatch(&pool, 2, &mut RngState::new(9)).unwrap();
        assert_eq!(x.features(), y.features());
    }

    fn constant_model(logit_bias: f64) -> ClassifierModel {
        let arch = MlpArchitecture::new(2, vec![2], Activation::Relu).unwrap();
        let mut model = ClassifierModel::init(&arch, 0);
        let n = model.params().len();
        let vals = model.params_mut().values_mut();
        vals.iter_mut().for_each(|v| *v = 0.0);
        vals[n - 1] = logit_bias;
        model
    }

    #[test]
    fn mixup_endpoints_and_substitution() {
        let bp = batch(&[[1.0, 0.0]], Origin::Positive);
        let bu = batch(&[[0.0, 1.0]], Origin::Unlabeled);
        let model = constant_model(0.0); // Φ ≡ 0.5

        let p = build_mixup_pairs(&bp, &bu, 1.0, &model).unwrap();
        assert_eq!(p[0].0, vec![1.0, 0.0]);
        assert_eq!(p[0].1, 1.0);

        let p = build_mixup_pairs(&bp, &bu, 0.0, &model).unwrap();
        assert_eq!(p[0].0, vec![0.0, 1.0]);
        assert_eq!(p[0].1, 0.5);

        let p = build_mixup_pairs(&bp, &bu, 0.3, &model).unwrap();
        assert!((p[0].0[0] - 0.3).abs() < 1e-15 && (p[0].0[1] - 0.7).abs() < 1e-15);
        assert!((p[0].1 - 0.65).abs() < 1e-15);
    }

    #[test]
    fn mixup_size_mismatch_is_rejected() {
        let bp = batch(&[[1.0, 0.0], [2.0, 0.0]], Origin::Positive);
        let bu = batch(&[[0.0, 1.0]], Origin::Unlabeled);
        let model = constant_model(0.0);
        assert!(matches!(
            build_mixup_pairs(&bp, &bu, 0.5, &model),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn positive_only_targets_are_one() {
        let bp = batch(&[[1.0, 0.0], [2.0, 0.0], [3.0, 1.0]], Origin::Positive);
        let pairs = pair_positive_only(&bp, &MixWeight::PerBatch(0.4), &mut RngState::new(1)).unwrap();
        assert!(pairs.targets(&[0.1; 3], &[0.2; 3]).iter().all(|&t| t == 1.0));
    }

    #[test]
    fn pooled_pairs_track_origin() {
        let bp = batch(&[[1.0, 0.0], [2.0, 0.0]], Origin::Positive);
        let bu = batch(&[[-1.0, 0.0], [-2.0, 0.0]], Origin::Unlabeled);
        let pairs = pair_pooled(&bp, &bu, 2, &MixWeight::PerBatch(0.5), &mut RngState::new(4)).unwrap();
        for i in 0..2 {
            assert_eq!(pairs.left_positive[i], pairs.left.row(i)[0] > 0.0);
            assert_eq!(pairs.right_positive[i], pairs.right.row(i)[0] > 0.0);
        }
    }
}
