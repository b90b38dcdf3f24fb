//! Multinomial logistic regression trained by minibatch SGD, with a DP-SGD
//! variant (per-example clipping plus Gaussian noise).

use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::accountant::{account_pipeline, split_delta, DpGuarantee, Subsampling, DEFAULT_ORDERS};
use crate::error::{domain, Error, Result};
use crate::mechanisms::{argmax, MechanismSpec};
use crate::pipeline::LabeledDataset;
use crate::rng::RngStream;

/// Linear softmax classifier. `weights` is row-major `[num_classes × num_features]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxClassifier {
    weights: Vec<f64>,
    bias: Vec<f64>,
    num_classes: usize,
    num_features: usize,
}

impl SoftmaxClassifier {
    /// All-zero parameters; predicts the uniform posterior everywhere.
    pub fn zeros(num_classes: usize, num_features: usize) -> Self {
        Self {
            weights: vec![0.0; num_classes * num_features],
            bias: vec![0.0; num_classes],
            num_classes,
            num_features,
        }
    }

    pub fn from_parts(
        weights: Vec<f64>,
        bias: Vec<f64>,
        num_classes: usize,
        num_features: usize,
    ) -> Result<Self> {
        if num_classes == 0 || num_features == 0 {
            return Err(domain("classifier needs at least one class and one feature"));
        }
        if weights.len() != num_classes * num_features {
            return Err(Error::Dimension { expected: num_classes * num_features, got: weights.len() });
        }
        if bias.len() != num_classes {
            return Err(Error::Dimension { expected: num_classes, got: bias.len() });
        }
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(domain("classifier parameters must be finite"));
        }
        Ok(Self { weights, bias, num_classes, num_features })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_features(&self) -> usize {
        self.num_features
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    /// Number of parameters: weights followed by bias.
    pub fn num_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    /// Flat parameter vector, weights first.
    pub fn params(&self) -> Vec<f64> {
        self.weights.iter().chain(&self.bias).copied().collect()
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::Dimension { expected: self.num_params(), got: params.len() });
        }
        let (w, b) = params.split_at(self.weights.len());
        self.weights.copy_from_slice(w);
        self.bias.copy_from_slice(b);
        Ok(())
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.num_features {
            return Err(Error::Dimension { expected: self.num_features, got: x.len() });
        }
        Ok(())
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        Ok(self.logits_unchecked(x))
    }

    fn logits_unchecked(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.num_features)
            .zip(&self.bias)
            .map(|(row, b)| b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
            .collect()
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax(&self.logits(x)?))
    }

    /// Most probable class, ties to the lowest index.
    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.logits(x)?))
    }

    pub fn accuracy(&self, data: &LabeledDataset) -> Result<f64> {
        self.check_dim(data.row(0))?;
        let hits = data
            .rows()
            .zip(data.labels())
            .filter(|(x, y)| argmax(&self.logits_unchecked(x)) == **y)
            .count();
        Ok(hits as f64 / data.len() as f64)
    }

    /// Cross-entropy gradient of one example, laid out like [`Self::params`].
    pub fn example_gradient(&self, x: &[f64], y: usize) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        if y >= self.num_classes {
            return Err(domain(format!("label {y} outside [0, {})", self.num_classes)));
        }
        let mut g = vec![0.0; self.num_params()];
        self.accumulate_gradient(x, y, 1.0, &mut g);
        Ok(g)
    }

    fn accumulate_gradient(&self, x: &[f64], y: usize, scale: f64, g: &mut [f64]) {
        let p = softmax(&self.logits_unchecked(x));
        let (gw, gb) = g.split_at_mut(self.weights.len());
        for (c, pc) in p.iter().enumerate() {
            let r = scale * (pc - if c == y { 1.0 } else { 0.0 });
            gb[c] += r;
            for (gwj, xj) in gw[c * self.num_features..(c + 1) * self.num_features].iter_mut().zip(x) {
                *gwj += r * xj;
            }
        }
    }

    /// Mean cross-entropy plus `l2/2 · ‖W‖²`, and its gradient.
    pub fn loss_and_gradient(&self, data: &LabeledDataset, l2_penalty: f64) -> Result<(f64, Vec<f64>)> {
        self.check_dim(data.row(0))?;
        let n = data.len() as f64;
        let mut g = vec![0.0; self.num_params()];
        let mut loss = 0.0;
        for (x, &y) in data.rows().zip(data.labels()) {
            let z = self.logits_unchecked(x);
            loss += log_sum_exp(&z) - z[y];
            self.accumulate_gradient(x, y, 1.0 / n, &mut g);
        }
        loss /= n;
        loss += 0.5 * l2_penalty * self.weights.iter().map(|w| w * w).sum::<f64>();
        for (gj, w) in g.iter_mut().zip(&self.weights) {
            *gj += l2_penalty * w;
        }
        Ok((loss, g))
    }

    fn apply_step(&mut self, grad: &[f64], lr: f64, l2_penalty: f64) {
        let (gw, gb) = grad.split_at(self.weights.len());
        for (w, g) in self.weights.iter_mut().zip(gw) {
            *w -= lr * (g + l2_penalty * *w);
        }
        for (b, g) in self.bias.iter_mut().zip(gb) {
            *b -= lr * g;
        }
    }
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Numerically stable softmax.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Minibatch SGD settings. `clip_norm` and `noise_multiplier` are only read
/// by [`dpsgd_fit`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub l2_penalty: f64,
    pub clip_norm: f64,
    pub noise_multiplier: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            epochs: 20,
            batch_size: 32,
            l2_penalty: 1e-3,
            clip_norm: 1.0,
            noise_multiplier: 0.0,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!("learning_rate must be >= 0, got {}", self.learning_rate)));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.l2_penalty >= 0.0) {
            return Err(Error::Config(format!("l2_penalty must be >= 0, got {}", self.l2_penalty)));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::Config(format!("clip_norm must be > 0, got {}", self.clip_norm)));
        }
        if !(self.noise_multiplier >= 0.0) || !self.noise_multiplier.is_finite() {
            return Err(Error::Config(format!(
                "noise_multiplier must be >= 0, got {}",
                self.noise_multiplier
            )));
        }
        Ok(())
    }
}

/// How minibatches are formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Batching {
    /// Reshuffle every epoch and walk the data in `batch_size` chunks.
    Shuffled,
    /// Each step includes every row independently with probability
    /// `batch_size / n`; gradients are normalized by `batch_size`.
    Poisson,
}

/// Number of Poisson-batch steps for `epochs` passes over `n` rows.
pub fn poisson_steps(n: usize, cfg: &SgdConfig) -> u64 {
    ((cfg.epochs * n) as f64 / cfg.batch_size as f64).ceil() as u64
}

/// Poisson batch inclusion rate.
pub fn poisson_rate(n: usize, cfg: &SgdConfig) -> f64 {
    (cfg.batch_size as f64 / n as f64).min(1.0)
}

fn check_training_data(data: &LabeledDataset) -> Result<()> {
    if data.is_empty() {
        return Err(domain("cannot fit on an empty dataset"));
    }
    Ok(())
}

/// Cross-entropy training from an all-zero start with shuffled minibatches.
pub fn fit(data: &LabeledDataset, cfg: &SgdConfig, rng: &RngStream) -> Result<SoftmaxClassifier> {
    fit_with_batching(data, cfg, Batching::Shuffled, rng)
}

pub fn fit_with_batching(
    data: &LabeledDataset,
    cfg: &SgdConfig,
    batching: Batching,
    rng: &RngStream,
) -> Result<SoftmaxClassifier> {
    cfg.validate()?;
    check_training_data(data)?;
    let mut model = SoftmaxClassifier::zeros(data.num_classes(), data.num_features());
    match batching {
        Batching::Shuffled => {
            let mut r = rng.rng();
            let mut order: Vec<usize> = (0..data.len()).collect();
            let mut grad = vec![0.0; model.num_params()];
            for _ in 0..cfg.epochs {
                order.shuffle(&mut r);
                for batch in order.chunks(cfg.batch_size) {
                    grad.iter_mut().for_each(|g| *g = 0.0);
                    let scale = 1.0 / batch.len() as f64;
                    for &i in batch {
                        model.accumulate_gradient(data.row(i), data.labels()[i], scale, &mut grad);
                    }
                    model.apply_step(&grad, cfg.learning_rate, cfg.l2_penalty);
                }
            }
        }
        Batching::Poisson => poisson_train(&mut model, data, cfg, false, None, rng),
    }
    Ok(model)
}

/// Clips `grad` in place to L2 norm `clip_norm`; returns the scale factor applied.
pub fn clip_gradient(grad: &mut [f64], clip_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    let factor = if norm > clip_norm { clip_norm / norm } else { 1.0 };
    if factor < 1.0 {
        grad.iter_mut().for_each(|g| *g *= factor);
    }
    factor
}

/// Poisson-batch trainer. With `clip`, per-example gradients are clipped to
/// `cfg.clip_norm`; `noise` is added to the summed gradient.
fn poisson_train(
    model: &mut SoftmaxClassifier,
    data: &LabeledDataset,
    cfg: &SgdConfig,
    clip: bool,
    noise: Option<&MechanismSpec>,
    rng: &RngStream,
) {
    let n = data.len();
    let rate = poisson_rate(n, cfg);
    let steps = poisson_steps(n, cfg);
    let mut batch_rng = rng.derive(0).rng();
    let mut noise_rng = rng.derive(1).rng();
    let mut sum = vec![0.0; model.num_params()];
    let mut example = vec![0.0; model.num_params()];
    for _ in 0..steps {
        sum.iter_mut().for_each(|g| *g = 0.0);
        for i in 0..n {
            if rate < 1.0 && batch_rng.random::<f64>() >= rate {
                continue;
            }
            if clip {
                example.iter_mut().for_each(|g| *g = 0.0);
                model.accumulate_gradient(data.row(i), data.labels()[i], 1.0, &mut example);
                clip_gradient(&mut example, cfg.clip_norm);
                for (s, e) in sum.iter_mut().zip(&example) {
                    *s += e;
                }
            } else {
                model.accumulate_gradient(data.row(i), data.labels()[i], 1.0, &mut sum);
            }
        }
        if let Some(noise) = noise {
            for s in sum.iter_mut() {
                *s += noise.draw(&mut noise_rng);
            }
        }
        let scale = 1.0 / cfg.batch_size as f64;
        sum.iter_mut().for_each(|g| *g *= scale);
        model.apply_step(&sum, cfg.learning_rate, cfg.l2_penalty);
    }
}

/// Accounting inputs for [`dpsgd_fit`].
#[derive(Debug, Clone, PartialEq)]
pub struct DpsgdAccounting {
    /// Refuse to train if the run would exceed this budget.
    pub target: Option<DpGuarantee>,
    /// Total δ; each step is charged `delta / steps`.
    pub delta: f64,
    pub orders: Vec<f64>,
}

impl DpsgdAccounting {
    pub fn new(target: DpGuarantee) -> Self {
        Self { target: Some(target), delta: target.delta, orders: DEFAULT_ORDERS.to_vec() }
    }
}

/// Budget consumed by DP-SGD on `n` rows: one Gaussian query per step with
/// sensitivity `clip_norm` and std `noise_multiplier · clip_norm`, each step
/// on a fresh Poisson batch.
pub fn dpsgd_budget(n: usize, cfg: &SgdConfig, delta: f64, orders: &[f64]) -> Result<DpGuarantee> {
    cfg.validate()?;
    let steps = poisson_steps(n, cfg);
    if steps == 0 {
        return Ok(DpGuarantee::ZERO);
    }
    if cfg.noise_multiplier == 0.0 {
        return Ok(DpGuarantee { epsilon: f64::INFINITY, delta });
    }
    let mech = MechanismSpec::gaussian(cfg.noise_multiplier * cfg.clip_norm, cfg.clip_norm)?;
    let rate = poisson_rate(n, cfg);
    let sub = if rate < 1.0 { Some(Subsampling::fresh(rate)?) } else { None };
    account_pipeline(steps, &mech, sub, split_delta(delta, steps), orders)
}

/// DP-SGD. The budget is checked before any training happens.
pub fn dpsgd_fit(
    data: &LabeledDataset,
    cfg: &SgdConfig,
    rng: &RngStream,
    accounting: &DpsgdAccounting,
) -> Result<(SoftmaxClassifier, DpGuarantee)> {
    cfg.validate()?;
    check_training_data(data)?;
    let consumed = dpsgd_budget(data.len(), cfg, accounting.delta, &accounting.orders)?;
    if let Some(target) = accounting.target {
        if !consumed.within(&target) {
            return Err(Error::Infeasible(format!(
                "DP-SGD would spend (ε={}, δ={}) against a budget of (ε={}, δ={})",
                consumed.epsilon, consumed.delta, target.epsilon, target.delta
            )));
        }
    }
    let mut model = SoftmaxClassifier::zeros(data.num_classes(), data.num_features());
    let std = cfg.noise_multiplier * cfg.clip_norm;
    let noise = if std > 0.0 { Some(MechanismSpec::gaussian(std, cfg.clip_norm)?) } else { None };
    poisson_train(&mut model, data, cfg, true, noise.as_ref(), rng);
    Ok((model, consumed))
}

const MODEL_MAGIC: &str = "dpens-softmax-classifier";
const MODEL_VERSION: u32 = 1;

/// Text dump:
///
/// ```text
/// dpens-softmax-classifier 1
/// shape <classes> <features>
/// bias <b_0> ... <b_{K-1}>
/// w <row 0 weights>
/// ...
/// w <row K-1 weights>
/// ```
///
/// Values use Rust's shortest round-trip formatting, so reading back is bit-exact.
pub fn write_model<W: Write>(model: &SoftmaxClassifier, mut out: W) -> Result<()> {
    writeln!(out, "{MODEL_MAGIC} {MODEL_VERSION}")?;
    writeln!(out, "shape {} {}", model.num_classes, model.num_features)?;
    let join = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(" ");
    writeln!(out, "bias {}", join(&model.bias))?;
    for row in model.weights.chunks_exact(model.num_features) {
        writeln!(out, "w {}", join(row))?;
    }
    Ok(())
}

pub fn read_model<R: BufRead>(input: R) -> Result<SoftmaxClassifier> {
    let mut lines = input.lines().enumerate();
    let mut next = |what: &str| -> Result<(u64, String)> {
        match lines.next() {
            Some((i, line)) => Ok((i as u64 + 1, line?)),
            None => Err(Error::Parse { line: 0, msg: format!("missing {what} line") }),
        }
    };
    let bad = |line: u64, msg: String| Error::Parse { line, msg };

    let (ln, header) = next("header")?;
    let version = header
        .strip_prefix(MODEL_MAGIC)
        .map(str::trim)
        .ok_or_else(|| bad(ln, format!("not a model file: `{header}`")))?;
    if version != MODEL_VERSION.to_string() {
        return Err(bad(ln, format!("unsupported model version `{version}`")));
    }

    let (ln, shape) = next("shape")?;
    let dims: Vec<usize> = shape
        .strip_prefix("shape ")
        .ok_or_else(|| bad(ln, "expected `shape`".into()))?
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| bad(ln, format!("bad dimension `{t}`"))))
        .collect::<Result<_>>()?;
    let [k, d] = dims[..] else {
        return Err(bad(ln, "shape needs two dimensions".into()));
    };

    let parse_row = |ln: u64, line: &str, tag: &str, len: usize| -> Result<Vec<f64>> {
        let body = line
            .strip_prefix(tag)
            .ok_or_else(|| bad(ln, format!("expected `{}`", tag.trim())))?;
        let v: Vec<f64> = body
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| bad(ln, format!("bad number `{t}`"))))
            .collect::<Result<_>>()?;
        if v.len() != len {
            return Err(bad(ln, format!("expected {len} values, found {}", v.len())));
        }
        Ok(v)
    };

    let (ln, line) = next("bias")?;
    let bias = parse_row(ln, &line, "bias ", k)?;
    let mut weights = Vec::with_capacity(k * d);
    for _ in 0..k {
        let (ln, line) = next("weight")?;
        weights.extend(parse_row(ln, &line, "w ", d)?);
    }
    SoftmaxClassifier::from_parts(weights, bias, k, d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{generate_synthetic, Provenance};
    use proptest::prelude::*;

    fn blobs(seed: u64) -> LabeledDataset {
        // two classes, means 6 apart in 2-D
        generate_synthetic(200, 2, 2, 6.0, Provenance::Private, &RngStream::new(seed, 0)).unwrap()
    }

    #[test]
    fn zero_model_is_uniform() {
        let m = SoftmaxClassifier::zeros(4, 3);
        assert_eq!(m.predict_proba(&[1.0, -2.0, 5.0]).unwrap(), vec![0.25; 4]);
        assert!(m.predict_proba(&[1.0]).is_err());
    }

    #[test]
    fn separated_blobs_are_learned() {
        for seed in 0..5 {
            let d = blobs(seed);
            let m = fit(&d, &SgdConfig::default(), &RngStream::new(seed, 1)).unwrap();
            assert!(m.accuracy(&d).unwrap() >= 0.99, "seed {seed}");
        }
    }

    #[test]
    fn zero_learning_rate_keeps_init() {
        let d = blobs(1);
        let cfg = SgdConfig { learning_rate: 0.0, epochs: 1, ..SgdConfig::default() };
        let m = fit(&d, &cfg, &RngStream::new(1, 1)).unwrap();
        assert_eq!(m, SoftmaxClassifier::zeros(2, 2));
        assert_eq!(m.predict_proba(d.row(0)).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn config_validation() {
        let d = blobs(1);
        let r = RngStream::new(0, 0);
        for bad in [
            SgdConfig { epochs: 0, ..SgdConfig::default() },
            SgdConfig { batch_size: 0, ..SgdConfig::default() },
            SgdConfig { learning_rate: -1.0, ..SgdConfig::default() },
            SgdConfig { clip_norm: 0.0, ..SgdConfig::default() },
            SgdConfig { noise_multiplier: -0.5, ..SgdConfig::default() },
        ] {
            assert!(matches!(fit(&d, &bad, &r), Err(Error::Config(_))), "{bad:?}");
        }
    }

    #[test]
    fn fit_is_deterministic() {
        let d = blobs(2);
        let r = RngStream::new(4, 4);
        for batching in [Batching::Shuffled, Batching::Poisson] {
            let a = fit_with_batching(&d, &SgdConfig::default(), batching, &r).unwrap();
            let b = fit_with_batching(&d, &SgdConfig::default(), batching, &r).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn shift_and_monotonicity() {
        let m = SoftmaxClassifier::from_parts(vec![0.5, -1.0, 2.0, 0.3, 0.0, 1.0], vec![0.1, 0.2, -0.3], 3, 2)
            .unwrap();
        let z = m.logits(&[0.7, -0.2]).unwrap();
        let p = softmax(&z);
        let shifted: Vec<f64> = z.iter().map(|v| v + 17.5).collect();
        for (a, b) in p.iter().zip(softmax(&shifted)) {
            assert!((a - b).abs() < 1e-15);
        }
        let mut raised = z.clone();
        raised[1] += 1e-3;
        let q = softmax(&raised);
        assert!(q[1] > p[1]);
        assert!(q[0] < p[0] && q[2] < p[2]);
    }

    #[test]
    fn clipping_scales_long_gradients() {
        let mut g = vec![3.0, 4.0];
        // norm 5 = 2 · 2.5
        let f = clip_gradient(&mut g, 2.5);
        assert_eq!(f, 0.5);
        assert_eq!(g, vec![1.5, 2.0]);
        let mut short = vec![0.3, 0.4];
        assert_eq!(clip_gradient(&mut short, 1.0), 1.0);
        assert_eq!(short, vec![0.3, 0.4]);
    }

    #[test]
    fn single_step_clipping_contribution() {
        // one example, batch_size 1, rate 1: the step is exactly −lr · clipped gradient
        let data = LabeledDataset::new(vec![3.0, 4.0], vec![0], 2, 2, Provenance::Private).unwrap();
        let init = SoftmaxClassifier::zeros(2, 2);
        let raw = init.example_gradient(data.row(0), 0).unwrap();
        let norm = raw.iter().map(|g| g * g).sum::<f64>().sqrt();
        let clip = norm / 2.0;
        let cfg = SgdConfig {
            learning_rate: 1.0,
            epochs: 1,
            batch_size: 1,
            l2_penalty: 0.0,
            clip_norm: clip,
            noise_multiplier: 0.0,
        };
        let acct = DpsgdAccounting { target: None, delta: 0.01, orders: DEFAULT_ORDERS.to_vec() };
        let (m, _) = dpsgd_fit(&data, &cfg, &RngStream::new(0, 0), &acct).unwrap();
        let step: Vec<f64> = m.params().iter().map(|p| -p).collect();
        let step_norm = step.iter().map(|g| g * g).sum::<f64>().sqrt();
        assert!((step_norm - clip).abs() < 1e-12);
        for (s, r) in step.iter().zip(&raw) {
            assert!((s - 0.5 * r).abs() < 1e-12);
        }
    }

    #[test]
    fn noiseless_dpsgd_matches_poisson_fit() {
        let d = blobs(3);
        let cfg = SgdConfig { clip_norm: 1e9, noise_multiplier: 0.0, epochs: 5, ..SgdConfig::default() };
        let r = RngStream::new(8, 2);
        let plain = fit_with_batching(&d, &cfg, Batching::Poisson, &r).unwrap();
        let acct = DpsgdAccounting { target: None, delta: 0.01, orders: DEFAULT_ORDERS.to_vec() };
        let (private, spent) = dpsgd_fit(&d, &cfg, &r, &acct).unwrap();
        assert!(spent.epsilon.is_infinite());
        for (a, b) in plain.params().iter().zip(private.params()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn dpsgd_refuses_before_training() {
        let d = blobs(3);
        let cfg = SgdConfig { noise_multiplier: 0.5, ..SgdConfig::default() };
        let acct = DpsgdAccounting::new(DpGuarantee::new(1.0, 1e-5).unwrap());
        assert!(matches!(dpsgd_fit(&d, &cfg, &RngStream::new(0, 0), &acct), Err(Error::Infeasible(_))));
    }

    #[test]
    fn dpsgd_budget_grows_with_steps() {
        let mut prev = 0.0;
        for epochs in 1..12 {
            let cfg = SgdConfig { epochs, noise_multiplier: 1.1, ..SgdConfig::default() };
            let g = dpsgd_budget(2000, &cfg, 1e-3, &DEFAULT_ORDERS).unwrap();
            assert!(g.epsilon >= prev, "epochs {epochs}: {} < {prev}", g.epsilon);
            prev = g.epsilon;
        }
    }

    #[test]
    fn dpsgd_with_moderate_noise_still_learns() {
        let d = blobs(5);
        let cfg = SgdConfig { noise_multiplier: 1.0, epochs: 10, ..SgdConfig::default() };
        let acct = DpsgdAccounting { target: None, delta: 1e-3, orders: DEFAULT_ORDERS.to_vec() };
        let (m, spent) = dpsgd_fit(&d, &cfg, &RngStream::new(5, 5), &acct).unwrap();
        assert!(spent.epsilon.is_finite() && spent.epsilon > 0.0);
        assert!(m.accuracy(&d).unwrap() > 0.9);
    }

    #[test]
    fn model_text_round_trip_is_bit_exact() {
        let d = blobs(6);
        let m = fit(&d, &SgdConfig::default(), &RngStream::new(6, 6)).unwrap();
        let mut buf = Vec::new();
        write_model(&m, &mut buf).unwrap();
        let back = read_model(&buf[..]).unwrap();
        assert_eq!(
            m.params().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            back.params().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        assert_eq!(back.num_classes(), 2);
    }

    #[test]
    fn model_reader_rejects_garbage() {
        assert!(read_model(&b"hello 1\n"[..]).is_err());
        assert!(read_model(&b"dpens-softmax-classifier 2\n"[..]).is_err());
        assert!(read_model(&b"dpens-softmax-classifier 1\nshape 2 1\nbias 0 0\nw 1\n"[..]).is_err());
        assert!(read_model(&b"dpens-softmax-classifier 1\nshape 1 1\nbias x\nw 1\n"[..]).is_err());
    }

    proptest! {
        #[test]
        fn posteriors_are_normalized_and_shift_invariant(
            params in proptest::collection::vec(-20.0f64..20.0, 12),
            x in proptest::collection::vec(-5.0f64..5.0, 3),
            shift in -50.0f64..50.0,
        ) {
            let m = SoftmaxClassifier::from_parts(params[..9].to_vec(), params[9..].to_vec(), 3, 3).unwrap();
            let p = m.predict_proba(&x).unwrap();
            prop_assert!(p.iter().all(|v| *v >= 0.0));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            let shifted = SoftmaxClassifier::from_parts(
                params[..9].to_vec(),
                params[9..].iter().map(|b| b + shift).collect(),
                3,
                3,
            ).unwrap();
            for (a, b) in p.iter().zip(shifted.predict_proba(&x).unwrap()) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }
}
