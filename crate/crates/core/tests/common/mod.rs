//! Independent reference computations used by the integration tests.
#![allow(dead_code)]

use dpens::models::SoftmaxClassifier;
use dpens::pipeline::LabeledDataset;

/// ln of the N(mu, sigma²) density.
fn log_normal_pdf(x: f64, mu: f64, sigma: f64) -> f64 {
    let z = (x - mu) / sigma;
    -0.5 * z * z - sigma.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
}

/// Rényi divergence D_α(N(Δ, σ²) ‖ N(0, σ²)) by composite Simpson quadrature
/// of ∫ p^α q^{1−α} dx, accumulated in log space.
pub fn renyi_quadrature(alpha: f64, sigma: f64, delta: f64) -> f64 {
    let centre = alpha * delta;
    let lo = centre.min(0.0).min(delta) - 40.0 * sigma;
    let hi = centre.max(0.0).max(delta) + 40.0 * sigma;
    let n = 40_000;
    let h = (hi - lo) / n as f64;
    let log_f = |x: f64| alpha * log_normal_pdf(x, delta, sigma) + (1.0 - alpha) * log_normal_pdf(x, 0.0, sigma);
    let logs: Vec<f64> = (0..=n).map(|i| log_f(lo + i as f64 * h)).collect();
    let peak = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (i, l) in logs.iter().enumerate() {
        let w = if i == 0 || i == n {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        sum += w * (l - peak).exp();
    }
    let log_integral = peak + (sum * h / 3.0).ln();
    log_integral / (alpha - 1.0)
}

/// Amplified ε computed directly from the definition.
pub fn amplified_epsilon(eps: f64, gamma: f64) -> f64 {
    (1.0 + gamma * (eps.exp() - 1.0)).ln()
}

/// Asymptotic two-sample Kolmogorov–Smirnov p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    let ne = n * m / (n + m);
    let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    let mut p = 0.0;
    for k in 1..=200 {
        let k = k as f64;
        let term = 2.0 * (-1f64).powf(k - 1.0) * (-2.0 * k * k * lambda * lambda).exp();
        p += term;
        if term.abs() < 1e-16 {
            break;
        }
    }
    (d, p.clamp(0.0, 1.0))
}

/// Mean cross-entropy plus (l2/2)·‖W‖², straight from the definition.
pub fn reference_loss(model: &SoftmaxClassifier, data: &LabeledDataset, l2: f64) -> f64 {
    let mut total = 0.0;
    for (x, &y) in data.rows().zip(data.labels()) {
        let z = model.logits(x).unwrap();
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        total += lse - z[y];
    }
    let penalty: f64 = model.weights().iter().map(|w| w * w).sum();
    total / data.len() as f64 + 0.5 * l2 * penalty
}

/// Central finite-difference gradient of [`reference_loss`].
pub fn numeric_gradient(model: &SoftmaxClassifier, data: &LabeledDataset, l2: f64, h: f64) -> Vec<f64> {
    let base = model.params();
    let mut probe = model.clone();
    (0..base.len())
        .map(|i| {
            let mut p = base.clone();
            p[i] = base[i] + h;
            probe.set_params(&p).unwrap();
            let up = reference_loss(&probe, data, l2);
            p[i] = base[i] - h;
            probe.set_params(&p).unwrap();
            let down = reference_loss(&probe, data, l2);
            (up - down) / (2.0 * h)
        })
        .collect()
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
