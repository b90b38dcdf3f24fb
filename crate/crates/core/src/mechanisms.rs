//! Additive-noise mechanisms over score vectors.

use rand::Rng;
use rand_distr::{Distribution, Open01, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::rng::RngStream;

/// Tolerance for accepting a vector as a probability vector.
pub const SIMPLEX_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseFamily {
    Gaussian,
    Laplace,
}

impl NoiseFamily {
    pub fn name(&self) -> &'static str {
        match self {
            NoiseFamily::Gaussian => "gaussian",
            NoiseFamily::Laplace => "laplace",
        }
    }

    /// Sensitivity of a probability-vector query in the norm this family is
    /// calibrated against (L2 for Gaussian, L1 for Laplace).
    pub fn simplex_sensitivity(&self) -> f64 {
        match self {
            NoiseFamily::Gaussian => std::f64::consts::SQRT_2,
            NoiseFamily::Laplace => 2.0,
        }
    }
}

impl std::str::FromStr for NoiseFamily {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gaussian" => Ok(NoiseFamily::Gaussian),
            "laplace" => Ok(NoiseFamily::Laplace),
            other => Err(crate::Error::Config(format!("unknown noise family `{other}`"))),
        }
    }
}

/// One additive-noise query: family, scale (std for Gaussian, diversity b
/// for Laplace) and the sensitivity the scale was calibrated against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MechanismSpec {
    family: NoiseFamily,
    scale: f64,
    sensitivity: f64,
}

impl MechanismSpec {
    pub fn new(family: NoiseFamily, scale: f64, sensitivity: f64) -> Result<Self> {
        if !(scale > 0.0) || scale.is_infinite() {
            return Err(domain(format!("noise scale must be finite and > 0, got {scale}")));
        }
        if !(sensitivity >= 0.0) || sensitivity.is_infinite() {
            return Err(domain(format!("sensitivity must be finite and >= 0, got {sensitivity}")));
        }
        Ok(Self { family, scale, sensitivity })
    }

    pub fn gaussian(sigma: f64, sensitivity: f64) -> Result<Self> {
        Self::new(NoiseFamily::Gaussian, sigma, sensitivity)
    }

    pub fn laplace(b: f64, sensitivity: f64) -> Result<Self> {
        Self::new(NoiseFamily::Laplace, b, sensitivity)
    }

    pub fn family(&self) -> NoiseFamily {
        self.family
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn sensitivity(&self) -> f64 {
        self.sensitivity
    }

    /// Per-coordinate variance of the noise.
    pub fn variance(&self) -> f64 {
        match self.family {
            NoiseFamily::Gaussian => self.scale * self.scale,
            NoiseFamily::Laplace => 2.0 * self.scale * self.scale,
        }
    }

    pub(crate) fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.family {
            NoiseFamily::Gaussian => {
                let z: f64 = StandardNormal.sample(rng);
                self.scale * z
            }
            NoiseFamily::Laplace => {
                let u: f64 = Open01.sample(rng);
                let u = u - 0.5;
                -self.scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
            }
        }
    }

    pub(crate) fn fill<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        for x in out {
            *x = self.draw(rng);
        }
    }
}

/// `dim` i.i.d. noise samples from `spec`.
pub fn sample_noise(spec: &MechanismSpec, dim: usize, rng: &RngStream) -> Result<Vec<f64>> {
    if dim == 0 {
        return Err(domain("noise dimension must be >= 1"));
    }
    let mut out = vec![0.0; dim];
    spec.fill(&mut rng.rng(), &mut out);
    Ok(out)
}

pub(crate) fn check_simplex(scores: &[f64]) -> Result<()> {
    if scores.is_empty() {
        return Err(domain("score vector is empty"));
    }
    if let Some(s) = scores.iter().find(|s| !(**s >= 0.0) || !s.is_finite()) {
        return Err(domain(format!("score {s} is not a probability")));
    }
    let total: f64 = scores.iter().sum();
    if (total - 1.0).abs() > SIMPLEX_TOL {
        return Err(domain(format!("scores sum to {total}, not 1")));
    }
    Ok(())
}

/// Adds noise to a probability vector component-wise. The result is not
/// projected back to the simplex.
pub fn perturb_scores(scores: &[f64], spec: &MechanismSpec, rng: &RngStream) -> Result<Vec<f64>> {
    check_simplex(scores)?;
    let noise = sample_noise(spec, scores.len(), rng)?;
    Ok(scores.iter().zip(noise).map(|(s, z)| s + z).collect())
}

/// Largest L2 distance between two probability vectors: √2.
pub fn simplex_l2_sensitivity(num_classes: usize) -> Result<f64> {
    if num_classes < 2 {
        return Err(domain(format!("need at least 2 classes, got {num_classes}")));
    }
    Ok(std::f64::consts::SQRT_2)
}

/// Largest L1 distance between two probability vectors: 2.
pub fn simplex_l1_sensitivity(num_classes: usize) -> Result<f64> {
    if num_classes < 2 {
        return Err(domain(format!("need at least 2 classes, got {num_classes}")));
    }
    Ok(2.0)
}

/// Index of the largest entry, ties to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}
