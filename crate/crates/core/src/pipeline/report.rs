use std::io::{self, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::ser::Formatter;

use super::config::{ExperimentConfig, Method};
use crate::accountant::DpGuarantee;
use crate::error::{Error, Result};

pub const REPORT_VERSION: u32 = 1;

/// Outcome of one method on one fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: Method,
    pub fold: usize,
    /// Accuracy on the private held-out split; `None` when the run failed.
    pub accuracy: Option<f64>,
    /// Budget consumed; `None` for the non-private baseline.
    pub consumed: Option<DpGuarantee>,
    /// Calibrated noise scale: per-teacher σ (or Laplace b) for ensembles,
    /// gradient-noise std for DP-SGD.
    pub noise_scale: Option<f64>,
    /// DP-SGD only: noise std over clip norm.
    pub noise_multiplier: Option<f64>,
    /// Std of the noise on the weighted aggregate, `scale · √(Σ wᵢ²)`.
    pub aggregate_noise_std: Option<f64>,
    pub num_teachers: usize,
    pub teacher_weights: Vec<f64>,
    /// Mean teacher accuracy on the held-out split.
    pub teacher_accuracy: Option<f64>,
    /// Fraction of pseudo-labels that match the public ground truth.
    pub label_accuracy: Option<f64>,
    /// Noisy queries charged (pseudo-labels plus weight balancing), or
    /// DP-SGD steps.
    pub queries: u64,
    pub train_size: usize,
    pub subsample_redraws: usize,
    pub error: Option<String>,
    pub wall_clock_ms: Option<u64>,
}

impl MethodResult {
    pub(crate) fn new(method: Method, fold: usize) -> Self {
        Self {
            method,
            fold,
            accuracy: None,
            consumed: None,
            noise_scale: None,
            noise_multiplier: None,
            aggregate_noise_std: None,
            num_teachers: 0,
            teacher_weights: Vec::new(),
            teacher_accuracy: None,
            label_accuracy: None,
            queries: 0,
            train_size: 0,
            subsample_redraws: 0,
            error: None,
            wall_clock_ms: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub version: u32,
    pub config: ExperimentConfig,
    pub seeds: Vec<u64>,
    /// Ordered by fold, then by the configured method order.
    pub results: Vec<MethodResult>,
}

impl ExperimentReport {
    pub fn result(&self, method: Method, fold: usize) -> Option<&MethodResult> {
        self.results.iter().find(|r| r.method == method && r.fold == fold)
    }

    /// Canonical JSON: sorted keys, floats with 17 significant digits.
    pub fn to_canonical_json(&self) -> Result<Vec<u8>> {
        let value = serde_json::to_value(self).map_err(|e| Error::Report(e.to_string()))?;
        let mut out = Vec::new();
        let mut ser = serde_json::Serializer::with_formatter(&mut out, CanonicalFormatter::default());
        value.serialize(&mut ser).map_err(|e| Error::Report(e.to_string()))?;
        out.push(b'\n');
        Ok(out)
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        serde_json::from_slice(bytes).map_err(|e| Error::Report(e.to_string()))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read(path)?)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "method,fold,accuracy,epsilon,delta,noise_scale,aggregate_noise_std,num_teachers,queries,error\n",
        );
        let opt = |v: Option<f64>| v.map(|x| format!("{x:?}")).unwrap_or_default();
        for r in &self.results {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                r.method,
                r.fold,
                opt(r.accuracy),
                opt(r.consumed.map(|c| c.epsilon)),
                opt(r.consumed.map(|c| c.delta)),
                opt(r.noise_scale),
                opt(r.aggregate_noise_std),
                r.num_teachers,
                r.queries,
                r.error.as_deref().unwrap_or("").replace([',', '\n'], " "),
            ));
        }
        out
    }

    pub fn to_markdown(&self) -> String {
        let mut out = format!(
            "Target budget: ε = {}, δ = {} · γ = {} · teachers = {} · noise = {} · seed = {}\n\n",
            self.config.target.epsilon,
            self.config.target.delta,
            self.config.gamma,
            self.config.num_teachers,
            self.config.noise_family.name(),
            self.config.seed,
        );
        out.push_str("| Method | Fold | Accuracy | ε | δ | Noise scale | Teachers | Queries |\n");
        out.push_str("|---|---|---|---|---|---|---|---|\n");
        let f = |v: Option<f64>, p: usize| v.map(|x| format!("{x:.p$}")).unwrap_or_else(|| "–".into());
        for r in &self.results {
            let acc = match (&r.error, r.accuracy) {
                (Some(e), _) => format!("failed: {e}"),
                (None, a) => f(a.map(|a| 100.0 * a), 2),
            };
            out.push_str(&format!(
                "| {} | {} | {} | {} | {} | {} | {} | {} |\n",
                r.method,
                r.fold,
                acc,
                f(r.consumed.map(|c| c.epsilon), 4),
                f(r.consumed.map(|c| c.delta), 4),
                f(r.noise_scale, 4),
                r.num_teachers,
                r.queries,
            ));
        }
        out
    }
}

/// Writes the canonical JSON form of `report` to `path`.
pub fn emit_report(report: &ExperimentReport, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, report.to_canonical_json()?)?;
    Ok(())
}

/// Compact JSON with every float as `d.dddddddddddddddde±x`.
#[derive(Default)]
struct CanonicalFormatter;

impl Formatter for CanonicalFormatter {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        if value.is_finite() {
            write!(writer, "{value:.16e}")
        } else {
            writer.write_all(b"null")
        }
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, f64::from(value))
    }
}
