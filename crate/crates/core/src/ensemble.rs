//! Weighted teacher ensembles, noisy aggregation, weighted-majority weight
//! balancing and budget-charged pseudo-labeling of public data.

use rayon::prelude::*;

use crate::accountant::{account_pipeline, split_delta, DpGuarantee, Subsampling};
use crate::error::{domain, Error, Result};
use crate::mechanisms::{argmax, MechanismSpec};
use crate::models::SoftmaxClassifier;
use crate::pipeline::{LabeledDataset, Provenance};
use crate::rng::RngStream;

const WEIGHT_TOL: f64 = 1e-9;

/// Teachers with convex combination weights.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherEnsemble {
    teachers: Vec<SoftmaxClassifier>,
    weights: Vec<f64>,
}

impl TeacherEnsemble {
    /// Uniform weights 1/I.
    pub fn uniform(teachers: Vec<SoftmaxClassifier>) -> Result<Self> {
        let w = vec![1.0 / teachers.len().max(1) as f64; teachers.len()];
        Self::new(teachers, w)
    }

    pub fn new(teachers: Vec<SoftmaxClassifier>, weights: Vec<f64>) -> Result<Self> {
        let first = teachers.first().ok_or_else(|| domain("ensemble needs at least one teacher"))?;
        if teachers
            .iter()
            .any(|t| t.num_classes() != first.num_classes() || t.num_features() != first.num_features())
        {
            return Err(domain("teachers disagree on class or feature count"));
        }
        if weights.len() != teachers.len() {
            return Err(Error::Dimension { expected: teachers.len(), got: weights.len() });
        }
        check_weights(&weights)?;
        Ok(Self { teachers, weights })
    }

    pub fn teachers(&self) -> &[SoftmaxClassifier] {
        &self.teachers
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.teachers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.teachers.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.teachers[0].num_classes()
    }

    pub fn set_weights(&mut self, weights: Vec<f64>) -> Result<()> {
        if weights.len() != self.teachers.len() {
            return Err(Error::Dimension { expected: self.teachers.len(), got: weights.len() });
        }
        check_weights(&weights)?;
        self.weights = weights;
        Ok(())
    }

    /// Std of the aggregate noise when each teacher gets noise of std `scale`:
    /// `scale · √(Σ wᵢ²)`.
    pub fn aggregate_noise_std(&self, scale: f64) -> f64 {
        scale * self.weights.iter().map(|w| w * w).sum::<f64>().sqrt()
    }
}

fn check_weights(weights: &[f64]) -> Result<()> {
    if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(domain("teacher weights must be finite and >= 0"));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > WEIGHT_TOL {
        return Err(domain(format!("teacher weights sum to {total}, not 1")));
    }
    Ok(())
}

/// Σ wᵢ · Tᵢ(·|x).
pub fn aggregate(ens: &TeacherEnsemble, x: &[f64]) -> Result<Vec<f64>> {
    let mut out = vec![0.0; ens.num_classes()];
    for (t, w) in ens.teachers.iter().zip(&ens.weights) {
        for (o, p) in out.iter_mut().zip(t.predict_proba(x)?) {
            *o += w * p;
        }
    }
    Ok(out)
}

/// Per-teacher posteriors plus per-teacher noise, drawn teacher by teacher
/// from one stream.
fn noisy_teacher_scores(
    ens: &TeacherEnsemble,
    x: &[f64],
    mech: &MechanismSpec,
    rng: &RngStream,
) -> Result<Vec<Vec<f64>>> {
    let mut r = rng.rng();
    ens.teachers
        .iter()
        .map(|t| {
            let mut p = t.predict_proba(x)?;
            for v in p.iter_mut() {
                *v += mech.draw(&mut r);
            }
            Ok(p)
        })
        .collect()
}

/// Σ wᵢ · (Tᵢ(·|x) + Zᵢ), one independent noise vector per teacher.
pub fn noisy_aggregate(
    ens: &TeacherEnsemble,
    x: &[f64],
    mech: &MechanismSpec,
    rng: &RngStream,
) -> Result<Vec<f64>> {
    let scores = noisy_teacher_scores(ens, x, mech, rng)?;
    let mut out = vec![0.0; ens.num_classes()];
    for (s, w) in scores.iter().zip(&ens.weights) {
        for (o, v) in out.iter_mut().zip(s) {
            *o += w * v;
        }
    }
    Ok(out)
}

/// One weighted-majority round: every teacher whose prediction differs from
/// `true_label` has its weight multiplied by `beta`, then the weights are
/// renormalized.
pub fn wma_update(
    weights: &[f64],
    teacher_predictions: &[usize],
    true_label: usize,
    beta: f64,
) -> Result<Vec<f64>> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(domain(format!("beta must lie in (0, 1), got {beta}")));
    }
    if weights.len() != teacher_predictions.len() {
        return Err(Error::Dimension { expected: weights.len(), got: teacher_predictions.len() });
    }
    check_weights(weights)?;
    let updated: Vec<f64> = weights
        .iter()
        .zip(teacher_predictions)
        .map(|(w, p)| if *p == true_label { *w } else { w * beta })
        .collect();
    let total: f64 = updated.iter().sum();
    Ok(updated.into_iter().map(|w| w / total).collect())
}

/// Runs weighted-majority rounds over a public validation slice. Each row
/// is one noisy query: every teacher's prediction is the argmax of its own
/// noisy score vector, compared against the public label.
pub fn balance_weights(
    ens: &TeacherEnsemble,
    validation: &LabeledDataset,
    mech: &MechanismSpec,
    beta: f64,
    rng: &RngStream,
) -> Result<Vec<f64>> {
    if validation.provenance() != Provenance::Public {
        return Err(Error::Provenance("weight balancing must run on public data".into()));
    }
    let mut weights = ens.weights.clone();
    for (row, (x, &y)) in validation.rows().zip(validation.labels()).enumerate() {
        let votes: Vec<usize> = noisy_teacher_scores(ens, x, mech, &rng.derive(row as u64))?
            .iter()
            .map(|s| argmax(s))
            .collect();
        weights = wma_update(&weights, &votes, y, beta)?;
    }
    Ok(weights)
}

/// How pseudo-label queries are charged.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryAccounting {
    pub target: DpGuarantee,
    pub subsampling: Option<Subsampling>,
    pub orders: Vec<f64>,
    /// Queries already answered by the same teachers and mechanism (for
    /// example weight balancing). They are composed with this batch.
    pub prior_queries: u64,
}

impl QueryAccounting {
    /// Guarantee for `total` queries, with δ split evenly across them.
    pub fn charge(&self, mech: &MechanismSpec, total: u64) -> Result<DpGuarantee> {
        if total == 0 {
            return Ok(DpGuarantee::ZERO);
        }
        account_pipeline(total, mech, self.subsampling, split_delta(self.target.delta, total), &self.orders)
    }
}

/// Public features labeled by the noisy ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabelBatch {
    data: LabeledDataset,
    consumed: DpGuarantee,
    queries: u64,
    total_queries: u64,
}

impl PseudoLabelBatch {
    /// Public features with the noisy labels attached.
    pub fn dataset(&self) -> &LabeledDataset {
        &self.data
    }

    pub fn labels(&self) -> &[usize] {
        self.data.labels()
    }

    /// Budget spent by all `total_queries` queries.
    pub fn consumed(&self) -> DpGuarantee {
        self.consumed
    }

    /// Rows labeled in this batch.
    pub fn queries(&self) -> u64 {
        self.queries
    }

    /// This batch plus prior queries on the same teachers.
    pub fn total_queries(&self) -> u64 {
        self.total_queries
    }
}

/// Labels every public row with the argmax of [`noisy_aggregate`]. The whole
/// batch is charged up front; nothing is queried if it would exceed the
/// target.
pub fn pseudo_label(
    ens: &TeacherEnsemble,
    public_features: &LabeledDataset,
    mech: &MechanismSpec,
    rng: &RngStream,
    accounting: &QueryAccounting,
) -> Result<PseudoLabelBatch> {
    if public_features.provenance() != Provenance::Public {
        return Err(Error::Provenance("pseudo-labels may only be issued for public data".into()));
    }
    if public_features.num_features() != ens.teachers[0].num_features() {
        return Err(Error::Dimension {
            expected: ens.teachers[0].num_features(),
            got: public_features.num_features(),
        });
    }
    let queries = public_features.len() as u64;
    let total = accounting.prior_queries + queries;
    let consumed = accounting.charge(mech, total)?;
    if !consumed.within(&accounting.target) {
        return Err(Error::Infeasible(format!(
            "{total} queries would spend (ε={}, δ={}) against a budget of (ε={}, δ={})",
            consumed.epsilon, consumed.delta, accounting.target.epsilon, accounting.target.delta
        )));
    }
    let rows: Vec<&[f64]> = public_features.rows().collect();
    let labels = rows
        .par_iter()
        .enumerate()
        .map(|(i, x)| Ok(argmax(&noisy_aggregate(ens, x, mech, &rng.derive(i as u64))?)))
        .collect::<Result<Vec<usize>>>()?;
    Ok(PseudoLabelBatch {
        data: public_features.with_labels(labels)?,
        consumed,
        queries,
        total_queries: total,
    })
}
