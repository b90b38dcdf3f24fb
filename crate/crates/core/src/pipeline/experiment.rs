use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::config::{DataSource, ExperimentConfig, Method};
use super::data::{generate_synthetic, load_csv, LabeledDataset, Provenance};
use super::report::{ExperimentReport, MethodResult, REPORT_VERSION};
use crate::accountant::{calibrate_scale, calibrate_sigma, Subsampling};
use crate::ensemble::{balance_weights, pseudo_label, PseudoLabelBatch, QueryAccounting, TeacherEnsemble};
use crate::error::{Error, Result};
use crate::mechanisms::MechanismSpec;
use crate::models::{dpsgd_fit, fit, poisson_rate, poisson_steps, DpsgdAccounting, SgdConfig, SoftmaxClassifier};
use crate::rng::RngStream;
use crate::sampling::{partition_disjoint, poisson_subsample_nonempty};

/// Random streams are keyed by role, so every method run under one seed
/// sees the same draws for the same role.
mod role {
    pub const PRIVATE_DATA: u64 = 1;
    pub const PUBLIC_DATA: u64 = 2;
    pub const SPLIT: u64 = 3;
    pub const TEACHER_DATA: u64 = 4;
    pub const TEACHER_FIT: u64 = 5;
    pub const BALANCE: u64 = 6;
    pub const LABEL_NOISE: u64 = 7;
    pub const STUDENT_FIT: u64 = 8;
    pub const BASELINE_FIT: u64 = 9;
}

const MAX_SUBSAMPLE_DRAWS: usize = 1000;

/// Builds the private and public datasets described by `cfg.data`.
pub fn load_datasets(cfg: &ExperimentConfig) -> Result<(LabeledDataset, LabeledDataset)> {
    let d = &cfg.data;
    let build = |src: &DataSource, provenance: Provenance, role: u64| match src {
        DataSource::Synthetic { n } => generate_synthetic(
            *n,
            d.features,
            d.classes,
            d.separation,
            provenance,
            &RngStream::new(cfg.seed, role),
        ),
        DataSource::Csv { path } => load_csv(path, d.classes, provenance),
    };
    Ok((
        build(&d.private, Provenance::Private, role::PRIVATE_DATA)?,
        build(&d.public, Provenance::Public, role::PUBLIC_DATA)?,
    ))
}

/// Fits the student on pseudo-labeled public data only.
pub fn fit_student(batch: &PseudoLabelBatch, cfg: &SgdConfig, rng: &RngStream) -> Result<SoftmaxClassifier> {
    student_fit(batch.dataset(), cfg, rng)
}

fn student_fit(data: &LabeledDataset, cfg: &SgdConfig, rng: &RngStream) -> Result<SoftmaxClassifier> {
    if data.provenance() != Provenance::Public {
        return Err(Error::Provenance("students may only be trained on public data".into()));
    }
    fit(data, cfg, rng)
}

fn split(n: usize, eval_fraction: f64, rng: &RngStream) -> Result<(Vec<usize>, Vec<usize>)> {
    let n_eval = ((n as f64) * eval_fraction).round() as usize;
    if n_eval == 0 || n_eval >= n {
        return Err(Error::Config(format!(
            "eval_fraction {eval_fraction} leaves an empty split of {n} private rows"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng.rng());
    let (eval, train) = order.split_at(n_eval);
    let (mut train, mut eval) = (train.to_vec(), eval.to_vec());
    train.sort_unstable();
    eval.sort_unstable();
    Ok((train, eval))
}

struct Fold<'a> {
    cfg: &'a ExperimentConfig,
    index: usize,
    train: LabeledDataset,
    eval: LabeledDataset,
    public: &'a LabeledDataset,
}

impl Fold<'_> {
    fn stream(&self, role: u64) -> RngStream {
        RngStream::new(self.cfg.seed, role).derive(self.index as u64)
    }

    fn run(&self, method: Method) -> Result<MethodResult> {
        let start = Instant::now();
        let mut out = MethodResult::new(method, self.index);
        out.train_size = self.train.len();
        let outcome = match method {
            Method::Nonprivate => self.nonprivate(&mut out),
            Method::Dpsgd => self.dpsgd(&mut out),
            Method::Pate | Method::PateSingle => self.pate(method, &mut out),
            Method::Psn | Method::PsnSingle => self.psn(method, &mut out),
        };
        match outcome {
            Ok(()) => {}
            Err(e @ Error::Infeasible(_)) => {
                out.accuracy = None;
                out.error = Some(e.to_string());
            }
            Err(e) => return Err(e),
        }
        if let Some(spent) = out.consumed {
            if !spent.within(&self.cfg.target) {
                return Err(Error::Infeasible(format!(
                    "{method} consumed (ε={}, δ={}) over the target (ε={}, δ={})",
                    spent.epsilon, spent.delta, self.cfg.target.epsilon, self.cfg.target.delta
                )));
            }
        }
        if self.cfg.record_timings {
            out.wall_clock_ms = Some(start.elapsed().as_millis() as u64);
        }
        Ok(out)
    }

    fn nonprivate(&self, out: &mut MethodResult) -> Result<()> {
        let model = fit(&self.train, &self.cfg.learner, &self.stream(role::BASELINE_FIT))?;
        out.accuracy = Some(model.accuracy(&self.eval)?);
        Ok(())
    }

    fn dpsgd(&self, out: &mut MethodResult) -> Result<()> {
        let cfg = self.cfg;
        let n = self.train.len();
        let mut sgd = cfg.dpsgd;
        let steps = poisson_steps(n, &sgd);
        let rate = poisson_rate(n, &sgd);
        let sub = if rate < 1.0 { Some(Subsampling::fresh(rate)?) } else { None };
        let sigma = calibrate_sigma(cfg.target, steps, sub, sgd.clip_norm, &cfg.orders)?;
        sgd.noise_multiplier = sigma / sgd.clip_norm;
        let accounting = DpsgdAccounting { target: Some(cfg.target), delta: cfg.target.delta, orders: cfg.orders.clone() };
        // σ / C · C can land one ulp under the calibrated σ
        let mut nudges = 0;
        let (model, spent) = loop {
            match dpsgd_fit(&self.train, &sgd, &self.stream(role::BASELINE_FIT), &accounting) {
                Err(Error::Infeasible(_)) if nudges < 8 => {
                    sgd.noise_multiplier *= 1.0 + 1e-12;
                    nudges += 1;
                }
                other => break other?,
            }
        };
        out.noise_scale = Some(sgd.noise_multiplier * sgd.clip_norm);
        out.noise_multiplier = Some(sgd.noise_multiplier);
        out.queries = steps;
        out.consumed = Some(spent);
        out.accuracy = Some(model.accuracy(&self.eval)?);
        Ok(())
    }

    fn train_teachers(&self, subsets: &[Vec<usize>]) -> Result<Vec<SoftmaxClassifier>> {
        let base = self.stream(role::TEACHER_FIT);
        subsets
            .par_iter()
            .enumerate()
            .map(|(i, idx)| fit(&self.train.select(idx)?, &self.cfg.learner, &base.derive(i as u64)))
            .collect()
    }

    fn pate(&self, method: Method, out: &mut MethodResult) -> Result<()> {
        let teachers = method.teachers(self.cfg.num_teachers);
        if teachers > self.train.len() {
            return Err(Error::Config(format!(
                "{teachers} teachers need at least as many private rows, have {}",
                self.train.len()
            )));
        }
        let parts = partition_disjoint(self.train.len(), teachers, &self.stream(role::TEACHER_DATA))?;
        let subsets: Vec<Vec<usize>> = parts.iter().map(|p| p.as_slice().to_vec()).collect();
        let ensemble = TeacherEnsemble::uniform(self.train_teachers(&subsets)?)?;
        self.teach(ensemble, None, out)
    }

    fn psn(&self, method: Method, out: &mut MethodResult) -> Result<()> {
        let teachers = method.teachers(self.cfg.num_teachers);
        let base = self.stream(role::TEACHER_DATA);
        let mut subsets = Vec::with_capacity(teachers);
        for i in 0..teachers {
            let (set, redraws) = poisson_subsample_nonempty(
                self.train.len(),
                self.cfg.gamma,
                &base.derive(i as u64),
                MAX_SUBSAMPLE_DRAWS,
            )?;
            out.subsample_redraws += redraws;
            subsets.push(set.as_slice().to_vec());
        }
        let ensemble = TeacherEnsemble::uniform(self.train_teachers(&subsets)?)?;
        self.teach(ensemble, Some(Subsampling::shared(self.cfg.gamma)?), out)
    }

    /// Weight balancing, pseudo-labeling and student training, all charged
    /// against one calibrated mechanism.
    fn teach(
        &self,
        mut ensemble: TeacherEnsemble,
        subsampling: Option<Subsampling>,
        out: &mut MethodResult,
    ) -> Result<()> {
        let cfg = self.cfg;
        out.num_teachers = ensemble.len();
        let mean_teacher = ensemble
            .teachers()
            .iter()
            .map(|t| t.accuracy(&self.eval))
            .sum::<Result<f64>>()?
            / ensemble.len() as f64;
        out.teacher_accuracy = Some(mean_teacher);

        let n_public = self.public.len();
        let balance = if ensemble.len() > 1 { cfg.wma_queries } else { 0 };
        let labeled = cfg.query_count.unwrap_or(n_public.saturating_sub(balance));
        if labeled == 0 || labeled + balance > n_public {
            return Err(Error::Config(format!(
                "{labeled} pseudo-labels plus {balance} balancing queries exceed {n_public} public rows"
            )));
        }
        let total = (labeled + balance) as u64;

        let family = cfg.noise_family;
        let sensitivity = family.simplex_sensitivity();
        let scale = calibrate_scale(cfg.target, total, family, sensitivity, subsampling, &cfg.orders)?;
        let mech = MechanismSpec::new(family, scale, sensitivity)?;
        out.noise_scale = Some(scale);

        if balance > 0 {
            let rows: Vec<usize> = (n_public - balance..n_public).collect();
            let slice = self.public.select(&rows)?;
            let weights = balance_weights(&ensemble, &slice, &mech, cfg.wma_beta, &self.stream(role::BALANCE))?;
            ensemble.set_weights(weights)?;
        }
        out.teacher_weights = ensemble.weights().to_vec();
        out.aggregate_noise_std = Some(ensemble.aggregate_noise_std(scale));

        let rows: Vec<usize> = (0..labeled).collect();
        let public = self.public.select(&rows)?;
        let accounting = QueryAccounting {
            target: cfg.target,
            subsampling,
            orders: cfg.orders.clone(),
            prior_queries: balance as u64,
        };
        let batch = pseudo_label(&ensemble, &public, &mech, &self.stream(role::LABEL_NOISE), &accounting)?;
        let agree = batch.labels().iter().zip(public.labels()).filter(|(a, b)| a == b).count();
        out.label_accuracy = Some(agree as f64 / labeled as f64);
        out.queries = batch.total_queries();
        out.consumed = Some(batch.consumed());

        let student = fit_student(&batch, &cfg.learner, &self.stream(role::STUDENT_FIT))?;
        out.accuracy = Some(student.accuracy(&self.eval)?);
        Ok(())
    }
}

/// Runs every configured method on every fold. Infeasible budgets are
/// recorded in the report; a method that ends up over budget is an error.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    private: &LabeledDataset,
    public: &LabeledDataset,
) -> Result<ExperimentReport> {
    cfg.validate()?;
    if private.provenance() != Provenance::Private {
        return Err(Error::Provenance("the private dataset is not tagged private".into()));
    }
    if public.provenance() != Provenance::Public {
        return Err(Error::Provenance("the public dataset is not tagged public".into()));
    }
    if private.num_features() != public.num_features() || private.num_classes() != public.num_classes() {
        return Err(Error::Config("private and public datasets disagree on shape".into()));
    }

    let mut results = Vec::new();
    for index in 0..cfg.folds {
        let split_stream = RngStream::new(cfg.seed, role::SPLIT).derive(index as u64);
        let (train, eval) = split(private.len(), cfg.eval_fraction, &split_stream)?;
        let fold = Fold {
            cfg,
            index,
            train: private.select(&train)?,
            eval: private.select(&eval)?,
            public,
        };
        for &method in &cfg.methods {
            results.push(fold.run(method)?);
        }
    }
    Ok(ExperimentReport { version: REPORT_VERSION, config: cfg.clone(), seeds: vec![cfg.seed], results })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ExperimentConfig {
        ExperimentConfig {
            data: super::super::config::DataConfig {
                private: DataSource::Synthetic { n: 300 },
                public: DataSource::Synthetic { n: 120 },
                ..Default::default()
            },
            query_count: Some(40),
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn split_sizes() {
        let (train, eval) = split(10, 0.3, &RngStream::new(0, 0)).unwrap();
        assert_eq!((train.len(), eval.len()), (7, 3));
        assert!(split(3, 0.1, &RngStream::new(0, 0)).is_err());
    }

    #[test]
    fn provenance_is_enforced() {
        let cfg = small();
        let (private, public) = load_datasets(&cfg).unwrap();
        assert!(matches!(run_experiment(&cfg, &public, &public), Err(Error::Provenance(_))));
        assert!(matches!(run_experiment(&cfg, &private, &private), Err(Error::Provenance(_))));
        assert!(matches!(
            student_fit(&private, &cfg.learner, &RngStream::new(0, 0)),
            Err(Error::Provenance(_))
        ));
    }

    #[test]
    fn every_method_reports_within_budget() {
        let cfg = small();
        let (private, public) = load_datasets(&cfg).unwrap();
        let report = run_experiment(&cfg, &private, &public).unwrap();
        assert_eq!(report.results.len(), Method::ALL.len());
        for r in &report.results {
            assert!(r.error.is_none(), "{:?}", r);
            if r.method.is_private() {
                assert!(r.consumed.unwrap().within(&cfg.target));
            }
        }
        assert_eq!(report.result(Method::Psn, 0).unwrap().num_teachers, 3);
        assert_eq!(report.result(Method::PsnSingle, 0).unwrap().num_teachers, 1);
    }

    #[test]
    fn infeasible_calibration_is_recorded() {
        let mut cfg = small();
        cfg.methods = vec![Method::Pate];
        cfg.target.epsilon = 1e-9;
        let (private, public) = load_datasets(&cfg).unwrap();
        let report = run_experiment(&cfg, &private, &public).unwrap();
        let r = &report.results[0];
        assert!(r.accuracy.is_none());
        assert!(r.error.as_deref().unwrap().contains("infeasible"));
    }

    #[test]
    fn too_many_queries_is_a_config_error() {
        let mut cfg = small();
        cfg.methods = vec![Method::Psn];
        cfg.query_count = Some(500);
        let (private, public) = load_datasets(&cfg).unwrap();
        assert!(matches!(run_experiment(&cfg, &private, &public), Err(Error::Config(_))));
    }
}
