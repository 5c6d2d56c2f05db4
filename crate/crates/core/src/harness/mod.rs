//! Experiment orchestration: build data from a config, train, evaluate on
//! random test times and write CSV tables and SVG plots.

pub mod config;
pub mod plot;
mod output;

pub use config::{preset, preset_names, preset_text, ExperimentConfig, Mode};
pub use output::{generate_data, read_run, write_outputs, RunSummary};

use std::time::Instant;

use crate::data::{synthesize_observations, test_points, ObservationSet};
use crate::error::{Error, Result};
use crate::problems::Problem;
use crate::solvers::{stability_boundary, SolverScheme, StabilityRegion, Trajectory};
use crate::train::{finetune, finetune_without_pretrain, pretrain, train_discovery, TrainingReport};

/// Mean of squared differences.
pub fn compute_mse(predicted: &[f64], truth: &[f64]) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(Error::shape(
            "compute_mse",
            format!("{} predictions for {} true values", predicted.len(), truth.len()),
        ));
    }
    if predicted.is_empty() {
        return Err(Error::invalid("compute_mse of empty series"));
    }
    let sum: f64 = predicted.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(sum / predicted.len() as f64)
}

/// `|estimate - truth| / |truth|`; undefined for a zero truth.
pub fn relative_error(estimate: f64, truth: f64) -> Result<f64> {
    if truth == 0.0 {
        return Err(Error::invalid("relative error against a zero true value"));
    }
    Ok((estimate - truth).abs() / truth.abs())
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateMetric {
    pub state: String,
    pub mse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEstimate {
    pub name: String,
    pub truth: f64,
    pub initial: f64,
    pub estimate: f64,
    pub rel_error: f64,
    pub lower: f64,
    pub upper: f64,
}

impl ParamEstimate {
    pub fn within_bounds(&self) -> bool {
        self.estimate >= self.lower && self.estimate <= self.upper
    }
}

/// One scheme's outcome in a compare-lmm run.
#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub scheme: String,
    pub metrics: Vec<StateMetric>,
    /// Seconds per stage: training for discovery, pre-training and
    /// fine-tuning for estimation.
    pub seconds: Vec<f64>,
    pub failure: Option<String>,
}

/// Predictions and truth at the test times, kept for plotting.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Evaluation {
    pub times: Vec<f64>,
    pub predicted: Vec<Vec<f64>>,
    pub exact: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub state_names: Vec<String>,
    pub metrics: Vec<StateMetric>,
    pub params: Vec<ParamEstimate>,
    /// Loss history; pre-training followed by fine-tuning for estimation.
    pub training: TrainingReport,
    /// Epochs of `training` that belong to pre-training.
    pub pretrain_epochs: usize,
    pub compare: Vec<CompareRow>,
    pub stability: Vec<StabilityRegion>,
    pub evaluation: Evaluation,
    pub observations: Option<ObservationSet>,
    /// Wall-clock seconds per stage, `(stage, seconds)`.
    pub timing: Vec<(String, f64)>,
    pub failure: Option<String>,
}

impl ExperimentReport {
    fn empty(config: &ExperimentConfig, problem: &Problem) -> Self {
        Self {
            config: config.clone(),
            state_names: problem.state_names(),
            metrics: Vec::new(),
            params: Vec::new(),
            training: TrainingReport::default(),
            pretrain_epochs: 0,
            compare: Vec::new(),
            stability: Vec::new(),
            evaluation: Evaluation::default(),
            observations: None,
            timing: Vec::new(),
            failure: None,
        }
    }

    pub fn mse(&self, state: &str) -> Option<f64> {
        self.metrics.iter().find(|m| m.state == state).map(|m| m.mse)
    }

    pub fn param(&self, name: &str) -> Option<&ParamEstimate> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn total_seconds(&self) -> f64 {
        self.timing.iter().map(|(_, s)| s).sum()
    }
}

/// Observations and the fine reference for a config.
pub fn build_data(cfg: &ExperimentConfig, problem: &Problem) -> Result<(ObservationSet, Trajectory)> {
    let grid = problem.grid(cfg.dt)?;
    let reference = problem.reference_solution(&grid)?;
    let obs = synthesize_observations(&reference, cfg.noise, cfg.data_seed)?;
    let fine = problem.fine_reference(cfg.dt)?;
    Ok((obs, fine))
}

fn evaluate(
    problem: &Problem,
    fine: &Trajectory,
    times: Vec<f64>,
    predicted: Vec<Vec<f64>>,
) -> Result<(Vec<StateMetric>, Evaluation)> {
    let exact = problem.exact_at(fine, &times);
    let metrics = problem
        .state_names()
        .into_iter()
        .enumerate()
        .map(|(s, state)| {
            let p: Vec<f64> = predicted.iter().map(|r| r[s]).collect();
            let e: Vec<f64> = exact.iter().map(|r| r[s]).collect();
            Ok(StateMetric {
                state,
                mse: compute_mse(&p, &e)?,
            })
        })
        .collect::<Result<_>>()?;
    Ok((metrics, Evaluation { times, predicted, exact }))
}

struct TrainOutcome {
    metrics: Vec<StateMetric>,
    evaluation: Evaluation,
    params: Vec<ParamEstimate>,
    training: TrainingReport,
    pretrain_epochs: usize,
    timing: Vec<(String, f64)>,
    failure: Option<String>,
}

fn run_training(
    cfg: &ExperimentConfig,
    mode: Mode,
    scheme: &SolverScheme,
    problem: &Problem,
    obs: &ObservationSet,
    fine: &Trajectory,
) -> Result<TrainOutcome> {
    let spec = cfg.network_spec(problem)?;
    let times = test_points(problem.t0, problem.t_end, cfg.test_points, cfg.test_seed)?;
    let mut timing = Vec::new();
    let mut pretrain_epochs = 0;

    let (predicted, training, params) = match mode {
        Mode::Discover => {
            let clock = Instant::now();
            let (model, report) = train_discovery(problem, obs, spec, scheme.clone(), &cfg.train, cfg.init_seed)?;
            timing.push(("training".to_string(), clock.elapsed().as_secs_f64()));
            (model.predict(&times), report, None)
        }
        Mode::Estimate | Mode::EstimateNoPretrain => {
            let (model, report) = if mode == Mode::Estimate {
                let clock = Instant::now();
                let (pre, mut report) = pretrain(
                    problem,
                    &obs.grid,
                    spec,
                    scheme,
                    &cfg.pretrain,
                    cfg.init_seed,
                    cfg.lambda_seed,
                )?;
                timing.push(("pretraining".to_string(), clock.elapsed().as_secs_f64()));
                pretrain_epochs = report.history.len();
                let clock = Instant::now();
                let (model, ft) = finetune(&pre, problem, obs, &cfg.train)?;
                timing.push(("finetuning".to_string(), clock.elapsed().as_secs_f64()));
                let initial = pre.physical.clone();
                report.extend(ft);
                report.initial_physical = initial;
                (model, report)
            } else {
                let clock = Instant::now();
                let out = finetune_without_pretrain(problem, obs, spec, &cfg.train, cfg.init_seed, cfg.lambda_seed)?;
                timing.push(("finetuning".to_string(), clock.elapsed().as_secs_f64()));
                out
            };
            let params = problem
                .param_names
                .iter()
                .enumerate()
                .map(|(i, name)| {
                    Ok(ParamEstimate {
                        name: name.to_string(),
                        truth: problem.true_params[i],
                        initial: report.initial_physical[i],
                        estimate: model.physical[i],
                        rel_error: relative_error(model.physical[i], problem.true_params[i])?,
                        lower: problem.bounds[i].0,
                        upper: problem.bounds[i].1,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let predicted = model.predict(&times).map(|t| {
                (0..t.rows())
                    .map(|r| (0..t.cols()).map(|c| t.get(r, c)).collect())
                    .collect::<Vec<Vec<f64>>>()
            });
            (predicted, report, Some(params))
        }
        other => return Err(Error::Config(format!("{other} is not a training mode"))),
    };

    let mut failure = training.failure.clone();
    let (metrics, evaluation) = match predicted {
        Ok(p) => evaluate(problem, fine, times, p)?,
        Err(e) => {
            failure.get_or_insert(format!("prediction: {e}"));
            (Vec::new(), Evaluation::default())
        }
    };
    Ok(TrainOutcome {
        metrics,
        evaluation,
        params: params.unwrap_or_default(),
        training,
        pretrain_epochs,
        timing,
        failure,
    })
}

/// Runs one experiment. Configuration and data-generation problems are
/// errors; a training run that aborts still produces a report, with
/// `failure` set.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let problem = cfg.build_problem()?;
    let mut report = ExperimentReport::empty(cfg, &problem);

    match cfg.mode {
        Mode::Stability => {
            let clock = Instant::now();
            for scheme in cfg.stability_schemes() {
                report.stability.push(stability_boundary(&scheme, cfg.stability_points)?);
            }
            report.timing.push(("stability".to_string(), clock.elapsed().as_secs_f64()));
        }
        Mode::CompareLmm => {
            let (obs, fine) = build_data(cfg, &problem)?;
            for scheme in &cfg.schemes {
                let row = match run_training(cfg, cfg.compare_task, scheme, &problem, &obs, &fine) {
                    Ok(out) => {
                        report
                            .timing
                            .extend(out.timing.iter().map(|(stage, s)| (format!("{scheme}:{stage}"), *s)));
                        CompareRow {
                            scheme: scheme.name(),
                            metrics: out.metrics,
                            seconds: out.timing.iter().map(|(_, s)| *s).collect(),
                            failure: out.failure,
                        }
                    }
                    Err(e) => CompareRow {
                        scheme: scheme.name(),
                        metrics: Vec::new(),
                        seconds: Vec::new(),
                        failure: Some(e.to_string()),
                    },
                };
                if let Some(f) = &row.failure {
                    log::warn!("compare-lmm: {} failed: {f}", row.scheme);
                    report.failure.get_or_insert(format!("{}: {f}", row.scheme));
                }
                report.compare.push(row);
            }
            report.observations = Some(obs);
        }
        mode => {
            let (obs, fine) = build_data(cfg, &problem)?;
            let scheme = cfg.scheme.clone();
            match run_training(cfg, mode, &scheme, &problem, &obs, &fine) {
                Ok(out) => {
                    report.metrics = out.metrics;
                    report.evaluation = out.evaluation;
                    report.params = out.params;
                    report.training = out.training;
                    report.pretrain_epochs = out.pretrain_epochs;
                    report.timing = out.timing;
                    report.failure = out.failure;
                }
                Err(e) => report.failure = Some(e.to_string()),
            }
            report.observations = Some(obs);
        }
    }
    if let Some(f) = &report.failure {
        log::warn!("{}: {f}", cfg.name);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mse_examples() {
        assert_eq!(compute_mse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(compute_mse(&[0.0, 0.0], &[1.0, 3.0]).unwrap(), 5.0);
        assert!(compute_mse(&[1.0], &[1.0, 2.0]).is_err());
        assert!(compute_mse(&[], &[]).is_err());
    }

    #[test]
    fn relative_error_examples() {
        assert!((relative_error(12.9, 12.5).unwrap() - 0.032).abs() < 1e-12);
        assert_eq!(relative_error(-2.0, -4.0).unwrap(), 0.5);
        assert!(relative_error(1.0, 0.0).is_err());
    }

    fn tiny(mode: &str) -> ExperimentConfig {
        ExperimentConfig::parse(&format!(
            "mode = {mode}\nproblem.name = fn\nproblem.t_end = 1\nsolver.scheme = ab2\nsolver.dt = 0.1\n\
             network.hidden_layers = 1\nnetwork.hidden_width = 4\ntrain.adam_epochs = 3\ntrain.lbfgs_max_iter = 2\n\
             pretrain.adam_epochs = 3\npretrain.lbfgs_max_iter = 2\neval.test_points = 10\n"
        ))
        .unwrap()
    }

    #[test]
    fn tiny_runs_fill_reports() {
        let r = run_experiment(&tiny("discover")).unwrap();
        assert!(r.failure.is_none(), "{:?}", r.failure);
        assert_eq!(r.metrics.len(), 2);
        assert!(r.params.is_empty());

        let r = run_experiment(&tiny("estimate")).unwrap();
        assert!(r.failure.is_none(), "{:?}", r.failure);
        assert_eq!(r.params.len(), 4);
        assert!(r.pretrain_epochs > 0 && r.training.history.len() > r.pretrain_epochs);
        assert_eq!(r.evaluation.times.len(), 10);
    }

    #[test]
    fn stability_mode_traces_every_method() {
        let cfg = ExperimentConfig::parse("mode = stability\nstability.points = 101\n").unwrap();
        let r = run_experiment(&cfg).unwrap();
        assert_eq!(r.stability.len(), 15);
        assert!(r.metrics.is_empty());
    }

    #[test]
    fn same_seeds_same_numbers() {
        let a = run_experiment(&tiny("estimate-no-pretrain")).unwrap();
        let b = run_experiment(&tiny("estimate-no-pretrain")).unwrap();
        assert_eq!(a.metrics, b.metrics);
        assert_eq!(a.params, b.params);
        assert_eq!(a.training, b.training);
    }
}
