//! Flat `dotted.key = value` experiment configs.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::network::NetworkSpec;
use crate::optim::Schedule;
use crate::problems::{Problem, ProblemKind};
use crate::solvers::{all_methods, LmmCoefficients, SolverScheme};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Discover,
    Estimate,
    EstimateNoPretrain,
    Stability,
    CompareLmm,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Discover => "discover",
            Mode::Estimate => "estimate",
            Mode::EstimateNoPretrain => "estimate-no-pretrain",
            Mode::Stability => "stability",
            Mode::CompareLmm => "compare-lmm",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "discover" => Ok(Mode::Discover),
            "estimate" => Ok(Mode::Estimate),
            "estimate-no-pretrain" => Ok(Mode::EstimateNoPretrain),
            "stability" => Ok(Mode::Stability),
            "compare-lmm" => Ok(Mode::CompareLmm),
            other => Err(Error::Config(format!("unknown mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    pub mode: Mode,
    pub problem: ProblemKind,
    /// Spatial intervals for the heat equation.
    pub heat_intervals: usize,
    pub t0: f64,
    pub t_end: f64,
    pub scheme: SolverScheme,
    pub dt: f64,
    /// Schemes run by compare-lmm and stability modes.
    pub schemes: Vec<SolverScheme>,
    pub stability_points: usize,
    /// What compare-lmm runs per scheme: `Discover` or `Estimate`.
    pub compare_task: Mode,
    pub noise: f64,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub skip: bool,
    /// Discovery schedule, or the fine-tuning schedule in estimation modes.
    pub train: Schedule,
    pub pretrain: Schedule,
    pub data_seed: u64,
    pub init_seed: u64,
    pub lambda_seed: u64,
    pub test_seed: u64,
    pub test_points: usize,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            mode: Mode::Discover,
            problem: ProblemKind::FitzHughNagumo,
            heat_intervals: 20,
            t0: 0.0,
            t_end: 20.0,
            scheme: SolverScheme::Rkf45,
            dt: 0.1,
            schemes: Vec::new(),
            stability_points: 721,
            compare_task: Mode::Discover,
            noise: 0.0,
            hidden_layers: 4,
            hidden_width: 64,
            skip: false,
            train: Schedule::discovery(),
            pretrain: Schedule::pretrain(),
            data_seed: 1,
            init_seed: 1,
            lambda_seed: 1,
            test_seed: 7,
            test_points: 200,
            output_dir: PathBuf::from("out"),
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value '{value}' for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("bad boolean '{value}' for {key}"))),
    }
}

fn parse_schemes(key: &str, value: &str) -> Result<Vec<SolverScheme>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|e| Error::Config(format!("{key}: {e}"))))
        .collect()
}

fn join_schemes(s: &[SolverScheme]) -> String {
    s.iter().map(|x| x.name()).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    /// Reads `key = value` lines; `#` starts a comment. Unset keys keep the
    /// defaults of the chosen problem, unknown keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            let (k, v) = (k.trim().to_string(), v.trim().to_string());
            if entries.insert(k.clone(), v).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key {k}", n + 1)));
            }
        }

        let mut cfg = ExperimentConfig::default();
        if let Some(p) = entries.get("problem.name") {
            cfg.problem = p.parse().map_err(|e: Error| Error::Config(e.to_string()))?;
            let problem = Problem::from_kind(cfg.problem);
            cfg.t0 = problem.t0;
            cfg.t_end = problem.t_end;
        }
        for (k, v) in &entries {
            let (k, v) = (k.as_str(), v.as_str());
            match k {
                "name" => cfg.name = v.to_string(),
                "mode" => cfg.mode = v.parse()?,
                "problem.name" => {}
                "problem.heat_intervals" => cfg.heat_intervals = parse_value(k, v)?,
                "problem.t0" => cfg.t0 = parse_value(k, v)?,
                "problem.t_end" => cfg.t_end = parse_value(k, v)?,
                "solver.scheme" => cfg.scheme = v.parse().map_err(|e: Error| Error::Config(e.to_string()))?,
                "solver.dt" => cfg.dt = parse_value(k, v)?,
                "solver.schemes" => cfg.schemes = parse_schemes(k, v)?,
                "stability.points" => cfg.stability_points = parse_value(k, v)?,
                "compare.task" => cfg.compare_task = v.parse()?,
                "data.noise" => cfg.noise = parse_value(k, v)?,
                "network.hidden_layers" => cfg.hidden_layers = parse_value(k, v)?,
                "network.hidden_width" => cfg.hidden_width = parse_value(k, v)?,
                "network.skip" => cfg.skip = parse_bool(k, v)?,
                "train.adam_lr" => cfg.train.adam_lr = parse_value(k, v)?,
                "train.adam_epochs" => cfg.train.adam_epochs = parse_value(k, v)?,
                "train.lbfgs_lr" => cfg.train.lbfgs_lr = parse_value(k, v)?,
                "train.lbfgs_max_iter" => cfg.train.lbfgs_max_iter = parse_value(k, v)?,
                "pretrain.adam_lr" => cfg.pretrain.adam_lr = parse_value(k, v)?,
                "pretrain.adam_epochs" => cfg.pretrain.adam_epochs = parse_value(k, v)?,
                "pretrain.lbfgs_lr" => cfg.pretrain.lbfgs_lr = parse_value(k, v)?,
                "pretrain.lbfgs_max_iter" => cfg.pretrain.lbfgs_max_iter = parse_value(k, v)?,
                "seeds.data" => cfg.data_seed = parse_value(k, v)?,
                "seeds.init" => cfg.init_seed = parse_value(k, v)?,
                "seeds.lambda" => cfg.lambda_seed = parse_value(k, v)?,
                "seeds.test" => cfg.test_seed = parse_value(k, v)?,
                "eval.test_points" => cfg.test_points = parse_value(k, v)?,
                "output.dir" => cfg.output_dir = PathBuf::from(v),
                other => return Err(Error::Config(format!("unknown key '{other}'"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical text form; parsing it gives back the same config.
    pub fn to_text(&self) -> String {
        let s = |v: &Schedule, p: &str| {
            format!(
                "{p}.adam_lr = {}\n{p}.adam_epochs = {}\n{p}.lbfgs_lr = {}\n{p}.lbfgs_max_iter = {}\n",
                v.adam_lr, v.adam_epochs, v.lbfgs_lr, v.lbfgs_max_iter
            )
        };
        let mut out = format!(
            "name = {}\nmode = {}\nproblem.name = {}\nproblem.heat_intervals = {}\nproblem.t0 = {}\nproblem.t_end = {}\n\
             solver.scheme = {}\nsolver.dt = {}\n",
            self.name, self.mode, self.problem, self.heat_intervals, self.t0, self.t_end, self.scheme, self.dt
        );
        if !self.schemes.is_empty() {
            out += &format!("solver.schemes = {}\n", join_schemes(&self.schemes));
        }
        out += &format!(
            "stability.points = {}\ncompare.task = {}\ndata.noise = {}\nnetwork.hidden_layers = {}\nnetwork.hidden_width = {}\nnetwork.skip = {}\n",
            self.stability_points, self.compare_task, self.noise, self.hidden_layers, self.hidden_width, self.skip
        );
        out += &s(&self.train, "train");
        out += &s(&self.pretrain, "pretrain");
        out += &format!(
            "seeds.data = {}\nseeds.init = {}\nseeds.lambda = {}\nseeds.test = {}\neval.test_points = {}\noutput.dir = {}\n",
            self.data_seed,
            self.init_seed,
            self.lambda_seed,
            self.test_seed,
            self.test_points,
            self.output_dir.display()
        );
        out
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.t_end > self.t0) {
            return bad(format!("empty horizon [{}, {}]", self.t0, self.t_end));
        }
        if self.mode != Mode::Stability {
            crate::solvers::TimeGrid::spanning(self.t0, self.t_end, self.dt)
                .map_err(|e| Error::Config(e.to_string()))?;
        }
        if !(self.noise >= 0.0) {
            return bad(format!("noise must be >= 0, got {}", self.noise));
        }
        if self.test_points == 0 {
            return bad("eval.test_points must be positive".into());
        }
        if self.mode == Mode::Stability {
            if self.stability_points < 3 {
                return bad("stability.points must be at least 3".into());
            }
            if self.schemes.iter().any(|s| matches!(s, SolverScheme::Rkf45)) {
                return bad("stability regions are defined for multistep schemes only".into());
            }
        }
        if self.mode == Mode::CompareLmm {
            if self.schemes.is_empty() {
                return bad("compare-lmm needs solver.schemes".into());
            }
            if !matches!(self.compare_task, Mode::Discover | Mode::Estimate) {
                return bad("compare.task must be discover or estimate".into());
            }
        }
        self.train.validate().map_err(|e| Error::Config(format!("train: {e}")))?;
        self.pretrain.validate().map_err(|e| Error::Config(format!("pretrain: {e}")))?;
        self.build_problem()?;
        Ok(())
    }

    pub fn build_problem(&self) -> Result<Problem> {
        let base = match self.problem {
            ProblemKind::Heat => Problem::heat(self.heat_intervals)?,
            kind => Problem::from_kind(kind),
        };
        base.with_horizon(self.t0, self.t_end)
            .map_err(|e| Error::Config(e.to_string()))
    }

    pub fn network_spec(&self, problem: &Problem) -> Result<NetworkSpec> {
        let n = problem.state_dim();
        let input = match self.mode {
            Mode::Discover => n,
            Mode::CompareLmm if self.compare_task == Mode::Discover => n,
            _ => 1,
        };
        NetworkSpec::new(input, n, self.hidden_layers, self.hidden_width, self.skip)
            .map_err(|e| Error::Config(e.to_string()))
    }

    /// Multistep methods whose regions the stability mode traces; an empty
    /// `solver.schemes` means all of them.
    pub fn stability_schemes(&self) -> Vec<LmmCoefficients> {
        if self.schemes.is_empty() {
            return all_methods();
        }
        self.schemes
            .iter()
            .filter_map(|s| match s {
                SolverScheme::Lmm(c) => Some(c.clone()),
                SolverScheme::Rkf45 => None,
            })
            .collect()
    }

    /// Replaces every seed with `seed`.
    pub fn override_seeds(&mut self, seed: u64) {
        self.data_seed = seed;
        self.init_seed = seed;
        self.lambda_seed = seed;
        self.test_seed = seed;
    }
}

const PRESETS: &[(&str, &str)] = &[
    ("fn-discover-rk-0", include_str!("presets/fn-discover-rk-0.cfg")),
    ("fn-discover-bdf2-0", include_str!("presets/fn-discover-bdf2-0.cfg")),
    ("fn-discover-bdf2-20", include_str!("presets/fn-discover-bdf2-20.cfg")),
    ("fn-estimate-ab2-20", include_str!("presets/fn-estimate-ab2-20.cfg")),
    ("ablation-fn-nopretrain-20", include_str!("presets/ablation-fn-nopretrain-20.cfg")),
    ("lorenz-discover-bdf2-10", include_str!("presets/lorenz-discover-bdf2-10.cfg")),
    ("lorenz-estimate-ab2-0", include_str!("presets/lorenz-estimate-ab2-0.cfg")),
    ("heat-estimate-bdf2-20", include_str!("presets/heat-estimate-bdf2-20.cfg")),
    ("compare-lmm-fn", include_str!("presets/compare-lmm-fn.cfg")),
    ("stability-all", include_str!("presets/stability-all.cfg")),
];

pub fn preset_names() -> Vec<&'static str> {
    PRESETS.iter().map(|(n, _)| *n).collect()
}

pub fn preset_text(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

pub fn preset(name: &str) -> Result<ExperimentConfig> {
    let text = preset_text(name).ok_or_else(|| {
        Error::Config(format!("unknown preset '{name}' (known: {})", preset_names().join(", ")))
    })?;
    ExperimentConfig::parse(text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_defaults() {
        let cfg = ExperimentConfig::parse(
            "# heat run\nproblem.name = heat   # trailing\nmode = estimate\nsolver.scheme = bdf2\nsolver.dt = 0.02\n",
        )
        .unwrap();
        assert_eq!(cfg.problem, ProblemKind::Heat);
        assert_eq!(cfg.t_end, 2.5);
        assert_eq!(cfg.scheme.name(), "bdf2");
    }

    #[test]
    fn rejects_bad_input() {
        assert!(ExperimentConfig::parse("bogus.key = 1").is_err());
        assert!(ExperimentConfig::parse("solver.dt = 0.3").is_err());
        assert!(ExperimentConfig::parse("mode = nope").is_err());
        assert!(ExperimentConfig::parse("data.noise = 1\ndata.noise = 2").is_err());
        assert!(ExperimentConfig::parse("no equals sign").is_err());
    }

    #[test]
    fn text_roundtrip_and_presets() {
        for name in preset_names() {
            let cfg = preset(name).unwrap();
            assert_eq!(ExperimentConfig::parse(&cfg.to_text()).unwrap(), cfg, "{name}");
        }
        assert!(preset("missing").is_err());
    }
}
