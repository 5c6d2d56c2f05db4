//! Run directories: CSV tables, SVG plots, a plain-text summary and a
//! separate timing file, so everything except `timing.csv` and the
//! seconds columns of `compare.csv` is identical across reruns.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::plot::{Plot, Series, SeriesStyle};
use super::{build_data, ExperimentConfig, ExperimentReport, Mode, StateMetric};
use crate::error::{Error, Result};
use crate::problems::{trajectory_table, ProblemKind};

fn write(dir: &Path, name: &str, text: &str, written: &mut Vec<PathBuf>) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, text)?;
    written.push(path);
    Ok(())
}

fn metrics_csv(metrics: &[StateMetric]) -> String {
    let mut s = String::from("state,mse\n");
    for m in metrics {
        let _ = writeln!(s, "{},{}", m.state, m.mse);
    }
    s
}

fn stage_columns(task: Mode) -> &'static [&'static str] {
    match task {
        Mode::Discover => &["train_seconds"],
        _ => &["pretrain_seconds", "finetune_seconds"],
    }
}

/// Per-scheme table: MSE per state followed by training seconds.
pub(crate) fn compare_csv(report: &ExperimentReport) -> String {
    let mut s = String::from("scheme");
    for name in &report.state_names {
        let _ = write!(s, ",mse_{name}");
    }
    let stages = stage_columns(report.config.compare_task);
    for c in stages {
        let _ = write!(s, ",{c}");
    }
    s.push_str(",status\n");
    for row in &report.compare {
        s.push_str(&row.scheme);
        for name in &report.state_names {
            match row.metrics.iter().find(|m| &m.state == name) {
                Some(m) => {
                    let _ = write!(s, ",{}", m.mse);
                }
                None => s.push_str(",nan"),
            }
        }
        for k in 0..stages.len() {
            let _ = write!(s, ",{:.3}", row.seconds.get(k).copied().unwrap_or(f64::NAN));
        }
        let _ = writeln!(s, ",{}", if row.failure.is_some() { "failed" } else { "ok" });
    }
    s
}

fn summary_text(report: &ExperimentReport) -> String {
    let cfg = &report.config;
    let mut s = String::new();
    let _ = writeln!(s, "experiment: {}", cfg.name);
    let _ = writeln!(s, "mode: {}", cfg.mode);
    let _ = writeln!(s, "problem: {}", cfg.problem);
    let _ = writeln!(s, "scheme: {}", cfg.scheme);
    let _ = writeln!(
        s,
        "seeds: data={} init={} lambda={} test={}",
        cfg.data_seed, cfg.init_seed, cfg.lambda_seed, cfg.test_seed
    );
    match &report.failure {
        None => s.push_str("status: ok\n"),
        Some(f) => {
            let _ = writeln!(s, "status: FAILED: {f}");
        }
    }
    if let Some(total) = report.training.final_loss() {
        let _ = writeln!(s, "final loss: {total:e}");
    }
    for m in &report.metrics {
        let _ = writeln!(s, "mse {}: {:e}", m.state, m.mse);
    }
    for p in &report.params {
        let _ = writeln!(
            s,
            "param {}: true {} initial {:.6} estimate {:.6} rel_error {:.4}{}",
            p.name,
            p.truth,
            p.initial,
            p.estimate,
            p.rel_error,
            if p.within_bounds() { "" } else { " (out of bounds)" }
        );
    }
    for row in &report.compare {
        let mses: Vec<String> = row.metrics.iter().map(|m| format!("{}={:e}", m.state, m.mse)).collect();
        let _ = writeln!(
            s,
            "compare {}: {}{}",
            row.scheme,
            mses.join(" "),
            row.failure.as_ref().map(|f| format!(" FAILED: {f}")).unwrap_or_default()
        );
    }
    for r in &report.stability {
        let _ = writeln!(s, "stability {}: {} points, {} gaps", r.scheme.name(), r.points.len(), r.gaps.len());
    }
    s
}

/// States worth plotting: all of them, except for the heat equation where
/// only the midpoint node is drawn.
fn plotted_states(report: &ExperimentReport) -> Vec<usize> {
    if report.config.problem == ProblemKind::Heat {
        let problem = report.config.build_problem().ok();
        let mid = problem.and_then(|p| p.heat).and_then(|h| h.node_index(0.5));
        return mid.into_iter().collect();
    }
    (0..report.state_names.len()).collect()
}

fn state_plot(report: &ExperimentReport, s: usize) -> Plot {
    let name = &report.state_names[s];
    let ev = &report.evaluation;
    let mut plot = Plot::new(format!("{} {}: {}", report.config.problem, report.config.mode, name), "t", name.clone());
    if let Some(obs) = &report.observations {
        let pts = obs.times().into_iter().enumerate().map(|(j, t)| (t, obs.states.get(j, s))).collect();
        plot = plot.with(Series::new("observed", pts, SeriesStyle::Markers));
    }
    let exact = ev.times.iter().zip(&ev.exact).map(|(&t, x)| (t, x[s])).collect();
    let pred = ev.times.iter().zip(&ev.predicted).map(|(&t, x)| (t, x[s])).collect();
    plot.with(Series::new("exact", exact, SeriesStyle::Solid))
        .with(Series::new("predicted", pred, SeriesStyle::Dashed))
}

fn loss_plot(report: &ExperimentReport) -> Plot {
    let pts = report
        .training
        .history
        .iter()
        .filter(|b| b.total > 0.0)
        .map(|b| (b.epoch as f64, b.total.log10()))
        .collect();
    Plot::new(format!("{} training loss", report.config.name), "epoch", "log10 loss")
        .with(Series::new("total", pts, SeriesStyle::Solid))
}

fn stability_plot(report: &ExperimentReport) -> Plot {
    let mut plot = Plot::new("stability region boundaries", "Re z", "Im z");
    for r in &report.stability {
        // Far-field loci of high-order methods swamp the picture; clip them.
        let pts = r
            .points
            .iter()
            .filter(|z| z.re.abs() <= 20.0 && z.im.abs() <= 20.0)
            .map(|z| (z.re, z.im))
            .collect();
        let mut series = Series::new(r.scheme.name(), pts, SeriesStyle::Solid);
        series.closed = r.is_closed();
        plot = plot.with(series);
    }
    plot
}

/// Writes every artifact of `report` into `dir` (created if missing) and
/// returns the written paths.
pub fn write_outputs(report: &ExperimentReport, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    write(dir, "config.cfg", &report.config.to_text(), &mut written)?;
    write(dir, "summary.txt", &summary_text(report), &mut written)?;

    let mut timing = String::from("stage,seconds\n");
    for (stage, secs) in &report.timing {
        let _ = writeln!(timing, "{stage},{secs:.3}");
    }
    write(dir, "timing.csv", &timing, &mut written)?;

    match report.config.mode {
        Mode::Stability => {
            for r in &report.stability {
                write(dir, &format!("stability_{}.csv", r.scheme.name()), &r.to_csv(), &mut written)?;
            }
            if !report.stability.is_empty() {
                write(dir, "stability.svg", &stability_plot(report).render()?, &mut written)?;
            }
        }
        Mode::CompareLmm => {
            write(dir, "compare.csv", &compare_csv(report), &mut written)?;
        }
        _ => {
            write(dir, "metrics.csv", &metrics_csv(&report.metrics), &mut written)?;
            let mut params = String::from("name,true,initial,estimate,rel_error\n");
            for p in &report.params {
                let _ = writeln!(params, "{},{},{},{},{}", p.name, p.truth, p.initial, p.estimate, p.rel_error);
            }
            write(dir, "params.csv", &params, &mut written)?;
            let losses = report
                .training
                .loss_table()
                .with_meta("pretrain_epochs", report.pretrain_epochs);
            write(dir, "losses.csv", &losses.to_text(), &mut written)?;
            if !report.training.history.is_empty() {
                write(dir, "loss.svg", &loss_plot(report).render()?, &mut written)?;
            }
            if !report.evaluation.times.is_empty() {
                for s in plotted_states(report) {
                    let svg = state_plot(report, s).render()?;
                    write(dir, &format!("plot_{}.svg", report.state_names[s]), &svg, &mut written)?;
                }
            }
        }
    }
    if let Some(obs) = &report.observations {
        let path = dir.join("observations.csv");
        obs.save(&path)?;
        written.push(path);
    }
    Ok(written)
}

/// Writes the reference solution and noisy observations for a config.
pub fn generate_data(cfg: &ExperimentConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    let problem = cfg.build_problem()?;
    let (obs, _) = build_data(cfg, &problem)?;
    let reference = problem.reference_solution(&obs.grid)?;
    fs::create_dir_all(dir)?;
    let ref_path = dir.join("reference.csv");
    let names: Vec<String> = problem.state_names();
    let mut table = trajectory_table(&reference, "x");
    for (col, name) in table.columns.iter_mut().skip(1).zip(&names) {
        *col = name.clone();
    }
    table.save(&ref_path)?;
    let obs_path = dir.join("observations.csv");
    obs.save(&obs_path)?;
    Ok(vec![ref_path, obs_path])
}

/// What `read_run` recovers from a run directory.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub summary: String,
    pub failed: bool,
    pub metrics: Vec<StateMetric>,
    /// `(name, true, initial, estimate, rel_error)` rows.
    pub params: Vec<(String, [f64; 4])>,
    pub compare: Option<String>,
}

fn read_labeled(path: &Path, width: usize) -> Result<Vec<(String, Vec<f64>)>> {
    let text = fs::read_to_string(path)?;
    let bad = |detail: String| Error::Format {
        path: path.display().to_string(),
        detail,
    };
    text.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let mut cells = line.split(',');
            let label = cells.next().unwrap_or("").to_string();
            let values = cells
                .map(|c| c.trim().parse::<f64>().map_err(|e| bad(format!("'{line}': {e}"))))
                .collect::<Result<Vec<_>>>()?;
            if values.len() != width {
                return Err(bad(format!("'{line}' has {} values, expected {width}", values.len())));
            }
            Ok((label, values))
        })
        .collect()
}

/// Reads back the tables of a run directory written by `write_outputs`.
pub fn read_run(dir: &Path) -> Result<RunSummary> {
    let summary = fs::read_to_string(dir.join("summary.txt"))?;
    let failed = summary.lines().any(|l| l.starts_with("status: FAILED"));
    let metrics_path = dir.join("metrics.csv");
    let metrics = if metrics_path.exists() {
        read_labeled(&metrics_path, 1)?
            .into_iter()
            .map(|(state, v)| StateMetric { state, mse: v[0] })
            .collect()
    } else {
        Vec::new()
    };
    let params_path = dir.join("params.csv");
    let params = if params_path.exists() {
        read_labeled(&params_path, 4)?
            .into_iter()
            .map(|(n, v)| (n, [v[0], v[1], v[2], v[3]]))
            .collect()
    } else {
        Vec::new()
    };
    let compare_path = dir.join("compare.csv");
    let compare = if compare_path.exists() {
        Some(fs::read_to_string(compare_path)?)
    } else {
        None
    };
    Ok(RunSummary {
        summary,
        failed,
        metrics,
        params,
        compare,
    })
}
