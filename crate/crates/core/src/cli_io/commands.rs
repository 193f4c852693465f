//! Subcommand implementations. Each returns the files it wrote, or a
//! [`CommandError`] carrying the process exit code.

use std::fmt;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::actor_critic::{self, Series};
use crate::analysis::{self, AnalysisReport, ConstantSet};
use crate::error::Error;
use crate::mdp::RandomMdpSpec;
use crate::oracle::{self, AssumptionReport};

use super::config::{apply_override, ExperimentConfig, LoadedConfig, Setting};
use super::files::{self, AnalysisCsvRow, OracleRow, RunSummary};

pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;
pub const EXIT_MISMATCH: i32 = 4;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommandError {
    pub code: i32,
    pub message: String,
}

impl fmt::Display for CommandError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CommandError {}

fn validation(e: impl fmt::Display) -> CommandError {
    CommandError { code: EXIT_VALIDATION, message: e.to_string() }
}

fn runtime(e: impl fmt::Display) -> CommandError {
    CommandError { code: EXIT_RUNTIME, message: e.to_string() }
}

type CmdResult<T> = std::result::Result<T, CommandError>;

/// Flags shared by the config-driven subcommands.
#[derive(Debug, Clone, Default)]
pub struct CommonArgs {
    pub config: PathBuf,
    pub out: Option<PathBuf>,
    pub seeds: Option<usize>,
    pub overrides: Vec<String>,
}

impl CommonArgs {
    fn load(&self) -> CmdResult<LoadedConfig> {
        let mut ov = self.overrides.clone();
        if let Some(n) = self.seeds {
            ov.push(format!("n_seeds={n}"));
        }
        LoadedConfig::load(&self.config, &ov).map_err(validation)
    }

    fn out_dir(&self, loaded: &LoadedConfig) -> PathBuf {
        match &self.out {
            Some(p) => p.clone(),
            None => loaded.resolve(&loaded.config.out_dir),
        }
    }
}

#[derive(Debug, Clone)]
pub struct OracleOutputs {
    pub report_path: PathBuf,
    pub grid_path: PathBuf,
    pub report: AssumptionReport,
}

/// Evaluates the oracle on the θ grid and writes the assumption report and
/// the per-point grid file. Fails with the first violated assumption.
pub fn cmd_oracle(args: &CommonArgs) -> CmdResult<OracleOutputs> {
    let loaded = args.load()?;
    let exp = loaded.build().map_err(validation)?;
    let points = oracle::oracle_grid(&exp.mdp, &exp.policy_class, &exp.features, &exp.thetas).map_err(validation)?;
    let smoothness = exp.policy_class.smoothness_report(&exp.thetas).map_err(validation)?;
    let radius = match loaded.config.ac.omega_radius {
        Setting::Fixed(r) => r,
        Setting::Auto => actor_critic::default_omega_radius(oracle::mu_estimate(&points), exp.mdp.c_max()),
    };
    let report = AssumptionReport::build(&exp.mdp, &exp.features, smoothness, &points, radius);
    let out = args.out_dir(&loaded);
    files::ensure_dir(&out).map_err(runtime)?;
    let report_path = out.join("assumption_report.json");
    let grid_path = out.join("oracle_grid.csv");
    files::write_json(&report_path, &report).map_err(runtime)?;
    let rows: Vec<OracleRow> = points.iter().map(OracleRow::from).collect();
    files::write_oracle_csv(&grid_path, &rows).map_err(runtime)?;
    info!("oracle: mu = {}, delta = {}", report.mu_estimate, report.delta_estimate);
    if let Some(name) = report.first_failure() {
        return Err(validation(format!("assumption check failed: {name} (see {})", report_path.display())));
    }
    Ok(OracleOutputs { report_path, grid_path, report })
}

fn estimate(loaded: &LoadedConfig, exp: &super::config::Experiment) -> crate::Result<ConstantSet> {
    let (c, _) = analysis::estimate_constants(&exp.mdp, &exp.policy_class, &exp.features, &exp.thetas, &loaded.config.estimate)?;
    Ok(c)
}

fn run_loaded(loaded: &LoadedConfig, out: &Path) -> CmdResult<Vec<PathBuf>> {
    let exp = loaded.build().map_err(validation)?;
    let hash = loaded.hash().map_err(validation)?;
    let consts = if loaded.config.ac.needs_constants() {
        info!("estimating constants on {} grid points", exp.thetas.len());
        Some(estimate(loaded, &exp).map_err(runtime)?)
    } else {
        None
    };
    let acs = (0..loaded.config.n_seeds)
        .map(|i| loaded.ac_config(consts.as_ref(), i))
        .collect::<crate::Result<Vec<_>>>()
        .map_err(validation)?;
    for ac in &acs {
        ac.validate().map_err(validation)?;
    }
    files::ensure_dir(out).map_err(runtime)?;
    let written = acs
        .par_iter()
        .enumerate()
        .map(|(i, ac)| {
            info!("run seed index {i} (seed {})", ac.sampler.seed);
            let log = actor_critic::run(&exp.mdp, &exp.policy_class, &exp.features, ac, &hash).map_err(runtime)?;
            let t = ac.total_steps;
            let summary = RunSummary {
                meta: log.meta.clone(),
                seed_index: i,
                log_file: format!("run_seed{i}.csv"),
                ac: ac.clone(),
                config: loaded.config.clone(),
                constants: consts.clone(),
                final_grad_sq_tail: analysis::tail_average(&log.series(Series::GradSq), t).ok(),
                final_delta_sq_tail: analysis::tail_average(&log.series(Series::DeltaSq), t).ok(),
            };
            let (csv, json) = files::write_run(out, &summary, &log).map_err(runtime)?;
            Ok(vec![csv, json])
        })
        .collect::<CmdResult<Vec<_>>>()?;
    Ok(written.into_iter().flatten().collect())
}

/// Runs the actor-critic for every seed and writes `run_seed{i}.csv` and
/// `run_seed{i}.json`.
pub fn cmd_run(args: &CommonArgs) -> CmdResult<Vec<PathBuf>> {
    let loaded = args.load()?;
    let out = args.out_dir(&loaded);
    run_loaded(&loaded, &out)
}

#[derive(Debug, Clone)]
pub struct AnalyzeOutputs {
    pub report_path: PathBuf,
    pub csv_path: PathBuf,
    pub dat_paths: Vec<PathBuf>,
    pub report: AnalysisReport,
}

/// Fits rates and evaluates the step conditions and small-gain bound for a
/// set of logs. All logs must carry the hash of the given config.
pub fn cmd_analyze(args: &CommonArgs, logs: &[PathBuf]) -> CmdResult<AnalyzeOutputs> {
    let loaded = args.load()?;
    if logs.is_empty() {
        return Err(validation("no logs given"));
    }
    let runs = logs.iter().map(|p| files::read_run(p)).collect::<crate::Result<Vec<_>>>().map_err(validation)?;
    let hash = loaded.hash().map_err(validation)?;
    for (p, (_, log)) in logs.iter().zip(&runs) {
        if log.meta.config_hash != hash {
            return Err(CommandError {
                code: EXIT_MISMATCH,
                message: format!("{}: config hash {} does not match {}", p.display(), log.meta.config_hash, hash),
            });
        }
    }
    let (summary, _) = &runs[0];
    let exp = loaded.build().map_err(validation)?;
    let consts = match &summary.constants {
        Some(c) => c.clone(),
        None => estimate(&loaded, &exp).map_err(runtime)?,
    };
    let ac = summary.ac.clone();
    let logs: Vec<_> = runs.into_iter().map(|(_, l)| l).collect();
    let mut report = analysis::analyze_logs(&consts, &ac, &logs).map_err(validation)?;
    report.visited = match analysis::visited_check(&exp.mdp, &exp.policy_class, &exp.features, &logs, report.fit_start) {
        Ok(v) => Some(v),
        Err(e) => {
            warn!("skipping the visited-θ check: {e}");
            None
        }
    };

    let out = args.out_dir(&loaded);
    files::ensure_dir(&out).map_err(runtime)?;
    let report_path = out.join("analysis.json");
    files::write_json(&report_path, &report).map_err(runtime)?;
    let lookup = |v: &[(usize, f64)], t: usize| v.iter().find(|p| p.0 == t).map(|p| p.1);
    let rows: Vec<AnalysisCsvRow> = analysis::checkpoints(report.fit_start, report.total_steps)
        .into_iter()
        .map(|t| AnalysisCsvRow {
            t,
            grad_sq_tail: lookup(&report.grad_sq.curve, t),
            delta_sq_tail: lookup(&report.delta_sq.curve, t),
            predicted_bound: lookup(&report.bound_curve, t),
        })
        .collect();
    let csv_path = out.join("analysis.csv");
    files::write_analysis_csv(&csv_path, &rows).map_err(runtime)?;
    let mut dat_paths = Vec::new();
    for (name, pts) in [
        ("grad_sq_tail.dat", &report.grad_sq.curve),
        ("delta_sq_tail.dat", &report.delta_sq.curve),
        ("bound.dat", &report.bound_curve),
    ] {
        let p = out.join(name);
        files::write_dat(&p, pts).map_err(runtime)?;
        dat_paths.push(p);
    }
    Ok(AnalyzeOutputs { report_path, csv_path, dat_paths, report })
}

/// Splits `a,b,[c,d]` on top-level commas.
fn split_values(s: &str) -> Vec<String> {
    let mut out = Vec::new();
    let (mut depth, mut quoted, mut cur) = (0i32, false, String::new());
    for ch in s.chars() {
        match ch {
            '"' => quoted = !quoted,
            '[' | '{' if !quoted => depth += 1,
            ']' | '}' if !quoted => depth -= 1,
            ',' if depth == 0 && !quoted => {
                out.push(std::mem::take(&mut cur));
                continue;
            }
            _ => {}
        }
        cur.push(ch);
    }
    out.push(cur);
    out.into_iter().map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect()
}

/// One point of a sweep: its output directory and the assignments applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub dir: String,
    pub assignments: Vec<String>,
    pub config_hash: String,
}

/// Cartesian product over `key=v1,v2,...` axes; each point is a full
/// multi-seed run in its own subdirectory, indexed in `sweep.json`.
pub fn cmd_sweep(args: &CommonArgs, grid: &[String]) -> CmdResult<Vec<SweepEntry>> {
    let base = args.load()?;
    let mut axes: Vec<(String, Vec<String>)> = Vec::new();
    for g in grid {
        let (k, v) = g.split_once('=').ok_or_else(|| validation(format!("grid axis {g:?} is not key=v1,v2,...")))?;
        let vals = split_values(v);
        if vals.is_empty() {
            return Err(validation(format!("grid axis {k:?} has no values")));
        }
        axes.push((k.trim().to_string(), vals));
    }
    let mut combos: Vec<Vec<String>> = vec![Vec::new()];
    for (k, vals) in &axes {
        combos = combos
            .into_iter()
            .flat_map(|c| {
                vals.iter().map(move |v| {
                    let mut c = c.clone();
                    c.push(format!("{k}={v}"));
                    c
                })
            })
            .collect();
    }
    let out = args.out_dir(&base);
    files::ensure_dir(&out).map_err(runtime)?;
    let mut entries = Vec::new();
    for (j, assignments) in combos.iter().enumerate() {
        let mut value = toml::Value::try_from(&base.config).map_err(validation)?;
        let table = value.as_table_mut().ok_or_else(|| validation("config is not a table"))?;
        for a in assignments {
            apply_override(table, a).map_err(validation)?;
        }
        let config: ExperimentConfig = value.try_into().map_err(validation)?;
        let loaded = LoadedConfig { config, base_dir: base.base_dir.clone() };
        loaded.validate().map_err(validation)?;
        let dir_name = format!("sweep_{j:03}");
        let dir = out.join(&dir_name);
        info!("sweep point {j}: {}", assignments.join(" "));
        run_loaded(&loaded, &dir)?;
        entries.push(SweepEntry {
            dir: dir_name,
            assignments: assignments.clone(),
            config_hash: loaded.hash().map_err(validation)?,
        });
    }
    files::write_json(&out.join("sweep.json"), &entries).map_err(runtime)?;
    Ok(entries)
}

/// Writes a random instance to `out` as JSON.
pub fn cmd_gen_mdp(spec: &RandomMdpSpec, out: &Path) -> CmdResult<()> {
    let mdp = spec.generate().map_err(validation)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        files::ensure_dir(dir).map_err(runtime)?;
    }
    files::write_json(out, &mdp.to_file()).map_err(runtime)
}

/// Exit code for a library error raised outside a subcommand.
pub fn exit_code(e: &Error) -> i32 {
    match e.root() {
        Error::Io { .. } | Error::Parse { .. } | Error::InvalidConfig(_) => EXIT_VALIDATION,
        _ => EXIT_RUNTIME,
    }
}
