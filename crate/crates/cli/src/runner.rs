//! Orchestration of one experiment run.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use isaacs_core::games::{compute_values, GameVerdict, ValueOptions};
use isaacs_core::grid::SpaceTimeGrid;
use isaacs_core::model::ProblemSpec;
use isaacs_core::pde::{viscosity_residual, PenalizationSchedule, ResidualReport, ValueField};
use serde::Serialize;
use serde_json::{json, Value};

use crate::builtins::build_problem;
use crate::checks::{self, CheckResult};
use crate::config::{CheckName, ExperimentConfig};
use crate::report::{sha256_hex, sweep_csv, values_csv, FileEntry, OutputDir};
use crate::RunError;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;
pub const EXIT_IO: i32 = 4;

/// Command-line overrides of the configuration.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOptions {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub checks: Option<Vec<CheckName>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageRecord {
    pub name: String,
    pub seconds: f64,
    pub ok: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub version: String,
    pub config_digest: String,
    pub seed: u64,
    pub threads: usize,
    pub checks_requested: Vec<String>,
    pub stages: Vec<StageRecord>,
    pub checks: BTreeMap<String, bool>,
    pub files: Vec<FileEntry>,
    pub exit_status: i32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub exit_code: i32,
    pub out_dir: PathBuf,
    pub manifest: RunManifest,
    /// Failure message when a stage errored.
    pub error: Option<String>,
}

/// Reads, parses and runs a configuration file.
pub fn run_file(path: &Path, opts: &RunOptions) -> Result<RunOutcome, RunError> {
    let bytes =
        std::fs::read(path).map_err(|e| RunError::Io(format!("{}: {e}", path.display())))?;
    let text = std::str::from_utf8(&bytes)
        .map_err(|e| RunError::Config(format!("{}: {e}", path.display())))?;
    let cfg = ExperimentConfig::from_toml(text)
        .map_err(|e| RunError::Config(format!("{}: {e}", path.display())))?;
    run_config(&cfg, &bytes, opts)
}

/// Runs `cfg` on a thread pool of the requested size.
pub fn run_config(
    cfg: &ExperimentConfig,
    config_bytes: &[u8],
    opts: &RunOptions,
) -> Result<RunOutcome, RunError> {
    let threads = opts.threads.unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| RunError::Config(format!("thread pool: {e}")))?;
    let threads = pool.current_num_threads();
    pool.install(|| Runner::new(cfg, config_bytes, opts, threads)?.run())
}

struct Runner<'a> {
    cfg: &'a ExperimentConfig,
    out: OutputDir,
    manifest: RunManifest,
    seed: u64,
    checks: Vec<CheckName>,
    details: BTreeMap<String, Value>,
}

impl<'a> Runner<'a> {
    fn new(
        cfg: &'a ExperimentConfig,
        config_bytes: &[u8],
        opts: &RunOptions,
        threads: usize,
    ) -> Result<Self, RunError> {
        let root = opts.out.clone().unwrap_or_else(|| cfg.output.clone());
        let out = OutputDir::create(&root)
            .map_err(|e| RunError::Io(format!("{}: {e}", root.display())))?;
        let seed = opts.seed.unwrap_or(cfg.seed);
        let mut checks = opts.checks.clone().unwrap_or_else(|| cfg.checks.clone());
        checks.sort();
        checks.dedup();
        let manifest = RunManifest {
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_digest: sha256_hex(config_bytes),
            seed,
            threads,
            checks_requested: checks.iter().map(|c| c.as_str().to_string()).collect(),
            stages: Vec::new(),
            checks: BTreeMap::new(),
            files: Vec::new(),
            exit_status: EXIT_OK,
        };
        Ok(Self {
            cfg,
            out,
            manifest,
            seed,
            checks,
            details: BTreeMap::new(),
        })
    }

    fn stage<R>(
        &mut self,
        name: &str,
        f: impl FnOnce(&mut Self) -> Result<R, RunError>,
    ) -> Result<R, RunError> {
        let start = Instant::now();
        let result = f(self);
        self.manifest.stages.push(StageRecord {
            name: name.to_string(),
            seconds: start.elapsed().as_secs_f64(),
            ok: result.is_ok(),
            error: result.as_ref().err().map(|e| e.to_string()),
        });
        result
    }

    fn record(&mut self, name: CheckName, result: CheckResult) {
        self.manifest
            .checks
            .insert(name.as_str().to_string(), result.pass);
        self.details.insert(
            name.as_str().to_string(),
            json!({ "pass": result.pass, "details": result.details }),
        );
    }

    fn io(&self, e: std::io::Error) -> RunError {
        RunError::Io(format!("{}: {e}", self.out.root().display()))
    }

    fn finish(mut self, exit: i32, error: Option<String>) -> Result<RunOutcome, RunError> {
        if !self.details.is_empty() {
            let details = std::mem::take(&mut self.details);
            self.out
                .write_json("checks.json", &details)
                .map_err(|e| self.io(e))?;
        }
        let exit = if exit == EXIT_OK && self.manifest.checks.values().any(|&p| !p) {
            EXIT_CHECK_FAILED
        } else {
            exit
        };
        self.manifest.exit_status = exit;
        self.manifest.files = self.out.files().to_vec();
        let manifest = self.manifest.clone();
        self.out
            .write_json("manifest.json", &manifest)
            .map_err(|e| self.io(e))?;
        Ok(RunOutcome {
            exit_code: exit,
            out_dir: self.out.root().to_path_buf(),
            manifest,
            error,
        })
    }

    /// Converts a stage error into a flushed, failed outcome.
    fn fail(self, err: RunError) -> Result<RunOutcome, RunError> {
        let code = err.exit_code();
        let msg = err.to_string();
        self.finish(code, Some(msg))
    }

    fn run(mut self) -> Result<RunOutcome, RunError> {
        let setup = self.stage("setup", |r| {
            let spec = build_problem(&r.cfg.problem)?;
            let g = &r.cfg.grid;
            let grid =
                SpaceTimeGrid::new(g.x_min, g.x_max, g.nx, g.nt, spec.horizon(), g.cfl_margin)
                    .map_err(|e| RunError::Config(format!("grid: {e}")))?;
            let schedule = PenalizationSchedule::new(r.cfg.schedule.levels.clone())
                .map_err(|e| RunError::Config(format!("schedule: {e}")))?;
            Ok((spec, grid, schedule))
        });
        let (spec, grid, schedule) = match setup {
            Ok(v) => v,
            Err(e) => return self.fail(e),
        };
        if self.checks.is_empty() {
            return self.finish(EXIT_OK, None);
        }

        if self.checks.contains(&CheckName::Validate) {
            let seed = self.seed;
            let samples = self.cfg.options.validate_samples;
            match self.stage("validate", |_| {
                Ok(checks::validate(&spec, &grid, samples, seed)?)
            }) {
                Ok(res) => {
                    let pass = res.pass;
                    let msg = validation_summary(&res.details);
                    self.record(CheckName::Validate, res);
                    if !pass {
                        return self.finish(EXIT_CHECK_FAILED, Some(msg));
                    }
                }
                Err(e) => return self.fail(e),
            }
        }

        let verdict = match self.stage("solve", |r| r.solve(&spec, &grid)) {
            Ok(v) => v,
            Err(e) => return self.fail(e),
        };

        let opts = self.cfg.options.clone();
        let seed = self.seed;
        for check in self.checks.clone() {
            let result = match check {
                CheckName::Validate => continue,
                CheckName::Sweep => self.stage("sweep", |r| {
                    let (res, report) = checks::sweep(&spec, &grid, &schedule)?;
                    r.out
                        .write("sweep.csv", sweep_csv(&report).as_bytes())
                        .map_err(|e| r.io(e))?;
                    Ok(res)
                }),
                CheckName::Dpp => self.stage("dpp", |_| Ok(checks::dpp(&spec, &grid)?)),
                CheckName::Crosscheck => self.stage("crosscheck", |_| {
                    Ok(checks::crosscheck(
                        &spec,
                        &grid,
                        opts.crosscheck_controls,
                        opts.crosscheck_refine,
                    )?)
                }),
                CheckName::Comparison => self.stage("comparison", |_| {
                    Ok(checks::comparison(
                        &spec,
                        &grid,
                        opts.comparison_pairs,
                        seed,
                    )?)
                }),
                CheckName::Estimates => self.stage("estimates", |_| {
                    Ok(checks::estimates(
                        &spec,
                        &grid,
                        opts.estimate_paths,
                        opts.crosscheck_controls,
                        seed,
                    )?)
                }),
                CheckName::Isaacs => self.stage("isaacs", |_| Ok(checks::isaacs(&verdict))),
            };
            match result {
                Ok(res) => self.record(check, res),
                Err(e) => return self.fail(e),
            }
        }
        self.finish(EXIT_OK, None)
    }

    fn solve(
        &mut self,
        spec: &ProblemSpec<f64>,
        grid: &SpaceTimeGrid<f64>,
    ) -> Result<GameVerdict<f64>, RunError> {
        let vopts = ValueOptions {
            value_tol: self.cfg.options.value_tol,
            isaacs_samples: self.cfg.options.isaacs_samples,
            seed: self.seed,
            ..ValueOptions::default()
        };
        let verdict = compute_values(spec, grid, &vopts)?;
        let res_w = viscosity_residual(&verdict.w_field, spec)?;
        let res_u = viscosity_residual(&verdict.u_field, spec)?;
        self.out
            .write("values_lower.csv", values_csv(&verdict.w_field).as_bytes())
            .map_err(|e| self.io(e))?;
        self.out
            .write("values_upper.csv", values_csv(&verdict.u_field).as_bytes())
            .map_err(|e| self.io(e))?;
        let doc = json!({
            "sup_gap": verdict.sup_gap,
            "isaacs_gap": verdict.isaacs_gap,
            "isaacs_holds": verdict.isaacs_holds,
            "has_value": verdict.has_value,
            "value_tol": verdict.value_tol,
            "ordering_excess": verdict.ordering_excess,
            "grid": {
                "nx": grid.nx(),
                "nt": grid.nt(),
                "x_min": grid.x_min(),
                "x_max": grid.x_max(),
                "dx": grid.dx(),
                "dt": grid.dt(),
                "max_stencil_ratio": verdict.w_field.certificate.max_ratio,
            },
            "lower": field_summary(&verdict.w_field, &res_w),
            "upper": field_summary(&verdict.u_field, &res_u),
        });
        self.out
            .write_json("verdict.json", &doc)
            .map_err(|e| self.io(e))?;
        Ok(verdict)
    }
}

fn validation_summary(details: &Value) -> String {
    let mut parts = vec!["validation failed; solves skipped".to_string()];
    if let Some(err) = details["monotonicity"]["error"].as_str() {
        parts.push(err.to_string());
    }
    if let Some(v) = details["violations"].as_array().filter(|v| !v.is_empty()) {
        let first = v[0]["kind"].as_str().unwrap_or("?");
        let detail = v[0]["detail"].as_str().unwrap_or("");
        parts.push(format!(
            "{} coefficient violation(s), first: {first} ({detail})",
            v.len()
        ));
    }
    parts.join("; ")
}

fn field_summary(field: &ValueField<f64>, res: &ResidualReport<f64>) -> Value {
    json!({
        "value_range": field.range(),
        "initial_min": field.initial().iter().copied().fold(f64::INFINITY, f64::min),
        "initial_max": field.initial().iter().copied().fold(f64::NEG_INFINITY, f64::max),
        "residual": {
            "max_interior": res.max_interior,
            "max_obstacle_mismatch": res.max_obstacle_mismatch,
            "max_lower_breach": res.max_lower_breach,
            "max_upper_breach": res.max_upper_breach,
            "tol": res.tol,
            "flagged": res.flagged.len(),
        },
    })
}
