//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs with `cargo test -p isaacs-cli --test acceptance`; the process
//! exits nonzero if any criterion fails.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use isaacs_cli::builtins::build_problem;
use isaacs_cli::checks::{self, monotone_pair};
use isaacs_cli::config::ProblemConfig;
use isaacs_cli::{run_config, ExperimentConfig, RunOptions};
use isaacs_core::forwardsim::{build_lattice, loglog_slope, ControlSchedule};
use isaacs_core::games::{compute_values, dpp_check, fixed_control_crosscheck, ValueOptions};
use isaacs_core::grid::SpaceTimeGrid;
use isaacs_core::model::ProblemSpec;
use isaacs_core::pde::{
    run_penalization_sweep, solve_isaacs_double_obstacle, solve_isaacs_penalized, Flavor,
    PenalizationSchedule, MONOTONE_TOL,
};
use isaacs_core::rbsde::{solve_backward, BackwardMode, COMPARISON_TOL};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const CONSTANT_VALUE: f64 = 0.5;
const CONSTANT_TOL: f64 = 1e-10;
const CONSTANT_BUDGET: Duration = Duration::from_secs(10);
const SWEEP_BUDGET: Duration = Duration::from_secs(300);
const SWEEP_LEVELS: [f64; 7] = [1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0];
const SQUEEZE_RATIO: f64 = 0.25;
const DPP_TOL: f64 = 1e-12;
const COMPARISON_PAIRS: usize = 100;
const VALUE_TOL: f64 = 1e-12;
const SLOPE_BAND: f64 = 0.2;

struct Outcome {
    pass: bool,
    summary: String,
}

impl Outcome {
    fn new(pass: bool, summary: impl Into<String>) -> Self {
        Self {
            pass,
            summary: summary.into(),
        }
    }
}

fn constant() -> ProblemSpec<f64> {
    build_problem(&ProblemConfig::Constant {
        value: CONSTANT_VALUE,
        horizon: 1.0,
    })
    .unwrap()
}

fn dynkin() -> ProblemSpec<f64> {
    build_problem(&ProblemConfig::DynkinHeat {
        rate: 0.1,
        lower_gap: 0.4,
        upper_gap: 0.1,
        horizon: 1.0,
    })
    .unwrap()
}

fn reference_grid() -> SpaceTimeGrid<f64> {
    SpaceTimeGrid::new(-8.0, 8.0, 201, 400, 1.0, 1.0).unwrap()
}

fn single_threaded<R: Send>(f: impl FnOnce() -> R + Send) -> R {
    rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap()
        .install(f)
}

fn constant_sandwich() -> Outcome {
    let spec = constant();
    let grid = SpaceTimeGrid::new(-6.0, 6.0, 201, 400, 1.0, 1.0).unwrap();
    let start = Instant::now();
    let (verdict, sol) = single_threaded(|| {
        let verdict = compute_values(&spec, &grid, &ValueOptions::default()).unwrap();
        let lattice = build_lattice(&spec, 0.0, &grid).unwrap();
        let sol = solve_backward(
            &lattice,
            &spec,
            &ControlSchedule::fixed(0, 0),
            BackwardMode::TwoBarrier,
        )
        .unwrap();
        (verdict, sol)
    });
    let elapsed = start.elapsed();
    let err = [&verdict.w_field.values, &verdict.u_field.values]
        .into_iter()
        .flatten()
        .chain(sol.y.iter().flatten())
        .map(|v| (v - CONSTANT_VALUE).abs())
        .fold(0.0, f64::max);
    let push = [&sol.k_plus, &sol.k_minus, &sol.dk_plus, &sol.dk_minus]
        .into_iter()
        .flatten()
        .flatten()
        .fold(0.0f64, |a, v| a.max(v.abs()));
    Outcome::new(
        err <= CONSTANT_TOL && push == 0.0 && elapsed <= CONSTANT_BUDGET,
        format!(
            "max error {err:.3e}, max |K| {push:.1e}, {:.2} s single-threaded",
            elapsed.as_secs_f64()
        ),
    )
}

fn squeeze_and_sandwich() -> (Outcome, Outcome) {
    let spec = dynkin();
    let grid = reference_grid();
    let schedule = PenalizationSchedule::new(SWEEP_LEVELS.to_vec()).unwrap();
    let start = Instant::now();
    let r = run_penalization_sweep(&spec, &grid, &schedule).unwrap();
    let elapsed = start.elapsed();
    let last = r.levels.len() - 1;
    let ratio_above = r.sup_gap_above[last] / r.sup_gap_above[0];
    let ratio_below = r.sup_gap_below[last] / r.sup_gap_below[0];
    let c2 = Outcome::new(
        r.monotone_above
            && r.monotone_below
            && ratio_above <= SQUEEZE_RATIO
            && ratio_below <= SQUEEZE_RATIO
            && r.diagonal_nonincreasing()
            && elapsed <= SWEEP_BUDGET,
        format!(
            "monotone {}/{}, gap ratios m=64/m=1 above {ratio_above:.3} below {ratio_below:.3}, diagonal nonincreasing {}, {:.1} s",
            r.monotone_above,
            r.monotone_below,
            r.diagonal_nonincreasing(),
            elapsed.as_secs_f64()
        ),
    );

    // Independent nodewise sandwich from fresh solves.
    let base = solve_isaacs_double_obstacle(&spec, &grid, Flavor::Lower).unwrap();
    let mut worst: f64 = 0.0;
    for &m in &SWEEP_LEVELS {
        let above = solve_isaacs_penalized(&spec, &grid, Flavor::PenalizedLower { m }).unwrap();
        let below = solve_isaacs_penalized(&spec, &grid, Flavor::PenalizedUpper { m }).unwrap();
        worst = worst
            .max(base.max_excess_over(&above))
            .max(below.max_excess_over(&base));
    }
    let bound = r.sup_gap_above[last].max(r.sup_gap_below[last]);
    let spread = r.two_sided_spread[last];
    let c3 = Outcome::new(
        worst <= MONOTONE_TOL && spread <= bound + MONOTONE_TOL,
        format!("worst sandwich excess {worst:.1e}, spread at m=64 {spread:.6e} vs max one-sided gap {bound:.6e}"),
    );
    (c2, c3)
}

fn crosscheck() -> Outcome {
    let spec = dynkin();
    let grid = reference_grid();
    let coarse = fixed_control_crosscheck(&spec, &grid, 0, 0).unwrap();
    let fine = fixed_control_crosscheck(&spec, &grid.refined(), 0, 0).unwrap();
    Outcome::new(
        coarse.passes() && fine.gap < coarse.gap,
        format!(
            "gap {:.3e} <= {:.3e}, refined gap {:.3e}",
            coarse.gap, coarse.tolerance, fine.gap
        ),
    )
}

fn dpp() -> Outcome {
    let spec = dynkin();
    let grid = reference_grid();
    let deltas = [grid.dt(), 0.25, 0.5];
    let gaps: Vec<f64> = deltas
        .iter()
        .map(|&d| dpp_check(&spec, &grid, d).unwrap().sup_gap)
        .collect();
    Outcome::new(
        gaps.iter().all(|&g| g <= DPP_TOL),
        format!("sup gaps {gaps:?} at delta = dt, T/4, T/2"),
    )
}

fn comparison() -> Outcome {
    let spec = dynkin();
    let res = checks::comparison(&spec, &reference_grid(), COMPARISON_PAIRS, 2024).unwrap();
    let d = &res.details;
    let violations = d["violations"].as_u64().unwrap();
    let inconclusive = d["inconclusive"].as_u64().unwrap();
    let worst_push = d["worst_push_violation"].as_f64().unwrap();
    let push_cases = d["push_order_cases"].as_u64().unwrap();
    Outcome::new(
        res.pass && violations == 0 && push_cases > 0 && worst_push <= COMPARISON_TOL,
        format!(
            "{COMPARISON_PAIRS} pairs, {violations} violations, {inconclusive} inconclusive, {push_cases} push-order cases, worst push violation {worst_push:.1e}"
        ),
    )
}

fn skorokhod() -> Outcome {
    let grid = reference_grid();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut problems = vec![dynkin(), constant()];
    for _ in 0..10 {
        let (a, b) = monotone_pair(&dynkin(), &mut rng);
        problems.push(a);
        problems.push(b);
    }
    let (mut solves, mut simultaneous, mut breaches, mut pushes) = (0, 0, 0, 0usize);
    for spec in &problems {
        let lattice = build_lattice(spec, 0.0, &grid).unwrap();
        let sol = solve_backward(
            &lattice,
            spec,
            &ControlSchedule::fixed(0, 0),
            BackwardMode::TwoBarrier,
        )
        .unwrap();
        solves += 1;
        simultaneous += sol.simultaneous_pushes();
        breaches += sol.flatness_breaches();
        pushes += [&sol.dk_plus, &sol.dk_minus]
            .into_iter()
            .flatten()
            .flatten()
            .filter(|&&v| v != 0.0)
            .count();
    }
    Outcome::new(
        simultaneous == 0 && breaches == 0 && pushes > 0,
        format!("{solves} two-barrier solves, {pushes} push events, {simultaneous} simultaneous, {breaches} off-barrier"),
    )
}

fn game_value() -> Outcome {
    let grid = SpaceTimeGrid::new(-6.0, 6.0, 81, 100, 1.0, 1.0).unwrap();
    let opts = ValueOptions::default();
    let separable = build_problem(&ProblemConfig::SeparableGame {
        sigma: 1.0,
        horizon: 1.0,
    })
    .unwrap();
    let bilinear = build_problem(&ProblemConfig::BilinearGame {
        sigma: 1.0,
        horizon: 1.0,
    })
    .unwrap();
    let sep = compute_values(&separable, &grid, &opts).unwrap();
    let bil = compute_values(&bilinear, &grid, &opts).unwrap();
    Outcome::new(
        sep.sup_gap <= VALUE_TOL && sep.isaacs_holds && bil.isaacs_gap == 2.0,
        format!(
            "separable sup|W - U| = {:.1e}; bilinear isaacs_gap = {:?}, sup_gap recorded {:.6e}",
            sep.sup_gap, bil.isaacs_gap, bil.sup_gap
        ),
    )
}

fn lipschitz() -> Outcome {
    let spec = dynkin();
    let mut grid = SpaceTimeGrid::new(-8.0, 8.0, 81, 100, 1.0, 1.0).unwrap();
    let (mut dxs, mut quotients) = (Vec::new(), Vec::new());
    for _ in 0..3 {
        let w = solve_isaacs_double_obstacle(&spec, &grid, Flavor::Lower).unwrap();
        dxs.push(grid.dx());
        quotients.push(w.lipschitz_quotient());
        grid = grid.refined();
    }
    let slope = loglog_slope(&dxs, &quotients);
    Outcome::new(
        slope.abs() <= SLOPE_BAND,
        format!("quotients {quotients:.4?}, log-log slope {slope:.4}"),
    )
}

const DETERMINISM_CONFIG: &str = r#"
seed = 11
checks = ["sweep", "isaacs"]
[problem]
kind = "dynkin_heat"
[grid]
nx = 201
nt = 400
x_min = -8.0
x_max = 8.0
[schedule]
levels = [1, 2, 4, 8, 16, 32, 64]
"#;

fn data_files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap())
        .filter(|e| e.file_name() != "manifest.json")
        .map(|e| {
            (
                e.file_name().into_string().unwrap(),
                fs::read(e.path()).unwrap(),
            )
        })
        .collect()
}

fn determinism() -> Outcome {
    let cfg = ExperimentConfig::from_toml(DETERMINISM_CONFIG).unwrap();
    let mut outputs = Vec::new();
    for threads in [1, 8] {
        let dir = tempfile::tempdir().unwrap();
        let opts = RunOptions {
            out: Some(dir.path().to_path_buf()),
            threads: Some(threads),
            ..RunOptions::default()
        };
        let outcome = run_config(&cfg, DETERMINISM_CONFIG.as_bytes(), &opts).unwrap();
        outputs.push((outcome.exit_code, data_files(dir.path())));
    }
    let identical = outputs[0].1 == outputs[1].1;
    Outcome::new(
        identical && outputs[0].1.len() >= 4 && outputs.iter().all(|(code, _)| *code == 0),
        format!(
            "{} data files, identical across 1 and 8 threads: {identical}",
            outputs[0].1.len()
        ),
    )
}

fn main() {
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    results.push((1, "constant sandwich", constant_sandwich()));
    let (c2, c3) = squeeze_and_sandwich();
    results.push((2, "penalization squeeze", c2));
    results.push((3, "two-sided squeeze", c3));
    results.push((4, "PDE vs lattice cross-check", crosscheck()));
    results.push((5, "discrete DPP", dpp()));
    results.push((6, "comparison suite", comparison()));
    results.push((7, "Skorokhod flatness", skorokhod()));
    results.push((8, "game value", game_value()));
    results.push((9, "Lipschitz estimate", lipschitz()));
    results.push((10, "thread-count determinism", determinism()));

    let mut failed = 0;
    for (n, name, o) in &results {
        println!(
            "criterion {n:>2} {}: {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.summary
        );
        failed += usize::from(!o.pass);
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        results.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
