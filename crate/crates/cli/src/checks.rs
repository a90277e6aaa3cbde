//! The verification suites run by the CLI.

use isaacs_core::forwardsim::{
    build_lattice, check_forward_estimates, ControlSchedule, ForwardEstimateOptions,
};
use isaacs_core::games::{dpp_check, fixed_control_crosscheck, GameVerdict};
use isaacs_core::grid::SpaceTimeGrid;
use isaacs_core::model::{validate_problem, ProblemSpec};
use isaacs_core::pde::{run_penalization_sweep, ConvergenceReport, PenalizationSchedule};
use isaacs_core::rbsde::{
    apriori_estimate_check, comparison_check, AprioriOptions, BackwardMode, ComparisonOutcome,
};
use isaacs_core::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

/// Outcome of one check.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub pass: bool,
    pub details: Value,
}

pub fn validate(
    spec: &ProblemSpec<f64>,
    grid: &SpaceTimeGrid<f64>,
    samples: usize,
    seed: u64,
) -> Result<CheckResult> {
    let report = validate_problem(spec, samples.max(1), seed)?;
    let violations: Vec<Value> = report
        .violations
        .iter()
        .map(|v| json!({ "kind": v.kind.to_string(), "t": v.t, "x": v.x, "detail": v.detail }))
        .collect();
    let (cfl_ok, cfl) = match grid.certify(spec, 0.0) {
        Ok(c) => (
            true,
            json!({ "max_ratio": c.max_ratio, "max_dt": c.max_dt }),
        ),
        Err(e) => (false, json!({ "error": e.to_string() })),
    };
    Ok(CheckResult {
        pass: report.is_valid() && cfl_ok,
        details: json!({ "samples": report.samples, "violations": violations, "monotonicity": cfl }),
    })
}

pub fn sweep(
    spec: &ProblemSpec<f64>,
    grid: &SpaceTimeGrid<f64>,
    schedule: &PenalizationSchedule<f64>,
) -> Result<(CheckResult, ConvergenceReport<f64>)> {
    let r = run_penalization_sweep(spec, grid, schedule)?;
    let pass =
        r.monotone_above && r.monotone_below && r.sandwich_holds && r.diagonal_nonincreasing();
    let details = json!({
        "levels": r.levels,
        "sup_gap_above": r.sup_gap_above,
        "sup_gap_below": r.sup_gap_below,
        "diagonal_gap": r.diagonal_gap,
        "two_sided_spread": r.two_sided_spread,
        "monotone_above": r.monotone_above,
        "monotone_below": r.monotone_below,
        "sandwich_holds": r.sandwich_holds,
        "diagonal_nonincreasing": r.diagonal_nonincreasing(),
    });
    Ok((CheckResult { pass, details }, r))
}

/// Split levels `1`, `nt / 4` and `nt / 2` (those that divide `nt`).
pub fn dpp_levels(nt: usize) -> Vec<usize> {
    let mut levels = vec![1];
    if nt.is_multiple_of(4) {
        levels.push(nt / 4);
    }
    if nt.is_multiple_of(2) {
        levels.push(nt / 2);
    }
    levels.sort_unstable();
    levels.dedup();
    levels
}

pub const DPP_TOL: f64 = 1e-12;

pub fn dpp(spec: &ProblemSpec<f64>, grid: &SpaceTimeGrid<f64>) -> Result<CheckResult> {
    let mut rows = Vec::new();
    let mut pass = true;
    for k in dpp_levels(grid.nt()) {
        let delta = grid.t(k) - grid.t(0);
        let r = dpp_check(spec, grid, delta)?;
        pass &= r.sup_gap <= DPP_TOL;
        rows.push(json!({ "delta": r.delta, "split_level": r.split_level, "sup_gap": r.sup_gap }));
    }
    Ok(CheckResult {
        pass,
        details: json!({ "tolerance": DPP_TOL, "deltas": rows }),
    })
}

pub fn crosscheck(
    spec: &ProblemSpec<f64>,
    grid: &SpaceTimeGrid<f64>,
    controls: [usize; 2],
    refine: bool,
) -> Result<CheckResult> {
    let coarse = fixed_control_crosscheck(spec, grid, controls[0], controls[1])?;
    let mut details = json!({
        "controls": controls,
        "gap": coarse.gap,
        "tolerance": coarse.tolerance,
        "value_range": coarse.value_range,
        "dx": coarse.dx,
        "dt": coarse.dt,
    });
    let mut pass = coarse.passes();
    if refine {
        let fine = fixed_control_crosscheck(spec, &grid.refined(), controls[0], controls[1])?;
        let decreases = fine.gap < coarse.gap || (coarse.gap == 0.0 && fine.gap == 0.0);
        pass &= decreases;
        details["refined_gap"] = json!(fine.gap);
        details["refined_tolerance"] = json!(fine.tolerance);
        details["gap_decreases"] = json!(decreases);
    }
    Ok(CheckResult { pass, details })
}

/// Monotone perturbation pair around `spec`: `f1 <= f <= f2` and
/// `Phi1 <= Phi <= Phi2`, both kept inside the terminal sandwich.
pub fn monotone_pair<R: Rng>(
    spec: &ProblemSpec<f64>,
    rng: &mut R,
) -> (ProblemSpec<f64>, ProblemSpec<f64>) {
    let horizon = spec.horizon();
    let base = spec.coefficients().clone();
    let mut make = |sign: f64| {
        let df = rng.random_range(0.0..0.5);
        let dphi = rng.random_range(0.0..0.5);
        let w = rng.random_range(0.5..2.0);
        let f = base.driver.clone();
        let phi = base.terminal.clone();
        let lower = base.lower.clone();
        let upper = base.upper.clone();
        let c = base
            .clone()
            .with_driver(move |t, x, y, z, u, v| {
                f(t, x, y, z, u, v) + sign * df * 0.5 * (1.0 + (w * x[0]).sin())
            })
            .with_terminal(move |x| {
                let p = phi(x) + sign * dphi * 0.5 * (1.0 + (w * x[0]).cos());
                p.max(lower(horizon, x)).min(upper(horizon, x))
            });
        spec.with_coefficients(c)
    };
    let s1 = make(-1.0);
    let s2 = make(1.0);
    (s1, s2)
}

pub fn comparison(
    spec: &ProblemSpec<f64>,
    grid: &SpaceTimeGrid<f64>,
    pairs: usize,
    seed: u64,
) -> Result<CheckResult> {
    let lattice = build_lattice(spec, grid.t_start(), grid)?;
    let modes = [
        BackwardMode::Plain,
        BackwardMode::OneBarrierLower { m: 4.0 },
        BackwardMode::OneBarrierUpper { m: 4.0 },
        BackwardMode::TwoBarrier,
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nu = spec.controls_i().len();
    let nv = spec.controls_ii().len();
    let (mut fails, mut inconclusive, mut push_checked) = (0usize, 0usize, 0usize);
    let (mut worst, mut worst_push) = (f64::NEG_INFINITY, 0.0f64);
    let mut reasons = Vec::new();
    for r in 0..pairs {
        let (s1, s2) = monotone_pair(spec, &mut rng);
        let schedule = ControlSchedule::fixed(rng.random_range(0..nu), rng.random_range(0..nv));
        let mode = modes[r % modes.len()];
        let rep = comparison_check(
            &s1,
            &s2,
            &lattice,
            &schedule,
            mode,
            200,
            seed.wrapping_add(r as u64),
        )?;
        match rep.outcome {
            ComparisonOutcome::Pass => {}
            ComparisonOutcome::Fail => fails += 1,
            ComparisonOutcome::Inconclusive(why) => {
                inconclusive += 1;
                reasons.push(why);
            }
        }
        worst = worst.max(rep.worst_violation);
        worst_push = worst_push.max(rep.worst_push_violation);
        push_checked += rep.push_order_checked as usize;
    }
    Ok(CheckResult {
        pass: fails == 0 && inconclusive == 0,
        details: json!({
            "pairs": pairs,
            "violations": fails,
            "inconclusive": inconclusive,
            "inconclusive_reasons": reasons,
            "worst_violation": worst,
            "push_order_cases": push_checked,
            "worst_push_violation": worst_push,
        }),
    })
}

pub fn estimates(
    spec: &ProblemSpec<f64>,
    grid: &SpaceTimeGrid<f64>,
    paths: usize,
    controls: [usize; 2],
    seed: u64,
) -> Result<CheckResult> {
    let mut fopts = ForwardEstimateOptions::new(spec.state_dim());
    fopts.controls = ControlSchedule::fixed(controls[0], controls[1]);
    let forward = check_forward_estimates(spec, paths.max(1), seed, &fopts)?;
    let aopts = AprioriOptions {
        paths: paths.max(1),
        seed,
        ..AprioriOptions::default()
    };
    let apriori = apriori_estimate_check(spec, grid, &fopts.controls, &aopts)?;
    let levels: Vec<Value> = apriori
        .levels
        .iter()
        .map(|l| {
            json!({
                "dx": l.dx,
                "dt": l.dt,
                "bound_lhs": l.bound_lhs,
                "bound_rhs": l.bound_rhs,
                "bound_constant": l.bound_constant(),
                "stability_lhs": l.stability_lhs,
                "stability_rhs": l.stability_rhs,
                "stability_constant": l.stability_constant(),
                "stability_push_term": l.stability_push_term,
                "lipschitz": l.lipschitz,
            })
        })
        .collect();
    Ok(CheckResult {
        pass: forward.passes && apriori.passes,
        details: json!({
            "forward": {
                "separations": forward.separations,
                "sup_ratios": forward.sup_ratios,
                "terminal_ratios": forward.terminal_ratios,
                "slope": forward.slope,
                "passes": forward.passes,
            },
            "apriori": { "levels": levels, "passes": apriori.passes },
        }),
    })
}

pub fn isaacs(verdict: &GameVerdict<f64>) -> CheckResult {
    let consistent = !verdict.isaacs_holds || verdict.has_value;
    CheckResult {
        pass: verdict.ordered() && consistent,
        details: json!({
            "isaacs_gap": verdict.isaacs_gap,
            "isaacs_holds": verdict.isaacs_holds,
            "sup_gap": verdict.sup_gap,
            "value_tol": verdict.value_tol,
            "has_value": verdict.has_value,
            "ordering_excess": verdict.ordering_excess,
        }),
    }
}
