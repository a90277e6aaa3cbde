//! Game-level verdicts built on the PDE and lattice solvers.

use std::ops::Range;

use crate::error::{Error, Result};
use crate::forwardsim::{build_lattice, ControlSchedule};
use crate::grid::SpaceTimeGrid;
use crate::model::{isaacs_condition_check, ProblemSpec};
use crate::pde::{solve_isaacs_double_obstacle, solve_levels, terminal_slice, Flavor, ValueField};
use crate::rbsde::{solve_backward, BackwardMode};
use crate::scalar::{sup_distance, Scalar};

/// Settings of [`compute_values`].
#[derive(Debug, Clone, PartialEq)]
pub struct ValueOptions<T> {
    /// Tolerance for "the game has a value"; `None` selects
    /// `10 (dx + dt) (value range)`.
    pub value_tol: Option<T>,
    pub isaacs_samples: usize,
    pub isaacs_tol: T,
    pub seed: u64,
}

impl<T: Scalar> Default for ValueOptions<T> {
    fn default() -> Self {
        Self {
            value_tol: None,
            isaacs_samples: 1000,
            isaacs_tol: T::tol(1e-12),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GameVerdict<T> {
    /// Lower value function.
    pub w_field: ValueField<T>,
    /// Upper value function.
    pub u_field: ValueField<T>,
    /// `max |U - W|` over all nodes.
    pub sup_gap: T,
    /// Worst sampled `|H+ - H-|`.
    pub isaacs_gap: T,
    pub isaacs_holds: bool,
    pub value_tol: T,
    pub has_value: bool,
    /// `max (W - U)`; at most `value_tol` for an admissible problem.
    pub ordering_excess: T,
}

impl<T: Scalar> GameVerdict<T> {
    pub fn ordered(&self) -> bool {
        self.ordering_excess <= self.value_tol
    }
}

/// Solves for the lower and upper value functions and compares them.
pub fn compute_values<T: Scalar>(
    spec: &ProblemSpec<T>,
    grid: &SpaceTimeGrid<T>,
    opts: &ValueOptions<T>,
) -> Result<GameVerdict<T>> {
    let (w, u) = rayon::join(
        || solve_isaacs_double_obstacle(spec, grid, Flavor::Lower),
        || solve_isaacs_double_obstacle(spec, grid, Flavor::Upper),
    );
    let (w, u) = (w?, u?);
    let isaacs =
        isaacs_condition_check(spec, opts.isaacs_samples.max(1), opts.isaacs_tol, opts.seed)?;
    let range = w.range().max(u.range());
    let value_tol = opts
        .value_tol
        .unwrap_or_else(|| T::lit(10.0) * (grid.dx() + grid.dt()) * range);
    let sup_gap = w.sup_distance(&u);
    Ok(GameVerdict {
        ordering_excess: w.max_excess_over(&u),
        sup_gap,
        isaacs_gap: isaacs.worst_gap,
        isaacs_holds: isaacs.holds,
        value_tol,
        has_value: sup_gap <= value_tol,
        w_field: w,
        u_field: u,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DPPReport<T> {
    pub t: T,
    pub delta: T,
    /// Level of `t + delta` on the grid.
    pub split_level: usize,
    /// `max |W_direct(t, .) - W_recomposed(t, .)|` over the inner half.
    pub sup_gap: T,
    pub nodes: Range<usize>,
    pub dx: T,
    pub dt: T,
}

/// Compares the lower value function at the grid's first time with the
/// one obtained by first solving on `[t + delta, T]` and then restarting
/// from that slice (clamped into the barriers) on `[t, t + delta]`.
pub fn dpp_check<T: Scalar>(
    spec: &ProblemSpec<T>,
    grid: &SpaceTimeGrid<T>,
    delta: T,
) -> Result<DPPReport<T>> {
    let t = grid.t_start();
    let span = grid.t_end() - t;
    if !(delta > T::zero() && delta <= span * (T::one() + T::lit(1e-12))) {
        return Err(Error::InvalidArgument(format!(
            "delta = {delta} outside (0, {span}]"
        )));
    }
    let split = grid
        .time_index(t + delta)
        .filter(|&k| k > 0)
        .ok_or_else(|| {
            Error::InvalidArgument(format!(
                "delta = {delta} is not a multiple of dt = {}",
                grid.dt()
            ))
        })?;
    let direct = solve_isaacs_double_obstacle(spec, grid, Flavor::Lower)?;
    let mut slice = if split == grid.nt() {
        terminal_slice(spec, grid)
    } else {
        solve_levels(
            spec,
            grid,
            Flavor::Lower,
            split,
            grid.nt(),
            terminal_slice(spec, grid),
        )?
        .slice(split)
        .to_vec()
    };
    let ts = grid.t(split);
    for (i, v) in slice.iter_mut().enumerate() {
        let x = [grid.x(i)];
        *v = v.max(spec.lower(ts, &x)).min(spec.upper(ts, &x));
    }
    let head = solve_levels(spec, grid, Flavor::Lower, 0, split, slice)?;
    let nodes = grid.inner_half();
    let sup_gap = sup_distance(
        &direct.initial()[nodes.clone()],
        &head.initial()[nodes.clone()],
    );
    Ok(DPPReport {
        t,
        delta,
        split_level: split,
        sup_gap,
        nodes,
        dx: grid.dx(),
        dt: grid.dt(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrosscheckReport<T> {
    /// `max |W_pde(t0, x_i) - Y_lattice(t0, x_i)|` over the inner half.
    pub gap: T,
    /// `5 (dx + dt) (value range)`.
    pub tolerance: T,
    pub value_range: T,
    pub nodes: Range<usize>,
    pub pde_initial: Vec<T>,
    pub lattice_initial: Vec<T>,
    pub dx: T,
    pub dt: T,
}

impl<T: Scalar> CrosscheckReport<T> {
    pub fn passes(&self) -> bool {
        self.gap <= self.tolerance
    }
}

/// Solves the double-obstacle equation with the controls frozen at
/// `(u#iu, v#iv)` and the two-barrier equation on the matching lattice,
/// and compares both at the initial time.
pub fn fixed_control_crosscheck<T: Scalar>(
    spec: &ProblemSpec<T>,
    grid: &SpaceTimeGrid<T>,
    iu: usize,
    iv: usize,
) -> Result<CrosscheckReport<T>> {
    let fixed = spec.fixed_controls(iu, iv)?;
    let field = solve_isaacs_double_obstacle(&fixed, grid, Flavor::Lower)?;
    let lattice = build_lattice(&fixed, grid.t_start(), grid)?;
    let sol = solve_backward(
        &lattice,
        &fixed,
        &ControlSchedule::fixed(0, 0),
        BackwardMode::TwoBarrier,
    )?;
    let nodes = grid.inner_half();
    let pde_initial = field.initial()[nodes.clone()].to_vec();
    let lattice_initial = sol.initial()[nodes.clone()].to_vec();
    let value_range = field.range();
    Ok(CrosscheckReport {
        gap: sup_distance(&pde_initial, &lattice_initial),
        tolerance: T::lit(5.0) * (grid.dx() + grid.dt()) * value_range,
        value_range,
        nodes,
        pde_initial,
        lattice_initial,
        dx: grid.dx(),
        dt: grid.dt(),
    })
}
