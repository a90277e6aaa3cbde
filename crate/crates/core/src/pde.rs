//! Projected explicit finite-difference scheme for the double-obstacle
//! Isaacs equations, their one-obstacle penalized versions and the
//! obstacle-free penalized equation, plus residual diagnostics.
//!
//! One backward step from level `k + 1` to level `k` at node `x_i`:
//!
//! ```text
//! I(u, v) = 1/2 |sigma|^2 D2 w + b Dup w + g(t_k, x_i, w_i, sigma Dc w, u, v)
//! w_i^k   = P( w_i + dt * minmax_{u, v} I(u, v) )
//! ```
//!
//! `Dup` is the one-sided difference upwinded against the sign of `b`, `Dc`
//! the central difference, `g` the flavor's (penalized) driver and `P` the
//! flavor's projection `min(max(., h), h')`, a one-sided version of it, or
//! the identity. Boundary nodes use a zero-curvature ghost value; a drift
//! that points into the domain there is dropped, and so is the gradient
//! argument of the driver.

use std::ops::Range;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{MonotonicityCertificate, SpaceTimeGrid};
use crate::model::{reduce_table, MinMaxOrder, ProblemSpec};
use crate::rbsde::penalized_driver;
use crate::scalar::{sup_distance, Scalar};

/// Which value function a field approximates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Flavor<T> {
    /// `W`: lower Hamiltonian, both obstacles.
    Lower,
    /// `U`: upper Hamiltonian, both obstacles.
    Upper,
    /// `W_m`: obstacle `h` kept, `h'` penalized with weight `m`.
    PenalizedLower { m: T },
    /// `W̄_m`: obstacle `h'` kept, `h` penalized with weight `m`.
    PenalizedUpper { m: T },
    /// `W_{m,n}`: both obstacles penalized.
    PenalizedFree { m: T, n: T },
}

impl<T: Scalar> Flavor<T> {
    pub fn order(&self) -> MinMaxOrder {
        match self {
            Self::Upper => MinMaxOrder::InfSup,
            _ => MinMaxOrder::SupInf,
        }
    }

    /// `(m, n)` of the driver `f - m (h' - y)^- + n (y - h)^-`.
    pub fn penalties(&self) -> (T, T) {
        match *self {
            Self::Lower | Self::Upper => (T::zero(), T::zero()),
            Self::PenalizedLower { m } => (m, T::zero()),
            Self::PenalizedUpper { m } => (T::zero(), m),
            Self::PenalizedFree { m, n } => (m, n),
        }
    }

    /// Penalty entering the monotonicity condition. At most one penalty
    /// term is active at a node since `h < h'`.
    pub fn penalty_max(&self) -> T {
        let (m, n) = self.penalties();
        m.max(n)
    }

    pub fn clamps_lower(&self) -> bool {
        matches!(
            self,
            Self::Lower | Self::Upper | Self::PenalizedLower { .. }
        )
    }

    pub fn clamps_upper(&self) -> bool {
        matches!(
            self,
            Self::Lower | Self::Upper | Self::PenalizedUpper { .. }
        )
    }

    pub fn is_penalized(&self) -> bool {
        !matches!(self, Self::Lower | Self::Upper)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Lower => "lower",
            Self::Upper => "upper",
            Self::PenalizedLower { .. } => "penalized_lower",
            Self::PenalizedUpper { .. } => "penalized_upper",
            Self::PenalizedFree { .. } => "penalized_free",
        }
    }

    fn check(&self) -> Result<()> {
        let (m, n) = self.penalties();
        if !(m >= T::zero() && n >= T::zero() && m.is_finite() && n.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "penalty weights must be finite and nonnegative, got m = {m}, n = {n}"
            )));
        }
        Ok(())
    }
}

/// Which branch of the obstacle problem binds at a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ActiveMask {
    Interior,
    LowerObstacle,
    UpperObstacle,
}

impl ActiveMask {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Interior => "interior",
            Self::LowerObstacle => "lower_obstacle",
            Self::UpperObstacle => "upper_obstacle",
        }
    }
}

/// Values on the levels `first_level..=grid.nt()` of a grid, time-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueField<T> {
    pub grid: SpaceTimeGrid<T>,
    pub flavor: Flavor<T>,
    pub first_level: usize,
    pub last_level: usize,
    pub values: Vec<T>,
    pub mask: Vec<ActiveMask>,
    pub certificate: MonotonicityCertificate<T>,
}

impl<T: Scalar> ValueField<T> {
    pub fn levels(&self) -> Range<usize> {
        self.first_level..self.last_level + 1
    }

    fn offset(&self, k: usize) -> usize {
        assert!(
            self.levels().contains(&k),
            "level {k} outside {:?}",
            self.levels()
        );
        (k - self.first_level) * self.grid.nx()
    }

    pub fn slice(&self, k: usize) -> &[T] {
        let o = self.offset(k);
        &self.values[o..o + self.grid.nx()]
    }

    pub fn slice_mut(&mut self, k: usize) -> &mut [T] {
        let o = self.offset(k);
        let nx = self.grid.nx();
        &mut self.values[o..o + nx]
    }

    pub fn mask_slice(&self, k: usize) -> &[ActiveMask] {
        let o = self.offset(k);
        &self.mask[o..o + self.grid.nx()]
    }

    pub fn value(&self, k: usize, i: usize) -> T {
        self.slice(k)[i]
    }

    /// Values at the earliest level.
    pub fn initial(&self) -> &[T] {
        self.slice(self.first_level)
    }

    /// `max - min` over the whole field.
    pub fn range(&self) -> T {
        let (lo, hi) = self
            .values
            .iter()
            .fold((T::infinity(), T::neg_infinity()), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        if hi >= lo {
            hi - lo
        } else {
            T::zero()
        }
    }

    /// `sup |self - other|` over the levels both fields cover.
    pub fn sup_distance(&self, other: &Self) -> T {
        let first = self.first_level.max(other.first_level);
        let last = self.last_level.min(other.last_level);
        (first..=last)
            .map(|k| sup_distance(self.slice(k), other.slice(k)))
            .fold(T::zero(), T::max)
    }

    /// `max (self - other)` over all shared nodes (negative if strictly below).
    pub fn max_excess_over(&self, other: &Self) -> T {
        let first = self.first_level.max(other.first_level);
        let last = self.last_level.min(other.last_level);
        let mut worst = T::neg_infinity();
        for k in first..=last {
            for (&a, &b) in self.slice(k).iter().zip(other.slice(k)) {
                worst = worst.max(a - b);
            }
        }
        worst
    }

    /// Largest difference quotient `|w(x_{i+1}) - w(x_i)| / dx` over all levels.
    pub fn lipschitz_quotient(&self) -> T {
        let dx = self.grid.dx();
        self.levels()
            .flat_map(|k| {
                let s = self.slice(k);
                (0..s.len() - 1).map(move |i| (s[i + 1] - s[i]).abs())
            })
            .fold(T::zero(), T::max)
            / dx
    }
}

/// Hamiltonian of the scheme at every node of level `k`, computed from the
/// values `next` at level `k + 1`.
pub fn discrete_hamiltonian<T: Scalar>(
    spec: &ProblemSpec<T>,
    grid: &SpaceTimeGrid<T>,
    flavor: &Flavor<T>,
    k: usize,
    next: &[T],
) -> Result<Vec<T>> {
    let nx = grid.nx();
    let t = grid.t(k);
    let dx = grid.dx();
    let two = T::lit(2.0);
    let half = T::lit(0.5);
    let nu = spec.controls_i().len();
    let nv = spec.controls_ii().len();
    let d = spec.noise_dim();
    let (pm, pn) = flavor.penalties();
    let order = flavor.order();
    (0..nx)
        .into_par_iter()
        .map(|i| {
            let x = [grid.x(i)];
            let w = next[i];
            let (lo, up) = (spec.lower(t, &x), spec.upper(t, &x));
            // second difference, one-sided differences, central difference
            let (d2, fwd, bwd, central) = if i == 0 {
                let s = (next[1] - w) / dx;
                (T::zero(), s, s, T::zero())
            } else if i == nx - 1 {
                let s = (w - next[i - 1]) / dx;
                (T::zero(), s, s, T::zero())
            } else {
                (
                    (next[i + 1] - two * w + next[i - 1]) / (dx * dx),
                    (next[i + 1] - w) / dx,
                    (w - next[i - 1]) / dx,
                    (next[i + 1] - next[i - 1]) / (two * dx),
                )
            };
            let mut b = [T::zero()];
            let mut sigma = vec![T::zero(); d];
            let mut z = vec![T::zero(); d];
            let mut table = Vec::with_capacity(nu * nv);
            for iu in 0..nu {
                for iv in 0..nv {
                    spec.drift(t, &x, iu, iv, &mut b);
                    spec.diffusion(t, &x, iu, iv, &mut sigma);
                    let s2: T = sigma.iter().map(|&s| s * s).sum();
                    let drift_term =
                        if (i == 0 && b[0] < T::zero()) || (i == nx - 1 && b[0] > T::zero()) {
                            T::zero()
                        } else if b[0] >= T::zero() {
                            b[0] * fwd
                        } else {
                            b[0] * bwd
                        };
                    for (zc, &sc) in z.iter_mut().zip(&sigma) {
                        *zc = sc * central;
                    }
                    let f = spec.driver(t, &x, w, &z, iu, iv);
                    let g = penalized_driver(f, w, lo, up, pm, pn);
                    let val = half * s2 * d2 + drift_term + g;
                    if !val.is_finite() {
                        return Err(Error::NonFiniteIntegrand {
                            u: iu,
                            v: iv,
                            t: t.as_f64(),
                            x: vec![x[0].as_f64()],
                        });
                    }
                    table.push(val);
                }
            }
            Ok(reduce_table(&table, nu, nv, order).0)
        })
        .collect()
}

fn project<T: Scalar>(flavor: &Flavor<T>, y: T, lo: T, up: T) -> (T, ActiveMask) {
    let mut out = (y, ActiveMask::Interior);
    if flavor.clamps_lower() && y < lo {
        out = (lo, ActiveMask::LowerObstacle);
    }
    if flavor.clamps_upper() && out.0 > up {
        out = (up, ActiveMask::UpperObstacle);
    }
    out
}

/// Marches the scheme from `terminal` at level `k_to` down to level
/// `k_from` of `grid`.
pub fn solve_levels<T: Scalar>(
    spec: &ProblemSpec<T>,
    grid: &SpaceTimeGrid<T>,
    flavor: Flavor<T>,
    k_from: usize,
    k_to: usize,
    terminal: Vec<T>,
) -> Result<ValueField<T>> {
    flavor.check()?;
    if k_from >= k_to || k_to > grid.nt() {
        return Err(Error::InvalidArgument(format!(
            "invalid level window [{k_from}, {k_to}] for a grid with {} steps",
            grid.nt()
        )));
    }
    let nx = grid.nx();
    if terminal.len() != nx {
        return Err(Error::InvalidArgument(format!(
            "terminal slice has {} values, grid has {nx} nodes",
            terminal.len()
        )));
    }
    let certificate = grid.certify(spec, flavor.penalty_max())?;
    let dt = grid.dt();
    let levels = k_to - k_from + 1;
    let mut values = vec![T::zero(); levels * nx];
    let mut mask = vec![ActiveMask::Interior; levels * nx];
    values[(levels - 1) * nx..].copy_from_slice(&terminal);
    for k in (k_from..k_to).rev() {
        let row = k - k_from;
        let (head, tail) = values.split_at_mut((row + 1) * nx);
        let next = &tail[..nx];
        let ham = discrete_hamiltonian(spec, grid, &flavor, k, next)?;
        let t = grid.t(k);
        let out = &mut head[row * nx..];
        let mrow = &mut mask[row * nx..(row + 1) * nx];
        for i in 0..nx {
            let x = [grid.x(i)];
            let raw = next[i] + dt * ham[i];
            let (v, m) = project(&flavor, raw, spec.lower(t, &x), spec.upper(t, &x));
            if !v.is_finite() {
                return Err(Error::NonFiniteValue { step: k, node: i });
            }
            out[i] = v;
            mrow[i] = m;
        }
    }
    Ok(ValueField {
        grid: *grid,
        flavor,
        first_level: k_from,
        last_level: k_to,
        values,
        mask,
        certificate,
    })
}

/// `Phi` at the grid nodes.
pub fn terminal_slice<T: Scalar>(spec: &ProblemSpec<T>, grid: &SpaceTimeGrid<T>) -> Vec<T> {
    (0..grid.nx())
        .map(|i| spec.terminal(&[grid.x(i)]))
        .collect()
}

/// Solves for `W` (flavor `Lower`) or `U` (flavor `Upper`) on the whole grid.
pub fn solve_isaacs_double_obstacle<T: Scalar>(
    spec: &ProblemSpec<T>,
    grid: &SpaceTimeGrid<T>,
    flavor: Flavor<T>,
) -> Result<ValueField<T>> {
    if flavor.is_penalized() {
        return Err(Error::InvalidArgument(format!(
            "flavor {} is penalized; use solve_isaacs_penalized",
            flavor.name()
        )));
    }
    solve_levels(spec, grid, flavor, 0, grid.nt(), terminal_slice(spec, grid))
}

/// Solves for `W_m`, `W̄_m` or `W_{m,n}` on the whole grid.
pub fn solve_isaacs_penalized<T: Scalar>(
    spec: &ProblemSpec<T>,
    grid: &SpaceTimeGrid<T>,
    flavor: Flavor<T>,
) -> Result<ValueField<T>> {
    if !flavor.is_penalized() {
        return Err(Error::InvalidArgument(format!(
            "flavor {} is not penalized; use solve_isaacs_double_obstacle",
            flavor.name()
        )));
    }
    solve_levels(spec, grid, flavor, 0, grid.nt(), terminal_slice(spec, grid))
}

/// Strictly increasing, nonnegative penalty levels.
#[derive(Debug, Clone, PartialEq)]
pub struct PenalizationSchedule<T> {
    levels: Vec<T>,
}

impl<T: Scalar> PenalizationSchedule<T> {
    pub fn new(levels: Vec<T>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::InvalidArgument(
                "penalization schedule is empty".into(),
            ));
        }
        if levels.iter().any(|&m| !(m >= T::zero() && m.is_finite())) {
            return Err(Error::InvalidArgument(
                "penalty levels must be finite and nonnegative".into(),
            ));
        }
        if levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(
                "penalty levels must be strictly increasing".into(),
            ));
        }
        Ok(Self { levels })
    }

    /// `1, 2, 4, ..., 2^(count - 1)`.
    pub fn doubling(count: usize) -> Result<Self> {
        Self::new((0..count).map(|p| T::lit(2f64.powi(p as i32))).collect())
    }

    pub fn levels(&self) -> &[T] {
        &self.levels
    }

    pub fn max(&self) -> T {
        self.levels[self.levels.len() - 1]
    }
}

/// Tolerance of the nodewise monotonicity and sandwich flags.
pub const MONOTONE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport<T> {
    pub levels: Vec<T>,
    /// `sup |W_m - W|` per level.
    pub sup_gap_above: Vec<T>,
    /// `sup |W̄_m - W|` per level.
    pub sup_gap_below: Vec<T>,
    /// `sup |W_{m,m} - W|` per level.
    pub diagonal_gap: Vec<T>,
    /// `sup |W_m - W̄_m|` per level.
    pub two_sided_spread: Vec<T>,
    /// `W <= W_m` and `W_m` nonincreasing in `m`, nodewise.
    pub monotone_above: bool,
    /// `W̄_m <= W` and `W̄_m` nondecreasing in `m`, nodewise.
    pub monotone_below: bool,
    /// `W̄_m <= W <= W_m` nodewise at every level.
    pub sandwich_holds: bool,
}

impl<T: Scalar> ConvergenceReport<T> {
    pub fn diagonal_nonincreasing(&self) -> bool {
        self.diagonal_gap
            .windows(2)
            .all(|w| w[1] <= w[0] + T::tol(MONOTONE_TOL))
    }
}

/// Solves `W`, then `W_m`, `W̄_m`, `W_{m,m}` for every level of the schedule.
pub fn run_penalization_sweep<T: Scalar>(
    spec: &ProblemSpec<T>,
    grid: &SpaceTimeGrid<T>,
    schedule: &PenalizationSchedule<T>,
) -> Result<ConvergenceReport<T>> {
    let base = solve_isaacs_double_obstacle(spec, grid, Flavor::Lower)?;
    let solved: Vec<(ValueField<T>, ValueField<T>, ValueField<T>)> = schedule
        .levels()
        .par_iter()
        .map(|&m| {
            Ok((
                solve_isaacs_penalized(spec, grid, Flavor::PenalizedLower { m })?,
                solve_isaacs_penalized(spec, grid, Flavor::PenalizedUpper { m })?,
                solve_isaacs_penalized(spec, grid, Flavor::PenalizedFree { m, n: m })?,
            ))
        })
        .collect::<Result<_>>()?;
    let tol = T::tol(MONOTONE_TOL);
    let mut report = ConvergenceReport {
        levels: schedule.levels().to_vec(),
        sup_gap_above: Vec::new(),
        sup_gap_below: Vec::new(),
        diagonal_gap: Vec::new(),
        two_sided_spread: Vec::new(),
        monotone_above: true,
        monotone_below: true,
        sandwich_holds: true,
    };
    for (idx, (above, below, diag)) in solved.iter().enumerate() {
        report.sup_gap_above.push(above.sup_distance(&base));
        report.sup_gap_below.push(below.sup_distance(&base));
        report.diagonal_gap.push(diag.sup_distance(&base));
        report.two_sided_spread.push(above.sup_distance(below));
        let above_ok = base.max_excess_over(above) <= tol;
        let below_ok = below.max_excess_over(&base) <= tol;
        report.sandwich_holds &= above_ok && below_ok;
        report.monotone_above &= above_ok;
        report.monotone_below &= below_ok;
        if idx > 0 {
            let (prev_above, prev_below, _) = &solved[idx - 1];
            report.monotone_above &= above.max_excess_over(prev_above) <= tol;
            report.monotone_below &= prev_below.max_excess_over(below) <= tol;
        }
    }
    Ok(report)
}

/// Residual statistics of the discrete obstacle problem.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualReport<T> {
    /// `max |(w_k - w_{k+1}) / dt - H|` over interior-mask points.
    pub max_interior: T,
    /// Largest `|w - h|` at lower-obstacle points and `|w - h'|` at
    /// upper-obstacle points.
    pub max_obstacle_mismatch: T,
    /// Largest `-operator` at lower-obstacle points (should be `<= tol`).
    pub max_lower_breach: T,
    /// Largest `operator` at upper-obstacle points (should be `<= tol`).
    pub max_upper_breach: T,
    pub tol: T,
    /// `(level, node)` of every point that fails its check.
    pub flagged: Vec<(usize, usize)>,
}

impl<T> ResidualReport<T> {
    pub fn passes(&self) -> bool {
        self.flagged.is_empty()
    }
}

/// Recomputes the discrete operator `(w_k - w_{k+1}) / dt - H(w_{k+1})` at
/// every non-terminal point and checks it against the mask: zero at
/// interior points, `>= -tol` on the lower obstacle, `<= tol` on the upper
/// one, with `tol = 10 dt (value range)`.
pub fn viscosity_residual<T: Scalar>(
    field: &ValueField<T>,
    spec: &ProblemSpec<T>,
) -> Result<ResidualReport<T>> {
    let grid = &field.grid;
    let dt = grid.dt();
    let tol = T::lit(10.0) * dt * field.range();
    let obstacle_tol = T::tol(1e-12);
    let mut report = ResidualReport {
        max_interior: T::zero(),
        max_obstacle_mismatch: T::zero(),
        max_lower_breach: T::zero(),
        max_upper_breach: T::zero(),
        tol,
        flagged: Vec::new(),
    };
    for k in field.first_level..field.last_level {
        let next = field.slice(k + 1);
        let ham = discrete_hamiltonian(spec, grid, &field.flavor, k, next)?;
        let t = grid.t(k);
        for i in 0..grid.nx() {
            let x = [grid.x(i)];
            let w = field.value(k, i);
            let op = (w - next[i]) / dt - ham[i];
            let bad = match field.mask_slice(k)[i] {
                ActiveMask::Interior => {
                    report.max_interior = report.max_interior.max(op.abs());
                    op.abs() > tol
                }
                ActiveMask::LowerObstacle => {
                    let mis = (w - spec.lower(t, &x)).abs();
                    report.max_obstacle_mismatch = report.max_obstacle_mismatch.max(mis);
                    report.max_lower_breach = report.max_lower_breach.max(-op);
                    mis > obstacle_tol || op < -tol
                }
                ActiveMask::UpperObstacle => {
                    let mis = (w - spec.upper(t, &x)).abs();
                    report.max_obstacle_mismatch = report.max_obstacle_mismatch.max(mis);
                    report.max_upper_breach = report.max_upper_breach.max(op);
                    mis > obstacle_tol || op > tol
                }
            };
            if bad {
                report.flagged.push((k, i));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::CoefficientSet;

    fn constant(c: f64) -> ProblemSpec<f64> {
        let coeffs = CoefficientSet::new()
            .with_diffusion_1d(|_, _, _, _| 1.0)
            .with_terminal_1d(move |_| c)
            .with_lower_1d(move |_, _| c - 1.0)
            .with_upper_1d(move |_, _| c + 1.0);
        ProblemSpec::scalar(1.0, coeffs, &[0.0], &[0.0]).unwrap()
    }

    fn tent(x: f64) -> f64 {
        (1.0 - x.abs()).max(0.0)
    }

    fn heat(rate: f64) -> ProblemSpec<f64> {
        let coeffs = CoefficientSet::new()
            .with_diffusion_1d(|_, _, _, _| 2f64.sqrt())
            .with_driver_1d(move |_, _, y: f64, _, _, _| -rate * y)
            .with_terminal_1d(tent)
            .with_lower_1d(|_, x| tent(x) - 0.4)
            .with_upper_1d(|_, x| tent(x) + 0.1)
            .with_driver_lipschitz(rate)
            .with_lipschitz(1.0);
        ProblemSpec::scalar(1.0, coeffs, &[0.0], &[0.0]).unwrap()
    }

    fn heat_grid() -> SpaceTimeGrid<f64> {
        SpaceTimeGrid::new(-4.0, 4.0, 41, 100, 1.0, 1.0).unwrap()
    }

    #[test]
    fn constant_problem_is_exact() {
        let s = constant(0.7);
        let g = SpaceTimeGrid::new(-3.0, 3.0, 31, 100, 1.0, 1.0).unwrap();
        for flavor in [Flavor::Lower, Flavor::Upper] {
            let w = solve_isaacs_double_obstacle(&s, &g, flavor).unwrap();
            assert!(w.values.iter().all(|&v| v == 0.7));
            assert!(w.mask.iter().all(|&m| m == ActiveMask::Interior));
            let r = viscosity_residual(&w, &s).unwrap();
            assert_eq!(r.max_interior, 0.0);
            assert!(r.passes());
        }
    }

    #[test]
    fn discount_with_zero_data_stays_zero() {
        let coeffs = CoefficientSet::new()
            .with_driver_1d(|_, _, y: f64, _, _, _| -y)
            .with_driver_lipschitz(1.0);
        let s = ProblemSpec::scalar(1.0, coeffs, &[0.0], &[0.0]).unwrap();
        let g = SpaceTimeGrid::new(-1.0, 1.0, 11, 20, 1.0, 1.0).unwrap();
        let w = solve_isaacs_double_obstacle(&s, &g, Flavor::Lower).unwrap();
        assert!(w.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn terminal_slice_and_sandwich() {
        let s = heat(0.1);
        let g = heat_grid();
        let w = solve_isaacs_double_obstacle(&s, &g, Flavor::Lower).unwrap();
        for i in 0..g.nx() {
            assert_eq!(w.value(g.nt(), i), tent(g.x(i)));
        }
        for k in w.levels() {
            for i in 0..g.nx() {
                let x = g.x(i);
                let v = w.value(k, i);
                assert!(tent(x) - 0.4 <= v && v <= tent(x) + 0.1);
            }
        }
        assert!(w.mask.contains(&ActiveMask::LowerObstacle));
        assert!(w.mask.contains(&ActiveMask::UpperObstacle));
    }

    #[test]
    fn flavor_guards() {
        let s = constant(0.0);
        let g = SpaceTimeGrid::new(-3.0, 3.0, 31, 100, 1.0, 1.0).unwrap();
        assert!(solve_isaacs_double_obstacle(&s, &g, Flavor::PenalizedLower { m: 1.0 }).is_err());
        assert!(solve_isaacs_penalized(&s, &g, Flavor::Lower).is_err());
        assert!(solve_isaacs_penalized(&s, &g, Flavor::PenalizedFree { m: -1.0, n: 0.0 }).is_err());
        assert!(matches!(
            solve_isaacs_penalized(&s, &g, Flavor::PenalizedLower { m: 1e4 }),
            Err(Error::Monotonicity { .. })
        ));
    }

    /// Plain explicit scheme for `-w_t - 1/2 sigma^2 w_xx - f(w) = 0`
    /// without obstacles, written independently of the solver.
    fn semilinear_oracle(
        sigma: f64,
        f: impl Fn(f64, f64) -> f64,
        phi: impl Fn(f64) -> f64,
        g: &SpaceTimeGrid<f64>,
    ) -> Vec<f64> {
        let (dx, dt, nx) = (g.dx(), g.dt(), g.nx());
        let mut w: Vec<f64> = (0..nx).map(|i| phi(g.x(i))).collect();
        for k in (0..g.nt()).rev() {
            let prev = w.clone();
            for i in 0..nx {
                let lap = if i == 0 || i == nx - 1 {
                    0.0
                } else {
                    (prev[i + 1] - 2.0 * prev[i] + prev[i - 1]) / (dx * dx)
                };
                w[i] = prev[i] + dt * (0.5 * sigma * sigma * lap + f(g.x(i), prev[i]));
            }
            let _ = k;
        }
        w
    }

    #[test]
    fn zero_penalty_free_matches_semilinear_oracle() {
        let s = heat(0.1);
        let g = heat_grid();
        let free =
            solve_isaacs_penalized(&s, &g, Flavor::PenalizedFree { m: 0.0, n: 0.0 }).unwrap();
        let oracle = semilinear_oracle(2f64.sqrt(), |_, y| -0.1 * y, tent, &g);
        assert!(sup_distance(free.initial(), &oracle) <= 1e-12);
    }

    #[test]
    fn zero_penalty_with_far_obstacle_is_semilinear() {
        let coeffs = heat(0.1)
            .coefficients()
            .clone()
            .with_lower_1d(|_, _| -1e6)
            .with_upper_1d(|_, _| 1e6);
        let s = heat(0.1).with_coefficients(coeffs);
        let g = heat_grid();
        let one = solve_isaacs_penalized(&s, &g, Flavor::PenalizedLower { m: 0.0 }).unwrap();
        let oracle = semilinear_oracle(2f64.sqrt(), |_, y| -0.1 * y, tent, &g);
        assert!(sup_distance(one.initial(), &oracle) <= 1e-12);
    }

    #[test]
    fn sweep_on_constant_problem() {
        let s = constant(0.2);
        let g = SpaceTimeGrid::new(-3.0, 3.0, 31, 200, 1.0, 1.0).unwrap();
        let r =
            run_penalization_sweep(&s, &g, &PenalizationSchedule::doubling(3).unwrap()).unwrap();
        assert!(r
            .sup_gap_above
            .iter()
            .chain(&r.sup_gap_below)
            .chain(&r.diagonal_gap)
            .all(|&v| v == 0.0));
        assert!(r.monotone_above && r.monotone_below && r.sandwich_holds);
    }

    #[test]
    fn sweep_single_zero_level_is_definitional() {
        let s = heat(0.1);
        let g = heat_grid();
        let r =
            run_penalization_sweep(&s, &g, &PenalizationSchedule::new(vec![0.0]).unwrap()).unwrap();
        let w = solve_isaacs_double_obstacle(&s, &g, Flavor::Lower).unwrap();
        let one = solve_isaacs_penalized(&s, &g, Flavor::PenalizedLower { m: 0.0 }).unwrap();
        assert_eq!(r.sup_gap_above[0], one.sup_distance(&w));
    }

    #[test]
    fn sweep_on_heat_problem_squeezes() {
        let s = heat(0.1);
        let g = SpaceTimeGrid::new(-4.0, 4.0, 41, 200, 1.0, 1.0).unwrap();
        let r =
            run_penalization_sweep(&s, &g, &PenalizationSchedule::doubling(5).unwrap()).unwrap();
        assert!(
            r.monotone_above && r.monotone_below && r.sandwich_holds,
            "{r:?}"
        );
        assert!(r.diagonal_nonincreasing());
        assert!(r.sup_gap_above[4] < r.sup_gap_above[0]);
        assert!(r.sup_gap_below[4] < r.sup_gap_below[0]);
    }

    #[test]
    fn schedule_validation() {
        assert!(PenalizationSchedule::<f64>::new(vec![]).is_err());
        assert!(PenalizationSchedule::new(vec![2.0, 1.0]).is_err());
        assert!(PenalizationSchedule::new(vec![-1.0]).is_err());
        assert_eq!(
            PenalizationSchedule::<f64>::doubling(4).unwrap().levels(),
            &[1.0, 2.0, 4.0, 8.0]
        );
    }

    #[test]
    fn residual_flags_perturbation() {
        let s = heat(0.1);
        let g = heat_grid();
        let mut w = solve_isaacs_double_obstacle(&s, &g, Flavor::Lower).unwrap();
        let clean = viscosity_residual(&w, &s).unwrap();
        assert!(
            clean.passes(),
            "{:?}",
            &clean.flagged[..clean.flagged.len().min(5)]
        );
        assert!(clean.max_interior <= 1e-9);
        let k = 50;
        let i = w
            .mask_slice(k)
            .iter()
            .position(|&m| m == ActiveMask::Interior)
            .unwrap();
        w.slice_mut(k)[i] += 0.1;
        let r = viscosity_residual(&w, &s).unwrap();
        assert!(r.flagged.contains(&(k, i)));
    }

    #[test]
    fn lower_below_upper_for_bilinear_game() {
        let coeffs = CoefficientSet::new()
            .with_diffusion_1d(|_, _, _, _| 1.0)
            .with_driver_1d(|_, _, _, _, u: f64, v: f64| u * v)
            .with_terminal_1d(|x: f64| 0.5 * x.sin())
            .with_lower_1d(|_, _| -2.0)
            .with_upper_1d(|_, _| 2.0);
        let s = ProblemSpec::scalar(1.0, coeffs, &[-1.0, 1.0], &[-1.0, 1.0]).unwrap();
        let g = SpaceTimeGrid::new(-3.0, 3.0, 31, 100, 1.0, 1.0).unwrap();
        let w = solve_isaacs_double_obstacle(&s, &g, Flavor::Lower).unwrap();
        let u = solve_isaacs_double_obstacle(&s, &g, Flavor::Upper).unwrap();
        assert!(w.max_excess_over(&u) <= 1e-9);
        // H+ - H- = 2 everywhere: U - W = 2 (T - t) away from the obstacles
        let mid = g.nx() / 2;
        assert!((u.value(0, mid) - w.value(0, mid) - 2.0).abs() < 1e-9);
    }
}
