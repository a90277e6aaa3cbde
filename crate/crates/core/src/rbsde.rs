//! Backward solvers on the recombining lattice: plain BSDE, one- and
//! two-barrier reflected BSDEs, penalized variants, the backward semigroup,
//! and executable forms of the comparison and a priori estimates.
//!
//! One backward step from `t_{k+1}` to `t_k` at node `x` reads
//!
//! ```text
//! E    = sum_m p_m Y_{k+1}(x + delta_m)
//! Z    = sum_m p_m (Y_{k+1}(x + delta_m) - E) dB_m / dt
//! Y~   = E + dt * g(t_k, x, E, Z)
//! ```
//!
//! followed by the projection of the mode: `Y = max(Y~, L)` (push `K+`),
//! `Y = min(Y~, U)` (push `K-`), both, or none. `dB_m` is the Brownian
//! increment implied by the move `delta_m`, `(delta_m - b dt) sigma / |sigma|^2`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::forwardsim::{build_lattice, ControlSchedule, RecombiningLattice};
use crate::grid::SpaceTimeGrid;
use crate::model::{CoefficientSet, ProblemSpec};
use crate::scalar::Scalar;

/// How the backward step treats the barriers `L = h(t, X)` and `U = h'(t, X)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BackwardMode<T> {
    /// Plain BSDE, barriers ignored.
    Plain,
    /// Reflection at `L` only; driver `f - m (h' - y)^-`.
    OneBarrierLower { m: T },
    /// Reflection at `U` only; driver `f + m (y - h)^-`.
    OneBarrierUpper { m: T },
    /// Reflection at both barriers.
    TwoBarrier,
    /// No reflection; driver `f - m (h' - y)^- + n (y - h)^-`.
    Penalized { m: T, n: T },
}

impl<T: Scalar> BackwardMode<T> {
    fn penalty(&self) -> T {
        match *self {
            Self::OneBarrierLower { m } | Self::OneBarrierUpper { m } => m,
            Self::Penalized { m, n } => m.max(n),
            _ => T::zero(),
        }
    }

    fn penalties(&self) -> (T, T) {
        match *self {
            Self::OneBarrierLower { m } => (m, T::zero()),
            Self::OneBarrierUpper { m } => (T::zero(), m),
            Self::Penalized { m, n } => (m, n),
            _ => (T::zero(), T::zero()),
        }
    }

    fn reflects_lower(&self) -> bool {
        matches!(self, Self::OneBarrierLower { .. } | Self::TwoBarrier)
    }

    fn reflects_upper(&self) -> bool {
        matches!(self, Self::OneBarrierUpper { .. } | Self::TwoBarrier)
    }
}

/// Penalized driver `f - m (h' - y)^- + n (y - h)^-`; zero penalties leave
/// `f` untouched bit for bit.
pub fn penalized_driver<T: Scalar>(f: T, y: T, lower: T, upper: T, m: T, n: T) -> T {
    let mut g = f;
    if m != T::zero() {
        g = g - m * (upper - y).neg_part();
    }
    if n != T::zero() {
        g = g + n * (y - lower).neg_part();
    }
    g
}

/// Discrete `(Y, Z, K+, K-)` on the lattice over a window of steps.
///
/// Index `k` of every array refers to lattice step `first_step + k`.
#[derive(Debug, Clone, PartialEq)]
pub struct RBSDESolution<T> {
    pub mode: BackwardMode<T>,
    pub first_step: usize,
    pub times: Vec<T>,
    pub noise_dim: usize,
    pub y: Vec<Vec<T>>,
    /// `width x d` per step; zero at the final step.
    pub z: Vec<Vec<T>>,
    /// Push increments over `[t_k, t_{k+1}]`; zero at the final step.
    pub dk_plus: Vec<Vec<T>>,
    pub dk_minus: Vec<Vec<T>>,
    /// Cumulative pushes along constant-state lines, `K(t_first) = 0`.
    pub k_plus: Vec<Vec<T>>,
    pub k_minus: Vec<Vec<T>>,
    pub lower: Vec<Vec<T>>,
    pub upper: Vec<Vec<T>>,
    /// Occupation-weighted `sum (Y - L) dK+`.
    pub flatness_plus: T,
    /// Occupation-weighted `sum (U - Y) dK-`.
    pub flatness_minus: T,
}

impl<T: Scalar> RBSDESolution<T> {
    pub fn initial(&self) -> &[T] {
        &self.y[0]
    }

    /// Largest violation of `L <= Y <= U` over all steps and nodes.
    pub fn sandwich_violation(&self) -> T {
        let mut worst = T::zero();
        for k in 0..self.y.len() {
            for j in 0..self.y[k].len() {
                worst = worst
                    .max(self.lower[k][j] - self.y[k][j])
                    .max(self.y[k][j] - self.upper[k][j]);
            }
        }
        worst
    }

    /// Number of `(step, node)` with both pushes active.
    pub fn simultaneous_pushes(&self) -> usize {
        self.dk_plus
            .iter()
            .zip(&self.dk_minus)
            .map(|(p, m)| {
                p.iter()
                    .zip(m)
                    .filter(|(&a, &b)| a * b != T::zero())
                    .count()
            })
            .sum()
    }

    /// Number of `(step, node)` where a push happens away from its barrier,
    /// i.e. `(Y - L) dK+ != 0` or `(U - Y) dK- != 0`.
    pub fn flatness_breaches(&self) -> usize {
        let mut count = 0;
        for k in 0..self.y.len() {
            for j in 0..self.y[k].len() {
                let y = self.y[k][j];
                if (y - self.lower[k][j]) * self.dk_plus[k][j] != T::zero()
                    || (self.upper[k][j] - y) * self.dk_minus[k][j] != T::zero()
                {
                    count += 1;
                }
            }
        }
        count
    }
}

fn check_contraction<T: Scalar>(
    lattice: &RecombiningLattice<T>,
    spec: &ProblemSpec<T>,
    mode: &BackwardMode<T>,
) -> Result<()> {
    let rate = spec.coefficients().driver_lipschitz + mode.penalty();
    let product = lattice.dt * rate;
    if product >= T::one() {
        return Err(Error::Contraction {
            product: product.as_f64(),
            max_dt: (T::one() / rate).as_f64(),
        });
    }
    Ok(())
}

/// Backward recursion between lattice steps `k_start < k_end` from the
/// terminal data `terminal` (one value per node of step `k_end`).
pub fn solve_window<T: Scalar>(
    lattice: &RecombiningLattice<T>,
    spec: &ProblemSpec<T>,
    controls: &ControlSchedule,
    mode: BackwardMode<T>,
    k_start: usize,
    k_end: usize,
    terminal: Vec<T>,
) -> Result<RBSDESolution<T>> {
    if k_start >= k_end || k_end > lattice.steps() {
        return Err(Error::InvalidArgument(format!(
            "invalid step window [{k_start}, {k_end}] for a lattice with {} steps",
            lattice.steps()
        )));
    }
    if terminal.len() != lattice.width(k_end) {
        return Err(Error::InvalidArgument(format!(
            "terminal data has {} values, step {k_end} has {} nodes",
            terminal.len(),
            lattice.width(k_end)
        )));
    }
    if lattice.num_pairs() != spec.num_pairs() {
        return Err(Error::InvalidArgument(
            "lattice and problem control grids differ".into(),
        ));
    }
    let nu = spec.controls_i().len();
    let nv = spec.controls_ii().len();
    for k in k_start..k_end {
        let (u, v) = controls.at(k);
        if u >= nu || v >= nv {
            return Err(Error::InvalidArgument(format!(
                "control pair (u#{u}, v#{v}) at step {k} outside the grids"
            )));
        }
    }
    check_contraction(lattice, spec, &mode)?;

    let d = spec.noise_dim();
    let dt = lattice.dt;
    let dx = lattice.dx;
    let (pen_m, pen_n) = mode.penalties();
    let len = k_end - k_start + 1;
    let barrier = |k: usize| -> (Vec<T>, Vec<T>) {
        let t = lattice.times[k];
        (0..lattice.width(k))
            .map(|j| {
                let x = [lattice.state(k, j)];
                (spec.lower(t, &x), spec.upper(t, &x))
            })
            .unzip()
    };

    let mut y = vec![Vec::new(); len];
    let mut z = vec![Vec::new(); len];
    let mut dkp = vec![Vec::new(); len];
    let mut dkm = vec![Vec::new(); len];
    let mut lower = vec![Vec::new(); len];
    let mut upper = vec![Vec::new(); len];

    let last = len - 1;
    let (lo_t, up_t) = barrier(k_end);
    let width_end = lattice.width(k_end);
    y[last] = terminal;
    z[last] = vec![T::zero(); width_end * d];
    dkp[last] = vec![T::zero(); width_end];
    dkm[last] = vec![T::zero(); width_end];
    lower[last] = lo_t;
    upper[last] = up_t;

    for k in (k_start..k_end).rev() {
        let idx = k - k_start;
        let t = lattice.times[k];
        let (iu, iv) = controls.at(k);
        let pair = iu * nv + iv;
        let (lo, up) = barrier(k);
        let next = &y[idx + 1];
        let rows: Vec<(T, Vec<T>, T, T)> = (0..lattice.width(k))
            .into_par_iter()
            .map(|j| {
                let x = [lattice.state(k, j)];
                let p = lattice.transition(k, j, pair);
                let nb = [next[j], next[j + 1], next[j + 2]];
                let e = p[0] * nb[0] + p[1] * nb[1] + p[2] * nb[2];
                let mut b = [T::zero()];
                let mut sigma = vec![T::zero(); d];
                spec.drift(t, &x, iu, iv, &mut b);
                spec.diffusion(t, &x, iu, iv, &mut sigma);
                let s2: T = sigma.iter().map(|&s| s * s).sum();
                let mut zj = vec![T::zero(); d];
                if s2 > T::zero() {
                    let disp = [-dx, T::zero(), dx];
                    let cov: T = (0..3)
                        .map(|m| p[m] * (nb[m] - e) * (disp[m] - b[0] * dt))
                        .sum();
                    for (c, zc) in zj.iter_mut().enumerate() {
                        *zc = cov * sigma[c] / (s2 * dt);
                    }
                }
                let f = spec.driver(t, &x, e, &zj, iu, iv);
                let g = penalized_driver(f, e, lo[j], up[j], pen_m, pen_n);
                let tilde = e + dt * g;
                let mut yj = tilde;
                let mut push_up = T::zero();
                let mut push_down = T::zero();
                if mode.reflects_lower() && tilde < lo[j] {
                    yj = lo[j];
                    push_up = lo[j] - tilde;
                }
                if mode.reflects_upper() && tilde > up[j] {
                    yj = up[j];
                    push_down = tilde - up[j];
                }
                (yj, zj, push_up, push_down)
            })
            .collect();
        let mut yk = Vec::with_capacity(rows.len());
        let mut zk = Vec::with_capacity(rows.len() * d);
        let mut pk = Vec::with_capacity(rows.len());
        let mut mk = Vec::with_capacity(rows.len());
        for (j, (yj, zj, pu, pd)) in rows.into_iter().enumerate() {
            if !yj.is_finite() || zj.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteValue { step: k, node: j });
            }
            yk.push(yj);
            zk.extend(zj);
            pk.push(pu);
            mk.push(pd);
        }
        y[idx] = yk;
        z[idx] = zk;
        dkp[idx] = pk;
        dkm[idx] = mk;
        lower[idx] = lo;
        upper[idx] = up;
    }

    // cumulative pushes along constant-state lines and flatness residuals
    let mut k_plus = vec![Vec::new(); len];
    let mut k_minus = vec![Vec::new(); len];
    k_plus[0] = vec![T::zero(); lattice.width(k_start)];
    k_minus[0] = vec![T::zero(); lattice.width(k_start)];
    let mut occ =
        vec![T::one() / T::from_usize_lossy(lattice.width(k_start)); lattice.width(k_start)];
    let mut flat_p = T::zero();
    let mut flat_m = T::zero();
    for idx in 0..last {
        let k = k_start + idx;
        let width_next = lattice.width(k + 1);
        let mut kp = vec![T::zero(); width_next];
        let mut km = vec![T::zero(); width_next];
        let mut occ_next = vec![T::zero(); width_next];
        let (iu, iv) = controls.at(k);
        for j in 0..lattice.width(k) {
            kp[j + 1] = k_plus[idx][j] + dkp[idx][j];
            km[j + 1] = k_minus[idx][j] + dkm[idx][j];
            flat_p = flat_p + occ[j] * (y[idx][j] - lower[idx][j]) * dkp[idx][j];
            flat_m = flat_m + occ[j] * (upper[idx][j] - y[idx][j]) * dkm[idx][j];
            let p = lattice.transition(k, j, iu * nv + iv);
            for m in 0..3 {
                occ_next[j + m] = occ_next[j + m] + occ[j] * p[m];
            }
        }
        k_plus[idx + 1] = kp;
        k_minus[idx + 1] = km;
        occ = occ_next;
    }

    Ok(RBSDESolution {
        mode,
        first_step: k_start,
        times: lattice.times[k_start..=k_end].to_vec(),
        noise_dim: d,
        y,
        z,
        dk_plus: dkp,
        dk_minus: dkm,
        k_plus,
        k_minus,
        lower,
        upper,
        flatness_plus: flat_p,
        flatness_minus: flat_m,
    })
}

/// Terminal values `Phi(x)` at the lattice's final nodes.
pub fn terminal_values<T: Scalar>(
    lattice: &RecombiningLattice<T>,
    spec: &ProblemSpec<T>,
) -> Vec<T> {
    let k = lattice.steps();
    (0..lattice.width(k))
        .map(|j| spec.terminal(&[lattice.state(k, j)]))
        .collect()
}

/// Full-horizon backward induction from `Phi(X_T)`.
pub fn solve_backward<T: Scalar>(
    lattice: &RecombiningLattice<T>,
    spec: &ProblemSpec<T>,
    controls: &ControlSchedule,
    mode: BackwardMode<T>,
) -> Result<RBSDESolution<T>> {
    let terminal = terminal_values(lattice, spec);
    solve_window(lattice, spec, controls, mode, 0, lattice.steps(), terminal)
}

/// Backward stochastic semigroup `G_{s, t_delta}[eta]` of the two-barrier
/// equation: values at time `s` on that step's nodes. `eta` must respect
/// the barrier sandwich at time `t_delta`.
pub fn backward_semigroup<T: Scalar>(
    lattice: &RecombiningLattice<T>,
    spec: &ProblemSpec<T>,
    controls: &ControlSchedule,
    s: T,
    t_delta: T,
    eta: &[T],
) -> Result<Vec<T>> {
    let find = |t: T| {
        lattice
            .times
            .iter()
            .position(|&tk| (tk - t).abs() <= lattice.dt * T::lit(1e-9))
            .ok_or_else(|| Error::InvalidArgument(format!("time {t} is not a lattice time")))
    };
    let ks = find(s)?;
    let kd = find(t_delta)?;
    if eta.len() != lattice.width(kd) {
        return Err(Error::InvalidArgument(format!(
            "eta has {} values, step {kd} has {} nodes",
            eta.len(),
            lattice.width(kd)
        )));
    }
    let t = lattice.times[kd];
    for (j, &e) in eta.iter().enumerate() {
        let x = [lattice.state(kd, j)];
        let (lo, up) = (spec.lower(t, &x), spec.upper(t, &x));
        if !(lo <= e && e <= up) {
            return Err(Error::BarrierSandwich {
                node: j,
                x: x[0].as_f64(),
                value: e.as_f64(),
                lower: lo.as_f64(),
                upper: up.as_f64(),
            });
        }
    }
    let sol = solve_window(
        lattice,
        spec,
        controls,
        BackwardMode::TwoBarrier,
        ks,
        kd,
        eta.to_vec(),
    )?;
    Ok(sol.y.into_iter().next().unwrap_or_default())
}

/// Outcome of a comparison run.
#[derive(Debug, Clone, PartialEq)]
pub enum ComparisonOutcome {
    Pass,
    Fail,
    /// The monotone hypotheses did not hold on the sampled points.
    Inconclusive(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport<T> {
    pub outcome: ComparisonOutcome,
    /// `max (Y1 - Y2)` over all steps and nodes.
    pub worst_violation: T,
    /// Whether the push orderings were checked (two barriers, equal barriers).
    pub push_order_checked: bool,
    /// Largest violation of `K1- <= K2-` and `K1+ >= K2+`.
    pub worst_push_violation: T,
}

/// Tolerance used by [`comparison_check`].
pub const COMPARISON_TOL: f64 = 1e-10;

/// Solves both problems at the same controls and checks `Y1 <= Y2`. The
/// hypotheses `Phi1 <= Phi2` (at the terminal nodes), `f1 <= f2` and equal
/// dynamics and barriers (on sampled points) are verified first.
pub fn comparison_check<T: Scalar>(
    spec1: &ProblemSpec<T>,
    spec2: &ProblemSpec<T>,
    lattice: &RecombiningLattice<T>,
    controls: &ControlSchedule,
    mode: BackwardMode<T>,
    samples: usize,
    seed: u64,
) -> Result<ComparisonReport<T>> {
    if let Some(reason) = comparison_hypotheses(spec1, spec2, lattice, controls, samples, seed) {
        return Ok(ComparisonReport {
            outcome: ComparisonOutcome::Inconclusive(reason),
            worst_violation: T::zero(),
            push_order_checked: false,
            worst_push_violation: T::zero(),
        });
    }
    let s1 = solve_backward(lattice, spec1, controls, mode)?;
    let s2 = solve_backward(lattice, spec2, controls, mode)?;
    let tol = T::tol(COMPARISON_TOL);
    let mut worst = T::neg_infinity();
    for (a, b) in s1.y.iter().zip(&s2.y) {
        for (&p, &q) in a.iter().zip(b) {
            worst = worst.max(p - q);
        }
    }
    let push_order_checked = matches!(mode, BackwardMode::TwoBarrier);
    let mut worst_push = T::zero();
    if push_order_checked {
        let pairs = [
            (&s1.k_minus, &s2.k_minus, T::one()),
            (&s1.dk_minus, &s2.dk_minus, T::one()),
            (&s1.k_plus, &s2.k_plus, -T::one()),
            (&s1.dk_plus, &s2.dk_plus, -T::one()),
        ];
        for (a, b, sign) in pairs {
            for (ra, rb) in a.iter().zip(b) {
                for (&p, &q) in ra.iter().zip(rb) {
                    worst_push = worst_push.max(sign * (p - q));
                }
            }
        }
    }
    let ok = worst <= tol && worst_push <= tol;
    Ok(ComparisonReport {
        outcome: if ok {
            ComparisonOutcome::Pass
        } else {
            ComparisonOutcome::Fail
        },
        worst_violation: worst,
        push_order_checked,
        worst_push_violation: worst_push,
    })
}

fn comparison_hypotheses<T: Scalar>(
    spec1: &ProblemSpec<T>,
    spec2: &ProblemSpec<T>,
    lattice: &RecombiningLattice<T>,
    controls: &ControlSchedule,
    samples: usize,
    seed: u64,
) -> Option<String> {
    use rand::Rng;
    if spec1.num_pairs() != spec2.num_pairs() || spec1.noise_dim() != spec2.noise_dim() {
        return Some("control grids or noise dimensions differ".into());
    }
    let kt = lattice.steps();
    for j in 0..lattice.width(kt) {
        let x = [lattice.state(kt, j)];
        if spec1.terminal(&x) > spec2.terminal(&x) {
            return Some(format!("Phi1 > Phi2 at x = {}", x[0]));
        }
    }
    let d = spec1.noise_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut b1, mut b2) = ([T::zero()], [T::zero()]);
    let (mut s1, mut s2) = (vec![T::zero(); d], vec![T::zero(); d]);
    for _ in 0..samples {
        let k = rng.random_range(0..kt);
        let j = rng.random_range(0..lattice.width(k));
        let t = lattice.times[k];
        let x = [lattice.state(k, j)];
        let (iu, iv) = controls.at(k);
        let y = T::lit(rng.random_range(-3.0..3.0));
        let z: Vec<T> = (0..d)
            .map(|_| T::lit(rng.random_range(-3.0..3.0)))
            .collect();
        if spec1.driver(t, &x, y, &z, iu, iv) > spec2.driver(t, &x, y, &z, iu, iv) {
            return Some(format!("f1 > f2 at t = {t}, x = {}", x[0]));
        }
        if spec1.lower(t, &x) != spec2.lower(t, &x) || spec1.upper(t, &x) != spec2.upper(t, &x) {
            return Some(format!("barriers differ at t = {t}, x = {}", x[0]));
        }
        spec1.drift(t, &x, iu, iv, &mut b1);
        spec2.drift(t, &x, iu, iv, &mut b2);
        spec1.diffusion(t, &x, iu, iv, &mut s1);
        spec2.diffusion(t, &x, iu, iv, &mut s2);
        if b1 != b2 || s1 != s2 {
            return Some(format!("dynamics differ at t = {t}, x = {}", x[0]));
        }
    }
    None
}

/// Options for [`apriori_estimate_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct AprioriOptions<T> {
    /// Lattice paths sampled from the central root node.
    pub paths: usize,
    pub seed: u64,
    /// Shift `delta` of the comparison data `f' = f - delta`,
    /// `Phi' = clamp(Phi - delta)` used for the stability estimate.
    pub perturbation: T,
    /// Allowed factor between the constants of consecutive refinements.
    pub stability_factor: T,
}

impl<T: Scalar> Default for AprioriOptions<T> {
    fn default() -> Self {
        Self {
            paths: 4000,
            seed: 17,
            perturbation: T::lit(0.1),
            stability_factor: T::lit(2.0),
        }
    }
}

/// Empirical sides of the a priori estimates on one lattice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimateLevel<T> {
    pub dx: T,
    pub dt: T,
    /// `E[sup |Y|^2]`.
    pub bound_lhs: T,
    /// `E[xi^2 + (int g(s,0,0) ds)^2 + sup L^2 + sup U^2]`.
    pub bound_rhs: T,
    /// `E[sup |dY|^2 + int |dZ|^2 ds]`.
    pub stability_lhs: T,
    /// `E[|dK+_T - dK-_T|^2]`, recorded without a tolerance.
    pub stability_push_term: T,
    /// `E[|d xi|^2 + int |dg(s, Y, Z)|^2 ds]`.
    pub stability_rhs: T,
    /// `max |Y(t0, x) - Y(t0, x')| / |x - x'|` over adjacent root nodes of
    /// the inner half domain.
    pub lipschitz: T,
}

impl<T: Scalar> EstimateLevel<T> {
    pub fn bound_constant(&self) -> T {
        ratio(self.bound_lhs, self.bound_rhs)
    }

    pub fn stability_constant(&self) -> T {
        ratio(self.stability_lhs, self.stability_rhs)
    }
}

fn ratio<T: Scalar>(a: T, b: T) -> T {
    if b > T::zero() {
        a / b
    } else if a > T::zero() {
        T::infinity()
    } else {
        T::zero()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AprioriReport<T> {
    pub levels: Vec<EstimateLevel<T>>,
    pub passes: bool,
}

fn stable<T: Scalar>(a: T, b: T, factor: T) -> bool {
    let tiny = T::tol(1e-14);
    if a.abs() <= tiny && b.abs() <= tiny {
        return true;
    }
    a > T::zero() && b > T::zero() && a / b <= factor && b / a <= factor
}

/// Perturbed data used by the stability estimate.
pub fn shifted_problem<T: Scalar>(spec: &ProblemSpec<T>, delta: T) -> ProblemSpec<T> {
    let base = spec.coefficients().clone();
    let f = base.driver.clone();
    let phi = base.terminal.clone();
    let lower = base.lower.clone();
    let upper = base.upper.clone();
    let horizon = spec.horizon();
    let coeffs = CoefficientSet {
        driver: std::sync::Arc::new(move |t, x: &[T], y, z: &[T], u: &[T], v: &[T]| {
            f(t, x, y, z, u, v) - delta
        }),
        terminal: std::sync::Arc::new(move |x: &[T]| {
            (phi(x) - delta)
                .max(lower(horizon, x))
                .min(upper(horizon, x))
        }),
        ..base
    };
    spec.with_coefficients(coeffs)
}

/// Evaluates the a priori bound, the stability estimate and the Lipschitz
/// estimate in the initial state on `grid` and on its refinement
/// (`dx / 2`, `dt / 4`); passes iff each implied constant changes by at
/// most `stability_factor` between the two.
pub fn apriori_estimate_check<T: Scalar>(
    spec: &ProblemSpec<T>,
    grid: &SpaceTimeGrid<T>,
    controls: &ControlSchedule,
    opts: &AprioriOptions<T>,
) -> Result<AprioriReport<T>> {
    let grids = [*grid, grid.refined()];
    let mut levels = Vec::with_capacity(grids.len());
    for g in &grids {
        levels.push(estimate_level(spec, g, controls, opts)?);
    }
    let f = opts.stability_factor;
    let passes = levels.windows(2).all(|w| {
        stable(w[0].bound_constant(), w[1].bound_constant(), f)
            && stable(w[0].stability_constant(), w[1].stability_constant(), f)
            && stable(w[0].lipschitz, w[1].lipschitz, f)
    });
    Ok(AprioriReport { levels, passes })
}

fn estimate_level<T: Scalar>(
    spec: &ProblemSpec<T>,
    grid: &SpaceTimeGrid<T>,
    controls: &ControlSchedule,
    opts: &AprioriOptions<T>,
) -> Result<EstimateLevel<T>> {
    let lattice = build_lattice(spec, grid.t_start(), grid)?;
    let other = shifted_problem(spec, opts.perturbation);
    let sol = solve_backward(&lattice, spec, controls, BackwardMode::TwoBarrier)?;
    let sol2 = solve_backward(&lattice, &other, controls, BackwardMode::TwoBarrier)?;
    let nv = spec.controls_ii().len();
    let d = spec.noise_dim();
    let dt = lattice.dt;
    let steps = lattice.steps();
    let root = grid.nx() / 2;
    let zeros = vec![T::zero(); d];
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);

    let mut acc = [T::zero(); 5];
    for _ in 0..opts.paths {
        let path = lattice.sample_path(root, controls, nv, &mut rng);
        let mut sup_y = T::zero();
        let mut sup_l = T::zero();
        let mut sup_u = T::zero();
        let mut g0 = T::zero();
        let mut sup_dy = T::zero();
        let mut int_dz = T::zero();
        let mut int_dg = T::zero();
        let (mut kp, mut km) = (T::zero(), T::zero());
        for (k, &j) in path.iter().enumerate() {
            let y = sol.y[k][j];
            sup_y = sup_y.max(y * y);
            sup_l = sup_l.max(sol.lower[k][j] * sol.lower[k][j]);
            sup_u = sup_u.max(sol.upper[k][j] * sol.upper[k][j]);
            let dy = y - sol2.y[k][j];
            sup_dy = sup_dy.max(dy * dy);
            if k < steps {
                let t = lattice.times[k];
                let x = [lattice.state(k, j)];
                let (iu, iv) = controls.at(k);
                g0 = g0 + dt * spec.driver(t, &x, T::zero(), &zeros, iu, iv);
                let z1 = &sol.z[k][j * d..(j + 1) * d];
                let z2 = &sol2.z[k][j * d..(j + 1) * d];
                let dz: T = z1.iter().zip(z2).map(|(&a, &b)| (a - b) * (a - b)).sum();
                int_dz = int_dz + dt * dz;
                let dg = spec.driver(t, &x, y, z1, iu, iv) - other.driver(t, &x, y, z1, iu, iv);
                int_dg = int_dg + dt * dg * dg;
                kp = kp + sol.dk_plus[k][j] - sol2.dk_plus[k][j];
                km = km + sol.dk_minus[k][j] - sol2.dk_minus[k][j];
            }
        }
        let jt = path[steps];
        let xi = sol.y[steps][jt];
        let dxi = xi - sol2.y[steps][jt];
        acc[0] = acc[0] + sup_y;
        acc[1] = acc[1] + xi * xi + g0 * g0 + sup_l + sup_u;
        acc[2] = acc[2] + sup_dy + int_dz;
        acc[3] = acc[3] + (kp - km) * (kp - km);
        acc[4] = acc[4] + dxi * dxi + int_dg;
    }
    let n = T::from_usize_lossy(opts.paths.max(1));

    let inner = grid.inner_half();
    let mut lipschitz = T::zero();
    for i in inner.start..inner.end.saturating_sub(1) {
        let q = (sol.y[0][i + 1] - sol.y[0][i]).abs() / lattice.dx;
        lipschitz = lipschitz.max(q);
    }
    Ok(EstimateLevel {
        dx: lattice.dx,
        dt,
        bound_lhs: acc[0] / n,
        bound_rhs: acc[1] / n,
        stability_lhs: acc[2] / n,
        stability_push_term: acc[3] / n,
        stability_rhs: acc[4] / n,
        lipschitz,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forwardsim::build_lattice;

    fn lattice_for(
        spec: &ProblemSpec<f64>,
        nx: usize,
        nt: usize,
        lo: f64,
        hi: f64,
    ) -> RecombiningLattice<f64> {
        let g = SpaceTimeGrid::new(lo, hi, nx, nt, spec.horizon(), 1.0).unwrap();
        build_lattice(spec, 0.0, &g).unwrap()
    }

    fn constant_problem(c: f64) -> ProblemSpec<f64> {
        let coeffs = CoefficientSet::new()
            .with_diffusion_1d(|_, _, _, _| 1.0)
            .with_drift_1d(|_, x: f64, _, _| 0.2 * x.sin())
            .with_terminal_1d(move |_| c)
            .with_lower_1d(move |_, _| c - 1.0)
            .with_upper_1d(move |_, _| c + 1.0)
            .with_lipschitz(1.0);
        ProblemSpec::scalar(1.0, coeffs, &[0.0], &[0.0]).unwrap()
    }

    /// Backward recursion of the frozen scalar equation
    /// `y_k = clamp(y_{k+1} + dt f, lo, hi)`.
    fn scalar_oracle(f: f64, lo: f64, hi: f64, y_t: f64, steps: usize, dt: f64) -> f64 {
        let mut y = y_t;
        for _ in 0..steps {
            y = (y + dt * f).max(lo).min(hi);
        }
        y
    }

    #[test]
    fn constant_solution_has_no_push() {
        let s = constant_problem(0.3);
        let l = lattice_for(&s, 11, 40, -1.0, 1.0);
        let sol = solve_backward(
            &l,
            &s,
            &ControlSchedule::fixed(0, 0),
            BackwardMode::TwoBarrier,
        )
        .unwrap();
        for k in 0..sol.y.len() {
            assert!(sol.y[k].iter().all(|&v| v == 0.3));
            assert!(sol.k_plus[k]
                .iter()
                .chain(&sol.k_minus[k])
                .all(|&v| v == 0.0));
        }
    }

    #[test]
    fn downward_driver_hits_lower_barrier() {
        // sigma = b = 0, f = -1, Phi = 0, h = -0.1, h' = 1: unreflected
        // Y(s) = -(T - s), reflected at -0.1
        let coeffs = CoefficientSet::new()
            .with_driver_1d(|_, _, _, _, _, _| -1.0)
            .with_lower_1d(|_, _| -0.1)
            .with_upper_1d(|_, _| 1.0);
        let s = ProblemSpec::scalar(1.0, coeffs, &[0.0], &[0.0]).unwrap();
        let l = lattice_for(&s, 11, 100, -1.0, 1.0);
        let sol = solve_backward(
            &l,
            &s,
            &ControlSchedule::fixed(0, 0),
            BackwardMode::TwoBarrier,
        )
        .unwrap();
        let oracle = scalar_oracle(-1.0, -0.1, 1.0, 0.0, 100, 0.01);
        assert!((oracle + 0.1).abs() < 1e-15);
        for &v in sol.initial() {
            assert!((v - oracle).abs() < 1e-12);
        }
        assert!(sol.dk_minus.iter().flatten().all(|&v| v == 0.0));
        assert!(sol.dk_plus.iter().flatten().any(|&v| v > 0.0));
        // push only once Y sits on the barrier
        assert_eq!(sol.flatness_breaches(), 0);
        assert_eq!(sol.simultaneous_pushes(), 0);
        // K+ grows linearly after the hitting time: dK+ = dt once clamped
        let k_root = &sol.k_plus[sol.y.len() - 1];
        assert!(k_root.iter().any(|&v| (v - 0.9).abs() < 1e-9));
    }

    #[test]
    fn zero_penalty_matches_plain_bitwise() {
        let coeffs = CoefficientSet::new()
            .with_diffusion_1d(|_, _, _, _| 0.8)
            .with_driver_1d(|_, x: f64, y: f64, z: f64, _, _| 0.3 * x.cos() - 0.5 * y + 0.1 * z)
            .with_terminal_1d(|x: f64| x.abs().min(0.5))
            .with_driver_lipschitz(0.6)
            .with_lipschitz(1.0);
        let s = ProblemSpec::scalar(1.0, coeffs, &[0.0], &[0.0]).unwrap();
        let l = lattice_for(&s, 11, 50, -1.0, 1.0);
        let plain =
            solve_backward(&l, &s, &ControlSchedule::fixed(0, 0), BackwardMode::Plain).unwrap();
        let pen = solve_backward(
            &l,
            &s,
            &ControlSchedule::fixed(0, 0),
            BackwardMode::Penalized { m: 0.0, n: 0.0 },
        )
        .unwrap();
        assert_eq!(plain.y, pen.y);
        assert_eq!(plain.z, pen.z);
    }

    #[test]
    fn contraction_precondition() {
        let s = constant_problem(0.0);
        let l = lattice_for(&s, 11, 10, -3.0, 3.0);
        let err = solve_backward(
            &l,
            &s,
            &ControlSchedule::fixed(0, 0),
            BackwardMode::Penalized { m: 20.0, n: 1.0 },
        )
        .unwrap_err();
        match err {
            Error::Contraction { max_dt, .. } => assert!((max_dt - 0.05).abs() < 1e-12),
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn semigroup_examples() {
        let s = constant_problem(0.0).with_coefficients(
            constant_problem(0.0)
                .coefficients()
                .clone()
                .with_terminal_1d(|x: f64| 0.8 * (1.0 - x.abs()).max(0.0))
                .with_lower_1d(|_, x: f64| 0.8 * (1.0 - x.abs()).max(0.0) - 0.3)
                .with_upper_1d(|_, x: f64| 0.8 * (1.0 - x.abs()).max(0.0) + 0.05),
        );
        let l = lattice_for(&s, 21, 40, -2.0, 2.0);
        let ctl = ControlSchedule::fixed(0, 0);
        let full = solve_backward(&l, &s, &ctl, BackwardMode::TwoBarrier).unwrap();
        // eta = Phi at T over [0, T]
        let g = backward_semigroup(&l, &s, &ctl, 0.0, 1.0, &terminal_values(&l, &s)).unwrap();
        assert_eq!(g, full.y[0]);
        // split at t = 0.5
        let k = 20;
        let g = backward_semigroup(&l, &s, &ctl, 0.0, l.times[k], &full.y[k]).unwrap();
        let gap = crate::scalar::sup_distance(&g, &full.y[0]);
        assert!(gap <= 1e-12, "gap {gap}");
    }

    #[test]
    fn semigroup_frozen_and_rejects_inadmissible_eta() {
        let coeffs = CoefficientSet::new()
            .with_lower_1d(|_, x: f64| -0.5 + 0.1 * x)
            .with_upper_1d(|_, x: f64| 0.5 + 0.1 * x)
            .with_lipschitz(0.1);
        let s = ProblemSpec::scalar(1.0, coeffs, &[0.0], &[0.0]).unwrap();
        let l = lattice_for(&s, 11, 10, -1.0, 1.0);
        let ctl = ControlSchedule::fixed(0, 0);
        let kd = 6;
        let eta: Vec<f64> = l
            .nodes(kd)
            .iter()
            .map(|&x| 0.0f64.max(-0.5 + 0.1 * x).min(0.5 + 0.1 * x))
            .collect();
        let g = backward_semigroup(&l, &s, &ctl, l.times[2], l.times[kd], &eta).unwrap();
        // frozen dynamics and zero driver: eta is carried back unchanged
        let k2_nodes = l.nodes(2);
        for (j, &x) in k2_nodes.iter().enumerate() {
            assert_eq!(g[j], 0.0f64.max(-0.5 + 0.1 * x).min(0.5 + 0.1 * x));
        }
        let mut bad = eta.clone();
        bad[3] = 2.0;
        assert!(matches!(
            backward_semigroup(&l, &s, &ctl, l.times[2], l.times[kd], &bad),
            Err(Error::BarrierSandwich { node: 3, .. })
        ));
    }

    #[test]
    fn comparison_examples() {
        let s1 = constant_problem(0.0).with_coefficients(
            constant_problem(0.0)
                .coefficients()
                .clone()
                .with_terminal_1d(|x: f64| 0.5 * x.sin())
                .with_lower_1d(|_, _| -0.6)
                .with_upper_1d(|_, _| 0.6),
        );
        let c2 = s1
            .coefficients()
            .clone()
            .with_terminal_1d(|x: f64| (0.5 * x.sin() + 1.0).min(0.6));
        let s2 = s1.with_coefficients(c2);
        let l = lattice_for(&s1, 21, 40, -2.0, 2.0);
        let ctl = ControlSchedule::fixed(0, 0);
        let r = comparison_check(&s1, &s2, &l, &ctl, BackwardMode::TwoBarrier, 100, 1).unwrap();
        assert_eq!(r.outcome, ComparisonOutcome::Pass);
        assert!(r.push_order_checked);

        let same = comparison_check(&s1, &s1, &l, &ctl, BackwardMode::TwoBarrier, 100, 1).unwrap();
        assert_eq!(same.outcome, ComparisonOutcome::Pass);
        assert_eq!(same.worst_violation, 0.0);

        // reversed pair violates the hypothesis
        let rev = comparison_check(&s2, &s1, &l, &ctl, BackwardMode::TwoBarrier, 100, 1).unwrap();
        assert!(matches!(rev.outcome, ComparisonOutcome::Inconclusive(_)));
    }

    #[test]
    fn penalization_squeeze_on_lattice() {
        let coeffs = CoefficientSet::new()
            .with_diffusion_1d(|_, _, _, _| 1.0)
            .with_driver_1d(|_, _, y: f64, _, _, _| -0.1 * y)
            .with_terminal_1d(|x: f64| (1.0 - x.abs()).max(0.0))
            .with_lower_1d(|_, x: f64| (1.0 - x.abs()).max(0.0) - 0.3)
            .with_upper_1d(|_, x: f64| (1.0 - x.abs()).max(0.0) + 0.05)
            .with_driver_lipschitz(0.1)
            .with_lipschitz(1.0);
        let s = ProblemSpec::scalar(1.0, coeffs, &[0.0], &[0.0]).unwrap();
        let l = lattice_for(&s, 41, 200, -3.0, 3.0);
        let ctl = ControlSchedule::fixed(0, 0);
        let two = solve_backward(&l, &s, &ctl, BackwardMode::TwoBarrier).unwrap();
        let mut prev_low: Option<Vec<Vec<f64>>> = None;
        let mut prev_up: Option<Vec<Vec<f64>>> = None;
        for m in [1.0, 4.0, 16.0] {
            let lo = solve_backward(&l, &s, &ctl, BackwardMode::OneBarrierLower { m }).unwrap();
            let up = solve_backward(&l, &s, &ctl, BackwardMode::OneBarrierUpper { m }).unwrap();
            for k in 0..two.y.len() {
                for j in 0..two.y[k].len() {
                    assert!(lo.y[k][j] >= two.y[k][j] - 1e-10);
                    assert!(up.y[k][j] <= two.y[k][j] + 1e-10);
                    if let (Some(pl), Some(pu)) = (&prev_low, &prev_up) {
                        assert!(pl[k][j] >= lo.y[k][j] - 1e-10);
                        assert!(pu[k][j] <= up.y[k][j] + 1e-10);
                    }
                }
            }
            prev_low = Some(lo.y);
            prev_up = Some(up.y);
        }
        // two-sided penalization approaches the reflected solution
        let mut gaps = Vec::new();
        for m in [1.0, 4.0, 16.0] {
            let p = solve_backward(&l, &s, &ctl, BackwardMode::Penalized { m, n: m }).unwrap();
            gaps.push(crate::scalar::sup_distance(&p.y[0], &two.y[0]));
        }
        assert!(gaps[0] > gaps[1] && gaps[1] > gaps[2], "{gaps:?}");
    }

    #[test]
    fn apriori_constant_problem() {
        let s = constant_problem(0.5);
        let g = SpaceTimeGrid::new(-2.0, 2.0, 21, 40, 1.0, 1.0).unwrap();
        let opts = AprioriOptions {
            paths: 200,
            ..AprioriOptions::default()
        };
        let r = apriori_estimate_check(&s, &g, &ControlSchedule::fixed(0, 0), &opts).unwrap();
        for lvl in &r.levels {
            assert!((lvl.bound_lhs - 0.25).abs() < 1e-12);
            assert!(lvl.bound_rhs >= 0.25);
            assert!(lvl.bound_constant() <= 1.0);
            assert_eq!(lvl.lipschitz, 0.0);
        }
        assert!(r.passes);
    }

    #[test]
    fn lipschitz_in_initial_state_frozen_dynamics() {
        let coeffs = CoefficientSet::new()
            .with_terminal_1d(|x: f64| (2.0 * x).sin() / 2.0)
            .with_lower_1d(|_, _| -5.0)
            .with_upper_1d(|_, _| 5.0)
            .with_lipschitz(1.0);
        let s = ProblemSpec::scalar(1.0, coeffs, &[0.0], &[0.0]).unwrap();
        let g = SpaceTimeGrid::new(-2.0, 2.0, 41, 10, 1.0, 1.0).unwrap();
        let opts = AprioriOptions {
            paths: 50,
            ..AprioriOptions::default()
        };
        let r = apriori_estimate_check(&s, &g, &ControlSchedule::fixed(0, 0), &opts).unwrap();
        for lvl in &r.levels {
            assert!(lvl.lipschitz <= 1.0 + 1e-10);
        }
    }
}
