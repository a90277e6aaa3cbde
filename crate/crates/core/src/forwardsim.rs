//! Controlled forward dynamics: Euler-Maruyama path batches and the
//! recombining trinomial lattice used by the backward solvers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::SpaceTimeGrid;
use crate::model::ProblemSpec;
use crate::scalar::Scalar;

/// Piecewise-constant control choice, as indices into the two grids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ControlSchedule {
    Fixed {
        u: usize,
        v: usize,
    },
    /// One `(u, v)` pair per time step.
    PerStep(Vec<(usize, usize)>),
}

impl ControlSchedule {
    pub fn fixed(u: usize, v: usize) -> Self {
        Self::Fixed { u, v }
    }

    pub fn at(&self, step: usize) -> (usize, usize) {
        match self {
            Self::Fixed { u, v } => (*u, *v),
            Self::PerStep(pairs) => pairs[step.min(pairs.len().saturating_sub(1))],
        }
    }

    fn check<T: Scalar>(&self, spec: &ProblemSpec<T>, steps: usize) -> Result<()> {
        let nu = spec.controls_i().len();
        let nv = spec.controls_ii().len();
        let ok = |&(u, v): &(usize, usize)| u < nu && v < nv;
        match self {
            Self::Fixed { u, v } if ok(&(*u, *v)) => Ok(()),
            Self::PerStep(p) if p.len() >= steps && p.iter().all(ok) => Ok(()),
            _ => Err(Error::InvalidArgument(format!(
                "control schedule incompatible with grids ({nu}, {nv}) over {steps} steps"
            ))),
        }
    }
}

/// Simulated paths of the controlled forward SDE.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrajectoryBatch<T> {
    pub t0: T,
    pub times: Vec<T>,
    pub n_paths: usize,
    pub state_dim: usize,
    pub noise_dim: usize,
    /// `[path][step][n]`, flattened.
    pub states: Vec<T>,
    /// `[path][step][d]`, flattened; `n_steps` entries per path.
    pub increments: Vec<T>,
    pub controls_used: Vec<(usize, usize)>,
    pub seed: u64,
}

impl<T: Scalar> ForwardTrajectoryBatch<T> {
    pub fn n_steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn state(&self, path: usize, step: usize) -> &[T] {
        let n = self.state_dim;
        let off = (path * (self.n_steps() + 1) + step) * n;
        &self.states[off..off + n]
    }

    pub fn increment(&self, path: usize, step: usize) -> &[T] {
        let d = self.noise_dim;
        let off = (path * self.n_steps() + step) * d;
        &self.increments[off..off + d]
    }

    /// Whether the sample variance of every Brownian component lies within
    /// five standard errors of `dt` (pooled over steps and paths).
    pub fn increments_consistent(&self) -> bool {
        let k = self.n_steps();
        let dt = (self.times[k] - self.times[0]) / T::from_usize_lossy(k);
        let count = T::from_usize_lossy(self.n_paths * k);
        (0..self.noise_dim).all(|c| {
            let vals = self.increments.iter().skip(c).step_by(self.noise_dim);
            let sq: Vec<T> = vals.map(|&w| w * w).collect();
            let mean = sq.iter().copied().sum::<T>() / count;
            let var = sq.iter().map(|&s| (s - mean) * (s - mean)).sum::<T>() / count;
            let se = (var / count).sqrt();
            (mean - dt).abs() <= T::lit(5.0) * se
        })
    }
}

fn path_rng(seed: u64, path: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path as u64);
    rng
}

/// Euler-Maruyama with equal steps on `[t0, T]`. Each path draws from its
/// own ChaCha stream indexed by the path id, so the output does not depend
/// on `n_paths` or on the number of worker threads.
#[allow(clippy::too_many_arguments)]
pub fn simulate_paths<T: Scalar>(
    spec: &ProblemSpec<T>,
    t0: T,
    x0: &[T],
    policy: &ControlSchedule,
    n_paths: usize,
    n_steps: usize,
    seed: u64,
) -> Result<ForwardTrajectoryBatch<T>> {
    let n = spec.state_dim();
    let d = spec.noise_dim();
    if !(t0 < spec.horizon()) {
        return Err(Error::InvalidArgument(format!(
            "start time {t0} must precede the horizon {}",
            spec.horizon()
        )));
    }
    if n_paths == 0 || n_steps == 0 {
        return Err(Error::InvalidArgument(
            "n_paths and n_steps must be >= 1".into(),
        ));
    }
    if x0.len() != n {
        return Err(Error::InvalidArgument(format!(
            "initial state has dimension {} (expected {n})",
            x0.len()
        )));
    }
    policy.check(spec, n_steps)?;
    let dt = (spec.horizon() - t0) / T::from_usize_lossy(n_steps);
    let sqrt_dt = dt.sqrt();
    let times: Vec<T> = (0..=n_steps)
        .map(|k| {
            if k == n_steps {
                spec.horizon()
            } else {
                t0 + T::from_usize_lossy(k) * dt
            }
        })
        .collect();

    let per_path: Vec<std::result::Result<(Vec<T>, Vec<T>), usize>> = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = path_rng(seed, p);
            let mut states = Vec::with_capacity((n_steps + 1) * n);
            let mut incs = Vec::with_capacity(n_steps * d);
            states.extend_from_slice(x0);
            let mut x = x0.to_vec();
            let mut b = vec![T::zero(); n];
            let mut sigma = vec![T::zero(); n * d];
            let mut dw = vec![T::zero(); d];
            for k in 0..n_steps {
                let (iu, iv) = policy.at(k);
                for w in dw.iter_mut() {
                    let g: f64 = rng.sample(StandardNormal);
                    *w = T::lit(g) * sqrt_dt;
                }
                spec.drift(times[k], &x, iu, iv, &mut b);
                spec.diffusion(times[k], &x, iu, iv, &mut sigma);
                for i in 0..n {
                    let noise: T = (0..d).map(|c| sigma[i * d + c] * dw[c]).sum();
                    x[i] = x[i] + b[i] * dt + noise;
                }
                if x.iter().any(|v| !v.is_finite()) {
                    return Err(k + 1);
                }
                states.extend_from_slice(&x);
                incs.extend_from_slice(&dw);
            }
            Ok((states, incs))
        })
        .collect();

    let mut states = Vec::with_capacity(n_paths * (n_steps + 1) * n);
    let mut increments = Vec::with_capacity(n_paths * n_steps * d);
    for (p, r) in per_path.into_iter().enumerate() {
        match r {
            Ok((s, i)) => {
                states.extend(s);
                increments.extend(i);
            }
            Err(step) => return Err(Error::BlowUp { path: p, step }),
        }
    }
    Ok(ForwardTrajectoryBatch {
        t0,
        times,
        n_paths,
        state_dim: n,
        noise_dim: d,
        states,
        increments,
        controls_used: (0..n_steps).map(|k| policy.at(k)).collect(),
        seed,
    })
}

/// Trinomial moment-matched lattice on the grid spacing.
///
/// Step `k` carries `root_count + 2k` nodes with states
/// `x_min + (j - k) dx`: the root nodes coincide with the grid nodes and the
/// lattice widens by one node per side and step, so no transition ever
/// leaves it. Node `j` at step `k` moves to nodes `j, j+1, j+2` at step
/// `k+1` (down, stay, up).
#[derive(Debug, Clone)]
pub struct RecombiningLattice<T> {
    pub t0: T,
    pub times: Vec<T>,
    pub dt: T,
    pub dx: T,
    x_min: T,
    root_count: usize,
    num_pairs: usize,
    /// Offsets of each step's first node into `probs`.
    offsets: Vec<usize>,
    /// `[down, stay, up]` per (step, node, pair).
    probs: Vec<[T; 3]>,
}

impl<T: Scalar> RecombiningLattice<T> {
    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn root_count(&self) -> usize {
        self.root_count
    }

    pub fn num_pairs(&self) -> usize {
        self.num_pairs
    }

    pub fn width(&self, step: usize) -> usize {
        self.root_count + 2 * step
    }

    pub fn state(&self, step: usize, node: usize) -> T {
        self.x_min + (T::from_usize_lossy(node) - T::from_usize_lossy(step)) * self.dx
    }

    pub fn nodes(&self, step: usize) -> Vec<T> {
        (0..self.width(step)).map(|j| self.state(step, j)).collect()
    }

    /// Transition probabilities `[down, stay, up]` out of `(step, node)`
    /// under control pair index `pair = u * |V| + v`.
    pub fn transition(&self, step: usize, node: usize, pair: usize) -> [T; 3] {
        self.probs[(self.offsets[step] + node) * self.num_pairs + pair]
    }

    /// Distribution over nodes at every step when starting uniformly on the
    /// root nodes.
    pub fn occupation(&self, schedule: &ControlSchedule, nv: usize) -> Vec<Vec<T>> {
        let mut out = Vec::with_capacity(self.steps() + 1);
        let w0 = T::one() / T::from_usize_lossy(self.root_count);
        out.push(vec![w0; self.root_count]);
        for k in 0..self.steps() {
            let (iu, iv) = schedule.at(k);
            let pair = iu * nv + iv;
            let mut next = vec![T::zero(); self.width(k + 1)];
            for (j, &w) in out[k].iter().enumerate() {
                let p = self.transition(k, j, pair);
                for (m, &pm) in p.iter().enumerate() {
                    next[j + m] = next[j + m] + w * pm;
                }
            }
            out.push(next);
        }
        out
    }

    /// Node indices of one lattice path started at root node `root`.
    pub fn sample_path<R: Rng>(
        &self,
        root: usize,
        schedule: &ControlSchedule,
        nv: usize,
        rng: &mut R,
    ) -> Vec<usize> {
        let mut path = Vec::with_capacity(self.steps() + 1);
        let mut j = root;
        path.push(j);
        for k in 0..self.steps() {
            let (iu, iv) = schedule.at(k);
            let p = self.transition(k, j, iu * nv + iv);
            let r = T::lit(rng.random::<f64>());
            let mv = if r < p[0] {
                0
            } else if r < p[0] + p[1] {
                1
            } else {
                2
            };
            j += mv;
            path.push(j);
        }
        path
    }
}

/// Moment-matched trinomial weights for drift `b`, variance rate `s2`.
/// Returns `[down, stay, up]` before any clamping.
pub fn trinomial_weights<T: Scalar>(b: T, s2: T, dt: T, dx: T) -> [T; 3] {
    let second = (s2 * dt + b * b * dt * dt) / (dx * dx);
    let mean = b * dt / dx;
    let two = T::lit(2.0);
    [
        (second - mean) / two,
        T::one() - second,
        (second + mean) / two,
    ]
}

/// Admissible `dt` interval for which all three weights are nonnegative.
fn admissible_dt<T: Scalar>(b: T, s2: T, dx: T) -> (T, T) {
    let b2 = b * b;
    if b2 == T::zero() {
        let hi = if s2 > T::zero() {
            dx * dx / s2
        } else {
            T::infinity()
        };
        return (T::zero(), hi);
    }
    let hi = (-s2 + (s2 * s2 + T::lit(4.0) * b2 * dx * dx).sqrt()) / (T::lit(2.0) * b2);
    let lo = ((b.abs() * dx - s2) / b2).max(T::zero());
    (lo, hi)
}

/// Builds the trinomial lattice from the grid's spatial nodes at time `t0`
/// (a time level of `grid`) up to the grid's final time.
pub fn build_lattice<T: Scalar>(
    spec: &ProblemSpec<T>,
    t0: T,
    grid: &SpaceTimeGrid<T>,
) -> Result<RecombiningLattice<T>> {
    if spec.state_dim() != 1 {
        return Err(Error::Unsupported(format!(
            "recombining lattices support n = 1 only (got n = {})",
            spec.state_dim()
        )));
    }
    let k0 = grid.time_index(t0).ok_or_else(|| {
        Error::InvalidArgument(format!("lattice start time {t0} is not a grid time level"))
    })?;
    if k0 >= grid.nt() {
        return Err(Error::InvalidArgument(
            "lattice start time must precede the grid's end".into(),
        ));
    }
    let steps = grid.nt() - k0;
    let dt = grid.dt();
    let dx = grid.dx();
    let nu = spec.controls_i().len();
    let nv = spec.controls_ii().len();
    let num_pairs = nu * nv;
    let root_count = grid.nx();
    let times: Vec<T> = (k0..=grid.nt()).map(|k| grid.t(k)).collect();
    let x_min = grid.x_min();
    let d = spec.noise_dim();
    let clamp_tol = T::tol(1e-12);

    let mut offsets = Vec::with_capacity(steps);
    let mut acc = 0;
    for k in 0..steps {
        offsets.push(acc);
        acc += root_count + 2 * k;
    }

    // (prob, step, node, u, v, dt_lo, dt_hi) of the most negative weight
    type Worst<T> = Option<(T, usize, usize, usize, usize, T, T)>;
    let per_step: Vec<(Vec<[T; 3]>, Worst<T>)> = (0..steps)
        .into_par_iter()
        .map(|k| {
            let t = times[k];
            let width = root_count + 2 * k;
            let mut probs = Vec::with_capacity(width * num_pairs);
            let mut worst: Worst<T> = None;
            let mut b = [T::zero()];
            let mut sigma = vec![T::zero(); d];
            for j in 0..width {
                let x = [x_min + (T::from_usize_lossy(j) - T::from_usize_lossy(k)) * dx];
                for iu in 0..nu {
                    for iv in 0..nv {
                        spec.drift(t, &x, iu, iv, &mut b);
                        spec.diffusion(t, &x, iu, iv, &mut sigma);
                        let s2: T = sigma.iter().map(|&s| s * s).sum();
                        let mut p = trinomial_weights(b[0], s2, dt, dx);
                        let min_p = p.iter().copied().fold(T::infinity(), T::min);
                        if !min_p.is_finite() {
                            worst = Some((T::nan(), k, j, iu, iv, T::zero(), T::zero()));
                        } else if min_p < -clamp_tol {
                            if worst.is_none_or(|w| min_p < w.0) {
                                let (lo, hi) = admissible_dt(b[0], s2, dx);
                                worst = Some((min_p, k, j, iu, iv, lo, hi));
                            }
                        } else if min_p < T::zero() {
                            for q in p.iter_mut() {
                                *q = q.max(T::zero());
                            }
                        }
                        probs.push(p);
                    }
                }
            }
            (probs, worst)
        })
        .collect();

    let mut probs = Vec::with_capacity(acc * num_pairs);
    let mut worst: Worst<T> = None;
    for (p, w) in per_step {
        probs.extend(p);
        if let Some(w) = w {
            if worst.is_none_or(|cur| w.0 < cur.0 || w.0.is_nan()) {
                worst = Some(w);
            }
        }
    }
    if let Some((prob, step, node, u, v, lo, hi)) = worst {
        if prob.is_nan() {
            return Err(Error::NonFiniteValue { step, node });
        }
        return Err(Error::LatticeProbability {
            prob: prob.as_f64(),
            step,
            node,
            u,
            v,
            dt_min: lo.as_f64(),
            dt_max: hi.as_f64(),
        });
    }
    Ok(RecombiningLattice {
        t0,
        times,
        dt,
        dx,
        x_min,
        root_count,
        num_pairs,
        offsets,
        probs,
    })
}

/// Options for [`check_forward_estimates`].
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardEstimateOptions<T> {
    pub t0: T,
    pub x0: Vec<T>,
    pub n_steps: usize,
    /// Initial separations `|zeta - zeta'|`; should span two decades.
    pub separations: Vec<T>,
    pub controls: ControlSchedule,
    /// Allowed deviation from zero of the log-log slope.
    pub slope_tol: T,
}

impl<T: Scalar> ForwardEstimateOptions<T> {
    pub fn new(state_dim: usize) -> Self {
        Self {
            t0: T::zero(),
            x0: vec![T::one(); state_dim],
            n_steps: 100,
            separations: [1e-1, 3e-2, 1e-2, 1e-3]
                .iter()
                .map(|&s| T::lit(s))
                .collect(),
            controls: ControlSchedule::fixed(0, 0),
            slope_tol: T::lit(0.2),
        }
    }
}

/// Empirical constants of the `p = 2` Lipschitz estimate of the flow in
/// its initial condition.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardEstimateReport<T> {
    pub separations: Vec<T>,
    /// `E[sup_s |X_s - X'_s|^2] / |zeta - zeta'|^2` per separation.
    pub sup_ratios: Vec<T>,
    /// `E[|X_T - X'_T|^2] / |zeta - zeta'|^2` per separation.
    pub terminal_ratios: Vec<T>,
    pub max_ratio: T,
    /// Least-squares slope of `log ratio` against `log separation`.
    pub slope: T,
    pub passes: bool,
}

/// Least-squares slope of `ys` against `xs`.
pub fn loglog_slope<T: Scalar>(xs: &[T], ys: &[T]) -> T {
    let lx: Vec<T> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<T> = ys.iter().map(|v| v.ln()).collect();
    let n = T::from_usize_lossy(lx.len());
    let mx = lx.iter().copied().sum::<T>() / n;
    let my = ly.iter().copied().sum::<T>() / n;
    let sxy: T = lx.iter().zip(&ly).map(|(&a, &b)| (a - mx) * (b - my)).sum();
    let sxx: T = lx.iter().map(|&a| (a - mx) * (a - mx)).sum();
    if sxx == T::zero() {
        T::zero()
    } else {
        sxy / sxx
    }
}

/// Pairs of initial points driven by shared Brownian draws; passes iff the
/// mean-square ratio shows no trend across the separations.
pub fn check_forward_estimates<T: Scalar>(
    spec: &ProblemSpec<T>,
    trials: usize,
    seed: u64,
    opts: &ForwardEstimateOptions<T>,
) -> Result<ForwardEstimateReport<T>> {
    if opts.separations.len() < 2 {
        return Err(Error::InvalidArgument(
            "need at least two separations".into(),
        ));
    }
    let n = spec.state_dim();
    let base = simulate_paths(
        spec,
        opts.t0,
        &opts.x0,
        &opts.controls,
        trials,
        opts.n_steps,
        seed,
    )?;
    let mut sup_ratios = Vec::new();
    let mut terminal_ratios = Vec::new();
    let steps = opts.n_steps;
    for &sep in &opts.separations {
        // shift along the first coordinate
        let mut x1 = opts.x0.clone();
        x1[0] = x1[0] + sep;
        let other = simulate_paths(spec, opts.t0, &x1, &opts.controls, trials, steps, seed)?;
        let mut sup_acc = T::zero();
        let mut term_acc = T::zero();
        for p in 0..trials {
            let mut sup = T::zero();
            for k in 0..=steps {
                let a = base.state(p, k);
                let b = other.state(p, k);
                let dist: T = (0..n).map(|i| (a[i] - b[i]) * (a[i] - b[i])).sum();
                sup = sup.max(dist);
                if k == steps {
                    term_acc = term_acc + dist;
                }
            }
            sup_acc = sup_acc + sup;
        }
        let denom = T::from_usize_lossy(trials) * sep * sep;
        sup_ratios.push(sup_acc / denom);
        terminal_ratios.push(term_acc / denom);
    }
    let max_ratio = sup_ratios.iter().copied().fold(T::zero(), T::max);
    let slope = loglog_slope(&opts.separations, &sup_ratios);
    Ok(ForwardEstimateReport {
        separations: opts.separations.clone(),
        sup_ratios,
        terminal_ratios,
        max_ratio,
        slope,
        passes: slope.abs() <= opts.slope_tol && max_ratio.is_finite(),
    })
}
