//! Game data: control grids, coefficients, problem validation and the
//! sup-inf / inf-sup Hamiltonians.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Which player owns a control grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Player {
    /// Player I, controls in `U`, maximises the cost.
    I,
    /// Player II, controls in `V`, minimises the cost.
    II,
}

/// Finite discretisation of a compact control set.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlGrid<T> {
    player: Player,
    dim: usize,
    points: Vec<Vec<T>>,
}

impl<T: Scalar> ControlGrid<T> {
    /// Grid of vector-valued controls. All points must share one dimension
    /// and be pairwise distinct.
    pub fn new(player: Player, points: Vec<Vec<T>>) -> Result<Self> {
        let Some(first) = points.first() else {
            return Err(Error::InvalidArgument(format!(
                "control grid for player {player:?} is empty"
            )));
        };
        let dim = first.len();
        for (i, p) in points.iter().enumerate() {
            if p.len() != dim {
                return Err(Error::InvalidArgument(format!(
                    "control point #{i} has dimension {} (expected {dim})",
                    p.len()
                )));
            }
            if p.iter().any(|c| !c.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "control point #{i} is not finite"
                )));
            }
            if points[..i].iter().any(|q| q == p) {
                return Err(Error::InvalidArgument(format!(
                    "control point #{i} duplicates an earlier point"
                )));
            }
        }
        Ok(Self {
            player,
            dim,
            points,
        })
    }

    /// Grid of scalar controls.
    pub fn scalar(player: Player, values: &[T]) -> Result<Self> {
        Self::new(player, values.iter().map(|&v| vec![v]).collect())
    }

    pub fn singleton(player: Player, point: Vec<T>) -> Self {
        let dim = point.len();
        Self {
            player,
            dim,
            points: vec![point],
        }
    }

    pub fn player(&self) -> Player {
        self.player
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> &[T] {
        &self.points[i]
    }

    pub fn points(&self) -> &[Vec<T>] {
        &self.points
    }
}

/// `b(t, x, u, v)` written into an `n`-vector.
pub type DriftFn<T> = Arc<dyn Fn(T, &[T], &[T], &[T], &mut [T]) + Send + Sync>;
/// `sigma(t, x, u, v)` written row-major into an `n x d` matrix.
pub type DiffusionFn<T> = Arc<dyn Fn(T, &[T], &[T], &[T], &mut [T]) + Send + Sync>;
/// `f(t, x, y, z, u, v)`.
pub type DriverFn<T> = Arc<dyn Fn(T, &[T], T, &[T], &[T], &[T]) -> T + Send + Sync>;
/// `Phi(x)`.
pub type TerminalFn<T> = Arc<dyn Fn(&[T]) -> T + Send + Sync>;
/// `h(t, x)` or `h'(t, x)`.
pub type ObstacleFn<T> = Arc<dyn Fn(T, &[T]) -> T + Send + Sync>;

/// Coefficients of one game together with their declared constants.
///
/// All callables must be re-entrant: solvers evaluate them concurrently
/// from several threads.
#[derive(Clone)]
pub struct CoefficientSet<T> {
    pub drift: DriftFn<T>,
    pub diffusion: DiffusionFn<T>,
    pub driver: DriverFn<T>,
    pub terminal: TerminalFn<T>,
    pub lower: ObstacleFn<T>,
    pub upper: ObstacleFn<T>,
    /// Lipschitz constant in `x` shared by `b, sigma, f, Phi, h, h'`.
    pub lipschitz: T,
    /// Lipschitz constant of `f` in `(y, z)`.
    pub driver_lipschitz: T,
    /// Linear growth constant used by the growth checks.
    pub growth: T,
}

impl<T> fmt::Debug for CoefficientSet<T>
where
    T: fmt::Debug,
{
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CoefficientSet")
            .field("lipschitz", &self.lipschitz)
            .field("driver_lipschitz", &self.driver_lipschitz)
            .field("growth", &self.growth)
            .finish_non_exhaustive()
    }
}

impl<T: Scalar> Default for CoefficientSet<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> CoefficientSet<T> {
    /// `b = 0, sigma = 0, f = 0, Phi = 0, h = -1, h' = 1`, constants zero,
    /// growth constant 10.
    pub fn new() -> Self {
        Self {
            drift: Arc::new(|_, _, _, _, out: &mut [T]| out.fill(T::zero())),
            diffusion: Arc::new(|_, _, _, _, out: &mut [T]| out.fill(T::zero())),
            driver: Arc::new(|_, _, _, _, _, _| T::zero()),
            terminal: Arc::new(|_| T::zero()),
            lower: Arc::new(|_, _| -T::one()),
            upper: Arc::new(|_, _| T::one()),
            lipschitz: T::zero(),
            driver_lipschitz: T::zero(),
            growth: T::lit(10.0),
        }
    }

    pub fn with_drift(
        mut self,
        f: impl Fn(T, &[T], &[T], &[T], &mut [T]) + Send + Sync + 'static,
    ) -> Self {
        self.drift = Arc::new(f);
        self
    }

    pub fn with_diffusion(
        mut self,
        f: impl Fn(T, &[T], &[T], &[T], &mut [T]) + Send + Sync + 'static,
    ) -> Self {
        self.diffusion = Arc::new(f);
        self
    }

    pub fn with_driver(
        mut self,
        f: impl Fn(T, &[T], T, &[T], &[T], &[T]) -> T + Send + Sync + 'static,
    ) -> Self {
        self.driver = Arc::new(f);
        self
    }

    pub fn with_terminal(mut self, f: impl Fn(&[T]) -> T + Send + Sync + 'static) -> Self {
        self.terminal = Arc::new(f);
        self
    }

    pub fn with_lower_obstacle(mut self, f: impl Fn(T, &[T]) -> T + Send + Sync + 'static) -> Self {
        self.lower = Arc::new(f);
        self
    }

    pub fn with_upper_obstacle(mut self, f: impl Fn(T, &[T]) -> T + Send + Sync + 'static) -> Self {
        self.upper = Arc::new(f);
        self
    }

    pub fn with_lipschitz(mut self, c: T) -> Self {
        self.lipschitz = c;
        self
    }

    pub fn with_driver_lipschitz(mut self, mu: T) -> Self {
        self.driver_lipschitz = mu;
        self
    }

    pub fn with_growth(mut self, c: T) -> Self {
        self.growth = c;
        self
    }

    // Scalar conveniences for n = d = 1, scalar controls.

    pub fn with_drift_1d(self, f: impl Fn(T, T, T, T) -> T + Send + Sync + 'static) -> Self {
        self.with_drift(move |t, x, u, v, out| out[0] = f(t, x[0], first(u), first(v)))
    }

    pub fn with_diffusion_1d(self, f: impl Fn(T, T, T, T) -> T + Send + Sync + 'static) -> Self {
        self.with_diffusion(move |t, x, u, v, out| out[0] = f(t, x[0], first(u), first(v)))
    }

    /// Driver `f(t, x, y, z, u, v)` for scalar state, noise and controls.
    pub fn with_driver_1d(self, f: impl Fn(T, T, T, T, T, T) -> T + Send + Sync + 'static) -> Self {
        self.with_driver(move |t, x, y, z, u, v| f(t, x[0], y, z[0], first(u), first(v)))
    }

    pub fn with_terminal_1d(self, f: impl Fn(T) -> T + Send + Sync + 'static) -> Self {
        self.with_terminal(move |x| f(x[0]))
    }

    pub fn with_lower_1d(self, f: impl Fn(T, T) -> T + Send + Sync + 'static) -> Self {
        self.with_lower_obstacle(move |t, x| f(t, x[0]))
    }

    pub fn with_upper_1d(self, f: impl Fn(T, T) -> T + Send + Sync + 'static) -> Self {
        self.with_upper_obstacle(move |t, x| f(t, x[0]))
    }
}

fn first<T: Scalar>(c: &[T]) -> T {
    c.first().copied().unwrap_or_else(T::zero)
}

/// One game: horizon, dimensions, coefficients and control grids.
#[derive(Clone, Debug)]
pub struct ProblemSpec<T> {
    horizon: T,
    state_dim: usize,
    noise_dim: usize,
    coefficients: CoefficientSet<T>,
    controls_i: ControlGrid<T>,
    controls_ii: ControlGrid<T>,
    sample_box: (T, T),
}

impl<T: Scalar> ProblemSpec<T> {
    pub fn new(
        horizon: T,
        state_dim: usize,
        noise_dim: usize,
        coefficients: CoefficientSet<T>,
        controls_i: ControlGrid<T>,
        controls_ii: ControlGrid<T>,
    ) -> Result<Self> {
        if !(horizon > T::zero()) || !horizon.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "horizon must be positive and finite, got {horizon}"
            )));
        }
        if state_dim == 0 || noise_dim == 0 {
            return Err(Error::InvalidArgument(
                "state and noise dimensions must be at least 1".into(),
            ));
        }
        if controls_i.player() != Player::I || controls_ii.player() != Player::II {
            return Err(Error::InvalidArgument(
                "control grids must belong to players I and II respectively".into(),
            ));
        }
        if coefficients.lipschitz < T::zero() || coefficients.driver_lipschitz < T::zero() {
            return Err(Error::InvalidArgument(
                "declared Lipschitz constants must be nonnegative".into(),
            ));
        }
        Ok(Self {
            horizon,
            state_dim,
            noise_dim,
            coefficients,
            controls_i,
            controls_ii,
            sample_box: (-T::lit(2.0), T::lit(2.0)),
        })
    }

    /// Scalar state and noise with scalar control grids.
    pub fn scalar(
        horizon: T,
        coefficients: CoefficientSet<T>,
        controls_i: &[T],
        controls_ii: &[T],
    ) -> Result<Self> {
        Self::new(
            horizon,
            1,
            1,
            coefficients,
            ControlGrid::scalar(Player::I, controls_i)?,
            ControlGrid::scalar(Player::II, controls_ii)?,
        )
    }

    /// Box `[lo, hi]^n` sampled by the randomized assumption checks.
    pub fn with_sample_box(mut self, lo: T, hi: T) -> Self {
        self.sample_box = (lo, hi);
        self
    }

    /// Same game with both players restricted to the given grids.
    pub fn with_controls(&self, controls_i: ControlGrid<T>, controls_ii: ControlGrid<T>) -> Self {
        Self {
            controls_i,
            controls_ii,
            ..self.clone()
        }
    }

    /// Same game with new coefficients.
    pub fn with_coefficients(&self, coefficients: CoefficientSet<T>) -> Self {
        Self {
            coefficients,
            ..self.clone()
        }
    }

    /// Both players restricted to the single controls `iu`, `iv`.
    pub fn fixed_controls(&self, iu: usize, iv: usize) -> Result<Self> {
        if iu >= self.controls_i.len() || iv >= self.controls_ii.len() {
            return Err(Error::InvalidArgument(format!(
                "control pair (u#{iu}, v#{iv}) outside grids of sizes ({}, {})",
                self.controls_i.len(),
                self.controls_ii.len()
            )));
        }
        Ok(self.with_controls(
            ControlGrid::singleton(Player::I, self.controls_i.point(iu).to_vec()),
            ControlGrid::singleton(Player::II, self.controls_ii.point(iv).to_vec()),
        ))
    }

    pub fn horizon(&self) -> T {
        self.horizon
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    pub fn coefficients(&self) -> &CoefficientSet<T> {
        &self.coefficients
    }

    pub fn controls_i(&self) -> &ControlGrid<T> {
        &self.controls_i
    }

    pub fn controls_ii(&self) -> &ControlGrid<T> {
        &self.controls_ii
    }

    pub fn sample_box(&self) -> (T, T) {
        self.sample_box
    }

    pub fn num_pairs(&self) -> usize {
        self.controls_i.len() * self.controls_ii.len()
    }

    pub fn drift(&self, t: T, x: &[T], iu: usize, iv: usize, out: &mut [T]) {
        (self.coefficients.drift)(
            t,
            x,
            self.controls_i.point(iu),
            self.controls_ii.point(iv),
            out,
        )
    }

    pub fn diffusion(&self, t: T, x: &[T], iu: usize, iv: usize, out: &mut [T]) {
        (self.coefficients.diffusion)(
            t,
            x,
            self.controls_i.point(iu),
            self.controls_ii.point(iv),
            out,
        )
    }

    pub fn driver(&self, t: T, x: &[T], y: T, z: &[T], iu: usize, iv: usize) -> T {
        (self.coefficients.driver)(
            t,
            x,
            y,
            z,
            self.controls_i.point(iu),
            self.controls_ii.point(iv),
        )
    }

    pub fn terminal(&self, x: &[T]) -> T {
        (self.coefficients.terminal)(x)
    }

    pub fn lower(&self, t: T, x: &[T]) -> T {
        (self.coefficients.lower)(t, x)
    }

    pub fn upper(&self, t: T, x: &[T]) -> T {
        (self.coefficients.upper)(t, x)
    }

    /// `(b, sigma)` at a point for a control pair, for scalar state and noise.
    pub fn drift_diffusion_1d(&self, t: T, x: T, iu: usize, iv: usize) -> (T, T) {
        let xs = [x];
        let mut b = [T::zero()];
        let mut s = [T::zero()];
        self.drift(t, &xs, iu, iv, &mut b);
        self.diffusion(t, &xs, iu, iv, &mut s);
        (b[0], s[0])
    }
}

/// Which standing assumption a sampled witness violates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ViolationKind {
    ObstacleSeparation,
    TerminalSandwich,
    LipschitzDrift,
    LipschitzDriverX,
    LipschitzDriverYZ,
    LipschitzTerminal,
    LipschitzObstacle,
    GrowthDynamics,
    GrowthData,
    NonFinite,
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::ObstacleSeparation => "obstacle separation",
            Self::TerminalSandwich => "terminal sandwich",
            Self::LipschitzDrift => "Lipschitz (b, sigma) in x",
            Self::LipschitzDriverX => "Lipschitz f in x",
            Self::LipschitzDriverYZ => "Lipschitz f in (y, z)",
            Self::LipschitzTerminal => "Lipschitz Phi",
            Self::LipschitzObstacle => "Lipschitz obstacles",
            Self::GrowthDynamics => "linear growth (b, sigma)",
            Self::GrowthData => "linear growth (f, Phi, h, h')",
            Self::NonFinite => "non-finite coefficient",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub kind: ViolationKind,
    pub t: f64,
    pub x: Vec<f64>,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub samples: usize,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, kind: ViolationKind) -> bool {
        self.violations.iter().any(|v| v.kind == kind)
    }
}

fn norm<T: Scalar>(v: &[T]) -> T {
    v.iter().map(|&a| a * a).sum::<T>().sqrt()
}

fn diff_norm<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter()
        .zip(b)
        .map(|(&p, &q)| (p - q) * (p - q))
        .sum::<T>()
        .sqrt()
}

/// Randomized check of the standing assumptions: strict obstacle
/// separation, terminal sandwich, Lipschitz quotients against the declared
/// constants and linear growth. Deterministic for a fixed seed; non-finite
/// evaluations are reported as violations.
pub fn validate_problem<T: Scalar>(
    spec: &ProblemSpec<T>,
    sample_count: usize,
    seed: u64,
) -> Result<ValidationReport> {
    if sample_count == 0 {
        return Err(Error::InvalidArgument("sample_count must be >= 1".into()));
    }
    let n = spec.state_dim;
    let d = spec.noise_dim;
    let c = &spec.coefficients;
    let (lo, hi) = spec.sample_box;
    let horizon = spec.horizon;
    let slack =
        |bound: T, scale: T| bound * T::lit(1.0 + 1e-9) + T::tol(1e-12) * (T::one() + scale);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = ValidationReport {
        samples: sample_count,
        violations: Vec::new(),
    };
    let mut push = |kind: ViolationKind, t: T, x: &[T], detail: String| {
        if !report.violations.iter().any(|v| v.kind == kind) {
            report.violations.push(Violation {
                kind,
                t: t.as_f64(),
                x: x.iter().map(|v| v.as_f64()).collect(),
                detail,
            });
        }
    };

    let uniform = |rng: &mut ChaCha8Rng, a: T, b: T| a + (b - a) * T::lit(rng.random::<f64>());
    let mut b1 = vec![T::zero(); n];
    let mut b2 = vec![T::zero(); n];
    let mut s1 = vec![T::zero(); n * d];
    let mut s2 = vec![T::zero(); n * d];

    for k in 0..sample_count {
        // the first sample sits at t = T so the terminal sandwich is always probed
        let t = if k == 0 {
            horizon
        } else {
            uniform(&mut rng, T::zero(), horizon)
        };
        let x: Vec<T> = (0..n).map(|_| uniform(&mut rng, lo, hi)).collect();
        let scale = T::lit(10f64.powf(rng.random_range(-3.0..0.0))) * (hi - lo);
        let xp: Vec<T> = x
            .iter()
            .map(|&xi| xi + scale * T::lit(rng.random_range(-1.0..1.0)))
            .collect();
        let dx = diff_norm(&x, &xp);
        let iu = rng.random_range(0..spec.controls_i.len());
        let iv = rng.random_range(0..spec.controls_ii.len());
        let y = T::lit(rng.random_range(-2.0..2.0));
        let yp = y + T::lit(rng.random_range(-1.0..1.0));
        let z: Vec<T> = (0..d)
            .map(|_| T::lit(rng.random_range(-2.0..2.0)))
            .collect();
        let zp: Vec<T> = z
            .iter()
            .map(|&zi| zi + T::lit(rng.random_range(-1.0..1.0)))
            .collect();

        let h = spec.lower(t, &x);
        let hp = spec.upper(t, &x);
        let phi = spec.terminal(&x);
        let h_t = spec.lower(horizon, &x);
        let hp_t = spec.upper(horizon, &x);
        spec.drift(t, &x, iu, iv, &mut b1);
        spec.drift(t, &xp, iu, iv, &mut b2);
        spec.diffusion(t, &x, iu, iv, &mut s1);
        spec.diffusion(t, &xp, iu, iv, &mut s2);
        let f = spec.driver(t, &x, y, &z, iu, iv);
        let f_x = spec.driver(t, &xp, y, &z, iu, iv);
        let f_yz = spec.driver(t, &x, yp, &zp, iu, iv);
        let zeros = vec![T::zero(); d];
        let f0 = spec.driver(t, &x, T::zero(), &zeros, iu, iv);

        let scalars = [h, hp, phi, h_t, hp_t, f, f_x, f_yz, f0];
        let finite = scalars.iter().all(|v| v.is_finite())
            && b1
                .iter()
                .chain(&b2)
                .chain(&s1)
                .chain(&s2)
                .all(|v| v.is_finite());
        if !finite {
            push(
                ViolationKind::NonFinite,
                t,
                &x,
                format!("non-finite coefficient evaluation (controls u#{iu}, v#{iv})"),
            );
            continue;
        }

        if !(h < hp) {
            push(
                ViolationKind::ObstacleSeparation,
                t,
                &x,
                format!("h = {h} is not below h' = {hp}"),
            );
        }
        if !(h_t <= phi && phi <= hp_t) {
            push(
                ViolationKind::TerminalSandwich,
                horizon,
                &x,
                format!("Phi = {phi} outside [h(T), h'(T)] = [{h_t}, {hp_t}]"),
            );
        }

        if dx > T::zero() {
            let dyn_diff = diff_norm(&b1, &b2) + diff_norm(&s1, &s2);
            if dyn_diff > slack(c.lipschitz * dx, dyn_diff) {
                push(
                    ViolationKind::LipschitzDrift,
                    t,
                    &x,
                    format!("quotient {} > C = {}", dyn_diff / dx, c.lipschitz),
                );
            }
            let fd = (f - f_x).abs();
            if fd > slack(c.lipschitz * dx, fd) {
                push(
                    ViolationKind::LipschitzDriverX,
                    t,
                    &x,
                    format!("quotient {} > C = {}", fd / dx, c.lipschitz),
                );
            }
            let phi_p = spec.terminal(&xp);
            let pd = (phi - phi_p).abs();
            if pd.is_finite() && pd > slack(c.lipschitz * dx, pd) {
                push(
                    ViolationKind::LipschitzTerminal,
                    t,
                    &x,
                    format!("quotient {} > C = {}", pd / dx, c.lipschitz),
                );
            }
            let od = (h - spec.lower(t, &xp))
                .abs()
                .max((hp - spec.upper(t, &xp)).abs());
            if od.is_finite() && od > slack(c.lipschitz * dx, od) {
                push(
                    ViolationKind::LipschitzObstacle,
                    t,
                    &x,
                    format!("quotient {} > C = {}", od / dx, c.lipschitz),
                );
            }
        }
        let dyz = (y - yp).abs() + diff_norm(&z, &zp);
        let fyz = (f - f_yz).abs();
        if fyz > slack(c.driver_lipschitz * dyz, fyz) {
            push(
                ViolationKind::LipschitzDriverYZ,
                t,
                &x,
                format!("quotient {} > mu = {}", fyz / dyz, c.driver_lipschitz),
            );
        }

        let growth_bound = c.growth * (T::one() + norm(&x));
        let dyn_size = norm(&b1) + norm(&s1);
        if dyn_size > slack(growth_bound, dyn_size) {
            push(
                ViolationKind::GrowthDynamics,
                t,
                &x,
                format!("|b| + |sigma| = {dyn_size} > {growth_bound}"),
            );
        }
        let data_size = f0.abs() + phi.abs() + h.abs() + hp.abs();
        if data_size > slack(growth_bound, data_size) {
            push(
                ViolationKind::GrowthData,
                t,
                &x,
                format!("|f(.,0,0)| + |Phi| + |h| + |h'| = {data_size} > {growth_bound}"),
            );
        }
    }
    Ok(report)
}

/// Point at which the Hamiltonians are evaluated.
#[derive(Debug, Clone, PartialEq)]
pub struct HamiltonianInput<T> {
    pub t: T,
    pub x: Vec<T>,
    pub y: T,
    pub q: Vec<T>,
    /// Symmetric `n x n` matrix, row-major.
    pub hessian: Vec<T>,
}

impl<T: Scalar> HamiltonianInput<T> {
    /// Builds an input, replacing `hessian` by its symmetric part. A warning
    /// is logged when the asymmetry exceeds `1e-12`.
    pub fn new(t: T, x: Vec<T>, y: T, q: Vec<T>, hessian: Vec<T>) -> Result<Self> {
        let n = x.len();
        if q.len() != n || hessian.len() != n * n {
            return Err(Error::InvalidArgument(format!(
                "Hamiltonian input dimensions inconsistent: |x| = {n}, |q| = {}, |X| = {}",
                q.len(),
                hessian.len()
            )));
        }
        let mut sym = hessian;
        let mut asym = T::zero();
        for i in 0..n {
            for j in (i + 1)..n {
                let a = sym[i * n + j];
                let b = sym[j * n + i];
                asym = asym.max((a - b).abs());
                let m = (a + b) / T::lit(2.0);
                sym[i * n + j] = m;
                sym[j * n + i] = m;
            }
        }
        if asym > T::lit(1e-12) {
            log::warn!("second-derivative matrix asymmetric by {asym}; symmetrized");
        }
        Ok(Self {
            t,
            x,
            y,
            q,
            hessian: sym,
        })
    }

    /// Scalar state convenience.
    pub fn scalar(t: T, x: T, y: T, q: T, hessian: T) -> Self {
        Self {
            t,
            x: vec![x],
            y,
            q: vec![q],
            hessian: vec![hessian],
        }
    }
}

/// Value of a Hamiltonian together with the saddle control indices that
/// realise it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HamiltonianValue<T> {
    pub value: T,
    pub u: usize,
    pub v: usize,
}

/// Order of the min-max in a Hamiltonian.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MinMaxOrder {
    /// `sup_u inf_v`, the lower Hamiltonian.
    SupInf,
    /// `inf_v sup_u`, the upper Hamiltonian.
    InfSup,
}

/// Reduces a row-major `nu x nv` table (row = Player I control) by the
/// given min-max order. Returns `(value, u, v)`.
pub fn reduce_table<T: Scalar>(
    table: &[T],
    nu: usize,
    nv: usize,
    order: MinMaxOrder,
) -> (T, usize, usize) {
    debug_assert_eq!(table.len(), nu * nv);
    match order {
        MinMaxOrder::SupInf => {
            let mut best = (T::neg_infinity(), 0, 0);
            for iu in 0..nu {
                let row = &table[iu * nv..(iu + 1) * nv];
                let (mut inner, mut arg) = (row[0], 0);
                for (iv, &val) in row.iter().enumerate().skip(1) {
                    if val < inner {
                        inner = val;
                        arg = iv;
                    }
                }
                if iu == 0 || inner > best.0 {
                    best = (inner, iu, arg);
                }
            }
            best
        }
        MinMaxOrder::InfSup => {
            let mut best = (T::infinity(), 0, 0);
            for iv in 0..nv {
                let (mut inner, mut arg) = (table[iv], 0);
                for iu in 1..nu {
                    let val = table[iu * nv + iv];
                    if val > inner {
                        inner = val;
                        arg = iu;
                    }
                }
                if iv == 0 || inner < best.0 {
                    best = (inner, arg, iv);
                }
            }
            best
        }
    }
}

/// Table of `1/2 tr(sigma sigma^T X) + q.b + f(t, x, y, q.sigma, u, v)` over all pairs.
pub fn integrand_table<T: Scalar>(
    inp: &HamiltonianInput<T>,
    spec: &ProblemSpec<T>,
) -> Result<Vec<T>> {
    let n = spec.state_dim();
    let d = spec.noise_dim();
    if inp.x.len() != n {
        return Err(Error::InvalidArgument(format!(
            "state has dimension {} but the problem has n = {n}",
            inp.x.len()
        )));
    }
    let nu = spec.controls_i().len();
    let nv = spec.controls_ii().len();
    let mut b = vec![T::zero(); n];
    let mut sigma = vec![T::zero(); n * d];
    let mut z = vec![T::zero(); d];
    let mut table = Vec::with_capacity(nu * nv);
    for iu in 0..nu {
        for iv in 0..nv {
            spec.drift(inp.t, &inp.x, iu, iv, &mut b);
            spec.diffusion(inp.t, &inp.x, iu, iv, &mut sigma);
            // 1/2 tr(sigma sigma^T X) = 1/2 sum_k sum_ij sigma_ik X_ij sigma_jk
            let mut trace = T::zero();
            for k in 0..d {
                for i in 0..n {
                    for j in 0..n {
                        trace =
                            trace + sigma[i * d + k] * inp.hessian[i * n + j] * sigma[j * d + k];
                    }
                }
            }
            let qb: T = inp.q.iter().zip(&b).map(|(&qi, &bi)| qi * bi).sum();
            for (k, zk) in z.iter_mut().enumerate() {
                *zk = (0..n).map(|i| inp.q[i] * sigma[i * d + k]).sum();
            }
            let f = spec.driver(inp.t, &inp.x, inp.y, &z, iu, iv);
            let val = T::lit(0.5) * trace + qb + f;
            if !val.is_finite() {
                return Err(Error::NonFiniteIntegrand {
                    u: iu,
                    v: iv,
                    t: inp.t.as_f64(),
                    x: inp.x.iter().map(|v| v.as_f64()).collect(),
                });
            }
            table.push(val);
        }
    }
    Ok(table)
}

fn hamiltonian<T: Scalar>(
    inp: &HamiltonianInput<T>,
    spec: &ProblemSpec<T>,
    order: MinMaxOrder,
) -> Result<HamiltonianValue<T>> {
    let table = integrand_table(inp, spec)?;
    let (value, u, v) = reduce_table(
        &table,
        spec.controls_i().len(),
        spec.controls_ii().len(),
        order,
    );
    Ok(HamiltonianValue { value, u, v })
}

/// `H^-`: max over Player I's grid of min over Player II's grid.
pub fn hamiltonian_lower<T: Scalar>(
    inp: &HamiltonianInput<T>,
    spec: &ProblemSpec<T>,
) -> Result<HamiltonianValue<T>> {
    hamiltonian(inp, spec, MinMaxOrder::SupInf)
}

/// `H^+`: min over Player II's grid of max over Player I's grid.
pub fn hamiltonian_upper<T: Scalar>(
    inp: &HamiltonianInput<T>,
    spec: &ProblemSpec<T>,
) -> Result<HamiltonianValue<T>> {
    hamiltonian(inp, spec, MinMaxOrder::InfSup)
}

#[derive(Debug, Clone, PartialEq)]
pub struct IsaacsReport<T> {
    pub holds: bool,
    pub worst_gap: T,
    pub witness: Option<HamiltonianInput<T>>,
    pub samples: usize,
}

/// Samples Hamiltonian inputs and compares `H^+` with `H^-`.
pub fn isaacs_condition_check<T: Scalar>(
    spec: &ProblemSpec<T>,
    sample_count: usize,
    tol: T,
    seed: u64,
) -> Result<IsaacsReport<T>> {
    if sample_count == 0 {
        return Err(Error::InvalidArgument("sample_count must be >= 1".into()));
    }
    let n = spec.state_dim();
    let (lo, hi) = spec.sample_box();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst_gap = T::zero();
    let mut witness = None;
    for _ in 0..sample_count {
        let t = spec.horizon() * T::lit(rng.random::<f64>());
        let x: Vec<T> = (0..n)
            .map(|_| lo + (hi - lo) * T::lit(rng.random::<f64>()))
            .collect();
        let y = T::lit(rng.random_range(-1.0..1.0));
        let q: Vec<T> = (0..n)
            .map(|_| T::lit(rng.random_range(-1.0..1.0)))
            .collect();
        let mut hess = vec![T::zero(); n * n];
        for i in 0..n {
            for j in i..n {
                let v = T::lit(rng.random_range(-1.0..1.0));
                hess[i * n + j] = v;
                hess[j * n + i] = v;
            }
        }
        let inp = HamiltonianInput {
            t,
            x,
            y,
            q,
            hessian: hess,
        };
        let table = integrand_table(&inp, spec)?;
        let nu = spec.controls_i().len();
        let nv = spec.controls_ii().len();
        let lower = reduce_table(&table, nu, nv, MinMaxOrder::SupInf).0;
        let upper = reduce_table(&table, nu, nv, MinMaxOrder::InfSup).0;
        let gap = (upper - lower).abs();
        if witness.is_none() || gap > worst_gap {
            worst_gap = gap;
            witness = Some(inp);
        }
    }
    Ok(IsaacsReport {
        holds: worst_gap <= tol,
        worst_gap,
        witness,
        samples: sample_count,
    })
}
