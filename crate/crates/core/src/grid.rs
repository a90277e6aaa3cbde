use crate::error::{Error, Result};
use crate::model::ProblemSpec;
use crate::scalar::Scalar;

/// Truncated one-dimensional spatial domain with a uniform time grid.
///
/// Nodes are `x_i = x_min + i dx` for `i = 0..nx` (both ends included),
/// times are `t_k = t_start + k dt` for `k = 0..=nt`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpaceTimeGrid<T> {
    x_min: T,
    x_max: T,
    nx: usize,
    nt: usize,
    t_start: T,
    t_end: T,
    cfl_margin: T,
}

/// Coefficient maxima found while certifying the monotonicity condition
/// `dt (sigma^2/dx^2 + |b|/dx + mu (1 + |sigma|/dx) + penalty) <= margin`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonotonicityCertificate<T> {
    pub max_ratio: T,
    pub max_sigma_sq: T,
    pub max_abs_drift: T,
    pub driver_lipschitz: T,
    pub penalty: T,
    /// Largest `dt` that satisfies the condition on this spatial grid.
    pub max_dt: T,
}

impl<T: Scalar> SpaceTimeGrid<T> {
    pub fn new(
        x_min: T,
        x_max: T,
        nx: usize,
        nt: usize,
        horizon: T,
        cfl_margin: T,
    ) -> Result<Self> {
        Self::with_window(x_min, x_max, nx, nt, T::zero(), horizon, cfl_margin)
    }

    pub fn with_window(
        x_min: T,
        x_max: T,
        nx: usize,
        nt: usize,
        t_start: T,
        t_end: T,
        cfl_margin: T,
    ) -> Result<Self> {
        if !(x_min < x_max) || !x_min.is_finite() || !x_max.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "spatial bounds must satisfy x_min < x_max, got [{x_min}, {x_max}]"
            )));
        }
        if nx < 3 || nt < 1 {
            return Err(Error::InvalidArgument(format!(
                "grid needs nx >= 3 and nt >= 1, got nx = {nx}, nt = {nt}"
            )));
        }
        if !(t_start < t_end) {
            return Err(Error::InvalidArgument(format!(
                "time window must satisfy t_start < t_end, got [{t_start}, {t_end}]"
            )));
        }
        if !(cfl_margin > T::zero() && cfl_margin <= T::one()) {
            return Err(Error::InvalidArgument(format!(
                "cfl_margin must lie in (0, 1], got {cfl_margin}"
            )));
        }
        Ok(Self {
            x_min,
            x_max,
            nx,
            nt,
            t_start,
            t_end,
            cfl_margin,
        })
    }

    /// Same domain with `dx` halved and `dt` quartered.
    pub fn refined(&self) -> Self {
        Self {
            nx: 2 * (self.nx - 1) + 1,
            nt: 4 * self.nt,
            ..*self
        }
    }

    pub fn x_min(&self) -> T {
        self.x_min
    }

    pub fn x_max(&self) -> T {
        self.x_max
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn nt(&self) -> usize {
        self.nt
    }

    pub fn t_start(&self) -> T {
        self.t_start
    }

    pub fn t_end(&self) -> T {
        self.t_end
    }

    pub fn cfl_margin(&self) -> T {
        self.cfl_margin
    }

    pub fn dx(&self) -> T {
        (self.x_max - self.x_min) / T::from_usize_lossy(self.nx - 1)
    }

    pub fn dt(&self) -> T {
        (self.t_end - self.t_start) / T::from_usize_lossy(self.nt)
    }

    pub fn x(&self, i: usize) -> T {
        self.x_min + T::from_usize_lossy(i) * self.dx()
    }

    pub fn t(&self, k: usize) -> T {
        if k == self.nt {
            self.t_end
        } else {
            self.t_start + T::from_usize_lossy(k) * self.dt()
        }
    }

    pub fn nodes(&self) -> Vec<T> {
        (0..self.nx).map(|i| self.x(i)).collect()
    }

    pub fn times(&self) -> Vec<T> {
        (0..=self.nt).map(|k| self.t(k)).collect()
    }

    /// Index of the time level equal to `t` (within a small fraction of `dt`).
    pub fn time_index(&self, t: T) -> Option<usize> {
        let r = (t - self.t_start) / self.dt();
        let k = r.round();
        if (r - k).abs() <= T::lit(1e-9) && k >= T::zero() && k <= T::from_usize_lossy(self.nt) {
            k.to_usize()
        } else {
            None
        }
    }

    /// Node indices with `|x - center| <= (x_max - x_min) / 4`.
    pub fn inner_half(&self) -> std::ops::Range<usize> {
        let center = (self.x_min + self.x_max) / T::lit(2.0);
        let quarter = (self.x_max - self.x_min) / T::lit(4.0);
        let eps = self.dx() * T::lit(1e-9);
        let first = (0..self.nx)
            .find(|&i| self.x(i) >= center - quarter - eps)
            .unwrap_or(0);
        let last = (0..self.nx)
            .rev()
            .find(|&i| self.x(i) <= center + quarter + eps)
            .unwrap_or(self.nx - 1);
        first..last + 1
    }

    /// Certifies the monotonicity condition with the actual coefficient
    /// maxima over every time level, node and control pair.
    pub fn certify(&self, spec: &ProblemSpec<T>, penalty: T) -> Result<MonotonicityCertificate<T>> {
        if spec.state_dim() != 1 {
            return Err(Error::Unsupported(format!(
                "finite-difference grids support n = 1 only (got n = {})",
                spec.state_dim()
            )));
        }
        let d = spec.noise_dim();
        let dx = self.dx();
        let dt = self.dt();
        let mu = spec.coefficients().driver_lipschitz;
        let mut cert = MonotonicityCertificate {
            max_ratio: T::zero(),
            max_sigma_sq: T::zero(),
            max_abs_drift: T::zero(),
            driver_lipschitz: mu,
            penalty,
            max_dt: T::infinity(),
        };
        let mut worst = (0, 0, 0, 0);
        let mut worst_rate = T::zero();
        let mut b = [T::zero()];
        let mut sigma = vec![T::zero(); d];
        for k in 0..self.nt {
            let t = self.t(k);
            for i in 0..self.nx {
                let x = [self.x(i)];
                for iu in 0..spec.controls_i().len() {
                    for iv in 0..spec.controls_ii().len() {
                        spec.drift(t, &x, iu, iv, &mut b);
                        spec.diffusion(t, &x, iu, iv, &mut sigma);
                        let s2: T = sigma.iter().map(|&s| s * s).sum();
                        let rate = s2 / (dx * dx)
                            + b[0].abs() / dx
                            + mu * (T::one() + s2.sqrt() / dx)
                            + penalty;
                        cert.max_sigma_sq = cert.max_sigma_sq.max(s2);
                        cert.max_abs_drift = cert.max_abs_drift.max(b[0].abs());
                        if !rate.is_finite() {
                            return Err(Error::NonFiniteValue { step: k, node: i });
                        }
                        if rate > worst_rate {
                            worst_rate = rate;
                            worst = (k, i, iu, iv);
                        }
                    }
                }
            }
        }
        cert.max_ratio = dt * worst_rate;
        if worst_rate > T::zero() {
            cert.max_dt = self.cfl_margin / worst_rate;
        }
        if cert.max_ratio > self.cfl_margin {
            return Err(Error::Monotonicity {
                ratio: cert.max_ratio.as_f64(),
                margin: self.cfl_margin.as_f64(),
                step: worst.0,
                node: worst.1,
                u: worst.2,
                v: worst.3,
                max_dt: cert.max_dt.as_f64(),
            });
        }
        Ok(cert)
    }
}
