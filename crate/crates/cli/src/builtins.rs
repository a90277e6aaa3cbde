//! Built-in problem families and the custom-expression problem.

use isaacs_core::model::{CoefficientSet, ProblemSpec};

use crate::config::ProblemConfig;
use crate::expr::{Expr, Var};
use crate::RunError;

fn tent(x: f64) -> f64 {
    (1.0 - x.abs()).max(0.0)
}

fn parse_expr(field: &str, src: &str, allowed: &[Var]) -> Result<Expr, RunError> {
    let e = Expr::parse(src).map_err(|e| RunError::Config(format!("problem.{field}: {e}")))?;
    e.require_only(allowed).map_err(|v| {
        RunError::Config(format!(
            "problem.{field}: variable '{}' is not allowed here (allowed: {})",
            v.name(),
            allowed
                .iter()
                .map(|v| v.name())
                .collect::<Vec<_>>()
                .join(", ")
        ))
    })?;
    Ok(e)
}

/// Builds the `f64` problem described by `cfg`.
pub fn build_problem(cfg: &ProblemConfig) -> Result<ProblemSpec<f64>, RunError> {
    let spec = match cfg {
        &ProblemConfig::Constant { value, horizon } => {
            let coeffs = CoefficientSet::new()
                .with_diffusion_1d(|_, _, _, _| 1.0)
                .with_terminal_1d(move |_| value)
                .with_lower_1d(move |_, _| value - 1.0)
                .with_upper_1d(move |_, _| value + 1.0);
            ProblemSpec::scalar(horizon, coeffs, &[0.0], &[0.0])
        }
        &ProblemConfig::Transport {
            speed,
            sigma,
            horizon,
        } => {
            let coeffs = CoefficientSet::new()
                .with_drift_1d(move |_, _, _, _| speed)
                .with_diffusion_1d(move |_, _, _, _| sigma)
                .with_terminal_1d(|x: f64| (-x * x).exp())
                .with_lower_1d(|_, _| -1.0)
                .with_upper_1d(|_, _| 2.0)
                .with_lipschitz(1.0);
            ProblemSpec::scalar(horizon, coeffs, &[0.0], &[0.0])
        }
        &ProblemConfig::DynkinHeat {
            rate,
            lower_gap,
            upper_gap,
            horizon,
        } => {
            let coeffs = CoefficientSet::new()
                .with_diffusion_1d(|_, _, _, _| std::f64::consts::SQRT_2)
                .with_driver_1d(move |_, _, y: f64, _, _, _| -rate * y)
                .with_terminal_1d(tent)
                .with_lower_1d(move |_, x| tent(x) - lower_gap)
                .with_upper_1d(move |_, x| tent(x) + upper_gap)
                .with_driver_lipschitz(rate.abs())
                .with_lipschitz(1.0);
            ProblemSpec::scalar(horizon, coeffs, &[0.0], &[0.0])
        }
        &ProblemConfig::BilinearGame { sigma, horizon } => {
            let coeffs = CoefficientSet::new()
                .with_diffusion_1d(move |_, _, _, _| sigma)
                .with_driver_1d(|_, _, _, _, u: f64, v: f64| u * v)
                .with_lower_1d(|_, _| -3.0)
                .with_upper_1d(|_, _| 3.0);
            ProblemSpec::scalar(horizon, coeffs, &[-1.0, 1.0], &[-1.0, 1.0])
        }
        &ProblemConfig::SeparableGame { sigma, horizon } => {
            let coeffs = CoefficientSet::new()
                .with_diffusion_1d(move |_, _, _, _| sigma)
                .with_driver_1d(|_, _, _, _, u: f64, v: f64| 0.5 * u - 0.25 * v * v)
                .with_terminal_1d(|x: f64| 0.5 * x.cos())
                .with_lower_1d(|_, _| -2.0)
                .with_upper_1d(|_, _| 2.0)
                .with_lipschitz(1.0);
            ProblemSpec::scalar(horizon, coeffs, &[-1.0, 0.0, 1.0], &[-1.0, 0.5, 1.0])
        }
        ProblemConfig::Custom {
            drift,
            diffusion,
            driver,
            terminal,
            lower,
            upper,
            controls_i,
            controls_ii,
            lipschitz,
            driver_lipschitz,
            horizon,
        } => {
            use Var::*;
            let b = parse_expr("drift", drift, &[T, X, U, V])?;
            let s = parse_expr("diffusion", diffusion, &[T, X, U, V])?;
            let f = parse_expr("driver", driver, &[T, X, Y, Z, U, V])?;
            let phi = parse_expr("terminal", terminal, &[X])?;
            let h = parse_expr("lower", lower, &[T, X])?;
            let hp = parse_expr("upper", upper, &[T, X])?;
            let coeffs = CoefficientSet::new()
                .with_drift_1d(move |t, x, u, v| b.eval(&[t, x, 0.0, 0.0, u, v]))
                .with_diffusion_1d(move |t, x, u, v| s.eval(&[t, x, 0.0, 0.0, u, v]))
                .with_driver_1d(move |t, x, y, z, u, v| f.eval(&[t, x, y, z, u, v]))
                .with_terminal_1d(move |x| phi.eval(&[0.0, x, 0.0, 0.0, 0.0, 0.0]))
                .with_lower_1d(move |t, x| h.eval(&[t, x, 0.0, 0.0, 0.0, 0.0]))
                .with_upper_1d(move |t, x| hp.eval(&[t, x, 0.0, 0.0, 0.0, 0.0]))
                .with_lipschitz(*lipschitz)
                .with_driver_lipschitz(*driver_lipschitz);
            ProblemSpec::scalar(*horizon, coeffs, controls_i, controls_ii)
        }
    };
    spec.map_err(|e| RunError::Config(format!("problem: {e}")))
}
