use thiserror::Error;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("non-finite Hamiltonian integrand for control pair (u#{u}, v#{v}) at t={t}, x={x:?}")]
    NonFiniteIntegrand {
        u: usize,
        v: usize,
        t: f64,
        x: Vec<f64>,
    },

    #[error("non-finite value at step {step}, node {node}")]
    NonFiniteValue { step: usize, node: usize },

    #[error("forward path {path} blew up at step {step}")]
    BlowUp { path: usize, step: usize },

    #[error(
        "monotonicity condition violated: stencil ratio {ratio:.6} exceeds margin {margin} \
         (worst at step {step}, node {node}, controls (u#{u}, v#{v})); maximal admissible dt = {max_dt:.6e}"
    )]
    Monotonicity {
        ratio: f64,
        margin: f64,
        step: usize,
        node: usize,
        u: usize,
        v: usize,
        max_dt: f64,
    },

    #[error(
        "lattice transition probability {prob:.3e} < 0 at step {step}, node {node}, controls (u#{u}, v#{v}); \
         moment matching requires dt in [{dt_min:.6e}, {dt_max:.6e}]"
    )]
    LatticeProbability {
        prob: f64,
        step: usize,
        node: usize,
        u: usize,
        v: usize,
        dt_min: f64,
        dt_max: f64,
    },

    #[error("explicit backward step not contractive: dt*(mu + penalty) = {product:.6} >= 1; maximal admissible dt = {max_dt:.6e}")]
    Contraction { product: f64, max_dt: f64 },

    #[error(
        "terminal data {value} at node {node} (x={x}) outside barrier sandwich [{lower}, {upper}]"
    )]
    BarrierSandwich {
        node: usize,
        x: f64,
        value: f64,
        lower: f64,
        upper: f64,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
