//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("pose ({x:.4}, {y:.4}, {z:.4}) m unreachable for chain {chain}")]
    UnreachablePose {
        x: f64,
        y: f64,
        z: f64,
        chain: usize,
    },

    #[error("chain {chain} fully extended (singular configuration)")]
    SingularConfiguration { chain: usize },

    #[error("elbow spheres do not intersect for joint angles [{0:.4}, {1:.4}, {2:.4}] rad", theta[0], theta[1], theta[2])]
    NoIntersection { theta: [f64; 3] },

    #[error("jacobian condition number {cond:.3e} exceeds bound {bound:.3e}")]
    SingularJacobian { cond: f64, bound: f64 },

    #[error("no reachable sample in the requested workspace grid")]
    EmptyWorkspace,

    #[error("inertia matrix not positive definite / too ill-conditioned")]
    SingularMass,

    #[error("deformation compatibility matrix rank {rank}, expected {expected}")]
    RankDeficiency { rank: usize, expected: usize },

    #[error("reduced mass matrix is not positive definite")]
    IndefiniteMass,

    #[error("degenerate shaper: k_t = 0 collapses the impulse train to a single unit impulse")]
    DegenerateShaper,

    #[error("impulse spacing {t2:.6} s below sample step {dt:.6} s")]
    ImpulseAliasing { t2: f64, dt: f64 },

    #[error("frequency weighting is empty")]
    EmptyWeighting,

    #[error("fuzzy basis denominator underflowed")]
    DegenerateBasis,

    #[error("barrier violation at iteration {iteration}, t = {t:.4} s: |eta_{joint}| = {eta:.6} with v_c = {v_c}")]
    BarrierViolation {
        iteration: usize,
        t: f64,
        joint: usize,
        eta: f64,
        v_c: f64,
    },

    #[error("velocity limit exceeded at iteration {iteration}, t = {t:.4} s: {rate:.4} rad/s >= {limit:.4}")]
    VelocityLimit {
        iteration: usize,
        t: f64,
        rate: f64,
        limit: f64,
    },

    #[error("time grids do not match: expected {expected} samples, got {got}")]
    GridMismatch { expected: usize, got: usize },

    #[error("state diverged (NaN/inf) at iteration {iteration}, t = {t:.4} s")]
    NumericalDivergence { iteration: usize, t: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
