use thiserror::Error;

/// Errors shared by every subsystem of the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("bonding map into level {0} is not surjective")]
    NotSurjective(usize),
    #[error("level index {index} out of range (depth {depth})")]
    IndexOutOfRange { index: usize, depth: usize },
    #[error("graded operator is not level-coherent (max defect {0:.3e})")]
    NotCoherent(f64),
    #[error("operator is not level-wise injective")]
    NotInjective,
    #[error("point leaves the certified domain: {0}")]
    DomainViolation(String),
    #[error("trajectory left the pseudo-ball at t = {0}")]
    DomainExit(f64),
    #[error("picard iteration did not converge within {0} sweeps")]
    NoConvergence(usize),
    #[error("non-positive input: {0}")]
    NonPositiveInput(String),
    #[error("kernel dimension of the anchor jumps over the sampled domain at level {0}")]
    KernelDimJump(usize),
    #[error("pushed-down complement fails to split level {0}")]
    IncoherentSplit(usize),
    #[error("chart certificates missing: {0}")]
    CertificateMissing(String),
    #[error("requested depth {0} too large for this fixture")]
    DepthTooLarge(usize),
    #[error("generators do not span a subalgebra (commutator escape {0:.3e})")]
    NotASubalgebra(f64),
    #[error("schema error: {0}")]
    Schema(String),
}

pub type Result<T> = std::result::Result<T, Error>;
