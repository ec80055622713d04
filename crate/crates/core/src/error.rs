use thiserror::Error;

/// Errors produced by the gating, projection, cost, orchestration, and
/// evaluation layers.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied parameter violates its documented range or shape.
    #[error("invalid parameter: {0}")]
    Param(String),

    /// Inputs are individually valid but mutually inconsistent
    /// (e.g. a relation referencing an object with no prediction).
    #[error("inconsistent input: {0}")]
    Consistency(String),

    /// A noise schedule violates its invariants.
    #[error("invalid schedule: {0}")]
    Schedule(String),

    /// Decoder dimensions do not match the latent.
    #[error("decoder mismatch: {0}")]
    Decoder(String),

    /// A session configuration cannot be executed (e.g. the seed sequence
    /// is exhausted before the restart cap).
    #[error("session configuration: {0}")]
    Config(String),

    /// A manifest or record violates the data schema; the message carries
    /// the record location and offending field.
    #[error("data error: {0}")]
    Data(String),

    /// The cost model has no accepting run (acceptance probability zero),
    /// so expected time diverges.
    #[error("expected time diverges: {0}")]
    Divergence(String),
}

pub type Result<T> = std::result::Result<T, Error>;
