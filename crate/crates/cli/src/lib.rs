//! Library surface of the command-line workbench: configuration,
//! pipeline orchestration, CSV plumbing and the bench harness, kept as
//! a library so integration tests drive the same code as the binary.

pub mod bench;
pub mod config;
pub mod csvio;
pub mod pipeline;

/// Exit code classification: 2 for configuration problems, 3 for
/// numerical failures.
pub fn exit_code_for(err: &mlkrig_core::Error) -> i32 {
    use mlkrig_core::Error::*;
    match err {
        CardinalityCap { .. } | InvalidParameter { .. } | DimensionMismatch { .. }
        | DenseCap { .. } | DuplicatePoints(..) | Io(_) | Corrupt(_) => 2,
        RankDeficient { .. } | NotPositiveDefinite { .. } | NoConvergence { .. }
        | InfeasibleStart | SamplingFactorization => 3,
    }
}
