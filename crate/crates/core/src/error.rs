use thiserror::Error;

use crate::scenario::Violation;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("scenario failed validation ({} violations): {}", .0.len(), join_violations(.0))]
    Validation(Vec<Violation>),

    #[error("cannot generate scenario: {0}")]
    Generate(String),

    #[error("dispatcher output is not a permutation of the legal lots: {0}")]
    NotPermutation(String),

    #[error("lot {0} is not legal at the current decision point")]
    NotLegal(u64),

    #[error("family index {index} out of range for {families} families")]
    FamilyOutOfRange { index: usize, families: usize },

    #[error("no samples collected: {0}")]
    NoSamples(String),

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("non-finite fitness from population member {member} (rollout seed {seed})")]
    NonFiniteFitness { member: usize, seed: u64 },

    #[error("iteration {i} outside the schedule range 0..={i_max}")]
    ScheduleRange { i: usize, i_max: usize },

    #[error("bad file format: {0}")]
    Format(String),

    #[error("parameter shape mismatch: {0}")]
    Shape(String),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
