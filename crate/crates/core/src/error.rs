use thiserror::Error;

use crate::pi::PiBound;

#[derive(Debug, Error)]
pub enum LtsError {
    #[error("weighted normal matrix is numerically singular")]
    RankDeficient,

    #[error("no full-rank h-subset found")]
    RankDeficientData,

    #[error("infeasible configuration: {0}")]
    InfeasibleConfig(String),

    #[error("invalid dataset: {0}")]
    InvalidData(String),

    #[error("invalid generator spec: {0}")]
    InvalidSpec(String),

    #[error("Pi estimate did not converge (gap {:.3e})", .0.certified_gap)]
    NoConvergence(Box<PiBound>),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, LtsError>;
