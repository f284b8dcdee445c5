use thiserror::Error;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid token range [{start}, {end}) for a document of length {doc_length}")]
    InvalidRange {
        start: u64,
        end: u64,
        doc_length: u64,
    },

    #[error("attention kernel with {q_len} query tokens needs at least one key/value token")]
    EmptyKeyValue { q_len: u64 },

    #[error("invalid parallelism config: {0}")]
    InvalidParallelism(&'static str),

    #[error("invalid cost profile: {0}")]
    InvalidProfile(&'static str),

    #[error("sequence length {length} is not divisible by 2*cp = {divisor}")]
    NotDivisible { length: u64, divisor: u64 },

    #[error("packing is infeasible: {0}")]
    Infeasible(&'static str),

    #[error("exact oracle handles at most {limit} documents, got {count}")]
    OracleLimit { count: usize, limit: usize },

    #[error("document {id} has length {length}, longer than the bound {bound}")]
    DocumentTooLong { id: u64, length: u64, bound: u64 },

    #[error("invalid outlier thresholds: {0}")]
    InvalidThresholds(&'static str),

    #[error("{0}")]
    InvalidInput(&'static str),
}
