//! From-scratch neural components: a reverse-mode autodiff tape, a compact
//! transformer encoder with masked-LM pretraining, and the
//! gradient-reversal scrubber that suppresses genealogical signal while
//! keeping size-symbolic structure.

use thiserror::Error;

pub mod encoder;
pub mod gradcheck;
pub mod matrix;
pub mod mlm;
pub mod optim;
pub mod scrubber;
pub mod tape;
pub mod vocab;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error("token id {id} out of range for vocabulary of {vocab_size}")]
    IdOutOfRange { id: usize, vocab_size: usize },
    #[error("sequence of {len} tokens exceeds the maximum length {max}")]
    Overlength { len: usize, max: usize },
    #[error("cannot encode an empty token sequence")]
    EmptySequence,
    #[error("pretraining corpus is empty after tokenization")]
    EmptyCorpus,
    #[error("cannot build a vocabulary from an empty corpus")]
    EmptyVocabulary,
    #[error("tokenization failed: {0}")]
    Tokenize(String),
    #[error("io error: {0}")]
    Io(String),
    #[error("not a vocabulary file: {0}")]
    BadVocabFile(String),
    #[error("fold does not match the lexicon: {0}")]
    FoldMismatch(String),
    #[error("run record too short: {0}")]
    ShortRecord(String),
    #[error(transparent)]
    Stats(#[from] phonosym_core::stats::StatsError),
}
