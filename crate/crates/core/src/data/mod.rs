//! Corpus ingestion: tokenization, vocabulary, frozen embeddings, NLI
//! parsing and padded batching.

mod batch;
mod corpus;
mod embedding;
mod tokenize;
mod vocab;

use std::path::PathBuf;

use thiserror::Error;

pub use batch::{make_batches, Batch, SentenceBatch};
pub use corpus::{parse_nli_jsonl, read_nli_jsonl, Label, NliExample, ParsedCorpus, TextPair};
pub use embedding::{load_embeddings, read_embeddings, EmbeddingTable};
pub use tokenize::tokenize;
pub use vocab::{Vocabulary, PAD, PAD_TOKEN, UNK, UNK_TOKEN};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("sentence is empty after tokenization")]
    EmptySentence,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Format {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

impl DataError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }
}
