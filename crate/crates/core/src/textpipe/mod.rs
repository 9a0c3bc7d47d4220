//! WordPiece tokenization, lexicon-based part-of-speech tags and text
//! token-length reduction.

pub mod pos;
pub mod reduce;
pub mod tokenizer;
pub mod vocab;

pub use pos::{Lexicon, PosTag};
pub use reduce::{reduce_text, TextReduction, TextStrategy};
pub use tokenizer::{TokenizedText, Tokenizer};
pub use vocab::Vocab;

#[derive(Debug, thiserror::Error)]
pub enum TextError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("vocab: {0}")]
    Vocab(String),
    #[error("lexicon: {0}")]
    Lexicon(String),
    #[error("text reduction: {0}")]
    Reduction(String),
}
