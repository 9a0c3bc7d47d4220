//! Text token-length reduction.
//!
//! The budget `max_len` counts CLS. CLS is always kept; the remaining
//! `max_len - 1` slots are filled with content tokens chosen by the strategy,
//! then re-packed contiguously in their original relative order.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng as _;

use super::pos::PosTag;
use super::tokenizer::TokenizedText;
use super::TextError;
use crate::numerics::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TextStrategy {
    Truncation,
    Random,
    Block,
    Syntax,
}

impl TextStrategy {
    pub fn name(self) -> &'static str {
        match self {
            Self::Truncation => "truncation",
            Self::Random => "random",
            Self::Block => "block",
            Self::Syntax => "syntax",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TextReduction {
    pub strategy: TextStrategy,
    pub max_len: usize,
}

impl TextReduction {
    pub fn new(strategy: TextStrategy, max_len: usize) -> Result<Self, TextError> {
        if max_len < 2 {
            return Err(TextError::Reduction(format!("budget {} must keep CLS and one token", max_len)));
        }
        Ok(Self { strategy, max_len })
    }
}

impl fmt::Display for TextReduction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.strategy.name(), self.max_len)
    }
}

impl FromStr for TextReduction {
    type Err = TextError;

    /// Parses `truncation:8`, `random:16`, `block:6`, `syntax:4`.
    fn from_str(s: &str) -> Result<Self, TextError> {
        let bad = || TextError::Reduction(format!("cannot parse text reduction {:?}", s));
        let (name, len) = s.split_once(':').ok_or_else(bad)?;
        let strategy = match name.trim() {
            "truncation" | "truncate" => TextStrategy::Truncation,
            "random" => TextStrategy::Random,
            "block" => TextStrategy::Block,
            "syntax" => TextStrategy::Syntax,
            _ => return Err(bad()),
        };
        Self::new(strategy, len.trim().parse().map_err(|_| bad())?)
    }
}

/// Content positions (1-based offsets into the sequence) kept by `r`.
fn select(t: &TokenizedText, r: &TextReduction, rng: &mut Rng) -> Vec<usize> {
    let content = t.true_length - 1;
    let budget = r.max_len - 1;
    match r.strategy {
        TextStrategy::Truncation => (1..=budget).collect(),
        TextStrategy::Random => {
            let mut kept: Vec<usize> = index::sample(rng, content, budget).into_iter().map(|i| i + 1).collect();
            kept.sort_unstable();
            kept
        }
        TextStrategy::Block => {
            let start = rng.random_range(0..=content - budget);
            (start + 1..=start + budget).collect()
        }
        TextStrategy::Syntax => {
            let mut kept = Vec::with_capacity(budget);
            for class in [PosTag::Noun, PosTag::Adj, PosTag::Other] {
                for pos in 1..t.true_length {
                    if kept.len() == budget {
                        break;
                    }
                    let tag = if t.tags[pos] == PosTag::Special { PosTag::Other } else { t.tags[pos] };
                    if tag == class {
                        kept.push(pos);
                    }
                }
            }
            kept.sort_unstable();
            kept
        }
    }
}

/// Applies `r` to `t`. The result has capacity `r.max_len`; when the caption
/// already fits, its content passes through unchanged.
pub fn reduce_text(t: &TokenizedText, r: &TextReduction, pad: u32, rng: &mut Rng) -> TokenizedText {
    if t.true_length <= r.max_len {
        return TokenizedText::from_parts(t.content(), &t.tags, r.max_len, pad);
    }
    let kept = select(t, r, rng);
    let mut ids = Vec::with_capacity(r.max_len);
    let mut tags = Vec::with_capacity(r.max_len);
    ids.push(t.ids[0]);
    tags.push(t.tags[0]);
    for pos in kept {
        ids.push(t.ids[pos]);
        tags.push(t.tags[pos]);
    }
    TokenizedText::from_parts(&ids, &tags, r.max_len, pad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::SeedStream;
    use crate::textpipe::Tokenizer;

    fn rng(i: u64) -> Rng {
        SeedStream::new(i).rng()
    }

    #[test]
    fn truncation_keeps_prefix() {
        let tk = Tokenizer::bundled();
        let caption = "a b c d e f g h i j k l m n o p q r s";
        let t = tk.tokenize(caption, 32);
        assert_eq!(t.true_length, 20);
        let r = TextReduction::new(TextStrategy::Truncation, 8).unwrap();
        let out = reduce_text(&t, &r, tk.vocab.pad, &mut rng(0));
        assert_eq!(out.content(), &t.ids[..8]);
        assert_eq!(out.capacity(), 8);
    }

    #[test]
    fn fitting_caption_passes_through() {
        let tk = Tokenizer::bundled();
        let t = tk.tokenize("a red circle", 32);
        for strategy in [TextStrategy::Truncation, TextStrategy::Random, TextStrategy::Block, TextStrategy::Syntax] {
            let same = reduce_text(&t, &TextReduction::new(strategy, 32).unwrap(), tk.vocab.pad, &mut rng(1));
            assert_eq!(same, t);
            let shorter = reduce_text(&t, &TextReduction::new(strategy, 4).unwrap(), tk.vocab.pad, &mut rng(1));
            assert_eq!(shorter.content(), t.content());
        }
    }

    #[test]
    fn syntax_prefers_nouns_then_adjectives() {
        let tk = Tokenizer::bundled();
        let t = tk.tokenize("a red circle near a blue square", 32);
        let r = TextReduction::new(TextStrategy::Syntax, 4).unwrap();
        let out = reduce_text(&t, &r, tk.vocab.pad, &mut rng(0));
        assert_eq!(tk.detokenize(out.content()), "red circle square");
    }

    #[test]
    fn parse_and_display() {
        let r: TextReduction = "syntax:8".parse().unwrap();
        assert_eq!(r, TextReduction { strategy: TextStrategy::Syntax, max_len: 8 });
        assert_eq!(r.to_string(), "syntax:8");
        assert!("syntax:1".parse::<TextReduction>().is_err());
        assert!("bogus:8".parse::<TextReduction>().is_err());
    }
}
