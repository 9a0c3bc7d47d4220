use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::vocab::Vocab;
use super::TextError;

const BUNDLED_LEXICON: &str = include_str!("../../assets/lexicon.tsv");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PosTag {
    Noun,
    Adj,
    Other,
    Special,
}

impl PosTag {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "NOUN" => Some(Self::Noun),
            "ADJ" => Some(Self::Adj),
            "OTHER" => Some(Self::Other),
            "SPECIAL" => Some(Self::Special),
            _ => None,
        }
    }
}

const NOUN_SUFFIXES: &[&str] = &["ness", "tion", "sion", "ment", "ity", "ship", "ism", "ist"];
const ADJ_SUFFIXES: &[&str] = &["ous", "ful", "ive", "able", "ible", "ic", "ish", "less", "ary"];

/// Word-level part-of-speech lookup: exact entries first, then suffix rules,
/// everything else is `Other`.
#[derive(Clone, Debug, Default)]
pub struct Lexicon {
    entries: HashMap<String, PosTag>,
}

impl Lexicon {
    pub fn bundled() -> Self {
        Self::parse(BUNDLED_LEXICON).expect("bundled lexicon is well formed")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TextError> {
        Self::parse(&fs::read_to_string(path)?)
    }

    /// Parses `word<TAB>TAG` lines; blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self, TextError> {
        let mut entries = HashMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (word, tag) = line
                .split_once('\t')
                .ok_or_else(|| TextError::Lexicon(format!("line {}: expected word<TAB>TAG", n + 1)))?;
            let tag = PosTag::parse(tag.trim())
                .ok_or_else(|| TextError::Lexicon(format!("line {}: unknown tag {:?}", n + 1, tag)))?;
            entries.insert(word.trim().to_lowercase(), tag);
        }
        Ok(Self { entries })
    }

    pub fn tag_word(&self, word: &str) -> PosTag {
        if let Some(&t) = self.entries.get(word) {
            return t;
        }
        for plural in ["es", "s"] {
            if let Some(PosTag::Noun) = word.strip_suffix(plural).and_then(|stem| self.entries.get(stem)) {
                return PosTag::Noun;
            }
        }
        if word.len() > 4 && NOUN_SUFFIXES.iter().any(|s| word.ends_with(s)) {
            return PosTag::Noun;
        }
        if word.len() > 4 && ADJ_SUFFIXES.iter().any(|s| word.ends_with(s)) {
            return PosTag::Adj;
        }
        PosTag::Other
    }

    /// Tags a token id sequence. Continuation pieces share the tag of the
    /// word they belong to; specials are `Special`.
    pub fn tag_ids(&self, ids: &[u32], vocab: &Vocab) -> Vec<PosTag> {
        let mut tags = vec![PosTag::Special; ids.len()];
        let mut i = 0;
        while i < ids.len() {
            if vocab.is_special(ids[i]) && ids[i] != vocab.unk {
                i += 1;
                continue;
            }
            let start = i;
            let mut word = vocab.token(ids[i]).to_string();
            i += 1;
            while i < ids.len() {
                match vocab.token(ids[i]).strip_prefix(vocab.continuation.as_str()) {
                    Some(rest) => word.push_str(rest),
                    None => break,
                }
                i += 1;
            }
            let tag = if ids[start] == vocab.unk { PosTag::Other } else { self.tag_word(&word) };
            tags[start..i].fill(tag);
        }
        tags
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textpipe::Tokenizer;

    #[test]
    fn color_shape_pair() {
        let tk = Tokenizer::bundled();
        let t = tk.tokenize("red circle", 8);
        assert_eq!(t.tags, vec![PosTag::Special, PosTag::Adj, PosTag::Noun]);
    }

    #[test]
    fn closed_class_words_are_other() {
        let lex = Lexicon::bundled();
        for w in ["the", "a", "near", "is", "of"] {
            assert_eq!(lex.tag_word(w), PosTag::Other, "{w}");
        }
    }

    #[test]
    fn continuation_pieces_inherit_head_tag() {
        let tk = Tokenizer::bundled();
        let t = tk.tokenize("circles", 8);
        assert_eq!(t.true_length, 3);
        assert_eq!(t.tags, vec![PosTag::Special, PosTag::Noun, PosTag::Noun]);
    }

    #[test]
    fn suffix_rules_and_unknowns() {
        let lex = Lexicon::bundled();
        assert_eq!(lex.tag_word("happiness"), PosTag::Noun);
        assert_eq!(lex.tag_word("glorious"), PosTag::Adj);
        assert_eq!(lex.tag_word("xyzzy"), PosTag::Other);
    }
}
