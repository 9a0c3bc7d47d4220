use super::pos::{Lexicon, PosTag};
use super::vocab::Vocab;

const MAX_WORD_CHARS: usize = 100;

/// A caption as a fixed-capacity id sequence: `ids[0]` is CLS, positions at
/// and beyond `true_length` hold PAD.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenizedText {
    pub ids: Vec<u32>,
    pub tags: Vec<PosTag>,
    pub true_length: usize,
}

impl TokenizedText {
    pub fn capacity(&self) -> usize {
        self.ids.len()
    }

    /// Ids of the real (non-pad) tokens, CLS included.
    pub fn content(&self) -> &[u32] {
        &self.ids[..self.true_length]
    }

    /// Attention key mask: true for real tokens.
    pub fn mask(&self) -> Vec<bool> {
        (0..self.capacity()).map(|i| i < self.true_length).collect()
    }

    /// Builds a well-formed sequence from real ids (CLS first) and tags.
    pub fn from_parts(ids: &[u32], tags: &[PosTag], capacity: usize, pad: u32) -> Self {
        debug_assert_eq!(ids.len(), tags.len());
        let n = ids.len().min(capacity);
        let mut out = ids[..n].to_vec();
        out.resize(capacity, pad);
        Self { ids: out, tags: tags[..n].to_vec(), true_length: n }
    }
}

/// Lowercases and splits on whitespace, isolating ASCII punctuation.
pub fn normalize(caption: &str) -> Vec<String> {
    let mut words = Vec::new();
    for raw in caption.split_whitespace() {
        let mut cur = String::new();
        for ch in raw.chars().flat_map(char::to_lowercase) {
            if ch.is_ascii_punctuation() {
                if !cur.is_empty() {
                    words.push(std::mem::take(&mut cur));
                }
                words.push(ch.to_string());
            } else {
                cur.push(ch);
            }
        }
        if !cur.is_empty() {
            words.push(cur);
        }
    }
    words
}

/// Greedy longest-match-first segmentation of one word; `None` if some span
/// cannot be covered.
pub fn wordpiece(word: &str, vocab: &Vocab) -> Option<Vec<u32>> {
    let chars: Vec<char> = word.chars().collect();
    if chars.len() > MAX_WORD_CHARS {
        return None;
    }
    let mut pieces = Vec::new();
    let mut start = 0;
    while start < chars.len() {
        let mut end = chars.len();
        let mut found = None;
        while end > start {
            let mut piece: String = chars[start..end].iter().collect();
            if start > 0 {
                piece.insert_str(0, &vocab.continuation);
            }
            if let Some(id) = vocab.id(&piece) {
                found = Some(id);
                break;
            }
            end -= 1;
        }
        pieces.push(found?);
        start = end;
    }
    Some(pieces)
}

#[derive(Clone, Debug)]
pub struct Tokenizer {
    pub vocab: Vocab,
    pub lexicon: Lexicon,
}

impl Tokenizer {
    pub fn bundled() -> Self {
        Self { vocab: Vocab::bundled(), lexicon: Lexicon::bundled() }
    }

    /// Content ids (no CLS) for a caption, unknown words mapped to UNK.
    pub fn encode_words(&self, caption: &str) -> Vec<u32> {
        normalize(caption)
            .iter()
            .flat_map(|w| wordpiece(w, &self.vocab).unwrap_or_else(|| vec![self.vocab.unk]))
            .collect()
    }

    pub fn tokenize(&self, caption: &str, max_len: usize) -> TokenizedText {
        assert!(max_len >= 1, "capacity must hold CLS");
        let mut ids = vec![self.vocab.cls];
        ids.extend(self.encode_words(caption));
        ids.truncate(max_len);
        let tags = self.lexicon.tag_ids(&ids, &self.vocab);
        TokenizedText::from_parts(&ids, &tags, max_len, self.vocab.pad)
    }

    /// Joins pieces back into words, dropping specials.
    pub fn detokenize(&self, ids: &[u32]) -> String {
        let mut out = String::new();
        for &id in ids {
            if id == self.vocab.cls || id == self.vocab.pad {
                continue;
            }
            let tok = self.vocab.token(id);
            if let Some(rest) = tok.strip_prefix(self.vocab.continuation.as_str()) {
                out.push_str(rest);
            } else {
                if !out.is_empty() {
                    out.push(' ');
                }
                out.push_str(tok);
            }
        }
        out
    }
}
