use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::TextError;

const BUNDLED_VOCAB: &str = include_str!("../../assets/vocab.txt");

/// Token table. The file format is a four-line header declaring the special
/// tokens (`pad`, `unk`, `cls`, `continuation`, tab separated) followed by one
/// token per line; the id of a token is its line index after the header.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
    pub pad: u32,
    pub unk: u32,
    pub cls: u32,
    pub continuation: String,
}

impl Vocab {
    pub fn bundled() -> Self {
        Self::parse(BUNDLED_VOCAB).expect("bundled vocab is well formed")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TextError> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn parse(text: &str) -> Result<Self, TextError> {
        let mut lines = text.lines();
        let mut specials: HashMap<&str, &str> = HashMap::new();
        for _ in 0..4 {
            let line = lines.next().ok_or_else(|| TextError::Vocab("header shorter than 4 lines".into()))?;
            let (key, value) = line
                .split_once('\t')
                .ok_or_else(|| TextError::Vocab(format!("header line {:?} is not key<TAB>token", line)))?;
            specials.insert(key.trim(), value.trim());
        }
        let tokens: Vec<String> = lines.map(|l| l.trim_end_matches('\r').to_string()).filter(|l| !l.is_empty()).collect();
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if ids.insert(t.clone(), i as u32).is_some() {
                return Err(TextError::Vocab(format!("duplicate token {:?}", t)));
            }
        }
        let special = |key: &str| -> Result<u32, TextError> {
            let tok = specials.get(key).ok_or_else(|| TextError::Vocab(format!("missing {} declaration", key)))?;
            ids.get(*tok).copied().ok_or_else(|| TextError::Vocab(format!("{} token {:?} not in vocab", key, tok)))
        };
        let (pad, unk, cls) = (special("pad")?, special("unk")?, special("cls")?);
        if pad == unk || pad == cls || unk == cls {
            return Err(TextError::Vocab("special tokens must be distinct".into()));
        }
        let continuation = specials
            .get("continuation")
            .ok_or_else(|| TextError::Vocab("missing continuation declaration".into()))?
            .to_string();
        Ok(Self { tokens, ids, pad, unk, cls, continuation })
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "pad\t{}\nunk\t{}\ncls\t{}\ncontinuation\t{}\n",
            self.tokens[self.pad as usize], self.tokens[self.unk as usize], self.tokens[self.cls as usize], self.continuation
        );
        for t in &self.tokens {
            out.push_str(t);
            out.push('\n');
        }
        out
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn is_special(&self, id: u32) -> bool {
        id == self.pad || id == self.unk || id == self.cls || self.tokens[id as usize].starts_with('[')
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_vocab_is_dense_with_distinct_specials() {
        let v = Vocab::bundled();
        assert_eq!(v.pad, 0);
        assert_ne!(v.cls, v.unk);
        for i in 0..v.len() as u32 {
            assert_eq!(v.id(v.token(i)), Some(i));
        }
        assert_eq!(Vocab::parse(&v.to_text()).unwrap(), v);
    }

    #[test]
    fn missing_special_is_rejected() {
        let text = "pad\t[PAD]\nunk\t[UNK]\ncls\t[NOPE]\ncontinuation\t##\n[PAD]\n[UNK]\n";
        assert!(Vocab::parse(text).is_err());
    }
}
