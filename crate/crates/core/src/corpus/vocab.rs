use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::dialog::Dialog;
use crate::error::{MossError, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const EOS_M: usize = 2;
pub const EOS_S: usize = 3;
pub const EOS_A: usize = 4;
pub const EOS_R: usize = 5;
pub const SEP_INF: usize = 6;
pub const SEP_REQ: usize = 7;
pub const GO: usize = 8;

/// Reserved surface forms, indexed by id.
pub const RESERVED: [&str; 9] = [
    "PAD", "UNK", "EOS_M", "EOS_S", "EOS_A", "EOS_R", "SEP_INF", "SEP_REQ", "GO",
];

pub const DEFAULT_LIMIT: usize = 800;

pub fn reserved(id: usize) -> &'static str {
    RESERVED[id]
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(MossError::contract(format!(
                    "duplicate vocabulary token `{t}`"
                )));
            }
        }
        for (i, r) in RESERVED.iter().enumerate() {
            if index.get(*r) != Some(&i) {
                return Err(MossError::contract(format!(
                    "reserved token `{r}` must have id {i}"
                )));
            }
        }
        Ok(Vocab { tokens, index })
    }

    /// Frequency-ranked vocabulary (ties broken lexicographically),
    /// truncated to `limit` entries including the reserved tokens.
    pub fn build(corpus: &[Dialog], limit: usize) -> Result<Self> {
        if limit < RESERVED.len() {
            return Err(MossError::precondition(format!(
                "vocabulary limit {limit} is below the {} reserved tokens",
                RESERVED.len()
            )));
        }
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for d in corpus {
            for turn in &d.turns {
                for tok in turn.all_tokens() {
                    *counts.entry(tok).or_default() += 1;
                }
            }
        }
        for r in RESERVED {
            counts.remove(r);
        }
        let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        tokens.extend(
            ranked
                .into_iter()
                .take(limit - RESERVED.len())
                .map(|(t, _)| t.to_string()),
        );
        Self::from_tokens(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    /// Id of `token`, or `UNK` when out of vocabulary.
    pub fn encode(&self, token: &str) -> usize {
        self.get(token).unwrap_or(UNK)
    }

    pub fn encode_all<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.encode(t.as_ref())).collect()
    }

    pub fn decode(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn to_text(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Self::from_tokens(text.lines().map(str::to_string).collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| MossError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| MossError::io(path, e))?;
        Self::from_text(&text)
    }
}
