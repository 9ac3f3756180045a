use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::AffordanceSequence;

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const SEG: usize = 4;

const RESERVED: [&str; 5] = ["<PAD>", "<BOS>", "<EOS>", "<UNK>", "<SEG>"];

/// Lowercases and splits on whitespace; each punctuation character becomes
/// its own token.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    for c in text.chars().flat_map(char::to_lowercase) {
        if c.is_alphanumeric() || c == '_' {
            word.push(c);
            continue;
        }
        if !word.is_empty() {
            out.push(std::mem::take(&mut word));
        }
        if !c.is_whitespace() {
            out.push(c.to_string());
        }
    }
    if !word.is_empty() {
        out.push(word);
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Vocabulary {
    fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < RESERVED.len() || tokens[..RESERVED.len()] != RESERVED {
            return Err(Error::Invalid("vocabulary must start with the reserved tokens".into()));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Invalid(format!("duplicate vocabulary token '{t}'")));
            }
        }
        Ok(Vocabulary { tokens, index })
    }

    /// Reserved ids 0–4, then corpus tokens by descending frequency with
    /// ties broken lexicographically.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for t in texts {
            for tok in tokenize(t) {
                *counts.entry(tok).or_default() += 1;
            }
        }
        let mut ranked: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(t, _)| !RESERVED.contains(&t.as_str()))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let tokens = RESERVED
            .iter()
            .map(|s| s.to_string())
            .chain(ranked.into_iter().map(|(t, _)| t))
            .collect();
        Self::from_tokens(tokens).expect("reserved prefix and unique tokens by construction")
    }

    /// Vocabulary over every instruction and step text of `sequences`.
    pub fn from_sequences<'a>(sequences: impl IntoIterator<Item = &'a AffordanceSequence>) -> Self {
        let mut texts = Vec::new();
        for s in sequences {
            texts.push(s.instruction.as_str());
            texts.extend(s.steps.iter().map(|t| t.text.as_str()));
        }
        Self::build(texts)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> &str {
        self.tokens.get(id).map(String::as_str).unwrap_or("<UNK>")
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        tokenize(text).iter().map(|t| self.id(t)).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .map(|&i| self.token(i))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Gold planner output: each step's tokens followed by `<SEG>`, then `<EOS>`.
    pub fn gold_output(&self, steps: &[&str]) -> Vec<usize> {
        let mut out = Vec::new();
        for s in steps {
            out.extend(self.encode(s));
            out.push(SEG);
        }
        out.push(EOS);
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.tokens).expect("token list serialises")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let tokens: Vec<String> = serde_json::from_str(text).map_err(|e| {
            Error::parse(format!("line {} column {}", e.line(), e.column()), e.to_string())
        })?;
        Self::from_tokens(tokens)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::util::write_atomic(path.as_ref(), self.to_json().as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
