use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use sha2::{Digest, Sha256};

use super::text::{Explanation, Lexicon};
use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BOS: usize = 2;
pub const EOS: usize = 3;
pub const RESERVED: [&str; 4] = ["<pad>", "<unk>", "<bos>", "<eos>"];

/// Token ↔ id bijection. The first four ids are reserved.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    attribute_ids: BTreeSet<usize>,
}

impl Vocabulary {
    /// `words` are the non-reserved tokens in id order.
    pub fn from_tokens(words: Vec<String>, lexicon: &Lexicon) -> Self {
        let tokens: Vec<String> = RESERVED
            .iter()
            .map(|s| s.to_string())
            .chain(words)
            .collect();
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        let attribute_ids = tokens
            .iter()
            .enumerate()
            .skip(RESERVED.len())
            .filter(|(_, t)| lexicon.contains(t))
            .map(|(i, _)| i)
            .collect();
        Vocabulary {
            tokens,
            index,
            attribute_ids,
        }
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
        self.tokens.get(id).map(String::as_str).unwrap_or(RESERVED[UNK])
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode(&self, toks: &[String]) -> Vec<usize> {
        toks.iter().map(|t| self.id(t)).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter().map(|&i| self.token(i).to_string()).collect()
    }

    pub fn attribute_ids(&self) -> &BTreeSet<usize> {
        &self.attribute_ids
    }

    pub fn is_attribute(&self, id: usize) -> bool {
        self.attribute_ids.contains(&id)
    }

    pub fn lexicon(&self) -> Lexicon {
        Lexicon(self.attribute_ids.iter().map(|&i| self.tokens[i].clone()).collect())
    }

    /// SHA-256 of the vocabulary file contents.
    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(self.to_file_string().as_bytes()))
    }

    fn to_file_string(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_file_string())?;
        Ok(())
    }

    /// Reads a vocabulary file (reserved tokens first).
    pub fn load(path: &Path, lexicon: &Lexicon) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let lines: Vec<String> = text.lines().map(String::from).collect();
        if lines.len() < RESERVED.len()
            || lines.iter().zip(RESERVED).any(|(a, b)| a != b)
        {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 1,
                msg: "vocabulary must start with the reserved tokens".into(),
            });
        }
        Ok(Self::from_tokens(lines[RESERVED.len()..].to_vec(), lexicon))
    }
}

/// Top `cap` tokens by frequency (ties lexicographic) plus the reserved ids.
pub fn build_vocabulary(
    explanations: &[Explanation],
    cap: usize,
    lexicon: &Lexicon,
) -> Result<Vocabulary> {
    if explanations.is_empty() {
        return Err(Error::Empty("explanation stream for vocabulary"));
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for e in explanations {
        for t in &e.tokens {
            if !RESERVED.contains(&t.as_str()) {
                *counts.entry(t.as_str()).or_default() += 1;
            }
        }
    }
    let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let words = ranked
        .into_iter()
        .take(cap)
        .map(|(t, _)| t.to_string())
        .collect();
    Ok(Vocabulary::from_tokens(words, lexicon))
}
