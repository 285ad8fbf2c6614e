//! Tokenization, review parsing, and explanation extraction.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{Error, Result};

/// Lowercases and splits on whitespace; every punctuation character becomes its
/// own token. Apostrophes inside a word stay attached ("don't").
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let chars: Vec<char> = text.chars().collect();
    for (k, &c) in chars.iter().enumerate() {
        let inner_apostrophe = c == '\''
            && !cur.is_empty()
            && chars.get(k + 1).is_some_and(|n| n.is_alphanumeric());
        if c.is_alphanumeric() || inner_apostrophe {
            cur.extend(c.to_lowercase());
        } else {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
            if !c.is_whitespace() {
                out.push(c.to_string());
            }
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

fn is_terminator(tok: &str) -> bool {
    matches!(tok, "." | "!" | "?")
}

/// Splits a token stream into sentences; the terminator stays with its sentence.
pub fn split_sentences(tokens: &[String]) -> Vec<Vec<String>> {
    let mut out = Vec::new();
    let mut cur = Vec::new();
    for t in tokens {
        cur.push(t.clone());
        if is_terminator(t) {
            out.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, Deserialize)]
pub struct RatingScale {
    pub min: f64,
    pub max: f64,
}

impl RatingScale {
    pub fn new(min: f64, max: f64) -> Self {
        RatingScale { min, max }
    }

    pub fn contains(&self, r: f64) -> bool {
        r >= self.min && r <= self.max
    }

    pub fn clip(&self, r: f64) -> f64 {
        r.clamp(self.min, self.max)
    }
}

impl Default for RatingScale {
    fn default() -> Self {
        RatingScale { min: 1.0, max: 5.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
pub struct RawReview {
    pub user: String,
    pub item: String,
    pub rating: f64,
    pub text: String,
}

/// Line-by-line JSON-lines reader; yields records in file order.
pub struct ReviewReader<R> {
    lines: std::io::Lines<R>,
    path: PathBuf,
    line: usize,
    scale: RatingScale,
}

impl<R: BufRead> Iterator for ReviewReader<R> {
    type Item = Result<RawReview>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let raw = self.lines.next()?;
            self.line += 1;
            let raw = match raw {
                Ok(l) => l,
                Err(e) => return Some(Err(e.into())),
            };
            if raw.trim().is_empty() {
                continue;
            }
            let rec: RawReview = match serde_json::from_str(&raw) {
                Ok(r) => r,
                Err(e) => {
                    return Some(Err(Error::Parse {
                        path: self.path.clone(),
                        line: self.line,
                        msg: e.to_string(),
                    }))
                }
            };
            if !self.scale.contains(rec.rating) {
                return Some(Err(Error::RatingOutOfRange {
                    line: self.line,
                    user: rec.user,
                    item: rec.item,
                    rating: rec.rating,
                    min: self.scale.min,
                    max: self.scale.max,
                }));
            }
            return Some(Ok(rec));
        }
    }
}

pub fn parse_reviews(path: &Path, scale: RatingScale) -> Result<ReviewReader<BufReader<File>>> {
    let f = File::open(path)?;
    Ok(ReviewReader {
        lines: BufReader::new(f).lines(),
        path: path.to_path_buf(),
        line: 0,
        scale,
    })
}

/// Attribute words; a plain token set.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Lexicon(pub BTreeSet<String>);

impl Lexicon {
    pub fn from_words<I: IntoIterator<Item = S>, S: Into<String>>(words: I) -> Self {
        Lexicon(words.into_iter().map(|w| w.into().to_lowercase()).collect())
    }

    pub fn contains(&self, tok: &str) -> bool {
        self.0.contains(tok)
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    /// One token per line; blank lines and `#` comments ignored.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(Self::parse(&text))
    }

    pub fn parse(text: &str) -> Self {
        Lexicon::from_words(
            text.lines()
                .map(|l| l.split('#').next().unwrap_or("").trim())
                .filter(|l| !l.is_empty()),
        )
    }

    /// Fallback miner: the `top_n` most frequent tokens seen in the frame
    /// "the/a/an ⟨w⟩ is/are/was/were". Ties break lexicographically.
    pub fn mine<'a, I: IntoIterator<Item = &'a RawReview>>(reviews: I, top_n: usize) -> Self {
        let mut counts = std::collections::HashMap::<String, usize>::new();
        for r in reviews {
            let toks = tokenize(&r.text);
            for w in toks.windows(3) {
                if matches!(w[0].as_str(), "the" | "a" | "an")
                    && matches!(w[2].as_str(), "is" | "are" | "was" | "were")
                    && w[1].chars().all(char::is_alphabetic)
                {
                    *counts.entry(w[1].clone()).or_default() += 1;
                }
            }
        }
        let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Lexicon::from_words(ranked.into_iter().take(top_n).map(|(w, _)| w))
    }
}

/// A review reduced to its attribute-bearing sentences.
#[derive(Clone, Debug, PartialEq)]
pub struct Explanation {
    pub user: String,
    pub item: String,
    pub rating: f64,
    pub tokens: Vec<String>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ExtractSummary {
    pub kept: usize,
    pub dropped: usize,
    pub truncated: usize,
}

/// Keeps, in order, every sentence containing a lexicon token, truncated to
/// `max_len` tokens. Records with no such sentence are dropped.
pub fn extract_explanations<I>(
    records: I,
    lexicon: &Lexicon,
    max_len: usize,
) -> Result<(Vec<Explanation>, ExtractSummary)>
where
    I: IntoIterator<Item = RawReview>,
{
    if lexicon.is_empty() {
        return Err(Error::Empty("attribute lexicon"));
    }
    let mut out = Vec::new();
    let mut summary = ExtractSummary::default();
    for rec in records {
        let toks = tokenize(&rec.text);
        let mut kept: Vec<String> = split_sentences(&toks)
            .into_iter()
            .filter(|s| s.iter().any(|t| lexicon.contains(t)))
            .flatten()
            .collect();
        if kept.is_empty() {
            summary.dropped += 1;
            continue;
        }
        if kept.len() > max_len {
            kept.truncate(max_len);
            summary.truncated += 1;
        }
        summary.kept += 1;
        out.push(Explanation {
            user: rec.user,
            item: rec.item,
            rating: rec.rating,
            tokens: kept,
        });
    }
    Ok((out, summary))
}
