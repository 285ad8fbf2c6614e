//! Synthetic corpora with a planted rating → sentiment-word mapping.

use std::collections::BTreeSet;

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use super::text::{Explanation, Lexicon, RatingScale};
use super::vocab::build_vocabulary;
use crate::error::{Error, Result};
use crate::rng;

/// Sentiment words used when the rating rounds to `rating`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SentimentLevel {
    pub rating: f64,
    pub words: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub n_users: usize,
    pub n_items: usize,
    pub n_interactions: usize,
    pub rank: usize,
    pub noise_sd: f64,
    /// Multiplier on the unit-variance preference score.
    pub spread: f64,
    pub discretize: bool,
    pub scale: RatingScale,
    pub levels: Vec<SentimentLevel>,
    pub attributes: Vec<String>,
    pub attrs_per_item: usize,
    /// Clause templates with `{attr}` and `{sent}` slots.
    pub templates: Vec<String>,
    pub max_clauses: usize,
    pub valid_frac: f64,
    pub test_frac: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        let words = |ws: &[&str]| ws.iter().map(|w| w.to_string()).collect::<Vec<_>>();
        SynthSpec {
            n_users: 200,
            n_items: 100,
            n_interactions: 8000,
            rank: 4,
            noise_sd: 0.3,
            spread: 1.0,
            discretize: true,
            scale: RatingScale::default(),
            levels: vec![
                SentimentLevel { rating: 1.0, words: words(&["awful", "terrible"]) },
                SentimentLevel { rating: 2.0, words: words(&["bland", "poor"]) },
                SentimentLevel { rating: 3.0, words: words(&["okay", "average"]) },
                SentimentLevel { rating: 4.0, words: words(&["good", "tasty"]) },
                SentimentLevel { rating: 5.0, words: words(&["excellent", "amazing"]) },
            ],
            attributes: (0..40).map(|k| format!("attr{k}")).collect(),
            attrs_per_item: 3,
            templates: words(&["the {attr} is {sent}", "the {attr} was {sent}", "{sent} {attr}"]),
            max_clauses: 2,
            valid_frac: 0.1,
            test_frac: 0.1,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for l in &self.levels {
            if l.words.is_empty() {
                return Err(Error::Mapping(format!("level {} has no words", l.rating)));
            }
            for w in &l.words {
                if !seen.insert(w.as_str()) {
                    return Err(Error::Mapping(format!("sentiment word {w:?} is in two levels")));
                }
            }
        }
        if self.levels.is_empty() {
            return Err(Error::Mapping("no sentiment levels".into()));
        }
        if let Some(a) = self.attributes.iter().find(|a| seen.contains(a.as_str())) {
            return Err(Error::Mapping(format!("{a:?} is both attribute and sentiment word")));
        }
        if self.attributes.len() < self.attrs_per_item || self.attrs_per_item == 0 {
            return Err(Error::Mapping("attribute pool smaller than attrs_per_item".into()));
        }
        if self.n_interactions > self.n_users * self.n_items {
            return Err(Error::Config("more interactions than user-item cells".into()));
        }
        if self.templates.is_empty() || self.max_clauses == 0 || self.rank == 0 {
            return Err(Error::Config("templates, max_clauses and rank must be non-empty".into()));
        }
        Ok(())
    }

    /// Index of the level whose rating is nearest to `r` (lower level on ties).
    pub fn level_of(&self, r: f64) -> usize {
        let mut best = 0;
        for (k, l) in self.levels.iter().enumerate() {
            if (l.rating - r).abs() < (self.levels[best].rating - r).abs() {
                best = k;
            }
        }
        best
    }

    pub fn lexicon(&self) -> Lexicon {
        Lexicon::from_words(self.attributes.iter().cloned())
    }
}

fn normal_vec<R: Rng>(r: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(r)).collect()
}

/// Explanation text and rating for every sampled (user, item) cell.
pub fn synthesize_explanations(spec: &SynthSpec) -> Result<Vec<Explanation>> {
    spec.validate()?;
    let mut r = rng::stream(spec.seed, &[0x5917]);
    let users: Vec<Vec<f64>> = (0..spec.n_users).map(|_| normal_vec(&mut r, spec.rank)).collect();
    let items: Vec<Vec<f64>> = (0..spec.n_items).map(|_| normal_vec(&mut r, spec.rank)).collect();
    let item_attrs: Vec<Vec<usize>> = (0..spec.n_items)
        .map(|_| sample(&mut r, spec.attributes.len(), spec.attrs_per_item).into_vec())
        .collect();
    let mut cells = sample(&mut r, spec.n_users * spec.n_items, spec.n_interactions).into_vec();
    cells.sort_unstable();
    let center = 0.5 * (spec.scale.min + spec.scale.max);
    let norm = (spec.rank as f64).sqrt();
    let mut out = Vec::with_capacity(cells.len());
    for cell in cells {
        let (u, i) = (cell / spec.n_items, cell % spec.n_items);
        let dot: f64 = users[u].iter().zip(&items[i]).map(|(a, b)| a * b).sum();
        let noise: f64 = StandardNormal.sample(&mut r);
        let mut rating = spec.scale.clip(center + spec.spread * dot / norm + spec.noise_sd * noise);
        if spec.discretize {
            rating = rating.round();
        }
        let words = &spec.levels[spec.level_of(rating)].words;
        let n_clauses = r.random_range(1..=spec.max_clauses);
        let clauses: Vec<String> = (0..n_clauses)
            .map(|_| {
                let attr = &spec.attributes[item_attrs[i][r.random_range(0..item_attrs[i].len())]];
                let sent = &words[r.random_range(0..words.len())];
                let t = &spec.templates[r.random_range(0..spec.templates.len())];
                t.replace("{attr}", attr).replace("{sent}", sent)
            })
            .collect();
        out.push(Explanation {
            user: format!("u{u}"),
            item: format!("i{i}"),
            rating,
            tokens: clauses
                .join(" , and ")
                .split(' ')
                .map(String::from)
                .collect(),
        });
    }
    Ok(out)
}

/// Builds a split dataset from a planted specification.
pub fn synthesize_corpus(spec: &SynthSpec) -> Result<Dataset> {
    let explanations = synthesize_explanations(spec)?;
    let lexicon = spec.lexicon();
    let vocab = build_vocabulary(&explanations, 20_000, &lexicon)?;
    let mut ds = Dataset::from_explanations(vocab, &explanations, spec.scale, spec.seed)?;
    ds.assign_splits(spec.valid_frac, spec.test_frac);
    Ok(ds)
}
