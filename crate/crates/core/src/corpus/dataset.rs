use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::text::{Explanation, Lexicon, RatingScale};
use super::vocab::Vocabulary;
use crate::error::{Error, Result};
use crate::rng;

/// One (user, item, rating, explanation) record with dense indices.
#[derive(Clone, Debug, PartialEq)]
pub struct Interaction {
    pub user: usize,
    pub item: usize,
    pub rating: f64,
    pub explanation: Vec<usize>,
    /// Sorted attribute ids occurring in `explanation`.
    pub attributes: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Meta {
    r_min: f64,
    r_max: f64,
    max_pairs_per_user: usize,
    seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub vocab: Vocabulary,
    pub scale: RatingScale,
    pub users: Vec<String>,
    pub items: Vec<String>,
    pub interactions: Vec<Interaction>,
    pub splits: Vec<Split>,
    /// Per item: sorted union of attribute ids over its train interactions.
    pub item_attributes: Vec<Vec<usize>>,
    /// Per user: strict preference pairs `(i, j)` with `r_ui > r_uj` in train.
    pub preference_pairs: Vec<Vec<(usize, usize)>>,
    pub max_pairs_per_user: usize,
    pub seed: u64,
}

pub const DEFAULT_MAX_PAIRS: usize = 200;

impl Dataset {
    /// Maps explanations to ids and indexes users/items in first-seen order.
    /// Records whose explanation keeps no attribute after vocabulary mapping
    /// are dropped. Every interaction starts in the train split.
    pub fn from_explanations(
        vocab: Vocabulary,
        explanations: &[Explanation],
        scale: RatingScale,
        seed: u64,
    ) -> Result<Self> {
        let mut users = Vec::new();
        let mut items = Vec::new();
        let mut uidx: HashMap<String, usize> = HashMap::new();
        let mut iidx: HashMap<String, usize> = HashMap::new();
        let mut interactions = Vec::new();
        for e in explanations {
            if !scale.contains(e.rating) {
                return Err(Error::RatingOutOfRange {
                    line: 0,
                    user: e.user.clone(),
                    item: e.item.clone(),
                    rating: e.rating,
                    min: scale.min,
                    max: scale.max,
                });
            }
            let explanation = vocab.encode(&e.tokens);
            let attributes = attributes_of(&vocab, &explanation);
            if explanation.is_empty() || attributes.is_empty() {
                continue;
            }
            let user = *uidx.entry(e.user.clone()).or_insert_with(|| {
                users.push(e.user.clone());
                users.len() - 1
            });
            let item = *iidx.entry(e.item.clone()).or_insert_with(|| {
                items.push(e.item.clone());
                items.len() - 1
            });
            interactions.push(Interaction {
                user,
                item,
                rating: e.rating,
                explanation,
                attributes,
            });
        }
        if interactions.is_empty() {
            return Err(Error::Empty("interactions after vocabulary mapping"));
        }
        let splits = vec![Split::Train; interactions.len()];
        let mut ds = Dataset {
            vocab,
            scale,
            users,
            items,
            interactions,
            splits,
            item_attributes: Vec::new(),
            preference_pairs: Vec::new(),
            max_pairs_per_user: DEFAULT_MAX_PAIRS,
            seed,
        };
        ds.refresh();
        Ok(ds)
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.interactions.len())
            .filter(|&k| self.splits[k] == split)
            .collect()
    }

    pub fn split_interactions(&self, split: Split) -> Vec<&Interaction> {
        self.interactions
            .iter()
            .zip(&self.splits)
            .filter(|(_, s)| **s == split)
            .map(|(x, _)| x)
            .collect()
    }

    /// Seeded random 8/1/1 assignment by interaction.
    pub fn assign_splits(&mut self, valid_frac: f64, test_frac: f64) {
        let mut r = rng::stream(self.seed, &[0x5eed_5b17]);
        for s in self.splits.iter_mut() {
            let u: f64 = r.random();
            *s = if u < test_frac {
                Split::Test
            } else if u < test_frac + valid_frac {
                Split::Valid
            } else {
                Split::Train
            };
        }
        self.refresh();
    }

    /// Recomputes item attribute sets and preference pairs from the train split.
    pub fn refresh(&mut self) {
        let mut attrs = vec![BTreeSet::new(); self.items.len()];
        for (x, s) in self.interactions.iter().zip(&self.splits) {
            if *s == Split::Train {
                attrs[x.item].extend(x.attributes.iter().copied());
            }
        }
        self.item_attributes = attrs.into_iter().map(|s| s.into_iter().collect()).collect();
        self.preference_pairs = build_preference_pairs(self, self.max_pairs_per_user);
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.vocab.save(&dir.join("vocab.txt"))?;
        let lex: Vec<String> = self.vocab.lexicon().0.into_iter().collect();
        std::fs::write(dir.join("attributes.txt"), lex.join("\n") + "\n")?;
        let mut rows = String::new();
        let mut manifest = String::new();
        for (x, s) in self.interactions.iter().zip(&self.splits) {
            let ids: Vec<String> = x.explanation.iter().map(|t| t.to_string()).collect();
            rows.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                self.users[x.user],
                self.items[x.item],
                x.rating,
                ids.join(" ")
            ));
            manifest.push_str(&format!("{s}\n"));
        }
        std::fs::write(dir.join("interactions.tsv"), rows)?;
        std::fs::write(dir.join("splits.txt"), manifest)?;
        let meta = Meta {
            r_min: self.scale.min,
            r_max: self.scale.max,
            max_pairs_per_user: self.max_pairs_per_user,
            seed: self.seed,
        };
        std::fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&meta)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta: Meta = serde_json::from_str(&std::fs::read_to_string(dir.join("meta.json"))?)?;
        let lexicon = Lexicon::load(&dir.join("attributes.txt"))?;
        let vocab = Vocabulary::load(&dir.join("vocab.txt"), &lexicon)?;
        let tsv_path = dir.join("interactions.tsv");
        let tsv = std::fs::read_to_string(&tsv_path)?;
        let manifest = std::fs::read_to_string(dir.join("splits.txt"))?;
        let bad = |line: usize, msg: &str| Error::Parse {
            path: tsv_path.clone(),
            line,
            msg: msg.to_string(),
        };
        let mut users = Vec::new();
        let mut items = Vec::new();
        let mut uidx: HashMap<String, usize> = HashMap::new();
        let mut iidx: HashMap<String, usize> = HashMap::new();
        let mut interactions = Vec::new();
        for (n, line) in tsv.lines().enumerate() {
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 4 {
                return Err(bad(n + 1, "expected 4 tab-separated columns"));
            }
            let rating: f64 = cols[2].parse().map_err(|_| bad(n + 1, "bad rating"))?;
            let explanation = cols[3]
                .split(' ')
                .filter(|s| !s.is_empty())
                .map(|s| s.parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| bad(n + 1, "bad token id"))?;
            if explanation.iter().any(|&t| t >= vocab.len()) {
                return Err(bad(n + 1, "token id outside vocabulary"));
            }
            let user = *uidx.entry(cols[0].to_string()).or_insert_with(|| {
                users.push(cols[0].to_string());
                users.len() - 1
            });
            let item = *iidx.entry(cols[1].to_string()).or_insert_with(|| {
                items.push(cols[1].to_string());
                items.len() - 1
            });
            let attributes = attributes_of(&vocab, &explanation);
            interactions.push(Interaction {
                user,
                item,
                rating,
                explanation,
                attributes,
            });
        }
        let splits = manifest
            .lines()
            .map(Split::from_str)
            .collect::<Result<Vec<_>>>()?;
        if splits.len() != interactions.len() {
            return Err(Error::Config(format!(
                "split manifest has {} lines for {} interactions",
                splits.len(),
                interactions.len()
            )));
        }
        let mut ds = Dataset {
            vocab,
            scale: RatingScale::new(meta.r_min, meta.r_max),
            users,
            items,
            interactions,
            splits,
            item_attributes: Vec::new(),
            preference_pairs: Vec::new(),
            max_pairs_per_user: meta.max_pairs_per_user,
            seed: meta.seed,
        };
        ds.refresh();
        Ok(ds)
    }
}

pub fn attributes_of(vocab: &Vocabulary, tokens: &[usize]) -> Vec<usize> {
    tokens
        .iter()
        .filter(|t| vocab.is_attribute(**t))
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

/// Removes users with fewer than `min_user` and items with fewer than
/// `min_item` interactions until nothing changes, then reindexes.
pub fn recursive_filter(ds: &Dataset, min_user: usize, min_item: usize) -> Result<Dataset> {
    if min_user == 0 || min_item == 0 {
        return Err(Error::Config("filter thresholds must be at least 1".into()));
    }
    let mut alive = vec![true; ds.interactions.len()];
    loop {
        let mut ucount = vec![0usize; ds.users.len()];
        let mut icount = vec![0usize; ds.items.len()];
        for (x, a) in ds.interactions.iter().zip(&alive) {
            if *a {
                ucount[x.user] += 1;
                icount[x.item] += 1;
            }
        }
        let mut changed = false;
        for (x, a) in ds.interactions.iter().zip(alive.iter_mut()) {
            if *a && (ucount[x.user] < min_user || icount[x.item] < min_item) {
                *a = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    if !alive.iter().any(|a| *a) {
        return Err(Error::FilteredEmpty);
    }
    let mut umap = vec![usize::MAX; ds.users.len()];
    let mut imap = vec![usize::MAX; ds.items.len()];
    let mut users = Vec::new();
    let mut items = Vec::new();
    let mut interactions = Vec::new();
    let mut splits = Vec::new();
    for ((x, s), a) in ds.interactions.iter().zip(&ds.splits).zip(&alive) {
        if !*a {
            continue;
        }
        if umap[x.user] == usize::MAX {
            umap[x.user] = users.len();
            users.push(ds.users[x.user].clone());
        }
        if imap[x.item] == usize::MAX {
            imap[x.item] = items.len();
            items.push(ds.items[x.item].clone());
        }
        interactions.push(Interaction {
            user: umap[x.user],
            item: imap[x.item],
            ..x.clone()
        });
        splits.push(*s);
    }
    let mut out = Dataset {
        vocab: ds.vocab.clone(),
        scale: ds.scale,
        users,
        items,
        interactions,
        splits,
        item_attributes: Vec::new(),
        preference_pairs: Vec::new(),
        max_pairs_per_user: ds.max_pairs_per_user,
        seed: ds.seed,
    };
    out.refresh();
    Ok(out)
}

/// All strict-preference pairs per user over the train split, subsampled
/// uniformly (seeded per user) to at most `max_pairs_per_user`.
pub fn build_preference_pairs(ds: &Dataset, max_pairs_per_user: usize) -> Vec<Vec<(usize, usize)>> {
    let mut rated: Vec<Vec<(usize, f64)>> = vec![Vec::new(); ds.users.len()];
    for (x, s) in ds.interactions.iter().zip(&ds.splits) {
        if *s == Split::Train {
            rated[x.user].push((x.item, x.rating));
        }
    }
    rated
        .iter()
        .enumerate()
        .map(|(u, rs)| {
            let mut set = BTreeSet::new();
            for &(i, ri) in rs {
                for &(j, rj) in rs {
                    if ri > rj && i != j {
                        set.insert((i, j));
                    }
                }
            }
            let all: Vec<(usize, usize)> = set.into_iter().collect();
            if all.len() <= max_pairs_per_user {
                return all;
            }
            let mut r = rng::stream(ds.seed, &[0xba1f, u as u64]);
            let mut keep = sample(&mut r, all.len(), max_pairs_per_user).into_vec();
            keep.sort_unstable();
            keep.into_iter().map(|k| all[k]).collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::vocab::build_vocabulary;

    fn ex(u: &str, i: &str, r: f64, text: &str) -> Explanation {
        Explanation {
            user: u.into(),
            item: i.into(),
            rating: r,
            tokens: text.split(' ').map(String::from).collect(),
        }
    }

    fn dataset(rows: &[(&str, &str, f64)]) -> Dataset {
        let exs: Vec<Explanation> = rows
            .iter()
            .map(|(u, i, r)| ex(u, i, *r, "the crust is good"))
            .collect();
        let lex = Lexicon::from_words(["crust"]);
        let vocab = build_vocabulary(&exs, 100, &lex).unwrap();
        Dataset::from_explanations(vocab, &exs, RatingScale::default(), 7).unwrap()
    }

    fn edges(ds: &Dataset) -> BTreeSet<(String, String)> {
        ds.interactions
            .iter()
            .map(|x| (ds.users[x.user].clone(), ds.items[x.item].clone()))
            .collect()
    }

    #[test]
    fn filter_removes_sparse_user() {
        let ds = dataset(&[
            ("u1", "i1", 3.0),
            ("u1", "i2", 3.0),
            ("u2", "i1", 3.0),
            ("u2", "i2", 3.0),
            ("u3", "i1", 3.0),
        ]);
        let f = recursive_filter(&ds, 2, 2).unwrap();
        assert_eq!(f.interactions.len(), 4);
        assert!(!f.users.contains(&"u3".to_string()));
        // fixed point
        let g = recursive_filter(&f, 2, 2).unwrap();
        assert_eq!(edges(&f), edges(&g));
    }

    #[test]
    fn filter_is_identity_when_thresholds_met() {
        let ds = dataset(&[("u1", "i1", 3.0), ("u2", "i2", 4.0)]);
        let f = recursive_filter(&ds, 1, 1).unwrap();
        assert_eq!(f, ds);
    }

    #[test]
    fn filter_cascades_and_can_empty() {
        // u1-i1, u1-i2, u2-i2: min 2/2 removes u2, then i1/i2 drop below 2.
        let ds = dataset(&[("u1", "i1", 3.0), ("u1", "i2", 3.0), ("u2", "i2", 3.0)]);
        assert!(matches!(recursive_filter(&ds, 2, 2), Err(Error::FilteredEmpty)));
    }

    #[test]
    fn pairs_exclude_ties() {
        let ds = dataset(&[("u", "i", 5.0), ("u", "j", 3.0), ("u", "k", 3.0)]);
        let (i, j, k) = (0, 1, 2);
        assert_eq!(ds.preference_pairs[0], vec![(i, j), (i, k)]);
    }

    #[test]
    fn equal_ratings_give_no_pairs() {
        let ds = dataset(&[("u", "i", 4.0), ("u", "j", 4.0)]);
        assert!(ds.preference_pairs[0].is_empty());
    }

    #[test]
    fn pair_subsampling_is_seeded() {
        // 5 distinct ratings → 10 strict pairs
        let rows: Vec<(&str, &str, f64)> = vec![
            ("u", "a", 1.0),
            ("u", "b", 2.0),
            ("u", "c", 3.0),
            ("u", "d", 4.0),
            ("u", "e", 5.0),
        ];
        let ds = dataset(&rows);
        assert_eq!(ds.preference_pairs[0].len(), 10);
        let a = build_preference_pairs(&ds, 4);
        let b = build_preference_pairs(&ds, 4);
        assert_eq!(a, b);
        assert_eq!(a[0].len(), 4);
        assert!(a[0].iter().all(|p| ds.preference_pairs[0].contains(p)));
    }

    #[test]
    fn save_and_load_round_trip() {
        let mut ds = dataset(&[("u1", "i1", 3.5), ("u2", "i1", 4.0), ("u2", "i2", 1.0)]);
        ds.assign_splits(0.3, 0.3);
        let dir = tempfile::tempdir().unwrap();
        ds.save(dir.path()).unwrap();
        let back = Dataset::load(dir.path()).unwrap();
        assert_eq!(back, ds);
    }
}
