use std::collections::BTreeSet;

use proptest::prelude::*;
use saer::corpus::*;

fn dataset_from_edges(edges: &[(u8, u8, u8)]) -> Option<Dataset> {
    let exs: Vec<Explanation> = edges
        .iter()
        .map(|(u, i, r)| Explanation {
            user: format!("u{u}"),
            item: format!("i{i}"),
            rating: f64::from(r % 5 + 1),
            tokens: vec!["the".into(), "crust".into(), "is".into(), "ok".into()],
        })
        .collect();
    if exs.is_empty() {
        return None;
    }
    let lex = Lexicon::from_words(["crust"]);
    let vocab = build_vocabulary(&exs, 100, &lex).ok()?;
    Dataset::from_explanations(vocab, &exs, RatingScale::default(), 3).ok()
}

fn edge_set(ds: &Dataset) -> BTreeSet<(String, String)> {
    ds.interactions
        .iter()
        .map(|x| (ds.users[x.user].clone(), ds.items[x.item].clone()))
        .collect()
}

proptest! {
    #[test]
    fn filter_output_is_a_fixed_point(
        edges in prop::collection::vec((0u8..8, 0u8..8, 0u8..5), 1..60),
        mu in 1usize..4,
        mi in 1usize..4,
    ) {
        let ds = dataset_from_edges(&edges).unwrap();
        match recursive_filter(&ds, mu, mi) {
            Ok(f) => {
                let g = recursive_filter(&f, mu, mi).unwrap();
                prop_assert_eq!(edge_set(&f), edge_set(&g));
                let mut uc = vec![0; f.n_users()];
                let mut ic = vec![0; f.n_items()];
                for x in &f.interactions { uc[x.user] += 1; ic[x.item] += 1; }
                prop_assert!(uc.iter().all(|&c| c >= mu));
                prop_assert!(ic.iter().all(|&c| c >= mi));
            }
            Err(e) => prop_assert!(e.to_string().contains("filtering removed all data")),
        }
    }

    #[test]
    fn preference_pairs_are_strict_and_antisymmetric(
        edges in prop::collection::vec((0u8..4, 0u8..10, 0u8..5), 1..60),
    ) {
        let ds = dataset_from_edges(&edges).unwrap();
        let rating = |u: usize, i: usize| {
            ds.interactions.iter().filter(|x| x.user == u && x.item == i).map(|x| x.rating).collect::<Vec<_>>()
        };
        for (u, pairs) in ds.preference_pairs.iter().enumerate() {
            let set: BTreeSet<_> = pairs.iter().copied().collect();
            for &(i, j) in pairs {
                prop_assert!(!set.contains(&(j, i)) || rating(u, i).len() > 1 || rating(u, j).len() > 1);
                prop_assert!(rating(u, i).iter().any(|ri| rating(u, j).iter().any(|rj| ri > rj)));
            }
        }
    }

    #[test]
    fn attributes_are_tokens_intersect_lexicon(seed in 0u64..50) {
        let spec = SynthSpec { n_users: 6, n_items: 5, n_interactions: 20, seed, ..SynthSpec::default() };
        let ds = synthesize_corpus(&spec).unwrap();
        let lex = spec.lexicon();
        for x in &ds.interactions {
            let want: BTreeSet<usize> = x.explanation.iter().copied()
                .filter(|&t| lex.contains(ds.vocab.token(t))).collect();
            prop_assert_eq!(x.attributes.iter().copied().collect::<BTreeSet<_>>(), want);
            prop_assert!(!x.attributes.is_empty());
        }
        for i in 0..ds.n_items() {
            let has_train = ds.interactions.iter().zip(&ds.splits)
                .any(|(x, s)| x.item == i && *s == Split::Train);
            prop_assert_eq!(has_train, !ds.item_attributes[i].is_empty());
        }
    }

    #[test]
    fn vocabulary_round_trips(words in prop::collection::vec("[a-e]{1,3}", 1..40)) {
        let ex = Explanation { user: "u".into(), item: "i".into(), rating: 3.0, tokens: words };
        let v = build_vocabulary(&[ex], 8, &Lexicon::default()).unwrap();
        for i in 0..v.len() {
            prop_assert_eq!(v.id(v.token(i)), i);
        }
        prop_assert_eq!(v.id("zzzz"), UNK);
        prop_assert!(v.len() <= 8 + 4);
    }
}

#[test]
fn distinct_users_keep_pairs_separate() {
    let ds = dataset_from_edges(&[(0, 0, 4), (0, 1, 0), (1, 0, 0), (1, 1, 4)]).unwrap();
    assert_eq!(ds.preference_pairs[0], vec![(0, 1)]);
    assert_eq!(ds.preference_pairs[1], vec![(1, 0)]);
}
