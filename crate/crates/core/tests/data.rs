use std::collections::HashSet;
use std::path::PathBuf;

use dcdcsr::data::{chronological_split, load_ratings, RatingScale};
use dcdcsr::{RatingDataset, RatingTriple};
use proptest::prelude::*;

fn toy(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/toy").join(name)
}

#[test]
fn toy_files_load() {
    let s = load_ratings(&toy("source.csv"), RatingScale::default()).unwrap();
    let t = load_ratings(&toy("target.csv"), RatingScale::default()).unwrap();
    assert_eq!(s.len(), 400);
    assert_eq!(t.len(), 200);
    assert!(t.triples().iter().all(|r| (1.0..=5.0).contains(&r.rating)));
}

#[test]
fn missing_file_names_the_path() {
    let err = load_ratings(&toy("nope.csv"), RatingScale::default()).unwrap_err();
    assert!(err.to_string().contains("nope.csv"), "{err}");
}

fn arb_dataset() -> impl Strategy<Value = RatingDataset> {
    prop::collection::vec((0u8..8, 0u8..8, 1u8..=5, 0i64..20), 2..60).prop_filter_map("needs two pairs", |rows| {
        let t: Vec<RatingTriple> = rows
            .into_iter()
            .map(|(u, i, r, ts)| RatingTriple::new(format!("u{u}"), format!("i{i}"), r as f64, ts))
            .collect();
        RatingDataset::from_triples(t, RatingScale::default())
            .ok()
            .filter(|d| d.len() >= 2)
    })
}

proptest! {
    #[test]
    fn split_partitions_chronologically(d in arb_dataset(), frac in 0.05f64..0.95) {
        let (train, test) = chronological_split(&d, frac).unwrap();
        prop_assert_eq!(train.len() + test.len(), d.len());
        prop_assert_eq!(train.len(), (frac * d.len() as f64).floor() as usize);
        let key = |r: &RatingTriple| (r.user.clone(), r.item.clone());
        let a: HashSet<_> = train.triples().iter().map(key).collect();
        let b: HashSet<_> = test.triples().iter().map(key).collect();
        prop_assert!(a.is_disjoint(&b));
        let latest = train.triples().iter().map(|r| r.timestamp).max();
        let earliest = test.triples().iter().map(|r| r.timestamp).min();
        if let (Some(l), Some(e)) = (latest, earliest) {
            prop_assert!(l <= e);
        }
        let (train2, test2) = chronological_split(&d, frac).unwrap();
        prop_assert_eq!(train.triples(), train2.triples());
        prop_assert_eq!(test.triples(), test2.triples());
    }
}
