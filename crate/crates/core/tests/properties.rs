// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::{BTreeMap, BTreeSet};

use kvsmooth_core::metrics::{chair_scores, fbeta, Aggregation, Annotations, Caption, ObjectLexicon};
use kvsmooth_core::smoother::{adaptive_lambda, clip_lambda, EntropyQueue};
use proptest::prelude::*;

const OBJECTS: [&str; 6] = ["dog", "cat", "car", "tree", "cup", "bus"];
const FILLER: [&str; 4] = ["a", "the", "near", "with"];

fn lexicon() -> ObjectLexicon {
    ObjectLexicon::new(OBJECTS.iter().map(|o| (o.to_string(), Vec::new())).collect()).unwrap()
}

fn word() -> impl Strategy<Value = String> {
    prop_oneof![
        prop::sample::select(&OBJECTS[..]).prop_map(str::to_string),
        prop::sample::select(&FILLER[..]).prop_map(str::to_string),
    ]
}

fn images() -> impl Strategy<Value = Vec<(Vec<String>, BTreeSet<String>)>> {
    prop::collection::vec(
        (
            prop::collection::vec(word(), 0..10),
            prop::collection::btree_set(prop::sample::select(&OBJECTS[..]).prop_map(str::to_string), 0..4),
        ),
        1..8,
    )
}

fn build(data: &[(Vec<String>, BTreeSet<String>)]) -> (Vec<Caption>, Annotations) {
    let mut caps = Vec::new();
    let mut ann = BTreeMap::new();
    for (i, (words, gt)) in data.iter().enumerate() {
        caps.push(Caption {
            image_id: i.to_string(),
            caption: words.join(" "),
        });
        ann.insert(i.to_string(), gt.clone());
    }
    (caps, ann)
}

proptest! {
    #[test]
    fn chair_matches_brute_force(data in images()) {
        let (caps, ann) = build(&data);
        let r = chair_scores(&caps, &ann, &lexicon(), Aggregation::Micro).unwrap();
        let (mut hall_img, mut mentions, mut hall_mentions) = (0usize, 0usize, 0usize);
        let (mut extracted, mut correct, mut gt_total) = (0usize, 0usize, 0usize);
        for (words, gt) in &data {
            let ms: Vec<&String> = words.iter().filter(|w| OBJECTS.contains(&w.as_str())).collect();
            let set: BTreeSet<&String> = ms.iter().copied().collect();
            mentions += ms.len();
            hall_mentions += ms.iter().filter(|m| !gt.contains(**m)).count();
            if set.iter().any(|m| !gt.contains(*m)) {
                hall_img += 1;
            }
            extracted += set.len();
            correct += set.iter().filter(|m| gt.contains(**m)).count();
            gt_total += gt.len();
        }
        let pct = |n: usize, d: usize| if d == 0 { 0.0 } else { 100.0 * n as f64 / d as f64 };
        prop_assert_eq!(r.chair_s, pct(hall_img, data.len()));
        prop_assert_eq!(r.chair_i, pct(hall_mentions, mentions));
        prop_assert_eq!(r.precision, pct(correct, extracted));
        prop_assert_eq!(r.recall, pct(correct, gt_total));
        prop_assert!((0.0..=100.0).contains(&r.chair_s));
        prop_assert!((0.0..=100.0).contains(&r.f1));
    }

    #[test]
    fn chair_ignores_caption_order(data in images(), rot in 0usize..8) {
        let (caps, ann) = build(&data);
        let mut shuffled = caps.clone();
        let n = shuffled.len();
        shuffled.rotate_left(rot % n);
        shuffled.reverse();
        for agg in [Aggregation::Micro, Aggregation::Macro] {
            let a = chair_scores(&caps, &ann, &lexicon(), agg).unwrap();
            let b = chair_scores(&shuffled, &ann, &lexicon(), agg).unwrap();
            prop_assert!((a.chair_s - b.chair_s).abs() < 1e-9);
            prop_assert!((a.chair_i - b.chair_i).abs() < 1e-9);
            prop_assert!((a.precision - b.precision).abs() < 1e-9);
            prop_assert!((a.recall - b.recall).abs() < 1e-9);
        }
    }

    #[test]
    fn fbeta_is_bounded_and_monotone(p in 0.01f64..1.0, r in 0.01f64..1.0, dp in 0.0f64..0.5, beta in 0.1f64..3.0) {
        let f = fbeta(p, r, beta);
        prop_assert!(f >= p.min(r) - 1e-12 && f <= p.max(r) + 1e-12);
        let p2 = (p + dp).min(1.0);
        prop_assert!(fbeta(p2, r, beta) >= f - 1e-12);
        prop_assert!(fbeta(r, p2, beta) >= fbeta(r, p, beta) - 1e-12);
    }

    #[test]
    fn queue_rank_matches_brute_force(zs in prop::collection::vec(0.0f64..3.0, 1..60), cap in 1usize..20) {
        let mut q = EntropyQueue::new(1, cap);
        for (i, &z) in zs.iter().enumerate() {
            let k = q.push_and_rank(0, z);
            let window = &zs[(i + 1).saturating_sub(cap)..=i];
            prop_assert_eq!(q.contents(0).collect::<Vec<_>>(), window.to_vec());
            prop_assert_eq!(k, window.iter().filter(|&&v| v < z).count());
            let lh = adaptive_lambda(k, cap).unwrap();
            prop_assert!((0.0..=(cap as f64 - 1.0) / cap as f64).contains(&lh));
        }
    }

    #[test]
    fn clipped_lambda_stays_in_window(lh in 0.0f64..1.0, lref in 0.0f64..1.0, w in 0.0f64..0.5) {
        let lt = clip_lambda(lh, lref, w);
        prop_assert!((0.0..=1.0).contains(&lt));
        prop_assert!(lt >= (lref - w).max(0.0) - 1e-12);
        prop_assert!(lt <= (lref + w).min(1.0) + 1e-12);
        if (lref - w..=lref + w).contains(&lh) {
            prop_assert_eq!(lt, lh);
        }
    }
}
