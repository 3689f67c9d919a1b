mod common;

use std::collections::HashSet;

use fusionkit::ensemble::{majority_vote, nll, ClassDistribution, NUM_CLASSES};
use fusionkit::fusion::{FusionStrategy, Majority};
use fusionkit::harness::{confusion, report, split, SplitSpec};
use fusionkit::{Error, PredictionLog};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

fn sessions_of(log: &PredictionLog) -> HashSet<String> {
    log.records.iter().map(|r| r.session_id.clone()).collect()
}

#[test]
fn prediction_log_roundtrip_is_lossless() {
    let log = common::strong_plus_noise(1000, 4);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("log.tsv");
    log.save(&path).unwrap();
    assert_eq!(PredictionLog::load(&path).unwrap(), log);
}

#[test]
fn session_split_holds_out_whole_sessions() {
    let mut rng = common::rng(1);
    let log = common::strong_plus_noise(2000, 2);
    let mut names: Vec<String> = sessions_of(&log).into_iter().collect();
    names.sort();
    names.shuffle(&mut rng);
    let held: Vec<String> = names[..5].to_vec();
    let (train, test) = split(&log, &SplitSpec::BySession { test_sessions: held.clone() }).unwrap();
    assert_eq!(sessions_of(&test), held.iter().cloned().collect());
    assert!(sessions_of(&train).is_disjoint(&sessions_of(&test)));
    assert_eq!(train.len() + test.len(), log.len());
}

#[test]
fn unknown_session_is_an_error() {
    let log = common::strong_plus_noise(40, 2);
    let err = split(&log, &SplitSpec::BySession { test_sessions: vec!["nope".into()] }).unwrap_err();
    assert!(matches!(err, Error::UnknownSession(_)));
}

#[test]
fn random_split_sizes_and_order() {
    let log = common::strong_plus_noise(101, 3);
    let (train, test) = split(&log, &"random:0.25:9".parse().unwrap()).unwrap();
    assert_eq!(test.len(), 25);
    assert_eq!(train.len(), 76);
    let pos = |id: &str| log.records.iter().position(|r| r.frame_id == id).unwrap();
    for half in [&train, &test] {
        let idx: Vec<usize> = half.records.iter().map(|r| pos(&r.frame_id)).collect();
        assert!(idx.windows(2).all(|w| w[0] < w[1]));
    }
}

#[test]
fn confusion_matches_counting_oracle() {
    let mut rng = common::rng(5);
    let preds: Vec<ClassDistribution> = (0..700).map(|_| common::random_distribution(&mut rng)).collect();
    let truths: Vec<usize> = (0..700).map(|_| rng.gen_range(0..NUM_CLASSES)).collect();
    let cm = confusion(&preds, &truths).unwrap();
    let mut counts = [[0u64; NUM_CLASSES]; NUM_CLASSES];
    for (p, &t) in preds.iter().zip(&truths) {
        counts[t][p.argmax()] += 1;
    }
    for t in 0..NUM_CLASSES {
        for p in 0..NUM_CLASSES {
            assert_eq!(cm.counts[t][p], counts[t][p]);
        }
    }
    assert_eq!(cm.total(), 700);
}

#[test]
fn empty_rows_are_flagged() {
    let preds = vec![ClassDistribution::one_hot(2); 3];
    let cm = confusion(&preds, &[2, 2, 1]).unwrap();
    assert!(cm.empty_rows.contains(&0));
    assert!(!cm.empty_rows.contains(&2));
    assert!(cm.row_percent[0].iter().all(|v| *v == 0.0));
}

#[test]
fn report_rows_match_direct_metrics() {
    let log = common::strong_plus_noise(400, 6);
    let (train, test) = split(&log, &"random:0.25:1".parse().unwrap()).unwrap();
    let rep = report(&train, &test, &Majority).unwrap();
    // per split: one row per classifier, then the fused row
    assert_eq!(rep.rows.len(), 2 * (log.num_classifiers() + 1));
    for (rows, half) in rep.rows.chunks(log.num_classifiers() + 1).zip([&train, &test]) {
        for (k, row) in rows[..log.num_classifiers()].iter().enumerate() {
            assert_eq!(row.model, log.classifiers[k]);
            assert!((row.nll - nll(&half.column(k), &half.truths()).unwrap()).abs() < 1e-12);
        }
        let fused_row = rows.last().unwrap();
        let fused: Vec<_> = half.records.iter().map(|r| majority_vote(&r.outputs).unwrap()).collect();
        assert_eq!(fused_row.model, "fused:majority");
        assert_eq!(fused_row.samples, half.len());
        assert!((fused_row.nll - nll(&fused, &half.truths()).unwrap()).abs() < 1e-12);
    }
    let dir = tempfile::tempdir().unwrap();
    rep.write_to(dir.path()).unwrap();
    for f in ["metrics.csv", "confusion.csv", "report.txt"] {
        assert!(dir.path().join(f).exists());
    }
    assert_eq!(Majority.name(), "majority");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn session_splits_never_overlap(seed in any::<u64>(), k in 1usize..20) {
        let mut rng = common::rng(seed);
        let log = common::strong_plus_noise(300, seed);
        let mut names: Vec<String> = sessions_of(&log).into_iter().collect();
        names.sort();
        names.shuffle(&mut rng);
        let (train, test) = split(&log, &SplitSpec::BySession { test_sessions: names[..k].to_vec() }).unwrap();
        prop_assert!(sessions_of(&train).is_disjoint(&sessions_of(&test)));
        prop_assert_eq!(train.len() + test.len(), log.len());
    }

    #[test]
    fn confusion_rows_sum_to_hundred(seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let preds: Vec<ClassDistribution> = (0..200).map(|_| common::random_distribution(&mut rng)).collect();
        let truths: Vec<usize> = (0..200).map(|_| rng.gen_range(0..NUM_CLASSES)).collect();
        let cm = confusion(&preds, &truths).unwrap();
        for (t, row) in cm.row_percent.iter().enumerate() {
            if !cm.empty_rows.contains(&t) {
                prop_assert!((row.iter().sum::<f64>() - 100.0).abs() < 0.01);
            }
        }
    }
}
