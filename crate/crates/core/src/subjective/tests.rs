use std::collections::BTreeMap;

use super::*;
use crate::miner::Role;
use crate::objectives::LabelSource;

fn rating(subject: &str, image: &str, score: f64) -> RatingRecord {
    RatingRecord {
        subject_id: subject.into(),
        image_id: image.into(),
        score,
        session_id: "s1".into(),
        timestamp: 0,
        training: false,
    }
}

/// Fourteen clean subjects split evenly at `mu +- 10` and one subject who
/// always answers 50, over `low` images at 10, `high` at 90, `mid` at 50.
fn planted(low: usize, high: usize, mid: usize) -> Vec<RatingRecord> {
    let mut out = Vec::new();
    let groups = [(low, 10.0, "lo"), (high, 90.0, "hi"), (mid, 50.0, "mid")];
    for (count, mu, tag) in groups {
        for i in 0..count {
            let image = format!("{tag}{i}");
            for s in 0..14 {
                let score = if s % 2 == 0 { mu + 10.0 } else { mu - 10.0 };
                out.push(rating(&format!("c{s:02}"), &image, score));
            }
            out.push(rating("planted", &image, 50.0));
        }
    }
    out
}

fn verdict<'a>(s: &'a Screening, id: &str) -> &'a SubjectVerdict {
    s.verdicts.iter().find(|v| v.subject_id == id).unwrap()
}

#[test]
fn planted_subject_balanced_outliers_is_rejected() {
    let s = screen_outliers(&planted(4, 4, 4)).unwrap();
    let v = verdict(&s, "planted");
    assert_eq!((v.above, v.below, v.ratings), (4, 4, 12));
    assert!(v.rejected);
    assert_eq!(s.rejected.len(), 12);
    assert!(s.outliers.is_empty());
    assert!(s.verdicts.iter().filter(|v| v.subject_id != "planted").all(|v| !v.rejected && v.above + v.below == 0));
}

#[test]
fn planted_subject_unbalanced_outliers_is_kept() {
    // P = 2, Q = 4: |P - Q| / (P + Q) = 1/3 is not below 0.3.
    let s = screen_outliers(&planted(2, 4, 4)).unwrap();
    let v = verdict(&s, "planted");
    assert_eq!((v.above, v.below, v.ratings), (2, 4, 10));
    assert!(!v.rejected);
    assert_eq!(s.outliers.len(), 6);
    assert!(s.outliers.iter().all(|r| r.subject_id == "planted" && !r.image_id.starts_with("mid")));
    assert!(s.rejected.is_empty());
}

#[test]
fn identical_ratings_have_no_outliers() {
    let r: Vec<_> = (0..5).map(|s| rating(&format!("s{s}"), "a", 42.0)).collect();
    let s = screen_outliers(&r).unwrap();
    assert_eq!(s.kept.len(), 5);
    assert_eq!(s.outlier_fraction, 0.0);
}

#[test]
fn screening_input_errors() {
    let r = vec![rating("a", "x", 10.0), rating("b", "x", 20.0)];
    assert!(matches!(screen_outliers(&r), Err(crate::Error::Insufficient(_))));
    let dup = vec![rating("a", "x", 10.0), rating("a", "x", 20.0), rating("b", "x", 20.0)];
    assert!(screen_outliers(&dup).is_err());
    let out_of_range = vec![rating("a", "x", 101.0), rating("b", "x", 20.0), rating("c", "x", 20.0)];
    assert!(screen_outliers(&out_of_range).is_err());
}

#[test]
fn training_ratings_are_ignored() {
    let mut r: Vec<_> = (0..3).map(|s| rating(&format!("s{s}"), "a", 40.0)).collect();
    let mut t = rating("s0", "warmup", 90.0);
    t.training = true;
    r.push(t);
    let s = screen_outliers(&r).unwrap();
    assert_eq!(s.kept.len(), 3);
    assert!(s.kept.iter().all(|k| !k.training));
}

#[test]
fn screening_is_a_fixed_point_on_clean_sets() {
    let r: Vec<_> = (0..6)
        .flat_map(|i| (0..8).map(move |s| rating(&format!("s{s}"), &format!("i{i}"), 30.0 + i as f64 * 5.0 + (s % 4) as f64)))
        .collect();
    let first = screen_outliers(&r).unwrap();
    assert_eq!(first.kept.len(), r.len());
    let second = screen_outliers(&first.kept).unwrap();
    assert_eq!(second.kept, first.kept);
}

#[test]
fn mos_arithmetic() {
    let t = compute_mos(&[rating("a", "x", 40.0), rating("b", "x", 60.0), rating("a", "y", 70.0)], &[]);
    let x = &t.records["x"];
    assert_eq!(x.mos, 50.0);
    assert!((x.std - 200f64.sqrt()).abs() < 1e-12);
    let y = &t.records["y"];
    assert_eq!((y.mos, y.std, y.n_valid), (70.0, 0.0, 1));
    let swapped = compute_mos(&[rating("b", "x", 60.0), rating("a", "x", 40.0)], &[]);
    assert_eq!(swapped.records["x"], MosRecord { n_valid: 2, ..x.clone() });
}

#[test]
fn fully_removed_images_are_reported() {
    let t = compute_mos(&[rating("a", "x", 40.0)], &[rating("b", "x", 0.0), rating("b", "z", 1.0)]);
    assert_eq!(t.records["x"].n_rejected, 1);
    assert_eq!(t.exclusions, ["z"]);
}

fn mos(id: &str, mos: f64, std: f64) -> (String, MosRecord) {
    (
        id.to_string(),
        MosRecord { image_id: id.into(), mos, std, n_valid: 10, n_rejected: 0 },
    )
}

#[test]
fn label_examples() {
    let table: BTreeMap<_, _> = [mos("a", 60.0, 3.0), mos("b", 56.0, 0.0), mos("c", 60.0, 4.0), mos("d", 70.0, 0.0), mos("e", 20.0, 0.0)]
        .into_iter()
        .collect();
    let src = LabelSource::Gmad { round: 1 };
    let l = label_pairs([("a", "c"), ("c", "b"), ("d", "e"), ("e", "d")], &table, src).unwrap();
    assert_eq!(l[0].p, 0.5);
    assert!((l[1].p - 0.841_344_746_068_542_9).abs() < 1e-12);
    assert_eq!(l[2].p, 1.0);
    assert_eq!(l[3].p, 0.0);
    assert!(matches!(label_pairs([("a", "zz")], &table, src), Err(crate::Error::MissingMos(_))));
}

#[test]
fn case_bands() {
    let t = CaseThresholds::default();
    assert_eq!(classify_case(0.95, Role::Defender, t).case, Case::I);
    assert_eq!(classify_case(0.5, Role::Attacker, t).case, Case::V);
    assert_eq!(classify_case(0.05, Role::Defender, t).case, Case::III);
    assert_eq!(classify_case(0.8, Role::Defender, t).case, Case::II);
    assert_eq!(classify_case(0.2, Role::Attacker, t).case, Case::V);
    assert_eq!(classify_case(0.81, Role::Attacker, t).case, Case::IV);
    assert_eq!(classify_case(0.19, Role::Attacker, t).case, Case::VI);
}

#[test]
fn augmentation_counts_and_antisymmetry() {
    let table: BTreeMap<_, _> = (0..8).map(|i| mos(&format!("g{i}"), 10.0 * i as f64, 1.0 + i as f64)).collect();
    let src = LabelSource::Gmad { round: 2 };
    let ids: Vec<String> = table.keys().cloned().collect();
    for m in 1..=4 {
        let aug = augment_d3(&ids[..2 * m], &table, src).unwrap();
        assert_eq!(aug.len(), m * (2 * m - 1));
        for l in &aug {
            let back = label_pairs([(l.y.as_str(), l.x.as_str())], &table, src).unwrap();
            assert!((l.p + back[0].p - 1.0).abs() < 1e-12);
            assert!((0.0..=1.0).contains(&l.p));
        }
    }
    assert!(augment_d3(&ids[..1], &table, src).is_err());
    assert!(augment_d3(&[ids[0].clone(), ids[0].clone()], &table, src).is_err());
}

#[test]
fn histogram_examples() {
    let h = p_histogram(&[0.5; 7]).unwrap();
    assert_eq!(h.counts.iter().filter(|&&c| c > 0).count(), 1);
    assert_eq!(h.counts[5], 7);
    let h = p_histogram(&[0.0, 1.0, 0.95, 0.1]).unwrap();
    assert_eq!(h.counts[0], 1);
    assert_eq!(h.counts[9], 2);
    assert_eq!(h.counts[1], 1);
    assert_eq!(h.total(), 4);
    assert!(p_histogram(&[]).is_err());
}
