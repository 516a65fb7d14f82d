use proptest::prelude::*;
use umt_core::decoding::{
    compose_moments, extract_centers, read_predictions, roundtrip, write_predictions, CenterMode, MomentPrediction,
    PredictionRecord,
};
use umt_core::features_io::MomentAnnotation;
use umt_core::losses::{build_targets, LossWeights};

fn targets_for(moments: &[(f64, f64)], n: usize) -> umt_core::losses::TargetSet {
    let anns: Vec<_> = moments.iter().map(|&(center, window)| MomentAnnotation { center, window }).collect();
    build_targets(&anns, &vec![0.0; n], n, &LossWeights::default()).unwrap()
}

/// Recovered `(center, window)` pairs sorted by center.
fn recovered(preds: &[MomentPrediction]) -> Vec<(f64, f64)> {
    let mut v: Vec<_> = preds.iter().map(|p| (p.center(), p.length())).collect();
    v.sort_by(|a, b| a.0.total_cmp(&b.0));
    v
}

#[test]
fn extraction_examples() {
    let h = [0.1, 0.9, 0.1, 0.8, 0.2];
    assert_eq!(extract_centers(&h, CenterMode::LocalMaxima, 2).unwrap(), vec![1, 3]);
    assert_eq!(extract_centers(&h, CenterMode::AllClips, 3).unwrap(), vec![1, 3, 4]);
    assert_eq!(extract_centers(&[0.4; 7], CenterMode::AllClips, 7).unwrap(), (0..7).collect::<Vec<_>>());
    // plateaus count as maxima at every clip, lower index first
    assert_eq!(extract_centers(&[0.2, 0.5, 0.5, 0.1], CenterMode::LocalMaxima, 5).unwrap(), vec![1, 2]);
    assert!(extract_centers(&h, CenterMode::AllClips, 0).is_err());
}

#[test]
fn roundtrip_single_moment() {
    let t = targets_for(&[(5.3, 6.0)], 16);
    let got = recovered(&roundtrip(&t).unwrap());
    assert_eq!(got.len(), 1);
    assert!((got[0].0 - 5.3).abs() < 1e-9);
    assert!((got[0].1 - 6.0).abs() < 1e-9);
}

#[test]
fn roundtrip_two_moments() {
    let t = targets_for(&[(3.2, 4.0), (10.6, 5.0)], 16);
    let got = recovered(&roundtrip(&t).unwrap());
    assert_eq!(got.len(), 2);
    assert!((got[0].0 - 3.2).abs() < 1e-9 && (got[0].1 - 4.0).abs() < 1e-9);
    assert!((got[1].0 - 10.6).abs() < 1e-9 && (got[1].1 - 5.0).abs() < 1e-9);
}

#[test]
fn composition_in_seconds_clips_to_video() {
    let heat = [0.2, 0.9, 0.1, 0.7];
    let win = [1.0, 3.0, 1.0, 4.0];
    let off = [0.0, 0.5, 0.0, 0.25];
    let m = compose_moments(&[3, 1], &heat, &win, &off, 2.0).unwrap();
    assert_eq!(m.len(), 2);
    // highest confidence first; center 1.5 clips, span 3 clips, at 2 s per clip
    assert_eq!((m[0].start, m[0].end, m[0].confidence), (0.0, 6.0, 0.9));
    // center 3.25, span 4 would run past 8 s
    assert_eq!((m[1].start, m[1].end), (2.5, 8.0));
    assert!(compose_moments(&[4], &heat, &win, &off, 1.0).is_err());
    assert!(compose_moments(&[0], &heat, &win[..2], &off, 1.0).is_err());
    // nonpositive windows produce no moment
    assert!(compose_moments(&[0], &heat, &[-1.0, 0.0, 0.0, 0.0], &off, 1.0).unwrap().is_empty());
}

#[test]
fn prediction_dump_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("preds.jsonl");
    let recs = vec![
        PredictionRecord::new(
            "a",
            &[MomentPrediction { start: 0.1, end: 2.0 / 3.0, confidence: 0.3 }],
            &[0.1, 0.7],
        ),
        PredictionRecord::new("b", &[], &[0.5]),
    ];
    write_predictions(&path, &recs).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert_eq!(read_predictions(&path).unwrap(), recs);
    std::fs::write(&path, "{not json}\n").unwrap();
    assert!(read_predictions(&path).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]
    #[test]
    fn local_maxima_are_an_ordered_subset(h in prop::collection::vec(0.0f64..1.0, 1..30), k in 1usize..40) {
        let n = h.len();
        let all = extract_centers(&h, CenterMode::AllClips, n).unwrap();
        let local = extract_centers(&h, CenterMode::LocalMaxima, k).unwrap();
        let positions: Vec<usize> = local.iter().map(|c| all.iter().position(|a| a == c).unwrap()).collect();
        prop_assert!(positions.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(local.len() <= k);
        for w in local.windows(2) {
            prop_assert!(h[w[0]] >= h[w[1]]);
        }
    }

    #[test]
    fn separated_moments_are_recovered(seed in 0u64..1000, count in 1usize..4) {
        // peaks at least 2 clips apart and spans inside the video
        let n = 40;
        let mut moments = Vec::new();
        for i in 0..count {
            let base = 6.0 + 12.0 * i as f64;
            let frac = ((seed * 37 + i as u64 * 11) % 90) as f64 / 100.0 + 0.05;
            let window = 1.0 + ((seed + i as u64 * 7) % 9) as f64;
            moments.push((base + frac, window));
        }
        let t = targets_for(&moments, n);
        let got = recovered(&roundtrip(&t).unwrap());
        prop_assert_eq!(got.len(), count);
        for ((c, w), (ec, ew)) in got.iter().zip(&moments) {
            prop_assert!((c - ec).abs() < 1e-9);
            prop_assert!((w - ew).abs() < 1e-9);
        }
    }

    #[test]
    fn output_follows_confidence(h in prop::collection::vec(0.01f64..1.0, 2..20)) {
        let n = h.len();
        let centers: Vec<usize> = (0..n).rev().collect();
        let m = compose_moments(&centers, &h, &vec![1.0; n], &vec![0.0; n], 1.0).unwrap();
        prop_assert!(m.windows(2).all(|w| w[0].confidence >= w[1].confidence));
    }
}
