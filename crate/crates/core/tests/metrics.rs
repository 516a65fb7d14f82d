mod common;

use common::{iou, oracle_ap, oracle_match, oracle_rank_scores, oracle_recall};
use proptest::prelude::*;
use umt_core::decoding::MomentPrediction;
use umt_core::metrics::{
    average_precision, highlight_metrics, iou_grid, mean_ap, recall_at_k, temporal_iou, top5_map,
};

fn m(start: f64, end: f64, confidence: f64) -> MomentPrediction {
    MomentPrediction { start, end, confidence }
}

fn interval() -> impl Strategy<Value = (f64, f64)> {
    (0u32..40, 1u32..15).prop_map(|(s, l)| (s as f64, (s + l) as f64))
}

fn pred() -> impl Strategy<Value = MomentPrediction> {
    // coarse confidences so ties actually occur
    (interval(), 0u32..6).prop_map(|((s, e), c)| m(s, e, c as f64 / 5.0))
}

fn oracle_hd(s: &[f64], l: &[bool]) -> (f64, bool) {
    let ranked: Vec<bool> = oracle_rank_scores(s).into_iter().map(|i| l[i]).collect();
    (oracle_ap(&ranked, l.iter().filter(|b| **b).count()), ranked[0])
}

#[test]
fn iou_examples() {
    assert!((temporal_iou((0.0, 10.0), (5.0, 15.0)) - 1.0 / 3.0).abs() < 1e-15);
    assert_eq!(temporal_iou((3.0, 7.0), (3.0, 7.0)), 1.0);
    assert_eq!(temporal_iou((0.0, 2.0), (2.0, 4.0)), 0.0);
    assert_eq!(temporal_iou((4.0, 4.0), (0.0, 8.0)), 0.0);
}

#[test]
fn recall_examples() {
    let gt = vec![vec![(10.0, 20.0)], vec![]];
    let preds = vec![
        vec![m(10.0, 14.0, 0.9), m(0.0, 2.0, 0.5), m(10.0, 20.0, 0.4)],
        vec![m(0.0, 1.0, 0.3)],
    ];
    // the query with no ground truth is excluded
    assert_eq!(recall_at_k(&preds, &gt, 1, 0.5), 0.0);
    assert_eq!(recall_at_k(&preds, &gt, 5, 0.5), 1.0);
}

#[test]
fn ap_examples() {
    let gt = [(0.0, 10.0)];
    assert_eq!(average_precision(&[m(0.0, 2.0, 0.8), m(0.0, 10.0, 0.6)], &gt, 0.5), 0.5);
    let perfect = vec![vec![m(0.0, 10.0, 0.7)], vec![m(5.0, 6.0, 0.2), m(20.0, 30.0, 0.1)]];
    let gts = vec![vec![(0.0, 10.0)], vec![(5.0, 6.0), (20.0, 30.0)]];
    assert!(mean_ap(&perfect, &gts, &iou_grid()).iter().all(|(_, v)| *v == 1.0));
    // duplicate predictions cannot claim the same ground truth twice
    let dup = [m(0.0, 10.0, 0.9), m(0.0, 10.0, 0.8)];
    assert_eq!(average_precision(&dup, &[(0.0, 10.0), (50.0, 60.0)], 0.5), 0.5);
}

#[test]
fn grid_is_ten_points() {
    let g = iou_grid();
    assert_eq!(g.len(), 10);
    assert_eq!(g[0], 0.5);
    assert!((g[9] - 0.95).abs() < 1e-12);
}

#[test]
fn highlight_examples() {
    let labels = vec![vec![true, false, false], vec![false, false, false]];
    let (ap, hit) = highlight_metrics(&[vec![0.9, 0.1, 0.2], vec![0.5, 0.1, 0.3]], &labels);
    assert_eq!((ap, hit), (1.0, 1.0));
    let (ap, hit) = highlight_metrics(&[vec![0.1, 0.9, 0.2], vec![0.0; 3]], &labels);
    assert_eq!(hit, 0.0);
    assert!((ap - 1.0 / 3.0).abs() < 1e-15);

    let l = vec![vec![true, true, false, true, true, true, false]];
    let s = vec![vec![0.9, 0.8, 0.1, 0.7, 0.6, 0.5, 0.0]];
    assert_eq!(top5_map(&s, &l), 1.0);
    let s = vec![vec![0.0, 0.0, 0.9, 0.0, 0.0, 0.0, 0.8]];
    let l2 = vec![vec![false, false, false, false, false, true, false]];
    assert_eq!(top5_map(&s, &l2), 0.0);
    // fewer than five clips uses all of them
    assert_eq!(top5_map(&[vec![0.2, 0.9]], &[vec![false, true]]), 1.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]
    #[test]
    fn ap_matches_oracle(
        preds in prop::collection::vec(pred(), 0..9),
        gts in prop::collection::vec(interval(), 1..5),
        t in prop::sample::select(iou_grid()),
    ) {
        let got = average_precision(&preds, &gts, t);
        let want = oracle_ap(&oracle_match(&preds, &gts, t), gts.len());
        prop_assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        prop_assert!((0.0..=1.0).contains(&got));
    }

    #[test]
    fn recall_matches_oracle_and_is_monotone(
        data in prop::collection::vec((prop::collection::vec(pred(), 1..8), prop::collection::vec(interval(), 0..3)), 10),
    ) {
        let (preds, gts): (Vec<_>, Vec<_>) = data.into_iter().unzip();
        for t in [0.3, 0.5, 0.7] {
            for k in [1, 5] {
                prop_assert_eq!(recall_at_k(&preds, &gts, k, t), oracle_recall(&preds, &gts, k, t));
            }
            prop_assert!(recall_at_k(&preds, &gts, 1, t) <= recall_at_k(&preds, &gts, 5, t));
        }
        prop_assert!(recall_at_k(&preds, &gts, 1, 0.7) <= recall_at_k(&preds, &gts, 1, 0.5));
    }

    #[test]
    fn highlight_matches_oracle(
        videos in prop::collection::vec(prop::collection::vec((0u32..5, any::<bool>()), 1..12), 1..6),
    ) {
        let scores: Vec<Vec<f64>> = videos.iter().map(|v| v.iter().map(|(s, _)| *s as f64 / 4.0).collect()).collect();
        let labels: Vec<Vec<bool>> = videos.iter().map(|v| v.iter().map(|(_, l)| *l).collect()).collect();
        let (ap, hit) = highlight_metrics(&scores, &labels);
        let kept: Vec<usize> = (0..labels.len()).filter(|&i| labels[i].iter().any(|b| *b)).collect();
        if kept.is_empty() {
            prop_assert_eq!((ap, hit), (0.0, 0.0));
        } else {
            let per: Vec<(f64, bool)> = kept.iter().map(|&i| oracle_hd(&scores[i], &labels[i])).collect();
            let n = per.len() as f64;
            let want_ap = per.iter().map(|p| p.0).sum::<f64>() / n;
            let want_hit = per.iter().filter(|p| p.1).count() as f64 / n;
            prop_assert!((ap - want_ap).abs() < 1e-12);
            prop_assert!((hit - want_hit).abs() < 1e-12);

            let want_top5 = kept.iter().map(|&i| {
                let top: Vec<bool> = oracle_rank_scores(&scores[i]).into_iter().take(5).map(|j| labels[i][j]).collect();
                oracle_ap(&top, top.iter().filter(|b| **b).count())
            }).sum::<f64>() / n;
            prop_assert!((top5_map(&scores, &labels) - want_top5).abs() < 1e-12);
        }
    }

    #[test]
    fn metrics_ignore_monotone_rescaling(
        preds in prop::collection::vec(pred(), 1..8),
        gts in prop::collection::vec(interval(), 1..4),
        scores in prop::collection::vec(0.0f64..1.0, 3..10),
        labels in prop::collection::vec(any::<bool>(), 10),
    ) {
        let squash = |c: f64| (3.0 * c).exp() / (1.0 + (3.0 * c).exp());
        let moved: Vec<_> = preds.iter().map(|p| m(p.start, p.end, squash(p.confidence))).collect();
        for t in iou_grid() {
            prop_assert_eq!(average_precision(&preds, &gts, t), average_precision(&moved, &gts, t));
        }
        let l = vec![labels[..scores.len()].to_vec()];
        let s2 = vec![scores.iter().map(|v| squash(*v)).collect::<Vec<_>>()];
        prop_assert_eq!(highlight_metrics(&[scores.clone()], &l), highlight_metrics(&s2, &l));
        prop_assert_eq!(top5_map(&[scores], &l), top5_map(&s2, &l));
    }

    #[test]
    fn iou_matches_oracle(a in interval(), b in interval()) {
        prop_assert_eq!(temporal_iou(a, b), iou(a, b));
        prop_assert_eq!(temporal_iou(a, b), temporal_iou(b, a));
    }
}
