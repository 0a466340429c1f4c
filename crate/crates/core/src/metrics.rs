//! Evaluation metrics: ranking AUC, grid-level localization overlap, and
//! frame-score aggregation.

use crate::error::{Error, Result};
use crate::mvg::LocationMap;
use crate::scalar::Scalar;

/// Probability that a random fake outranks a random real, ties counted as
/// one half (the rank-sum formulation). Scores may be any ordered values.
pub fn evaluate_auc<T: Scalar>(scores: &[T], is_fake: &[bool]) -> Result<f64> {
    if scores.len() != is_fake.len() {
        return Err(Error::Dim {
            op: "evaluate_auc",
            lhs: vec![scores.len()],
            rhs: vec![is_fake.len()],
        });
    }
    let n_fake = is_fake.iter().filter(|&&f| f).count();
    let n_real = is_fake.len() - n_fake;
    if n_fake == 0 || n_real == 0 {
        return Err(Error::UndefinedMetric(
            "AUC needs both a fake and a real score".into(),
        ));
    }
    // average ranks with ties shared; ranks are exact multiples of 1/2
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[a]
            .partial_cmp(&scores[b])
            .expect("scores must be comparable")
    });
    let mut rank_sum_fake = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // tied block spans ranks i+1 ..= j+1 (1-based); shared rank is the mean
        let shared = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if is_fake[idx] {
                rank_sum_fake += shared;
            }
        }
        i = j + 1;
    }
    let nf = n_fake as f64;
    let u = rank_sum_fake - nf * (nf + 1.0) / 2.0;
    Ok(u / (nf * n_real as f64))
}

/// Downsample a pixel mask to the `P x P` patch grid: a patch is positive
/// when at least half its pixels are.
pub fn downsample_mask(mask: &[u8], side: usize, p: usize) -> Result<Vec<bool>> {
    if side % p != 0 || mask.len() != side * side {
        return Err(Error::Dim {
            op: "downsample_mask",
            lhs: vec![mask.len()],
            rhs: vec![side, side],
        });
    }
    let ps = side / p;
    let mut grid = vec![false; p * p];
    for pr in 0..p {
        for pc in 0..p {
            let mut on = 0usize;
            for y in 0..ps {
                for x in 0..ps {
                    if mask[(pr * ps + y) * side + pc * ps + x] > 0 {
                        on += 1;
                    }
                }
            }
            grid[pr * p + pc] = 2 * on >= ps * ps;
        }
    }
    Ok(grid)
}

/// Intersection over union between a binary location map and a
/// grid-downsampled ground-truth mask; 1 when both are empty.
pub fn localization_iou<T: Scalar>(pred: &LocationMap<T>, gt_grid: &[bool]) -> Result<f64> {
    if pred.values.len() != gt_grid.len() {
        return Err(Error::Dim {
            op: "localization_iou",
            lhs: vec![pred.values.len()],
            rhs: vec![gt_grid.len()],
        });
    }
    let mut inter = 0usize;
    let mut union = 0usize;
    for (v, &gt) in pred.values.iter().zip(gt_grid) {
        let p = *v > T::zero();
        if p && gt {
            inter += 1;
        }
        if p || gt {
            union += 1;
        }
    }
    if union == 0 {
        Ok(1.0)
    } else {
        Ok(inter as f64 / union as f64)
    }
}

/// Aggregate per-frame scores into one video-level score (arithmetic mean).
pub fn aggregate_video<T: Scalar>(frame_scores: &[T]) -> Result<T> {
    if frame_scores.is_empty() {
        return Err(Error::Contract(
            "aggregate_video needs at least one frame score".into(),
        ));
    }
    let mut s = T::zero();
    for &v in frame_scores {
        s += v;
    }
    Ok(s / T::from_f(frame_scores.len() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mvg::MapMode;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// O(n^2) pairwise oracle with exact dyadic accumulation.
    fn auc_oracle(scores: &[f64], is_fake: &[bool]) -> f64 {
        let mut wins = 0u64;
        let mut ties = 0u64;
        let mut pairs = 0u64;
        for i in 0..scores.len() {
            if !is_fake[i] {
                continue;
            }
            for j in 0..scores.len() {
                if is_fake[j] {
                    continue;
                }
                pairs += 1;
                if scores[i] > scores[j] {
                    wins += 1;
                } else if scores[i] == scores[j] {
                    ties += 1;
                }
            }
        }
        (wins as f64 + 0.5 * ties as f64) / pairs as f64
    }

    #[test]
    fn perfect_ranking_gives_one() {
        let auc = evaluate_auc(&[0.9, 0.1], &[true, false]).unwrap();
        assert_eq!(auc, 1.0);
    }

    #[test]
    fn all_ties_give_half() {
        let auc = evaluate_auc(&[0.4, 0.4, 0.4, 0.4], &[true, false, true, false]).unwrap();
        assert_eq!(auc, 0.5);
    }

    #[test]
    fn matches_pairwise_oracle_exactly_on_random_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(127);
        for _ in 0..100 {
            let n = 50;
            // quantized scores so ties actually occur
            let scores: Vec<f64> = (0..n)
                .map(|_| (rng.random_range(0.0f64..1.0) * 20.0).round() / 20.0)
                .collect();
            let mut is_fake: Vec<bool> = (0..n).map(|_| rng.random_range(0..2) == 1).collect();
            // both classes present
            is_fake[0] = true;
            is_fake[1] = false;
            let got = evaluate_auc(&scores, &is_fake).unwrap();
            let want = auc_oracle(&scores, &is_fake);
            assert_eq!(got, want, "rank method deviates from pairwise oracle");
        }
    }

    #[test]
    fn invariant_under_strictly_increasing_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(131);
        let n = 60;
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let mut is_fake: Vec<bool> = (0..n).map(|_| rng.random_range(0..2) == 1).collect();
        is_fake[0] = true;
        is_fake[1] = false;
        let base = evaluate_auc(&scores, &is_fake).unwrap();
        let squashed: Vec<f64> = scores.iter().map(|&s| 1.0 / (1.0 + (-s).exp())).collect();
        let shifted: Vec<f64> = scores.iter().map(|&s| 3.0 * s + 40.0).collect();
        assert_eq!(evaluate_auc(&squashed, &is_fake).unwrap(), base);
        assert_eq!(evaluate_auc(&shifted, &is_fake).unwrap(), base);
    }

    #[test]
    fn single_class_is_undefined() {
        assert!(matches!(
            evaluate_auc(&[0.1, 0.9], &[true, true]),
            Err(Error::UndefinedMetric(_))
        ));
    }

    fn map_of(p: usize, bits: &[u8]) -> LocationMap<f64> {
        LocationMap {
            p,
            mode: MapMode::Binary,
            values: bits.iter().map(|&b| b as f64).collect(),
        }
    }

    #[test]
    fn iou_identity_and_disjoint() {
        let pred = map_of(2, &[1, 0, 0, 1]);
        let same = vec![true, false, false, true];
        assert_eq!(localization_iou(&pred, &same).unwrap(), 1.0);
        let disjoint = vec![false, true, true, false];
        assert_eq!(localization_iou(&pred, &disjoint).unwrap(), 0.0);
    }

    #[test]
    fn iou_empty_against_empty_is_one() {
        let pred = map_of(2, &[0, 0, 0, 0]);
        assert_eq!(localization_iou(&pred, &[false; 4]).unwrap(), 1.0);
    }

    #[test]
    fn gfr_against_centered_mask_is_one() {
        // standard prior on an 8x8 grid vs a pixel mask covering exactly
        // the centered half square
        use crate::mvg::{GfrMask, GfrVariant};
        let side = 64;
        let p = 8;
        let mut mask = vec![0u8; side * side];
        for y in 16..48 {
            for x in 16..48 {
                mask[y * side + x] = 1;
            }
        }
        let grid = downsample_mask(&mask, side, p).unwrap();
        let gfr = GfrMask::new(p, GfrVariant::Standard);
        let pred = LocationMap::<f64>::from_gfr(&gfr);
        assert_eq!(localization_iou(&pred, &grid).unwrap(), 1.0);
    }

    #[test]
    fn downsample_uses_majority_occupancy() {
        let side = 4;
        let p = 2;
        // top-left patch: 2 of 4 pixels on (>= 50%); top-right: 1 of 4
        let mask = vec![
            1, 0, 1, 0, //
            1, 0, 0, 0, //
            0, 0, 0, 0, //
            0, 0, 0, 0,
        ];
        let grid = downsample_mask(&mask, side, p).unwrap();
        assert_eq!(grid, vec![true, false, false, false]);
    }

    #[test]
    fn aggregate_video_means_frames() {
        assert!((aggregate_video(&[0.8, 0.8, 0.8]).unwrap() - 0.8).abs() <= 1e-15);
        assert_eq!(aggregate_video(&[0.0, 1.0]).unwrap(), 0.5);
        assert!(aggregate_video::<f64>(&[]).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(137);
        let frames: Vec<f64> = (0..110).map(|_| rng.random_range(0.0..1.0)).collect();
        let want = frames.iter().sum::<f64>() / 110.0;
        assert!((aggregate_video(&frames).unwrap() - want).abs() <= 1e-12);
    }
}
