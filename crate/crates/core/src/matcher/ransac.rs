//! Seeded RANSAC over four-point homography samples.

use std::cmp::Ordering;

use super::homography::{estimate_homography, Homography};
use super::{MatchPair, MatcherConfig};
use crate::error::Result;
use crate::numeric::Rng;

const SAMPLE: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct VerificationResult {
    /// Number of inliers; equals the count of `true` entries in the mask.
    pub score: usize,
    /// One flag per input pair, in input order.
    pub inlier_mask: Vec<bool>,
    pub homography: Option<Homography>,
    /// Set when no model could be fitted: fewer than four pairs, or every
    /// sample was degenerate.
    pub degenerate: bool,
}

impl VerificationResult {
    fn empty(n: usize) -> Self {
        VerificationResult {
            score: 0,
            inlier_mask: vec![false; n],
            homography: None,
            degenerate: true,
        }
    }
}

fn cmp_pairs(x: &MatchPair, y: &MatchPair) -> Ordering {
    let key = |p: &MatchPair| [p.coord_a[0], p.coord_a[1], p.coord_b[0], p.coord_b[1]];
    for (u, v) in key(x).iter().zip(key(y).iter()) {
        match u.total_cmp(v) {
            Ordering::Equal => continue,
            other => return other,
        }
    }
    (x.idx_a, x.idx_b).cmp(&(y.idx_a, y.idx_b))
}

fn inliers(h: &Homography, pairs: &[&MatchPair], thresh: f64) -> Vec<bool> {
    pairs
        .iter()
        .map(|p| h.transfer_error(p.coord_a, p.coord_b) <= thresh)
        .collect()
}

fn fit(pairs: &[&MatchPair]) -> Result<Homography> {
    let src: Vec<[f64; 2]> = pairs.iter().map(|p| p.coord_a).collect();
    let dst: Vec<[f64; 2]> = pairs.iter().map(|p| p.coord_b).collect();
    estimate_homography(&src, &dst)
}

/// Robust homography fit. Pairs are put in a canonical order before
/// sampling, so the outcome depends on the set of pairs and the seed only.
pub fn ransac_verify(
    pairs: &[MatchPair],
    config: &MatcherConfig,
    seed: u64,
) -> Result<VerificationResult> {
    config.validate()?;
    let n = pairs.len();
    if n < SAMPLE {
        return Ok(VerificationResult::empty(n));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| cmp_pairs(&pairs[i], &pairs[j]));
    let sorted: Vec<&MatchPair> = order.iter().map(|&i| &pairs[i]).collect();
    let thresh = config.reproj_threshold;

    let mut rng = Rng::seed(seed);
    let mut pool: Vec<usize> = (0..n).collect();
    let mut best: Option<(usize, Homography, Vec<bool>)> = None;
    for _ in 0..config.iterations {
        // Partial Fisher-Yates: the first four slots become the sample.
        for k in 0..SAMPLE {
            let r = k + rng.below(n - k);
            pool.swap(k, r);
        }
        let sample: Vec<&MatchPair> = pool[..SAMPLE].iter().map(|&i| sorted[i]).collect();
        let Ok(h) = fit(&sample) else { continue };
        let mask = inliers(&h, &sorted, thresh);
        let count = mask.iter().filter(|&&b| b).count();
        if best.as_ref().is_none_or(|(c, _, _)| count > *c) {
            best = Some((count, h, mask));
        }
        let (c, _, _) = best.as_ref().expect("just set");
        if *c as f64 > config.early_exit_ratio * n as f64 {
            break;
        }
    }
    let Some((mut count, mut h, mut mask)) = best else {
        return Ok(VerificationResult::empty(n));
    };

    // Least-squares refit on the consensus set; kept only if it does not
    // lose support.
    if count >= SAMPLE {
        let support: Vec<&MatchPair> = sorted
            .iter()
            .zip(&mask)
            .filter_map(|(p, &m)| m.then_some(*p))
            .collect();
        if let Ok(refit) = fit(&support) {
            let refit_mask = inliers(&refit, &sorted, thresh);
            let refit_count = refit_mask.iter().filter(|&&b| b).count();
            if refit_count >= count {
                count = refit_count;
                h = refit;
                mask = refit_mask;
            }
        }
    }

    let mut inlier_mask = vec![false; n];
    for (pos, &orig) in order.iter().enumerate() {
        inlier_mask[orig] = mask[pos];
    }
    Ok(VerificationResult {
        score: count,
        inlier_mask,
        homography: Some(h),
        degenerate: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(i: usize, a: [f64; 2], b: [f64; 2]) -> MatchPair {
        MatchPair { idx_a: i, idx_b: i, coord_a: a, coord_b: b, dist: 0.0 }
    }

    fn scattered(n: usize, rng: &mut Rng) -> Vec<[f64; 2]> {
        (0..n).map(|_| [rng.range(0.0, 640.0), rng.range(0.0, 480.0)]).collect()
    }

    #[test]
    fn identity_pairs_all_inliers() {
        let mut rng = Rng::seed(1);
        let pts = scattered(20, &mut rng);
        let pairs: Vec<_> = pts.iter().enumerate().map(|(i, &p)| pair(i, p, p)).collect();
        let r = ransac_verify(&pairs, &MatcherConfig::default(), 9).unwrap();
        assert_eq!(r.score, 20);
        assert!(!r.degenerate);
        let h = r.homography.unwrap().0;
        assert!((h - nalgebra::Matrix3::identity()).abs().max() < 1e-6);
    }

    #[test]
    fn three_pairs_score_zero() {
        let pairs: Vec<_> = (0..3).map(|i| pair(i, [i as f64, 0.0], [i as f64, 1.0])).collect();
        let r = ransac_verify(&pairs, &MatcherConfig::default(), 0).unwrap();
        assert_eq!(r.score, 0);
        assert!(r.homography.is_none());
        assert_eq!(r.inlier_mask, vec![false; 3]);
    }

    #[test]
    fn all_collinear_is_degenerate() {
        let pairs: Vec<_> = (0..8)
            .map(|i| pair(i, [i as f64 * 16.0, 8.0], [i as f64 * 16.0, 8.0]))
            .collect();
        let r = ransac_verify(&pairs, &MatcherConfig::default(), 0).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.score, 0);
    }

    #[test]
    fn permutation_does_not_change_result() {
        let mut rng = Rng::seed(4);
        let src = scattered(30, &mut rng);
        let pairs: Vec<_> = src
            .iter()
            .enumerate()
            .map(|(i, &p)| {
                let q = if i % 3 == 0 { [rng.range(0.0, 640.0), rng.range(0.0, 480.0)] } else { [p[0] + 5.0, p[1]] };
                pair(i, p, q)
            })
            .collect();
        let cfg = MatcherConfig::default();
        let r1 = ransac_verify(&pairs, &cfg, 77).unwrap();
        let mut perm: Vec<usize> = (0..pairs.len()).collect();
        rng.shuffle(&mut perm);
        let shuffled: Vec<_> = perm.iter().map(|&i| pairs[i]).collect();
        let r2 = ransac_verify(&shuffled, &cfg, 77).unwrap();
        assert_eq!(r1.score, r2.score);
        assert_eq!(r1.homography, r2.homography);
        for (k, &i) in perm.iter().enumerate() {
            assert_eq!(r2.inlier_mask[k], r1.inlier_mask[i]);
        }
    }

    #[test]
    fn rejects_nonpositive_threshold() {
        let cfg = MatcherConfig { reproj_threshold: -1.0, ..Default::default() };
        assert!(ransac_verify(&[], &cfg, 0).is_err());
    }
}
