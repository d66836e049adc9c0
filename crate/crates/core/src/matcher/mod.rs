//! Spatial verification: mutual nearest-neighbor patch matching followed by
//! RANSAC homography fitting. The similarity of two images is the inlier count.

mod homography;
mod ransac;

pub use homography::{estimate_homography, Homography, COLLINEAR_AREA_TOL, MIN_HOMOGENEOUS_W};
pub use ransac::{ransac_verify, VerificationResult};

use serde::{Deserialize, Serialize};

use crate::aggregate::{ImageDescriptor, KeyPatches};
use crate::backbone::PATCH_SIZE;
use crate::error::{Error, Result};

/// A cross-checked correspondence between key patch `idx_a` of image A and
/// key patch `idx_b` of image B.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MatchPair {
    pub idx_a: usize,
    pub idx_b: usize,
    pub coord_a: [f64; 2],
    pub coord_b: [f64; 2],
    pub dist: f64,
}

impl MatchPair {
    pub fn flipped(&self) -> Self {
        MatchPair {
            idx_a: self.idx_b,
            idx_b: self.idx_a,
            coord_a: self.coord_b,
            coord_b: self.coord_a,
            dist: self.dist,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatcherConfig {
    /// Inlier bound on forward reprojection error, pixels.
    pub reproj_threshold: f64,
    pub iterations: usize,
    /// Stop sampling once the best consensus exceeds this fraction of pairs.
    pub early_exit_ratio: f64,
    /// Mixed into every pair seed; 0 reproduces the default schedule.
    pub seed: u64,
}

impl Default for MatcherConfig {
    fn default() -> Self {
        MatcherConfig {
            reproj_threshold: 1.5 * PATCH_SIZE as f64,
            iterations: 500,
            early_exit_ratio: 0.8,
            seed: 0,
        }
    }
}

impl MatcherConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.reproj_threshold > 0.0) || !self.reproj_threshold.is_finite() {
            return Err(Error::config(format!(
                "reprojection threshold must be positive, got {}",
                self.reproj_threshold
            )));
        }
        if self.iterations == 0 {
            return Err(Error::config("RANSAC needs at least one iteration"));
        }
        if !(0.0..=1.0).contains(&self.early_exit_ratio) {
            return Err(Error::config(format!(
                "early exit ratio must lie in [0, 1], got {}",
                self.early_exit_ratio
            )));
        }
        Ok(())
    }
}

fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum()
}

/// Index of the smallest entry, lowest index on ties.
fn argmin(values: impl Iterator<Item = f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.enumerate() {
        if best.is_none_or(|(_, b)| v < b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

/// Exhaustive mutual nearest neighbors under Euclidean distance, sorted by
/// `idx_a`.
pub fn mutual_nn_match(a: &KeyPatches, b: &KeyPatches) -> Result<Vec<MatchPair>> {
    if a.is_empty() || b.is_empty() {
        return Ok(Vec::new());
    }
    if a.dim != b.dim {
        return Err(Error::shape(format!(
            "key patch dimensions differ: {} vs {}",
            a.dim, b.dim
        )));
    }
    let (na, nb) = (a.len(), b.len());
    let dists: Vec<f64> = (0..na)
        .flat_map(|i| (0..nb).map(move |j| (i, j)))
        .map(|(i, j)| sq_dist(a.desc(i), b.desc(j)))
        .collect();
    let nn_b: Vec<usize> = (0..na)
        .map(|i| argmin(dists[i * nb..(i + 1) * nb].iter().copied()).expect("non-empty"))
        .collect();
    let nn_a: Vec<usize> = (0..nb)
        .map(|j| argmin((0..na).map(|i| dists[i * nb + j])).expect("non-empty"))
        .collect();
    let coord = |c: [i32; 2]| [c[0] as f64, c[1] as f64];
    Ok((0..na)
        .filter(|&i| nn_a[nn_b[i]] == i)
        .map(|i| {
            let j = nn_b[i];
            MatchPair {
                idx_a: i,
                idx_b: j,
                coord_a: coord(a.coords[i]),
                coord_b: coord(b.coords[j]),
                dist: dists[i * nb + j].sqrt(),
            }
        })
        .collect())
}

fn fnv1a(bytes: &[u8], mut h: u64) -> u64 {
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Seed shared by `(a, b)` and `(b, a)`.
pub fn pair_seed(id_a: &str, id_b: &str, base: u64) -> u64 {
    let (lo, hi) = if id_a <= id_b { (id_a, id_b) } else { (id_b, id_a) };
    let mut h = fnv1a(&base.to_le_bytes(), 0xcbf2_9ce4_8422_2325);
    h = fnv1a(lo.as_bytes(), h);
    h = fnv1a(&[0xff], h);
    fnv1a(hi.as_bytes(), h)
}

/// Mutual matching plus RANSAC. The mask is aligned with
/// `mutual_nn_match(&a.keys, &b.keys)`, and the homography maps A to B.
///
/// RANSAC always runs with the lexicographically smaller id as the source
/// image so that swapping the arguments cannot change the score.
pub fn spatial_score(
    a: &ImageDescriptor,
    b: &ImageDescriptor,
    config: &MatcherConfig,
) -> Result<VerificationResult> {
    let pairs = mutual_nn_match(&a.keys, &b.keys)?;
    let seed = pair_seed(&a.id, &b.id, config.seed);
    if a.id <= b.id {
        return ransac_verify(&pairs, config, seed);
    }
    let flipped: Vec<MatchPair> = pairs.iter().map(MatchPair::flipped).collect();
    let mut result = ransac_verify(&flipped, config, seed)?;
    result.homography = result.homography.and_then(|h| h.inverse().ok());
    Ok(result)
}
