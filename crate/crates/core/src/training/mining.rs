use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::loss::euclidean;
use crate::error::{Error, Result};
use crate::numeric::Scalar;
use crate::retrieval::PlaceTag;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MiningMode {
    /// Positive: the in-radius entry with the closest current descriptor.
    Weak,
    /// Positive: the in-radius entry with the smallest heading difference.
    Heading,
}

impl fmt::Display for MiningMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MiningMode::Weak => "weak",
            MiningMode::Heading => "heading",
        })
    }
}

impl FromStr for MiningMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "weak" => Ok(MiningMode::Weak),
            "heading" => Ok(MiningMode::Heading),
            other => Err(Error::config(format!("unknown mining mode `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiningConfig {
    pub mode: MiningMode,
    /// Positives lie within this planar distance, meters.
    pub radius_pos: f64,
    /// Negatives lie strictly beyond this planar distance, meters.
    pub radius_neg: f64,
    pub n_neg: usize,
}

impl Default for MiningConfig {
    fn default() -> Self {
        MiningConfig { mode: MiningMode::Weak, radius_pos: 10.0, radius_neg: 25.0, n_neg: 5 }
    }
}

/// Indices into the training set.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MinedTriplet {
    pub query: usize,
    pub positive: usize,
    /// Hardest first.
    pub negatives: Vec<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Mined {
    pub triplets: Vec<MinedTriplet>,
    pub skipped_no_positive: usize,
    pub skipped_no_negative: usize,
}

impl Mined {
    /// Number of `(query, positive, negative)` combinations.
    pub fn count(&self) -> usize {
        self.triplets.iter().map(|t| t.negatives.len()).sum()
    }
}

/// Absolute heading difference wrapped to `[0, 180]` degrees.
pub fn heading_difference(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    d.min(360.0 - d)
}

/// Every entry serves as a query against all others.
pub fn mine_triplets<T: Scalar>(
    globals: &[Vec<T>],
    tags: &[PlaceTag],
    config: &MiningConfig,
) -> Result<Mined> {
    if globals.len() != tags.len() {
        return Err(Error::shape(format!(
            "{} descriptors but {} tags",
            globals.len(),
            tags.len()
        )));
    }
    if config.n_neg == 0 {
        return Err(Error::config("mining needs at least one negative per query"));
    }
    if config.mode == MiningMode::Heading {
        if let Some(t) = tags.iter().find(|t| t.heading_deg.is_none()) {
            return Err(Error::validation(format!("heading mining: `{}` has no heading", t.id)));
        }
    }
    let n = globals.len();
    let mut mined = Mined::default();
    for q in 0..n {
        let desc_dist = |j: usize| euclidean(&globals[q], &globals[j]).as_f64();
        let in_radius = (0..n).filter(|&j| j != q && tags[q].planar_distance(&tags[j]) <= config.radius_pos);
        let positive = match config.mode {
            MiningMode::Weak => in_radius
                .map(|j| (desc_dist(j), 0.0, j))
                .min_by(|a, b| a.0.total_cmp(&b.0).then(a.2.cmp(&b.2))),
            MiningMode::Heading => {
                let hq = tags[q].heading_deg.expect("checked");
                in_radius
                    .map(|j| (heading_difference(hq, tags[j].heading_deg.expect("checked")), desc_dist(j), j))
                    .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.cmp(&b.2)))
            }
        };
        let Some((_, _, positive)) = positive else {
            mined.skipped_no_positive += 1;
            continue;
        };
        let mut far: Vec<(f64, usize)> = (0..n)
            .filter(|&j| tags[q].planar_distance(&tags[j]) > config.radius_neg)
            .map(|j| (desc_dist(j), j))
            .collect();
        if far.is_empty() {
            mined.skipped_no_negative += 1;
            continue;
        }
        far.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        far.truncate(config.n_neg);
        mined.triplets.push(MinedTriplet {
            query: q,
            positive,
            negatives: far.into_iter().map(|(_, j)| j).collect(),
        });
    }
    Ok(mined)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tag(id: &str, x: f64, heading: f64) -> PlaceTag {
        PlaceTag { heading_deg: Some(heading), ..PlaceTag::at(id, x, 0.0) }
    }

    #[test]
    fn single_candidate_is_positive_in_both_modes() {
        let tags = vec![tag("q", 0.0, 0.0), tag("p", 5.0, 170.0), tag("n", 100.0, 0.0)];
        let globals = vec![vec![1.0f64, 0.0], vec![0.0, 1.0], vec![1.0, 0.0]];
        for mode in [MiningMode::Weak, MiningMode::Heading] {
            let cfg = MiningConfig { mode, ..Default::default() };
            let m = mine_triplets(&globals, &tags, &cfg).unwrap();
            assert_eq!(m.triplets[0], MinedTriplet { query: 0, positive: 1, negatives: vec![2] });
        }
    }

    #[test]
    fn heading_mode_prefers_aligned_view() {
        let tags = vec![tag("q", 0.0, 10.0), tag("a", 3.0, 15.0), tag("b", 3.0, 100.0), tag("n", 90.0, 0.0)];
        // `b` has the closer descriptor, `a` the closer heading.
        let globals = vec![vec![1.0f64, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![0.0, -1.0]];
        let weak = mine_triplets(&globals, &tags, &MiningConfig::default()).unwrap();
        assert_eq!(weak.triplets[0].positive, 2);
        let cfg = MiningConfig { mode: MiningMode::Heading, ..Default::default() };
        let heading = mine_triplets(&globals, &tags, &cfg).unwrap();
        assert_eq!(heading.triplets[0].positive, 1);
    }

    #[test]
    fn isolated_queries_are_counted() {
        let tags = vec![tag("a", 0.0, 0.0), tag("b", 1000.0, 0.0)];
        let globals = vec![vec![1.0f64], vec![1.0]];
        let m = mine_triplets(&globals, &tags, &MiningConfig::default()).unwrap();
        assert!(m.triplets.is_empty());
        assert_eq!(m.skipped_no_positive, 2);
    }

    #[test]
    fn wrapped_heading() {
        assert_eq!(heading_difference(350.0, 10.0), 20.0);
        assert_eq!(heading_difference(0.0, 180.0), 180.0);
        assert_eq!(heading_difference(-90.0, 90.0), 180.0);
    }
}
