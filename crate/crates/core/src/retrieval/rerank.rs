use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::index::{Candidate, DescriptorIndex};
use crate::aggregate::ImageDescriptor;
use crate::error::{Error, Result};
use crate::matcher::{spatial_score, MatcherConfig};

/// Default shortlist length handed to spatial verification.
pub const DEFAULT_TOPK: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub id: String,
    pub distance: f64,
    /// Inlier count from spatial verification.
    pub score: usize,
}

/// Rankings for one query after each stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryOutcome {
    pub query: String,
    pub global: Vec<Candidate>,
    /// Present when spatial re-ranking ran; a permutation of `global`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reranked: Option<Vec<ScoredCandidate>>,
}

impl QueryOutcome {
    /// Final ranking: re-ranked if available, global otherwise.
    pub fn ranking(&self) -> Vec<&str> {
        match &self.reranked {
            Some(r) => r.iter().map(|c| c.id.as_str()).collect(),
            None => self.global.iter().map(|c| c.id.as_str()).collect(),
        }
    }
}

/// Scores every candidate against the query and sorts by inlier count
/// (descending), then global distance, then global rank.
pub fn rerank(
    query: &ImageDescriptor,
    index: &DescriptorIndex,
    candidates: &[Candidate],
    config: &MatcherConfig,
) -> Result<Vec<ScoredCandidate>> {
    let scores: Vec<usize> = candidates
        .par_iter()
        .map(|c| spatial_score(query, index.entry(c.entry), config).map(|r| r.score))
        .collect::<Result<_>>()?;
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&i, &j| {
        scores[j]
            .cmp(&scores[i])
            .then(candidates[i].distance.total_cmp(&candidates[j].distance))
            .then(i.cmp(&j))
    });
    Ok(order
        .into_iter()
        .map(|i| ScoredCandidate {
            id: candidates[i].id.clone(),
            distance: candidates[i].distance,
            score: scores[i],
        })
        .collect())
}

/// Global retrieval followed by optional spatial re-ranking. A query whose id
/// also names an index entry is rejected, since pair seeds and evaluation
/// both key on ids.
pub fn run_query(
    query: &ImageDescriptor,
    index: &DescriptorIndex,
    k: usize,
    rerank_on: bool,
    config: &MatcherConfig,
) -> Result<QueryOutcome> {
    if index.position(&query.id).is_some() {
        return Err(Error::validation(format!(
            "query id `{}` collides with an index entry",
            query.id
        )));
    }
    let global = index.global_topk(&query.global, k)?;
    let reranked = if rerank_on { Some(rerank(query, index, &global, config)?) } else { None };
    Ok(QueryOutcome { query: query.id.clone(), global, reranked })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregate::KeyPatches;

    fn desc(id: &str, global: Vec<f32>, keys: KeyPatches) -> ImageDescriptor {
        ImageDescriptor { id: id.into(), rows: 4, cols: 4, global, keys }
    }

    fn grid_keys(n: usize, salt: f32) -> KeyPatches {
        let coords: Vec<[i32; 2]> = (0..n as i32).map(|k| [16 * (k % 5) + 8, 16 * (k / 5) + 8]).collect();
        let descs = (0..n).flat_map(|k| [k as f32 + salt, (k * k) as f32 * 0.1]).collect();
        KeyPatches { coords, descs, dim: 2 }
    }

    #[test]
    fn equal_scores_fall_back_to_global_order() {
        let idx = DescriptorIndex::build(vec![
            desc("r0", vec![1.0, 0.0], KeyPatches { dim: 2, ..Default::default() }),
            desc("r1", vec![0.0, 1.0], KeyPatches { dim: 2, ..Default::default() }),
        ])
        .unwrap();
        let q = desc("q", vec![0.0, 1.0], KeyPatches { dim: 2, ..Default::default() });
        let out = run_query(&q, &idx, 10, true, &MatcherConfig::default()).unwrap();
        let global: Vec<_> = out.global.iter().map(|c| c.id.as_str()).collect();
        assert_eq!(out.ranking(), global);
        assert!(out.reranked.unwrap().iter().all(|c| c.score == 0));
    }

    #[test]
    fn high_inlier_count_wins() {
        let q = desc("q", vec![1.0, 0.0], grid_keys(20, 0.0));
        let idx = DescriptorIndex::build(vec![
            desc("near", vec![1.0, 0.0], grid_keys(5, 0.0)),
            desc("far", vec![0.0, 1.0], grid_keys(20, 0.0)),
        ])
        .unwrap();
        let out = run_query(&q, &idx, 2, true, &MatcherConfig::default()).unwrap();
        assert_eq!(out.global[0].id, "near");
        let r = out.reranked.unwrap();
        assert_eq!(r[0].id, "far");
        assert_eq!(r[0].score, 20);
        // Five patches on one grid row admit no non-collinear sample.
        assert_eq!(r[1].score, 0);
    }

    #[test]
    fn collision_rejected() {
        let idx = DescriptorIndex::build(vec![desc("a", vec![1.0, 0.0], KeyPatches::default())]).unwrap();
        let q = desc("a", vec![1.0, 0.0], KeyPatches::default());
        assert!(run_query(&q, &idx, 1, false, &MatcherConfig::default()).is_err());
    }
}
