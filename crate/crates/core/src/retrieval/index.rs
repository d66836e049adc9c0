use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::aggregate::ImageDescriptor;
use crate::error::{Error, Result};

/// Tolerance on `‖g‖ = 1` for indexed globals.
pub const UNIT_NORM_TOL: f64 = 1e-5;

/// Camera pose: position in meters, orientation in degrees.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
}

/// Ground truth for one image: planar position in meters and, optionally,
/// a compass heading and a full pose.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlaceTag {
    pub id: String,
    pub easting: f64,
    pub northing: f64,
    pub heading_deg: Option<f64>,
    pub pose: Option<Pose>,
}

impl PlaceTag {
    pub fn at(id: impl Into<String>, easting: f64, northing: f64) -> Self {
        PlaceTag { id: id.into(), easting, northing, heading_deg: None, pose: None }
    }

    pub fn planar_distance(&self, other: &PlaceTag) -> f64 {
        (self.easting - other.easting).hypot(self.northing - other.northing)
    }
}

pub type TagMap = HashMap<String, PlaceTag>;

/// Tags keyed by id; duplicate ids or non-finite coordinates are rejected.
pub fn tag_map<'a>(tags: impl IntoIterator<Item = &'a PlaceTag>) -> Result<TagMap> {
    let mut map = TagMap::new();
    for t in tags {
        if !t.easting.is_finite() || !t.northing.is_finite() {
            return Err(Error::validation(format!("non-finite position for `{}`", t.id)));
        }
        if map.insert(t.id.clone(), t.clone()).is_some() {
            return Err(Error::validation(format!("duplicate tag id `{}`", t.id)));
        }
    }
    Ok(map)
}

/// A retrieved reference image with its global distance to the query.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub id: String,
    /// Position in the index.
    #[serde(skip)]
    pub entry: usize,
    pub distance: f64,
}

/// Immutable reference database with a dense `E×D` matrix of globals.
#[derive(Clone, Debug, Default)]
pub struct DescriptorIndex {
    entries: Vec<ImageDescriptor>,
    globals: Vec<f32>,
    dim: usize,
}

impl DescriptorIndex {
    pub fn build(entries: Vec<ImageDescriptor>) -> Result<Self> {
        let dim = entries.first().map_or(0, |e| e.global.len());
        let mut seen = HashSet::new();
        let mut globals = Vec::with_capacity(entries.len() * dim);
        for e in &entries {
            if !seen.insert(e.id.as_str()) {
                return Err(Error::validation(format!("duplicate image id `{}`", e.id)));
            }
            if e.global.len() != dim {
                return Err(Error::validation(format!(
                    "global of `{}` has length {}, expected {dim}",
                    e.id,
                    e.global.len()
                )));
            }
            let norm = e.global.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
            if !((norm - 1.0).abs() <= UNIT_NORM_TOL) {
                return Err(Error::validation(format!(
                    "global of `{}` has norm {norm}, expected 1",
                    e.id
                )));
            }
            globals.extend_from_slice(&e.global);
        }
        Ok(DescriptorIndex { entries, globals, dim })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[ImageDescriptor] {
        &self.entries
    }

    pub fn entry(&self, i: usize) -> &ImageDescriptor {
        &self.entries[i]
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.id == id)
    }

    fn global(&self, i: usize) -> &[f32] {
        &self.globals[i * self.dim..(i + 1) * self.dim]
    }

    /// The `k` nearest globals by Euclidean distance, ascending, ties in
    /// insertion order.
    pub fn global_topk(&self, query: &[f32], k: usize) -> Result<Vec<Candidate>> {
        if k == 0 {
            return Err(Error::config("top-K needs K >= 1"));
        }
        if self.is_empty() {
            return Ok(Vec::new());
        }
        if query.len() != self.dim {
            return Err(Error::shape(format!(
                "query global has length {}, index expects {}",
                query.len(),
                self.dim
            )));
        }
        let mut scored: Vec<(usize, f64)> = (0..self.len())
            .map(|i| {
                let d2: f64 = self
                    .global(i)
                    .iter()
                    .zip(query)
                    .map(|(&a, &b)| {
                        let d = a as f64 - b as f64;
                        d * d
                    })
                    .sum();
                (i, d2.sqrt())
            })
            .collect();
        scored.sort_by(|x, y| x.1.total_cmp(&y.1).then(x.0.cmp(&y.0)));
        scored.truncate(k);
        Ok(scored
            .into_iter()
            .map(|(i, distance)| Candidate { id: self.entries[i].id.clone(), entry: i, distance })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregate::KeyPatches;

    fn desc(id: &str, global: Vec<f32>) -> ImageDescriptor {
        ImageDescriptor { id: id.into(), rows: 1, cols: 1, global, keys: KeyPatches::default() }
    }

    #[test]
    fn empty_index_answers_empty() {
        let idx = DescriptorIndex::build(vec![]).unwrap();
        assert!(idx.global_topk(&[1.0, 0.0], 5).unwrap().is_empty());
    }

    #[test]
    fn ids_round_trip_and_exact_match_first() {
        let idx = DescriptorIndex::build(vec![
            desc("a", vec![1.0, 0.0]),
            desc("b", vec![0.0, 1.0]),
            desc("c", vec![0.6, 0.8]),
        ])
        .unwrap();
        let ids: Vec<_> = idx.entries().iter().map(|e| e.id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
        let top = idx.global_topk(&[0.0, 1.0], 10).unwrap();
        assert_eq!(top.len(), 3);
        assert_eq!(top[0].id, "b");
        assert_eq!(top[0].distance, 0.0);
    }

    #[test]
    fn ties_keep_insertion_order() {
        let idx = DescriptorIndex::build(vec![desc("x", vec![0.0, 1.0]), desc("y", vec![0.0, -1.0])]).unwrap();
        let top = idx.global_topk(&[1.0, 0.0], 2).unwrap();
        assert_eq!(top[0].id, "x");
        assert_eq!(top[0].distance, top[1].distance);
    }

    #[test]
    fn rejects_bad_entries() {
        assert!(matches!(
            DescriptorIndex::build(vec![desc("a", vec![0.5, 0.0])]),
            Err(Error::Validation(_))
        ));
        assert!(DescriptorIndex::build(vec![desc("a", vec![1.0, 0.0]), desc("a", vec![0.0, 1.0])]).is_err());
        let idx = DescriptorIndex::build(vec![desc("a", vec![1.0, 0.0])]).unwrap();
        assert!(idx.global_topk(&[1.0, 0.0], 0).is_err());
    }
}
