use nalgebra::Rotation3;
use serde::{Deserialize, Serialize};

use super::index::{Pose, TagMap};
use super::rerank::QueryOutcome;
use crate::error::{Error, Result};

/// Default localization radius, meters.
pub const DEFAULT_RADIUS_M: f64 = 25.0;
pub const DEFAULT_RECALL_NS: [usize; 4] = [1, 5, 10, 20];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseTolerance {
    pub meters: f64,
    pub degrees: f64,
}

pub const DEFAULT_POSE_TOLERANCES: [PoseTolerance; 3] = [
    PoseTolerance { meters: 0.25, degrees: 2.0 },
    PoseTolerance { meters: 0.5, degrees: 5.0 },
    PoseTolerance { meters: 5.0, degrees: 10.0 },
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecallReport {
    pub ns: Vec<usize>,
    pub recalls: Vec<f64>,
    pub radius_m: f64,
    pub queries: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseRecallReport {
    pub tolerances: Vec<PoseTolerance>,
    pub recalls: Vec<f64>,
    pub queries: usize,
}

fn lookup<'a>(tags: &'a TagMap, id: &str) -> Result<&'a super::index::PlaceTag> {
    tags.get(id)
        .ok_or_else(|| Error::validation(format!("no position for `{id}`")))
}

/// Fraction of queries whose top-N holds a reference within `radius_m`.
pub fn recall_at_n(
    outcomes: &[QueryOutcome],
    tags: &TagMap,
    radius_m: f64,
    ns: &[usize],
) -> Result<RecallReport> {
    if ns.is_empty() || ns.contains(&0) {
        return Err(Error::config("recall cut-offs must be positive"));
    }
    // Rank of the first correct reference per query, if any.
    let mut first_hit = Vec::with_capacity(outcomes.len());
    for o in outcomes {
        let q = lookup(tags, &o.query)?;
        let mut hit = None;
        for (rank, id) in o.ranking().into_iter().enumerate() {
            if hit.is_none() && q.planar_distance(lookup(tags, id)?) <= radius_m {
                hit = Some(rank);
            }
        }
        first_hit.push(hit);
    }
    let denom = outcomes.len().max(1) as f64;
    let recalls = ns
        .iter()
        .map(|&n| first_hit.iter().filter(|h| h.is_some_and(|r| r < n)).count() as f64 / denom)
        .collect();
    Ok(RecallReport { ns: ns.to_vec(), recalls, radius_m, queries: outcomes.len() })
}

fn rotation(p: &Pose) -> Rotation3<f64> {
    Rotation3::from_euler_angles(p.roll.to_radians(), p.pitch.to_radians(), p.yaw.to_radians())
}

/// Translation distance in meters and relative rotation angle in degrees,
/// the latter in `[0, 180]`.
pub fn pose_error(a: &Pose, b: &Pose) -> (f64, f64) {
    let t = ((a.x - b.x).powi(2) + (a.y - b.y).powi(2) + (a.z - b.z).powi(2)).sqrt();
    let rel = rotation(a).inverse() * rotation(b);
    (t, rel.angle().to_degrees())
}

/// Fraction of queries whose top-1 reference pose lies within each tolerance.
pub fn pose_recall(
    outcomes: &[QueryOutcome],
    tags: &TagMap,
    tolerances: &[PoseTolerance],
) -> Result<PoseRecallReport> {
    let pose_of = |id: &str| -> Result<Pose> {
        lookup(tags, id)?
            .pose
            .ok_or_else(|| Error::validation(format!("no pose for `{id}`")))
    };
    let mut errors = Vec::with_capacity(outcomes.len());
    for o in outcomes {
        let q = pose_of(&o.query)?;
        errors.push(match o.ranking().first() {
            Some(id) => Some(pose_error(&q, &pose_of(id)?)),
            None => None,
        });
    }
    let denom = outcomes.len().max(1) as f64;
    let recalls = tolerances
        .iter()
        .map(|tol| {
            errors
                .iter()
                .filter(|e| e.is_some_and(|(t, r)| t <= tol.meters && r <= tol.degrees))
                .count() as f64
                / denom
        })
        .collect();
    Ok(PoseRecallReport { tolerances: tolerances.to_vec(), recalls, queries: outcomes.len() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retrieval::index::{tag_map, Candidate, PlaceTag};

    fn outcome(q: &str, ranked: &[&str]) -> QueryOutcome {
        QueryOutcome {
            query: q.into(),
            global: ranked
                .iter()
                .enumerate()
                .map(|(i, id)| Candidate { id: id.to_string(), entry: i, distance: i as f64 })
                .collect(),
            reranked: None,
        }
    }

    fn posed(id: &str, x: f64, yaw: f64) -> PlaceTag {
        PlaceTag {
            pose: Some(Pose { x, y: 0.0, z: 0.0, yaw, pitch: 0.0, roll: 0.0 }),
            ..PlaceTag::at(id, x, 0.0)
        }
    }

    #[test]
    fn half_correct_top1() {
        let tags = tag_map(&[
            PlaceTag::at("q0", 0.0, 0.0),
            PlaceTag::at("q1", 100.0, 0.0),
            PlaceTag::at("q2", 200.0, 0.0),
            PlaceTag::at("q3", 300.0, 0.0),
            PlaceTag::at("r0", 1.0, 0.0),
            PlaceTag::at("r1", 101.0, 0.0),
            PlaceTag::at("r2", 201.0, 0.0),
            PlaceTag::at("r3", 301.0, 0.0),
        ])
        .unwrap();
        let all = ["r0", "r1", "r2", "r3"];
        let outs = vec![
            outcome("q0", &["r0", "r1", "r2", "r3"]),
            outcome("q1", &["r1", "r0", "r2", "r3"]),
            outcome("q2", &["r0", "r1", "r2", "r3"]),
            outcome("q3", &["r0", "r1", "r2", "r3"]),
        ];
        let rep = recall_at_n(&outs, &tags, 25.0, &[1, 3, all.len()]).unwrap();
        assert_eq!(rep.recalls, vec![0.5, 0.75, 1.0]);
    }

    #[test]
    fn missing_position_is_validation_error() {
        let tags = tag_map(&[PlaceTag::at("q", 0.0, 0.0)]).unwrap();
        let outs = vec![outcome("q", &["ghost"])];
        assert!(matches!(recall_at_n(&outs, &tags, 25.0, &[1]), Err(Error::Validation(_))));
    }

    #[test]
    fn pose_tolerances_by_arithmetic() {
        let tags = tag_map(&[posed("q", 0.0, 0.0), posed("same", 0.0, 0.0), posed("off", 3.0, 5.0)]).unwrap();
        let same = pose_recall(&[outcome("q", &["same"])], &tags, &DEFAULT_POSE_TOLERANCES).unwrap();
        assert_eq!(same.recalls, vec![1.0, 1.0, 1.0]);
        let off = pose_recall(&[outcome("q", &["off"])], &tags, &DEFAULT_POSE_TOLERANCES).unwrap();
        assert_eq!(off.recalls, vec![0.0, 0.0, 1.0]);
        let (t, r) = pose_error(&posed("a", 0.0, 350.0).pose.unwrap(), &posed("b", 0.0, 10.0).pose.unwrap());
        assert_eq!(t, 0.0);
        assert!((r - 20.0).abs() < 1e-9);
    }

    #[test]
    fn missing_pose_rejected() {
        let tags = tag_map(&[PlaceTag::at("q", 0.0, 0.0), PlaceTag::at("r", 0.0, 0.0)]).unwrap();
        assert!(matches!(
            pose_recall(&[outcome("q", &["r"])], &tags, &DEFAULT_POSE_TOLERANCES),
            Err(Error::Validation(_))
        ));
    }
}
