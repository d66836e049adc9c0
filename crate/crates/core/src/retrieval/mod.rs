//! Two-stage retrieval: exact global nearest neighbors, spatial re-ranking,
//! and the evaluation metrics.

mod index;
mod memory;
mod metrics;
mod rerank;

pub use index::{tag_map, Candidate, DescriptorIndex, PlaceTag, Pose, TagMap, UNIT_NORM_TOL};
pub use memory::{memory_report, Footprint, MemoryReport, ID_FIELD_BYTES, RECORD_HEADER_BYTES};
pub use metrics::{
    pose_error, pose_recall, recall_at_n, PoseRecallReport, PoseTolerance, RecallReport,
    DEFAULT_POSE_TOLERANCES, DEFAULT_RADIUS_M, DEFAULT_RECALL_NS,
};
pub use rerank::{rerank, run_query, QueryOutcome, ScoredCandidate, DEFAULT_TOPK};
