//! Evaluation: landmark remapping, localization and occlusion metrics,
//! detection precision/recall, the occlusion bias sweep and report files.

mod landmark_map;
mod metrics;
mod report;
mod sweep;

pub use landmark_map::{correspondence_table, transfer_occlusion, LandmarkMap};
pub use metrics::{
    average_precision, ced_thresholds, detection_pr, localization_metrics, normalized_error, occlusion_pr, DetectionPr,
    LocalizationReport, PrPoint, DEFAULT_SUCCESS_THRESHOLD,
};
pub use report::{render_overlay, svg_curve, write_csv, Series};
pub use sweep::{
    localize_faces, occlusion_pr_sweep, perturb_occlusion_biases, query_box, score_faces, FaceScores, LocalizedFace, SweepPoint,
};
