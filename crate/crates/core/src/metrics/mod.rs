//! Rotated IoU, AP/AOS, and stratified evaluation reports.

pub mod ap;
pub mod iou;
pub mod monte_carlo;
pub mod report;

pub use ap::{average_precision, ApResult, Interpolation, IouMode, SampleBoxes, ScoredBox};
pub use iou::{iou_3d, rotated_iou_bev};
pub use report::{
    evaluate, evaluate_file, load_ground_truth, read_predictions, write_predictions, ClassScore,
    DepthReport, EvalConfig, EvalReport, IouThresholds, PredictionRecord, RegionReport,
};
