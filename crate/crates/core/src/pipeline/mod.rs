//! Synthetic data, training loops, evaluation, composition and the avatar bundle.

pub mod avatar;
pub mod compose;
pub mod eval;
pub mod run;
pub mod synthetic;
pub mod train;

pub use avatar::{Avatar, PosedAvatar};
pub use compose::{complement, compose, ComposeConfig, ComposeMode};
pub use eval::{evaluate, volumetric_iou, EvalConfig, EvalReport, RegionMetrics};
pub use run::{compare_held_out, evaluate_pose, mean_report, run_pipeline, train_appearance, transfer, PipelineOutput, StageTimes, HANDS};
pub use synthetic::{generate_subject, generate_subject_with, SubjectConfig, SyntheticSubject};
pub use train::{point_metrics, train_geometry, train_geometry_with, PointMetrics, TrainConfig, TrainLog};
