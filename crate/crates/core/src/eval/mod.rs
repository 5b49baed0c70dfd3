//! Motion-generation metrics, split evaluation, embedding projection and the
//! wild-fraction sweep.

pub mod metrics;
pub mod projection;
pub mod report;
pub mod sweep;

pub use metrics::{joints_from_pose, mde, mde_with, mpjpe, mwte, pa_mpjpe, pa_mpjpe_with, Alignment, MdeMode};
pub use projection::{collect_embeddings, project_embeddings, EmbeddingSample, ProjectedPoint, Projection, Source};
pub use report::{eval_motion_generation, evaluate_model, MetricReport, MetricSummary};
pub use sweep::{run_sweep, run_sweep_point, sweep_config, SweepPoint};
