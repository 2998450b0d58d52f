//! Experiment harness: configuration, the training loop, evaluation,
//! metrics emission, checkpoints, and multi-seed statistics.

pub mod bridge;
pub mod checkpoint;
pub mod config;
pub mod evalrun;
pub mod metrics;
pub mod plotdata;
pub mod rngstream;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, AgentState, LoadedCheckpoint, CHECKPOINT_FILE};
pub use config::{Algorithm, RunConfig};
pub use evalrun::{evaluate, EvalResult};
pub use metrics::{read_metrics, MetricsRecord, MetricsWriter, METRICS_FILE, TIMING_FILE};
pub use plotdata::{emit_plotdata, metric_value, METRIC_NAMES};
pub use train::{train, RunArtifacts, CONFIG_FILE, EPISODE_DUMP_FILE};
