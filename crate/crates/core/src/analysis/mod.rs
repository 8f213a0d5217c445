//! Privacy transfer to the oracles, stealthiness, adaptiveness and the budget sweep.

mod adaptiveness;
mod detector;
mod report;
mod stats;
mod sweep;
mod transfer;

pub use adaptiveness::{adaptiveness, distance_matrix, distribution_distance, selection_distributions, AdaptivenessConfig, AdaptivenessMatrix};
pub use detector::{chunk_matrix, persona_matrix, stealth_eval, train_detector, train_detector_on, DetectorConfig, DetectorModel, DetectorReport, DetectorSample, StealthResult};
pub use report::{write_adaptiveness_csv, write_personalization_csv, write_privacy_csv, write_stealth_csv, write_sweep_csv, PrivacyEntry, Report};
pub use stats::{mean, one_sided_t_test, std_dev, std_error};
pub use sweep::{budget_sweep, SweepConfig, SweepRow, ALPHA_GRID};
pub use transfer::{evaluation_personas, persona_metrics, summarize, transferability_eval, EvalConfig, MetricSummary, PersonaMetrics, TransferReport};
