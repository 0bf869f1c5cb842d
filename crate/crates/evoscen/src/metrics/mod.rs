//! Evaluation metrics: behavioral fidelity, test efficiency, scenario
//! complexity and diversity, aggregated into a report.

pub mod complexity;
pub mod fidelity;

use serde::{Deserialize, Serialize};

pub use complexity::{
    area10_of, area8_of, complexity, complexity_act, complexity_pos, diversity, efficiency,
    model_complexity, ComplexityBreakdown, ComplexityConfig, DiversityReport,
};
pub use fidelity::{
    behavior_distributions, behavior_distributions_from_csv, histogram_svg, js_divergence,
    record_distributions, BehaviorDistributions, Histogram, SMOOTHING_EPS,
};

/// Aggregated evaluation report; fidelity entries stay `None` when no
/// reference dataset was supplied.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rounds: u64,
    pub crash_count: u64,
    pub near_crash_count: u64,
    pub js_velocity: Option<f64>,
    pub js_lane_change_ttc: Option<f64>,
    pub efficiency: f64,
    pub mean_complexity: f64,
    pub degenerate_complexity_records: u64,
    pub diversity: DiversityReport,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        // BTreeMap/BTreeSet fields keep this byte-deterministic.
        serde_json::to_string_pretty(self).expect("report serialization")
    }
}
