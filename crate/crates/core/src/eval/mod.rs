//! Metrics, trend analysis and the benchmark harness.

pub mod bench;
pub mod metrics;
pub mod plot;
pub mod trend;

use sha2::{Digest, Sha256};

pub use bench::{
    aggregate, read_csv, run_benchmark, run_benchmark_at, run_method, summary_table, write_csv, write_report,
    Aggregate, BenchOptions, BenchRecord, Method, MethodConfigs, MethodOutput, Provenance, RunReport,
};
pub use metrics::{deform_landmarks, interpolate_field, landmark_error, mde, LandmarkError};
pub use plot::{render_plots, scatter_svg, Series};
pub use trend::{spearman, trend_analysis, TrendPoint, TrendReport};

/// Lower-case hex SHA-256 digest.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
