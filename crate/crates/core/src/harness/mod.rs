//! Experiment drivers behind the `risloc` CLI: JSON configuration, Monte
//! Carlo sweeps against the bounds, bound contours and result writers.

pub mod config;
pub mod experiments;
pub mod output;

pub use config::{Config, ContourConfig, ExperimentConfig, ProfilePolicy, ScenarioConfig};
pub use experiments::{
    circle_layout, compare_toa_only, crb_contour, no_progress, run_monte_carlo, run_point, simulate_once, sweep_bandwidth, ContourCell,
    Progress, RmseReport, SimulationDump, SweepAxis, SweepPoint, ToaComparisonRow,
};
pub use output::{contour_csv, rmse_csv, toa_comparison_csv, write_atomic, StateDump};
