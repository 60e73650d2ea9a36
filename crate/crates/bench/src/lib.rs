//! Shared fixtures for the benchmarks.

use rrnn_core::synthgen::{make_suite_with, SuiteConfig};
use rrnn_core::trajdata::{SequenceWindow, StandardizationStats, WindowConfig};

/// Standardized windows from a small synthetic `approach` suite.
pub fn approach_windows(t_obs: usize, t_pred: usize) -> (Vec<SequenceWindow>, StandardizationStats) {
    let bundle = make_suite_with(11, &SuiteConfig::small()).expect("suite generates");
    let dataset = bundle.get("approach").expect("approach suite");
    let folds = dataset.folds.training_folds();
    let stats = dataset.fit_stats(&folds).expect("stats");
    let (windows, _) = dataset.windows(&folds, &stats, &WindowConfig::new(t_obs, t_pred)).expect("windows");
    (windows, stats)
}
