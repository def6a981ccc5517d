// SPDX-License-Identifier: Apache-2.0

//! Layer scans, pre/post alignment evaluation and the paired t-test.

mod report;
mod scan;
mod stats;

pub use report::{build_report, AlignmentReport, PairRow, TABLE1_COLUMNS, TABLE2_COLUMNS};
pub use scan::{evaluate_alignment, scan_layers, Embedder, LayerScanResult};
pub use stats::{
    ln_gamma, mean, paired_t_test, paired_t_test_with, regularized_incomplete_beta, sample_std,
    student_t_cdf, TTest, Tails,
};
