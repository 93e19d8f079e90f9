//! Two-sample statistics and trace analytics.

mod hypothesis;
mod ks;
mod law;
mod mmd;
mod traces;

pub use hypothesis::{bonferroni, chi_square_homogeneity, fisher_exact, label_test, two_sample, Method, TwoSampleResult};
pub use ks::{kolmogorov_q, ks_statistic, ks_test};
pub use law::{total_variation, tv_pmf, EmpiricalLaw};
pub use mmd::{median_heuristic, mmd2, mmd2_unbiased, mmd_permutation_test, scalar_rows};
pub use traces::{firing_rate, steady_state_effect};
