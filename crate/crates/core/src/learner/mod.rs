//! Data-driven learners: per-asset excess returns, the joint average
//! profitability, and the online soft actor-critic loop that trades on them.

mod asset;
mod joint;
mod online;
mod study;
mod td;

pub use asset::{td_loss_1d, update_asset_learner, AssetLearnerState};
pub use joint::{td_loss_joint, update_joint_learner, JointLearnerState};
pub use online::{run_online_sac, OnlineConfig, OnlineRun, TraceRow};
pub use study::{
    decile_mean, finite_std, run_convergence_study, EpisodeErrors, StudyConfig, StudyResult,
};
pub use td::{parameterized_value, StepSizes, TdLoss, UpdateReport};

use crate::exploratory::ExploratoryConfig;

/// `ln(φ1 − 2γw⁰)/T`, or `None` when `φ1 ≤ 2γw⁰`.
pub(crate) fn k_from_phi1(phi1: f64, cfg: &ExploratoryConfig) -> Option<f64> {
    let excess = phi1 - 2.0 * cfg.gamma * cfg.w0;
    (excess > 0.0 && excess.is_finite()).then(|| excess.ln() / cfg.horizon)
}
