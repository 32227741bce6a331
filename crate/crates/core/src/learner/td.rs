//! Temporal-difference machinery shared by the per-asset and joint learners.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::exploratory::ExploratoryConfig;

/// Optimizer settings of a learner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepSizes {
    /// Per-parameter gradient-descent step sizes for `ψ1..ψ4`.
    pub psi: [f64; 4],
    /// Gradient-ascent step size for the per-asset mean parameter `φ3`.
    pub phi: f64,
    /// Gradient steps on `ψ` per update.
    pub inner_steps: usize,
    /// Step halvings tried before an inner step is abandoned.
    pub max_backtracks: usize,
}

impl Default for StepSizes {
    fn default() -> Self {
        Self {
            psi: [1e-6, 1e-6, 1e-2, 1e-2],
            phi: 1e-4,
            inner_steps: 10,
            max_backtracks: 20,
        }
    }
}

impl StepSizes {
    pub fn validate(&self) -> Result<()> {
        let ok = self
            .psi
            .iter()
            .chain([&self.phi])
            .all(|e| e.is_finite() && *e >= 0.0);
        if !ok {
            return Err(invalid("step sizes must be finite and nonnegative"));
        }
        Ok(())
    }
}

/// `v(t, w; ψ) = −γ e^{−ψ2 (T − t)} (w − ψ1/(2γ))² + ψ3 + (λ/2) ψ4`.
pub fn parameterized_value(psi: &[f64; 4], cfg: &ExploratoryConfig, t: f64, w: f64) -> f64 {
    let gap = w - psi[0] / (2.0 * cfg.gamma);
    -cfg.gamma * (-psi[1] * (cfg.horizon - t)).exp() * gap * gap
        + psi[2]
        + 0.5 * cfg.lambda * psi[3]
}

fn value_gradient(psi: &[f64; 4], cfg: &ExploratoryConfig, t: f64, w: f64) -> [f64; 4] {
    let remaining = cfg.horizon - t;
    let decay = (-psi[1] * remaining).exp();
    let gap = w - psi[0] / (2.0 * cfg.gamma);
    [
        decay * gap,
        cfg.gamma * remaining * decay * gap * gap,
        1.0,
        0.5 * cfg.lambda,
    ]
}

/// `∂v/∂w`.
pub(crate) fn value_slope(psi: &[f64; 4], cfg: &ExploratoryConfig, t: f64, w: f64) -> f64 {
    -2.0 * cfg.gamma * (-psi[1] * (cfg.horizon - t)).exp() * (w - psi[0] / (2.0 * cfg.gamma))
}

/// Sampled transitions from `(t, w)`: next wealths under the sampling
/// policy and that policy's entropy.
#[derive(Debug, Clone)]
pub(crate) struct Transition<'a> {
    pub cfg: &'a ExploratoryConfig,
    pub t: f64,
    pub dt: f64,
    pub w: f64,
    pub next: Vec<f64>,
    pub entropy: f64,
}

impl Transition<'_> {
    /// `δ = mean_k (v(t + Δt, W^k; ψ) − v(t, W; ψ̄)) / Δt + λ h`.
    pub fn residual(&self, psi: &[f64; 4], psi_bar: &[f64; 4]) -> f64 {
        let now = parameterized_value(psi_bar, self.cfg, self.t, self.w);
        let t_next = self.t + self.dt;
        let m = self.next.len() as f64;
        let mean_next: f64 = self
            .next
            .iter()
            .map(|&w| parameterized_value(psi, self.cfg, t_next, w))
            .sum::<f64>()
            / m;
        (mean_next - now) / self.dt + self.cfg.lambda * self.entropy
    }

    /// `L = (Δt/2) δ²`.
    pub fn loss(&self, psi: &[f64; 4], psi_bar: &[f64; 4]) -> f64 {
        let d = self.residual(psi, psi_bar);
        0.5 * self.dt * d * d
    }

    fn loss_gradient(&self, psi: &[f64; 4], psi_bar: &[f64; 4]) -> [f64; 4] {
        let d = self.residual(psi, psi_bar);
        let t_next = self.t + self.dt;
        let m = self.next.len() as f64;
        let mut g = [0.0; 4];
        for &w in &self.next {
            for (gi, vi) in g.iter_mut().zip(value_gradient(psi, self.cfg, t_next, w)) {
                *gi += vi;
            }
        }
        // ∂L/∂ψ = Δt δ ∂δ/∂ψ and ∂δ/∂ψ = mean_k ∂v/∂ψ / Δt.
        g.map(|x| d * x / m)
    }
}

/// Outcome of one learner update.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UpdateReport {
    /// TD loss before and after the `ψ` descent.
    pub loss_before: f64,
    pub loss_after: f64,
    /// Inner steps that were accepted.
    pub accepted_steps: usize,
    /// A non-finite gradient or parameter was encountered and discarded.
    pub rejected: bool,
}

/// `inner_steps` gradient steps on `ψ` with backtracking: a step is halved
/// until the loss does not increase, so every accepted step is a descent step.
pub(crate) fn descend(
    psi: [f64; 4],
    psi_bar: &[f64; 4],
    transition: &Transition,
    steps: &StepSizes,
) -> ([f64; 4], UpdateReport) {
    let mut report = UpdateReport {
        loss_before: transition.loss(&psi, psi_bar),
        ..UpdateReport::default()
    };
    let mut current = psi;
    let mut loss = report.loss_before;
    for _ in 0..steps.inner_steps {
        let grad = transition.loss_gradient(&current, psi_bar);
        if !grad.iter().all(|g| g.is_finite()) || !loss.is_finite() {
            log::warn!(
                "non-finite TD gradient at t = {}; step rejected",
                transition.t
            );
            report.rejected = true;
            break;
        }
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..=steps.max_backtracks {
            let candidate: [f64; 4] =
                std::array::from_fn(|k| current[k] - scale * steps.psi[k] * grad[k]);
            let cand_loss = transition.loss(&candidate, psi_bar);
            if cand_loss.is_finite() && cand_loss <= loss {
                current = candidate;
                loss = cand_loss;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            break;
        }
        report.accepted_steps += 1;
    }
    report.loss_after = loss;
    (current, report)
}

/// Loss value and simulated next wealths of one TD evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct TdLoss {
    pub loss: f64,
    pub residual: f64,
    pub next_wealth: Vec<f64>,
}

pub(crate) fn check_step(dt: f64, samples: usize, noise: usize) -> Result<()> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(invalid("time step must be positive"));
    }
    if samples == 0 {
        return Err(invalid("TD update needs at least one return sample"));
    }
    if samples != noise {
        return Err(invalid(format!(
            "{samples} return samples but {noise} policy draws"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ExploratoryConfig {
        ExploratoryConfig::new(1.0, 1.5, 1.0, 1.0 / 12.0).unwrap()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let cfg = cfg();
        let tr = Transition {
            cfg: &cfg,
            t: 0.02,
            dt: 1.0 / 252.0,
            w: 1.05,
            next: vec![1.0, 1.1, 0.97],
            entropy: -1.3,
        };
        let psi = [4.05, 0.59, 2.7, -0.4];
        let bar = [4.0, 0.6, 2.8, -0.3];
        let g = tr.loss_gradient(&psi, &bar);
        for k in 0..4 {
            let h = 1e-6;
            let mut up = psi;
            up[k] += h;
            let mut dn = psi;
            dn[k] -= h;
            let fd = (tr.loss(&up, &bar) - tr.loss(&dn, &bar)) / (2.0 * h);
            assert!(
                (fd - g[k]).abs() < 1e-6 * (1.0 + fd.abs()),
                "k={k} fd={fd} g={}",
                g[k]
            );
        }
    }

    #[test]
    fn descent_never_increases_loss() {
        let cfg = cfg();
        let tr = Transition {
            cfg: &cfg,
            t: 0.0,
            dt: 1.0 / 252.0,
            w: 1.0,
            next: vec![1.02, 0.99],
            entropy: 0.4,
        };
        let steps = StepSizes {
            psi: [10.0, 10.0, 10.0, 10.0],
            ..StepSizes::default()
        };
        let (psi, report) = descend([4.0, 0.5, 2.0, 0.0], &[4.0, 0.5, 2.0, 0.0], &tr, &steps);
        assert!(report.loss_after <= report.loss_before);
        assert!(psi.iter().all(|p| p.is_finite()));
    }
}
