//! Closed-form policy evaluation, policy improvement and their iteration.
//!
//! Under a Gaussian policy the value is `−I(t)w² + H(t)w + G(t)`, where on a
//! segment with constant `b = a1ᵀ(μ − r)`, `c = a1ᵀΣa1`:
//!
//! - `I' = (2b − c) I`,
//! - `H' = b H + 2(b − c) I a0`,
//! - `G' = −(b H a0 − c I a0² − I e^{a2} tr(ΣA3) + λ h)`,
//!
//! with `I(T) = γ`, `H(T) = τ`, `G(T) = 0`. Because `a0` is a sum of
//! exponentials and `a2` is affine on each segment, all three are solved
//! exactly, and improving a policy keeps it in the same family.

use std::f64::consts::{E, PI};

use super::expsum::{ExpSum, SegmentFn};
use super::policy::{GaussianPolicy, PolicySegment};
use super::ExploratoryConfig;
use crate::curve::merged_grid;
use crate::error::{Error, Result};
use crate::market::MarketModel;

#[derive(Debug, Clone)]
struct ValueSegment {
    i_start: f64,
    i_rate: f64,
    h: ExpSum,
    g_end: f64,
    g_rate: SegmentFn,
}

/// `V(t, w) = −I(t)w² + H(t)w + G(t)` on `[0, T]` with terminal
/// `−γw² + τw`.
#[derive(Debug, Clone)]
pub struct ValueQuadratic {
    grid: Vec<f64>,
    segments: Vec<ValueSegment>,
    tau: f64,
    terminal_mean: Option<f64>,
}

impl ValueQuadratic {
    /// Value with time-invariant coefficients; useful for hand-built inputs
    /// to [`improve_policy`].
    pub fn constant(horizon: f64, i: f64, h: f64, g: f64) -> Self {
        Self {
            grid: vec![0.0, horizon],
            segments: vec![ValueSegment {
                i_start: i,
                i_rate: 0.0,
                h: ExpSum::constant(h),
                g_end: g,
                g_rate: SegmentFn::default(),
            }],
            tau: h,
            terminal_mean: None,
        }
    }

    fn locate(&self, t: f64) -> (usize, f64) {
        let k = self.segments.len();
        let idx = self.grid.partition_point(|&s| s <= t).clamp(1, k) - 1;
        (idx, t - self.grid[idx])
    }

    pub fn horizon(&self) -> f64 {
        *self.grid.last().expect("grid has two or more points")
    }

    /// Times at which the coefficient dynamics change.
    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn i(&self, t: f64) -> f64 {
        let (j, x) = self.locate(t);
        let s = &self.segments[j];
        s.i_start * (s.i_rate * x).exp()
    }

    pub fn h(&self, t: f64) -> f64 {
        let (j, x) = self.locate(t);
        self.segments[j].h.eval(x)
    }

    pub fn g(&self, t: f64) -> f64 {
        let (j, x) = self.locate(t);
        let s = &self.segments[j];
        let len = self.grid[j + 1] - self.grid[j];
        s.g_end + s.g_rate.integral(x, len)
    }

    pub fn value(&self, t: f64, w: f64) -> f64 {
        -self.i(t) * w * w + self.h(t) * w + self.g(t)
    }

    /// The linear terminal coefficient `τ`.
    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// `E[W̃_T]` from `(0, w⁰)` under the evaluated policy, when this value
    /// came from [`evaluate_policy`].
    pub fn expected_terminal_wealth(&self) -> Option<f64> {
        self.terminal_mean
    }
}

/// Policy, market and merged grid restricted to one segment.
struct Piece<'a> {
    start: f64,
    len: f64,
    seg: &'a PolicySegment,
    offset: f64,
    b: f64,
    c: f64,
    trace: f64,
}

fn pieces<'a>(policy: &'a GaussianPolicy, model: &MarketModel, horizon: f64) -> Vec<Piece<'a>> {
    let grid = merged_grid(0.0, horizon, &[policy.grid(), &model.knots()]);
    grid.windows(2)
        .map(|p| {
            let mid = 0.5 * (p[0] + p[1]);
            let (j, _) = policy.locate(mid);
            let seg = &policy.segments()[j];
            let sigma = model.covariance(mid);
            let b = seg.a1.dot(&model.excess_return(mid));
            let c = crate::linalg::quad_form(&seg.a1, &sigma);
            Piece {
                start: p[0],
                len: p[1] - p[0],
                seg,
                offset: p[0] - policy.grid()[j],
                b,
                c,
                trace: (&sigma * &seg.a3).trace(),
            }
        })
        .collect()
}

fn check_inputs(
    policy: &GaussianPolicy,
    cfg: &ExploratoryConfig,
    model: &MarketModel,
) -> Result<()> {
    if policy.n() != model.n() {
        return Err(Error::DimensionMismatch {
            what: "policy",
            expected: model.n(),
            found: policy.n(),
        });
    }
    if (policy.horizon() - cfg.horizon).abs() > 1e-12 * cfg.horizon.max(1.0) {
        return Err(crate::error::invalid(format!(
            "policy horizon {} differs from the problem horizon {}",
            policy.horizon(),
            cfg.horizon
        )));
    }
    Ok(())
}

/// `E[W̃_T]` from `w⁰`: on each segment `m' = b (a0 − m)`.
fn terminal_mean(pieces: &[Piece], w0: f64) -> f64 {
    pieces.iter().fold(w0, |m, p| {
        let a0 = p.seg.a0.shifted(p.offset);
        let decay = (-p.b * p.len).exp();
        m * decay + p.b * decay * a0.times_exp(p.b).integral(0.0, p.len)
    })
}

/// Evaluates `policy` with the terminal coefficient implied by its own
/// expected terminal wealth, `τ = 1 + 2γ E[W̃_T]`.
pub fn evaluate_policy(
    policy: &GaussianPolicy,
    cfg: &ExploratoryConfig,
    model: &MarketModel,
) -> Result<ValueQuadratic> {
    check_inputs(policy, cfg, model)?;
    let ps = pieces(policy, model, cfg.horizon);
    let mean = terminal_mean(&ps, cfg.w0);
    let mut value = backward(&ps, cfg, 1.0 + 2.0 * cfg.gamma * mean)?;
    value.terminal_mean = Some(mean);
    Ok(value)
}

/// Evaluates `policy` against the terminal reward `−γw² + τw` for a given `τ`.
pub fn evaluate_policy_with_terminal(
    policy: &GaussianPolicy,
    cfg: &ExploratoryConfig,
    model: &MarketModel,
    tau: f64,
) -> Result<ValueQuadratic> {
    check_inputs(policy, cfg, model)?;
    let ps = pieces(policy, model, cfg.horizon);
    let mean = terminal_mean(&ps, cfg.w0);
    let mut value = backward(&ps, cfg, tau)?;
    value.terminal_mean = Some(mean);
    Ok(value)
}

fn backward(ps: &[Piece], cfg: &ExploratoryConfig, tau: f64) -> Result<ValueQuadratic> {
    let n = ps[0].seg.a1.len() as f64;
    let lambda = cfg.lambda;
    let entropy_const = 0.5 * n * (2.0 * PI * E).ln();
    let mut segments = Vec::with_capacity(ps.len());
    let (mut i_end, mut h_end, mut g_end) = (cfg.gamma, tau, 0.0);
    for p in ps.iter().rev() {
        let (b, c, len) = (p.b, p.c, p.len);
        let kappa = 2.0 * b - c;
        let d = b - c;
        let i_start = i_end * (-kappa * len).exp();
        let a0 = p.seg.a0.shifted(p.offset);

        // H(x) = e^{bx} [H(0) + Σ_k q_k (e^{ρ_k x} − 1)], the bracket being
        // ∫_0^x 2(b − c) e^{−bu} I(u) a0(u) du.
        let mut q = Vec::with_capacity(a0.terms().len());
        for &(coef, rate) in a0.terms() {
            let rho = rate + d;
            let weight = 2.0 * i_start * coef;
            if rate == 0.0 {
                q.push((weight, rho));
            } else if (rho * len).abs() > 1e-12 {
                q.push((weight * d / rho, rho));
            } else if (weight * d * len).abs() > 1e-14 * (1.0 + weight.abs()) {
                return Err(Error::Degenerate(format!(
                    "resonant exponential rate {rate} in policy evaluation"
                )));
            }
        }
        let bracket_end: f64 = q.iter().map(|(k, r)| k * (r * len).exp_m1()).sum();
        let h_start = h_end * (-b * len).exp() - bracket_end;
        let mut h = ExpSum::term(h_start - q.iter().map(|(k, _)| k).sum::<f64>(), b);
        for &(k, r) in &q {
            h.push(k, b + r);
        }

        let seg = p.seg;
        let mut exp = h.product(&a0).scaled(b);
        exp.add(&a0.product(&a0).times_exp(kappa).scaled(-c * i_start));
        exp.push(
            -i_start * seg.a2_start.exp() * p.trace,
            kappa + seg.a2_slope,
        );
        let g_rate = SegmentFn {
            exp,
            l0: lambda * (entropy_const + 0.5 * (n * seg.a2_start + seg.a3_log_det)),
            l1: 0.5 * lambda * n * seg.a2_slope,
        };
        let g_start = g_end + g_rate.integral(0.0, len);

        segments.push(ValueSegment {
            i_start,
            i_rate: kappa,
            h,
            g_end,
            g_rate,
        });
        i_end = i_start;
        h_end = h_start;
        g_end = g_start;
    }
    segments.reverse();
    let mut grid: Vec<f64> = ps.iter().map(|p| p.start).collect();
    grid.push(ps.last().map(|p| p.start + p.len).unwrap_or(cfg.horizon));
    Ok(ValueQuadratic {
        grid,
        segments,
        tau,
        terminal_mean: None,
    })
}

/// The improved policy `N((H/(2I) − w)Σ⁻¹(μ − r), (λ/(2I))Σ⁻¹)`.
///
/// Fails with [`Error::NotConcave`] if `I ≤ 0` anywhere.
pub fn improve_policy(
    value: &ValueQuadratic,
    cfg: &ExploratoryConfig,
    model: &MarketModel,
) -> Result<GaussianPolicy> {
    let grid = merged_grid(0.0, value.horizon(), &[value.grid(), &model.knots()]);
    let mut segments = Vec::with_capacity(grid.len() - 1);
    for p in grid.windows(2) {
        let mid = 0.5 * (p[0] + p[1]);
        let (j, offset) = value.locate(mid);
        let offset = offset - (mid - p[0]);
        let vs = &value.segments[j];
        let i_start = vs.i_start * (vs.i_rate * offset).exp();
        for &t in &[p[0], p[1]] {
            let i = vs.i_start * (vs.i_rate * (t - value.grid[j])).exp();
            if !(i > 0.0 && i.is_finite()) {
                return Err(Error::NotConcave { t, curvature: i });
            }
        }
        let a0 =
            vs.h.shifted(offset)
                .times_exp(-vs.i_rate)
                .scaled(0.5 / i_start);
        let sigma_inv = model.inverse_covariance(mid);
        segments.push(PolicySegment {
            a0,
            a1: model.merton_direction(mid),
            a2_start: (cfg.lambda / (2.0 * i_start)).ln(),
            a2_slope: -vs.i_rate,
            a3_log_det: crate::linalg::log_det_spd(&sigma_inv, "inverse covariance")?,
            a3: sigma_inv,
        });
    }
    GaussianPolicy::from_segments(grid, segments)
}

/// `1 − e^{−K(0,T) T}`, the contraction factor of the `τ` recursion.
pub fn contraction_factor(k0: f64, horizon: f64) -> f64 {
    -(-k0 * horizon).exp_m1()
}

/// Trajectory of an evaluate/improve iteration.
#[derive(Debug, Clone)]
pub struct PolicyIteration {
    /// `P_0, P_1, …` (initial policy first).
    pub policies: Vec<GaussianPolicy>,
    /// `V^{P_0}, V^{P_1}, …` each with its own `τ`.
    pub values: Vec<ValueQuadratic>,
    /// `V^{P_{m+1}}` evaluated with the terminal `τ^{P_m}` of its predecessor,
    /// which is the value that dominates `V^{P_m}`.
    pub same_terminal_values: Vec<ValueQuadratic>,
    /// `τ^{P_0}, τ^{P_1}, …`.
    pub taus: Vec<f64>,
    pub converged: bool,
    /// `e^{K(0,T) T} + 2γw⁰`, the limit predicted by the closed form.
    pub target_tau: f64,
}

impl PolicyIteration {
    pub fn final_policy(&self) -> &GaussianPolicy {
        self.policies
            .last()
            .expect("iteration keeps the initial policy")
    }

    pub fn final_tau(&self) -> f64 {
        *self.taus.last().expect("iteration keeps the initial tau")
    }

    /// Number of improvement steps performed.
    pub fn iterations(&self) -> usize {
        self.taus.len() - 1
    }

    /// `|τ_final − (e^{K(0,T) T} + 2γw⁰)|`.
    pub fn limit_error(&self) -> f64 {
        (self.final_tau() - self.target_tau).abs()
    }

    pub fn matches_limit(&self, tol: f64) -> bool {
        self.limit_error() < tol
    }
}

/// Alternates evaluation and improvement from `initial` until successive
/// `τ` differ by less than `tol`, or `max_iter` improvements were made.
pub fn policy_iterate(
    initial: &GaussianPolicy,
    cfg: &ExploratoryConfig,
    model: &MarketModel,
    tol: f64,
    max_iter: usize,
) -> Result<PolicyIteration> {
    if !(tol > 0.0) {
        return Err(crate::error::invalid("tolerance must be positive"));
    }
    let a = model.profitability_curve();
    let k0 = a.integral(0.0, cfg.horizon) / cfg.horizon;
    let mut out = PolicyIteration {
        policies: vec![initial.clone()],
        values: vec![evaluate_policy(initial, cfg, model)?],
        same_terminal_values: Vec::new(),
        taus: Vec::new(),
        converged: false,
        target_tau: crate::mv::tau_from_k(k0, cfg.horizon, cfg.gamma, cfg.w0),
    };
    out.taus.push(out.values[0].tau());
    for _ in 0..max_iter {
        let last = out.values.last().expect("non-empty");
        let next = improve_policy(last, cfg, model)?;
        let fixed = evaluate_policy_with_terminal(&next, cfg, model, last.tau())?;
        let value = evaluate_policy(&next, cfg, model)?;
        let step = (value.tau() - last.tau()).abs();
        log::debug!(
            "policy iteration {}: tau {} (step {step:e})",
            out.taus.len(),
            value.tau()
        );
        out.taus.push(value.tau());
        out.policies.push(next);
        out.same_terminal_values.push(fixed);
        out.values.push(value);
        if step < tol {
            out.converged = true;
            break;
        }
    }
    if !out.converged {
        log::warn!("policy iteration stopped after {max_iter} steps without converging");
    }
    Ok(out)
}
