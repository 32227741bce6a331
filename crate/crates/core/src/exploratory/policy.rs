//! Gaussian exploratory policies in canonical `(a0, a1, a2, A3)` form.

use nalgebra::{DMatrix, DVector};

use super::expsum::ExpSum;
use super::ExploratoryConfig;
use crate::error::{invalid, Error, Result};
use crate::linalg;
use crate::market::MarketModel;
use crate::mv::Profitability;

/// Parameters on one segment of the policy grid, in local time
/// `x = t − segment start`: `a0(x)` is a sum of exponentials, `a2(x)` is
/// affine, `a1` and `A3` are constant.
#[derive(Debug, Clone)]
pub(crate) struct PolicySegment {
    pub a0: ExpSum,
    pub a1: DVector<f64>,
    pub a2_start: f64,
    pub a2_slope: f64,
    pub a3: DMatrix<f64>,
    pub a3_log_det: f64,
}

impl PolicySegment {
    fn new(
        a0: ExpSum,
        a1: DVector<f64>,
        a2_start: f64,
        a2_slope: f64,
        a3: DMatrix<f64>,
    ) -> Result<Self> {
        let n = a1.len();
        if a3.shape() != (n, n) {
            return Err(Error::DimensionMismatch {
                what: "policy matrix A3",
                expected: n,
                found: a3.nrows(),
            });
        }
        linalg::ensure_symmetric(&a3)?;
        let a3_log_det = linalg::log_det_spd(&a3, "policy matrix A3")?;
        let finite = a1.iter().all(|v| v.is_finite())
            && a2_start.is_finite()
            && a2_slope.is_finite()
            && a0
                .terms()
                .iter()
                .all(|(c, r)| c.is_finite() && r.is_finite());
        if !finite {
            return Err(invalid("policy parameters must be finite"));
        }
        Ok(Self {
            a0,
            a1,
            a2_start,
            a2_slope,
            a3,
            a3_log_det,
        })
    }
}

/// `N((a0(t) − w)·a1(t), e^{a2(t)}·A3(t))` on `[0, T]`.
#[derive(Debug, Clone)]
pub struct GaussianPolicy {
    grid: Vec<f64>,
    segments: Vec<PolicySegment>,
}

impl GaussianPolicy {
    /// Time-invariant policy on `[0, horizon]`.
    pub fn constant(
        horizon: f64,
        a0: f64,
        a1: DVector<f64>,
        a2: f64,
        a3: DMatrix<f64>,
    ) -> Result<Self> {
        Self::piecewise(vec![0.0, horizon], vec![a0], vec![a1], vec![a2], vec![a3])
    }

    /// Piecewise-constant parameters on `grid` (`grid.len() = segments + 1`).
    pub fn piecewise(
        grid: Vec<f64>,
        a0: Vec<f64>,
        a1: Vec<DVector<f64>>,
        a2: Vec<f64>,
        a3: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        let k = grid.len().saturating_sub(1);
        if k == 0 || a0.len() != k || a1.len() != k || a2.len() != k || a3.len() != k {
            return Err(invalid(
                "policy grid needs one parameter set per segment and at least one segment",
            ));
        }
        let segments = a0
            .into_iter()
            .zip(a1)
            .zip(a2)
            .zip(a3)
            .map(|(((a0, a1), a2), a3)| PolicySegment::new(ExpSum::constant(a0), a1, a2, 0.0, a3))
            .collect::<Result<Vec<_>>>()?;
        Self::from_segments(grid, segments)
    }

    pub(crate) fn from_segments(grid: Vec<f64>, segments: Vec<PolicySegment>) -> Result<Self> {
        if grid.len() != segments.len() + 1 || grid[0] != 0.0 {
            return Err(invalid(
                "policy grid must start at 0 with one more point than segments",
            ));
        }
        if !grid.windows(2).all(|p| p[1] > p[0]) || !grid.iter().all(|t| t.is_finite()) {
            return Err(invalid(
                "policy grid must be finite and strictly increasing",
            ));
        }
        let n = segments[0].a1.len();
        if n == 0 || segments.iter().any(|s| s.a1.len() != n) {
            return Err(invalid(
                "policy dimension must be positive and the same on every segment",
            ));
        }
        Ok(Self { grid, segments })
    }

    /// The optimal exploratory policy of the market, in canonical form:
    /// `a0 = τ/(2γ)`, `a1 = Σ⁻¹(μ − r)`, `A3 = Σ⁻¹`,
    /// `a2(t) = ln(λ/(2γ)) + ∫_t^T A`.
    pub fn optimal(cfg: &ExploratoryConfig, model: &MarketModel) -> Result<Self> {
        let prof = Profitability::new(model.profitability_curve(), cfg.gamma, cfg.w0, cfg.horizon)?;
        let grid = model.grid(0.0, cfg.horizon);
        let base = (cfg.lambda / (2.0 * cfg.gamma)).ln();
        let segments = grid
            .windows(2)
            .map(|p| {
                let mid = 0.5 * (p[0] + p[1]);
                PolicySegment::new(
                    ExpSum::constant(prof.tau() / (2.0 * cfg.gamma)),
                    model.merton_direction(mid),
                    base + prof.remaining_integral(p[0]),
                    -model.profitability(mid),
                    model.inverse_covariance(mid),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_segments(grid, segments)
    }

    pub fn n(&self) -> usize {
        self.segments[0].a1.len()
    }

    pub fn horizon(&self) -> f64 {
        *self.grid.last().expect("grid has two or more points")
    }

    /// Times at which the parameters may change, including `0` and `T`.
    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub(crate) fn segments(&self) -> &[PolicySegment] {
        &self.segments
    }

    /// Segment containing `t` and the offset of `t` into it. Times at or past
    /// the horizon belong to the last segment.
    pub(crate) fn locate(&self, t: f64) -> (usize, f64) {
        let k = self.segments.len();
        let idx = self.grid.partition_point(|&s| s <= t).clamp(1, k) - 1;
        (idx, t - self.grid[idx])
    }

    pub fn a0(&self, t: f64) -> f64 {
        let (j, x) = self.locate(t);
        self.segments[j].a0.eval(x)
    }

    pub fn a1(&self, t: f64) -> &DVector<f64> {
        &self.segments[self.locate(t).0].a1
    }

    pub fn a2(&self, t: f64) -> f64 {
        let (j, x) = self.locate(t);
        self.segments[j].a2_start + self.segments[j].a2_slope * x
    }

    pub fn a3(&self, t: f64) -> &DMatrix<f64> {
        &self.segments[self.locate(t).0].a3
    }

    /// Mean allocation `(a0(t) − w)·a1(t)`.
    pub fn mean(&self, t: f64, w: f64) -> DVector<f64> {
        self.a1(t) * (self.a0(t) - w)
    }

    /// Covariance `e^{a2(t)}·A3(t)`.
    pub fn covariance(&self, t: f64) -> DMatrix<f64> {
        self.a3(t) * self.a2(t).exp()
    }

    /// Differential entropy of the policy at time `t`.
    pub fn entropy(&self, t: f64) -> f64 {
        let (j, _) = self.locate(t);
        let n = self.n() as f64;
        0.5 * n * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln()
            + 0.5 * (n * self.a2(t) + self.segments[j].a3_log_det)
    }
}
