//! Multi-asset market model with discounted geometric Brownian motion dynamics.
//!
//! Each asset follows `dS/S = (μ(t) − r) dt + σ(t) dB` in discounted terms, with
//! a constant correlation matrix `L` between the Brownian drivers. Return rates
//! and volatilities are piecewise-constant curves, so every time integral the
//! rest of the crate needs is an exact finite sum.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::curve::{merged_grid, StepCurve};
use crate::error::{invalid, Error, Result};
use crate::linalg;

/// Ground-truth market dynamics.
#[derive(Debug, Clone)]
pub struct MarketModel {
    rate: f64,
    mu: StepCurve<DVector<f64>>,
    sigma: StepCurve<DVector<f64>>,
    correlation: DMatrix<f64>,
    correlation_factor: DMatrix<f64>,
}

impl MarketModel {
    pub fn new(
        rate: f64,
        mu: StepCurve<DVector<f64>>,
        sigma: StepCurve<DVector<f64>>,
        correlation: DMatrix<f64>,
    ) -> Result<Self> {
        if !rate.is_finite() {
            return Err(invalid("riskless rate must be finite"));
        }
        let n = correlation.nrows();
        if n == 0 {
            return Err(invalid("market needs at least one risky asset"));
        }
        validate_correlation(&correlation)?;
        for m in mu.values() {
            linalg::ensure_len(m, n, "return-rate vector")?;
            if !m.iter().all(|x| x.is_finite()) {
                return Err(invalid("return rates must be finite"));
            }
        }
        for s in sigma.values() {
            linalg::ensure_len(s, n, "volatility vector")?;
            if !s.iter().all(|x| x.is_finite() && *x > 0.0) {
                return Err(invalid("volatilities must be finite and strictly positive"));
            }
        }
        let correlation_factor = linalg::cholesky(&correlation, "correlation matrix")?.unpack();
        Ok(Self {
            rate,
            mu,
            sigma,
            correlation,
            correlation_factor,
        })
    }

    /// Time-homogeneous market from excess returns `μ − r`.
    pub fn stationary(
        rate: f64,
        excess_return: &[f64],
        sigma: &[f64],
        correlation: DMatrix<f64>,
    ) -> Result<Self> {
        let mu =
            DVector::from_iterator(excess_return.len(), excess_return.iter().map(|m| m + rate));
        Self::new(
            rate,
            StepCurve::constant(mu),
            StepCurve::constant(DVector::from_column_slice(sigma)),
            correlation,
        )
    }

    /// Two "typical" stocks: `μ − r = (0.06, 0.08)`, `σ = (0.10, 0.15)`, correlation `rho`.
    pub fn typical_pair(rho: f64) -> Result<Self> {
        Self::stationary(
            0.02,
            &[0.06, 0.08],
            &[0.10, 0.15],
            DMatrix::from_row_slice(2, 2, &[1.0, rho, rho, 1.0]),
        )
    }

    pub fn n(&self) -> usize {
        self.correlation.nrows()
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn correlation(&self) -> &DMatrix<f64> {
        &self.correlation
    }

    pub fn mu_curve(&self) -> &StepCurve<DVector<f64>> {
        &self.mu
    }

    pub fn sigma_curve(&self) -> &StepCurve<DVector<f64>> {
        &self.sigma
    }

    pub fn is_stationary(&self) -> bool {
        self.mu.is_constant() && self.sigma.is_constant()
    }

    pub fn excess_return(&self, t: f64) -> DVector<f64> {
        self.mu.value_at(t).add_scalar(-self.rate)
    }

    pub fn sigma(&self, t: f64) -> &DVector<f64> {
        self.sigma.value_at(t)
    }

    /// `Σ(t) = D L D` with `D = diag σ(t)`.
    pub fn covariance(&self, t: f64) -> DMatrix<f64> {
        scale_correlation(self.sigma(t), &self.correlation)
    }

    pub fn inverse_covariance(&self, t: f64) -> DMatrix<f64> {
        let d_inv = DMatrix::from_diagonal(&self.sigma(t).map(|s| 1.0 / s));
        let l_inv = linalg::spd_inverse(&self.correlation, "correlation matrix")
            .expect("correlation validated at construction");
        &d_inv * l_inv * &d_inv
    }

    /// `Σ(t)⁻¹ (μ(t) − r)` by a triangular solve against the factor of `L`.
    pub fn merton_direction(&self, t: f64) -> DVector<f64> {
        let sigma = self.sigma(t);
        let scaled = self.excess_return(t).component_div(sigma);
        let chol = nalgebra::Cholesky::new(self.correlation.clone())
            .expect("correlation validated at construction");
        chol.solve(&scaled).component_div(sigma)
    }

    /// Current profitability `A(t) = (μ − r)ᵀ Σ⁻¹ (μ − r)`.
    pub fn profitability(&self, t: f64) -> f64 {
        self.merton_direction(t).dot(&self.excess_return(t))
    }

    /// All knots where the parameters may change.
    pub fn knots(&self) -> Vec<f64> {
        let mut k: Vec<f64> = self
            .mu
            .starts()
            .iter()
            .chain(self.sigma.starts())
            .copied()
            .collect();
        k.sort_by(f64::total_cmp);
        k.dedup();
        k
    }

    /// Grid on `[a, b]` on which every parameter is constant.
    pub fn grid(&self, a: f64, b: f64) -> Vec<f64> {
        merged_grid(a, b, &[&self.knots()])
    }

    /// `A(t)` as a step curve.
    pub fn profitability_curve(&self) -> StepCurve<f64> {
        let knots = self.knots();
        let values = knots.iter().map(|&t| self.profitability(t)).collect();
        StepCurve::new(knots, values).expect("knots are sorted and distinct")
    }

    pub(crate) fn correlation_factor(&self) -> &DMatrix<f64> {
        &self.correlation_factor
    }
}

fn scale_correlation(sigma: &DVector<f64>, rho: &DMatrix<f64>) -> DMatrix<f64> {
    let d = DMatrix::from_diagonal(sigma);
    &d * rho * &d
}

fn validate_correlation(rho: &DMatrix<f64>) -> Result<()> {
    linalg::ensure_square(rho, "correlation matrix")?;
    linalg::ensure_symmetric(rho)?;
    for i in 0..rho.nrows() {
        if (rho[(i, i)] - 1.0).abs() > 1e-12 {
            return Err(invalid(format!(
                "correlation diagonal entry {i} is {} (expected 1)",
                rho[(i, i)]
            )));
        }
    }
    if rho.iter().any(|x| x.abs() > 1.0 + 1e-12) {
        return Err(invalid("correlation entries must lie in [-1, 1]"));
    }
    linalg::cholesky(rho, "correlation matrix").map(|_| ())
}

/// Covariance `D L D` and its inverse for volatilities `sigma` and correlation `rho`.
pub fn covariance_from(
    sigma: &DVector<f64>,
    rho: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    validate_correlation(rho)?;
    linalg::ensure_len(sigma, rho.nrows(), "volatility vector")?;
    if !sigma.iter().all(|s| s.is_finite() && *s > 0.0) {
        return Err(invalid("volatilities must be finite and strictly positive"));
    }
    let cov = scale_correlation(sigma, rho);
    let inv = linalg::spd_inverse(&cov, "covariance matrix")?;
    Ok((cov, inv))
}

/// Discounted prices on a time grid plus the per-step simple returns.
#[derive(Debug, Clone, PartialEq)]
pub struct PricePanel {
    names: Vec<String>,
    times: Vec<f64>,
    prices: DMatrix<f64>,
    returns: DMatrix<f64>,
}

impl PricePanel {
    /// `prices` has one row per time point and one column per asset.
    pub fn from_prices(times: Vec<f64>, prices: DMatrix<f64>) -> Result<Self> {
        let names = (1..=prices.ncols()).map(|i| format!("asset_{i}")).collect();
        Self::with_names(names, times, prices)
    }

    pub fn with_names(names: Vec<String>, times: Vec<f64>, prices: DMatrix<f64>) -> Result<Self> {
        if prices.nrows() != times.len() {
            return Err(Error::DimensionMismatch {
                what: "price rows",
                expected: times.len(),
                found: prices.nrows(),
            });
        }
        if names.len() != prices.ncols() || names.is_empty() {
            return Err(Error::DimensionMismatch {
                what: "asset names",
                expected: prices.ncols(),
                found: names.len(),
            });
        }
        if times.len() < 2 {
            return Err(Error::InsufficientData {
                needed: 2,
                found: times.len(),
            });
        }
        for (row, w) in times.windows(2).enumerate() {
            if !(w[1] > w[0]) {
                return Err(Error::Row {
                    row: row + 1,
                    message: format!("time {} does not increase on {}", w[1], w[0]),
                });
            }
        }
        for (row, r) in prices.row_iter().enumerate() {
            if let Some(p) = r.iter().find(|p| !(p.is_finite() && **p > 0.0)) {
                return Err(Error::Row {
                    row,
                    message: format!("price {p} is not strictly positive"),
                });
            }
        }
        let steps = times.len() - 1;
        let returns = DMatrix::from_fn(steps, prices.ncols(), |j, i| {
            prices[(j + 1, i)] / prices[(j, i)] - 1.0
        });
        Ok(Self {
            names,
            times,
            prices,
            returns,
        })
    }

    pub fn n_assets(&self) -> usize {
        self.prices.ncols()
    }

    /// Number of return steps.
    pub fn steps(&self) -> usize {
        self.returns.nrows()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn prices(&self) -> &DMatrix<f64> {
        &self.prices
    }

    pub fn returns(&self) -> &DMatrix<f64> {
        &self.returns
    }

    /// Return vector of step `j` (from `t_j` to `t_{j+1}`).
    pub fn step_return(&self, j: usize) -> DVector<f64> {
        self.returns.row(j).transpose()
    }

    /// Average step length in years.
    pub fn mean_dt(&self) -> f64 {
        (self.times[self.times.len() - 1] - self.times[0]) / self.steps() as f64
    }

    /// Sub-panel covering price rows `start..=end`.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if end <= start || end >= self.times.len() {
            return Err(invalid(format!(
                "invalid panel slice {start}..={end} of {} rows",
                self.times.len()
            )));
        }
        let rows = end - start + 1;
        Self::with_names(
            self.names.clone(),
            self.times[start..=end].to_vec(),
            self.prices.rows(start, rows).into_owned(),
        )
    }

    /// Single-column panel.
    pub fn column(&self, i: usize) -> Result<Self> {
        if i >= self.n_assets() {
            return Err(invalid(format!("no asset column {i}")));
        }
        Self::with_names(
            vec![self.names[i].clone()],
            self.times.clone(),
            DMatrix::from_column_slice(self.prices.nrows(), 1, self.prices.column(i).as_slice()),
        )
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["date".to_string()];
        header.extend(self.names.iter().cloned());
        w.write_record(&header)?;
        for (j, t) in self.times.iter().enumerate() {
            let mut rec = vec![format!("{t}")];
            rec.extend(self.prices.row(j).iter().map(|p| format!("{p}")));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_csv_file(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    /// Reads a panel written by [`PricePanel::write_csv`]; no discounting is applied.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let raw = RawPriceTable::read(input)?;
        Self::with_names(raw.names, raw.times, raw.prices)
    }

    pub fn read_csv_file(path: &Path) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

/// Parsed `date,asset_1,...` table before any discounting.
#[derive(Debug, Clone)]
pub(crate) struct RawPriceTable {
    pub names: Vec<String>,
    pub times: Vec<f64>,
    pub prices: DMatrix<f64>,
}

impl RawPriceTable {
    pub fn read<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(input);
        let header = rdr.headers()?.clone();
        if header.len() < 2 || !header[0].eq_ignore_ascii_case("date") {
            return Err(Error::Row {
                row: 0,
                message: "header must be `date,<asset>,...`".into(),
            });
        }
        let names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let n = names.len();
        let mut dates = Vec::new();
        let mut flat = Vec::new();
        for (k, rec) in rdr.records().enumerate() {
            let row = k + 1;
            let rec = rec.map_err(|e| Error::Row {
                row,
                message: e.to_string(),
            })?;
            if rec.len() != n + 1 {
                return Err(Error::Row {
                    row,
                    message: format!("expected {} fields, found {}", n + 1, rec.len()),
                });
            }
            dates.push((row, rec[0].to_string()));
            for (i, field) in rec.iter().skip(1).enumerate() {
                if field.is_empty() {
                    return Err(Error::Row {
                        row,
                        message: format!("missing value for {}", names[i]),
                    });
                }
                let p: f64 = field.parse().map_err(|_| Error::Row {
                    row,
                    message: format!("unparsable price `{field}` for {}", names[i]),
                })?;
                if !(p.is_finite() && p > 0.0) {
                    return Err(Error::Row {
                        row,
                        message: format!("non-positive price {p} for {}", names[i]),
                    });
                }
                flat.push(p);
            }
        }
        let times = parse_times(&dates)?;
        let prices = DMatrix::from_row_slice(times.len(), n, &flat);
        Ok(Self {
            names,
            times,
            prices,
        })
    }
}

/// Dates are either decimal years or ISO `YYYY-MM-DD`; the latter map to
/// actual/actual year fractions from the first row.
fn parse_times(dates: &[(usize, String)]) -> Result<Vec<f64>> {
    let mut times = Vec::with_capacity(dates.len());
    let iso = dates
        .first()
        .map(|(_, d)| d.parse::<f64>().is_err())
        .unwrap_or(false);
    let mut origin = None;
    for (row, d) in dates {
        let t = if iso {
            let date =
                chrono::NaiveDate::parse_from_str(d, "%Y-%m-%d").map_err(|_| Error::Row {
                    row: *row,
                    message: format!("unparsable date `{d}`"),
                })?;
            let frac = year_fraction(date);
            frac - *origin.get_or_insert(frac)
        } else {
            d.parse::<f64>().map_err(|_| Error::Row {
                row: *row,
                message: format!("unparsable time `{d}`"),
            })?
        };
        if let Some(&prev) = times.last() {
            if t == prev {
                return Err(Error::Row {
                    row: *row,
                    message: format!("duplicate date `{d}`"),
                });
            }
            if t < prev {
                return Err(Error::Row {
                    row: *row,
                    message: format!("date `{d}` is out of order"),
                });
            }
        }
        times.push(t);
    }
    Ok(times)
}

fn year_fraction(date: chrono::NaiveDate) -> f64 {
    use chrono::Datelike;
    let year = date.year();
    let days_in_year = if chrono::NaiveDate::from_ymd_opt(year, 2, 29).is_some() {
        366.0
    } else {
        365.0
    };
    year as f64 + date.ordinal0() as f64 / days_in_year
}

/// Simulates `n_paths` discounted price panels with the exact log scheme.
///
/// Path `k` draws from a ChaCha stream keyed by `(seed, k)`, so a path does
/// not depend on how many other paths are generated. All prices start at 1.
pub fn simulate_paths(
    model: &MarketModel,
    horizon: f64,
    steps: usize,
    n_paths: usize,
    seed: u64,
) -> Result<Vec<PricePanel>> {
    if steps == 0 || n_paths == 0 {
        return Err(invalid("simulation needs at least one step and one path"));
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(invalid("simulation horizon must be positive"));
    }
    (0..n_paths)
        .into_par_iter()
        .map(|k| simulate_path(model, horizon, steps, seed, k as u64))
        .collect()
}

/// One path of [`simulate_paths`].
pub fn simulate_path(
    model: &MarketModel,
    horizon: f64,
    steps: usize,
    seed: u64,
    stream: u64,
) -> Result<PricePanel> {
    let n = model.n();
    let dt = horizon / steps as f64;
    let sqrt_dt = dt.sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let factor = model.correlation_factor();
    let times: Vec<f64> = (0..=steps).map(|j| j as f64 * dt).collect();
    let mut log_prices = DMatrix::zeros(steps + 1, n);
    let mut eps = DVector::zeros(n);
    for j in 0..steps {
        let t = times[j];
        let excess = model.excess_return(t);
        let sigma = model.sigma(t);
        for e in eps.iter_mut() {
            *e = StandardNormal.sample(&mut rng);
        }
        let z = factor * &eps;
        for i in 0..n {
            let drift = (excess[i] - 0.5 * sigma[i] * sigma[i]) * dt;
            log_prices[(j + 1, i)] = log_prices[(j, i)] + drift + sigma[i] * z[i] * sqrt_dt;
        }
    }
    PricePanel::from_prices(times, log_prices.map(f64::exp))
}
