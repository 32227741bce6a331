//! Piecewise-constant curves over time.

use crate::error::{invalid, Result};

/// A right-continuous step function on `[start, ∞)`.
///
/// `values[k]` holds on `[starts[k], starts[k + 1])`; the last value extends
/// indefinitely. Evaluating before `starts[0]` returns the first value.
#[derive(Debug, Clone, PartialEq)]
pub struct StepCurve<V> {
    starts: Vec<f64>,
    values: Vec<V>,
}

impl<V: Clone> StepCurve<V> {
    pub fn constant(value: V) -> Self {
        Self {
            starts: vec![0.0],
            values: vec![value],
        }
    }

    pub fn new(starts: Vec<f64>, values: Vec<V>) -> Result<Self> {
        if starts.is_empty() || starts.len() != values.len() {
            return Err(invalid(format!(
                "step curve needs matching non-empty knots and values ({} vs {})",
                starts.len(),
                values.len()
            )));
        }
        if starts.iter().any(|s| !s.is_finite()) {
            return Err(invalid("step curve knots must be finite"));
        }
        if starts.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("step curve knots must be strictly increasing"));
        }
        Ok(Self { starts, values })
    }

    pub fn value_at(&self, t: f64) -> &V {
        &self.values[self.segment_index(t)]
    }

    pub fn segment_index(&self, t: f64) -> usize {
        // last knot <= t
        self.starts.partition_point(|&s| s <= t).saturating_sub(1)
    }

    pub fn starts(&self) -> &[f64] {
        &self.starts
    }

    pub fn values(&self) -> &[V] {
        &self.values
    }

    pub fn is_constant(&self) -> bool {
        self.values.len() == 1
    }

    /// Knots lying strictly inside `(a, b)`.
    pub fn knots_within(&self, a: f64, b: f64) -> impl Iterator<Item = f64> + '_ {
        self.starts.iter().copied().filter(move |&s| s > a && s < b)
    }

    pub fn map<U: Clone>(&self, f: impl FnMut(&V) -> U) -> StepCurve<U> {
        StepCurve {
            starts: self.starts.clone(),
            values: self.values.iter().map(f).collect(),
        }
    }
}

impl StepCurve<f64> {
    /// Exact integral over `[a, b]`.
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        if b <= a {
            return 0.0;
        }
        let mut total = 0.0;
        let mut left = a;
        for knot in self.knots_within(a, b).chain(std::iter::once(b)) {
            total += self.value_at(left) * (knot - left);
            left = knot;
        }
        total
    }
}

/// Sorted union of `[a, b]` endpoints with every interior knot of the given curves.
pub(crate) fn merged_grid(a: f64, b: f64, knot_sets: &[&[f64]]) -> Vec<f64> {
    let mut grid: Vec<f64> = knot_sets
        .iter()
        .flat_map(|ks| ks.iter().copied())
        .filter(|&s| s > a && s < b)
        .collect();
    grid.push(a);
    grid.push(b);
    grid.sort_by(f64::total_cmp);
    grid.dedup_by(|x, y| (*x - *y).abs() <= 1e-14 * (1.0 + y.abs()));
    grid
}
