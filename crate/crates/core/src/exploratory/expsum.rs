//! Sums of exponentials on a segment, `f(x) = Σ c_k e^{r_k x}` plus an
//! optional affine part. Every time integral in policy evaluation reduces
//! to these.

/// `∫_a^b e^{rate·x} dx`, exact, including the `rate → 0` limit.
pub(crate) fn exp_integral(rate: f64, a: f64, b: f64) -> f64 {
    if rate == 0.0 {
        b - a
    } else {
        (rate * a).exp() * (rate * (b - a)).exp_m1() / rate
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub(crate) struct ExpSum {
    terms: Vec<(f64, f64)>,
}

impl ExpSum {
    pub fn constant(c: f64) -> Self {
        Self::term(c, 0.0)
    }

    pub fn term(coef: f64, rate: f64) -> Self {
        let mut s = Self::default();
        s.push(coef, rate);
        s
    }

    pub fn terms(&self) -> &[(f64, f64)] {
        &self.terms
    }

    pub fn push(&mut self, coef: f64, rate: f64) {
        if coef == 0.0 {
            return;
        }
        // Rates that differ only by rounding are merged; over the horizons
        // in use the resulting relative change is below 1e-13.
        let close = |r: f64| (r - rate).abs() <= 1e-13 * (1.0 + rate.abs());
        if let Some(t) = self.terms.iter_mut().find(|t| close(t.1)) {
            t.0 += coef;
        } else {
            self.terms.push((coef, rate));
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.terms.iter().map(|(c, r)| c * (r * x).exp()).sum()
    }

    pub fn integral(&self, a: f64, b: f64) -> f64 {
        self.terms
            .iter()
            .map(|(c, r)| c * exp_integral(*r, a, b))
            .sum()
    }

    /// `x ↦ f(x + dx)`.
    pub fn shifted(&self, dx: f64) -> Self {
        let mut out = Self::default();
        for (c, r) in &self.terms {
            out.push(c * (r * dx).exp(), *r);
        }
        out
    }

    pub fn scaled(&self, k: f64) -> Self {
        let mut out = Self::default();
        for (c, r) in &self.terms {
            out.push(c * k, *r);
        }
        out
    }

    /// `x ↦ f(x)·e^{rate·x}`.
    pub fn times_exp(&self, rate: f64) -> Self {
        let mut out = Self::default();
        for (c, r) in &self.terms {
            out.push(*c, r + rate);
        }
        out
    }

    pub fn product(&self, other: &Self) -> Self {
        let mut out = Self::default();
        for (c1, r1) in &self.terms {
            for (c2, r2) in &other.terms {
                out.push(c1 * c2, r1 + r2);
            }
        }
        out
    }

    pub fn add(&mut self, other: &Self) {
        for (c, r) in &other.terms {
            self.push(*c, *r);
        }
    }
}

/// Exponential sum plus `l0 + l1·x`.
#[derive(Debug, Clone, Default, PartialEq)]
pub(crate) struct SegmentFn {
    pub exp: ExpSum,
    pub l0: f64,
    pub l1: f64,
}

impl SegmentFn {
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        self.exp.integral(a, b) + self.l0 * (b - a) + 0.5 * self.l1 * (b * b - a * a)
    }
}
