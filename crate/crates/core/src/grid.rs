//! Uniform spatial/temporal grid and the composite quadrature rules used for
//! every Volterra integral on it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Number of spatial intervals; samples are `x_i = i / n_intervals`.
    pub n_intervals: usize,
    pub dt: f64,
    pub t_end: f64,
}

impl GridSpec {
    pub fn dx(&self) -> f64 {
        1.0 / self.n_intervals as f64
    }

    pub fn points(&self) -> usize {
        self.n_intervals + 1
    }

    pub fn xs(&self) -> Vec<f64> {
        let n = self.n_intervals as f64;
        (0..self.points()).map(|i| i as f64 / n).collect()
    }

    /// Number of time steps covering `[0, t_end]`.
    pub fn steps(&self) -> usize {
        // tolerate t_end/dt landing a hair below an integer
        ((self.t_end / self.dt) + 1e-9).floor() as usize
    }

    pub fn mesh_ratio(&self, q: f64) -> f64 {
        q * self.dt / (self.dx() * self.dx())
    }

    /// Checks the explicit-scheme bound, Simpson parity, and stencil width
    /// for an actuator of order `m`.
    pub fn validate(&self, q: f64, m: usize) -> Result<()> {
        if self.n_intervals < 2 || self.n_intervals % 2 != 0 {
            return Err(Error::InvalidParameter(format!(
                "n_intervals must be even and at least 2, got {}",
                self.n_intervals
            )));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) || !(self.t_end >= 0.0 && self.t_end.is_finite())
        {
            return Err(Error::InvalidParameter(format!(
                "dt must be positive and t_end non-negative, got dt = {}, t_end = {}",
                self.dt, self.t_end
            )));
        }
        let ratio = self.mesh_ratio(q);
        if ratio > 0.5 + 1e-12 {
            return Err(Error::StabilityCondition { ratio });
        }
        let needed = 2 * m + 2;
        if self.points() < needed {
            return Err(Error::GridTooCoarse {
                points: self.points(),
                needed,
            });
        }
        Ok(())
    }
}

/// Quadrature weights `(node, weight)` for `∫_{x_lo}^{x_hi}` over the uniform
/// grid with spacing `h` and `n_nodes` nodes. Fourth-order accurate for every
/// interval count: composite Simpson, with a trailing 3/8 panel for odd counts
/// and a four-point rule for a single interval.
pub fn interval_weights(lo: usize, hi: usize, h: f64, n_nodes: usize) -> Vec<(usize, f64)> {
    assert!(lo <= hi && hi < n_nodes, "bad quadrature range {lo}..{hi}");
    let k = hi - lo;
    let mut w = Vec::with_capacity(k + 1);
    match k {
        0 => {}
        1 => {
            let c = h / 24.0;
            if hi + 2 < n_nodes {
                w.extend([(lo, 9.0 * c), (hi, 19.0 * c), (hi + 1, -5.0 * c), (hi + 2, c)]);
            } else if lo >= 2 {
                w.extend([(lo - 2, c), (lo - 1, -5.0 * c), (lo, 19.0 * c), (hi, 9.0 * c)]);
            } else {
                w.extend([(lo, 0.5 * h), (hi, 0.5 * h)]);
            }
        }
        _ => {
            let simpson_end = if k % 2 == 0 { hi } else { hi - 3 };
            let mut acc = vec![0.0; k + 1];
            let mut i = 0;
            while lo + i < simpson_end {
                acc[i] += h / 3.0;
                acc[i + 1] += 4.0 * h / 3.0;
                acc[i + 2] += h / 3.0;
                i += 2;
            }
            if k % 2 == 1 {
                let s = simpson_end - lo;
                for (off, c) in [1.0, 3.0, 3.0, 1.0].iter().enumerate() {
                    acc[s + off] += 3.0 * h / 8.0 * c;
                }
            }
            w.extend(acc.into_iter().enumerate().map(|(i, v)| (lo + i, v)));
        }
    }
    w
}

/// Composite Simpson over the whole grid (even interval count).
pub fn simpson(values: &[f64], h: f64) -> f64 {
    let n = values.len();
    assert!(n >= 3 && n % 2 == 1, "Simpson needs an odd sample count");
    let mut s = values[0] + values[n - 1];
    for (i, v) in values.iter().enumerate().take(n - 1).skip(1) {
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * v;
    }
    s * h / 3.0
}

/// Simpson weights for the full grid.
pub fn simpson_weights(n_nodes: usize, h: f64) -> Vec<f64> {
    let mut w = vec![0.0; n_nodes];
    for (i, v) in interval_weights(0, n_nodes - 1, h, n_nodes) {
        w[i] += v;
    }
    w
}

/// Integrate a callable on `[a, b]` with `panels` Simpson panels.
pub fn simpson_fn(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    let n = 2 * panels.max(1);
    let h = (b - a) / n as f64;
    let vals: Vec<f64> = (0..=n).map(|i| f(a + i as f64 * h)).collect();
    simpson(&vals, h)
}

/// Second-order accurate gradient: central differences inside, one-sided
/// three-point formulas at the ends.
pub fn gradient(values: &[f64], h: f64) -> Vec<f64> {
    let n = values.len();
    assert!(n >= 3);
    let mut g = vec![0.0; n];
    g[0] = (-3.0 * values[0] + 4.0 * values[1] - values[2]) / (2.0 * h);
    g[n - 1] = (3.0 * values[n - 1] - 4.0 * values[n - 2] + values[n - 3]) / (2.0 * h);
    for i in 1..n - 1 {
        g[i] = (values[i + 1] - values[i - 1]) / (2.0 * h);
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;

    fn integrate(lo: usize, hi: usize, h: f64, n: usize, f: impl Fn(f64) -> f64) -> f64 {
        interval_weights(lo, hi, h, n)
            .into_iter()
            .map(|(i, w)| w * f(i as f64 * h))
            .sum()
    }

    #[test]
    fn exact_on_cubics_for_every_interval_count() {
        let n = 12;
        let h = 1.0 / (n - 1) as f64;
        let f = |x: f64| 1.0 - 2.0 * x + 3.0 * x * x - 0.5 * x * x * x;
        let anti = |x: f64| x - x * x + x * x * x - 0.125 * x.powi(4);
        for lo in 0..n {
            for hi in lo..n {
                let got = integrate(lo, hi, h, n, f);
                let want = anti(hi as f64 * h) - anti(lo as f64 * h);
                assert!((got - want).abs() < 1e-13, "{lo}..{hi}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn fourth_order_convergence() {
        let err = |n: usize| {
            let h = 1.0 / n as f64;
            (integrate(0, n - 1, h, n + 1, |x| x.exp()) - ((1.0 - h).exp() - 1.0)).abs()
        };
        let order = (err(20) / err(40)).log2();
        assert!(order > 3.7, "order {order}");
    }

    #[test]
    fn grid_validation() {
        let g = GridSpec { n_intervals: 20, dt: 0.001, t_end: 8.0 };
        assert!((g.mesh_ratio(1.0) - 0.4).abs() < 1e-12);
        g.validate(1.0, 2).unwrap();
        assert_eq!(g.steps(), 8000);
        let bad = GridSpec { dt: 0.002, ..g };
        assert!(matches!(bad.validate(1.0, 2), Err(Error::StabilityCondition { .. })));
        let odd = GridSpec { n_intervals: 21, ..g };
        assert!(odd.validate(1.0, 2).is_err());
        let coarse = GridSpec { n_intervals: 4, dt: 0.01, t_end: 1.0 };
        assert!(matches!(coarse.validate(1.0, 3), Err(Error::GridTooCoarse { .. })));
    }
}
