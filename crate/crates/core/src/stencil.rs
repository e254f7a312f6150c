//! One-sided finite-difference stencils for boundary derivatives.
//!
//! A derivative of order `d` at accuracy `p` uses `d + p` nodes walking into
//! the domain. At `d = 3, p = 1` the right-boundary stencil is
//! `(u_N - 3u_{N-1} + 3u_{N-2} - u_{N-3}) / h^3`.

use crate::error::{Error, Result};

/// Fornberg's recursion: weights for the `deriv`-th derivative at `z` from
/// samples at `nodes`.
pub fn fornberg_weights(z: f64, nodes: &[f64], deriv: usize) -> Vec<f64> {
    let n = nodes.len();
    assert!(n > deriv, "need more than {deriv} nodes");
    let mut c = vec![vec![0.0; deriv + 1]; n];
    let mut c1 = 1.0;
    let mut c4 = nodes[0] - z;
    c[0][0] = 1.0;
    for i in 1..n {
        let mn = i.min(deriv);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = nodes[i] - z;
        for j in 0..i {
            let c3 = nodes[i] - nodes[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[i][k] = c1 * (k as f64 * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                }
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for k in (1..=mn).rev() {
                c[j][k] = (c4 * c[j][k] - k as f64 * c[j][k - 1]) / c3;
            }
            c[j][0] = c4 * c[j][0] / c3;
        }
        c1 = c2;
    }
    c.into_iter().map(|row| row[deriv]).collect()
}

/// Precomputed boundary stencils for derivative orders `0..=max_deriv`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryStencils {
    accuracy: usize,
    h: f64,
    /// `weights[d][k]` multiplies the sample `k` nodes in from the boundary.
    weights: Vec<Vec<f64>>,
}

impl BoundaryStencils {
    pub fn new(max_deriv: usize, accuracy: usize, h: f64, n_points: usize) -> Result<Self> {
        if accuracy == 0 {
            return Err(Error::InvalidParameter("stencil accuracy must be at least 1".into()));
        }
        let needed = max_deriv + accuracy;
        if n_points < needed {
            return Err(Error::GridTooCoarse {
                points: n_points,
                needed,
            });
        }
        let weights = (0..=max_deriv)
            .map(|d| {
                if d == 0 {
                    return vec![1.0];
                }
                let nodes: Vec<f64> = (0..d + accuracy).map(|k| k as f64 * h).collect();
                fornberg_weights(0.0, &nodes, d)
            })
            .collect();
        Ok(Self { accuracy, h, weights })
    }

    pub fn accuracy(&self) -> usize {
        self.accuracy
    }

    pub fn max_deriv(&self) -> usize {
        self.weights.len() - 1
    }

    /// `d`-th derivative at `x = 0`.
    pub fn left(&self, u: &[f64], d: usize) -> f64 {
        self.weights[d].iter().zip(u).map(|(w, v)| w * v).sum()
    }

    /// `d`-th derivative at `x = 1`. Walking inwards flips the sign of odd
    /// derivatives relative to the left-boundary weights.
    pub fn right(&self, u: &[f64], d: usize) -> f64 {
        let sign = if d % 2 == 1 { -1.0 } else { 1.0 };
        let last = u.len() - 1;
        sign * self.weights[d]
            .iter()
            .enumerate()
            .map(|(k, w)| w * u[last - k])
            .sum::<f64>()
    }

    pub fn spacing(&self) -> f64 {
        self.h
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn third_derivative_matches_four_point_formula() {
        let h = 0.05;
        let st = BoundaryStencils::new(3, 1, h, 21).unwrap();
        let u: Vec<f64> = (0..21).map(|i| ((i * i) as f64 * 0.37).sin()).collect();
        let n = 20;
        let want = (u[n] - 3.0 * u[n - 1] + 3.0 * u[n - 2] - u[n - 3]) / h.powi(3);
        assert!((st.right(&u, 3) - want).abs() < 1e-9 * want.abs().max(1.0));
    }

    #[test]
    fn exact_on_polynomials_within_degree() {
        // d + p nodes reproduce polynomials of degree d + p - 1 exactly
        let n = 20;
        let h = 1.0 / n as f64;
        for p in 1..=3 {
            let st = BoundaryStencils::new(3, p, h, n + 1).unwrap();
            for d in 0..=3 {
                let deg = d + p - 1;
                let u: Vec<f64> = (0..=n).map(|i| (i as f64 * h + 0.3).powi(deg as i32)).collect();
                let falling = |x: f64| -> f64 {
                    (0..d).map(|j| (deg - j) as f64).product::<f64>() * x.powi((deg - d) as i32)
                };
                assert!((st.left(&u, d) - falling(0.3)).abs() < 1e-7, "left d={d} p={p}");
                assert!((st.right(&u, d) - falling(1.3)).abs() < 1e-7, "right d={d} p={p}");
            }
        }
    }

    #[test]
    fn convergence_order_matches_accuracy() {
        let f = |x: f64| (1.7 * x).exp();
        let exact = 1.7_f64.powi(3) * 1.7_f64.exp();
        for p in 1..=3 {
            let err = |n: usize| {
                let h = 1.0 / n as f64;
                let u: Vec<f64> = (0..=n).map(|i| f(i as f64 * h)).collect();
                let st = BoundaryStencils::new(3, p, h, n + 1).unwrap();
                (st.right(&u, 3) - exact).abs()
            };
            let order = (err(80) / err(160)).log2();
            assert!((order - p as f64).abs() < 0.3, "p={p}: observed {order}");
        }
    }

    #[test]
    fn too_coarse_grid_rejected() {
        assert!(matches!(
            BoundaryStencils::new(3, 2, 0.25, 4),
            Err(Error::GridTooCoarse { .. })
        ));
    }
}
