//! Boundary operators of the target system.
//!
//! Differentiating `w(1, t)` `m` times in time and pulling everything back to
//! the original variables gives
//!
//! ```text
//! ∂_t^m w(1) = 𝔅 w(1) + 𝔆 w(0) - ∫_0^1 𝔇(y) w(y) dy + 𝔈 X + U
//! ```
//!
//! where `𝔅`, `𝔆` are finite combinations of spatial derivatives `∂_x^0 ..
//! ∂_x^{2m-1}` at the right and left boundary. The control operator
//! `𝔏 = -𝔅 - Σ q^i (α_i + c_m β_i) ∂_x^{2i}` closes the loop.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{simpson, GridSpec};
use crate::kernels::KernelSet;
use crate::plant::PlantConfig;
use crate::stencil::BoundaryStencils;

/// Inner Simpson panels for the nested integral in `𝔇(y)` and for `𝔈`.
const NESTED_PANELS: usize = 64;

/// `∂_x^a ∂_y^b K(x, x)` with weight `coef`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceTerm {
    pub dx: usize,
    pub dy: usize,
    pub coef: f64,
}

/// Boundary terms from differentiating a Volterra integral:
///
/// ```text
/// ∂_x^k ∫_0^x K(x,y) f(y) dy = ∫_0^x ∂_x^k K f dy + Σ_j χ_{k,j}(x) ∂^{k-j-1} f(x)
/// ```
///
/// Each `χ_{k,j}` is a combination of diagonal traces of partials of `K`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChiTable {
    /// `entries[k - 1][j]` for `1 <= k <= k_max`, `0 <= j < k`.
    entries: Vec<Vec<Vec<TraceTerm>>>,
}

fn merge(into: &mut Vec<TraceTerm>, dx: usize, dy: usize, coef: f64) {
    match into.iter_mut().find(|t| t.dx == dx && t.dy == dy) {
        Some(t) => t.coef += coef,
        None => into.push(TraceTerm { dx, dy, coef }),
    }
}

/// Total derivative of a trace: `d/dx K_{a,b}(x,x) = K_{a+1,b} + K_{a,b+1}`.
fn trace_derivative(terms: &[TraceTerm]) -> Vec<TraceTerm> {
    let mut out = Vec::new();
    for t in terms {
        merge(&mut out, t.dx + 1, t.dy, t.coef);
        merge(&mut out, t.dx, t.dy + 1, t.coef);
    }
    out
}

impl ChiTable {
    pub fn new(k_max: usize) -> Self {
        let mut entries: Vec<Vec<Vec<TraceTerm>>> = Vec::with_capacity(k_max);
        if k_max == 0 {
            return Self { entries };
        }
        entries.push(vec![vec![TraceTerm { dx: 0, dy: 0, coef: 1.0 }]]);
        for k in 1..k_max {
            let prev = &entries[k - 1];
            let mut next = Vec::with_capacity(k + 1);
            next.push(prev[0].clone());
            for j in 1..k {
                let mut e = prev[j].clone();
                for t in trace_derivative(&prev[j - 1]) {
                    merge(&mut e, t.dx, t.dy, t.coef);
                }
                next.push(e);
            }
            let mut last = vec![TraceTerm { dx: k, dy: 0, coef: 1.0 }];
            for t in trace_derivative(&prev[k - 1]) {
                merge(&mut last, t.dx, t.dy, t.coef);
            }
            next.push(last);
            for e in &mut next {
                e.retain(|t| t.coef != 0.0);
            }
            entries.push(next);
        }
        Self { entries }
    }

    /// Table sized for an actuator of order `m`: `k <= 2m - 1`.
    pub fn for_order(m: usize) -> Self {
        Self::new((2 * m).saturating_sub(1).max(1))
    }

    pub fn k_max(&self) -> usize {
        self.entries.len()
    }

    pub fn terms(&self, k: usize, j: usize) -> &[TraceTerm] {
        &self.entries[k - 1][j]
    }

    /// `χ_{k,j}(x)` for the kernel `kern(x, y, dx, dy)`; `k = 0` has no terms.
    pub fn eval(
        &self,
        k: usize,
        j: usize,
        x: f64,
        kern: impl Fn(f64, f64, usize, usize) -> Result<f64>,
    ) -> Result<f64> {
        if k > self.k_max() {
            return Err(Error::OrderOutOfRange {
                order: k,
                max: self.k_max(),
            });
        }
        self.terms(k, j)
            .iter()
            .try_fold(0.0, |acc, t| Ok(acc + t.coef * kern(x, x, t.dx, t.dy)?))
    }

    /// Coefficients `r` with `Σ_k c_k Σ_j χ_{k,j}(x) ∂^{k-j-1} f(x) = Σ_i r_i ∂^i f(x)`.
    pub fn boundary_coeffs(
        &self,
        coeffs: &[f64],
        x: f64,
        kern: impl Fn(f64, f64, usize, usize) -> Result<f64> + Copy,
    ) -> Result<Vec<f64>> {
        let mut out = vec![0.0; coeffs.len()];
        for (k, &c) in coeffs.iter().enumerate().skip(1) {
            if c == 0.0 {
                continue;
            }
            for j in 0..k {
                out[k - j - 1] += c * self.eval(k, j, x, kern)?;
            }
        }
        Ok(out)
    }
}

/// Coefficients of the virtual-control chain over `∂_t^i w(1, t)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlphaBeta {
    pub c: Vec<f64>,
    /// Coefficients of `y_{m-1} + τ'_{m-1}`.
    pub alpha: Vec<f64>,
    /// Coefficients of `y_m`.
    pub beta: Vec<f64>,
    /// Coefficients of `y_1 .. y_m`, each padded to length `m`.
    pub ys: Vec<Vec<f64>>,
}

fn padded(v: &[f64], len: usize) -> Vec<f64> {
    let mut out = v.to_vec();
    out.resize(len, 0.0);
    out
}

fn shifted(v: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(v.len() + 1);
    out.push(0.0);
    out.extend_from_slice(v);
    out
}

fn axpy(acc: &mut [f64], a: f64, x: &[f64]) {
    for (s, v) in acc.iter_mut().zip(x) {
        *s += a * v;
    }
}

impl AlphaBeta {
    /// `y_1 = w(1)`, `τ_1 = c_1 y_1`, `y_{k+1} = ∂_t^k w(1) + τ_k`,
    /// `τ_k = τ'_{k-1} + y_{k-1} + c_k y_k`. A time derivative shifts the
    /// coefficient vector by one place.
    pub fn new(c: &[f64]) -> Result<Self> {
        let m = c.len();
        if m == 0 {
            return Err(Error::InvalidParameter("actuator order must be at least 1".into()));
        }
        if let Some(bad) = c.iter().find(|&&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidParameter(format!(
                "backstepping gains must be positive, got {bad}"
            )));
        }
        if m == 1 {
            return Ok(Self {
                c: c.to_vec(),
                alpha: vec![0.0],
                beta: vec![1.0],
                ys: vec![vec![1.0]],
            });
        }
        // ys[k], taus[k] hold y_{k+1}, τ_{k+1}
        let mut ys: Vec<Vec<f64>> = vec![vec![1.0]];
        let mut taus: Vec<Vec<f64>> = vec![vec![c[0]]];
        let mut y2 = padded(&taus[0], 2);
        y2[1] += 1.0;
        ys.push(y2);
        for k in 2..m {
            let mut tau = padded(&shifted(&taus[k - 2]), k);
            axpy(&mut tau, 1.0, &padded(&ys[k - 2], k));
            axpy(&mut tau, c[k - 1], &padded(&ys[k - 1], k));
            let mut y = padded(&tau, k + 1);
            y[k] += 1.0;
            taus.push(tau);
            ys.push(y);
        }
        let mut alpha = padded(&ys[m - 2], m);
        axpy(&mut alpha, 1.0, &padded(&shifted(&taus[m - 2]), m));
        let beta = padded(&ys[m - 1], m);
        let ys = ys.iter().map(|y| padded(y, m)).collect();
        Ok(Self {
            c: c.to_vec(),
            alpha,
            beta,
            ys,
        })
    }

    /// `α_i + c_m β_i`: lower coefficients of the closed boundary ODE.
    pub fn closed_loop(&self) -> Vec<f64> {
        let cm = *self.c.last().expect("non-empty gains");
        self.alpha
            .iter()
            .zip(&self.beta)
            .map(|(a, b)| a + cm * b)
            .collect()
    }

    /// Monic characteristic polynomial `s^m + Σ (α_i + c_m β_i) s^i`,
    /// ascending coefficients.
    pub fn characteristic_polynomial(&self) -> Vec<f64> {
        let mut p = self.closed_loop();
        p.push(1.0);
        p
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    Left,
    Right,
}

/// `Σ_i c_i ∂_x^i` at a boundary, optionally plus `∫ k(y) f(y) dy` and a row
/// on `X`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundaryOperator {
    pub boundary: Boundary,
    pub deriv_coeffs: Vec<f64>,
    pub state_gain: Option<Vec<f64>>,
    /// Sampled on the simulation grid.
    pub integral_kernel: Option<Vec<f64>>,
}

impl BoundaryOperator {
    pub fn derivatives(boundary: Boundary, deriv_coeffs: Vec<f64>) -> Self {
        Self {
            boundary,
            deriv_coeffs,
            state_gain: None,
            integral_kernel: None,
        }
    }

    /// The derivative part applied to grid samples with one-sided stencils.
    pub fn apply_derivatives(&self, f: &[f64], st: &BoundaryStencils) -> f64 {
        self.deriv_coeffs
            .iter()
            .enumerate()
            .filter(|(_, c)| **c != 0.0)
            .map(|(k, c)| {
                c * match self.boundary {
                    Boundary::Left => st.left(f, k),
                    Boundary::Right => st.right(f, k),
                }
            })
            .sum()
    }

    /// Derivative part applied to exact derivative values `d[k] = ∂^k f`.
    pub fn apply_exact(&self, d: &[f64]) -> f64 {
        self.deriv_coeffs.iter().zip(d).map(|(c, v)| c * v).sum()
    }

    pub fn order(&self) -> usize {
        self.deriv_coeffs.len()
    }
}

/// `𝔅`, `𝔆`, `𝔇`, `𝔈`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TargetOperators {
    pub b_op: BoundaryOperator,
    pub c_op: BoundaryOperator,
    /// `𝔇(y_i)` on the simulation grid.
    pub d_op: Vec<f64>,
    pub e_op: Vec<f64>,
    pub grid_points: usize,
}

struct Accum<'a> {
    ks: &'a KernelSet,
    chi: &'a ChiTable,
    b: Vec<f64>,
    c: Vec<f64>,
    /// `(coef, k)`: contributes `coef ∂_x^k ψ(1, y)` to `𝔇`.
    d_terms: Vec<(f64, usize)>,
    e: Vec<f64>,
}

impl Accum<'_> {
    fn psi_kern(&self) -> impl Fn(f64, f64, usize, usize) -> Result<f64> + Copy + '_ {
        let ks = self.ks;
        move |x, y, a, b| ks.psi(x, y, a, b)
    }

    /// Adds `coef ∂_x^k u(1)` with `u` expressed through `w`.
    fn add_right(&mut self, coef: f64, k: usize) -> Result<()> {
        self.b[k] += coef;
        for j in 0..k {
            self.b[k - j - 1] -= coef * self.chi.eval(k, j, 1.0, self.psi_kern())?;
        }
        self.d_terms.push((coef, k));
        let g = self.ks.gamma(1.0, k)?;
        axpy(&mut self.e, -coef, g.as_slice());
        Ok(())
    }

    /// Adds `coef ∂_x^k u(0)`; the Volterra integral vanishes at `x = 0`.
    fn add_left(&mut self, coef: f64, k: usize) -> Result<()> {
        self.c[k] += coef;
        for j in 0..k {
            self.c[k - j - 1] -= coef * self.chi.eval(k, j, 0.0, self.psi_kern())?;
        }
        let g = self.ks.gamma(0.0, k)?;
        axpy(&mut self.e, -coef, g.as_slice());
        Ok(())
    }
}

fn try_simpson(f: impl Fn(f64) -> Result<f64>, a: f64, b: f64, panels: usize) -> Result<f64> {
    let n = 2 * panels;
    let h = (b - a) / n as f64;
    let vals = (0..=n).map(|i| f(a + i as f64 * h)).collect::<Result<Vec<_>>>()?;
    Ok(simpson(&vals, h))
}

fn sign(i: usize) -> f64 {
    if i % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

pub fn assemble_boundary_operators(
    kernels: &KernelSet,
    chi: &ChiTable,
    plant: &PlantConfig,
    grid: &GridSpec,
) -> Result<TargetOperators> {
    let (n, m, q) = (plant.n(), plant.m(), plant.q);
    if chi.k_max() + 1 < 2 * m {
        return Err(Error::OrderOutOfRange {
            order: 2 * m - 1,
            max: chi.k_max(),
        });
    }
    let mut acc = Accum {
        ks: kernels,
        chi,
        b: vec![0.0; 2 * m],
        c: vec![0.0; 2 * m],
        d_terms: Vec::new(),
        e: vec![0.0; n],
    };
    let qm = q.powi(m as i32);

    // boundary ODE of the actuator chain: Σ ā_{k+1} q^k ∂_x^{2k} u(1)
    for (k, &a) in plant.abar.iter().enumerate() {
        acc.add_right(a * q.powi(k as i32), 2 * k)?;
    }
    // integrating ∂_t^m of the Volterra term by parts in y
    for i in 1..=2 * m {
        let at_right = kernels.phi(1.0, 1.0, 0, i - 1)?;
        let at_left = kernels.phi(1.0, 0.0, 0, i - 1)?;
        acc.add_right(qm * sign(i) * at_right, 2 * m - i)?;
        acc.add_left(-qm * sign(i) * at_left, 2 * m - i)?;
    }
    // Φ(1) ∂_t^m X, via X' = A X + B u_x(0) and u_t = q u_xx
    let phi1 = kernels.big_phi(1.0, 0)?;
    let mut a_pow = crate::linalg::Matrix::identity(n, n);
    for i in 1..=m {
        let coef = (&phi1 * &a_pow * &plant.b)[(0, 0)] * q.powi((m - i) as i32);
        acc.add_left(-coef, 2 * (m - i) + 1)?;
        a_pow = &a_pow * &plant.a;
    }
    let phi_am = &phi1 * &a_pow;
    axpy(&mut acc.e, -1.0, phi_am.as_slice());

    let phi_yy = |y: f64| kernels.phi(1.0, y, 0, 2 * m);
    // q^m ∫ ∂_y^{2m} φ(1,y) Γ(y) dy
    for col in 0..n {
        let v = try_simpson(|y| Ok(phi_yy(y)? * kernels.gamma(y, 0)?[(0, col)]), 0.0, 1.0, 4 * NESTED_PANELS)?;
        acc.e[col] += qm * v;
    }

    let xs = grid.xs();
    let mut d_op = Vec::with_capacity(xs.len());
    for &y in &xs {
        let mut v = 0.0;
        for &(coef, k) in &acc.d_terms {
            v += coef * kernels.psi(1.0, y, k, 0)?;
        }
        v += qm * phi_yy(y)?;
        if y < 1.0 {
            let nested = try_simpson(
                |z| Ok(phi_yy(z)? * kernels.psi(z, y.min(z), 0, 0)?),
                y,
                1.0,
                NESTED_PANELS,
            )?;
            v -= qm * nested;
        }
        d_op.push(v);
    }

    let all_finite = acc.b.iter().chain(&acc.c).chain(&acc.e).chain(&d_op).all(|v| v.is_finite());
    if !all_finite {
        return Err(Error::NonFinite("target-system operators"));
    }
    Ok(TargetOperators {
        b_op: BoundaryOperator::derivatives(Boundary::Right, acc.b),
        c_op: BoundaryOperator::derivatives(Boundary::Left, acc.c),
        e_op: acc.e,
        grid_points: xs.len(),
        d_op,
    })
}

/// `𝔏 = -𝔅 - Σ_i q^i (α_i + c_m β_i) ∂_x^{2i}`.
pub fn assemble_l(b_op: &BoundaryOperator, ab: &AlphaBeta, q: f64) -> Result<BoundaryOperator> {
    let m = ab.alpha.len();
    if b_op.order() != 2 * m {
        return Err(Error::Dimension(format!(
            "operator has {} coefficients, expected {}",
            b_op.order(),
            2 * m
        )));
    }
    let mut l: Vec<f64> = b_op.deriv_coeffs.iter().map(|v| -v).collect();
    for (i, s) in ab.closed_loop().iter().enumerate() {
        l[2 * i] -= q.powi(i as i32) * s;
    }
    Ok(BoundaryOperator::derivatives(Boundary::Right, l))
}

/// `F̄ = (𝔆 ∫_0^x φ(x,y) u(y) dy)|_{x=0}` as a left-boundary operator on `u`;
/// only diagonal traces survive at `x = 0`.
pub fn assemble_fbar(kernels: &KernelSet, chi: &ChiTable, c_op: &BoundaryOperator) -> Result<BoundaryOperator> {
    let coeffs = chi.boundary_coeffs(&c_op.deriv_coeffs, 0.0, |x, y, a, b| kernels.phi(x, y, a, b))?;
    Ok(BoundaryOperator::derivatives(Boundary::Left, coeffs))
}

pub fn operators_json(ops: &TargetOperators, l_op: &BoundaryOperator, ab: &AlphaBeta) -> serde_json::Value {
    serde_json::json!({
        "B": ops.b_op.deriv_coeffs,
        "C": ops.c_op.deriv_coeffs,
        "D": ops.d_op,
        "E": ops.e_op,
        "L": l_op.deriv_coeffs,
        "alpha": ab.alpha,
        "beta": ab.beta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::simpson_fn;
    use crate::linalg::{from_rows, Matrix};
    use crate::plant::GainSet;
    use crate::stencil::fornberg_weights;

    fn demo() -> (PlantConfig, KernelSet) {
        let plant = PlantConfig::demo();
        let ks = KernelSet::new(&plant, &GainSet::demo().k).unwrap();
        (plant, ks)
    }

    fn grid() -> GridSpec {
        GridSpec { n_intervals: 20, dt: 0.001, t_end: 1.0 }
    }

    /// `∂_x^d` at `x0` of `f` by Richardson-extrapolated central differences.
    fn numeric_derivative(f: &dyn Fn(f64) -> f64, x0: f64, d: usize, h: f64) -> f64 {
        let nodes: Vec<f64> = (0..=2 * d + 2).map(|i| (i as f64 - (d + 1) as f64) * h).collect();
        let w = fornberg_weights(0.0, &nodes, d);
        nodes.iter().zip(&w).map(|(s, c)| c * f(x0 + s)).sum()
    }

    fn volterra(ks: &KernelSet, x: f64, w: &dyn Fn(f64) -> f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        simpson_fn(|y| ks.psi(x, y, 0, 0).unwrap() * w(y), 0.0, x, 400)
    }

    #[test]
    fn chi_second_order_entries() {
        let t = ChiTable::new(2);
        assert_eq!(t.terms(1, 0), &[TraceTerm { dx: 0, dy: 0, coef: 1.0 }]);
        assert_eq!(t.terms(2, 0), &[TraceTerm { dx: 0, dy: 0, coef: 1.0 }]);
        let mut second = t.terms(2, 1).to_vec();
        second.sort_by_key(|t| (t.dx, t.dy));
        assert_eq!(
            second,
            vec![TraceTerm { dx: 0, dy: 1, coef: 1.0 }, TraceTerm { dx: 1, dy: 0, coef: 2.0 }]
        );
    }

    #[test]
    fn chi_matches_numeric_differentiation() {
        let (_, ks) = demo();
        let chi = ChiTable::new(3);
        let w = |y: f64| (2.0 * y).sin() + 0.5 * y * y + 0.3;
        // derivatives of w, exact
        let dw = |y: f64, k: usize| match k {
            0 => w(y),
            1 => 2.0 * (2.0 * y).cos() + y,
            2 => -4.0 * (2.0 * y).sin() + 1.0,
            _ => unreachable!(),
        };
        for &x in &[0.35, 0.6, 0.85] {
            for k in 1..=3 {
                let v = |s: f64| volterra(&ks, s, &w);
                let num = numeric_derivative(&v, x, k, 0.02);
                let integral = simpson_fn(|y| ks.psi(x, y, k, 0).unwrap() * w(y), 0.0, x, 400);
                let trace: f64 = (0..k)
                    .map(|j| chi.eval(k, j, x, |a, b, c, d| ks.psi(a, b, c, d)).unwrap() * dw(x, k - j - 1))
                    .sum();
                let ana = integral + trace;
                assert!((num - ana).abs() < 1e-6 * ana.abs().max(1.0), "x={x} k={k}: {num} vs {ana}");
            }
        }
    }

    #[test]
    fn chi_vanishes_with_kernels() {
        let mut plant = PlantConfig::demo();
        plant.c_x = Matrix::zeros(1, 2);
        let ks = KernelSet::new(&plant, &Matrix::zeros(1, 2)).unwrap();
        let chi = ChiTable::for_order(2);
        for k in 1..=3 {
            for j in 0..k {
                assert_eq!(chi.eval(k, j, 0.4, |a, b, c, d| ks.psi(a, b, c, d)).unwrap(), 0.0);
            }
        }
    }

    #[test]
    fn alpha_beta_second_order() {
        let ab = AlphaBeta::new(&[3.0, 3.0]).unwrap();
        assert_eq!(ab.alpha, vec![1.0, 3.0]);
        assert_eq!(ab.beta, vec![3.0, 1.0]);
        assert_eq!(ab.closed_loop(), vec![10.0, 6.0]);
        assert_eq!(ab.ys, vec![vec![1.0, 0.0], vec![3.0, 1.0]]);
        let one = AlphaBeta::new(&[2.5]).unwrap();
        assert_eq!((one.alpha.clone(), one.beta.clone()), (vec![0.0], vec![1.0]));
        assert_eq!(one.closed_loop(), vec![2.5]);
    }

    #[test]
    fn alpha_beta_third_order() {
        let ab = AlphaBeta::new(&[1.0, 1.0, 1.0]).unwrap();
        assert_eq!(ab.alpha, vec![1.0, 3.0, 2.0]);
        assert_eq!(ab.beta, vec![2.0, 2.0, 1.0]);
    }

    #[test]
    fn alpha_beta_rejects_bad_gains() {
        assert!(AlphaBeta::new(&[]).is_err());
        assert!(AlphaBeta::new(&[1.0, 0.0]).is_err());
    }

    #[test]
    fn operators_without_kernels() {
        let mut plant = PlantConfig::demo();
        plant.c_x = Matrix::zeros(1, 2);
        plant.abar = vec![0.4, -1.5];
        plant.q = 2.0;
        let ks = KernelSet::new(&plant, &Matrix::zeros(1, 2)).unwrap();
        let ops = assemble_boundary_operators(&ks, &ChiTable::for_order(2), &plant, &grid()).unwrap();
        assert_eq!(ops.b_op.deriv_coeffs, vec![0.4, 0.0, -3.0, 0.0]);
        assert!(ops.c_op.deriv_coeffs.iter().all(|&v| v == 0.0));
        assert!(ops.d_op.iter().all(|&v| v == 0.0));
        assert!(ops.e_op.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn first_order_hand_expansion() {
        let mut plant = PlantConfig::demo();
        plant.abar = vec![-0.7];
        plant.q = 1.3;
        let k = from_rows(&[&[-10.0, -5.0]]);
        let ks = KernelSet::new(&plant, &k).unwrap();
        let ops = assemble_boundary_operators(&ks, &ChiTable::for_order(1), &plant, &grid()).unwrap();
        let q = plant.q;
        let a1 = plant.abar[0];
        let phi = |x, y, b| ks.phi(x, y, 0, b).unwrap();
        let psi00 = ks.psi(0.0, 0.0, 0, 0).unwrap();
        let psi11 = ks.psi(1.0, 1.0, 0, 0).unwrap();
        let phi1b = (ks.big_phi(1.0, 0).unwrap() * &plant.b)[(0, 0)];

        let b_want = [a1 + q * phi(1.0, 1.0, 0) * psi11 + q * phi(1.0, 1.0, 1), -q * phi(1.0, 1.0, 0)];
        let c_want = [
            -q * phi(1.0, 0.0, 0) * psi00 - q * phi(1.0, 0.0, 1) + phi1b * psi00,
            q * phi(1.0, 0.0, 0) - phi1b,
        ];
        let g = |x, d| ks.gamma(x, d).unwrap();
        let integral: Vec<f64> = (0..2)
            .map(|c| simpson_fn(|y| phi(1.0, y, 2) * g(y, 0)[(0, c)], 0.0, 1.0, 4 * NESTED_PANELS))
            .collect();
        let e_want = g(1.0, 0) * (-a1) + g(1.0, 1) * (q * phi(1.0, 1.0, 0)) - g(1.0, 0) * (q * phi(1.0, 1.0, 1))
            - g(0.0, 1) * (q * phi(1.0, 0.0, 0))
            + g(0.0, 0) * (q * phi(1.0, 0.0, 1))
            + g(0.0, 1) * phi1b
            - ks.big_phi(1.0, 0).unwrap() * &plant.a
            + from_rows(&[&[q * integral[0], q * integral[1]]]);
        for i in 0..2 {
            assert!((ops.b_op.deriv_coeffs[i] - b_want[i]).abs() < 1e-10, "B[{i}]");
            assert!((ops.c_op.deriv_coeffs[i] - c_want[i]).abs() < 1e-10, "C[{i}]");
            assert!((ops.e_op[i] - e_want[(0, i)]).abs() < 1e-10, "E[{i}]");
        }
    }

    #[test]
    fn second_order_reference_values() {
        let (plant, ks) = demo();
        let ops = assemble_boundary_operators(&ks, &ChiTable::for_order(2), &plant, &grid()).unwrap();
        let close = |a: &[f64], b: &[f64], tol: f64| a.iter().zip(b).all(|(x, y)| (x - y).abs() < tol);
        assert!(close(&ops.b_op.deriv_coeffs, &[-16.5, -1.0, 6.0, 0.0], 1e-9), "{:?}", ops.b_op);
        assert!(close(&ops.c_op.deriv_coeffs, &[34.9157, 0.0, -9.9586, 0.0], 1e-4), "{:?}", ops.c_op);
        assert!(close(&ops.e_op, &[74.46, 24.04], 1e-2), "{:?}", ops.e_op);
        let l = assemble_l(&ops.b_op, &AlphaBeta::new(&[3.0, 3.0]).unwrap(), 1.0).unwrap();
        assert!(close(&l.deriv_coeffs, &[6.5, 1.0, -12.0, 0.0], 1e-9), "{:?}", l);
    }

    #[test]
    fn l_from_zero_operator() {
        let ab = AlphaBeta {
            c: vec![1.0, 1.0],
            alpha: vec![0.0, 0.0],
            beta: vec![0.0, 0.0],
            ys: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        };
        let l = assemble_l(&BoundaryOperator::derivatives(Boundary::Right, vec![0.0; 4]), &ab, 1.0).unwrap();
        assert!(l.deriv_coeffs.iter().all(|&v| v == 0.0));
        let one = AlphaBeta::new(&[2.0]).unwrap();
        let b = BoundaryOperator::derivatives(Boundary::Right, vec![0.5, -1.0]);
        assert_eq!(assemble_l(&b, &one, 1.0).unwrap().deriv_coeffs, vec![-2.5, 1.0]);
    }

    #[test]
    fn fbar_trivial_cases() {
        let (_, ks) = demo();
        let chi = ChiTable::for_order(2);
        let only0 = BoundaryOperator::derivatives(Boundary::Left, vec![3.0, 0.0, 0.0, 0.0]);
        assert!(assemble_fbar(&ks, &chi, &only0).unwrap().deriv_coeffs.iter().all(|&v| v == 0.0));
        let mut plant = PlantConfig::demo();
        plant.c_x = Matrix::zeros(1, 2);
        let zero = KernelSet::new(&plant, &Matrix::zeros(1, 2)).unwrap();
        let full = BoundaryOperator::derivatives(Boundary::Left, vec![1.0, 2.0, 3.0, 4.0]);
        assert!(assemble_fbar(&zero, &chi, &full).unwrap().deriv_coeffs.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fbar_matches_extrapolated_derivatives() {
        let (plant, ks) = demo();
        let chi = ChiTable::for_order(2);
        let ops = assemble_boundary_operators(&ks, &chi, &plant, &grid()).unwrap();
        let fbar = assemble_fbar(&ks, &chi, &ops.c_op).unwrap();
        let u = |y: f64| (1.5 * y).cos() + y * y * y;
        let du = [1.0, 0.0, -2.25, 0.0];
        let v = |x: f64| {
            if x <= 0.0 {
                0.0
            } else {
                simpson_fn(|y| ks.phi(x, y, 0, 0).unwrap() * u(y), 0.0, x, 200)
            }
        };
        // one-sided high-order differences toward x = 0+
        let h = 0.01;
        let nodes: Vec<f64> = (0..10).map(|i| i as f64 * h).collect();
        let samples: Vec<f64> = nodes.iter().map(|&x| v(x)).collect();
        let mut num = 0.0;
        for (k, c) in ops.c_op.deriv_coeffs.iter().enumerate().skip(1) {
            let w = fornberg_weights(0.0, &nodes, k);
            num += c * w.iter().zip(&samples).map(|(a, b)| a * b).sum::<f64>();
        }
        let ana = fbar.apply_exact(&du);
        assert!((num - ana).abs() < 1e-5 * ana.abs().max(1.0), "{num} vs {ana}");
    }
}
