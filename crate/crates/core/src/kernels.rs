//! Closed-form backstepping kernels.
//!
//! Controller kernels (forward map `u -> w` and its inverse):
//!
//! ```text
//! w(x) = u(x) - ∫_0^x φ(x,y) u(y) dy - Φ(x) X
//! u(x) = w(x) - ∫_0^x ψ(x,y) w(y) dy - Γ(x) X
//! ```
//!
//! with `Φ(x) = [C_X, K - C_X B C_X / q] e^{D x} [I; 0]`,
//! `φ(x,y) = Φ(x - y) B / q`, `Γ(x) = s [C_X, K] e^{E x} [I; 0]`,
//! `ψ(x,y) = Γ(x - y) B / q`, and `s = ±1` fixed at construction by a
//! round-trip check.
//!
//! Observer kernels solve `q ϑ'' = ϑ A_z`, `ϑ(0) = 0`, `ϑ(1) = -C_z` and
//! `q θ'' = θ A`, `θ(0) = -C_X`, `θ(1) = 0`.
//!
//! Every derivative is exact: differentiating in `x` multiplies by the block
//! matrix, differentiating in `y` by its negative.

use crate::error::{Error, Result};
use crate::grid::{interval_weights, GridSpec};
use crate::linalg::{checked_inverse, mat_exp, Matrix};
use crate::plant::PlantConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CtrlKernel {
    /// `φ(x, y)`
    Phi,
    /// `Φ(x)`
    BigPhi,
    /// `ψ(x, y)`
    Psi,
    /// `Γ(x)`
    Gamma,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObsKernel {
    Vartheta,
    Theta,
}

#[derive(Debug, Clone, PartialEq)]
pub enum KernelValue {
    Scalar(f64),
    Row(Vec<f64>),
}

impl KernelValue {
    pub fn scalar(&self) -> Option<f64> {
        match self {
            KernelValue::Scalar(v) => Some(*v),
            KernelValue::Row(_) => None,
        }
    }

    pub fn row(&self) -> Option<&[f64]> {
        match self {
            KernelValue::Row(r) => Some(r),
            KernelValue::Scalar(_) => None,
        }
    }
}

/// `D, E` (controller) and `F, G, F_1, G_1` (observer) block matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockMatrices {
    pub d: Matrix,
    pub e: Matrix,
    pub f: Matrix,
    pub g: Matrix,
    pub f1: Matrix,
    pub g1: Matrix,
}

fn block2(tl: &Matrix, tr: &Matrix, bl: &Matrix, br: &Matrix) -> Matrix {
    let (r0, c0) = tl.shape();
    let (r1, c1) = br.shape();
    let mut out = Matrix::zeros(r0 + r1, c0 + c1);
    out.view_mut((0, 0), (r0, c0)).copy_from(tl);
    out.view_mut((0, c0), (r0, c1)).copy_from(tr);
    out.view_mut((r0, 0), (r1, c0)).copy_from(bl);
    out.view_mut((r0, c0), (r1, c1)).copy_from(br);
    out
}

fn hcat(a: &Matrix, b: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(a.nrows(), a.ncols() + b.ncols());
    out.view_mut((0, 0), a.shape()).copy_from(a);
    out.view_mut((0, a.ncols()), b.shape()).copy_from(b);
    out
}

/// Lower-left block `[0, I] e^{M} [I, 0]^T` of a `2k x 2k` exponential.
fn lower_left_of_exp(m: &Matrix) -> Result<Matrix> {
    let k = m.nrows() / 2;
    Ok(mat_exp(m)?.view((k, 0), (k, k)).into_owned())
}

pub fn build_block_matrices(plant: &PlantConfig, k: &Matrix) -> Result<BlockMatrices> {
    let q = plant.q;
    if !(q > 0.0) {
        return Err(Error::InvalidParameter(format!("q must be positive, got {q}")));
    }
    let (n, m) = (plant.n(), plant.m());
    if k.shape() != (1, n) {
        return Err(Error::Dimension(format!("K must be 1x{n}, got {:?}", k.shape())));
    }
    let zn = Matrix::zeros(n, n);
    let zm = Matrix::zeros(m, m);
    let iden = Matrix::identity(n, n);
    let im = Matrix::identity(m, m);
    let bc = &plant.b * &plant.c_x;
    let d = block2(&zn, &(&plant.a / q), &iden, &(-bc / q));
    let e = block2(&zn, &((&plant.a + &plant.b * k) / q), &iden, &zn);
    let f = block2(&zm, &(plant.a_z() / q), &im, &zm);
    let f1 = block2(&zn, &(&plant.a / q), &iden, &zn);
    let g = lower_left_of_exp(&f)?;
    let g1 = lower_left_of_exp(&f1)?;
    Ok(BlockMatrices { d, e, f, g, f1, g1 })
}

/// `row · M^k · e^{M t}` restricted to the first `width` columns, for a
/// fixed row and block matrix.
#[derive(Debug, Clone)]
struct ExpRow {
    mat: Matrix,
    /// `row · M^k` for `k = 0..=max_order`.
    powers: Vec<Matrix>,
    width: usize,
}

impl ExpRow {
    fn new(row: Matrix, mat: Matrix, max_order: usize, width: usize) -> Self {
        let mut powers = Vec::with_capacity(max_order + 1);
        let mut r = row;
        for _ in 0..=max_order {
            let next = &r * &mat;
            powers.push(r);
            r = next;
        }
        Self { mat, powers, width }
    }

    fn exp(&self, t: f64) -> Result<Matrix> {
        mat_exp(&(&self.mat * t))
    }

    fn eval_with(&self, k: usize, e: &Matrix) -> Matrix {
        (&self.powers[k] * e).columns(0, self.width).into_owned()
    }

    fn eval(&self, k: usize, t: f64) -> Result<Matrix> {
        Ok(self.eval_with(k, &self.exp(t)?))
    }
}

#[derive(Debug, Clone)]
pub struct KernelSet {
    n: usize,
    m: usize,
    q: f64,
    b: Matrix,
    blocks: BlockMatrices,
    big_phi: ExpRow,
    /// Γ before the orientation sign.
    gamma_raw: ExpRow,
    gamma_sign: f64,
    vartheta: ExpRow,
    theta: ExpRow,
    cond_g: f64,
    cond_g1: f64,
    max_order: usize,
    round_trip_error: f64,
}

const ROUND_TRIP_POINTS: usize = 200;

impl KernelSet {
    pub fn new(plant: &PlantConfig, k: &Matrix) -> Result<Self> {
        plant.validate()?;
        let (n, m) = (plant.n(), plant.m());
        let blocks = build_block_matrices(plant, k)?;
        let max_order = 2 * m + 1;
        // derivative evaluators up to the supported order plus the mixed
        // partial sums used by the χ recursion
        let pow_order = 2 * max_order;

        let bcx = &plant.c_x * &plant.b * &plant.c_x / plant.q;
        let phi_row = hcat(&plant.c_x, &(k - bcx));
        let gamma_row = hcat(&plant.c_x, k);
        let (g_inv, cond_g) = checked_inverse(&blocks.g, "G")?;
        let (g1_inv, cond_g1) = checked_inverse(&blocks.g1, "G_1")?;
        let vartheta_row = hcat(&Matrix::zeros(1, m), &(-(plant.c_z() * g_inv)));
        let e_f1 = mat_exp(&blocks.f1)?;
        let top_left = e_f1.view((0, 0), (n, n)).into_owned();
        let theta_row = hcat(&(-&plant.c_x), &(&plant.c_x * top_left * g1_inv));

        let mut set = Self {
            n,
            m,
            q: plant.q,
            b: plant.b.clone(),
            big_phi: ExpRow::new(phi_row, blocks.d.clone(), pow_order, n),
            gamma_raw: ExpRow::new(gamma_row, blocks.e.clone(), pow_order, n),
            vartheta: ExpRow::new(vartheta_row, blocks.f.clone(), pow_order, m),
            theta: ExpRow::new(theta_row, blocks.f1.clone(), pow_order, n),
            blocks,
            gamma_sign: 1.0,
            cond_g,
            cond_g1,
            max_order,
            round_trip_error: f64::NAN,
        };
        set.resolve_orientation()?;
        Ok(set)
    }

    /// Pick the sign of `(ψ, Γ)` that makes the inverse map undo the forward
    /// map on a fixed smooth probe.
    fn resolve_orientation(&mut self) -> Result<()> {
        let grid = GridSpec {
            n_intervals: ROUND_TRIP_POINTS,
            dt: 1.0,
            t_end: 0.0,
        };
        let xs = grid.xs();
        let u: Vec<f64> = xs
            .iter()
            .map(|&x| (1.3 * x).sin() + 0.4 * x * x - 0.2)
            .collect();
        let state: Vec<f64> = (0..self.n).map(|i| 0.5 + 0.25 * i as f64).collect();
        let mut best = (f64::INFINITY, 1.0);
        for sign in [1.0, -1.0] {
            self.gamma_sign = sign;
            let tr = SampledTransform::new(self, &grid)?;
            let w = tr.forward(&u, &state);
            let back = tr.inverse(&w, &state);
            let err = back
                .iter()
                .zip(&u)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            if err < best.0 {
                best = (err, sign);
            }
        }
        self.round_trip_error = best.0;
        self.gamma_sign = best.1;
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn blocks(&self) -> &BlockMatrices {
        &self.blocks
    }

    pub fn gamma_sign(&self) -> f64 {
        self.gamma_sign
    }

    pub fn cond_g(&self) -> f64 {
        self.cond_g
    }

    pub fn cond_g1(&self) -> f64 {
        self.cond_g1
    }

    pub fn max_order(&self) -> usize {
        self.max_order
    }

    /// Max-norm round-trip error of the probe used to fix the orientation.
    pub fn round_trip_error(&self) -> f64 {
        self.round_trip_error
    }

    fn check_order(&self, order: usize) -> Result<()> {
        if order > self.max_order {
            return Err(Error::OrderOutOfRange {
                order,
                max: self.max_order,
            });
        }
        Ok(())
    }

    fn check_triangle(x: f64, y: f64) -> Result<()> {
        const TOL: f64 = 1e-12;
        if !(x >= -TOL && x <= 1.0 + TOL && y >= -TOL && y <= x + TOL) {
            return Err(Error::OutsideDomain { x, y });
        }
        Ok(())
    }

    fn check_unit(x: f64) -> Result<()> {
        Self::check_triangle(x, 0.0_f64.min(x))
    }

    fn row_to_scalar(&self, row: &Matrix) -> f64 {
        (row * &self.b)[(0, 0)] / self.q
    }

    /// `∂_x^dx ∂_y^dy φ(x, y)`; unchecked, mixed orders up to twice the
    /// public limit are available for the χ recursion.
    pub(crate) fn phi_raw(&self, x: f64, y: f64, dx: usize, dy: usize) -> Result<f64> {
        let sign = if dy % 2 == 1 { -1.0 } else { 1.0 };
        Ok(sign * self.row_to_scalar(&self.big_phi.eval(dx + dy, x - y)?))
    }

    pub(crate) fn psi_raw(&self, x: f64, y: f64, dx: usize, dy: usize) -> Result<f64> {
        let sign = if dy % 2 == 1 { -1.0 } else { 1.0 };
        Ok(sign * self.gamma_sign * self.row_to_scalar(&self.gamma_raw.eval(dx + dy, x - y)?))
    }

    pub fn phi(&self, x: f64, y: f64, dx: usize, dy: usize) -> Result<f64> {
        self.check_order(dx + dy)?;
        Self::check_triangle(x, y)?;
        self.phi_raw(x, y, dx, dy)
    }

    pub fn psi(&self, x: f64, y: f64, dx: usize, dy: usize) -> Result<f64> {
        self.check_order(dx + dy)?;
        Self::check_triangle(x, y)?;
        self.psi_raw(x, y, dx, dy)
    }

    /// `d^k Φ(x) / dx^k`, a `1 x n` row.
    pub fn big_phi(&self, x: f64, order: usize) -> Result<Matrix> {
        self.check_order(order)?;
        Self::check_unit(x)?;
        self.big_phi.eval(order, x)
    }

    /// `d^k Γ(x) / dx^k`, a `1 x n` row.
    pub fn gamma(&self, x: f64, order: usize) -> Result<Matrix> {
        self.check_order(order)?;
        Self::check_unit(x)?;
        Ok(self.gamma_raw.eval(order, x)? * self.gamma_sign)
    }

    pub fn eval_ctrl_kernel(
        &self,
        which: CtrlKernel,
        dx: usize,
        dy: usize,
        x: f64,
        y: f64,
    ) -> Result<KernelValue> {
        let to_row = |m: Matrix| KernelValue::Row(m.iter().copied().collect());
        match which {
            CtrlKernel::Phi => self.phi(x, y, dx, dy).map(KernelValue::Scalar),
            CtrlKernel::Psi => self.psi(x, y, dx, dy).map(KernelValue::Scalar),
            CtrlKernel::BigPhi | CtrlKernel::Gamma if dy != 0 => Err(Error::InvalidParameter(
                "one-argument kernels have no y derivative".into(),
            )),
            CtrlKernel::BigPhi => self.big_phi(x, dx).map(to_row),
            CtrlKernel::Gamma => self.gamma(x, dx).map(to_row),
        }
    }

    /// `d^k ϑ(x) / dx^k`, a `1 x m` row.
    pub fn vartheta(&self, x: f64, order: usize) -> Result<Matrix> {
        self.check_order(order)?;
        Self::check_unit(x)?;
        self.vartheta.eval(order, x)
    }

    /// `d^k θ(x) / dx^k`, a `1 x n` row.
    pub fn theta(&self, x: f64, order: usize) -> Result<Matrix> {
        self.check_order(order)?;
        Self::check_unit(x)?;
        self.theta.eval(order, x)
    }

    pub fn eval_obs_kernel(&self, which: ObsKernel, order: usize, x: f64) -> Result<KernelValue> {
        let m = match which {
            ObsKernel::Vartheta => self.vartheta(x, order)?,
            ObsKernel::Theta => self.theta(x, order)?,
        };
        Ok(KernelValue::Row(m.iter().copied().collect()))
    }

    /// `p_1^{(k)}(x) = -ϑ^{(k)}(x) P_2 - θ^{(k)}(x) P_0`.
    pub fn p1(&self, x: f64, order: usize, p0: &[f64], p2: &[f64]) -> Result<f64> {
        if p0.len() != self.n || p2.len() != self.m {
            return Err(Error::Dimension(format!(
                "p1 needs P0 of length {} and P2 of length {}",
                self.n, self.m
            )));
        }
        let vt = self.vartheta(x, order)?;
        let th = self.theta(x, order)?;
        let a: f64 = vt.iter().zip(p2).map(|(v, p)| v * p).sum();
        let b: f64 = th.iter().zip(p0).map(|(v, p)| v * p).sum();
        Ok(-a - b)
    }

    /// Sample `Φ(x_i)` rows and `φ(x_i, x_j)` on a grid in one pass per node.
    fn sample(&self, row: &ExpRow, sign: f64, grid: &GridSpec) -> Result<(Vec<Matrix>, Vec<f64>)> {
        let xs = grid.xs();
        let h = grid.dx();
        // kernels depend on x - y only; x_i - x_j = (i - j) h
        let mut rows = Vec::with_capacity(xs.len());
        let mut diag = Vec::with_capacity(xs.len());
        for i in 0..xs.len() {
            let r = row.eval(0, i as f64 * h)? * sign;
            diag.push(self.row_to_scalar(&r));
            rows.push(r);
        }
        Ok((rows, diag))
    }
}

/// Forward and inverse Volterra maps sampled on a grid with fourth-order
/// quadrature.
#[derive(Debug, Clone)]
pub struct SampledTransform {
    /// `fwd[i]`: `(j, weight · φ(x_i, x_j))`
    fwd: Vec<Vec<(usize, f64)>>,
    inv: Vec<Vec<(usize, f64)>>,
    big_phi: Vec<Vec<f64>>,
    gamma: Vec<Vec<f64>>,
}

impl SampledTransform {
    pub fn new(kernels: &KernelSet, grid: &GridSpec) -> Result<Self> {
        let n_nodes = grid.points();
        let h = grid.dx();
        let (phi_rows, phi_lag) = kernels.sample(&kernels.big_phi, 1.0, grid)?;
        let (gamma_rows, psi_lag) = kernels.sample(&kernels.gamma_raw, kernels.gamma_sign, grid)?;
        // the single-interval rule reaches up to two nodes past x_i; the
        // kernels are analytic in x - y, so negative lags are well defined
        let ahead = |row: &ExpRow, sign: f64| -> Result<[f64; 2]> {
            Ok([
                sign * kernels.row_to_scalar(&row.eval(0, -h)?),
                sign * kernels.row_to_scalar(&row.eval(0, -2.0 * h)?),
            ])
        };
        let phi_neg = ahead(&kernels.big_phi, 1.0)?;
        let psi_neg = ahead(&kernels.gamma_raw, kernels.gamma_sign)?;
        let build = |lag: &[f64], neg: [f64; 2]| -> Vec<Vec<(usize, f64)>> {
            (0..n_nodes)
                .map(|i| {
                    interval_weights(0, i, h, n_nodes)
                        .into_iter()
                        .map(|(j, w)| (j, w * if j <= i { lag[i - j] } else { neg[j - i - 1] }))
                        .collect()
                })
                .collect()
        };
        let rows = |r: &[Matrix]| r.iter().map(|m| m.iter().copied().collect()).collect();
        Ok(Self {
            fwd: build(&phi_lag, phi_neg),
            inv: build(&psi_lag, psi_neg),
            big_phi: rows(&phi_rows),
            gamma: rows(&gamma_rows),
        })
    }

    fn apply(kernel: &[Vec<(usize, f64)>], gains: &[Vec<f64>], f: &[f64], state: &[f64]) -> Vec<f64> {
        kernel
            .iter()
            .zip(gains)
            .enumerate()
            .map(|(i, (row, g))| {
                let integral: f64 = row.iter().map(|&(j, w)| w * f[j]).sum();
                let gx: f64 = g.iter().zip(state).map(|(a, b)| a * b).sum();
                f[i] - integral - gx
            })
            .collect()
    }

    /// `w = u - ∫φ u - Φ X`
    pub fn forward(&self, u: &[f64], state: &[f64]) -> Vec<f64> {
        Self::apply(&self.fwd, &self.big_phi, u, state)
    }

    /// `u = w - ∫ψ w - Γ X`
    pub fn inverse(&self, w: &[f64], state: &[f64]) -> Vec<f64> {
        Self::apply(&self.inv, &self.gamma, w, state)
    }
}

/// Ten test profiles for the transform round trip.
pub fn round_trip_profiles() -> Vec<Box<dyn Fn(f64) -> f64>> {
    let pi = std::f64::consts::PI;
    vec![
        Box::new(move |x| (2.0 * pi * x).sin()),
        Box::new(move |x| (pi * x).cos()),
        Box::new(|x| x * x - x),
        Box::new(|x| (3.0 * x).exp() - 1.0),
        Box::new(|_| 1.0),
        Box::new(|x| x.powi(5)),
        Box::new(|x| 1.0 / (1.0 + x * x)),
        Box::new(move |x| (5.0 * pi * x).sin() * x),
        Box::new(|x| (x - 0.4).powi(3)),
        Box::new(|x| (-2.0 * x).exp() * (7.0 * x).cos()),
    ]
}

/// Worst max-norm error of forward-inverse and inverse-forward over
/// [`round_trip_profiles`] on `n_intervals + 1` nodes, each with its own
/// ODE state.
pub fn round_trip_battery(kernels: &KernelSet, n_intervals: usize) -> Result<f64> {
    let grid = GridSpec { n_intervals, dt: 1.0, t_end: 0.0 };
    let tr = SampledTransform::new(kernels, &grid)?;
    let xs = grid.xs();
    let err = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
    let mut worst: f64 = 0.0;
    for (i, f) in round_trip_profiles().iter().enumerate() {
        let u: Vec<f64> = xs.iter().map(|&x| f(x)).collect();
        let state: Vec<f64> = (0..kernels.n()).map(|k| 0.3 * i as f64 - 1.0 + 0.5 * k as f64).collect();
        let w = tr.forward(&u, &state);
        worst = worst.max(err(&tr.inverse(&w, &state), &u));
        let v = tr.inverse(&u, &state);
        worst = worst.max(err(&tr.forward(&v, &state), &u));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::from_rows;
    use crate::plant::GainSet;

    fn demo() -> KernelSet {
        KernelSet::new(&PlantConfig::demo(), &GainSet::demo().k).unwrap()
    }

    fn central(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn big_phi_at_zero_is_c_x() {
        let ks = demo();
        assert_eq!(ks.big_phi(0.0, 0).unwrap(), from_rows(&[&[1.0, 0.0]]));
    }

    #[test]
    fn vanishing_kernels_without_coupling() {
        let mut plant = PlantConfig::demo();
        plant.c_x = Matrix::zeros(1, 2);
        let ks = KernelSet::new(&plant, &Matrix::zeros(1, 2)).unwrap();
        for &(x, y) in &[(0.0, 0.0), (0.5, 0.2), (1.0, 1.0), (1.0, 0.0)] {
            assert_eq!(ks.phi(x, y, 0, 0).unwrap(), 0.0);
            assert!(ks.big_phi(x, 1).unwrap().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn y_derivative_matches_central_difference() {
        let ks = demo();
        let h = 1e-5;
        let num = central(|y| ks.phi(1.0, y, 0, 0).unwrap(), 0.5, h);
        let ana = ks.phi(1.0, 0.5, 0, 1).unwrap();
        assert!(((num - ana) / ana).abs() < 1e-8, "{num} vs {ana}");
    }

    #[test]
    fn derivative_orders_chain() {
        let ks = demo();
        let h = 1e-5;
        let (x, y) = (0.7, 0.3);
        for k in 1..=4 {
            let checks = [
                (ks.phi(x, y, k, 0).unwrap(), central(|s| ks.phi(s, y, k - 1, 0).unwrap(), x, h)),
                (ks.phi(x, y, 0, k).unwrap(), central(|s| ks.phi(x, s, 0, k - 1).unwrap(), y, h)),
                (ks.psi(x, y, k, 0).unwrap(), central(|s| ks.psi(s, y, k - 1, 0).unwrap(), x, h)),
                (ks.psi(x, y, 0, k).unwrap(), central(|s| ks.psi(x, s, 0, k - 1).unwrap(), y, h)),
                (
                    ks.gamma(x, k).unwrap()[(0, 1)],
                    central(|s| ks.gamma(s, k - 1).unwrap()[(0, 1)], x, h),
                ),
                (
                    ks.vartheta(x, k).unwrap()[(0, 0)],
                    central(|s| ks.vartheta(s, k - 1).unwrap()[(0, 0)], x, h),
                ),
                (
                    ks.theta(x, k).unwrap()[(0, 1)],
                    central(|s| ks.theta(s, k - 1).unwrap()[(0, 1)], x, h),
                ),
            ];
            for (i, (ana, num)) in checks.iter().enumerate() {
                let rel = (ana - num).abs() / ana.abs().max(1.0);
                assert!(rel < 1e-7, "order {k}, check {i}: {ana} vs {num}");
            }
        }
    }

    #[test]
    fn observer_kernel_boundary_values() {
        let ks = demo();
        let close = |a: &Matrix, b: &[f64]| a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12);
        assert!(close(&ks.vartheta(0.0, 0).unwrap(), &[0.0, 0.0]));
        assert!(close(&ks.vartheta(1.0, 0).unwrap(), &[-1.0, 0.0]));
        assert!(close(&ks.theta(0.0, 0).unwrap(), &[-1.0, 0.0]));
        assert!(close(&ks.theta(1.0, 0).unwrap(), &[0.0, 0.0]));
    }

    #[test]
    fn observer_kernel_bvp_residuals() {
        let plant = PlantConfig::demo();
        let ks = demo();
        for i in 0..=100 {
            let x = i as f64 / 100.0;
            let rv = ks.vartheta(x, 2).unwrap() * plant.q - ks.vartheta(x, 0).unwrap() * plant.a_z();
            let rt = ks.theta(x, 2).unwrap() * plant.q - ks.theta(x, 0).unwrap() * &plant.a;
            assert!(rv.amax() < 1e-8 && rt.amax() < 1e-8, "x = {x}");
        }
    }

    #[test]
    fn observer_kernel_second_difference_converges() {
        // independent of the analytic derivative: second differences of the
        // order-0 evaluator shrink the residual at second order
        let plant = PlantConfig::demo();
        let ks = demo();
        let resid = |n: usize| {
            let h = 1.0 / n as f64;
            let v = |i: usize| ks.vartheta(i as f64 * h, 0).unwrap();
            (1..n)
                .map(|i| {
                    let d2 = (v(i + 1) - v(i) * 2.0 + v(i - 1)) / (h * h);
                    (d2 * plant.q - v(i) * plant.a_z()).amax()
                })
                .fold(0.0, f64::max)
        };
        let order = (resid(50) / resid(100)).log2();
        assert!(resid(100) < 1e-4 && (order - 2.0).abs() < 0.1, "order {order}");
    }

    #[test]
    fn scalar_block_matrices_by_hand() {
        let (a, ab, cx, k) = (0.7, -0.4, 2.0, 1.5);
        let plant = PlantConfig::new(
            from_rows(&[&[a]]),
            from_rows(&[&[1.0]]),
            from_rows(&[&[cx]]),
            1.0,
            vec![ab],
        )
        .unwrap();
        let bm = build_block_matrices(&plant, &from_rows(&[&[k]])).unwrap();
        assert_eq!(bm.d, from_rows(&[&[0.0, a], &[1.0, -cx]]));
        assert_eq!(bm.e, from_rows(&[&[0.0, a + k], &[1.0, 0.0]]));
        assert_eq!(bm.f, from_rows(&[&[0.0, ab], &[1.0, 0.0]]));
        assert_eq!(bm.f1, from_rows(&[&[0.0, a], &[1.0, 0.0]]));
        // [0, 1] e^F [1, 0]^T = sinh(sqrt(ab)) / sqrt(ab), here sin for ab < 0
        let r = (-ab).sqrt();
        assert!((bm.g[(0, 0)] - r.sin() / r).abs() < 1e-14);
        let r1 = a.sqrt();
        assert!((bm.g1[(0, 0)] - r1.sinh() / r1).abs() < 1e-14);
    }

    #[test]
    fn uncoupled_blocks_coincide() {
        let mut plant = PlantConfig::demo();
        plant.c_x = Matrix::zeros(1, 2);
        let bm = build_block_matrices(&plant, &Matrix::zeros(1, 2)).unwrap();
        assert_eq!(bm.d, bm.e);
        assert_eq!(bm.d, bm.f1);
    }

    #[test]
    fn demo_observer_blocks_nonsingular() {
        let ks = demo();
        assert!((ks.blocks().g.determinant() - 1.1633).abs() < 1e-4);
        assert!((ks.blocks().g1.determinant() - 1.2633).abs() < 1e-4);
        assert!(ks.cond_g().is_finite() && ks.cond_g1().is_finite());
    }

    #[test]
    fn orientation_resolved_by_round_trip() {
        let ks = demo();
        assert_eq!(ks.gamma_sign(), -1.0);
        assert!(ks.round_trip_error() < 1e-6);
        // Γ(0) = -C_X once oriented
        assert_eq!(ks.gamma(0.0, 0).unwrap(), from_rows(&[&[-1.0, 0.0]]));
    }

    #[test]
    fn round_trip_battery_passes() {
        let err = round_trip_battery(&demo(), 200).unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn range_errors() {
        let ks = demo();
        assert!(matches!(ks.phi(1.0, 0.0, 3, 3), Err(Error::OrderOutOfRange { max: 5, .. })));
        assert!(matches!(ks.phi(0.3, 0.5, 0, 0), Err(Error::OutsideDomain { .. })));
        assert!(matches!(ks.gamma(1.2, 0), Err(Error::OutsideDomain { .. })));
        assert!(ks
            .eval_ctrl_kernel(CtrlKernel::BigPhi, 0, 1, 0.5, 0.0)
            .is_err());
    }

    #[test]
    fn p1_combines_observer_kernels() {
        let ks = demo();
        let g = GainSet::demo();
        // p1(0) = θ(0)... = C_X P_0 sign: -ϑ(0)P_2 - θ(0)P_0 = C_X P_0
        let v = ks.p1(0.0, 0, g.p0.as_slice(), g.p2.as_slice()).unwrap();
        assert!((v - g.p0[0]).abs() < 1e-12);
        let v1 = ks.p1(1.0, 0, g.p0.as_slice(), g.p2.as_slice()).unwrap();
        assert!((v1 - g.p2[0]).abs() < 1e-12);
    }
}
