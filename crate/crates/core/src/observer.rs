//! Boundary observer driven by the single measurement `u_x(0, t)`.
//!
//! ```text
//! X̂' = A X̂ + B u_x(0) + P_0 ε
//! û_t = q û_xx + p_1(x) ε
//! û(0) = C_X X̂,  û(1) = C_z Ẑ
//! Ẑ' = A_z Ẑ + B_z U + P_2 ε
//! ```
//!
//! with innovation `ε = u_x(0) - û_x(0)`. The error transform
//! `w̃ = ũ + ϑ Z̃ + θ X̃` turns the error system into a heat equation with
//! homogeneous Dirichlet ends driving `[Z̃; X̃]' = Ā [Z̃; X̃]`.

use num_complex::Complex64;
use serde::Serialize;

use crate::controller::{sorted_spectrum, ComplexValue};
use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::kernels::KernelSet;
use crate::linalg::{find_eigenvalue_minus_ksq_pisq, is_hurwitz, max_real_part, numerical_rank, place_poles_dual, Matrix, SPECTRUM_TOL};
use crate::plant::PlantConfig;
use crate::simulator::{advance, Injection, SimState};
use crate::stencil::BoundaryStencils;

/// Heat modes checked against the spectra of `A / q` and `A_z / q`.
pub const SPECTRUM_MODES: usize = 100;

#[derive(Debug, Clone, Serialize)]
pub struct ObserverGains {
    pub p0: Vec<f64>,
    pub p2: Vec<f64>,
    /// `p_1(x_i)`.
    pub p1_grid: Vec<f64>,
    pub vartheta_grid: Vec<Vec<f64>>,
    pub theta_grid: Vec<Vec<f64>>,
    /// `ϑ'(0)` and `θ'(0)`: the output row of the augmented pair.
    pub vartheta_d0: Vec<f64>,
    pub theta_d0: Vec<f64>,
    #[serde(skip)]
    pub a_bar: Matrix,
    pub a_bar_eigenvalues: Vec<ComplexValue>,
    pub observability_rank: usize,
}

/// `A_a = blkdiag(A_z, A)`, `B_a = [ϑ'(0), θ'(0)]`.
pub fn augmented_pair(plant: &PlantConfig, kernels: &KernelSet) -> Result<(Matrix, Matrix)> {
    let (n, m) = (plant.n(), plant.m());
    let mut a_a = Matrix::zeros(n + m, n + m);
    a_a.view_mut((0, 0), (m, m)).copy_from(&plant.a_z());
    a_a.view_mut((m, m), (n, n)).copy_from(&plant.a);
    let mut b_a = Matrix::zeros(1, n + m);
    b_a.view_mut((0, 0), (1, m)).copy_from(&kernels.vartheta(0.0, 1)?);
    b_a.view_mut((0, m), (1, n)).copy_from(&kernels.theta(0.0, 1)?);
    Ok((a_a, b_a))
}

fn check_spectrum(plant: &PlantConfig) -> Result<()> {
    for (what, mat) in [("A_z / q", plant.a_z() / plant.q), ("A / q", &plant.a / plant.q)] {
        if let Some(k) = find_eigenvalue_minus_ksq_pisq(&mat, SPECTRUM_MODES, SPECTRUM_TOL)? {
            return Err(Error::EigenvalueCondition { what, k });
        }
    }
    Ok(())
}

fn observability_rank(a: &Matrix, c: &Matrix) -> usize {
    let n = a.nrows();
    let mut obs = Matrix::zeros(n, n);
    let mut row = c.clone();
    for i in 0..n {
        obs.row_mut(i).copy_from(&row.row(0));
        row = &row * a;
    }
    numerical_rank(&obs)
}

pub fn build_observer(
    plant: &PlantConfig,
    kernels: &KernelSet,
    p0: &[f64],
    p2: &[f64],
    grid: &GridSpec,
) -> Result<ObserverGains> {
    let (n, m) = (plant.n(), plant.m());
    if p0.len() != n || p2.len() != m {
        return Err(Error::Dimension(format!(
            "observer gains must have lengths {n} and {m}, got {} and {}",
            p0.len(),
            p2.len()
        )));
    }
    check_spectrum(plant)?;
    let (a_a, b_a) = augmented_pair(plant, kernels)?;
    let mut inj = Matrix::zeros(n + m, 1);
    for (i, &v) in p2.iter().chain(p0).enumerate() {
        inj[(i, 0)] = v;
    }
    let a_bar = &a_a + &inj * &b_a;
    if !is_hurwitz(&a_bar)? {
        return Err(Error::NotHurwitz {
            what: "observer error matrix",
            max_re: max_real_part(&a_bar)?,
        });
    }
    let xs = grid.xs();
    let mut p1_grid = Vec::with_capacity(xs.len());
    let mut vartheta_grid = Vec::with_capacity(xs.len());
    let mut theta_grid = Vec::with_capacity(xs.len());
    for &x in &xs {
        p1_grid.push(kernels.p1(x, 0, p0, p2)?);
        vartheta_grid.push(kernels.vartheta(x, 0)?.iter().copied().collect());
        theta_grid.push(kernels.theta(x, 0)?.iter().copied().collect());
    }
    Ok(ObserverGains {
        p0: p0.to_vec(),
        p2: p2.to_vec(),
        p1_grid,
        vartheta_grid,
        theta_grid,
        vartheta_d0: b_a.columns(0, m).iter().copied().collect(),
        theta_d0: b_a.columns(m, n).iter().copied().collect(),
        a_bar_eigenvalues: sorted_spectrum(&a_bar)?,
        observability_rank: observability_rank(&a_a, &b_a),
        a_bar,
    })
}

/// Injection gains `(P_0, P_2)` placing the spectrum of `Ā` at `poles`.
pub fn gains_from_poles(plant: &PlantConfig, kernels: &KernelSet, poles: &[Complex64]) -> Result<(Vec<f64>, Vec<f64>)> {
    check_spectrum(plant)?;
    let (a_a, b_a) = augmented_pair(plant, kernels)?;
    let l = place_poles_dual(&a_a, &b_a, poles)?;
    let m = plant.m();
    let col: Vec<f64> = l.iter().copied().collect();
    Ok((col[m..].to_vec(), col[..m].to_vec()))
}

/// One explicit step of the observer; `measurement` is the plant's `u_x(0)`
/// from `meas`, the same stencil applied to `û` here.
pub fn observer_step(
    obs: &SimState,
    plant: &PlantConfig,
    gains: &ObserverGains,
    grid: &GridSpec,
    meas: &BoundaryStencils,
    measurement: f64,
    u_in: f64,
) -> SimState {
    let eps = measurement - meas.left(&obs.u, 1);
    let inj = Injection {
        eps,
        p0: &gains.p0,
        p1: &gains.p1_grid,
        p2: &gains.p2,
    };
    advance(obs, plant, grid, measurement, u_in, Some(inj))
}

/// `w̃(x_i) = ũ(x_i) + ϑ(x_i) Z̃ + θ(x_i) X̃`.
pub fn error_transform(plant_state: &SimState, obs_state: &SimState, gains: &ObserverGains) -> Vec<f64> {
    let xt: Vec<f64> = plant_state.x.iter().zip(&obs_state.x).map(|(a, b)| a - b).collect();
    let zt: Vec<f64> = plant_state.z.iter().zip(&obs_state.z).map(|(a, b)| a - b).collect();
    let dot = |r: &[f64], v: &[f64]| r.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
    plant_state
        .u
        .iter()
        .zip(&obs_state.u)
        .enumerate()
        .map(|(i, (a, b))| a - b + dot(&gains.vartheta_grid[i], &zt) + dot(&gains.theta_grid[i], &xt))
        .collect()
}
