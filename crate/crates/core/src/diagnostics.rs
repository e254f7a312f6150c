//! State norms, exponential-envelope fits and residual summaries.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{gradient, simpson};
use crate::linalg::Matrix;
use crate::simulator::{Record, RunResult};
use crate::stencil::fornberg_weights;

/// Fraction of the horizon skipped before fitting.
pub const TRANSIENT_FRACTION: f64 = 0.1;

fn l2_sq(v: &[f64], h: f64) -> f64 {
    simpson(&v.iter().map(|a| a * a).collect::<Vec<_>>(), h)
}

fn vec_sq(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum()
}

/// `(‖u‖² + ‖u_x‖² + |Z|² + |X|²)^{1/2}`.
pub fn theta_norm(u: &[f64], x: &[f64], z: &[f64], h: f64) -> f64 {
    (l2_sq(u, h) + l2_sq(&gradient(u, h), h) + vec_sq(z) + vec_sq(x)).sqrt()
}

/// Observer-error norm with spatial derivatives of `ũ` up to `order`,
/// each obtained by repeated [`gradient`].
pub fn theta_e(du: &[f64], dx: &[f64], dz: &[f64], h: f64, order: usize) -> f64 {
    let mut total = vec_sq(dx) + vec_sq(dz);
    let mut d = du.to_vec();
    for k in 0..=order {
        if k > 0 {
            d = gradient(&d, h);
        }
        total += l2_sq(&d, h);
    }
    total.sqrt()
}

/// `Xᵀ P X + ½‖w‖² + ½‖w_x‖²`.
pub fn v1_energy(p: &Matrix, x: &[f64], w: &[f64], h: f64) -> f64 {
    let n = x.len();
    let mut quad = 0.0;
    for i in 0..n {
        for j in 0..n {
            quad += x[i] * p[(i, j)] * x[j];
        }
    }
    quad + 0.5 * l2_sq(w, h) + 0.5 * l2_sq(&gradient(w, h), h)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecayFit {
    pub lambda: f64,
    /// `exp(intercept)`, the envelope prefactor at `t = 0`.
    pub upsilon: f64,
    pub window: (f64, f64),
    pub r_squared: f64,
    pub samples: usize,
}

/// Least-squares line through `ln v` on `window`; `λ = -slope`.
pub fn fit_decay(t: &[f64], v: &[f64], window: (f64, f64)) -> Result<DecayFit> {
    if t.len() != v.len() {
        return Err(Error::Dimension("time and value series differ in length".into()));
    }
    let mut pts = Vec::new();
    for (&ti, &vi) in t.iter().zip(v) {
        if ti < window.0 || ti > window.1 {
            continue;
        }
        if !(vi > 0.0) || !vi.is_finite() {
            return Err(Error::NonPositiveSample { t: ti, value: vi });
        }
        pts.push((ti, vi.ln()));
    }
    if pts.len() < 2 {
        return Err(Error::InvalidParameter(format!("fit window {window:?} holds {} samples", pts.len())));
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mt;
    let sse: f64 = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let r_squared = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    Ok(DecayFit {
        lambda: -slope,
        upsilon: intercept.exp(),
        window,
        r_squared,
        samples: pts.len(),
    })
}

/// Fit over `[TRANSIENT_FRACTION · t_last, t_last]` of a record field.
pub fn fit_records(records: &[Record], field: impl Fn(&Record) -> f64) -> Result<DecayFit> {
    let t: Vec<f64> = records.iter().map(|r| r.t).collect();
    let v: Vec<f64> = records.iter().map(field).collect();
    let end = t.last().copied().unwrap_or(0.0);
    fit_decay(&t, &v, (TRANSIENT_FRACTION * end, end))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct ResidualStats {
    pub max: f64,
    pub rms: f64,
    pub count: usize,
}

impl ResidualStats {
    pub fn from_values(values: impl IntoIterator<Item = f64>) -> Self {
        let (mut max, mut sq, mut count) = (0.0_f64, 0.0, 0usize);
        for v in values {
            max = max.max(v.abs());
            sq += v * v;
            count += 1;
        }
        let rms = if count > 0 { (sq / count as f64).sqrt() } else { 0.0 };
        Self { max, rms, count }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ResidualReport {
    /// `∂_t^m w(1)` minus the boundary-operator right-hand side.
    pub boundary_ode: ResidualStats,
    /// Same, against the closed-loop form with the companion coefficients.
    pub closed_loop_ode: ResidualStats,
    pub target_x: ResidualStats,
    pub w0: ResidualStats,
    pub error_heat: ResidualStats,
    pub error_boundary: ResidualStats,
}

/// Central weights for the `m`-th derivative on `2r + 1` equispaced
/// samples, `r = ⌈m / 2⌉`.
fn time_stencil(m: usize, dt: f64) -> Vec<f64> {
    let r = m.div_ceil(2);
    let nodes: Vec<f64> = (0..=2 * r).map(|i| (i as f64 - r as f64) * dt).collect();
    fornberg_weights(0.0, &nodes, m)
}

/// Residual series of the boundary ODE `∂_t^m w(1) = rhs`, one entry per
/// step with a full stencil around it; the first `skip` records are
/// left out.
pub fn boundary_ode_residuals(w1: &[f64], rhs: &[f64], m: usize, dt: f64, skip: usize) -> Vec<f64> {
    let st = time_stencil(m, dt);
    let r = st.len() / 2;
    let n = w1.len().min(rhs.len());
    (r.max(skip)..n.saturating_sub(r))
        .map(|j| {
            let d: f64 = st.iter().enumerate().map(|(k, c)| c * w1[j + k - r]).sum();
            d - rhs[j]
        })
        .collect()
}

/// Summary of a run's residual trace. The first `skip` records are
/// discarded from the ODE and heat families; the boundary families cover
/// every step.
pub fn residual_report(run: &RunResult, skip: usize) -> ResidualReport {
    let tr = &run.residuals;
    let dt = run.grid.dt;
    let m = run.synthesis.as_ref().map_or(1, |cs| cs.plant.m());
    let finite = |v: &[f64]| v.iter().copied().filter(|x| x.is_finite()).collect::<Vec<_>>();
    ResidualReport {
        boundary_ode: ResidualStats::from_values(boundary_ode_residuals(&tr.w1, &tr.aftt_rhs, m, dt, skip)),
        closed_loop_ode: ResidualStats::from_values(boundary_ode_residuals(&tr.w1, &tr.closed_rhs, m, dt, skip)),
        target_x: ResidualStats::from_values(tr.target_x.iter().skip(skip).copied()),
        w0: ResidualStats::from_values(finite(&run.records.iter().map(|r| r.w0_abs).collect::<Vec<_>>())),
        error_heat: ResidualStats::from_values(tr.wt_heat.iter().skip(skip).copied()),
        error_boundary: ResidualStats::from_values(
            finite(&run.records.iter().flat_map(|r| [r.wt0_abs, r.wt1_abs]).collect::<Vec<_>>()),
        ),
    }
}

/// Observed order `log2(coarse / fine)` for a factor-two refinement.
pub fn convergence_order(coarse: f64, fine: f64) -> f64 {
    (coarse / fine).log2()
}
