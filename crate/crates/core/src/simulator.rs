//! Explicit finite-difference simulation of the cascade: forward Euler for
//! both ODEs, FTCS for the heat equation, Dirichlet data imposed last.

use serde::{Deserialize, Serialize};

use crate::controller::{synthesize, ControllerSynthesis, StencilConfig};
use crate::diagnostics::{theta_e, theta_norm, v1_energy};
use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::linalg::{solve_lyapunov, Matrix};
use crate::observer::{build_observer, error_transform, observer_step, ObserverGains};
use crate::plant::{GainSet, PlantConfig};
use crate::stencil::BoundaryStencils;

/// Any sample beyond this magnitude marks the run as diverged.
pub const DIVERGENCE_BOUND: f64 = 1e9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    OpenLoop,
    StateFeedback,
    OutputFeedback,
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "open_loop" => Ok(Mode::OpenLoop),
            "state_feedback" => Ok(Mode::StateFeedback),
            "output_feedback" => Ok(Mode::OutputFeedback),
            other => Err(Error::InvalidParameter(format!("unknown mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::OpenLoop => "open_loop",
            Mode::StateFeedback => "state_feedback",
            Mode::OutputFeedback => "output_feedback",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub u: Vec<f64>,
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    pub t: f64,
    pub u_applied: f64,
}

impl SimState {
    pub fn zero(plant: &PlantConfig, grid: &GridSpec) -> Self {
        Self {
            u: vec![0.0; grid.points()],
            x: vec![0.0; plant.n()],
            z: vec![0.0; plant.m()],
            t: 0.0,
            u_applied: 0.0,
        }
    }

    fn max_abs(&self) -> f64 {
        self.u
            .iter()
            .chain(&self.x)
            .chain(&self.z)
            .map(|v| if v.is_finite() { v.abs() } else { f64::INFINITY })
            .fold(0.0, f64::max)
    }
}

/// Output injection `ε` with gains into the ODEs and the interior.
pub(crate) struct Injection<'a> {
    pub eps: f64,
    pub p0: &'a [f64],
    pub p1: &'a [f64],
    pub p2: &'a [f64],
}

fn mat_vec(a: &Matrix, v: &[f64], out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate() {
        *o = (0..v.len()).map(|j| a[(i, j)] * v[j]).sum();
    }
}

/// One explicit step. `ux0` drives the `X` equation; for the plant it is
/// its own boundary flux, for the observer the measured one.
pub(crate) fn advance(
    s: &SimState,
    plant: &PlantConfig,
    grid: &GridSpec,
    ux0: f64,
    u_in: f64,
    inj: Option<Injection<'_>>,
) -> SimState {
    let dt = grid.dt;
    let h = grid.dx();
    let (n, m) = (plant.n(), plant.m());
    let mut ax = vec![0.0; n];
    mat_vec(&plant.a, &s.x, &mut ax);
    let mut x: Vec<f64> = (0..n).map(|i| s.x[i] + dt * (ax[i] + plant.b[(i, 0)] * ux0)).collect();
    // companion dynamics: z_i' = z_{i+1}, z_m' = abar · z + U
    let mut z = s.z.clone();
    for i in 0..m - 1 {
        z[i] += dt * s.z[i + 1];
    }
    let last: f64 = plant.abar.iter().zip(&s.z).map(|(a, v)| a * v).sum();
    z[m - 1] += dt * (last + u_in);

    let r = plant.q * dt / (h * h);
    let nu = s.u.len();
    let mut u = vec![0.0; nu];
    for i in 1..nu - 1 {
        u[i] = s.u[i] + r * (s.u[i + 1] - 2.0 * s.u[i] + s.u[i - 1]);
    }
    if let Some(inj) = inj {
        for i in 0..n {
            x[i] += dt * inj.p0[i] * inj.eps;
        }
        for i in 0..m {
            z[i] += dt * inj.p2[i] * inj.eps;
        }
        for i in 1..nu - 1 {
            u[i] += dt * inj.p1[i] * inj.eps;
        }
    }
    u[0] = (0..n).map(|j| plant.c_x[(0, j)] * x[j]).sum();
    u[nu - 1] = z[0];
    SimState {
        u,
        x,
        z,
        t: s.t + dt,
        u_applied: u_in,
    }
}

/// Plant step with `u_x(0)` taken from `meas`.
pub fn plant_step(s: &SimState, plant: &PlantConfig, grid: &GridSpec, meas: &BoundaryStencils, u_in: f64) -> SimState {
    advance(s, plant, grid, meas.left(&s.u, 1), u_in, None)
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitialConditions {
    pub plant: SimState,
    pub observer: SimState,
}

impl InitialConditions {
    /// Plant field from `profile`; `X(0)` is the minimum-norm solution of
    /// `C_X X = u(0)`, `Z(0) = [u(1), 0, ..]`; the observer starts at rest.
    /// Boundary samples are then reset to `C_X X`, `C_z Z`.
    pub fn from_profile(plant: &PlantConfig, grid: &GridSpec, profile: impl Fn(f64) -> f64) -> Self {
        let mut s = SimState::zero(plant, grid);
        s.u = grid.xs().iter().map(|&x| profile(x)).collect();
        let u0 = s.u[0];
        let cnorm: f64 = plant.c_x.iter().map(|c| c * c).sum();
        if cnorm > 0.0 {
            s.x = plant.c_x.iter().map(|c| c * u0 / cnorm).collect();
        }
        s.z[0] = *s.u.last().expect("non-empty grid");
        s.u[0] = plant.c_x.iter().zip(&s.x).map(|(c, v)| c * v).sum();
        let last = s.u.len() - 1;
        s.u[last] = s.z[0];
        Self {
            plant: s,
            observer: SimState::zero(plant, grid),
        }
    }
}

/// `u(x, 0) = sin(2πx)`, `X(0) = [u(0,0), 0]`, `Z(0) = [u(1,0), 0]`,
/// observer at rest.
pub fn initial_conditions_sine(plant: &PlantConfig, grid: &GridSpec) -> InitialConditions {
    InitialConditions::from_profile(plant, grid, |x| (2.0 * std::f64::consts::PI * x).sin())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Record {
    pub t: f64,
    pub theta: f64,
    /// NaN outside output feedback.
    pub theta_e: f64,
    pub u_in: f64,
    pub w0_abs: f64,
    pub x_norm: f64,
    pub z_norm: f64,
    pub ux0: f64,
    pub innovation: f64,
    pub wt0_abs: f64,
    pub wt1_abs: f64,
    pub v1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub t: f64,
    pub u: Vec<f64>,
    pub u_hat: Option<Vec<f64>>,
    pub error: Option<Vec<f64>>,
}

/// Per-step quantities feeding the residual checks, aligned with the
/// records.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResidualTrace {
    pub w1: Vec<f64>,
    /// `𝔅 w(1) + 𝔆 w(0) - ∫𝔇 w + 𝔈 X + U`.
    pub aftt_rhs: Vec<f64>,
    /// `-∫𝔇 w + 𝔈 X - Σ (α_i + c_m β_i) ∂_t^i w(1)`.
    pub closed_rhs: Vec<f64>,
    /// `|X' - (A + BK) X - B w_x(0)|` with `X'` the Euler increment.
    pub target_x: Vec<f64>,
    /// Max interior `|(w̃^{j+1} - w̃^j)/Δt - q Δ² w̃^j / Δx²|`, one entry
    /// fewer than the records.
    pub wt_heat: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunOptions {
    pub stencils: StencilConfig,
    pub snapshot_stride: usize,
    /// Accuracy of the stencils used only for diagnostics.
    pub diagnostic_accuracy: usize,
    /// Highest derivative included in the observer-error norm.
    pub theta_e_order: usize,
    pub residuals: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            stencils: StencilConfig::default(),
            snapshot_stride: 50,
            diagnostic_accuracy: 3,
            theta_e_order: 2,
            residuals: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub mode: Mode,
    pub grid: GridSpec,
    pub records: Vec<Record>,
    pub snapshots: Vec<Snapshot>,
    pub residuals: ResidualTrace,
    /// Time at which the divergence bound was crossed.
    pub diverged_at: Option<f64>,
    pub synthesis: Option<ControllerSynthesis>,
    pub observer: Option<ObserverGains>,
    pub final_plant: SimState,
    pub final_observer: Option<SimState>,
}

struct Probe<'a> {
    cs: &'a ControllerSynthesis,
    diag: BoundaryStencils,
    lyap: Matrix,
    a_cl: Matrix,
}

impl Probe<'_> {
    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    /// `(w(0), V_1)` and the residual-trace entries for one state.
    fn measure(&self, s: &SimState, ux0: f64, u_in: f64, trace: Option<&mut ResidualTrace>) -> Result<(f64, f64)> {
        let cs = self.cs;
        let plant = &cs.plant;
        let (w, _) = cs.backstepping_coords(&s.u, &s.x)?;
        let h = cs.grid.dx();
        let v1 = v1_energy(&self.lyap, &s.x, &w, h);
        if let Some(tr) = trace {
            let st = &self.diag;
            let ops = &cs.ops;
            let integral = Self::dot(&ops.d_op, &Self::weighted(&w, cs.quadrature_weights()));
            let right: Vec<f64> = (0..ops.b_op.order()).map(|k| st.right(&w, k)).collect();
            let left: Vec<f64> = (0..ops.c_op.order()).map(|k| st.left(&w, k)).collect();
            let ex = Self::dot(&ops.e_op, &s.x);
            tr.w1.push(*w.last().expect("non-empty"));
            tr.aftt_rhs.push(ops.b_op.apply_exact(&right) + ops.c_op.apply_exact(&left) - integral + ex + u_in);
            let closed: f64 = cs
                .alpha_beta
                .closed_loop()
                .iter()
                .enumerate()
                .map(|(i, c)| c * plant.q.powi(i as i32) * right[2 * i])
                .sum();
            tr.closed_rhs.push(-integral + ex - closed);
            let n = plant.n();
            let wx0 = st.left(&w, 1);
            let mut worst: f64 = 0.0;
            for i in 0..n {
                let ax: f64 = (0..n).map(|j| plant.a[(i, j)] * s.x[j]).sum();
                let acl: f64 = (0..n).map(|j| self.a_cl[(i, j)] * s.x[j]).sum();
                let b = plant.b[(i, 0)];
                worst = worst.max(((ax + b * ux0) - (acl + b * wx0)).abs());
            }
            tr.target_x.push(worst);
        }
        Ok((w[0].abs(), v1))
    }

    fn weighted(w: &[f64], q: &[f64]) -> Vec<f64> {
        w.iter().zip(q).map(|(a, b)| a * b).collect()
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn run_scenario(
    plant: &PlantConfig,
    grid: &GridSpec,
    gains: &GainSet,
    mode: Mode,
    init: &InitialConditions,
    opts: &RunOptions,
) -> Result<RunResult> {
    plant.validate()?;
    grid.validate(plant.q, plant.m())?;
    let synthesis = match mode {
        Mode::OpenLoop => synthesize(plant, gains, grid, opts.stencils).ok(),
        _ => Some(synthesize(plant, gains, grid, opts.stencils)?),
    };
    let observer = match (mode, &synthesis) {
        (Mode::OutputFeedback, Some(cs)) => Some(build_observer(
            plant,
            &cs.kernels,
            gains.p0.as_slice(),
            gains.p2.as_slice(),
            grid,
        )?),
        _ => None,
    };
    let meas = BoundaryStencils::new(1, opts.stencils.measurement, grid.dx(), grid.points())?;
    let probe = match &synthesis {
        Some(cs) => {
            let a_cl = &plant.a + &plant.b * &gains.k;
            Some(Probe {
                cs,
                diag: BoundaryStencils::new(2 * plant.m() - 1, opts.diagnostic_accuracy, grid.dx(), grid.points())?,
                lyap: solve_lyapunov(&a_cl, &Matrix::identity(plant.n(), plant.n()))?,
                a_cl,
            })
        }
        None => None,
    };
    for (what, s) in [("plant", &init.plant), ("observer", &init.observer)] {
        if s.u.len() != grid.points() || s.x.len() != plant.n() || s.z.len() != plant.m() {
            return Err(Error::Dimension(format!("{what} initial state does not match the plant and grid")));
        }
    }

    let h = grid.dx();
    let steps = grid.steps();
    let stride = opts.snapshot_stride.max(1);
    let mut state = init.plant.clone();
    let mut obs = observer.as_ref().map(|_| init.observer.clone());
    let mut records = Vec::with_capacity(steps + 1);
    let mut snapshots = Vec::new();
    let mut trace = ResidualTrace::default();
    let mut prev_wt: Option<Vec<f64>> = None;
    let mut diverged_at = None;

    for j in 0..=steps {
        let t = j as f64 * grid.dt;
        state.t = t;
        let ux0 = meas.left(&state.u, 1);
        let u_in = match (mode, &synthesis, &obs) {
            (Mode::OpenLoop, _, _) => 0.0,
            (Mode::StateFeedback, Some(cs), _) => cs.state_feedback_u(&state.u, &state.x)?,
            (Mode::OutputFeedback, Some(cs), Some(o)) => cs.output_feedback_u(&o.u, &o.x)?,
            _ => unreachable!("feedback modes always synthesize"),
        };

        let (mut theta_err, mut innovation, mut wt0, mut wt1) = (f64::NAN, f64::NAN, f64::NAN, f64::NAN);
        let mut err_field = None;
        if let (Some(o), Some(g)) = (&obs, &observer) {
            innovation = ux0 - meas.left(&o.u, 1);
            let du: Vec<f64> = state.u.iter().zip(&o.u).map(|(a, b)| a - b).collect();
            let dx: Vec<f64> = state.x.iter().zip(&o.x).map(|(a, b)| a - b).collect();
            let dz: Vec<f64> = state.z.iter().zip(&o.z).map(|(a, b)| a - b).collect();
            theta_err = theta_e(&du, &dx, &dz, h, opts.theta_e_order);
            let wt = error_transform(&state, o, g);
            wt0 = wt[0].abs();
            wt1 = wt[wt.len() - 1].abs();
            if opts.residuals {
                if let Some(p) = &prev_wt {
                    let r = plant.q / (h * h);
                    let worst = (1..wt.len() - 1)
                        .map(|i| ((wt[i] - p[i]) / grid.dt - r * (p[i + 1] - 2.0 * p[i] + p[i - 1])).abs())
                        .fold(0.0, f64::max);
                    trace.wt_heat.push(worst);
                }
                prev_wt = Some(wt);
            }
            err_field = Some(du);
        }
        let (w0_abs, v1) = match &probe {
            Some(p) => p.measure(&state, ux0, u_in, opts.residuals.then_some(&mut trace))?,
            None => (f64::NAN, f64::NAN),
        };
        records.push(Record {
            t,
            theta: theta_norm(&state.u, &state.x, &state.z, h),
            theta_e: theta_err,
            u_in,
            w0_abs,
            x_norm: norm(&state.x),
            z_norm: norm(&state.z),
            ux0,
            innovation,
            wt0_abs: wt0,
            wt1_abs: wt1,
            v1,
        });
        if j % stride == 0 {
            snapshots.push(Snapshot {
                t,
                u: state.u.clone(),
                u_hat: obs.as_ref().map(|o| o.u.clone()),
                error: err_field,
            });
        }
        if j == steps {
            break;
        }

        if let (Some(o), Some(g)) = (&obs, &observer) {
            obs = Some(observer_step(o, plant, g, grid, &meas, ux0, u_in));
        }
        state = advance(&state, plant, grid, ux0, u_in, None);
        let bad = state.max_abs() > DIVERGENCE_BOUND
            || obs.as_ref().is_some_and(|o| o.max_abs() > DIVERGENCE_BOUND);
        if bad {
            diverged_at = Some((j + 1) as f64 * grid.dt);
            break;
        }
    }

    Ok(RunResult {
        mode,
        grid: *grid,
        records,
        snapshots,
        residuals: trace,
        diverged_at,
        synthesis,
        observer,
        final_plant: state,
        final_observer: obs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::simpson;

    fn grid() -> GridSpec {
        GridSpec { n_intervals: 20, dt: 0.001, t_end: 0.5 }
    }

    #[test]
    fn equilibrium_stays_zero() {
        let p = PlantConfig::demo();
        let g = grid();
        let meas = BoundaryStencils::new(1, 2, g.dx(), g.points()).unwrap();
        let mut s = SimState::zero(&p, &g);
        for _ in 0..100 {
            s = plant_step(&s, &p, &g, &meas, 0.0);
        }
        assert!(s.max_abs() == 0.0);
    }

    #[test]
    fn ftcs_mode_decay_factor() {
        // X, Z pinned at zero through B = 0 and zero boundary data
        let mut p = PlantConfig::demo();
        p.b = Matrix::zeros(2, 1);
        let g = grid();
        let mut s = SimState::zero(&p, &g);
        s.u = g.xs().iter().map(|&x| (std::f64::consts::PI * x).sin()).collect();
        s.u[20] = 0.0;
        let next = advance(&s, &p, &g, 0.0, 0.0, None);
        let h = g.dx();
        let factor = 1.0 - 4.0 * p.q * g.dt * (std::f64::consts::PI * h / 2.0).sin().powi(2) / (h * h);
        for i in 1..20 {
            assert!((next.u[i] - factor * s.u[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn boundary_consistency_every_step() {
        let p = PlantConfig::demo();
        let g = grid();
        let meas = BoundaryStencils::new(1, 2, g.dx(), g.points()).unwrap();
        let mut s = initial_conditions_sine(&p, &g).plant;
        s.u = g.xs().iter().map(|&x| (2.0 * x).cos()).collect();
        for k in 0..50 {
            s = plant_step(&s, &p, &g, &meas, (k as f64 * 0.1).sin());
            assert_eq!(s.u[0], s.x[0]);
            assert_eq!(s.u[20], s.z[0]);
        }
    }

    #[test]
    fn heat_energy_non_increasing() {
        let mut p = PlantConfig::demo();
        p.b = Matrix::zeros(2, 1);
        let g = grid();
        let mut s = SimState::zero(&p, &g);
        s.u = g.xs().iter().map(|&x| (x * (1.0 - x)).powi(2) * 30.0 + (9.0 * x).sin() * x * (1.0 - x)).collect();
        let energy = |u: &[f64]| simpson(&u.iter().map(|v| v * v).collect::<Vec<_>>(), g.dx());
        let mut e = energy(&s.u);
        for _ in 0..200 {
            s = advance(&s, &p, &g, 0.0, 0.0, None);
            let en = energy(&s.u);
            assert!(en <= e + 1e-15);
            e = en;
        }
    }

    #[test]
    fn sine_initial_conditions() {
        let p = PlantConfig::demo();
        let ic = initial_conditions_sine(&p, &grid());
        assert_eq!(ic.plant.u.len(), 21);
        assert_eq!(ic.plant.x, vec![0.0, 0.0]);
        assert!(ic.plant.z[0].abs() < 1e-15 && ic.plant.z[1] == 0.0);
        assert!(ic.observer.u.iter().all(|&v| v == 0.0));
        for (i, v) in ic.plant.u.iter().enumerate().skip(1).take(19) {
            assert!((v - (2.0 * std::f64::consts::PI * i as f64 / 20.0).sin()).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_horizon_single_record() {
        let p = PlantConfig::demo();
        let g = GridSpec { t_end: 0.0, ..grid() };
        let r = run_scenario(&p, &g, &GainSet::demo(), Mode::OpenLoop, &initial_conditions_sine(&p, &g), &RunOptions::default()).unwrap();
        assert_eq!(r.records.len(), 1);
    }

    #[test]
    fn observer_with_zero_innovation_copies_plant() {
        let p = PlantConfig::demo();
        let g = grid();
        let meas = BoundaryStencils::new(1, 2, g.dx(), g.points()).unwrap();
        let mut s = initial_conditions_sine(&p, &g).plant;
        s.x = vec![s.u[0], 0.4];
        let gains = ObserverGains {
            p0: vec![3.0, -1.0],
            p2: vec![2.0, 5.0],
            p1_grid: vec![1.0; 21],
            vartheta_grid: vec![vec![0.0; 2]; 21],
            theta_grid: vec![vec![0.0; 2]; 21],
            vartheta_d0: vec![0.0; 2],
            theta_d0: vec![0.0; 2],
            a_bar: Matrix::zeros(4, 4),
            a_bar_eigenvalues: vec![],
            observability_rank: 0,
        };
        let plant_next = plant_step(&s, &p, &g, &meas, 0.7);
        let obs_next = observer_step(&s, &p, &gains, &g, &meas, meas.left(&s.u, 1), 0.7);
        assert_eq!(plant_next, obs_next);
    }
}
