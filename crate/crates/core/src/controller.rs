//! Backstepping boundary controller.
//!
//! Pulling `U = 𝔏 w(1) - 𝔆 w(0)` back through the forward transform gives a
//! law in the original variables:
//!
//! ```text
//! U = Σ r_k ∂^k u(1) + Σ l_k ∂^k u(0) - ∫ g(y) u(y) dy + k_X X
//! ```
//!
//! with all coefficients fixed at synthesis time.

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{simpson_weights, GridSpec};
use crate::kernels::{KernelSet, SampledTransform};
use crate::linalg::{eigenvalues, is_controllable, is_hurwitz, max_real_part, Matrix};
use crate::operators::{
    assemble_boundary_operators, assemble_fbar, assemble_l, operators_json, AlphaBeta, BoundaryOperator,
    ChiTable, TargetOperators,
};
use crate::plant::{GainSet, PlantConfig};
use crate::stencil::BoundaryStencils;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
pub struct StencilConfig {
    /// Accuracy of the boundary derivatives entering the control law.
    pub control: usize,
    /// Accuracy of the measured `u_x(0, t)`, shared with the observer.
    pub measurement: usize,
}

impl Default for StencilConfig {
    fn default() -> Self {
        // control = 1 reproduces the four-point third-derivative formula
        Self {
            control: 1,
            measurement: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ComplexValue {
    pub re: f64,
    pub im: f64,
}

impl From<Complex64> for ComplexValue {
    fn from(z: Complex64) -> Self {
        Self { re: z.re, im: z.im }
    }
}

pub(crate) fn sorted_spectrum(m: &Matrix) -> Result<Vec<ComplexValue>> {
    let mut eig = eigenvalues(m)?;
    eig.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    Ok(eig.into_iter().map(ComplexValue::from).collect())
}

/// Coefficients of the control law in the original variables.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ControlLaw {
    pub right: Vec<f64>,
    pub left: Vec<f64>,
    /// `g(y_i)`.
    pub integral_kernel: Vec<f64>,
    pub state_gain: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SynthesisReport {
    pub closed_loop_eigenvalues: Vec<ComplexValue>,
    pub hurwitz_margin: f64,
    pub cond_g: f64,
    pub cond_g1: f64,
    pub gamma_sign: f64,
    pub round_trip_error: f64,
    /// Ascending coefficients of `s^m + Σ (α_i + c_m β_i) s^i`.
    pub boundary_polynomial: Vec<f64>,
    pub boundary_polynomial_roots: Vec<ComplexValue>,
    pub boundary_polynomial_hurwitz: bool,
    pub operators: serde_json::Value,
    pub fbar: Vec<f64>,
    pub law: ControlLaw,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct ControllerSynthesis {
    pub plant: PlantConfig,
    pub gains: GainSet,
    pub grid: GridSpec,
    pub kernels: KernelSet,
    pub chi: ChiTable,
    pub ops: TargetOperators,
    pub alpha_beta: AlphaBeta,
    pub l_op: BoundaryOperator,
    pub fbar: BoundaryOperator,
    pub law: ControlLaw,
    pub stencils: StencilConfig,
    pub report: SynthesisReport,
    ctrl_stencils: BoundaryStencils,
    transform: SampledTransform,
    weights: Vec<f64>,
    /// `g(y_i)` times the quadrature weight at `y_i`.
    weighted_kernel: Vec<f64>,
}

fn companion(poly: &[f64]) -> Matrix {
    // poly monic, ascending
    let m = poly.len() - 1;
    let mut c = Matrix::zeros(m, m);
    for i in 0..m - 1 {
        c[(i, i + 1)] = 1.0;
    }
    for j in 0..m {
        c[(m - 1, j)] = -poly[j];
    }
    c
}

pub fn synthesize(
    plant: &PlantConfig,
    gains: &GainSet,
    grid: &GridSpec,
    stencils: StencilConfig,
) -> Result<ControllerSynthesis> {
    plant.validate()?;
    gains.validate(plant)?;
    let (n, m) = (plant.n(), plant.m());
    if !is_controllable(&plant.a, &plant.b) {
        return Err(Error::Uncontrollable("(A, B)"));
    }
    let a_cl = &plant.a + &plant.b * &gains.k;
    if !is_hurwitz(&a_cl)? {
        return Err(Error::NotHurwitz {
            what: "A + BK",
            max_re: max_real_part(&a_cl)?,
        });
    }
    grid.validate(plant.q, m)?;

    let kernels = KernelSet::new(plant, &gains.k)?;
    let chi = ChiTable::for_order(m);
    let ops = assemble_boundary_operators(&kernels, &chi, plant, grid)?;
    let alpha_beta = AlphaBeta::new(&gains.c)?;
    let l_op = assemble_l(&ops.b_op, &alpha_beta, plant.q)?;
    let fbar = assemble_fbar(&kernels, &chi, &ops.c_op)?;

    // 𝔏 acting on w(1) = u(1) - ∫φ(1,y)u - Φ(1)X, with the Volterra term
    // differentiated through χ; likewise -𝔆 on w(0)
    let phi_kern = |x, y, a, b| kernels.phi(x, y, a, b);
    let l_trace = chi.boundary_coeffs(&l_op.deriv_coeffs, 1.0, phi_kern)?;
    let right: Vec<f64> = l_op.deriv_coeffs.iter().zip(&l_trace).map(|(l, t)| l - t).collect();
    let left: Vec<f64> = ops.c_op.deriv_coeffs.iter().zip(&fbar.deriv_coeffs).map(|(c, f)| f - c).collect();
    let xs = grid.xs();
    let mut integral_kernel = vec![0.0; xs.len()];
    let mut state_gain = vec![0.0; n];
    for (k, &lk) in l_op.deriv_coeffs.iter().enumerate() {
        if lk != 0.0 {
            for (g, &y) in integral_kernel.iter_mut().zip(&xs) {
                *g += lk * kernels.phi(1.0, y, k, 0)?;
            }
            let row = kernels.big_phi(1.0, k)?;
            for (s, v) in state_gain.iter_mut().zip(row.iter()) {
                *s -= lk * v;
            }
        }
        let ck = ops.c_op.deriv_coeffs[k];
        if ck != 0.0 {
            let row = kernels.big_phi(0.0, k)?;
            for (s, v) in state_gain.iter_mut().zip(row.iter()) {
                *s += ck * v;
            }
        }
    }
    let law = ControlLaw {
        right,
        left,
        integral_kernel,
        state_gain,
    };

    let ctrl_stencils = BoundaryStencils::new(2 * m - 1, stencils.control, grid.dx(), grid.points())?;
    BoundaryStencils::new(1, stencils.measurement, grid.dx(), grid.points())?;
    let transform = SampledTransform::new(&kernels, grid)?;
    let weights = simpson_weights(grid.points(), grid.dx());
    let weighted_kernel = law.integral_kernel.iter().zip(&weights).map(|(g, w)| g * w).collect();

    let boundary_polynomial = alpha_beta.characteristic_polynomial();
    let comp = companion(&boundary_polynomial);
    let boundary_polynomial_hurwitz = is_hurwitz(&comp)?;
    let mut warnings = Vec::new();
    if !boundary_polynomial_hurwitz {
        warnings.push("boundary polynomial s^m + Σ(α_i + c_m β_i)s^i is not Hurwitz".to_string());
    }
    let closed_loop_eigenvalues = sorted_spectrum(&a_cl)?;
    let report = SynthesisReport {
        hurwitz_margin: -max_real_part(&a_cl)?,
        closed_loop_eigenvalues,
        cond_g: kernels.cond_g(),
        cond_g1: kernels.cond_g1(),
        gamma_sign: kernels.gamma_sign(),
        round_trip_error: kernels.round_trip_error(),
        boundary_polynomial_roots: sorted_spectrum(&comp)?,
        boundary_polynomial,
        boundary_polynomial_hurwitz,
        operators: operators_json(&ops, &l_op, &alpha_beta),
        fbar: fbar.deriv_coeffs.clone(),
        law: law.clone(),
        warnings,
    };

    Ok(ControllerSynthesis {
        plant: plant.clone(),
        gains: gains.clone(),
        grid: *grid,
        kernels,
        chi,
        ops,
        alpha_beta,
        l_op,
        fbar,
        law,
        stencils,
        report,
        ctrl_stencils,
        transform,
        weights,
        weighted_kernel,
    })
}

impl ControllerSynthesis {
    fn check_inputs(&self, u: &[f64], x: &[f64]) -> Result<()> {
        if u.len() != self.grid.points() || x.len() != self.plant.n() {
            return Err(Error::Dimension(format!(
                "expected {} field samples and {} states, got {} and {}",
                self.grid.points(),
                self.plant.n(),
                u.len(),
                x.len()
            )));
        }
        Ok(())
    }

    /// Control input from field samples and the plant-side ODE state.
    pub fn state_feedback_u(&self, u: &[f64], x: &[f64]) -> Result<f64> {
        self.check_inputs(u, x)?;
        let st = &self.ctrl_stencils;
        let mut v = 0.0;
        for (k, (r, l)) in self.law.right.iter().zip(&self.law.left).enumerate() {
            if *r != 0.0 {
                v += r * st.right(u, k);
            }
            if *l != 0.0 {
                v += l * st.left(u, k);
            }
        }
        v -= self.weighted_kernel.iter().zip(u).map(|(g, f)| g * f).sum::<f64>();
        v += self.law.state_gain.iter().zip(x).map(|(g, s)| g * s).sum::<f64>();
        Ok(v)
    }

    /// The same law evaluated on observer estimates.
    pub fn output_feedback_u(&self, u_hat: &[f64], x_hat: &[f64]) -> Result<f64> {
        self.state_feedback_u(u_hat, x_hat)
    }

    /// `w` on the grid and the virtual-control states `y_1 .. y_m`, using
    /// `∂_t^j w(1) = q^j ∂_x^{2j} w(1)`.
    pub fn backstepping_coords(&self, u: &[f64], x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_inputs(u, x)?;
        let w = self.transform.forward(u, x);
        let q = self.plant.q;
        let dt_w: Vec<f64> = (0..self.plant.m())
            .map(|j| q.powi(j as i32) * self.ctrl_stencils.right(&w, 2 * j))
            .collect();
        let ys = self
            .alpha_beta
            .ys
            .iter()
            .map(|c| c.iter().zip(&dt_w).map(|(a, b)| a * b).sum())
            .collect();
        Ok((w, ys))
    }

    /// Inverse transform `u = w - ∫ψ w - Γ X` on the grid.
    pub fn inverse_coords(&self, w: &[f64], x: &[f64]) -> Vec<f64> {
        self.transform.inverse(w, x)
    }

    pub fn control_stencils(&self) -> &BoundaryStencils {
        &self.ctrl_stencils
    }

    pub fn measurement_stencils(&self) -> BoundaryStencils {
        BoundaryStencils::new(1, self.stencils.measurement, self.grid.dx(), self.grid.points())
            .expect("validated at synthesis")
    }

    pub fn quadrature_weights(&self) -> &[f64] {
        &self.weights
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::from_rows;
    use crate::plant::GainSet;

    fn grid() -> GridSpec {
        GridSpec { n_intervals: 20, dt: 0.001, t_end: 1.0 }
    }

    #[test]
    fn demo_synthesis_report() {
        let cs = synthesize(&PlantConfig::demo(), &GainSet::demo(), &grid(), StencilConfig::default()).unwrap();
        // roots of s^2 + 3.5 s + 4.5
        let disc: f64 = 3.5 * 3.5 - 4.0 * 4.5;
        assert!(disc < 0.0);
        let re = -1.75;
        let im = (-disc).sqrt() / 2.0;
        let eig = &cs.report.closed_loop_eigenvalues;
        assert!((eig[0].re - re).abs() < 1e-10 && (eig[0].im.abs() - im).abs() < 1e-10);
        assert!((eig[1].re - re).abs() < 1e-10 && (eig[1].im.abs() - im).abs() < 1e-10);
        assert_eq!(cs.report.boundary_polynomial, vec![10.0, 6.0, 1.0]);
        assert!(cs.report.boundary_polynomial_hurwitz);
        assert!(cs.report.warnings.is_empty());
        let close = |a: &[f64], b: &[f64], tol: f64| a.iter().zip(b).all(|(x, y)| (x - y).abs() < tol);
        assert!(close(&cs.law.right, &[-53.5, 1.0, -12.0, 0.0], 1e-2), "{:?}", cs.law.right);
        assert!(close(&cs.law.left, &[14.877, 0.0, 9.9586, 0.0], 1e-3), "{:?}", cs.law.left);
        assert!(close(&cs.law.state_gain, &[-17.633, -93.870], 1e-2), "{:?}", cs.law.state_gain);
    }

    #[test]
    fn rejects_unstable_closed_loop() {
        let mut g = GainSet::demo();
        g.k = Matrix::zeros(1, 2);
        let r = synthesize(&PlantConfig::demo(), &g, &grid(), StencilConfig::default());
        assert!(matches!(r, Err(Error::NotHurwitz { what: "A + BK", .. })));
    }

    #[test]
    fn rejects_uncontrollable_pair() {
        let mut p = PlantConfig::demo();
        p.a = from_rows(&[&[1.0, 0.0], &[0.0, 0.5]]);
        let r = synthesize(&p, &GainSet::demo(), &grid(), StencilConfig::default());
        assert!(matches!(r, Err(Error::Uncontrollable(_))));
    }

    fn scalar_plant(c_x: f64, abar: f64) -> PlantConfig {
        PlantConfig::new(from_rows(&[&[-1.0]]), from_rows(&[&[1.0]]), from_rows(&[&[c_x]]), 1.0, vec![abar]).unwrap()
    }

    fn scalar_gains(c1: f64) -> GainSet {
        GainSet {
            k: from_rows(&[&[0.0]]),
            c: vec![c1],
            p0: crate::linalg::Vector::from_vec(vec![0.0]),
            p2: crate::linalg::Vector::from_vec(vec![0.0]),
        }
    }

    #[test]
    fn stable_scalar_pieces_synthesize() {
        synthesize(&scalar_plant(1.0, -1.0), &scalar_gains(1.0), &grid(), StencilConfig::default()).unwrap();
    }

    #[test]
    fn decoupled_law_is_proportional() {
        let c1 = 2.5;
        let cs = synthesize(&scalar_plant(0.0, 0.0), &scalar_gains(c1), &grid(), StencilConfig::default()).unwrap();
        let u: Vec<f64> = grid().xs().iter().map(|&x| (3.0 * x).sin() + 0.2).collect();
        let got = cs.state_feedback_u(&u, &[0.4]).unwrap();
        assert!((got + c1 * u[20]).abs() < 1e-14, "{got}");
    }

    #[test]
    fn law_is_linear() {
        let cs = synthesize(&PlantConfig::demo(), &GainSet::demo(), &grid(), StencilConfig::default()).unwrap();
        let xs = grid().xs();
        let u1: Vec<f64> = xs.iter().map(|&x| (2.0 * x).cos()).collect();
        let u2: Vec<f64> = xs.iter().map(|&x| x * x * x - 0.3).collect();
        let (x1, x2) = ([0.2, -0.7], [1.1, 0.4]);
        let f = |u: &[f64], x: &[f64]| cs.state_feedback_u(u, x).unwrap();
        assert_eq!(f(&vec![0.0; 21], &[0.0, 0.0]), 0.0);
        let doubled: Vec<f64> = u1.iter().map(|v| 2.0 * v).collect();
        assert_eq!(f(&doubled, &[0.4, -1.4]), 2.0 * f(&u1, &x1));
        let sum: Vec<f64> = u1.iter().zip(&u2).map(|(a, b)| a + b).collect();
        let lhs = f(&sum, &[1.3, -0.3]);
        let rhs = f(&u1, &x1) + f(&u2, &x2);
        assert!((lhs - rhs).abs() < 1e-11 * rhs.abs().max(1.0));
        assert_eq!(cs.output_feedback_u(&u1, &x1).unwrap(), f(&u1, &x1));
    }

    #[test]
    fn identity_transform_without_kernels() {
        let mut p = PlantConfig::demo();
        p.c_x = Matrix::zeros(1, 2);
        let ks = KernelSet::new(&p, &Matrix::zeros(1, 2)).unwrap();
        let tr = SampledTransform::new(&ks, &grid()).unwrap();
        let u: Vec<f64> = grid().xs().iter().map(|&x| (x * 4.0).sin()).collect();
        assert_eq!(tr.forward(&u, &[0.3, 0.1]), u);
    }

    #[test]
    fn virtual_controls_second_order() {
        let cs = synthesize(&PlantConfig::demo(), &GainSet::demo(), &grid(), StencilConfig::default()).unwrap();
        let u: Vec<f64> = grid().xs().iter().map(|&x| (2.0 * x).sin()).collect();
        let x = [0.0, 0.3];
        let (w, y) = cs.backstepping_coords(&u, &x).unwrap();
        assert_eq!(y[0], w[20]);
        let wt = cs.control_stencils().right(&w, 2);
        assert!((y[1] - (wt + 3.0 * w[20])).abs() < 1e-12);
    }

    #[test]
    fn rejects_short_field() {
        let cs = synthesize(&PlantConfig::demo(), &GainSet::demo(), &grid(), StencilConfig::default()).unwrap();
        assert!(cs.state_feedback_u(&[0.0; 5], &[0.0, 0.0]).is_err());
    }
}
