//! Plant description: an `n`-dimensional ODE at `x = 0`, the heat equation on
//! `[0, 1]`, and an `m`-dimensional actuator ODE in companion form at `x = 1`.
//!
//! ```text
//! X' = A X + B u_x(0, t)
//! u_t = q u_xx
//! u(0, t) = C_X X,   u(1, t) = C_z Z
//! Z' = A_z Z + B_z U
//! ```

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};

#[derive(Debug, Clone, PartialEq)]
pub struct PlantConfig {
    pub a: Matrix,
    /// `n x 1`
    pub b: Matrix,
    /// `1 x n`
    pub c_x: Matrix,
    pub q: f64,
    /// Last row of `A_z`: `abar[0] .. abar[m-1]`.
    pub abar: Vec<f64>,
}

impl PlantConfig {
    pub fn new(a: Matrix, b: Matrix, c_x: Matrix, q: f64, abar: Vec<f64>) -> Result<Self> {
        let plant = Self { a, b, c_x, q, abar };
        plant.validate()?;
        Ok(plant)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.a.nrows();
        if n == 0 || self.a.ncols() != n {
            return Err(Error::Dimension(format!(
                "A must be square and non-empty, got {}x{}",
                self.a.nrows(),
                self.a.ncols()
            )));
        }
        if self.b.shape() != (n, 1) {
            return Err(Error::Dimension(format!(
                "B must be {n}x1, got {:?}",
                self.b.shape()
            )));
        }
        if self.c_x.shape() != (1, n) {
            return Err(Error::Dimension(format!(
                "C_X must be 1x{n}, got {:?}",
                self.c_x.shape()
            )));
        }
        if self.abar.is_empty() {
            return Err(Error::Dimension("actuator order m must be at least 1".into()));
        }
        if !(self.q.is_finite() && self.q > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "diffusivity q must be positive, got {}",
                self.q
            )));
        }
        let finite = self.a.iter().chain(self.b.iter()).chain(self.c_x.iter());
        if finite.chain(self.abar.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("plant matrices"));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.abar.len()
    }

    /// Companion matrix: ones on the superdiagonal, `abar` on the last row.
    pub fn a_z(&self) -> Matrix {
        let m = self.m();
        let mut az = Matrix::zeros(m, m);
        for i in 0..m - 1 {
            az[(i, i + 1)] = 1.0;
        }
        for (j, &v) in self.abar.iter().enumerate() {
            az[(m - 1, j)] = v;
        }
        az
    }

    pub fn b_z(&self) -> Matrix {
        let mut b = Matrix::zeros(self.m(), 1);
        b[(self.m() - 1, 0)] = 1.0;
        b
    }

    /// Two second-order systems around a unit-diffusivity rod: unstable
    /// saddle `A = [1, 1; 1, 0.5]` and actuator `A_z = [0, 1; 1, 1]`.
    pub fn demo() -> Self {
        Self {
            a: Matrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 0.5]),
            b: Matrix::from_row_slice(2, 1, &[0.0, 1.0]),
            c_x: Matrix::from_row_slice(1, 2, &[1.0, 0.0]),
            q: 1.0,
            abar: vec![1.0, 1.0],
        }
    }

    pub fn c_z(&self) -> Matrix {
        let mut c = Matrix::zeros(1, self.m());
        c[(0, 0)] = 1.0;
        c
    }
}

/// Controller gains (`K`, `c_1..c_m`) and observer injection gains.
#[derive(Debug, Clone, PartialEq)]
pub struct GainSet {
    /// `1 x n`, chosen so that `A + B K` is Hurwitz.
    pub k: Matrix,
    /// ODE-backstepping gains, all positive, one per actuator state.
    pub c: Vec<f64>,
    /// `n x 1` injection into the `X` estimate.
    pub p0: Vector,
    /// `m x 1` injection into the `Z` estimate.
    pub p2: Vector,
}

impl GainSet {
    /// `K = [-10, -5]`, `c = (3, 3)`, `P_0 = [-2, -4]`, `P_2 = [-4, -12]`.
    pub fn demo() -> Self {
        Self {
            k: Matrix::from_row_slice(1, 2, &[-10.0, -5.0]),
            c: vec![3.0, 3.0],
            p0: Vector::from_vec(vec![-2.0, -4.0]),
            p2: Vector::from_vec(vec![-4.0, -12.0]),
        }
    }

    pub fn validate(&self, plant: &PlantConfig) -> Result<()> {
        let (n, m) = (plant.n(), plant.m());
        if self.k.shape() != (1, n) {
            return Err(Error::Dimension(format!(
                "K must be 1x{n}, got {:?}",
                self.k.shape()
            )));
        }
        if self.c.len() != m {
            return Err(Error::Dimension(format!(
                "expected {m} backstepping gains, got {}",
                self.c.len()
            )));
        }
        if let Some(bad) = self.c.iter().find(|&&c| !(c > 0.0 && c.is_finite())) {
            return Err(Error::InvalidParameter(format!(
                "backstepping gains must be positive, got {bad}"
            )));
        }
        if self.p0.len() != n || self.p2.len() != m {
            return Err(Error::Dimension(format!(
                "observer gains must have lengths {n} and {m}, got {} and {}",
                self.p0.len(),
                self.p2.len()
            )));
        }
        Ok(())
    }
}
