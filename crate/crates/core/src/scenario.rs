//! JSON scenario files and their resolution into runnable inputs.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::kernels::KernelSet;
use crate::linalg::{Matrix, Vector};
use crate::observer::gains_from_poles;
use crate::plant::{GainSet, PlantConfig};
use crate::simulator::{initial_conditions_sine, InitialConditions, Mode, RunOptions, SimState};

pub const DEMO_JSON: &str = include_str!("../scenarios/demo.json");
pub const DEMO_TUNED_JSON: &str = include_str!("../scenarios/demo_tuned.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSpec {
    /// Rows of `A`.
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub c_x: Vec<f64>,
    pub q: f64,
    pub abar: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ObserverSpec {
    Gains { p0: Vec<f64>, p2: Vec<f64> },
    /// `[re, im]` pairs for the observer error matrix.
    Poles { poles: Vec<[f64; 2]> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainSpec {
    pub k: Vec<f64>,
    pub c: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observer: Option<ObserverSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialSpec {
    /// `u = sin(2πx)`, ODE states from the boundary values, observer at rest.
    Sine,
    Zero,
    /// `u(x, 0)` from a whitelisted expression in `x`.
    Expression {
        u: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        x: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        z: Option<Vec<f64>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub name: String,
    pub plant: PlantSpec,
    pub grid: GridSpec,
    pub gains: GainSpec,
    pub mode: Mode,
    pub initial: InitialSpec,
    #[serde(default)]
    pub output: RunOptions,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub plant: PlantConfig,
    pub grid: GridSpec,
    pub gains: GainSet,
    pub mode: Mode,
    pub initial: InitialConditions,
    pub options: RunOptions,
}

impl ScenarioFile {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Bundled scenarios by name: `demo`, `demo_tuned`.
    pub fn bundled(name: &str) -> Result<Self> {
        match name {
            "demo" => Self::from_json(DEMO_JSON),
            "demo_tuned" => Self::from_json(DEMO_TUNED_JSON),
            other => Err(Error::Scenario(format!("no bundled scenario {other:?}"))),
        }
    }

    /// Copy with the field at dotted `path` (e.g. `gains.c.1`) replaced.
    pub fn with_param(&self, path: &str, value: Value) -> Result<Self> {
        let mut doc = serde_json::to_value(self)?;
        let mut cur = &mut doc;
        for key in path.split('.') {
            cur = match cur {
                Value::Object(map) => map.get_mut(key),
                Value::Array(items) => key.parse::<usize>().ok().and_then(|i| items.get_mut(i)),
                _ => None,
            }
            .ok_or_else(|| Error::Scenario(format!("parameter path {path:?} not found at {key:?}")))?;
        }
        *cur = value;
        Ok(serde_json::from_value(doc)?)
    }

    pub fn plant_config(&self) -> Result<PlantConfig> {
        let p = &self.plant;
        let n = p.a.len();
        if p.a.iter().any(|r| r.len() != n) {
            return Err(Error::Dimension("rows of A must all have length n".into()));
        }
        let flat: Vec<f64> = p.a.iter().flatten().copied().collect();
        let a = Matrix::from_row_slice(n, n, &flat);
        let b = Matrix::from_column_slice(p.b.len(), 1, &p.b);
        let c_x = Matrix::from_row_slice(1, p.c_x.len(), &p.c_x);
        PlantConfig::new(a, b, c_x, p.q, p.abar.clone())
    }

    pub fn resolve(&self) -> Result<Scenario> {
        let plant = self.plant_config()?;
        self.grid.validate(plant.q, plant.m())?;
        let k = Matrix::from_row_slice(1, self.gains.k.len(), &self.gains.k);
        let (p0, p2) = match &self.gains.observer {
            None => (vec![0.0; plant.n()], vec![0.0; plant.m()]),
            Some(ObserverSpec::Gains { p0, p2 }) => (p0.clone(), p2.clone()),
            Some(ObserverSpec::Poles { poles }) => {
                if k.ncols() != plant.n() {
                    return Err(Error::Dimension(format!("K must be 1x{}", plant.n())));
                }
                let kernels = KernelSet::new(&plant, &k)?;
                let poles: Vec<Complex64> = poles.iter().map(|p| Complex64::new(p[0], p[1])).collect();
                gains_from_poles(&plant, &kernels, &poles)?
            }
        };
        let gains = GainSet {
            k,
            c: self.gains.c.clone(),
            p0: Vector::from_vec(p0),
            p2: Vector::from_vec(p2),
        };
        gains.validate(&plant)?;
        let initial = initial_conditions(&self.initial, &plant, &self.grid)?;
        Ok(Scenario {
            name: self.name.clone(),
            plant,
            grid: self.grid,
            gains,
            mode: self.mode,
            initial,
            options: self.output,
        })
    }
}

fn initial_conditions(spec: &InitialSpec, plant: &PlantConfig, grid: &GridSpec) -> Result<InitialConditions> {
    match spec {
        InitialSpec::Sine => Ok(initial_conditions_sine(plant, grid)),
        InitialSpec::Zero => Ok(InitialConditions {
            plant: SimState::zero(plant, grid),
            observer: SimState::zero(plant, grid),
        }),
        InitialSpec::Expression { u, x, z } => {
            let expr = Expr::parse(u)?;
            let mut ic = InitialConditions::from_profile(plant, grid, |s| expr.eval(s));
            if ic.plant.u.iter().any(|v| !v.is_finite()) {
                return Err(Error::Scenario(format!("initial profile {u:?} is not finite on the grid")));
            }
            let s = &mut ic.plant;
            if let Some(x) = x {
                if x.len() != plant.n() {
                    return Err(Error::Dimension(format!("initial X must have length {}", plant.n())));
                }
                s.x = x.clone();
            }
            if let Some(z) = z {
                if z.len() != plant.m() {
                    return Err(Error::Dimension(format!("initial Z must have length {}", plant.m())));
                }
                s.z = z.clone();
            }
            s.u[0] = plant.c_x.iter().zip(&s.x).map(|(c, v)| c * v).sum();
            let last = s.u.len() - 1;
            s.u[last] = s.z[0];
            Ok(ic)
        }
    }
}

/// Expression in `x` built from numbers, `pi`, `+ - * /`, integer powers
/// `^`, `sin` and `cos`.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    X,
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, i32),
    Sin(Box<Expr>),
    Cos(Box<Expr>),
}

impl Expr {
    pub fn parse(src: &str) -> Result<Self> {
        let mut p = Parser { s: src.as_bytes(), i: 0 };
        let e = p.expr()?;
        p.skip_ws();
        if p.i != p.s.len() {
            return Err(p.err("unexpected trailing input"));
        }
        Ok(e)
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Expr::Num(v) => *v,
            Expr::X => x,
            Expr::Neg(a) => -a.eval(x),
            Expr::Add(a, b) => a.eval(x) + b.eval(x),
            Expr::Sub(a, b) => a.eval(x) - b.eval(x),
            Expr::Mul(a, b) => a.eval(x) * b.eval(x),
            Expr::Div(a, b) => a.eval(x) / b.eval(x),
            Expr::Pow(a, k) => a.eval(x).powi(*k),
            Expr::Sin(a) => a.eval(x).sin(),
            Expr::Cos(a) => a.eval(x).cos(),
        }
    }
}

struct Parser<'a> {
    s: &'a [u8],
    i: usize,
}

impl Parser<'_> {
    fn err(&self, msg: &str) -> Error {
        Error::Scenario(format!("expression: {msg} at byte {}", self.i))
    }

    fn skip_ws(&mut self) {
        while self.i < self.s.len() && self.s[self.i].is_ascii_whitespace() {
            self.i += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.s.get(self.i).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.i += 1;
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            if self.eat(b'+') {
                lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
            } else if self.eat(b'-') {
                lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            if self.eat(b'*') {
                lhs = Expr::Mul(Box::new(lhs), Box::new(self.unary()?));
            } else if self.eat(b'/') {
                lhs = Expr::Div(Box::new(lhs), Box::new(self.unary()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.eat(b'-') {
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        let base = self.atom()?;
        if self.eat(b'^') {
            self.skip_ws();
            let start = self.i;
            while self.i < self.s.len() && self.s[self.i].is_ascii_digit() {
                self.i += 1;
            }
            let k: i32 = std::str::from_utf8(&self.s[start..self.i])
                .ok()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| self.err("exponent must be a non-negative integer"))?;
            return Ok(Expr::Pow(Box::new(base), k));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr> {
        match self.peek() {
            Some(b'(') => {
                self.i += 1;
                let e = self.expr()?;
                if !self.eat(b')') {
                    return Err(self.err("expected ')'"));
                }
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => {
                let start = self.i;
                while self.i < self.s.len() && (self.s[self.i].is_ascii_digit() || self.s[self.i] == b'.') {
                    self.i += 1;
                }
                if self.i < self.s.len() && matches!(self.s[self.i], b'e' | b'E') {
                    self.i += 1;
                    if self.i < self.s.len() && matches!(self.s[self.i], b'+' | b'-') {
                        self.i += 1;
                    }
                    while self.i < self.s.len() && self.s[self.i].is_ascii_digit() {
                        self.i += 1;
                    }
                }
                std::str::from_utf8(&self.s[start..self.i])
                    .ok()
                    .and_then(|t| t.parse().ok())
                    .map(Expr::Num)
                    .ok_or_else(|| self.err("bad number"))
            }
            Some(c) if c.is_ascii_alphabetic() => {
                let start = self.i;
                while self.i < self.s.len() && self.s[self.i].is_ascii_alphanumeric() {
                    self.i += 1;
                }
                match &self.s[start..self.i] {
                    b"x" => Ok(Expr::X),
                    b"pi" => Ok(Expr::Num(std::f64::consts::PI)),
                    name @ (b"sin" | b"cos") => {
                        let is_sin = name == b"sin";
                        if !self.eat(b'(') {
                            return Err(self.err("expected '(' after function name"));
                        }
                        let arg = Box::new(self.expr()?);
                        if !self.eat(b')') {
                            return Err(self.err("expected ')'"));
                        }
                        Ok(if is_sin { Expr::Sin(arg) } else { Expr::Cos(arg) })
                    }
                    other => {
                        self.i = start;
                        Err(self.err(&format!("unknown identifier {:?}", String::from_utf8_lossy(other))))
                    }
                }
            }
            _ => Err(self.err("expected a value")),
        }
    }
}
