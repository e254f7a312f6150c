//! Invariant suite run by `backstep verify`.

use serde::Serialize;

use crate::controller::synthesize;
use crate::diagnostics::fit_records;
use crate::error::Result;
use crate::kernels::{round_trip_battery, KernelSet};
use crate::linalg::{max_real_part, Matrix};
use crate::observer::build_observer;
use crate::output::timeseries_csv;
use crate::scenario::ScenarioFile;
use crate::simulator::{run_scenario, Mode};

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub suite: &'static str,
    pub name: &'static str,
    pub value: f64,
    /// Human-readable pass condition.
    pub condition: String,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub scenario: String,
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn table(&self) -> String {
        let mut out = format!("{:<12} {:<28} {:>14}  {:<22} result\n", "suite", "check", "value", "condition");
        for c in &self.checks {
            out.push_str(&format!(
                "{:<12} {:<28} {:>14.6e}  {:<22} {}\n",
                c.suite,
                c.name,
                c.value,
                c.condition,
                if c.pass { "PASS" } else { "FAIL" }
            ));
        }
        out
    }
}

struct Suite(Vec<Check>);

impl Suite {
    fn at_most(&mut self, suite: &'static str, name: &'static str, value: f64, bound: f64) {
        self.0.push(Check {
            suite,
            name,
            value,
            condition: format!("<= {bound:e}"),
            pass: value <= bound,
        });
    }

    fn negative(&mut self, suite: &'static str, name: &'static str, value: f64) {
        self.0.push(Check { suite, name, value, condition: "< 0".into(), pass: value < 0.0 });
    }

    fn positive(&mut self, suite: &'static str, name: &'static str, value: f64) {
        self.0.push(Check { suite, name, value, condition: "> 0".into(), pass: value > 0.0 });
    }

    fn flag(&mut self, suite: &'static str, name: &'static str, ok: bool, condition: &str) {
        self.0.push(Check {
            suite,
            name,
            value: if ok { 1.0 } else { 0.0 },
            condition: condition.into(),
            pass: ok,
        });
    }
}

fn amax(m: &Matrix) -> f64 {
    m.amax()
}

pub fn verify(file: &ScenarioFile) -> Result<VerifyReport> {
    let sc = file.resolve()?;
    let plant = &sc.plant;
    let mut s = Suite(Vec::new());

    let ks = KernelSet::new(plant, &sc.gains.k)?;
    s.at_most("kernel", "big_phi(0) - C_X", amax(&(ks.big_phi(0.0, 0)? - &plant.c_x)), 1e-12);
    let obs_bc = [
        amax(&ks.vartheta(0.0, 0)?),
        amax(&(ks.vartheta(1.0, 0)? + plant.c_z())),
        amax(&(ks.theta(0.0, 0)? + &plant.c_x)),
        amax(&ks.theta(1.0, 0)?),
    ]
    .into_iter()
    .fold(0.0, f64::max);
    s.at_most("kernel", "observer boundary values", obs_bc, 1e-12);
    let mut bvp: f64 = 0.0;
    for i in 0..=100 {
        let x = i as f64 / 100.0;
        let rv = ks.vartheta(x, 2)? * plant.q - ks.vartheta(x, 0)? * plant.a_z();
        let rt = ks.theta(x, 2)? * plant.q - ks.theta(x, 0)? * &plant.a;
        bvp = bvp.max(rv.amax()).max(rt.amax());
    }
    s.at_most("kernel", "observer BVP residual", bvp, 1e-8);
    s.at_most("kernel", "transform round trip", round_trip_battery(&ks, 200)?, 1e-6);

    let cs = synthesize(plant, &sc.gains, &sc.grid, sc.options.stencils)?;
    s.negative("controller", "max Re eig(A + BK)", max_real_part(&(&plant.a + &plant.b * &sc.gains.k))?);
    let roots = &cs.report.boundary_polynomial_roots;
    s.negative("controller", "max Re boundary roots", roots.iter().map(|r| r.re).fold(f64::NEG_INFINITY, f64::max));

    let observer = build_observer(plant, &ks, sc.gains.p0.as_slice(), sc.gains.p2.as_slice(), &sc.grid);
    match &observer {
        Ok(g) => {
            s.negative("observer", "max Re eig(error matrix)", g.a_bar_eigenvalues.iter().map(|e| e.re).fold(f64::NEG_INFINITY, f64::max));
            s.flag("observer", "observable pair", g.observability_rank == plant.n() + plant.m(), "full rank");
        }
        Err(crate::Error::NotHurwitz { max_re, .. }) => s.negative("observer", "max Re eig(error matrix)", *max_re),
        Err(e) => s.flag("observer", "observer build", false, &e.to_string()),
    }

    let mode = if sc.mode == Mode::OutputFeedback && observer.is_err() { Mode::StateFeedback } else { sc.mode };
    let run = run_scenario(plant, &sc.grid, &sc.gains, mode, &sc.initial, &sc.options)?;
    let fin = &run.final_plant;
    let cx: f64 = plant.c_x.iter().zip(&fin.x).map(|(c, v)| c * v).sum();
    let bc = (fin.u[0] - cx).abs().max((fin.u[fin.u.len() - 1] - fin.z[0]).abs());
    s.at_most("simulation", "boundary consistency", bc, 0.0);
    let w0 = run.records.iter().map(|r| r.w0_abs).filter(|v| v.is_finite()).fold(0.0, f64::max);
    s.at_most("simulation", "max |w(0, t)|", w0, 1e-3);
    if mode == Mode::OutputFeedback {
        let wt = run.records.iter().flat_map(|r| [r.wt0_abs, r.wt1_abs]).fold(0.0, f64::max);
        s.at_most("simulation", "max |error w(0|1, t)|", wt, 1e-8);
    }
    if mode != Mode::OpenLoop {
        s.flag("simulation", "no divergence", run.diverged_at.is_none(), "bounded");
        s.positive(
            "simulation",
            if mode == Mode::OutputFeedback { "theta decay rate (output)" } else { "theta decay rate (state)" },
            fit_records(&run.records, |r| r.theta).map_or(f64::NAN, |f| f.lambda),
        );
    }
    let again = run_scenario(plant, &sc.grid, &sc.gains, mode, &sc.initial, &sc.options)?;
    s.flag("simulation", "deterministic rerun", timeseries_csv(&run, 17) == timeseries_csv(&again, 17), "identical");

    Ok(VerifyReport { scenario: sc.name, checks: s.0 })
}
