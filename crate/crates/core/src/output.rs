//! CSV and JSON persistence of simulation runs.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;
use serde_json::{json, Value};

use crate::diagnostics::{boundary_ode_residuals, fit_records, residual_report, DecayFit, TRANSIENT_FRACTION};
use crate::error::Result;
use crate::simulator::RunResult;

/// Overrides the number of significant digits (1 to 17) in CSV output.
pub const PRECISION_ENV: &str = "BACKSTEP_PRECISION";
pub const DEFAULT_DIGITS: usize = 17;

pub const TIMESERIES_COLUMNS: [&str; 15] = [
    "t",
    "theta",
    "theta_e",
    "u",
    "w0_abs",
    "x_norm",
    "z_norm",
    "ux0",
    "innovation",
    "wt0_abs",
    "wt1_abs",
    "v1",
    "boundary_ode_residual",
    "target_x_residual",
    "error_heat_residual",
];

/// Significant digits from [`PRECISION_ENV`], falling back to 17.
pub fn digits_from_env() -> usize {
    std::env::var(PRECISION_ENV)
        .ok()
        .and_then(|s| s.trim().parse::<usize>().ok())
        .filter(|d| (1..=17).contains(d))
        .unwrap_or(DEFAULT_DIGITS)
}

/// Scientific notation with `digits` significant digits; `NaN`, `inf`,
/// `-inf` for non-finite values.
pub fn format_number(v: f64, digits: usize) -> String {
    if v.is_finite() {
        format!("{:.*e}", digits.saturating_sub(1), v)
    } else {
        format!("{v}")
    }
}

fn row(out: &mut String, values: impl IntoIterator<Item = f64>, digits: usize) {
    let mut first = true;
    for v in values {
        if !first {
            out.push(',');
        }
        first = false;
        out.push_str(&format_number(v, digits));
    }
    out.push('\n');
}

/// Residual families aligned with the record index, NaN where undefined.
fn aligned_residuals(run: &RunResult) -> [Vec<f64>; 3] {
    let n = run.records.len();
    let tr = &run.residuals;
    let mut ode = vec![f64::NAN; n];
    if let Some(cs) = &run.synthesis {
        let m = cs.plant.m();
        let res = boundary_ode_residuals(&tr.w1, &tr.aftt_rhs, m, run.grid.dt, 0);
        let r = m.div_ceil(2);
        for (j, v) in res.into_iter().enumerate() {
            ode[j + r] = v;
        }
    }
    let mut tx = vec![f64::NAN; n];
    for (j, v) in tr.target_x.iter().enumerate().take(n) {
        tx[j] = *v;
    }
    let mut heat = vec![f64::NAN; n];
    for (j, v) in tr.wt_heat.iter().enumerate() {
        // the entry for step j is logged once step j + 1 is known
        heat[j] = *v;
    }
    [ode, tx, heat]
}

pub fn timeseries_csv(run: &RunResult, digits: usize) -> String {
    let mut out = TIMESERIES_COLUMNS.join(",");
    out.push('\n');
    let [ode, tx, heat] = aligned_residuals(run);
    for (j, r) in run.records.iter().enumerate() {
        row(
            &mut out,
            [
                r.t, r.theta, r.theta_e, r.u_in, r.w0_abs, r.x_norm, r.z_norm, r.ux0, r.innovation, r.wt0_abs, r.wt1_abs,
                r.v1, ode[j], tx[j], heat[j],
            ],
            digits,
        );
    }
    out
}

fn field_header(points: usize) -> String {
    let mut h = String::from("t");
    for i in 0..points {
        let _ = write!(h, ",x{i}");
    }
    h.push('\n');
    h
}

/// Snapshot matrix; `pick` returns `None` when the field is absent, giving
/// a header-only table.
pub fn field_csv(run: &RunResult, digits: usize, pick: impl Fn(&crate::simulator::Snapshot) -> Option<&Vec<f64>>) -> String {
    let mut out = field_header(run.grid.points());
    for s in &run.snapshots {
        if let Some(f) = pick(s) {
            row(&mut out, std::iter::once(s.t).chain(f.iter().copied()), digits);
        }
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct FitSummary {
    pub theta: Option<DecayFit>,
    pub theta_e: Option<DecayFit>,
    pub input: Option<DecayFit>,
}

pub fn decay_summary(run: &RunResult) -> FitSummary {
    FitSummary {
        theta: fit_records(&run.records, |r| r.theta).ok(),
        theta_e: fit_records(&run.records, |r| r.theta_e).ok(),
        input: fit_records(&run.records, |r| r.u_in.abs()).ok(),
    }
}

/// Synthesis metadata, observer gains, fits and residual summary.
pub fn report_json(name: &str, run: &RunResult) -> Value {
    let skip = (TRANSIENT_FRACTION * run.records.len() as f64) as usize;
    let last = run.records.last();
    let max_theta = run.records.iter().map(|r| r.theta).fold(0.0, f64::max);
    let max_u = run.records.iter().map(|r| r.u_in.abs()).fold(0.0, f64::max);
    json!({
        "scenario": name,
        "mode": run.mode,
        "grid": run.grid,
        "records": run.records.len(),
        "diverged_at": run.diverged_at,
        "summary": {
            "theta_max": max_theta,
            "theta_end": last.map(|r| r.theta),
            "input_max_abs": max_u,
            "input_end": last.map(|r| r.u_in),
            "theta_e_end": last.map(|r| r.theta_e).filter(|v| v.is_finite()),
        },
        "decay_fit": decay_summary(run),
        "residuals": residual_report(run, skip),
        "synthesis": run.synthesis.as_ref().map(|cs| &cs.report),
        "observer": run.observer,
    })
}

/// Writes `timeseries.csv`, `u_field.csv`, `uhat_field.csv`,
/// `error_field.csv` and `report.json` into `dir`.
pub fn write_run(name: &str, run: &RunResult, dir: &Path) -> Result<()> {
    write_run_with_digits(name, run, dir, digits_from_env())
}

pub fn write_run_with_digits(name: &str, run: &RunResult, dir: &Path, digits: usize) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("timeseries.csv"), timeseries_csv(run, digits))?;
    std::fs::write(dir.join("u_field.csv"), field_csv(run, digits, |s| Some(&s.u)))?;
    std::fs::write(dir.join("uhat_field.csv"), field_csv(run, digits, |s| s.u_hat.as_ref()))?;
    std::fs::write(dir.join("error_field.csv"), field_csv(run, digits, |s| s.error.as_ref()))?;
    let mut report = serde_json::to_string_pretty(&report_json(name, run))?;
    report.push('\n');
    std::fs::write(dir.join("report.json"), report)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use crate::plant::{GainSet, PlantConfig};
    use crate::simulator::{initial_conditions_sine, run_scenario, Mode, RunOptions};

    fn short_run(t_end: f64) -> RunResult {
        let p = PlantConfig::demo();
        let g = GridSpec { n_intervals: 20, dt: 0.001, t_end };
        run_scenario(&p, &g, &GainSet::demo(), Mode::StateFeedback, &initial_conditions_sine(&p, &g), &RunOptions::default())
            .unwrap()
    }

    #[test]
    fn number_format() {
        assert_eq!(format_number(0.1, 17), "1.0000000000000001e-1");
        assert_eq!(format_number(-2.0, 3), "-2.00e0");
        assert_eq!(format_number(f64::NAN, 17), "NaN");
        let v = 0.1 + 0.2;
        assert_eq!(format_number(v, 17).parse::<f64>().unwrap(), v);
    }

    #[test]
    fn row_counts() {
        let run = short_run(0.2);
        let ts = timeseries_csv(&run, 17);
        assert_eq!(ts.lines().count(), 1 + 201);
        assert_eq!(ts.lines().next().unwrap(), TIMESERIES_COLUMNS.join(","));
        let u = field_csv(&run, 17, |s| Some(&s.u));
        assert_eq!(u.lines().count(), 1 + 5);
        assert_eq!(u.lines().nth(1).unwrap().split(',').count(), 22);
        // no observer in state feedback: header only
        assert_eq!(field_csv(&run, 17, |s| s.u_hat.as_ref()).lines().count(), 1);
    }

    #[test]
    fn empty_series_header_only() {
        let mut run = short_run(0.0);
        run.records.clear();
        run.snapshots.clear();
        assert_eq!(timeseries_csv(&run, 17), TIMESERIES_COLUMNS.join(",") + "\n");
    }
}
