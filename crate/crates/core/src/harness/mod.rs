//! The three bench experiments: coast-down identification, dynamometer grade
//! sweep and road-vs-dyno throttle comparison.

pub mod report;
pub mod sim;
pub mod sweep;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::config::Config;
use crate::error::{Error, Result};
use crate::powertrain::Strategy;
use crate::vehicle::{
    average_opposite_runs, derive_aero_rolling, fit_resistance_curve, simulate_coast_down, AeroRolling, CurveFit,
};

pub use report::{emit_report, regenerate_report, ReportFormat};
pub use sim::{restriction_law, LoadModel, LoopSim, Plant, TelemetryRow};
pub use sweep::{point_seed, run_dyno_sweep, Bench, EnginePoint, PointFlags, PointResult, SweepReport};

pub const COASTDOWN_FILE: &str = "coastdown_report.csv";
pub const ROAD_VS_DYNO_FILE: &str = "road_vs_dyno.csv";

#[derive(Debug, Clone, PartialEq)]
pub struct CoastdownReport {
    pub fit: CurveFit,
    pub derived: AeroRolling,
    /// Configured coefficients, for comparison with the derived pair.
    pub configured: AeroRolling,
}

impl CoastdownReport {
    pub fn to_csv(&self) -> String {
        let f = &self.fit;
        let mut out = String::from("key,value\n");
        let rows = [
            ("quad_coeff", format!("{:.8}", f.curve.quad_coeff)),
            ("const_coeff", format!("{:.6}", f.curve.const_coeff)),
            ("raw_quad_coeff", format!("{:.8}", f.raw_quad)),
            ("raw_const_coeff", format!("{:.6}", f.raw_const)),
            ("clamped", f.clamped.to_string()),
            ("residual_rms_n", format!("{:.6}", f.residual_rms)),
            ("points", f.points.to_string()),
            ("drag_coeff", format!("{:.4}", self.derived.drag_coeff)),
            ("rolling_coeff", format!("{:.5}", self.derived.rolling_coeff)),
            ("configured_drag_coeff", format!("{:.4}", self.configured.drag_coeff)),
            ("configured_rolling_coeff", format!("{:.5}", self.configured.rolling_coeff)),
            (
                "note",
                "configured c_w/f_R do not reproduce the road-load polynomial; derived values follow from it".to_string(),
            ),
        ];
        for (k, v) in rows {
            let _ = writeln!(out, "{k},{v}");
        }
        out
    }
}

/// Two coast-downs at opposite grades, averaged and fitted.
pub fn coastdown(config: &Config) -> Result<CoastdownReport> {
    let c = &config.coastdown;
    let run = |grade: f64, seed: u64| -> Result<_> {
        let r = simulate_coast_down(&config.vehicle, &config.resistance, c.v0, grade, c.dt)?;
        if c.velocity_noise > 0.0 {
            r.with_velocity_noise(c.velocity_noise, seed)
        } else {
            Ok(r)
        }
    };
    let a = run(c.grade, c.seed)?;
    let b = run(-c.grade, c.seed.wrapping_add(1))?;
    let avg = average_opposite_runs(&a, &b)?;
    let fit = fit_resistance_curve(&avg, &config.vehicle)?;
    Ok(CoastdownReport {
        derived: derive_aero_rolling(&fit.curve, &config.vehicle),
        configured: AeroRolling { drag_coeff: config.vehicle.drag_coeff, rolling_coeff: config.vehicle.rolling_coeff },
        fit,
    })
}

pub fn run_coastdown(config: &Config, out: &Path) -> Result<CoastdownReport> {
    let report = coastdown(config)?;
    write_file(out, COASTDOWN_FILE, &report.to_csv())?;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThrottleRow {
    /// km/h
    pub speed: f64,
    /// %
    pub road: f64,
    pub dyno: f64,
}

pub const ROAD_VS_DYNO_SPEEDS: [f64; 3] = [25.0, 35.0, 45.0];
const STEADY_RUN_S: f64 = 60.0;
const STEADY_MEAN_S: f64 = 10.0;

/// Mean reported throttle over the last 10 s of a 60 s level cruise at `speed`.
pub fn steady_throttle(bench: &Bench, load: LoadModel, speed: f64, seed: u64) -> Result<f64> {
    let mut sim = bench.loop_sim(Strategy::Vc, bench.plant(load, 0.0), speed, seed)?;
    let rows = sim.run(STEADY_RUN_S)?;
    let tail = &rows[rows.len() - (STEADY_MEAN_S * sim.rate()).round() as usize..];
    Ok(tail.iter().map(|r| r.throttle_reported).sum::<f64>() / tail.len() as f64)
}

pub fn road_vs_dyno(config: &Config) -> Result<Vec<ThrottleRow>> {
    let bench = Bench::new(config.clone())?;
    let seed = config.sweep.seed;
    ROAD_VS_DYNO_SPEEDS
        .iter()
        .enumerate()
        .map(|(i, &speed)| {
            let s = seed.wrapping_mul(31).wrapping_add(i as u64 * 2);
            Ok(ThrottleRow {
                speed,
                road: steady_throttle(&bench, LoadModel::Road, speed, s)?,
                dyno: steady_throttle(&bench, LoadModel::Dyno, speed, s + 1)?,
            })
        })
        .collect()
}

pub fn run_road_vs_dyno(config: &Config, out: &Path) -> Result<Vec<ThrottleRow>> {
    let rows = road_vs_dyno(config)?;
    let mut text = String::from("speed_kmh,road_throttle_pct,dyno_throttle_pct,difference_pct\n");
    for r in &rows {
        let _ = writeln!(text, "{:.1},{:.2},{:.2},{:.2}", r.speed, r.road, r.dyno, r.road - r.dyno);
    }
    write_file(out, ROAD_VS_DYNO_FILE, &text)?;
    Ok(rows)
}

fn write_file(dir: &Path, name: &str, text: &str) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let p = dir.join(name);
    fs::write(&p, text).map_err(|e| Error::io(p, e))
}
