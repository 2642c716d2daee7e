//! Longitudinal point-mass vehicle, road-load polynomial and coast-down identification.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::interp::Table1d;

pub const G: f64 = 9.81;
const KMH: f64 = 3.6;

const COAST_STOP_KMH: f64 = 1.0;
const COAST_MAX_S: f64 = 600.0;

#[derive(Debug, Clone, PartialEq)]
pub struct VehicleParams {
    /// m²
    pub frontal_area: f64,
    /// bar, recorded only
    pub tyre_pressure: f64,
    pub inertia_factor: f64,
    /// kg
    pub mass_scooter: f64,
    /// kg
    pub mass_rider: f64,
    /// kg/m³
    pub air_density: f64,
    pub drag_coeff: f64,
    pub rolling_coeff: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            frontal_area: 0.78,
            tyre_pressure: 2.3,
            inertia_factor: 1.04,
            mass_scooter: 99.0,
            mass_rider: 80.0,
            air_density: 1.232,
            drag_coeff: 0.7,
            rolling_coeff: 0.031,
        }
    }
}

impl VehicleParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("vehicle: {what}")));
        if !(self.mass_scooter > 0.0 && self.mass_rider > 0.0) {
            return bad("masses must be > 0");
        }
        if !(self.frontal_area > 0.0) {
            return bad("frontal_area must be > 0");
        }
        if !(self.air_density > 0.0) {
            return bad("air_density must be > 0");
        }
        if !(self.inertia_factor >= 1.0) {
            return bad("inertia_factor must be >= 1");
        }
        Ok(())
    }

    pub fn total_mass(&self) -> f64 {
        self.mass_scooter + self.mass_rider
    }

    /// Translational mass including the rotating-mass allowance.
    pub fn effective_mass(&self) -> f64 {
        self.inertia_factor * self.total_mass()
    }
}

/// F(v) = quad·v² + const with v in km/h.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResistanceCurve {
    pub quad_coeff: f64,
    pub const_coeff: f64,
}

impl ResistanceCurve {
    pub const ROAD_LOAD: ResistanceCurve = ResistanceCurve { quad_coeff: 0.015, const_coeff: 41.65 };

    pub fn new(quad_coeff: f64, const_coeff: f64) -> Result<Self> {
        if !(quad_coeff >= 0.0 && const_coeff >= 0.0) {
            return Err(Error::Config(format!(
                "resistance coefficients must be >= 0 (got {quad_coeff}, {const_coeff})"
            )));
        }
        Ok(Self { quad_coeff, const_coeff })
    }
}

impl Default for ResistanceCurve {
    fn default() -> Self {
        Self::ROAD_LOAD
    }
}

pub fn resistance_force(curve: &ResistanceCurve, v: f64) -> Result<f64> {
    if !(v >= 0.0) {
        return Err(Error::Domain(format!("velocity must be >= 0 km/h, got {v}")));
    }
    Ok(curve.quad_coeff * v * v + curve.const_coeff)
}

/// Slope force, positive when resisting (uphill).
pub fn grade_force(params: &VehicleParams, grade: f64) -> f64 {
    params.total_mass() * G * grade.atan().sin()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathSample {
    /// s
    pub time: f64,
    /// km/h
    pub velocity: f64,
    /// m
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathTimeSeries {
    samples: Vec<PathSample>,
}

impl PathTimeSeries {
    pub fn new(samples: Vec<PathSample>) -> Result<Self> {
        if samples.iter().any(|s| !(s.velocity >= 0.0)) {
            return Err(Error::Validation("velocity must be >= 0".into()));
        }
        if samples.windows(2).any(|w| w[1].time <= w[0].time) {
            return Err(Error::Validation("time must be strictly increasing".into()));
        }
        if samples.windows(2).any(|w| w[1].distance < w[0].distance) {
            return Err(Error::Validation("distance must be non-decreasing".into()));
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[PathSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn velocities(&self) -> impl Iterator<Item = f64> + '_ {
        self.samples.iter().map(|s| s.velocity)
    }

    /// Copy with seeded multiplicative Gaussian noise on velocity (distance untouched).
    pub fn with_velocity_noise(&self, rel_sigma: f64, seed: u64) -> Result<Self> {
        if rel_sigma == 0.0 {
            return Ok(self.clone());
        }
        let normal = Normal::new(0.0, rel_sigma)
            .map_err(|e| Error::Config(format!("velocity noise: {e}")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let samples = self
            .samples
            .iter()
            .map(|s| PathSample {
                velocity: (s.velocity * (1.0 + normal.sample(&mut rng))).max(0.0),
                ..*s
            })
            .collect();
        Self::new(samples)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("time_s,velocity_kmh,distance_m\n");
        for s in &self.samples {
            let _ = writeln!(out, "{:.4},{:.6},{:.4}", s.time, s.velocity, s.distance);
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.trim() == "time_s,velocity_kmh,distance_m" => {}
            _ => return Err(Error::Validation("path-time CSV header mismatch".into())),
        }
        let mut samples = Vec::new();
        for (n, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let vals: Vec<f64> = line
                .split(',')
                .map(|f| f.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Validation(format!("path-time CSV line {}: {e}", n + 2)))?;
            if vals.len() != 3 {
                return Err(Error::Validation(format!("path-time CSV line {}: need 3 fields", n + 2)));
            }
            samples.push(PathSample { time: vals[0], velocity: vals[1], distance: vals[2] });
        }
        Self::new(samples)
    }
}

/// Coast-down run with RK4 on (distance, velocity).
pub fn simulate_coast_down(
    params: &VehicleParams,
    curve: &ResistanceCurve,
    v0: f64,
    grade: f64,
    dt: f64,
) -> Result<PathTimeSeries> {
    if !(dt > 0.0 && dt <= 0.1) {
        return Err(Error::Config(format!("coast-down dt must be in (0, 0.1] s, got {dt}")));
    }
    if !(v0 > 0.0) {
        return Err(Error::Config(format!("coast-down v0 must be > 0, got {v0}")));
    }
    params.validate()?;
    let m_eff = params.effective_mass();
    let f_grade = grade_force(params, grade);
    // dv/dt in m/s², v in m/s
    let accel = |v: f64| {
        let kmh = v.max(0.0) * KMH;
        -(curve.quad_coeff * kmh * kmh + curve.const_coeff + f_grade) / m_eff
    };

    let mut x = 0.0;
    let mut v = v0 / KMH;
    let mut samples = vec![PathSample { time: 0.0, velocity: v0, distance: 0.0 }];
    let mut step = 0u64;
    loop {
        let k1v = accel(v);
        let k1x = v;
        let k2v = accel(v + 0.5 * dt * k1v);
        let k2x = v + 0.5 * dt * k1v;
        let k3v = accel(v + 0.5 * dt * k2v);
        let k3x = v + 0.5 * dt * k2v;
        let k4v = accel(v + dt * k3v);
        let k4x = v + dt * k3v;
        v = (v + dt / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v)).max(0.0);
        x += (dt / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)).max(0.0);
        step += 1;
        let t = step as f64 * dt;
        samples.push(PathSample { time: t, velocity: v * KMH, distance: x });
        if v * KMH <= COAST_STOP_KMH || t > COAST_MAX_S {
            break;
        }
    }
    PathTimeSeries::new(samples)
}

/// Mean of two runs in opposite directions, resampled onto `run_a`'s time grid
/// over the span both runs cover.
pub fn average_opposite_runs(run_a: &PathTimeSeries, run_b: &PathTimeSeries) -> Result<PathTimeSeries> {
    let (a, b) = (run_a.samples(), run_b.samples());
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Validation("runs need at least two samples".into()));
    }
    if (a[0].velocity - b[0].velocity).abs() > 1.0 {
        return Err(Error::Validation(format!(
            "runs start at {:.2} and {:.2} km/h, more than 1 km/h apart",
            a[0].velocity, b[0].velocity
        )));
    }
    let t_end = a[a.len() - 1].time.min(b[b.len() - 1].time);
    let t_start = a[0].time.max(b[0].time);
    let vb = Table1d::new(b.iter().map(|s| s.time).collect(), b.iter().map(|s| s.velocity).collect())?;
    let xb = Table1d::new(b.iter().map(|s| s.time).collect(), b.iter().map(|s| s.distance).collect())?;
    let samples = a
        .iter()
        .filter(|s| s.time >= t_start && s.time <= t_end)
        .map(|s| PathSample {
            time: s.time,
            velocity: 0.5 * (s.velocity + vb.eval(s.time)),
            distance: 0.5 * (s.distance + xb.eval(s.time)),
        })
        .collect();
    PathTimeSeries::new(samples)
}

/// Outcome of a road-load identification.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveFit {
    pub curve: ResistanceCurve,
    /// Raw least-squares estimate before clamping.
    pub raw_quad: f64,
    pub raw_const: f64,
    pub clamped: bool,
    pub residual_rms: f64,
    pub points: usize,
}

const MIN_FIT_SAMPLES: usize = 20;
const MIN_FIT_SPAN_KMH: f64 = 15.0;
const STENCIL_HALF_S: f64 = 0.5;

/// Least-squares fit of F = -m_eff·a against (v², 1) using central differences.
/// Assumes a uniform time grid.
pub fn fit_resistance_curve(series: &PathTimeSeries, params: &VehicleParams) -> Result<CurveFit> {
    let s = series.samples();
    if s.len() < MIN_FIT_SAMPLES {
        return Err(Error::Fit(format!("{} samples, need at least {MIN_FIT_SAMPLES}", s.len())));
    }
    let (lo, hi) = s
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.velocity), hi.max(p.velocity)));
    if hi - lo < MIN_FIT_SPAN_KMH {
        return Err(Error::Fit(format!(
            "velocity span {:.3} km/h, need at least {MIN_FIT_SPAN_KMH}",
            hi - lo
        )));
    }
    let m_eff = params.effective_mass();
    // Fourth-order central difference over about +-1 s. A one-sample stencil sums
    // to (v_end - v_start), so noise on the first and last samples dominates the fit.
    let dt = (s[s.len() - 1].time - s[0].time) / (s.len() - 1) as f64;
    let k = ((STENCIL_HALF_S / dt).round() as usize).clamp(1, (s.len() - MIN_FIT_SAMPLES / 2) / 4);
    let pts: Vec<(f64, f64)> = s
        .windows(4 * k + 1)
        .map(|w| {
            let c = 2 * k;
            let d1 = w[c + k].velocity - w[c - k].velocity;
            let d2 = w[c + 2 * k].velocity - w[c - 2 * k].velocity;
            let h = (w[c + k].time - w[c - k].time) / 2.0;
            let a = (8.0 * d1 - d2) / (12.0 * h) / KMH;
            (w[c].velocity * w[c].velocity, -m_eff * a)
        })
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let (sxx, sxy) = pts
        .iter()
        .fold((0.0, 0.0), |(sxx, sxy), &(x, y)| (sxx + (x - mx) * (x - mx), sxy + (x - mx) * (y - my)));
    if sxx <= 0.0 {
        return Err(Error::Fit("degenerate regressor (no velocity variation)".into()));
    }
    let raw_quad = sxy / sxx;
    let raw_const = my - raw_quad * mx;
    let residual_rms =
        (pts.iter().map(|&(x, y)| (y - raw_quad * x - raw_const).powi(2)).sum::<f64>() / n).sqrt();
    let curve = ResistanceCurve { quad_coeff: raw_quad.max(0.0), const_coeff: raw_const.max(0.0) };
    Ok(CurveFit {
        curve,
        raw_quad,
        raw_const,
        clamped: raw_quad < 0.0 || raw_const < 0.0,
        residual_rms,
        points: pts.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AeroRolling {
    pub drag_coeff: f64,
    pub rolling_coeff: f64,
}

pub fn derive_aero_rolling(curve: &ResistanceCurve, params: &VehicleParams) -> AeroRolling {
    AeroRolling {
        drag_coeff: 2.0 * curve.quad_coeff * KMH * KMH / (params.air_density * params.frontal_area),
        rolling_coeff: curve.const_coeff / (params.total_mass() * G),
    }
}

/// Inverse of [`derive_aero_rolling`].
pub fn curve_from_aero_rolling(coeffs: &AeroRolling, params: &VehicleParams) -> ResistanceCurve {
    ResistanceCurve {
        quad_coeff: coeffs.drag_coeff * params.air_density * params.frontal_area / (2.0 * KMH * KMH),
        const_coeff: coeffs.rolling_coeff * params.total_mass() * G,
    }
}
