//! Throttle-by-wire actuator, gain-scheduled PI velocity controller and settle detection.

use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TbwActuator {
    /// %
    pub position: f64,
    /// s, time to reach 95 % of a step
    pub response_time: f64,
    /// fraction of full scale
    pub accuracy: f64,
}

impl TbwActuator {
    pub fn new(position: f64, response_time: f64, accuracy: f64) -> Result<Self> {
        if !(0.0..=100.0).contains(&position) {
            return Err(Error::Range(format!("actuator position {position} outside [0, 100]")));
        }
        if !(response_time > 0.0) {
            return Err(Error::Config("actuator response_time must be > 0".into()));
        }
        if !(accuracy > 0.0 && accuracy <= 1.0) {
            return Err(Error::Config("actuator accuracy must be in (0, 1]".into()));
        }
        Ok(Self { position, response_time, accuracy })
    }

    pub fn time_constant(&self) -> f64 {
        self.response_time / 3.0
    }

    /// Reported position with uniform error of ±(1 - accuracy) of full scale.
    pub fn reported_position<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let q = (1.0 - self.accuracy) * 100.0;
        if q == 0.0 {
            return self.position;
        }
        (self.position + rng.random_range(-q..=q)).clamp(0.0, 100.0)
    }
}

/// First-order lag toward `command`.
pub fn actuator_step(act: &mut TbwActuator, command: f64, dt: f64) -> Result<f64> {
    if !(0.0..=100.0).contains(&command) {
        return Err(Error::Range(format!("throttle command {command} outside [0, 100]")));
    }
    if !(dt > 0.0) {
        return Err(Error::Config(format!("actuator dt must be > 0, got {dt}")));
    }
    act.position += (command - act.position) * (1.0 - (-dt / act.time_constant()).exp());
    act.position = act.position.clamp(0.0, 100.0);
    Ok(act.position)
}

/// Gains as a function of |error|: the first band whose bound exceeds |e| wins.
#[derive(Debug, Clone, PartialEq)]
pub struct GainSchedule {
    /// (|e| upper bound km/h, kp, ki), ascending bound
    bands: Vec<(f64, f64, f64)>,
    kp: f64,
    ki: f64,
}

impl GainSchedule {
    pub fn constant(kp: f64, ki: f64) -> Self {
        Self { bands: Vec::new(), kp, ki }
    }

    /// Base gains, scaled by `factor` while |e| < `threshold`.
    pub fn halving(kp: f64, ki: f64, threshold: f64, factor: f64) -> Self {
        Self { bands: vec![(threshold, kp * factor, ki * factor)], kp, ki }
    }

    pub fn with_bands(kp: f64, ki: f64, mut bands: Vec<(f64, f64, f64)>) -> Self {
        bands.sort_by(|a, b| a.0.total_cmp(&b.0));
        Self { bands, kp, ki }
    }

    pub fn gains(&self, abs_error: f64) -> (f64, f64) {
        self.bands
            .iter()
            .find(|b| abs_error < b.0)
            .map_or((self.kp, self.ki), |b| (b.1, b.2))
    }

    pub fn min_ki(&self) -> f64 {
        self.bands.iter().map(|b| b.2).fold(self.ki, f64::min)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PiController {
    /// %/(km/h)
    pub kp: f64,
    /// %/(km/h·s)
    pub ki: f64,
    /// %
    pub integrator: f64,
    pub output_min: f64,
    pub output_max: f64,
    /// km/h
    pub setpoint: f64,
    pub gain_schedule: GainSchedule,
    last_error: f64,
    last_output: f64,
}

impl PiController {
    pub fn new(setpoint: f64, schedule: GainSchedule, output_min: f64, output_max: f64) -> Result<Self> {
        if !(output_min < output_max) {
            return Err(Error::Config("controller output_min must be < output_max".into()));
        }
        let (kp, ki) = (schedule.kp, schedule.ki);
        if !(kp >= 0.0 && ki >= 0.0) {
            return Err(Error::Config("controller gains must be >= 0".into()));
        }
        Ok(Self {
            kp,
            ki,
            integrator: 0.0,
            output_min,
            output_max,
            setpoint,
            gain_schedule: schedule,
            last_error: 0.0,
            last_output: 0.0,
        })
    }

    /// Integrator bound enforced by the anti-windup.
    pub fn integrator_limit(&self) -> f64 {
        self.output_max.abs().max(self.output_min.abs())
    }

    pub fn last_error(&self) -> f64 {
        self.last_error
    }

    pub fn last_output(&self) -> f64 {
        self.last_output
    }

    pub fn reset(&mut self, integrator: f64) {
        let lim = self.integrator_limit();
        self.integrator = integrator.clamp(-lim, lim);
    }
}

/// One controller update; returns the throttle command in %.
pub fn pi_step(ctrl: &mut PiController, v_meas: f64, dt: f64) -> f64 {
    let e = ctrl.setpoint - v_meas;
    let (kp, ki) = ctrl.gain_schedule.gains(e.abs());
    ctrl.kp = kp;
    ctrl.ki = ki;
    let u = kp * e + ctrl.integrator;
    let saturated = (u >= ctrl.output_max && e > 0.0) || (u <= ctrl.output_min && e < 0.0);
    if !saturated {
        let lim = ctrl.integrator_limit();
        ctrl.integrator = (ctrl.integrator + ki * e * dt).clamp(-lim, lim);
    }
    let out = u.clamp(ctrl.output_min, ctrl.output_max);
    ctrl.last_error = e;
    ctrl.last_output = out;
    out
}

pub const SETTLE_RATE_HZ: f64 = 20.0;
pub const SETTLE_WINDOW_S: f64 = 5.0;
pub const SETTLE_BAND_KMH: f64 = 0.2;

fn window_len(rate_hz: f64, window_s: f64) -> usize {
    (rate_hz * window_s).round() as usize
}

/// True when the trailing window of a 20 Hz history spans at most 0.2 km/h.
pub fn settle_detect(history: &[f64]) -> bool {
    settle_detect_with(history, SETTLE_RATE_HZ, SETTLE_WINDOW_S, SETTLE_BAND_KMH)
}

pub fn settle_detect_with(history: &[f64], rate_hz: f64, window_s: f64, band: f64) -> bool {
    let n = window_len(rate_hz, window_s);
    if n == 0 || history.len() < n {
        return false;
    }
    let w = &history[history.len() - n..];
    let (lo, hi) = w.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    hi - lo <= band
}

/// Index of the first sample at which [`settle_detect_with`] holds.
pub fn first_settled_index(history: &[f64], rate_hz: f64, window_s: f64, band: f64) -> Option<usize> {
    let n = window_len(rate_hz, window_s);
    (n.max(1)..=history.len())
        .find(|&end| settle_detect_with(&history[..end], rate_hz, window_s, band))
        .map(|end| end - 1)
}
