//! Line-oriented `key = value` configuration with `[section]` headers.
//!
//! The shipped `default.cfg` is always loaded first; a user file overrides
//! individual keys and may not introduce keys the defaults lack.

use std::collections::BTreeMap;
use std::path::Path;

use crate::control::{GainSchedule, PiController, TbwActuator};
use crate::daq::LambdaTable;
use crate::emissions::{CatalystParams, EfmModel, EmissionsCalibration, RawGasParams};
use crate::error::{Error, Result};
use crate::interp::{Table1d, Table2d};
use crate::powertrain::{EngineCalibration, RestrictionParams, Strategy, ThermalParams};
use crate::vehicle::{ResistanceCurve, VehicleParams};

pub const DEFAULT_CONFIG: &str = include_str!("../default.cfg");

/// Sections and keys in file order; values are raw strings.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawConfig {
    entries: BTreeMap<(String, String), String>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        let mut section = String::new();
        let mut pending = String::new();
        let mut start_line = 0;
        for (no, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim_end();
            if pending.is_empty() {
                start_line = no + 1;
            }
            if let Some(body) = line.strip_suffix('\\') {
                pending.push_str(body);
                pending.push(' ');
                continue;
            }
            pending.push_str(line);
            let full = std::mem::take(&mut pending);
            let full = full.trim();
            if full.is_empty() {
                continue;
            }
            if let Some(name) = full.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                section = name.trim().to_string();
                continue;
            }
            let Some((k, v)) = full.split_once('=') else {
                return Err(Error::Config(format!("line {start_line}: expected key = value, got '{full}'")));
            };
            if section.is_empty() {
                return Err(Error::Config(format!("line {start_line}: key outside any [section]")));
            }
            entries.insert((section.clone(), k.trim().to_string()), v.trim().to_string());
        }
        if !pending.trim().is_empty() {
            return Err(Error::Config("file ends inside a continued line".into()));
        }
        Ok(Self { entries })
    }

    /// Applies `other` on top of `self`; every key of `other` must already exist.
    pub fn overlay(&mut self, other: &RawConfig) -> Result<()> {
        for (key, v) in &other.entries {
            match self.entries.get_mut(key) {
                Some(slot) => *slot = v.clone(),
                None => return Err(Error::Config(format!("unknown key {}.{}", key.0, key.1))),
            }
        }
        Ok(())
    }

    pub fn set(&mut self, section: &str, key: &str, value: impl Into<String>) -> Result<()> {
        match self.entries.get_mut(&(section.to_string(), key.to_string())) {
            Some(slot) => {
                *slot = value.into();
                Ok(())
            }
            None => Err(Error::Config(format!("unknown key {section}.{key}"))),
        }
    }

    pub fn get(&self, section: &str, key: &str) -> Result<&str> {
        self.entries
            .get(&(section.to_string(), key.to_string()))
            .map(String::as_str)
            .ok_or_else(|| Error::Config(format!("missing key {section}.{key}")))
    }

    fn num(&self, section: &str, key: &str) -> Result<f64> {
        let s = self.get(section, key)?;
        s.parse().map_err(|_| Error::Config(format!("{section}.{key}: '{s}' is not a number")))
    }

    fn int(&self, section: &str, key: &str) -> Result<u64> {
        let s = self.get(section, key)?;
        s.parse().map_err(|_| Error::Config(format!("{section}.{key}: '{s}' is not a non-negative integer")))
    }

    fn list(&self, section: &str, key: &str) -> Result<Vec<f64>> {
        self.get(section, key)?
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| Error::Config(format!("{section}.{key}: '{t}' is not a number"))))
            .collect()
    }

    fn pairs(&self, section: &str, key: &str) -> Result<Vec<(f64, f64)>> {
        self.get(section, key)?
            .split_whitespace()
            .map(|t| {
                let bad = || Error::Config(format!("{section}.{key}: '{t}' is not an x:y pair"));
                let (a, b) = t.split_once(':').ok_or_else(bad)?;
                Ok((a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?))
            })
            .collect()
    }

    fn table(&self, section: &str, key: &str) -> Result<Table1d> {
        Table1d::from_pairs(&self.pairs(section, key)?)
            .map_err(|e| Error::Config(format!("{section}.{key}: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoastdownConfig {
    /// km/h
    pub v0: f64,
    pub grade: f64,
    /// s
    pub dt: f64,
    pub velocity_noise: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerConfig {
    /// km/h
    pub setpoint: f64,
    pub kp: f64,
    pub ki: f64,
    pub schedule_threshold: f64,
    pub schedule_factor: f64,
    pub output_min: f64,
    pub output_max: f64,
    /// Hz
    pub rate: f64,
    pub physics_substeps: usize,
    pub actuator_response_time: f64,
    pub actuator_accuracy: f64,
}

impl ControllerConfig {
    pub fn schedule(&self) -> GainSchedule {
        GainSchedule::halving(self.kp, self.ki, self.schedule_threshold, self.schedule_factor)
    }

    pub fn controller(&self) -> Result<PiController> {
        PiController::new(self.setpoint, self.schedule(), self.output_min, self.output_max)
    }

    pub fn actuator(&self) -> Result<TbwActuator> {
        TbwActuator::new(0.0, self.actuator_response_time, self.actuator_accuracy)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DaqConfig {
    pub crank_resolution: u32,
    pub lambda_table: LambdaTable,
    pub cycles: usize,
    /// Relative cycle-to-cycle variation of released heat.
    pub cycle_noise: f64,
    /// Hz of the raw gas analyser stream.
    pub emission_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StrategySelection {
    Or,
    Vc,
    Both,
}

impl StrategySelection {
    pub fn strategies(self) -> Vec<Strategy> {
        match self {
            StrategySelection::Or => vec![Strategy::Or],
            StrategySelection::Vc => vec![Strategy::Vc],
            StrategySelection::Both => vec![Strategy::Or, Strategy::Vc],
        }
    }
}

impl std::str::FromStr for StrategySelection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "both" => Ok(StrategySelection::Both),
            other => Ok(match other.parse::<Strategy>()? {
                Strategy::Or => StrategySelection::Or,
                Strategy::Vc => StrategySelection::Vc,
            }),
        }
    }
}

/// 1 % steps on [-8 %, 0 %] and 0.5 % steps on (0 %, 2 %].
pub fn default_grades() -> Vec<f64> {
    (-8..=0).map(|g| g as f64 / 100.0).chain((1..=4).map(|k| k as f64 * 0.005)).collect()
}

pub fn parse_grades(text: &str) -> Result<Vec<f64>> {
    let t = text.trim();
    let grades = if t.eq_ignore_ascii_case("default") {
        default_grades()
    } else {
        t.split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<f64>().map_err(|_| Error::Config(format!("grade '{s}' is not a number"))))
            .collect::<Result<Vec<_>>>()?
    };
    if grades.is_empty() {
        return Err(Error::Config("grade list is empty".into()));
    }
    if let Some(g) = grades.iter().find(|g| !(-0.08 - 1e-12..=0.02 + 1e-12).contains(*g)) {
        return Err(Error::Config(format!("grade {g} outside [-0.08, 0.02]")));
    }
    Ok(grades)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub grades: Vec<f64>,
    pub strategy: StrategySelection,
    /// km/h, mirrors the restriction's limit speed
    pub v_limit: f64,
    pub seed: u64,
    /// s
    pub settle_timeout: f64,
    pub log_duration: f64,
    /// km/h, settle band for the fluctuating OR
    pub or_settle_band: f64,
    /// s of running before settle detection may fire
    pub min_settle: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub vehicle: VehicleParams,
    pub resistance: ResistanceCurve,
    pub coastdown: CoastdownConfig,
    pub engine: EngineCalibration,
    pub controller: ControllerConfig,
    pub emissions: EmissionsCalibration,
    pub efm: EfmModel,
    pub daq: DaqConfig,
    pub sweep: SweepConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self::from_raw(&RawConfig::parse(DEFAULT_CONFIG).expect("shipped defaults parse"))
            .expect("shipped defaults are valid")
    }
}

impl Config {
    pub fn default_raw() -> RawConfig {
        RawConfig::parse(DEFAULT_CONFIG).expect("shipped defaults parse")
    }

    /// Defaults overlaid with `text`.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut raw = Self::default_raw();
        raw.overlay(&RawConfig::parse(text)?)?;
        Self::from_raw(&raw)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    pub fn from_raw(raw: &RawConfig) -> Result<Self> {
        let cfg = Self {
            vehicle: vehicle(raw)?,
            resistance: ResistanceCurve::new(raw.num("vehicle", "resistance_quad")?, raw.num("vehicle", "resistance_const")?)
                .map_err(|e| Error::Config(e.to_string()))?,
            coastdown: CoastdownConfig {
                v0: raw.num("coastdown", "v0")?,
                grade: raw.num("coastdown", "grade")?,
                dt: raw.num("coastdown", "dt")?,
                velocity_noise: raw.num("coastdown", "velocity_noise")?,
                seed: raw.int("coastdown", "seed")?,
            },
            engine: engine(raw)?,
            controller: controller(raw)?,
            emissions: emissions(raw)?,
            efm: EfmModel {
                range_min: raw.num("efm", "range_min")?,
                range_max: raw.num("efm", "range_max")?,
                plausibility_floor: raw.num("efm", "plausibility_floor")?,
                noise_rms: raw.num("efm", "noise_rms")?,
            },
            daq: DaqConfig {
                crank_resolution: raw.int("daq", "crank_resolution")? as u32,
                lambda_table: LambdaTable::new(&raw.pairs("daq", "lambda_table")?)?,
                cycles: raw.int("daq", "cycles")? as usize,
                cycle_noise: raw.num("daq", "cycle_noise")?,
                emission_rate: raw.num("daq", "emission_rate")?,
            },
            sweep: SweepConfig {
                grades: parse_grades(raw.get("sweep", "grades")?)?,
                strategy: raw.get("sweep", "strategy")?.parse()?,
                v_limit: raw.num("engine", "or_v_limit")?,
                seed: raw.int("sweep", "seed")?,
                settle_timeout: raw.num("sweep", "settle_timeout")?,
                log_duration: raw.num("sweep", "log_duration")?,
                or_settle_band: raw.num("sweep", "or_settle_band")?,
                min_settle: raw.num("sweep", "min_settle")?,
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.vehicle.validate()?;
        self.engine.validate()?;
        self.efm.validate()?;
        let c = &self.controller;
        if !(c.rate > 0.0 && c.physics_substeps > 0) {
            return Err(Error::Config("controller: rate and physics_substeps must be > 0".into()));
        }
        c.controller()?;
        c.actuator()?;
        if !(self.coastdown.dt > 0.0 && self.coastdown.dt <= 0.1) {
            return Err(Error::Config("coastdown: dt must be in (0, 0.1]".into()));
        }
        if !(self.coastdown.v0 > 1.0) {
            return Err(Error::Config("coastdown: v0 must exceed 1 km/h".into()));
        }
        if self.daq.cycles == 0 || !(self.daq.cycle_noise >= 0.0) || (self.daq.emission_rate - 10.0).abs() > 1e-12 {
            return Err(Error::Config("daq: cycles > 0, cycle_noise >= 0 and emission_rate = 10 required".into()));
        }
        let s = &self.sweep;
        if !(s.settle_timeout > 0.0 && s.log_duration >= 1.0 && s.or_settle_band > 0.0 && (0.0..s.settle_timeout).contains(&s.min_settle)) {
            return Err(Error::Config("sweep: settle_timeout > 0, 0 <= min_settle < settle_timeout, log_duration >= 1 and or_settle_band > 0 required".into()));
        }
        if s.log_duration.fract() != 0.0 {
            return Err(Error::Config("sweep: log_duration must be whole seconds".into()));
        }
        Ok(())
    }
}

fn vehicle(raw: &RawConfig) -> Result<VehicleParams> {
    let n = |k| raw.num("vehicle", k);
    Ok(VehicleParams {
        frontal_area: n("frontal_area")?,
        tyre_pressure: n("tyre_pressure")?,
        inertia_factor: n("inertia_factor")?,
        mass_scooter: n("mass_scooter")?,
        mass_rider: n("mass_rider")?,
        air_density: n("air_density")?,
        drag_coeff: n("drag_coeff")?,
        rolling_coeff: n("rolling_coeff")?,
    })
}

/// Separable volumetric-efficiency map on the given throttle and rpm knots.
pub fn build_ve_map(
    displacement: f64,
    air_density: f64,
    closed_flow: f64,
    rpm: &[f64],
    wot: &Table1d,
    shape: &Table1d,
) -> Result<Table2d> {
    let values = shape
        .ys()
        .iter()
        .map(|&g| {
            rpm.iter()
                .map(|&n| {
                    let ve0 = closed_flow / (displacement * n / 120.0 * 3600.0 * air_density);
                    ve0 + (wot.eval(n) - ve0) * g
                })
                .collect()
        })
        .collect();
    Table2d::new(shape.xs().to_vec(), rpm.to_vec(), values)
}

fn engine(raw: &RawConfig) -> Result<EngineCalibration> {
    let s = "engine";
    let n = |k| raw.num(s, k);
    let displacement = n("displacement")?;
    let intake_air_density = n("intake_air_density")?;
    let ve = build_ve_map(
        displacement,
        intake_air_density,
        n("ve_closed_flow")?,
        &raw.list(s, "ve_rpm")?,
        &raw.table(s, "ve_wot")?,
        &raw.table(s, "ve_throttle_shape")?,
    )?;
    Ok(EngineCalibration {
        displacement,
        compression_ratio: n("compression_ratio")?,
        bore: n("bore")?,
        stroke: n("stroke")?,
        conrod_length: n("conrod_length")?,
        max_engine_speed: n("max_engine_speed")?,
        mbt_map: raw.table(s, "mbt_map")?,
        volumetric_efficiency_map: ve,
        mechanical_efficiency: n("mechanical_efficiency")?,
        engine_brake_torque_map: raw.table(s, "engine_brake_torque_map")?,
        wiebe_a: n("wiebe_a")?,
        wiebe_m: n("wiebe_m")?,
        burn_duration_base: n("burn_duration_base")?,
        burn_duration_slope: n("burn_duration_slope")?,
        lhv_fuel: n("lhv_fuel")?,
        fuel_density: n("fuel_density")?,
        stoich_afr: n("stoich_afr")?,
        polytropic_exponent: n("polytropic_exponent")?,
        intake_air_density,
        ivc_temperature: n("ivc_temperature")?,
        heat_release_fraction: n("heat_release_fraction")?,
        late_burn_loss: n("late_burn_loss")?,
        exhaust_pressure: n("exhaust_pressure")?,
        intake_blend: n("intake_blend")?,
        blowdown: n("blowdown")?,
        cvt_map: raw.table(s, "cvt_map")?,
        lambda_map: raw.table(s, "lambda_map")?,
        injector_ref_fuel_flow: n("injector_ref_fuel_flow")?,
        launch_force_limit: n("launch_force_limit")?,
        thermal: ThermalParams {
            exhaust_floor: n("exhaust_floor")?,
            exhaust_fuel_gain: n("exhaust_fuel_gain")?,
            exhaust_retard_gain: n("exhaust_retard_gain")?,
            cylinder_base: n("cylinder_base")?,
            cylinder_fuel_gain: n("cylinder_fuel_gain")?,
            cylinder_retard_gain: n("cylinder_retard_gain")?,
            combustion_base: n("combustion_base")?,
            combustion_retard_gain: n("combustion_retard_gain")?,
            combustion_duration_gain: n("combustion_duration_gain")?,
        },
        restriction: RestrictionParams {
            v_limit: n("or_v_limit")?,
            gate_band: n("or_gate_band")?,
            reference_speed: n("or_reference_speed")?,
            anchors: raw.pairs(s, "or_anchors")?,
            max_retard: n("or_max_retard")?,
        },
    })
}

fn controller(raw: &RawConfig) -> Result<ControllerConfig> {
    let n = |k| raw.num("controller", k);
    Ok(ControllerConfig {
        setpoint: n("setpoint")?,
        kp: n("kp")?,
        ki: n("ki")?,
        schedule_threshold: n("schedule_threshold")?,
        schedule_factor: n("schedule_factor")?,
        output_min: n("output_min")?,
        output_max: n("output_max")?,
        rate: n("rate")?,
        physics_substeps: raw.int("controller", "physics_substeps")? as usize,
        actuator_response_time: n("actuator_response_time")?,
        actuator_accuracy: n("actuator_accuracy")?,
    })
}

fn emissions(raw: &RawConfig) -> Result<EmissionsCalibration> {
    let n = |k| raw.num("emissions", k);
    Ok(EmissionsCalibration {
        raw: RawGasParams {
            t_ref: n("t_ref")?,
            co_ref: n("co_ref")?,
            co_max: n("co_max")?,
            co_lambda_gain: n("co_lambda_gain")?,
            co_temp_gain: n("co_temp_gain")?,
            hc_ref: n("hc_ref")?,
            hc_lambda_gain: n("hc_lambda_gain")?,
            hc_temp_gain: n("hc_temp_gain")?,
            nox_ref: n("nox_ref")?,
            nox_activation: n("nox_activation")?,
            nox_peak_lambda: n("nox_peak_lambda")?,
            nox_width: n("nox_width")?,
            carbon_stoich: n("carbon_stoich")?,
            carbon_rich_gain: n("carbon_rich_gain")?,
            o2_ref: n("o2_ref")?,
            o2_lambda_gain: n("o2_lambda_gain")?,
        },
        catalyst: CatalystParams {
            ox_max: n("cat_ox_max")?,
            ox_mid: n("cat_ox_mid")?,
            ox_width: n("cat_ox_width")?,
            nox_max: n("cat_nox_max")?,
            nox_mid: n("cat_nox_mid")?,
            nox_width: n("cat_nox_width")?,
        },
        gas_temp_offset: n("gas_temp_offset")?,
        gas_temp_slope: n("gas_temp_slope")?,
        pressure: n("pressure")?,
        molar_mass: n("molar_mass")?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_load() {
        let c = Config::default();
        assert_eq!(c.resistance, ResistanceCurve::ROAD_LOAD);
        assert_eq!(c.vehicle.total_mass(), 179.0);
        assert_eq!(c.sweep.grades.len(), 13);
        assert_eq!(c.sweep.strategy, StrategySelection::Both);
    }

    #[test]
    fn overlay_and_unknown_keys() {
        let c = Config::from_text("[controller]\nkp = 12\n").unwrap();
        assert_eq!(c.controller.kp, 12.0);
        assert!(matches!(Config::from_text("[controller]\nkd = 1\n"), Err(Error::Config(_))));
        assert!(matches!(Config::from_text("[controller]\nkp = fast\n"), Err(Error::Config(_))));
        assert!(matches!(Config::from_text("kp = 1\n"), Err(Error::Config(_))));
        assert!(matches!(Config::from_text("[coastdown]\ndt = 0\n"), Err(Error::Config(_))));
    }

    #[test]
    fn continuation_lines() {
        let raw = RawConfig::parse("[a]\nx = 1 \\\n  2 3 # comment\ny = 4\n").unwrap();
        assert_eq!(raw.list("a", "x").unwrap(), vec![1.0, 2.0, 3.0]);
        assert_eq!(raw.num("a", "y").unwrap(), 4.0);
    }

    #[test]
    fn grade_lists() {
        let d = default_grades();
        assert_eq!(d.first(), Some(&-0.08));
        assert_eq!(d.last(), Some(&0.02));
        assert_eq!(parse_grades("0,-0.05 0.02").unwrap(), vec![0.0, -0.05, 0.02]);
        assert!(parse_grades("0.05").is_err());
        assert!(parse_grades("").is_err());
    }
}
