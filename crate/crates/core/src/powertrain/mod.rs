//! 50 cc four-stroke engine with CVT, restriction strategies, pressure synthesis and thermal outputs.

pub mod cycle;

use std::collections::HashMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;
use std::sync::Mutex;

use crate::error::{Error, Result};
use crate::interp::{Table1d, Table2d};
use cycle::{CycleInputs, CycleKernel, CycleShape, Geometry, SAMPLES_PER_CYCLE};

/// Specific gas constant of the trapped charge, J/(kg·K).
const R_CHARGE: f64 = 287.0;
const MIN_FORCE_SPEED_KMH: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Strategy {
    /// Original restriction by ignition retard.
    Or,
    /// Velocity control through the throttle.
    Vc,
}

impl Strategy {
    pub fn label(self) -> &'static str {
        match self {
            Strategy::Or => "OR",
            Strategy::Vc => "VC",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "or" => Ok(Strategy::Or),
            "vc" => Ok(Strategy::Vc),
            other => Err(Error::Config(format!("unknown strategy '{other}' (expected OR or VC)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThermalParams {
    /// Overrun exhaust temperature, °C.
    pub exhaust_floor: f64,
    /// °C per kg/h of fuel.
    pub exhaust_fuel_gain: f64,
    /// °C per (kg/h · deg retard).
    pub exhaust_retard_gain: f64,
    pub cylinder_base: f64,
    pub cylinder_fuel_gain: f64,
    pub cylinder_retard_gain: f64,
    /// Burned-zone temperature at MBT, K.
    pub combustion_base: f64,
    /// K per deg retard.
    pub combustion_retard_gain: f64,
    /// K per deg of burn lengthening.
    pub combustion_duration_gain: f64,
}

/// Ignition-retard restriction of the stock controller.
#[derive(Debug, Clone, PartialEq)]
pub struct RestrictionParams {
    /// km/h; no retard below.
    pub v_limit: f64,
    /// km/h over which the retard fades in above `v_limit`.
    pub gate_band: f64,
    /// Speed at which the anchors are evaluated, km/h.
    pub reference_speed: f64,
    /// (grade, retard deg) pairs.
    pub anchors: Vec<(f64, f64)>,
    pub max_retard: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngineCalibration {
    /// m³
    pub displacement: f64,
    pub compression_ratio: f64,
    pub bore: f64,
    pub stroke: f64,
    pub conrod_length: f64,
    pub max_engine_speed: f64,
    /// rpm → deg BTDC
    pub mbt_map: Table1d,
    /// (throttle %, rpm) → fraction
    pub volumetric_efficiency_map: Table2d,
    pub mechanical_efficiency: f64,
    /// rpm → N·m
    pub engine_brake_torque_map: Table1d,
    pub wiebe_a: f64,
    pub wiebe_m: f64,
    /// crank deg
    pub burn_duration_base: f64,
    /// extra burn duration per degree of retard
    pub burn_duration_slope: f64,
    /// J/kg
    pub lhv_fuel: f64,
    /// kg/l
    pub fuel_density: f64,
    pub stoich_afr: f64,
    pub polytropic_exponent: f64,
    /// kg/m³
    pub intake_air_density: f64,
    /// K
    pub ivc_temperature: f64,
    /// Share of fuel energy released as pressure-raising heat.
    pub heat_release_fraction: f64,
    /// Lost fraction per degree the spark falls after TDC.
    pub late_burn_loss: f64,
    /// bar
    pub exhaust_pressure: f64,
    pub intake_blend: f64,
    pub blowdown: f64,
    /// km/h → rpm
    pub cvt_map: Table1d,
    /// throttle % → lambda target
    pub lambda_map: Table1d,
    /// Fuel flow giving 100 % injector duty, kg/h.
    pub injector_ref_fuel_flow: f64,
    /// N
    pub launch_force_limit: f64,
    pub thermal: ThermalParams,
    pub restriction: RestrictionParams,
}

impl Default for EngineCalibration {
    fn default() -> Self {
        crate::config::Config::default().engine
    }
}

impl EngineCalibration {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: String| Err(Error::Config(format!("engine: {what}")));
        if !(self.displacement > 45e-6 && self.displacement < 55e-6) {
            return bad(format!("displacement {} m³ not within 50e-6 ± 10 %", self.displacement));
        }
        let geo = self.geometry().swept_volume();
        if ((geo - self.displacement) / self.displacement).abs() > 0.02 {
            return bad(format!("bore/stroke sweep {geo:.4e} m³ disagrees with displacement"));
        }
        if !(self.compression_ratio > 1.0) {
            return bad("compression_ratio must be > 1".into());
        }
        if !(self.conrod_length > self.stroke / 2.0) {
            return bad("conrod_length must exceed the crank radius".into());
        }
        if !(self.mechanical_efficiency > 0.0 && self.mechanical_efficiency <= 1.0) {
            return bad("mechanical_efficiency must be in (0, 1]".into());
        }
        if self.mbt_map.ys().iter().any(|&d| !(6.0..=40.0).contains(&d)) {
            return bad("mbt_map degrees must lie within [6, 40]".into());
        }
        if !self.cvt_map.is_non_decreasing() {
            return bad("cvt_map must be non-decreasing".into());
        }
        if !(self.max_engine_speed > 0.0) {
            return bad("max_engine_speed must be > 0".into());
        }
        let ve = &self.volumetric_efficiency_map;
        for j in 0..ve.ys().len() {
            if ve.values().windows(2).any(|w| w[1][j] <= w[0][j]) {
                return bad(format!("volumetric efficiency not increasing in throttle at {} rpm", ve.ys()[j]));
            }
        }
        if ve.values().iter().flatten().any(|&x| x <= 0.0) {
            return bad("volumetric efficiency must be > 0".into());
        }
        if self.lambda_map.ys().iter().any(|&l| !(0.8..=1.2).contains(&l)) {
            return bad("lambda_map targets must lie within [0.8, 1.2]".into());
        }
        for (name, v) in [
            ("lhv_fuel", self.lhv_fuel),
            ("fuel_density", self.fuel_density),
            ("stoich_afr", self.stoich_afr),
            ("wiebe_a", self.wiebe_a),
            ("burn_duration_base", self.burn_duration_base),
            ("intake_air_density", self.intake_air_density),
            ("ivc_temperature", self.ivc_temperature),
            ("exhaust_pressure", self.exhaust_pressure),
            ("intake_blend", self.intake_blend),
            ("blowdown", self.blowdown),
            ("injector_ref_fuel_flow", self.injector_ref_fuel_flow),
            ("launch_force_limit", self.launch_force_limit),
            ("polytropic_exponent", self.polytropic_exponent - 1.0),
        ] {
            if !(v > 0.0) {
                return bad(format!("{name} out of range"));
            }
        }
        if !(self.wiebe_m >= 0.0 && self.burn_duration_slope >= 0.0 && self.late_burn_loss >= 0.0) {
            return bad("wiebe_m, burn_duration_slope and late_burn_loss must be >= 0".into());
        }
        if !(self.heat_release_fraction > 0.0 && self.heat_release_fraction <= 1.0) {
            return bad("heat_release_fraction must be in (0, 1]".into());
        }
        let r = &self.restriction;
        if r.anchors.len() < 2 || !(r.gate_band > 0.0) || !(r.max_retard > 0.0) {
            return bad("restriction needs two or more anchors, gate_band > 0 and max_retard > 0".into());
        }
        Ok(())
    }

    pub fn geometry(&self) -> Geometry {
        Geometry {
            bore: self.bore,
            stroke: self.stroke,
            conrod_length: self.conrod_length,
            compression_ratio: self.compression_ratio,
        }
    }

    pub fn cycle_shape(&self) -> CycleShape {
        CycleShape {
            gamma: self.polytropic_exponent,
            wiebe_a: self.wiebe_a,
            wiebe_m: self.wiebe_m,
            intake_blend: self.intake_blend,
            blowdown: self.blowdown,
        }
    }

    pub fn burn_duration(&self, ignition_offset: f64) -> f64 {
        self.burn_duration_base + self.burn_duration_slope * ignition_offset
    }

    /// Spark angle in crank degrees, positive after TDC.
    pub fn ignition_angle(&self, rpm: f64, ignition_offset: f64) -> f64 {
        -(self.mbt_map.eval(rpm) - ignition_offset)
    }

    pub fn lambda_target(&self, throttle: f64) -> f64 {
        self.lambda_map.eval(throttle)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EngineState {
    /// %
    pub throttle: f64,
    /// rpm
    pub engine_speed: f64,
    /// deg of retard from MBT
    pub ignition_offset: f64,
    /// kg/h
    pub air_flow: f64,
    /// kg/h
    pub fuel_flow: f64,
    pub lambda: f64,
    /// %
    pub injector_duty: f64,
    /// °C
    pub cylinder_temp: f64,
    /// °C
    pub exhaust_temp: f64,
    /// K
    pub combustion_temp: f64,
}

pub fn cvt_engine_speed(calib: &EngineCalibration, v: f64) -> f64 {
    calib.cvt_map.eval(v.max(0.0)).min(calib.max_engine_speed)
}

/// Aspirated air, kg/h.
pub fn air_mass_flow(calib: &EngineCalibration, throttle: f64, engine_speed: f64) -> f64 {
    let ve = calib.volumetric_efficiency_map.eval(throttle, engine_speed);
    calib.displacement * engine_speed / 120.0 * 3600.0 * calib.intake_air_density * ve
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Injection {
    /// kg/h
    pub fuel_flow: f64,
    /// %
    pub injector_duty: f64,
}

pub fn injection_for_lambda(calib: &EngineCalibration, air_flow: f64, lambda_target: f64) -> Result<Injection> {
    if !(lambda_target > 0.0) {
        return Err(Error::Domain(format!("lambda target must be > 0, got {lambda_target}")));
    }
    if !(0.8..=1.2).contains(&lambda_target) {
        return Err(Error::Domain(format!("lambda target {lambda_target} outside [0.8, 1.2]")));
    }
    if !(air_flow >= 0.0) {
        return Err(Error::Domain(format!("air flow must be >= 0, got {air_flow}")));
    }
    let fuel_flow = air_flow / (calib.stoich_afr * lambda_target);
    Ok(Injection { fuel_flow, injector_duty: 100.0 * fuel_flow / calib.injector_ref_fuel_flow })
}

/// Retard law of the stock restriction as a function of surplus tractive fraction
/// `(F_available - F_load) / F_available`.
#[derive(Debug, Clone, PartialEq)]
pub struct RetardLaw {
    table: Table1d,
    v_limit: f64,
    gate_band: f64,
    max_retard: f64,
}

impl RetardLaw {
    /// Builds the law from (surplus, deg) knots.
    pub fn new(knots: &[(f64, f64)], v_limit: f64, gate_band: f64, max_retard: f64) -> Result<Self> {
        let mut k = knots.to_vec();
        k.sort_by(|a, b| a.0.total_cmp(&b.0));
        let table = Table1d::from_pairs(&k)?;
        if !table.is_non_decreasing() {
            return Err(Error::Config("retard must not decrease as surplus grows".into()));
        }
        if !(gate_band > 0.0) {
            return Err(Error::Config("gate_band must be > 0".into()));
        }
        Ok(Self { table, v_limit, gate_band, max_retard })
    }

    /// Places grade anchors on the surplus axis using `surplus_at_grade`
    /// evaluated at the reference speed.
    pub fn calibrate(params: &RestrictionParams, surplus_at_grade: impl Fn(f64) -> f64) -> Result<Self> {
        let knots: Vec<(f64, f64)> = params.anchors.iter().map(|&(g, deg)| (surplus_at_grade(g), deg)).collect();
        Self::new(&knots, params.v_limit, params.gate_band, params.max_retard)
    }

    pub fn knots(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.table.pairs()
    }

    pub fn v_limit(&self) -> f64 {
        self.v_limit
    }

    /// Retard at full gate; extrapolates past the last knot up to `max_retard`.
    pub fn retard_for_surplus(&self, surplus: f64) -> f64 {
        let xs = self.table.xs();
        let ys = self.table.ys();
        let n = xs.len();
        let deg = if surplus > xs[n - 1] {
            let slope = (ys[n - 1] - ys[n - 2]) / (xs[n - 1] - xs[n - 2]);
            ys[n - 1] + slope * (surplus - xs[n - 1])
        } else {
            self.table.eval(surplus)
        };
        deg.clamp(0.0, self.max_retard)
    }

    pub fn gate(&self, v: f64, v_limit: f64) -> f64 {
        ((v - v_limit) / self.gate_band).clamp(0.0, 1.0)
    }
}

/// Ignition retard commanded by the restriction, deg.
pub fn restriction_ignition_offset(law: &RetardLaw, strategy: Strategy, v: f64, v_limit: f64, surplus: f64) -> f64 {
    match strategy {
        Strategy::Vc => 0.0,
        Strategy::Or if v < v_limit => 0.0,
        Strategy::Or => law.gate(v, v_limit) * law.retard_for_surplus(surplus),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PressureTrace {
    crank_angle: Vec<f64>,
    /// bar
    pressure: Vec<f64>,
}

impl PressureTrace {
    pub fn new(crank_angle: Vec<f64>, pressure: Vec<f64>) -> Result<Self> {
        if crank_angle.len() != SAMPLES_PER_CYCLE || pressure.len() != SAMPLES_PER_CYCLE {
            return Err(Error::Validation(format!("pressure trace needs {SAMPLES_PER_CYCLE} samples")));
        }
        if pressure.iter().any(|&p| !(p > 0.0)) {
            return Err(Error::Validation("pressure must be > 0 everywhere".into()));
        }
        if crank_angle.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Validation("crank angle must increase".into()));
        }
        Ok(Self { crank_angle, pressure })
    }

    /// Trace on the standard grid, no positivity check (ensemble statistics may be zero).
    pub(crate) fn from_grid_unchecked(pressure: Vec<f64>) -> Self {
        Self { crank_angle: standard_grid(), pressure }
    }

    pub fn crank_angle(&self) -> &[f64] {
        &self.crank_angle
    }

    pub fn pressure(&self) -> &[f64] {
        &self.pressure
    }

    fn argmax(&self) -> usize {
        (0..self.pressure.len()).fold(0, |best, i| if self.pressure[i] > self.pressure[best] { i } else { best })
    }

    pub fn peak(&self) -> f64 {
        self.pressure[self.argmax()]
    }

    pub fn peak_angle(&self) -> f64 {
        self.crank_angle[self.argmax()]
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self { crank_angle: self.crank_angle.clone(), pressure: self.pressure.iter().map(|p| p * k).collect() }
    }

    pub fn same_grid(&self, other: &PressureTrace) -> bool {
        self.crank_angle == other.crank_angle
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("crank_deg,pressure_bar\n");
        for (a, p) in self.crank_angle.iter().zip(&self.pressure) {
            let _ = writeln!(out, "{a:.7},{p:.6}");
        }
        out
    }
}

pub fn standard_grid() -> Vec<f64> {
    (0..SAMPLES_PER_CYCLE).map(cycle::crank_angle).collect()
}

/// Per-cycle inputs derived from an operating state; `heat_scale` multiplies the released heat.
fn cycle_inputs(calib: &EngineCalibration, state: &EngineState, heat_scale: f64) -> CycleInputs {
    let rpm = state.engine_speed;
    let per_cycle = |kg_h: f64| kg_h / 3600.0 / (rpm / 120.0);
    let v_bdc = calib.geometry().volume(-180.0);
    let p_ivc = per_cycle(state.air_flow + state.fuel_flow) * R_CHARGE * calib.ivc_temperature / v_bdc;
    let ignition = calib.ignition_angle(rpm, state.ignition_offset);
    let late = (calib.late_burn_loss * ignition.max(0.0)).min(1.0);
    let heat = heat_scale * calib.heat_release_fraction * (1.0 - late) * per_cycle(state.fuel_flow) * calib.lhv_fuel;
    CycleInputs {
        p_ivc,
        heat,
        ignition,
        duration: calib.burn_duration(state.ignition_offset),
        p_exhaust: calib.exhaust_pressure * 1e5,
    }
}

pub fn synthesize_pressure_trace(calib: &EngineCalibration, state: &EngineState) -> PressureTrace {
    synthesize_with_kernel(&CycleKernel::new(calib.geometry(), calib.cycle_shape()), calib, state, 1.0)
}

pub(crate) fn synthesize_with_kernel(
    kernel: &CycleKernel,
    calib: &EngineCalibration,
    state: &EngineState,
    heat_scale: f64,
) -> PressureTrace {
    let p = kernel.pressure(&cycle_inputs(calib, state, heat_scale));
    PressureTrace::from_grid_unchecked(p.into_iter().map(|x| x / 1e5).collect())
}

/// Indicated mean effective pressure, bar.
pub fn imep(trace: &PressureTrace, calib: &EngineCalibration) -> f64 {
    let g = calib.geometry();
    let vol: Vec<f64> = trace.crank_angle().iter().map(|&a| g.volume(a)).collect();
    let p = trace.pressure();
    let n = p.len();
    let work: f64 = (0..n).map(|i| 0.5 * (p[i] + p[(i + 1) % n]) * (vol[(i + 1) % n] - vol[i])).sum();
    work / calib.displacement
}

/// W; four-stroke, one power stroke per two revolutions.
pub fn indicated_power(imep: f64, engine_speed: f64, calib: &EngineCalibration) -> f64 {
    imep * 1e5 * calib.displacement * engine_speed / 120.0
}

/// Wheel force from an IMEP value at vehicle speed `v` (km/h).
pub fn wheel_force(calib: &EngineCalibration, imep_bar: f64, engine_speed: f64, v: f64) -> f64 {
    let v_ms = v.max(MIN_FORCE_SPEED_KMH) / 3.6;
    let omega = engine_speed * std::f64::consts::PI / 30.0;
    let drive = calib.mechanical_efficiency * indicated_power(imep_bar, engine_speed, calib) / v_ms;
    let drag = calib.engine_brake_torque_map.eval(engine_speed) * omega / v_ms;
    (drive - drag).min(calib.launch_force_limit)
}

pub fn tractive_force(calib: &EngineCalibration, state: &EngineState, trace: &PressureTrace, v: f64) -> f64 {
    wheel_force(calib, imep(trace, calib), state.engine_speed, v)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Temperatures {
    /// °C
    pub cylinder: f64,
    /// °C
    pub exhaust: f64,
    /// K
    pub combustion: f64,
}

pub fn thermal_model(calib: &EngineCalibration, state: &EngineState) -> Temperatures {
    let t = &calib.thermal;
    let off = state.ignition_offset;
    let fuel = state.fuel_flow;
    let lengthening = calib.burn_duration(off) - calib.burn_duration_base;
    Temperatures {
        cylinder: t.cylinder_base + fuel * (t.cylinder_fuel_gain + t.cylinder_retard_gain * off),
        exhaust: t.exhaust_floor + fuel * (t.exhaust_fuel_gain + t.exhaust_retard_gain * off),
        combustion: t.combustion_base - t.combustion_retard_gain * off - t.combustion_duration_gain * lengthening,
    }
}

/// Full operating state for a throttle, vehicle speed and retard.
pub fn engine_state(calib: &EngineCalibration, throttle: f64, v: f64, ignition_offset: f64) -> EngineState {
    let rpm = cvt_engine_speed(calib, v);
    let air = air_mass_flow(calib, throttle, rpm);
    let lambda = calib.lambda_target(throttle);
    let inj = injection_for_lambda(calib, air, lambda).expect("lambda map validated to [0.8, 1.2]");
    let mut state = EngineState {
        throttle,
        engine_speed: rpm,
        ignition_offset,
        air_flow: air,
        fuel_flow: inj.fuel_flow,
        lambda,
        injector_duty: inj.injector_duty,
        ..EngineState::default()
    };
    let temps = thermal_model(calib, &state);
    state.cylinder_temp = temps.cylinder;
    state.exhaust_temp = temps.exhaust;
    state.combustion_temp = temps.combustion;
    state
}

const CACHE_STEP: f64 = 0.25;

/// Engine evaluator for the vehicle loop. IMEP is linear in (IVC pressure,
/// heat, exhaust pressure); the heat coefficient depends on spark angle and burn
/// duration and is memoised on a 0.25° grid with bilinear interpolation.
#[derive(Debug)]
pub struct Powertrain {
    calib: EngineCalibration,
    kernel: CycleKernel,
    per_pa_ivc: f64,
    per_pa_exhaust: f64,
    per_joule: Mutex<HashMap<(i64, i64), f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatingPoint {
    pub state: EngineState,
    /// bar
    pub imep: f64,
    /// N
    pub force: f64,
}

impl Powertrain {
    pub fn new(calib: EngineCalibration) -> Result<Self> {
        calib.validate()?;
        let kernel = CycleKernel::new(calib.geometry(), calib.cycle_shape());
        let unit = |p_ivc, p_exhaust| {
            let p = kernel.pressure(&CycleInputs { p_ivc, heat: 0.0, ignition: 0.0, duration: 1.0, p_exhaust });
            kernel.mean_effective_pressure(&p, calib.displacement)
        };
        let per_pa_ivc = unit(1.0, 0.0);
        let per_pa_exhaust = unit(0.0, 1.0);
        Ok(Self { calib, kernel, per_pa_ivc, per_pa_exhaust, per_joule: Mutex::new(HashMap::new()) })
    }

    pub fn calibration(&self) -> &EngineCalibration {
        &self.calib
    }

    pub fn kernel(&self) -> &CycleKernel {
        &self.kernel
    }

    fn per_joule_at(&self, ki: i64, kd: i64) -> f64 {
        let mut cache = self.per_joule.lock().expect("cache lock");
        *cache.entry((ki, kd)).or_insert_with(|| {
            let p = self.kernel.pressure(&CycleInputs {
                p_ivc: 0.0,
                heat: 1.0,
                ignition: ki as f64 * CACHE_STEP,
                duration: kd as f64 * CACHE_STEP,
                p_exhaust: 0.0,
            });
            self.kernel.mean_effective_pressure(&p, self.calib.displacement)
        })
    }

    fn per_joule(&self, ignition: f64, duration: f64) -> f64 {
        let (fi, fd) = (ignition / CACHE_STEP, duration / CACHE_STEP);
        let (i0, d0) = (fi.floor() as i64, fd.floor() as i64);
        let (ti, td) = (fi - i0 as f64, fd - d0 as f64);
        let a = self.per_joule_at(i0, d0) * (1.0 - td) + self.per_joule_at(i0, d0 + 1) * td;
        let b = self.per_joule_at(i0 + 1, d0) * (1.0 - td) + self.per_joule_at(i0 + 1, d0 + 1) * td;
        a * (1.0 - ti) + b * ti
    }

    /// IMEP in bar from the memoised linear decomposition.
    pub fn imep_fast(&self, state: &EngineState) -> f64 {
        let inp = cycle_inputs(&self.calib, state, 1.0);
        let pa = self.per_pa_ivc * inp.p_ivc
            + self.per_pa_exhaust * inp.p_exhaust
            + self.per_joule(inp.ignition, inp.duration) * inp.heat;
        pa / 1e5
    }

    pub fn state(&self, throttle: f64, v: f64, ignition_offset: f64) -> EngineState {
        engine_state(&self.calib, throttle, v, ignition_offset)
    }

    pub fn operating_point(&self, throttle: f64, v: f64, ignition_offset: f64) -> OperatingPoint {
        let state = self.state(throttle, v, ignition_offset);
        let imep = self.imep_fast(&state);
        let force = wheel_force(&self.calib, imep, state.engine_speed, v);
        OperatingPoint { state, imep, force }
    }

    pub fn force(&self, throttle: f64, v: f64, ignition_offset: f64) -> f64 {
        self.operating_point(throttle, v, ignition_offset).force
    }

    /// Full-resolution trace, optionally with scaled heat release.
    pub fn trace(&self, state: &EngineState, heat_scale: f64) -> PressureTrace {
        synthesize_with_kernel(&self.kernel, &self.calib, state, heat_scale)
    }

    /// Angle where combustion adds the most pressure over the motored cycle at the
    /// same charge. Under heavy retard the burn hump drops below the compression
    /// peak, so the plain maximum would sit at TDC.
    pub fn combustion_peak_angle(&self, state: &EngineState) -> f64 {
        let fired = self.trace(state, 1.0);
        let motored = self.trace(state, 0.0);
        let rise = fired.pressure().iter().zip(motored.pressure()).map(|(f, m)| f - m);
        let (i, _) = rise.enumerate().fold((0, f64::NEG_INFINITY), |best, (i, d)| if d > best.1 { (i, d) } else { best });
        fired.crank_angle()[i]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use super::Strategy;

    fn cal() -> EngineCalibration {
        EngineCalibration::default()
    }

    #[test]
    fn default_calibration_is_valid() {
        cal().validate().unwrap();
    }

    #[test]
    fn cvt_examples() {
        let c = cal();
        assert_eq!(cvt_engine_speed(&c, 0.0), 1800.0);
        assert!((cvt_engine_speed(&c, 48.7) - 7500.0).abs() < 1e-9);
        assert_eq!(cvt_engine_speed(&c, 120.0), 8000.0);
    }

    #[test]
    fn air_flow_examples() {
        let c = cal();
        let idle = air_mass_flow(&c, 0.0, 1800.0);
        assert!(idle > 0.0 && (idle - 0.8).abs() < 0.05, "{idle}");
        let wot = air_mass_flow(&c, 100.0, 7500.0);
        assert!((wot - 11.0).abs() < 0.6, "{wot}");
        let mut doubled = c.clone();
        let ve = &c.volumetric_efficiency_map;
        doubled.volumetric_efficiency_map = Table2d::new(
            ve.xs().to_vec(),
            ve.ys().to_vec(),
            ve.values().iter().map(|r| r.iter().map(|x| 2.0 * x).collect()).collect(),
        )
        .unwrap();
        let (a, b) = (air_mass_flow(&c, 37.0, 6100.0), air_mass_flow(&doubled, 37.0, 6100.0));
        assert!((b - 2.0 * a).abs() < 1e-12);
    }

    #[test]
    fn injection_examples() {
        let c = cal();
        let zero = injection_for_lambda(&c, 0.0, 1.0).unwrap();
        assert_eq!((zero.fuel_flow, zero.injector_duty), (0.0, 0.0));
        let road = injection_for_lambda(&c, 11.03, 1.0).unwrap();
        assert!((road.fuel_flow - 0.75).abs() < 0.001);
        assert!((road.fuel_flow / c.fuel_density - 1.0).abs() < 0.002);
        let cut = injection_for_lambda(&c, 11.03 * 0.83, 1.0).unwrap();
        assert!((cut.fuel_flow / road.fuel_flow - 0.83).abs() < 1e-12);
        assert!(matches!(injection_for_lambda(&c, 5.0, 0.0), Err(Error::Domain(_))));
        assert!(matches!(injection_for_lambda(&c, 5.0, -1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn strategy_parsing() {
        assert_eq!("or".parse::<Strategy>().unwrap(), Strategy::Or);
        assert_eq!("VC".parse::<Strategy>().unwrap(), Strategy::Vc);
        assert!(matches!("xx".parse::<Strategy>(), Err(Error::Config(_))));
    }

    #[test]
    fn retard_law_shape() {
        let law = RetardLaw::new(&[(-0.1, 0.0), (0.25, 20.5), (1.1, 29.75)], 48.3, 0.4, 40.0).unwrap();
        assert_eq!(restriction_ignition_offset(&law, Strategy::Vc, 48.7, 48.3, 0.25), 0.0);
        assert!((restriction_ignition_offset(&law, Strategy::Or, 48.7, 48.3, 0.25) - 20.5).abs() < 1e-12);
        assert_eq!(restriction_ignition_offset(&law, Strategy::Or, 48.7, 48.3, -0.1), 0.0);
        assert_eq!(restriction_ignition_offset(&law, Strategy::Or, 48.7, 48.3, -0.5), 0.0);
        assert_eq!(restriction_ignition_offset(&law, Strategy::Or, 48.0, 48.3, 0.25), 0.0);
        assert!((restriction_ignition_offset(&law, Strategy::Or, 48.5, 48.3, 0.25) - 10.25).abs() < 1e-9);
        assert_eq!(law.retard_for_surplus(10.0), 40.0);
        assert!(law.retard_for_surplus(1.2) > 29.75);
    }

    #[test]
    fn indicated_power_examples() {
        let mut c = cal();
        c.displacement = 50e-6;
        assert_eq!(indicated_power(0.0, 7500.0, &c), 0.0);
        assert!((indicated_power(10.0, 7500.0, &c) - 3125.0).abs() < 1e-9);
        assert!((indicated_power(10.0, 15000.0, &c) - 6250.0).abs() < 1e-9);
    }

    fn fired(c: &EngineCalibration, offset: f64) -> EngineState {
        let mut s = engine_state(c, 100.0, 48.7, offset);
        s.throttle = 100.0;
        s
    }

    #[test]
    fn combustion_peak_moves_later_with_retard() {
        let pt = Powertrain::new(cal()).unwrap();
        for throttle in [10.0, 50.0, 100.0] {
            let angles: Vec<f64> =
                (0..=30).map(|r| pt.combustion_peak_angle(&pt.state(throttle, 48.7, r as f64))).collect();
            assert!(angles.windows(2).all(|w| w[1] >= w[0]), "{angles:?}");
        }
    }

    #[test]
    fn motored_trace_peaks_at_tdc() {
        let c = cal();
        let mut s = fired(&c, 0.0);
        s.fuel_flow = 0.0;
        let t = synthesize_pressure_trace(&c, &s);
        assert_eq!(t.peak_angle(), 0.0);
        assert!(imep(&t, &c).abs() < 0.3);
    }

    #[test]
    fn trace_closure_and_positivity() {
        let c = cal();
        for off in [0.0, 20.5, 30.0] {
            let t = synthesize_pressure_trace(&c, &fired(&c, off));
            let p = t.pressure();
            assert_eq!(p.len(), 2048);
            assert!(p.iter().all(|&x| x > 0.0));
            assert!(((p[0] - p[2047]) / p[0]).abs() < 0.05);
            PressureTrace::new(t.crank_angle().to_vec(), p.to_vec()).unwrap();
        }
    }

    #[test]
    fn imep_scales_with_pressure() {
        let c = cal();
        let t = synthesize_pressure_trace(&c, &fired(&c, 0.0));
        assert!((imep(&t.scaled(2.5), &c) - 2.5 * imep(&t, &c)).abs() < 1e-9);
    }

    #[test]
    fn fast_imep_matches_full_trace() {
        let c = cal();
        let pt = Powertrain::new(c.clone()).unwrap();
        for (thr, v, off) in [(100.0, 48.7, 0.0), (100.0, 48.7, 20.5), (50.0, 48.7, 0.0), (30.0, 35.0, 0.0), (100.0, 48.9, 29.75), (0.0, 48.7, 0.0)] {
            let s = pt.state(thr, v, off);
            let exact = imep(&synthesize_pressure_trace(&c, &s), &c);
            let fast = pt.imep_fast(&s);
            assert!((exact - fast).abs() < 2e-3 * exact.abs().max(1.0), "{thr} {v} {off}: {exact} vs {fast}");
        }
    }

    #[test]
    fn closed_throttle_brakes() {
        let c = cal();
        let pt = Powertrain::new(c.clone()).unwrap();
        assert!(pt.force(0.0, 48.7, 0.0) < 0.0);
        let mut none = c.clone();
        none.mechanical_efficiency = 1e-12;
        let s = engine_state(&none, 100.0, 48.7, 0.0);
        let t = synthesize_pressure_trace(&none, &s);
        assert!(tractive_force(&none, &s, &t, 48.7) <= 0.0);
    }

    #[test]
    fn thermal_examples() {
        let c = cal();
        let mut s = fired(&c, 0.0);
        let cold = thermal_model(&c, &s);
        s.ignition_offset = 20.5;
        let hot = thermal_model(&c, &s);
        let d = hot.exhaust - cold.exhaust;
        assert!((d - 300.0).abs() < 15.0, "{d}");
        assert!(hot.combustion < cold.combustion);
        s.fuel_flow = 0.0;
        assert_eq!(thermal_model(&c, &s).exhaust, c.thermal.exhaust_floor);
    }

    proptest! {
        #[test]
        fn lambda_round_trip(air in 0.1f64..20.0, lambda in 0.8f64..1.2) {
            let c = cal();
            let inj = injection_for_lambda(&c, air, lambda).unwrap();
            prop_assert!((air / (c.stoich_afr * inj.fuel_flow) - lambda).abs() < 1e-9);
        }

        #[test]
        fn air_flow_increasing_in_throttle(t in 0.0f64..99.0, dt in 0.1f64..10.0, rpm in 1800.0f64..8000.0) {
            let c = cal();
            prop_assert!(air_mass_flow(&c, (t + dt).min(100.0), rpm) > air_mass_flow(&c, t, rpm));
        }

        #[test]
        fn indicated_power_bilinear(i in 0.0f64..15.0, r in 1000.0f64..8000.0, k in 0.1f64..3.0) {
            let c = cal();
            let p = indicated_power(i, r, &c);
            prop_assert!((indicated_power(k * i, r, &c) - k * p).abs() <= 1e-9 * p.abs().max(1.0));
            prop_assert!((indicated_power(i, k * r, &c) - k * p).abs() <= 1e-9 * p.abs().max(1.0));
        }

        #[test]
        fn combustion_temp_falls_with_retard(off in 0.0f64..39.0, d in 0.01f64..1.0) {
            let c = cal();
            let mut s = fired(&c, off);
            let a = thermal_model(&c, &s).combustion;
            s.ignition_offset = off + d;
            prop_assert!(thermal_model(&c, &s).combustion < a);
        }
    }
}
