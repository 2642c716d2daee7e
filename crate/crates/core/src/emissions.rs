//! Exhaust flow, engine-out and tailpipe composition, per-km conversion and Euro 5 checks.

use std::collections::BTreeMap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::powertrain::Strategy;

/// J/(mol·K)
pub const R_UNIVERSAL: f64 = 8.314462618;
/// Pa
pub const STANDARD_PRESSURE: f64 = 101_325.0;
pub const STOICH_AFR: f64 = 14.7;

/// kg/mol
pub const M_N2: f64 = 0.028;
pub const M_CO2: f64 = 0.044;
pub const M_H2O: f64 = 0.018;
pub const M_CO: f64 = 0.028;
/// HC counted as propane.
pub const M_HC: f64 = 0.044;
/// NOx counted as NO₂.
pub const M_NOX: f64 = 0.046;
pub const HC_CARBON_ATOMS: f64 = 3.0;

/// Molar mass of an N₂/CO₂/H₂O mixture given by volume fractions (not renormalised).
pub fn mean_molar_mass(n2: f64, co2: f64, h2o: f64) -> f64 {
    n2 * M_N2 + co2 * M_CO2 + h2o * M_H2O
}

/// 71 % N₂, 14 % CO₂, 13 % H₂O.
pub fn exhaust_molar_mass() -> f64 {
    mean_molar_mass(0.71, 0.14, 0.13)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GasComposition {
    pub co_ppm: f64,
    pub co2_pct: f64,
    pub hc_ppm: f64,
    pub nox_ppm: f64,
    pub o2_pct: f64,
}

impl GasComposition {
    pub fn validate(&self) -> Result<()> {
        let all = [self.co_ppm, self.co2_pct, self.hc_ppm, self.nox_ppm, self.o2_pct];
        if all.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::Validation(format!("negative or non-finite concentration in {self:?}")));
        }
        if self.co2_pct > 20.0 {
            return Err(Error::Validation(format!("CO2 {} % above 20 %", self.co2_pct)));
        }
        Ok(())
    }

    /// Tailpipe gas additionally keeps CO + HC + NOx within 2 % by volume.
    pub fn validate_tailpipe(&self) -> Result<()> {
        self.validate()?;
        let pollutants = (self.co_ppm + self.hc_ppm + self.nox_ppm) / 1e4;
        if pollutants > 2.0 {
            return Err(Error::Validation(format!("pollutant sum {pollutants:.3} % above 2 %")));
        }
        Ok(())
    }

    /// Carbon-bearing volume share in %, HC weighted by its carbon count.
    pub fn carbon_pct(&self) -> f64 {
        self.co2_pct + self.co_ppm / 1e4 + HC_CARBON_ATOMS * self.hc_ppm / 1e4
    }
}

/// kg/h
pub fn exhaust_mass_flow_from_fuel(fuel_con: f64, fuel_density: f64, lambda: f64) -> f64 {
    fuel_con * fuel_density * (1.0 + STOICH_AFR * lambda)
}

/// kg/h
pub fn exhaust_mass_flow_components(air_flow: f64, fuel_flow: f64) -> f64 {
    air_flow + fuel_flow
}

#[derive(Debug, Clone, PartialEq)]
pub struct EfmModel {
    /// kg/h
    pub range_min: f64,
    pub range_max: f64,
    pub plausibility_floor: f64,
    pub noise_rms: f64,
}

impl Default for EfmModel {
    fn default() -> Self {
        Self { range_min: 12.5, range_max: 900.0, plausibility_floor: 7.9, noise_rms: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EfmReading {
    /// kg/h
    pub reading: f64,
    /// At or above the plausibility floor.
    pub valid: bool,
    /// Outside [range_min, range_max]; readings above range are clamped.
    pub out_of_range: bool,
}

impl EfmModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.plausibility_floor < self.range_min && self.range_min < self.range_max) {
            return Err(Error::Config("efm: need plausibility_floor < range_min < range_max".into()));
        }
        if !(self.noise_rms >= 0.0) {
            return Err(Error::Config("efm: noise_rms must be >= 0".into()));
        }
        Ok(())
    }

    pub fn measure<R: Rng + ?Sized>(&self, true_flow: f64, rng: &mut R) -> EfmReading {
        let noise = if self.noise_rms > 0.0 {
            Normal::new(0.0, self.noise_rms).expect("noise_rms validated").sample(rng)
        } else {
            0.0
        };
        let raw = (true_flow + noise).max(0.0);
        let reading = raw.min(self.range_max);
        EfmReading {
            reading,
            valid: reading >= self.plausibility_floor,
            out_of_range: raw > self.range_max || raw < self.range_min,
        }
    }
}

pub fn efm_measure(model: &EfmModel, true_flow: f64, seed: u64) -> EfmReading {
    model.measure(true_flow, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Phenomenological engine-out gas model.
#[derive(Debug, Clone, PartialEq)]
pub struct RawGasParams {
    /// K
    pub t_ref: f64,
    /// CO at λ = 1 and `t_ref` before saturation, ppm
    pub co_ref: f64,
    pub co_max: f64,
    pub co_lambda_gain: f64,
    pub co_temp_gain: f64,
    pub hc_ref: f64,
    pub hc_lambda_gain: f64,
    pub hc_temp_gain: f64,
    pub nox_ref: f64,
    /// K
    pub nox_activation: f64,
    pub nox_peak_lambda: f64,
    pub nox_width: f64,
    /// Carbon share (as CO₂ %) of stoichiometric exhaust.
    pub carbon_stoich: f64,
    pub carbon_rich_gain: f64,
    pub o2_ref: f64,
    pub o2_lambda_gain: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CatalystParams {
    pub ox_max: f64,
    pub ox_mid: f64,
    pub ox_width: f64,
    pub nox_max: f64,
    pub nox_mid: f64,
    pub nox_width: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmissionsCalibration {
    pub raw: RawGasParams,
    pub catalyst: CatalystParams,
    /// Sampling-point gas temperature, K = offset + slope · exhaust temperature in K.
    pub gas_temp_offset: f64,
    pub gas_temp_slope: f64,
    /// Pa
    pub pressure: f64,
    /// kg/mol
    pub molar_mass: f64,
}

impl Default for EmissionsCalibration {
    fn default() -> Self {
        crate::config::Config::default().emissions
    }
}

impl EmissionsCalibration {
    pub fn gas_temperature(&self, exhaust_temp_c: f64) -> f64 {
        self.gas_temp_offset + self.gas_temp_slope * (exhaust_temp_c + 273.15)
    }
}

pub fn engine_out_concentrations(lambda: f64, combustion_temp: f64, p: &RawGasParams) -> Result<GasComposition> {
    if !(0.9..=1.1).contains(&lambda) {
        return Err(Error::Domain(format!("lambda {lambda} outside [0.9, 1.1]")));
    }
    if !(1500.0..=3000.0).contains(&combustion_temp) {
        return Err(Error::Domain(format!("combustion temperature {combustion_temp} K outside [1500, 3000]")));
    }
    let cold = p.t_ref / combustion_temp - 1.0;
    let co_free = p.co_ref * (-p.co_lambda_gain * (lambda - 1.0)).exp() * (p.co_temp_gain * cold).exp();
    let co_ppm = p.co_max * co_free / (p.co_max + co_free);
    let hc_ppm = p.hc_ref * (-p.hc_lambda_gain * (lambda - 1.0)).exp() * (p.hc_temp_gain * cold).exp();
    let nox_ppm = p.nox_ref
        * (p.nox_activation * (1.0 / p.t_ref - 1.0 / combustion_temp)).exp()
        * (-((lambda - p.nox_peak_lambda) / p.nox_width).powi(2)).exp();
    let carbon = p.carbon_stoich * (1.0 + p.carbon_rich_gain * (1.0 - lambda));
    let co2_pct = (carbon - co_ppm / 1e4 - HC_CARBON_ATOMS * hc_ppm / 1e4).max(0.0);
    let o2_pct = p.o2_ref * (p.o2_lambda_gain * (lambda - 1.0)).exp();
    Ok(GasComposition { co_ppm, co2_pct, hc_ppm, nox_ppm, o2_pct })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CatalystEfficiency {
    pub co: f64,
    pub hc: f64,
    pub nox: f64,
}

pub fn catalyst_efficiency(lambda: f64, p: &CatalystParams) -> CatalystEfficiency {
    let ox = p.ox_max / (1.0 + (-(lambda - p.ox_mid) / p.ox_width).exp());
    let nox = p.nox_max / (1.0 + ((lambda - p.nox_mid) / p.nox_width).exp());
    CatalystEfficiency { co: ox, hc: ox, nox }
}

pub fn catalyst_convert(raw: &GasComposition, lambda: f64, p: &CatalystParams) -> GasComposition {
    catalyst_convert_with(raw, &catalyst_efficiency(lambda, p))
}

/// Oxidised CO/HC carbon moves to CO₂; O₂ is consumed by oxidation and released by NOx reduction.
pub fn catalyst_convert_with(raw: &GasComposition, eta: &CatalystEfficiency) -> GasComposition {
    let d_co = raw.co_ppm * eta.co;
    let d_hc = raw.hc_ppm * eta.hc;
    let d_nox = raw.nox_ppm * eta.nox;
    let co2_pct = raw.co2_pct + d_co / 1e4 + HC_CARBON_ATOMS * d_hc / 1e4;
    // CO + ½O₂, C₃H₈ + 5O₂, NO → ½N₂ + ½O₂
    let o2_pct = (raw.o2_pct - 0.5 * d_co / 1e4 - 5.0 * d_hc / 1e4 + 0.5 * d_nox / 1e4).max(0.0);
    GasComposition {
        co_ppm: raw.co_ppm - d_co,
        co2_pct,
        hc_ppm: raw.hc_ppm - d_hc,
        nox_ppm: raw.nox_ppm - d_nox,
        o2_pct,
    }
}

/// m³/h from g/s.
pub fn exhaust_volume_flow(mass_flow: f64, temp: f64, pressure: f64, mean_molar_mass: f64) -> f64 {
    mass_flow / 1000.0 / mean_molar_mass * R_UNIVERSAL * temp / pressure * 3600.0
}

/// Gas temperature reproducing a given mass/volume flow pair, K.
pub fn gas_temperature_from_flows(mass_flow: f64, volume_flow: f64, pressure: f64, mean_molar_mass: f64) -> f64 {
    volume_flow / 3600.0 * pressure * mean_molar_mass / (mass_flow / 1000.0 * R_UNIVERSAL)
}

/// m³/km
pub fn per_km_volume(volume_flow: f64, v: f64) -> Result<f64> {
    if !(v > 0.0) {
        return Err(Error::Domain(format!("per-km volume needs v > 0, got {v}")));
    }
    Ok(volume_flow / v)
}

/// mg/km
pub fn ppm_to_mg_per_km(conc_ppm: f64, vd: f64, temp: f64, pressure: f64, molar_mass: f64) -> Result<f64> {
    if !(temp > 0.0) {
        return Err(Error::Domain(format!("temperature must be > 0 K, got {temp}")));
    }
    Ok(conc_ppm * 1e-6 * vd * pressure * molar_mass / (R_UNIVERSAL * temp) * 1e6)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Pollutant {
    Co,
    Co2,
    Hc,
    Nox,
}

impl Pollutant {
    pub const ALL: [Pollutant; 4] = [Pollutant::Co, Pollutant::Co2, Pollutant::Hc, Pollutant::Nox];

    pub fn molar_mass(self) -> f64 {
        match self {
            Pollutant::Co => M_CO,
            Pollutant::Co2 => M_CO2,
            Pollutant::Hc => M_HC,
            Pollutant::Nox => M_NOX,
        }
    }

    /// Euro 5 L-category limit in mg/km; CO₂ is not limited.
    pub fn euro5_limit(self) -> Option<f64> {
        match self {
            Pollutant::Co => Some(1000.0),
            Pollutant::Hc => Some(100.0),
            Pollutant::Nox => Some(60.0),
            Pollutant::Co2 => None,
        }
    }

    pub fn ppm(self, c: &GasComposition) -> f64 {
        match self {
            Pollutant::Co => c.co_ppm,
            Pollutant::Co2 => c.co2_pct * 1e4,
            Pollutant::Hc => c.hc_ppm,
            Pollutant::Nox => c.nox_ppm,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Pollutant::Co => "CO",
            Pollutant::Co2 => "CO2",
            Pollutant::Hc => "HC",
            Pollutant::Nox => "NOx",
        }
    }
}

impl fmt::Display for Pollutant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail,
    Unregulated,
}

impl Verdict {
    pub fn label(self) -> &'static str {
        match self {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
            Verdict::Unregulated => "n/a",
        }
    }
}

pub fn euro5_check(per_km: &BTreeMap<Pollutant, f64>) -> Result<BTreeMap<Pollutant, Verdict>> {
    for p in [Pollutant::Co, Pollutant::Hc, Pollutant::Nox] {
        if !per_km.contains_key(&p) {
            return Err(Error::Validation(format!("per-km values lack {p}")));
        }
    }
    Ok(per_km
        .iter()
        .map(|(&p, &v)| {
            let verdict = match p.euro5_limit() {
                None => Verdict::Unregulated,
                Some(limit) if v <= limit => Verdict::Pass,
                Some(_) => Verdict::Fail,
            };
            (p, verdict)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmissionRecord {
    pub grade: f64,
    pub strategy: Strategy,
    /// g/s
    pub mass_flow: f64,
    /// Gas temperature at the sampling point, K.
    pub exhaust_temp: f64,
    pub composition: GasComposition,
    /// km/h
    pub v: f64,
    /// mg/km
    pub per_km: BTreeMap<Pollutant, f64>,
    /// m³/h
    pub volume_flow: f64,
}

pub const RECORD_CSV_HEADER: &str = "grade,strategy,massflow_gps,exh_temp_K,co_ppm,co2_pct,hc_ppm,nox_ppm,o2_pct,v_kmh,co_mgkm,co2_gkm,hc_mgkm,nox_mgkm,volflow_m3h";

impl EmissionRecord {
    /// Derives volume flow and per-km masses from the measured quantities.
    pub fn new(
        grade: f64,
        strategy: Strategy,
        mass_flow: f64,
        exhaust_temp: f64,
        composition: GasComposition,
        v: f64,
        pressure: f64,
        molar_mass: f64,
    ) -> Result<Self> {
        if !(mass_flow >= 0.0) {
            return Err(Error::Validation(format!("mass flow must be >= 0, got {mass_flow}")));
        }
        let volume_flow = exhaust_volume_flow(mass_flow, exhaust_temp, pressure, molar_mass);
        let vd = per_km_volume(volume_flow, v)?;
        let per_km = Pollutant::ALL
            .iter()
            .map(|&p| Ok((p, ppm_to_mg_per_km(p.ppm(&composition), vd, exhaust_temp, pressure, p.molar_mass())?)))
            .collect::<Result<BTreeMap<_, _>>>()?;
        Ok(Self { grade, strategy, mass_flow, exhaust_temp, composition, v, per_km, volume_flow })
    }

    /// m³/km
    pub fn vd(&self) -> f64 {
        self.volume_flow / self.v
    }

    pub fn csv_row(&self) -> String {
        let c = &self.composition;
        let k = |p| self.per_km[&p];
        format!(
            "{:.4},{},{:.6},{:.3},{:.4},{:.5},{:.5},{:.5},{:.5},{:.4},{:.4},{:.5},{:.5},{:.5},{:.5}",
            self.grade,
            self.strategy,
            self.mass_flow,
            self.exhaust_temp,
            c.co_ppm,
            c.co2_pct,
            c.hc_ppm,
            c.nox_ppm,
            c.o2_pct,
            self.v,
            k(Pollutant::Co),
            k(Pollutant::Co2) / 1000.0,
            k(Pollutant::Hc),
            k(Pollutant::Nox),
            self.volume_flow
        )
    }

    pub fn from_csv_row(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 15 {
            return Err(Error::Validation(format!("record row needs 15 fields, got {}", f.len())));
        }
        let num = |i: usize| {
            f[i].parse::<f64>().map_err(|e| Error::Validation(format!("record field {i} '{}': {e}", f[i])))
        };
        let mut per_km = BTreeMap::new();
        per_km.insert(Pollutant::Co, num(10)?);
        per_km.insert(Pollutant::Co2, num(11)? * 1000.0);
        per_km.insert(Pollutant::Hc, num(12)?);
        per_km.insert(Pollutant::Nox, num(13)?);
        Ok(Self {
            grade: num(0)?,
            strategy: f[1].parse()?,
            mass_flow: num(2)?,
            exhaust_temp: num(3)?,
            composition: GasComposition {
                co_ppm: num(4)?,
                co2_pct: num(5)?,
                hc_ppm: num(6)?,
                nox_ppm: num(7)?,
                o2_pct: num(8)?,
            },
            v: num(9)?,
            per_km,
            volume_flow: num(14)?,
        })
    }
}

/// OR/VC ratio, negated VC/OR when VC is larger. Ratios rounding to 1.00 report
/// as +1.00; a zero VC value against a positive OR value is an infinite improvement.
pub fn improvement_factor(or_value: f64, vc_value: f64) -> f64 {
    if or_value == vc_value {
        return 1.0;
    }
    if vc_value == 0.0 {
        return f64::INFINITY;
    }
    if or_value == 0.0 {
        return f64::NEG_INFINITY;
    }
    let (ratio, sign) = if vc_value <= or_value { (or_value / vc_value, 1.0) } else { (vc_value / or_value, -1.0) };
    if (ratio * 100.0).round() == 100.0 {
        1.0
    } else {
        sign * ratio
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Quantity {
    MassFlow,
    Co,
    Co2,
    Nox,
    Hc,
}

impl Quantity {
    pub const ALL: [Quantity; 5] = [Quantity::MassFlow, Quantity::Co, Quantity::Co2, Quantity::Nox, Quantity::Hc];

    pub fn label(self) -> &'static str {
        match self {
            Quantity::MassFlow => "mass_flow_gps",
            Quantity::Co => "co_ppm",
            Quantity::Co2 => "co2_pct",
            Quantity::Nox => "nox_ppm",
            Quantity::Hc => "hc_ppm",
        }
    }

    pub fn of(self, r: &EmissionRecord) -> f64 {
        match self {
            Quantity::MassFlow => r.mass_flow,
            Quantity::Co => r.composition.co_ppm,
            Quantity::Co2 => r.composition.co2_pct,
            Quantity::Nox => r.composition.nox_ppm,
            Quantity::Hc => r.composition.hc_ppm,
        }
    }
}

pub fn improvement_factors(or_rec: &EmissionRecord, vc_rec: &EmissionRecord) -> BTreeMap<Quantity, f64> {
    Quantity::ALL.iter().map(|&q| (q, improvement_factor(q.of(or_rec), q.of(vc_rec)))).collect()
}
