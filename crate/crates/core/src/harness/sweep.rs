//! Static grade sweep on the roller dynamometer, OR against VC.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::Config;
use crate::control::settle_detect_with;
use crate::daq::{capture_cycles, ensemble_average, lambda_lookup, log_operating_point, Channel, LogBundle};
use crate::emissions::{
    catalyst_convert, engine_out_concentrations, exhaust_mass_flow_components, EmissionRecord, GasComposition,
};
use crate::error::{Error, Result};
use crate::powertrain::{imep, indicated_power, Powertrain, RetardLaw, Strategy};

use super::sim::{restriction_law, LoadModel, LoopSim, Plant, TelemetryRow};

/// Per-point seed from the master seed, grade and strategy.
pub fn point_seed(master: u64, grade: f64, strategy: Strategy) -> u64 {
    let bp = (grade * 10_000.0).round() as i64 as u64;
    let tag = match strategy {
        Strategy::Or => 0x4f52,
        Strategy::Vc => 0x5643,
    };
    splitmix(splitmix(master ^ splitmix(bp)) ^ tag)
}

fn splitmix(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnginePoint {
    pub grade: f64,
    pub strategy: Strategy,
    /// deg
    pub ignition_offset: f64,
    /// bar
    pub imep: f64,
    /// bar, peak of the ensemble mean
    pub max_avg_pressure: f64,
    /// W
    pub indicated_power: f64,
    /// %, reported actuator position
    pub throttle: f64,
    pub injector_duty: f64,
    pub engine_speed: f64,
    pub lambda: f64,
    /// °C
    pub exhaust_temp: f64,
    pub cylinder_temp: f64,
    /// K
    pub combustion_temp: f64,
}

pub const ENGINE_POINTS_HEADER: &str = "grade,strategy,ignition_offset_deg,imep_bar,max_avg_pressure_bar,indicated_power_w,throttle_pct,injector_duty_pct,engine_speed_rpm,lambda,exhaust_temp_c,cylinder_temp_c,combustion_temp_k";

impl EnginePoint {
    pub fn csv_row(&self) -> String {
        format!(
            "{:.4},{},{:.4},{:.5},{:.5},{:.3},{:.4},{:.4},{:.2},{:.5},{:.3},{:.3},{:.3}",
            self.grade,
            self.strategy,
            self.ignition_offset,
            self.imep,
            self.max_avg_pressure,
            self.indicated_power,
            self.throttle,
            self.injector_duty,
            self.engine_speed,
            self.lambda,
            self.exhaust_temp,
            self.cylinder_temp,
            self.combustion_temp
        )
    }
}

/// EFM plausibility and settling status of one point.
#[derive(Debug, Clone, PartialEq)]
pub struct PointFlags {
    pub grade: f64,
    pub strategy: Strategy,
    /// kg/h, window mean of the meter
    pub efm_reading: f64,
    pub efm_valid: bool,
    pub out_of_range: bool,
    /// s, None on timeout
    pub settled_at: Option<f64>,
}

pub const FLAGS_HEADER: &str = "grade,strategy,efm_reading_kgh,efm_valid,efm_out_of_range,settled,settled_at_s";

impl PointFlags {
    pub fn csv_row(&self) -> String {
        format!(
            "{:.4},{},{:.4},{},{},{},{}",
            self.grade,
            self.strategy,
            self.efm_reading,
            self.efm_valid,
            self.out_of_range,
            self.settled_at.is_some(),
            self.settled_at.map_or_else(|| "".to_string(), |t| format!("{t:.2}"))
        )
    }

    pub fn from_csv_row(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 7 {
            return Err(Error::Validation(format!("flag row needs 7 fields, got {}", f.len())));
        }
        let num = |i: usize| f[i].parse::<f64>().map_err(|e| Error::Validation(format!("flag field {i}: {e}")));
        let flag = |i: usize| f[i].parse::<bool>().map_err(|e| Error::Validation(format!("flag field {i}: {e}")));
        Ok(Self {
            grade: num(0)?,
            strategy: f[1].parse()?,
            efm_reading: num(2)?,
            efm_valid: flag(3)?,
            out_of_range: flag(4)?,
            settled_at: if flag(5)? { Some(num(6)?) } else { None },
        })
    }

    /// Usable for improvement factors.
    pub fn usable(&self) -> bool {
        self.efm_valid
    }
}

/// Everything measured at one (grade, strategy) point.
#[derive(Debug, Clone)]
pub struct PointResult {
    pub record: EmissionRecord,
    pub engine: EnginePoint,
    pub flags: PointFlags,
    pub bundle: LogBundle,
    /// Full 20 Hz history, settling phase included.
    pub telemetry: Vec<TelemetryRow>,
    /// Mean of the tailpipe stream over the window, before per-km conversion.
    pub tailpipe: GasComposition,
    pub engine_out: GasComposition,
    /// Window means.
    pub mean_velocity: f64,
    pub mean_throttle: f64,
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub points: Vec<PointResult>,
}

/// Shared models for a sweep.
#[derive(Debug)]
pub struct Bench {
    pub config: Config,
    pub powertrain: Powertrain,
    pub law: RetardLaw,
}

impl Bench {
    pub fn new(config: Config) -> Result<Self> {
        let powertrain = Powertrain::new(config.engine.clone())?;
        let law = restriction_law(&powertrain, &config.vehicle, &config.resistance)?;
        Ok(Self { config, powertrain, law })
    }

    pub fn plant(&self, load: LoadModel, grade: f64) -> Plant {
        Plant { vehicle: self.config.vehicle.clone(), curve: self.config.resistance, load, grade }
    }

    pub fn loop_sim(&self, strategy: Strategy, plant: Plant, setpoint: f64, seed: u64) -> Result<LoopSim<'_>> {
        LoopSim::new(&self.powertrain, &self.law, &self.config.controller, strategy, plant, setpoint, seed)
    }

    /// Settles, logs and evaluates one point on the dynamometer.
    pub fn run_point(&self, grade: f64, strategy: Strategy, master_seed: u64) -> Result<PointResult> {
        let cfg = &self.config;
        let seed = point_seed(master_seed, grade, strategy);
        let setpoint = cfg.controller.setpoint;
        let mut sim = self.loop_sim(strategy, self.plant(LoadModel::Dyno, grade), setpoint, seed)?;
        let rate = sim.rate();
        let band = match strategy {
            Strategy::Vc => crate::control::SETTLE_BAND_KMH,
            Strategy::Or => cfg.sweep.or_settle_band,
        };
        let mut telemetry = Vec::new();
        let mut speeds = Vec::new();
        let mut settled_at = None;
        while sim.time() < cfg.sweep.settle_timeout {
            let row = sim.advance()?;
            speeds.push(row.v);
            telemetry.push(row);
            if sim.time() >= cfg.sweep.min_settle && settle_detect_with(&speeds, rate, crate::control::SETTLE_WINDOW_S, band) {
                settled_at = Some(sim.time());
                break;
            }
        }
        let window = sim.run(cfg.sweep.log_duration)?;
        telemetry.extend_from_slice(&window);

        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xD1CE);
        let n = window.len() as f64;
        let mean = |f: &dyn Fn(&TelemetryRow) -> f64| window.iter().map(f).sum::<f64>() / n;
        let mean_v = mean(&|r| r.v);
        let mean_actual = mean(&|r| r.throttle_actual);
        let mean_reported = mean(&|r| r.throttle_reported);
        let mean_offset = mean(&|r| r.ignition_offset);

        // analyser and meter at 10 Hz, every other control sample
        let em = &cfg.emissions;
        let t0 = window[0].t;
        let gas_rows: Vec<&TelemetryRow> = window.iter().step_by((rate / cfg.daq.emission_rate).round() as usize).collect();
        let mut flows = Vec::with_capacity(gas_rows.len());
        let mut raw_stream = Vec::with_capacity(gas_rows.len());
        let mut tail_stream = Vec::with_capacity(gas_rows.len());
        for r in &gas_rows {
            let s = &r.state;
            let raw = engine_out_concentrations(s.lambda, s.combustion_temp, &em.raw)?;
            let tail = catalyst_convert(&raw, s.lambda, &em.catalyst);
            tail.validate_tailpipe()?;
            let true_flow = exhaust_mass_flow_components(s.air_flow, s.fuel_flow);
            flows.push(cfg.efm.measure(true_flow, &mut rng));
            raw_stream.push(raw);
            tail_stream.push(tail);
        }
        let gas_rate = cfg.daq.emission_rate;
        let gas_channel = |name: &str, f: &dyn Fn(usize) -> f64| {
            Channel::from_values(name, gas_rate, t0, (0..gas_rows.len()).map(f))
        };
        let lambda_sensor: Vec<f64> = window
            .iter()
            .map(|r| lambda_lookup(cfg.daq.lambda_table.voltage_for(r.state.lambda), &cfg.daq.lambda_table).lambda)
            .collect();
        let can = |name: &str, f: &dyn Fn(&TelemetryRow) -> f64| Channel::from_values(name, rate, t0, window.iter().map(f));
        let channels = vec![
            can("set_velocity_kmh", &|r| r.setpoint)?,
            can("velocity_kmh", &|r| r.v)?,
            can("throttle_set_pct", &|r| r.command)?,
            can("throttle_actual_pct", &|r| r.throttle_reported)?,
            can("injector_duty_pct", &|r| r.state.injector_duty)?,
            Channel::from_values("lambda", rate, t0, lambda_sensor)?,
            can("ignition_offset_deg", &|r| r.ignition_offset)?,
            can("engine_speed_rpm", &|r| r.state.engine_speed)?,
            can("cylinder_temp_c", &|r| r.state.cylinder_temp)?,
            can("exhaust_temp_c", &|r| r.state.exhaust_temp)?,
            can("error_kmh", &|r| r.error)?,
            can("integrator_pct", &|r| r.integrator)?,
            gas_channel("massflow_kgh", &|i| flows[i].reading)?,
            gas_channel("co_ppm", &|i| tail_stream[i].co_ppm)?,
            gas_channel("co2_pct", &|i| tail_stream[i].co2_pct)?,
            gas_channel("hc_ppm", &|i| tail_stream[i].hc_ppm)?,
            gas_channel("nox_ppm", &|i| tail_stream[i].nox_ppm)?,
            gas_channel("o2_pct", &|i| tail_stream[i].o2_pct)?,
        ];

        // engine point at the window-mean operating state
        let state = self.powertrain.state(mean_actual, mean_v, mean_offset);
        let cycles = capture_cycles(&self.powertrain, &state, cfg.daq.cycles, cfg.daq.cycle_noise, &mut rng);
        let ensemble = ensemble_average(&cycles)?;
        let imep_bar = imep(&ensemble.mean, &cfg.engine);
        let engine = EnginePoint {
            grade,
            strategy,
            ignition_offset: mean_offset,
            imep: imep_bar,
            max_avg_pressure: ensemble.mean.peak(),
            indicated_power: indicated_power(imep_bar, state.engine_speed, &cfg.engine),
            throttle: mean_reported,
            injector_duty: mean(&|r| r.state.injector_duty),
            engine_speed: mean(&|r| r.state.engine_speed),
            lambda: mean(&|r| r.state.lambda),
            exhaust_temp: mean(&|r| r.state.exhaust_temp),
            cylinder_temp: mean(&|r| r.state.cylinder_temp),
            combustion_temp: mean(&|r| r.state.combustion_temp),
        };

        let mut meta = BTreeMap::new();
        meta.insert("grade".to_string(), format!("{grade:.4}"));
        meta.insert("strategy".to_string(), strategy.to_string());
        meta.insert("seed".to_string(), seed.to_string());
        meta.insert("settled".to_string(), settled_at.is_some().to_string());
        // a timed-out point is still logged from the timeout on, and flagged
        let logged_from = Some(settled_at.unwrap_or(cfg.sweep.settle_timeout));
        let bundle = log_operating_point(&channels, cfg.sweep.log_duration, ensemble, logged_from, meta)?;

        // 1 Hz standardised means
        let gas_mean = |name: &str| -> f64 {
            bundle.emissions.iter().find(|c| c.name == name).map(Channel::mean).unwrap_or(f64::NAN)
        };
        let tailpipe = GasComposition {
            co_ppm: gas_mean("co_ppm"),
            co2_pct: gas_mean("co2_pct"),
            hc_ppm: gas_mean("hc_ppm"),
            nox_ppm: gas_mean("nox_ppm"),
            o2_pct: gas_mean("o2_pct"),
        };
        let m = raw_stream.len() as f64;
        let engine_out = GasComposition {
            co_ppm: raw_stream.iter().map(|g| g.co_ppm).sum::<f64>() / m,
            co2_pct: raw_stream.iter().map(|g| g.co2_pct).sum::<f64>() / m,
            hc_ppm: raw_stream.iter().map(|g| g.hc_ppm).sum::<f64>() / m,
            nox_ppm: raw_stream.iter().map(|g| g.nox_ppm).sum::<f64>() / m,
            o2_pct: raw_stream.iter().map(|g| g.o2_pct).sum::<f64>() / m,
        };
        let efm_mean = gas_mean("massflow_kgh");
        let flags = PointFlags {
            grade,
            strategy,
            efm_reading: efm_mean,
            efm_valid: efm_mean >= cfg.efm.plausibility_floor,
            out_of_range: flows.iter().any(|r| r.out_of_range),
            settled_at,
        };
        let gas_temp = em.gas_temperature(engine.exhaust_temp);
        let record = EmissionRecord::new(grade, strategy, efm_mean / 3.6, gas_temp, tailpipe, mean_v, em.pressure, em.molar_mass)?;
        Ok(PointResult {
            record,
            engine,
            flags,
            bundle,
            telemetry,
            tailpipe,
            engine_out,
            mean_velocity: mean_v,
            mean_throttle: mean_reported,
        })
    }
}

/// Runs every configured (grade, strategy) point. Timeouts are flagged, not fatal.
pub fn run_dyno_sweep(config: &Config) -> Result<SweepReport> {
    let bench = Bench::new(config.clone())?;
    let strategies = config.sweep.strategy.strategies();
    let jobs: Vec<(f64, Strategy)> =
        config.sweep.grades.iter().flat_map(|&g| strategies.iter().map(move |&s| (g, s))).collect();
    let results: Vec<Result<PointResult>> = std::thread::scope(|scope| {
        let handles: Vec<_> = jobs
            .iter()
            .map(|&(g, s)| {
                let bench = &bench;
                scope.spawn(move || bench.run_point(g, s, config.sweep.seed))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("sweep worker panicked")).collect()
    });
    Ok(SweepReport { points: results.into_iter().collect::<Result<Vec<_>>>()? })
}
