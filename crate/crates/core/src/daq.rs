//! Multi-rate channels, crank-encoder speed, lambda lookup, cycle ensembles and log bundles.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::interp::Table1d;
use crate::powertrain::{EngineState, Powertrain, PressureTrace};

pub const CRANK_RESOLUTION: u32 = 1024;
const TIME_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Channel {
    pub name: String,
    /// Hz
    pub rate: f64,
    samples: Vec<(f64, f64)>,
}

impl Channel {
    pub fn new(name: impl Into<String>, rate: f64, samples: Vec<(f64, f64)>) -> Result<Self> {
        let name = name.into();
        if !(rate > 0.0) {
            return Err(Error::Validation(format!("channel {name}: rate must be > 0")));
        }
        if let Some(&(t0, _)) = samples.first() {
            for (k, &(t, _)) in samples.iter().enumerate() {
                if (t - (t0 + k as f64 / rate)).abs() > TIME_TOL {
                    return Err(Error::Validation(format!("channel {name}: sample {k} at {t} s is off the {rate} Hz grid")));
                }
            }
        }
        Ok(Self { name, rate, samples })
    }

    /// Samples at `t0 + k/rate`.
    pub fn from_values(name: impl Into<String>, rate: f64, t0: f64, values: impl IntoIterator<Item = f64>) -> Result<Self> {
        let samples = values.into_iter().enumerate().map(|(k, v)| (t0 + k as f64 / rate, v)).collect();
        Self::new(name, rate, samples)
    }

    pub fn samples(&self) -> &[(f64, f64)] {
        &self.samples
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.samples.iter().map(|s| s.1)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn mean(&self) -> f64 {
        if self.samples.is_empty() {
            return f64::NAN;
        }
        self.values().sum::<f64>() / self.samples.len() as f64
    }

    /// Last `n` samples.
    pub fn tail(&self, n: usize) -> Self {
        let start = self.samples.len().saturating_sub(n);
        Self { name: self.name.clone(), rate: self.rate, samples: self.samples[start..].to_vec() }
    }
}

/// Side-by-side CSV of channels sharing rate and timestamps.
pub fn channels_to_csv(channels: &[Channel]) -> Result<String> {
    let Some(first) = channels.first() else {
        return Err(Error::Validation("no channels to write".into()));
    };
    if channels.iter().any(|c| c.len() != first.len() || c.rate != first.rate) {
        return Err(Error::Validation("channels in one table must share rate and length".into()));
    }
    let mut out = String::from("time_s");
    for c in channels {
        out.push(',');
        out.push_str(&c.name);
    }
    out.push('\n');
    for k in 0..first.len() {
        let _ = write!(out, "{:.3}", first.samples[k].0);
        for c in channels {
            let _ = write!(out, ",{:.6}", c.samples[k].1);
        }
        out.push('\n');
    }
    Ok(out)
}

/// Minimum sampling rate for a crank encoder, twice the tick frequency (Hz).
pub fn min_sampling_rate(resolution: u32, engine_speed: f64) -> f64 {
    2.0 * resolution as f64 * engine_speed / 60.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrankTickStream {
    ticks: Vec<f64>,
    resolution: u32,
}

impl CrankTickStream {
    pub fn new(ticks: Vec<f64>, resolution: u32) -> Result<Self> {
        if resolution != CRANK_RESOLUTION {
            return Err(Error::Validation(format!("encoder resolution must be {CRANK_RESOLUTION}, got {resolution}")));
        }
        if ticks.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Validation("tick intervals must be > 0".into()));
        }
        Ok(Self { ticks, resolution })
    }

    pub fn periodic(engine_speed: f64, duration: f64) -> Result<Self> {
        let f = CRANK_RESOLUTION as f64 * engine_speed / 60.0;
        let n = (duration * f).floor() as usize + 1;
        Self::new((0..n).map(|k| k as f64 / f).collect(), CRANK_RESOLUTION)
    }

    /// Tick intervals perturbed uniformly by ±`rel_jitter`.
    pub fn jittered(engine_speed: f64, duration: f64, rel_jitter: f64, seed: u64) -> Result<Self> {
        let dt = 60.0 / (CRANK_RESOLUTION as f64 * engine_speed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = 0.0;
        let mut ticks = vec![t];
        while t < duration {
            t += dt * (1.0 + rel_jitter * rng.random_range(-1.0..=1.0));
            ticks.push(t);
        }
        Self::new(ticks, CRANK_RESOLUTION)
    }

    pub fn ticks(&self) -> &[f64] {
        &self.ticks
    }

    pub fn resolution(&self) -> u32 {
        self.resolution
    }
}

/// rpm over the window starting at the first tick; 0 with fewer than two ticks.
pub fn engine_speed_from_ticks(stream: &CrankTickStream, window: f64) -> f64 {
    let Some(&t0) = stream.ticks.first() else {
        return 0.0;
    };
    let inside: Vec<f64> = stream.ticks.iter().copied().take_while(|&t| t - t0 <= window * (1.0 + 1e-12)).collect();
    if inside.len() < 2 {
        return 0.0;
    }
    let elapsed = inside[inside.len() - 1] - t0;
    60.0 * (inside.len() - 1) as f64 / (elapsed * stream.resolution as f64)
}

/// Narrowband sensor voltage → lambda; high voltage is rich.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaTable(Table1d);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambdaReading {
    pub lambda: f64,
    /// Voltage was outside the table and got clamped.
    pub clamped: bool,
}

impl LambdaTable {
    pub fn new(pairs: &[(f64, f64)]) -> Result<Self> {
        let t = Table1d::from_pairs(pairs)?;
        if !t.is_strictly_decreasing() {
            return Err(Error::Config("lambda table must be strictly decreasing in voltage".into()));
        }
        Ok(Self(t))
    }

    pub fn table(&self) -> &Table1d {
        &self.0
    }

    /// Inverse lookup; clamps to the table range.
    pub fn voltage_for(&self, lambda: f64) -> f64 {
        let mut pairs: Vec<(f64, f64)> = self.0.pairs().map(|(v, l)| (l, v)).collect();
        pairs.reverse();
        Table1d::from_pairs(&pairs).expect("strictly monotone table inverts").eval(lambda)
    }
}

impl Default for LambdaTable {
    fn default() -> Self {
        crate::config::Config::default().daq.lambda_table
    }
}

pub fn lambda_lookup(voltage: f64, table: &LambdaTable) -> LambdaReading {
    let xs = table.0.xs();
    let clamped = voltage < xs[0] || voltage > xs[xs.len() - 1];
    LambdaReading { lambda: table.0.eval(voltage), clamped }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub mean: PressureTrace,
    /// Population standard deviation per crank sample.
    pub std: PressureTrace,
    pub cycles: usize,
}

/// Pointwise mean and spread of cycles on one crank grid. Each point is summed in
/// sorted order so the result does not depend on the order of `traces`.
pub fn ensemble_average(traces: &[PressureTrace]) -> Result<Ensemble> {
    let Some(first) = traces.first() else {
        return Err(Error::Validation("ensemble needs at least one trace".into()));
    };
    if traces.iter().any(|t| !t.same_grid(first)) {
        return Err(Error::Validation("ensemble traces use different crank grids".into()));
    }
    let n = traces.len() as f64;
    let len = first.pressure().len();
    let mut column = vec![0.0; traces.len()];
    let (mut mean, mut std) = (Vec::with_capacity(len), Vec::with_capacity(len));
    for i in 0..len {
        for (slot, t) in column.iter_mut().zip(traces) {
            *slot = t.pressure()[i];
        }
        column.sort_by(f64::total_cmp);
        // offset from the smallest value keeps identical inputs exact
        let m = column[0] + column.iter().map(|p| p - column[0]).sum::<f64>() / n;
        let var = column.iter().map(|p| (p - m).powi(2)).sum::<f64>() / n;
        mean.push(m);
        std.push(var.sqrt());
    }
    Ok(Ensemble {
        mean: PressureTrace::new(first.crank_angle().to_vec(), mean)?,
        std: PressureTrace::from_grid_unchecked(std),
        cycles: traces.len(),
    })
}

/// Cycles with seeded multiplicative variation `sigma` on the released heat.
pub fn capture_cycles<R: Rng + ?Sized>(
    powertrain: &Powertrain,
    state: &EngineState,
    cycles: usize,
    sigma: f64,
    rng: &mut R,
) -> Vec<PressureTrace> {
    (0..cycles)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            powertrain.trace(state, 1.0 + sigma * z)
        })
        .collect()
}

/// 10-sample block means of a 10 Hz channel, stamped at block end.
pub fn decimate_to_1hz(raw: &Channel) -> Result<Channel> {
    if (raw.rate - 10.0).abs() > 1e-12 {
        return Err(Error::Validation(format!("decimation expects 10 Hz input, got {} Hz", raw.rate)));
    }
    let samples = raw
        .samples
        .chunks_exact(10)
        .map(|block| (block[0].0 + 1.0, block.iter().map(|s| s.1).sum::<f64>() / 10.0))
        .collect();
    Channel::new(raw.name.clone(), 1.0, samples)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogBundle {
    /// 20 Hz
    pub can: Vec<Channel>,
    /// 1 Hz
    pub emissions: Vec<Channel>,
    pub ensemble: Ensemble,
    pub meta: BTreeMap<String, String>,
}

pub const CAN_FILE: &str = "can_20hz.csv";
pub const EMISSIONS_FILE: &str = "emissions_1hz.csv";
pub const PRESSURE_MEAN_FILE: &str = "pressure_mean.csv";
pub const PRESSURE_STD_FILE: &str = "pressure_std.csv";
pub const META_FILE: &str = "meta.txt";

/// Bundles the trailing `duration` seconds of each channel. 10 Hz channels are
/// decimated to 1 Hz; 20 Hz channels go to the CAN table. Refuses unsettled points.
pub fn log_operating_point(
    channels: &[Channel],
    duration: f64,
    ensemble: Ensemble,
    settled_at: Option<f64>,
    mut meta: BTreeMap<String, String>,
) -> Result<LogBundle> {
    let Some(settled_at) = settled_at else {
        return Err(Error::Validation("operating point never settled; refusing to log".into()));
    };
    let mut can = Vec::new();
    let mut emissions = Vec::new();
    for c in channels {
        let want = (c.rate * duration).round() as usize;
        if c.len() < want {
            return Err(Error::Validation(format!("channel {} holds {} samples, {want} needed", c.name, c.len())));
        }
        let c = c.tail(want);
        match c.rate {
            r if (r - 20.0).abs() < 1e-12 => can.push(c),
            r if (r - 10.0).abs() < 1e-12 => emissions.push(decimate_to_1hz(&c)?),
            r if (r - 1.0).abs() < 1e-12 => emissions.push(c),
            r => return Err(Error::Validation(format!("channel {} has unsupported rate {r} Hz", c.name))),
        }
    }
    meta.insert("settled_at_s".into(), format!("{settled_at:.2}"));
    Ok(LogBundle { can, emissions, ensemble, meta })
}

impl LogBundle {
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let put = |name: &str, text: String| {
            let p = dir.join(name);
            fs::write(&p, text).map_err(|e| Error::io(p, e))
        };
        if !self.can.is_empty() {
            put(CAN_FILE, channels_to_csv(&self.can)?)?;
        }
        if !self.emissions.is_empty() {
            put(EMISSIONS_FILE, channels_to_csv(&self.emissions)?)?;
        }
        put(PRESSURE_MEAN_FILE, self.ensemble.mean.to_csv())?;
        put(PRESSURE_STD_FILE, self.ensemble.std.to_csv())?;
        let meta: String = self.meta.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
        put(META_FILE, meta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::powertrain::{standard_grid, EngineCalibration};
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn sampling_rate_examples() {
        let r = min_sampling_rate(1024, 8000.0);
        assert!((r - 273_066.7).abs() < 1.0);
        assert!(((r - 286_000.0) / 286_000.0).abs() < 0.05);
        assert_eq!(min_sampling_rate(1024, 0.0), 0.0);
        assert!((min_sampling_rate(512, 8000.0) - r / 2.0).abs() < 1e-9);
    }

    #[test]
    fn tick_speed_examples() {
        let s = CrankTickStream::periodic(8000.0, 0.1).unwrap();
        assert!(((engine_speed_from_ticks(&s, 0.1) - 8000.0) / 8000.0).abs() < 1e-6);
        let one = CrankTickStream::new(vec![0.0], 1024).unwrap();
        assert_eq!(engine_speed_from_ticks(&one, 0.1), 0.0);
        let j = CrankTickStream::jittered(7500.0, 0.1, 0.01, 5).unwrap();
        let rpm = engine_speed_from_ticks(&j, 0.1);
        assert!(((rpm - 7500.0) / 7500.0).abs() < 0.01, "{rpm}");
        assert!(CrankTickStream::new(vec![0.0, 1.0], 512).is_err());
        assert!(CrankTickStream::new(vec![0.0, 0.0], 1024).is_err());
    }

    #[test]
    fn lambda_examples() {
        let t = LambdaTable::default();
        assert_eq!(lambda_lookup(0.45, &t).lambda, 1.0);
        for (v, l) in t.table().pairs() {
            assert_eq!(lambda_lookup(v, &t).lambda, l);
        }
        let mid = lambda_lookup(0.325, &t).lambda;
        assert!((mid - 1.01).abs() < 1e-12);
        let c = lambda_lookup(1.3, &t);
        assert!(c.clamped && c.lambda == 0.90);
        assert!((t.voltage_for(1.0) - 0.45).abs() < 1e-12);
        assert!(LambdaTable::new(&[(0.0, 1.0), (1.0, 1.1)]).is_err());
    }

    fn base() -> PressureTrace {
        let c = EngineCalibration::default();
        let pt = Powertrain::new(c).unwrap();
        pt.trace(&pt.state(50.0, 48.7, 0.0), 1.0)
    }

    #[test]
    fn ensemble_identity_cases() {
        let b = base();
        let e = ensemble_average(&vec![b.clone(); 60]).unwrap();
        assert_eq!(e.mean, b);
        assert!(e.std.pressure().iter().all(|&s| s == 0.0));
        assert_eq!(ensemble_average(std::slice::from_ref(&b)).unwrap().mean, b);
        assert!(ensemble_average(&[]).is_err());
        let mut grid = standard_grid();
        grid[0] -= 0.1;
        let other = PressureTrace::new(grid, b.pressure().to_vec()).unwrap();
        assert!(matches!(ensemble_average(&[b, other]), Err(Error::Validation(_))));
    }

    #[test]
    fn ensemble_noise_shrinks_by_root_n() {
        let b = base();
        let sigma = 0.05;
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let traces: Vec<PressureTrace> = (0..60)
                .map(|_| {
                    let p = b.pressure().iter().map(|&x| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        x + sigma * z
                    }).collect();
                    PressureTrace::new(b.crank_angle().to_vec(), p).unwrap()
                })
                .collect();
            let e = ensemble_average(&traces).unwrap();
            let rms = (e.mean.pressure().iter().zip(b.pressure()).map(|(m, x)| (m - x).powi(2)).sum::<f64>() / 2048.0).sqrt();
            let expect = sigma / 60f64.sqrt();
            assert!(((rms - expect) / expect).abs() < 0.2, "{seed}: {rms} vs {expect}");
        }
    }

    #[test]
    fn decimation_examples() {
        let c = Channel::from_values("x", 10.0, 0.0, vec![3.0; 30]).unwrap();
        let d = decimate_to_1hz(&c).unwrap();
        assert_eq!(d.values().collect::<Vec<_>>(), vec![3.0; 3]);
        assert_eq!(d.samples()[0].0, 1.0);
        let alt = Channel::from_values("x", 10.0, 0.0, (0..10).map(|i| (i % 2) as f64)).unwrap();
        assert_eq!(decimate_to_1hz(&alt).unwrap().samples()[0].1, 0.5);
        let ramp = Channel::from_values("x", 10.0, 0.0, (0..10).map(f64::from)).unwrap();
        assert_eq!(decimate_to_1hz(&ramp).unwrap().samples()[0].1, 4.5);
        let wrong = Channel::from_values("x", 20.0, 0.0, vec![1.0; 20]).unwrap();
        assert!(matches!(decimate_to_1hz(&wrong), Err(Error::Validation(_))));
    }

    #[test]
    fn channel_grid_checked() {
        assert!(Channel::new("x", 20.0, vec![(0.0, 1.0), (0.05, 1.0), (0.2, 1.0)]).is_err());
        assert!(Channel::new("x", 20.0, vec![(0.0, 1.0), (0.05, 1.0)]).is_ok());
    }

    #[test]
    fn log_bundle_rates_and_refusal() {
        let b = base();
        let ens = ensemble_average(&vec![b; 60]).unwrap();
        let can = Channel::from_values("v", 20.0, 0.0, vec![48.7; 400]).unwrap();
        let gas = Channel::from_values("co", 10.0, 0.0, vec![400.0; 200]).unwrap();
        let chans = [can, gas];
        let bundle = log_operating_point(&chans, 10.0, ens.clone(), Some(12.0), BTreeMap::new()).unwrap();
        assert_eq!(bundle.can[0].len(), 200);
        assert_eq!(bundle.emissions[0].len(), 10);
        assert_eq!(bundle.ensemble.mean.pressure().len(), 2048);
        assert_eq!(bundle.meta["settled_at_s"], "12.00");
        assert!(log_operating_point(&chans, 10.0, ens.clone(), None, BTreeMap::new()).is_err());

        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a"), dir.path().join("b"));
        bundle.write(&a).unwrap();
        log_operating_point(&chans, 10.0, ens, Some(12.0), BTreeMap::new()).unwrap().write(&b).unwrap();
        for f in [CAN_FILE, EMISSIONS_FILE, PRESSURE_MEAN_FILE, PRESSURE_STD_FILE, META_FILE] {
            assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
        }
    }

    proptest! {
        #[test]
        fn decimation_keeps_global_mean(vals in proptest::collection::vec(-100.0f64..100.0, 1..8usize).prop_flat_map(|v| {
            let secs = v.len();
            proptest::collection::vec(-100.0f64..100.0, secs * 10)
        })) {
            let c = Channel::from_values("x", 10.0, 0.0, vals.clone()).unwrap();
            let d = decimate_to_1hz(&c).unwrap();
            prop_assert!((d.mean() - c.mean()).abs() < 1e-9);
        }

        #[test]
        fn periodic_ticks_exact(rpm in 1000.0f64..12000.0) {
            let s = CrankTickStream::periodic(rpm, 0.1).unwrap();
            prop_assert!(((engine_speed_from_ticks(&s, 0.1) - rpm) / rpm).abs() < 1e-6);
        }

        #[test]
        fn ensemble_permutation_invariant(seed in 0u64..1000) {
            let b = base();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut traces: Vec<PressureTrace> = (0..8).map(|_| b.scaled(1.0 + 0.1 * rng.random::<f64>())).collect();
            let a = ensemble_average(&traces).unwrap();
            traces.reverse();
            traces.swap(1, 5);
            prop_assert_eq!(a, ensemble_average(&traces).unwrap());
        }
    }
}
