//! Slider-crank geometry and single-zone pressure synthesis over one 720° cycle.

use std::f64::consts::PI;

pub const SAMPLES_PER_CYCLE: usize = 2048;
pub const DEG_PER_SAMPLE: f64 = 720.0 / SAMPLES_PER_CYCLE as f64;
const RK_SUBSTEPS: usize = 4;
/// Closed part of the cycle: intake valve closing to exhaust valve opening, crank deg.
const IVC: f64 = -180.0;
const EVO: f64 = 180.0;

pub fn crank_angle(i: usize) -> f64 {
    -360.0 + i as f64 * DEG_PER_SAMPLE
}

fn index_of(theta: f64) -> usize {
    ((theta + 360.0) / DEG_PER_SAMPLE).round() as usize
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Geometry {
    pub bore: f64,
    pub stroke: f64,
    pub conrod_length: f64,
    pub compression_ratio: f64,
}

impl Geometry {
    pub fn swept_volume(&self) -> f64 {
        PI / 4.0 * self.bore * self.bore * self.stroke
    }

    pub fn clearance_volume(&self) -> f64 {
        self.swept_volume() / (self.compression_ratio - 1.0)
    }

    /// Cylinder volume at crank angle `theta` (deg, 0 = TDC), m³.
    pub fn volume(&self, theta: f64) -> f64 {
        let t = theta.to_radians();
        let r = self.stroke / 2.0;
        let l = self.conrod_length;
        let s = r * t.sin();
        let x = r * (1.0 - t.cos()) + l - (l * l - s * s).sqrt();
        self.clearance_volume() + PI / 4.0 * self.bore * self.bore * x
    }

    /// dV/dθ in m³ per crank degree.
    pub fn dvolume(&self, theta: f64) -> f64 {
        let t = theta.to_radians();
        let r = self.stroke / 2.0;
        let l = self.conrod_length;
        let (sn, cs) = t.sin_cos();
        let dx = r * sn + r * r * sn * cs / (l * l - (r * sn).powi(2)).sqrt();
        PI / 4.0 * self.bore * self.bore * dx * PI / 180.0
    }
}

/// Burn-law and gas-exchange shape constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CycleShape {
    pub gamma: f64,
    pub wiebe_a: f64,
    pub wiebe_m: f64,
    /// Crank degrees after -360 over which intake pressure settles to IVC pressure.
    pub intake_blend: f64,
    /// Exponential decay constant of the blowdown after EVO, crank degrees.
    pub blowdown: f64,
}

/// Cumulative Wiebe burn fraction.
pub fn wiebe_fraction(theta: f64, ign: f64, duration: f64, a: f64, m: f64) -> f64 {
    let t = (theta - ign) / duration;
    if t <= 0.0 {
        0.0
    } else {
        1.0 - (-a * t.powf(m + 1.0)).exp()
    }
}

fn wiebe_rate(theta: f64, ign: f64, duration: f64, a: f64, m: f64) -> f64 {
    let t = (theta - ign) / duration;
    if t <= 0.0 {
        0.0
    } else {
        a * (m + 1.0) * t.powf(m) * (-a * t.powf(m + 1.0)).exp() / duration
    }
}

/// Inputs of one synthetic cycle; pressures in Pa, heat in J, angles in crank deg.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CycleInputs {
    pub p_ivc: f64,
    pub heat: f64,
    /// Spark angle, positive after TDC.
    pub ignition: f64,
    pub duration: f64,
    pub p_exhaust: f64,
}

/// Precomputed volume terms on the integration grid.
#[derive(Debug, Clone)]
pub struct CycleKernel {
    geometry: Geometry,
    shape: CycleShape,
    /// Volume at every output sample.
    volume: Vec<f64>,
    /// (γ-1)/V and γ·dV/V at every RK half-substep between IVC and EVO.
    heat_gain: Vec<f64>,
    compress: Vec<f64>,
    i_ivc: usize,
    i_evo: usize,
}

impl CycleKernel {
    pub fn new(geometry: Geometry, shape: CycleShape) -> Self {
        let volume = (0..SAMPLES_PER_CYCLE).map(|i| geometry.volume(crank_angle(i))).collect();
        let i_ivc = index_of(IVC);
        let i_evo = index_of(EVO);
        let half = DEG_PER_SAMPLE / RK_SUBSTEPS as f64 / 2.0;
        let n = (i_evo - i_ivc) * RK_SUBSTEPS * 2 + 1;
        let (heat_gain, compress) = (0..n)
            .map(|j| {
                let th = IVC + j as f64 * half;
                let v = geometry.volume(th);
                ((shape.gamma - 1.0) / v, shape.gamma * geometry.dvolume(th) / v)
            })
            .unzip();
        Self { geometry, shape, volume, heat_gain, compress, i_ivc, i_evo }
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn volume_at(&self, i: usize) -> f64 {
        self.volume[i]
    }

    /// Cylinder pressure in Pa at the 2048 cycle samples.
    pub fn pressure(&self, inp: &CycleInputs) -> Vec<f64> {
        let s = &self.shape;
        let mut p = vec![0.0; SAMPLES_PER_CYCLE];
        let half = DEG_PER_SAMPLE / RK_SUBSTEPS as f64 / 2.0;
        let rate: Vec<f64> = if inp.heat != 0.0 {
            (0..self.heat_gain.len())
                .map(|j| inp.heat * wiebe_rate(IVC + j as f64 * half, inp.ignition, inp.duration, s.wiebe_a, s.wiebe_m))
                .collect()
        } else {
            vec![0.0; self.heat_gain.len()]
        };
        let f = |j: usize, pp: f64| self.heat_gain[j] * rate[j] - self.compress[j] * pp;
        let h = 2.0 * half;
        let mut pp = inp.p_ivc;
        p[self.i_ivc] = pp;
        let mut j = 0;
        for i in self.i_ivc..self.i_evo {
            for _ in 0..RK_SUBSTEPS {
                let k1 = f(j, pp);
                let k2 = f(j + 1, pp + 0.5 * h * k1);
                let k3 = f(j + 1, pp + 0.5 * h * k2);
                let k4 = f(j + 2, pp + h * k3);
                pp += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
                j += 2;
            }
            p[i + 1] = pp;
        }
        let p_evo = pp;
        for (i, slot) in p.iter_mut().enumerate() {
            let th = crank_angle(i);
            if i < self.i_ivc {
                let w = ((th + 360.0) / s.intake_blend).min(1.0);
                *slot = inp.p_exhaust * (1.0 - w) + inp.p_ivc * w;
            } else if i > self.i_evo {
                *slot = inp.p_exhaust + (p_evo - inp.p_exhaust) * (-(th - EVO) / s.blowdown).exp();
            }
        }
        p
    }

    /// ∮p dV over the wrapped cycle divided by `displacement`; same unit as `p`.
    pub fn mean_effective_pressure(&self, p: &[f64], displacement: f64) -> f64 {
        let n = p.len();
        let work: f64 = (0..n)
            .map(|i| {
                let k = (i + 1) % n;
                0.5 * (p[i] + p[k]) * (self.volume[k] - self.volume[i])
            })
            .sum();
        work / displacement
    }
}
