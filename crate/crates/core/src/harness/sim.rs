//! Closed-loop vehicle simulation shared by the road and dynamometer experiments.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::ControllerConfig;
use crate::control::{actuator_step, pi_step, PiController, TbwActuator};
use crate::error::Result;
use crate::powertrain::{restriction_ignition_offset, EngineState, Powertrain, RetardLaw, Strategy};
use crate::vehicle::{grade_force, resistance_force, ResistanceCurve, VehicleParams};

const KMH: f64 = 3.6;

/// Where the resisting force comes from. Both evaluate the same polynomial
/// plus grade term; the roller is modelled with no inertia mismatch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoadModel {
    Road,
    Dyno,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Plant {
    pub vehicle: VehicleParams,
    pub curve: ResistanceCurve,
    pub load: LoadModel,
    pub grade: f64,
}

impl Plant {
    /// Force opposing motion at `v` km/h, N.
    pub fn load_force(&self, v: f64) -> f64 {
        let v = v.max(0.0);
        match self.load {
            LoadModel::Road => {
                resistance_force(&self.curve, v).expect("v clamped to >= 0") + grade_force(&self.vehicle, self.grade)
            }
            LoadModel::Dyno => {
                // roller controller: coast-down polynomial set point plus simulated slope
                let (a, c) = (self.curve.quad_coeff, self.curve.const_coeff);
                let slope = self.vehicle.total_mass() * crate::vehicle::G * self.grade.atan().sin();
                c + a * v * v + slope
            }
        }
    }

    pub fn effective_mass(&self) -> f64 {
        self.vehicle.effective_mass()
    }
}

/// Restriction law with grade anchors placed on the surplus axis at the reference speed.
pub fn restriction_law(powertrain: &Powertrain, vehicle: &VehicleParams, curve: &ResistanceCurve) -> Result<RetardLaw> {
    let r = &powertrain.calibration().restriction;
    let v = r.reference_speed;
    let available = powertrain.force(100.0, v, 0.0);
    RetardLaw::calibrate(r, |grade| {
        let plant = Plant { vehicle: vehicle.clone(), curve: *curve, load: LoadModel::Road, grade };
        (available - plant.load_force(v)) / available
    })
}

/// One 20 Hz telemetry sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TelemetryRow {
    pub t: f64,
    pub setpoint: f64,
    pub v: f64,
    pub command: f64,
    pub throttle_actual: f64,
    pub throttle_reported: f64,
    pub ignition_offset: f64,
    pub state: EngineState,
    pub error: f64,
    pub integrator: f64,
    pub force: f64,
    pub load: f64,
}

#[derive(Debug)]
pub struct LoopSim<'a> {
    powertrain: &'a Powertrain,
    law: &'a RetardLaw,
    plant: Plant,
    strategy: Strategy,
    controller: PiController,
    actuator: TbwActuator,
    rate: f64,
    substeps: usize,
    rng: ChaCha8Rng,
    v: f64,
    ticks: u64,
    offset: f64,
    demand: f64,
}

impl<'a> LoopSim<'a> {
    /// Starts at the setpoint with an empty integrator and a closed throttle.
    pub fn new(
        powertrain: &'a Powertrain,
        law: &'a RetardLaw,
        controller: &ControllerConfig,
        strategy: Strategy,
        plant: Plant,
        setpoint: f64,
        seed: u64,
    ) -> Result<Self> {
        let mut pi = controller.controller()?;
        pi.setpoint = setpoint;
        let mut sim = Self {
            powertrain,
            law,
            plant,
            strategy,
            controller: pi,
            actuator: controller.actuator()?,
            rate: controller.rate,
            substeps: controller.physics_substeps,
            rng: ChaCha8Rng::seed_from_u64(seed),
            v: setpoint,
            ticks: 0,
            offset: 0.0,
            demand: 0.0,
        };
        sim.demand = sim.load_demand();
        Ok(sim)
    }

    pub fn time(&self) -> f64 {
        self.ticks as f64 / self.rate
    }

    pub fn velocity(&self) -> f64 {
        self.v
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    /// Load demand as the stock unit sees it: surplus at the reference speed under
    /// the current slope. Reading it at the actual speed makes the retard back off
    /// as the vehicle speeds up, which runs away.
    fn load_demand(&self) -> f64 {
        let v = self.powertrain.calibration().restriction.reference_speed;
        let available = self.powertrain.force(100.0, v, 0.0);
        (available - self.plant.load_force(v)) / available.abs().max(1e-9)
    }

    fn restriction_offset(&self, v: f64) -> f64 {
        if self.strategy == Strategy::Vc {
            return 0.0;
        }
        restriction_ignition_offset(self.law, self.strategy, v, self.law.v_limit(), self.demand)
    }

    /// Advances one control period and returns the sample at its end.
    pub fn advance(&mut self) -> Result<TelemetryRow> {
        let dt = 1.0 / self.rate;
        let command = match self.strategy {
            Strategy::Vc => pi_step(&mut self.controller, self.v, dt),
            Strategy::Or => 100.0,
        };
        let h = dt / self.substeps as f64;
        let m = self.plant.effective_mass();
        for _ in 0..self.substeps {
            actuator_step(&mut self.actuator, command, h)?;
            self.offset = self.restriction_offset(self.v);
            let f = self.powertrain.force(self.actuator.position, self.v, self.offset);
            let a = (f - self.plant.load_force(self.v)) / m;
            self.v = (self.v + a * h * KMH).max(0.0);
        }
        self.ticks += 1;
        let op = self.powertrain.operating_point(self.actuator.position, self.v, self.offset);
        Ok(TelemetryRow {
            t: self.time(),
            setpoint: self.controller.setpoint,
            v: self.v,
            command,
            throttle_actual: self.actuator.position,
            throttle_reported: self.actuator.reported_position(&mut self.rng),
            ignition_offset: self.offset,
            state: op.state,
            error: self.controller.setpoint - self.v,
            integrator: self.controller.integrator,
            force: op.force,
            load: self.plant.load_force(self.v),
        })
    }

    /// Runs for `seconds` and returns every sample.
    pub fn run(&mut self, seconds: f64) -> Result<Vec<TelemetryRow>> {
        let n = (seconds * self.rate).round() as usize;
        (0..n).map(|_| self.advance()).collect()
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}
