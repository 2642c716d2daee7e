//! Simulation core for comparing an ignition-retard speed restriction against a
//! throttle-based velocity controller on a 50 cc scooter.

pub mod config;
pub mod control;
pub mod daq;
pub mod emissions;
pub mod error;
pub mod harness;
pub mod interp;
pub mod powertrain;
pub mod vehicle;

pub use config::{Config, SweepConfig};
pub use control::{PiController, TbwActuator};
pub use daq::{Channel, CrankTickStream, LogBundle};
pub use emissions::{EfmModel, EmissionRecord, GasComposition};
pub use error::{Error, Result};
pub use powertrain::{EngineCalibration, EngineState, PressureTrace, Strategy};
pub use vehicle::{PathSample, PathTimeSeries, ResistanceCurve, VehicleParams};
