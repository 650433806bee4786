//! Imperfections of the physical chip: shifter calibration, I/O errors and detector noise.

pub mod calibration;
pub mod noise;

pub use calibration::{CalibrationModel, CalibrationSample};
pub use noise::{HardwareErrorConfig, PowerMonitor};
