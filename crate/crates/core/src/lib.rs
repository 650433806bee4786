//! Simulator for programmable MZI meshes trained with gradients measured in situ.
//!
//! Layers are triangular meshes of Mach-Zehnder interferometers. Gradients of
//! every phase shifter are read from tap powers of three optical passes
//! (forward, adjoint, sum) or from a phase-swept sum pass, optionally through
//! a model of detector noise, field preparation errors and phase readout.

pub mod backprop;
pub mod energy;
pub mod error;
pub mod hardware;
pub mod mesh;
pub mod mode;
pub mod training;
pub mod vector_io;

pub use backprop::{
    finite_difference_gradient, insitu_gradient, max_relative_error, model_devices,
    reference_gradient, Device, GradientMethod, GradientRecord, InsituResult,
};
pub use energy::{energy_estimate, EnergyParams, EnergyScheme};
pub use error::{Error, Result};
pub use hardware::{CalibrationModel, CalibrationSample, HardwareErrorConfig, PowerMonitor};
pub use mesh::{
    build_unitary, decompose, dft_matrix, haar_unitary, phases_from_unitary, propagate, Direction,
    MeshPhases, MeshTopology, MziVariant,
};
pub use mode::ModeVector;
pub use training::{
    make_dataset, train, AdamConfig, Dataset, DatasetKind, Head, PnnModel, TrainConfig, TrainData,
    TrainLog,
};
pub use vector_io::{ReadoutConfig, ReadoutMode};
