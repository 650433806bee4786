//! Optical passes, adjoint seeds and gradient readout.

pub mod check;
pub mod gradient;
pub mod insitu;
pub mod passes;
pub mod vjp;

pub use check::{finite_difference_gradient, max_relative_error};
pub use gradient::{
    analog_vjp, digital_gradient, digital_vjp, AnalogSweep, GradientMethod, GradientRecord,
};
pub use insitu::{
    device_evaluate, insitu_gradient, model_devices, reference_gradient, InsituResult,
};
pub use passes::{Device, PassResult, TapReadings};
pub use vjp::{abs_vjp, fidelity_loss_adjoint, output_vjp, softmax, softmax_groups_vjp};
