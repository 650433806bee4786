//! Closed-form energy cost of inference and of one gradient measurement.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Energies per operation in joules.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyParams {
    pub n_modes: usize,
    /// Preparing one input mode.
    pub e_inp: f64,
    /// Measuring one output mode.
    pub e_meas: f64,
    /// Reading one shifter gradient from the analog sweep.
    pub e_grad: f64,
    /// Reading one tap power for digital subtraction.
    pub e_grad_digital: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnergyScheme {
    Inference,
    BackpropAnalog,
    BackpropDigital,
}

impl EnergyParams {
    pub fn validate(&self) -> Result<()> {
        if [self.e_inp, self.e_meas, self.e_grad, self.e_grad_digital]
            .iter()
            .all(|e| e.is_finite() && *e >= 0.0)
        {
            Ok(())
        } else {
            Err(Error::InvalidArgument(
                "energies must be finite values >= 0".into(),
            ))
        }
    }
}

/// Inference: `N (E_inp + E_meas)`.
/// Analog backprop: `N² E_grad + N (3 E_inp + 2 E_meas)`.
/// Digital backprop: `3 N² E_grad,digital + N (3 E_inp + 2 E_meas)`.
pub fn energy_estimate(p: &EnergyParams, scheme: EnergyScheme) -> Result<f64> {
    p.validate()?;
    let n = p.n_modes as f64;
    let io = n * (3.0 * p.e_inp + 2.0 * p.e_meas);
    Ok(match scheme {
        EnergyScheme::Inference => n * (p.e_inp + p.e_meas),
        EnergyScheme::BackpropAnalog => n * n * p.e_grad + io,
        EnergyScheme::BackpropDigital => 3.0 * n * n * p.e_grad_digital + io,
    })
}
