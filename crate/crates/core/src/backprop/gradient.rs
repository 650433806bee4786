//! Extraction of shifter gradients from tap powers.
//!
//! For a shifter η with forward field `x_η` and adjoint field `x_aj,η`, the
//! optical vector-Jacobian product is `-Im(x_η x_aj,η)`. The sum pass sends
//! `x - i x_aj*`, whose tap power is `p + p_aj - 2 Im(x_η x_aj,η)`, so the
//! product follows from three power readings.

use std::f64::consts::TAU;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::backprop::passes::Device;
use crate::error::{Error, Result};
use crate::mesh::MeshPhases;
use crate::mode::ModeVector;

/// How the shifter gradients are read from the hardware.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum GradientMethod {
    /// Three passes and a digital subtraction of tap powers.
    Digital,
    /// Phase-swept sum pass; the gradient is the swept power's AC component.
    Analog { samples: usize },
    /// Exact fields computed on the host, no optical measurement.
    Reference,
}

impl GradientMethod {
    pub const DEFAULT_ANALOG_SAMPLES: usize = 64;

    pub fn analog() -> Self {
        GradientMethod::Analog {
            samples: Self::DEFAULT_ANALOG_SAMPLES,
        }
    }
}

/// `∂L/∂η` for every shifter of one layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientRecord {
    pub theta: Vec<f64>,
    pub phi: Vec<f64>,
    pub gamma: Vec<f64>,
    pub method: GradientMethod,
}

impl GradientRecord {
    pub fn zeros(n_nodes: usize, n_gamma: usize, method: GradientMethod) -> Self {
        Self {
            theta: vec![0.0; n_nodes],
            phi: vec![0.0; n_nodes],
            gamma: vec![0.0; n_gamma],
            method,
        }
    }

    /// Combines raw optical products `-Im(x_η x_aj,η)` with the shifter
    /// polarity: a θ shifter that applies `e^{-iθ}` (polarity -1) flips the sign.
    pub fn from_vjp(
        theta_vjp: Vec<f64>,
        phi_vjp: Vec<f64>,
        theta_polarity: f64,
        gamma: Vec<f64>,
        method: GradientMethod,
    ) -> Self {
        Self {
            theta: theta_vjp.into_iter().map(|g| g * theta_polarity).collect(),
            phi: phi_vjp,
            gamma,
            method,
        }
    }

    pub fn len(&self) -> usize {
        self.theta.len() + self.phi.len() + self.gamma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat `[θ…, φ…, γ…]` layout shared with [`MeshPhases::to_vec`].
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.len());
        v.extend_from_slice(&self.theta);
        v.extend_from_slice(&self.phi);
        v.extend_from_slice(&self.gamma);
        v
    }
}

/// `(P_sum p_sum - p - p_aj) √(P P_aj) / 2` per shifter, i.e. `-Im(x_η x_aj,η)`
/// for the unnormalized fields. `p_sum` is read on the unit-normalized sum vector.
pub fn digital_gradient(
    p_sum: &[f64],
    p: &[f64],
    p_aj: &[f64],
    power: f64,
    power_aj: f64,
    power_sum: f64,
) -> Result<Vec<f64>> {
    if p.len() != p_sum.len() || p_aj.len() != p_sum.len() {
        return Err(Error::DimensionMismatch {
            expected: p_sum.len(),
            found: if p.len() != p_sum.len() {
                p.len()
            } else {
                p_aj.len()
            },
        });
    }
    let scale = (power * power_aj).sqrt() / 2.0;
    Ok(p_sum
        .iter()
        .zip(p)
        .zip(p_aj)
        .map(|((&s, &a), &b)| (power_sum * s - a - b) * scale)
        .collect())
}

/// `x - i x_aj*` for unit vectors.
pub fn sum_vector(x_hat: &ModeVector, x_aj_hat: &ModeVector) -> ModeVector {
    let i = Complex64::new(0.0, 1.0);
    x_hat
        .iter()
        .zip(x_aj_hat.iter())
        .map(|(a, b)| a - i * b.conj())
        .collect()
}

/// Runs the digital sum pass and returns the raw products for θ and φ.
#[allow(clippy::too_many_arguments)]
pub fn digital_vjp<R: Rng + ?Sized>(
    device: &Device,
    phases: &MeshPhases,
    x_hat: &ModeVector,
    x_aj_hat: &ModeVector,
    forward_powers: (&[f64], &[f64]),
    adjoint_powers: (&[f64], &[f64]),
    power: f64,
    power_aj: f64,
    rng: &mut R,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let s = sum_vector(x_hat, x_aj_hat);
    let n_nodes = phases.theta.len();
    let (theta_sum, phi_sum, power_sum) = match s.normalized() {
        Ok((unit, p_sum)) => {
            let r = device.tap_pass(phases, &unit, rng)?;
            (r.theta_powers, r.phi_powers, p_sum)
        }
        Err(Error::ZeroVector) => (vec![0.0; n_nodes], vec![0.0; n_nodes], 0.0),
        Err(e) => return Err(e),
    };
    let theta = digital_gradient(
        &theta_sum,
        forward_powers.0,
        adjoint_powers.0,
        power,
        power_aj,
        power_sum,
    )?;
    let phi = digital_gradient(
        &phi_sum,
        forward_powers.1,
        adjoint_powers.1,
        power,
        power_aj,
        power_sum,
    )?;
    Ok((theta, phi))
}

/// Sum-pass tap powers sampled over the adjoint phase ζ.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalogSweep {
    pub zeta: Vec<f64>,
    /// `theta_traces[η][k]`: power at θ tap η for `zeta[k]`.
    pub theta_traces: Vec<Vec<f64>>,
    pub phi_traces: Vec<Vec<f64>>,
}

/// Least-squares `offset + a sin ζ + b cos ζ` on uniformly spaced samples
/// `ζ_k = 2πk/K`, `K ≥ 3`, where the three basis functions are orthogonal.
pub fn fit_first_harmonic(trace: &[f64]) -> (f64, f64, f64) {
    let k = trace.len() as f64;
    let mut offset = 0.0;
    let mut a = 0.0;
    let mut b = 0.0;
    for (i, &p) in trace.iter().enumerate() {
        let z = TAU * i as f64 / k;
        offset += p;
        a += p * z.sin();
        b += p * z.cos();
    }
    (offset / k, 2.0 * a / k, 2.0 * b / k)
}

/// Largest deviation of a trace from its fitted first harmonic.
pub fn harmonic_residual(trace: &[f64]) -> f64 {
    let (c, a, b) = fit_first_harmonic(trace);
    let k = trace.len() as f64;
    trace
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let z = TAU * i as f64 / k;
            (p - c - a * z.sin() - b * z.cos()).abs()
        })
        .fold(0.0, f64::max)
}

/// Sweeps ζ over `samples` points, sending `(x - i x_aj* e^{iζ}) / √2`, and
/// reads each shifter's gradient from the AC part of its trace at ζ = 0.
///
/// The trace is `(p + p_aj)/2 - Im(w) cos ζ + Re(w) sin ζ` with
/// `w = x_η x_aj,η`; undoing the ½ power loss of the combiner gives
/// `d_η(0) = -2 Im(w)` and the gradient is `d_η(0) / 2`.
#[allow(clippy::too_many_arguments)]
pub fn analog_vjp<R: Rng + ?Sized>(
    device: &Device,
    phases: &MeshPhases,
    x_hat: &ModeVector,
    x_aj_hat: &ModeVector,
    power: f64,
    power_aj: f64,
    samples: usize,
    rng: &mut R,
) -> Result<(Vec<f64>, Vec<f64>, AnalogSweep)> {
    if samples < 3 {
        return Err(Error::InvalidArgument(
            "an analog sweep needs at least 3 samples".into(),
        ));
    }
    let n_nodes = phases.theta.len();
    let zeta: Vec<f64> = (0..samples)
        .map(|k| TAU * k as f64 / samples as f64)
        .collect();
    let mut theta_traces = vec![Vec::with_capacity(samples); n_nodes];
    let mut phi_traces = vec![Vec::with_capacity(samples); n_nodes];
    let i = Complex64::new(0.0, 1.0);
    let half = std::f64::consts::FRAC_1_SQRT_2;
    for &z in &zeta {
        let rot = Complex64::from_polar(1.0, z);
        let field: ModeVector = x_hat
            .iter()
            .zip(x_aj_hat.iter())
            .map(|(a, b)| (a - i * b.conj() * rot) * half)
            .collect();
        let r = device.tap_pass(phases, &field, rng)?;
        for k in 0..n_nodes {
            theta_traces[k].push(r.theta_powers[k]);
            phi_traces[k].push(r.phi_powers[k]);
        }
    }
    let scale = (power * power_aj).sqrt();
    let extract = |traces: &[Vec<f64>]| -> Vec<f64> {
        traces
            .iter()
            .map(|t| {
                let (_, _, b) = fit_first_harmonic(t);
                let d0 = 2.0 * b;
                d0 / 2.0 * scale
            })
            .collect()
    };
    let theta = extract(&theta_traces);
    let phi = extract(&phi_traces);
    Ok((
        theta,
        phi,
        AnalogSweep {
            zeta,
            theta_traces,
            phi_traces,
        },
    ))
}
