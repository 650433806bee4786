//! Gradients of a whole model, layer by layer.
//!
//! Each layer runs a forward pass, hands its output to the next layer, and
//! once the adjoint of its output is known runs the backward pass and the sum
//! pass(es) to read the shifter gradients. γ gradients are computed on the
//! host from the measured output and its adjoint.

use num_complex::Complex64;
use rand::Rng;

use crate::backprop::gradient::{
    analog_vjp, digital_vjp, AnalogSweep, GradientMethod, GradientRecord,
};
use crate::backprop::passes::Device;
use crate::error::{Error, Result};
use crate::mesh::{propagate, Direction};
use crate::mode::ModeVector;
use crate::training::model::{HeadOutput, PnnModel};
use crate::vector_io::ReadoutConfig;

/// Result of one gradient computation for one example.
#[derive(Clone, Debug, PartialEq)]
pub struct InsituResult {
    pub loss: f64,
    pub probabilities: Vec<f64>,
    /// Final-layer output as seen by the host.
    pub output: ModeVector,
    /// One record per layer.
    pub layers: Vec<GradientRecord>,
    /// Adjoint of the model input.
    pub input_adjoint: ModeVector,
    /// Sum-pass traces per layer; empty unless the analog method ran.
    pub sweeps: Vec<Option<AnalogSweep>>,
}

impl InsituResult {
    /// Gradient laid out like [`PnnModel::params`].
    pub fn to_vec(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(GradientRecord::to_vec)
            .collect()
    }

    /// θ and φ gradients only, layer by layer.
    pub fn shifter_vec(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|r| r.theta.iter().chain(&r.phi).copied())
            .collect()
    }
}

/// One device per layer, each with its own detector and offset draws.
pub fn model_devices(model: &PnnModel, readout: &ReadoutConfig) -> Result<Vec<Device>> {
    (0..model.n_layers())
        .map(|l| Device::new(model.topology().clone(), readout.clone(), l))
        .collect()
}

fn gamma_gradient(y: &ModeVector, y_aj: &ModeVector) -> Vec<f64> {
    y.iter()
        .zip(y_aj.iter())
        .map(|(a, b)| -(a * b).im)
        .collect()
}

struct Recursion<'a, R: Rng + ?Sized> {
    model: &'a PnnModel,
    devices: &'a [Device],
    label: usize,
    method: GradientMethod,
    polarity: f64,
    records: Vec<Option<GradientRecord>>,
    sweeps: Vec<Option<AnalogSweep>>,
    rng: &'a mut R,
}

impl<R: Rng + ?Sized> Recursion<'_, R> {
    /// Processes layer `l` with input `x`; returns the adjoint of `x`, the
    /// head evaluation and the final output.
    fn layer(&mut self, l: usize, x: &ModeVector) -> Result<(ModeVector, HeadOutput, ModeVector)> {
        let device = &self.devices[l];
        let phases = &self.model.layers()[l];
        let fwd = device.mesh_forward(phases, x, self.rng)?;
        let y = fwd.output;
        let (y_aj, head, y_last) = if l + 1 == self.model.n_layers() {
            let head = self.model.head().evaluate(&y, self.label)?;
            (head.adjoint.clone(), head, y.clone())
        } else {
            let next = self.model.nonlinearity().apply(&y);
            let (x_aj_next, head, y_last) = self.layer(l + 1, &next)?;
            (self.model.nonlinearity().vjp(&y, &x_aj_next)?, head, y_last)
        };

        let n_nodes = phases.theta.len();
        let gamma = gamma_gradient(&y, &y_aj);
        let power = fwd.input_power;
        let (x_aj, theta, phi) = match y_aj.normalized() {
            Err(Error::ZeroVector) => (
                ModeVector::zeros(y.len()),
                vec![0.0; n_nodes],
                vec![0.0; n_nodes],
            ),
            Err(e) => return Err(e),
            Ok((_, power_aj)) => {
                let bwd = device.mesh_backward(phases, &y_aj, self.rng)?;
                let x_hat = x.scale(1.0 / power.sqrt());
                let x_aj_hat = bwd.output.scale(1.0 / power_aj.sqrt());
                let (theta, phi) = match self.method {
                    GradientMethod::Analog { samples } => {
                        let (t, p, sweep) = analog_vjp(
                            device, phases, &x_hat, &x_aj_hat, power, power_aj, samples, self.rng,
                        )?;
                        self.sweeps[l] = Some(sweep);
                        (t, p)
                    }
                    _ => digital_vjp(
                        device,
                        phases,
                        &x_hat,
                        &x_aj_hat,
                        (&fwd.theta_powers, &fwd.phi_powers),
                        (&bwd.theta_powers, &bwd.phi_powers),
                        power,
                        power_aj,
                        self.rng,
                    )?,
                };
                (bwd.output, theta, phi)
            }
        };
        self.records[l] = Some(GradientRecord::from_vjp(
            theta,
            phi,
            self.polarity,
            gamma,
            self.method,
        ));
        Ok((x_aj, head, y_last))
    }
}

/// Measures the gradient of the loss at `(x, label)` with respect to every
/// phase of `model`, running all optical passes on `devices`.
pub fn insitu_gradient<R: Rng + ?Sized>(
    model: &PnnModel,
    devices: &[Device],
    x: &ModeVector,
    label: usize,
    method: GradientMethod,
    rng: &mut R,
) -> Result<InsituResult> {
    if method == GradientMethod::Reference {
        return reference_gradient(model, x, label);
    }
    if devices.len() != model.n_layers() {
        return Err(Error::DimensionMismatch {
            expected: model.n_layers(),
            found: devices.len(),
        });
    }
    let polarity = model.topology().theta_polarity()?;
    let mut rec = Recursion {
        model,
        devices,
        label,
        method,
        polarity,
        records: vec![None; model.n_layers()],
        sweeps: vec![None; model.n_layers()],
        rng,
    };
    let (input_adjoint, head, output) = rec.layer(0, x)?;
    Ok(InsituResult {
        loss: head.loss,
        probabilities: head.probabilities,
        output,
        layers: rec
            .records
            .into_iter()
            .map(|r| r.expect("every layer visited"))
            .collect(),
        input_adjoint,
        sweeps: rec.sweeps,
    })
}

/// The same gradient computed from exact fields on the host.
pub fn reference_gradient(model: &PnnModel, x: &ModeVector, label: usize) -> Result<InsituResult> {
    let polarity = model.topology().theta_polarity()?;
    let topology = model.topology();
    let trace = model.forward(x)?;
    let head = model.head().evaluate(trace.output(), label)?;
    let mut y_aj = head.adjoint.clone();
    let mut layers = vec![None; model.n_layers()];
    let mut x_aj = ModeVector::zeros(model.n_modes());
    for l in (0..model.n_layers()).rev() {
        let phases = &model.layers()[l];
        let (_, ft) = propagate(topology, phases, &trace.inputs[l], Direction::Forward)?;
        let (back, bt) = propagate(topology, phases, &y_aj, Direction::Backward)?;
        let vjp = |a: &[Complex64], b: &[Complex64]| -> Vec<f64> {
            a.iter().zip(b).map(|(p, q)| -(p * q).im).collect()
        };
        layers[l] = Some(GradientRecord::from_vjp(
            vjp(&ft.theta_fields, &bt.theta_fields),
            vjp(&ft.phi_fields, &bt.phi_fields),
            polarity,
            gamma_gradient(&trace.outputs[l], &y_aj),
            GradientMethod::Reference,
        ));
        x_aj = back;
        if l > 0 {
            y_aj = model.nonlinearity().vjp(&trace.outputs[l - 1], &x_aj)?;
        }
    }
    Ok(InsituResult {
        loss: head.loss,
        probabilities: head.probabilities,
        output: trace.output().clone(),
        layers: layers
            .into_iter()
            .map(|r| r.expect("every layer visited"))
            .collect(),
        input_adjoint: x_aj,
        sweeps: vec![None; model.n_layers()],
    })
}

/// Inference through the simulated hardware; returns the head evaluation.
pub fn device_evaluate<R: Rng + ?Sized>(
    model: &PnnModel,
    devices: &[Device],
    x: &ModeVector,
    label: usize,
    rng: &mut R,
) -> Result<HeadOutput> {
    let mut current = x.clone();
    for (l, (device, phases)) in devices.iter().zip(model.layers()).enumerate() {
        let y = device.mesh_forward(phases, &current, rng)?.output;
        current = if l + 1 < model.n_layers() {
            model.nonlinearity().apply(&y)
        } else {
            y
        };
    }
    model.head().evaluate(&current, label)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{MeshPhases, MeshTopology};
    use crate::training::model::Head;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn input(rng: &mut ChaCha8Rng) -> ModeVector {
        let (x1, x2): (f64, f64) = (rng.random_range(-0.6..0.6), rng.random_range(-0.6..0.6));
        let p = ((1.0 - x1 * x1 - x2 * x2) / 2.0).sqrt();
        ModeVector::from_real(&[x1, x2, p, p])
    }

    /// Central differences of the end-to-end loss over every θ and φ.
    fn finite_differences(
        model: &PnnModel,
        x: &ModeVector,
        label: usize,
        h: f64,
    ) -> Vec<Vec<(f64, f64)>> {
        let mut out = Vec::new();
        for l in 0..model.n_layers() {
            let n = model.layers()[l].theta.len();
            let mut layer = Vec::new();
            for k in 0..n {
                let mut pair = [0.0; 2];
                for (slot, which) in [0usize, 1].into_iter().enumerate() {
                    let shifted = |delta: f64| {
                        let mut layers = model.layers().to_vec();
                        let p: &mut MeshPhases = &mut layers[l];
                        if which == 0 {
                            p.theta[k] += delta;
                        } else {
                            p.phi[k] += delta;
                        }
                        let m = PnnModel::new(
                            model.topology().clone(),
                            layers,
                            model.nonlinearity(),
                            model.head().clone(),
                        )
                        .unwrap();
                        m.loss(x, label).unwrap()
                    };
                    pair[slot] = (shifted(h) - shifted(-h)) / (2.0 * h);
                }
                layer.push((pair[0], pair[1]));
            }
            out.push(layer);
        }
        out
    }

    #[test]
    fn ideal_insitu_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        let model = PnnModel::random(4, 3, Head::softmax2(), &mut rng).unwrap();
        let devices = model_devices(&model, &ReadoutConfig::ideal()).unwrap();
        for trial in 0..3 {
            let x = input(&mut rng);
            let label = trial % 2;
            let g = insitu_gradient(
                &model,
                &devices,
                &x,
                label,
                GradientMethod::Digital,
                &mut rng,
            )
            .unwrap();
            let fd = finite_differences(&model, &x, label, 1e-5);
            for (l, layer) in fd.iter().enumerate() {
                for (k, &(dt, dp)) in layer.iter().enumerate() {
                    let scale = dt.abs().max(dp.abs()).max(1e-6);
                    assert!(
                        (g.layers[l].theta[k] - dt).abs() < 1e-5 * scale + 1e-9,
                        "θ l={l} k={k}"
                    );
                    assert!(
                        (g.layers[l].phi[k] - dp).abs() < 1e-5 * scale + 1e-9,
                        "φ l={l} k={k}"
                    );
                }
            }
            let reference = reference_gradient(&model, &x, label).unwrap();
            let diff = g
                .to_vec()
                .iter()
                .zip(reference.to_vec())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(diff < 1e-10);
            assert!((g.loss - model.loss(&x, label).unwrap()).abs() < 1e-10);
        }
    }

    #[test]
    fn gamma_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(62);
        let model = PnnModel::random(4, 2, Head::softmax2(), &mut rng).unwrap();
        let x = input(&mut rng);
        let g = reference_gradient(&model, &x, 1).unwrap();
        let h = 1e-6;
        for l in 0..2 {
            for k in 0..4 {
                let shifted = |d: f64| {
                    let mut layers = model.layers().to_vec();
                    layers[l].gamma[k] += d;
                    PnnModel::new(
                        model.topology().clone(),
                        layers,
                        model.nonlinearity(),
                        model.head().clone(),
                    )
                    .unwrap()
                    .loss(&x, 1)
                    .unwrap()
                };
                let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
                assert!((fd - g.layers[l].gamma[k]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn analog_equals_digital_for_a_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(63);
        let model = PnnModel::random(4, 2, Head::softmax2(), &mut rng).unwrap();
        let devices = model_devices(&model, &ReadoutConfig::ideal()).unwrap();
        let x = input(&mut rng);
        let d =
            insitu_gradient(&model, &devices, &x, 0, GradientMethod::Digital, &mut rng).unwrap();
        let a =
            insitu_gradient(&model, &devices, &x, 0, GradientMethod::analog(), &mut rng).unwrap();
        for (p, q) in d.to_vec().iter().zip(a.to_vec()) {
            assert!((p - q).abs() < 1e-9);
        }
    }

    #[test]
    fn fidelity_gradient_vanishes_at_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(64);
        let topology = MeshTopology::triangular(4);
        let target = crate::mesh::dft_matrix(4);
        let phases = crate::mesh::phases_from_unitary(&target).unwrap();
        let model = PnnModel::new(
            topology,
            vec![phases],
            Default::default(),
            Head::Fidelity { row: 2 },
        )
        .unwrap();
        let devices = model_devices(&model, &ReadoutConfig::ideal()).unwrap();
        let row: ModeVector = (0..4).map(|c| target[(2, c)].conj()).collect();
        let g =
            insitu_gradient(&model, &devices, &row, 0, GradientMethod::Digital, &mut rng).unwrap();
        assert!(g.loss.abs() < 1e-12);
        assert!(g.to_vec().iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn fidelity_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(65);
        let topology = MeshTopology::triangular(4);
        let target = crate::mesh::haar_unitary(4, &mut rng);
        let mut phases = crate::mesh::phases_from_unitary(&target).unwrap();
        for t in phases.theta.iter_mut() {
            *t = (*t + rng.random_range(-0.2..0.2)).clamp(0.05, PI - 0.05);
        }
        let model = PnnModel::new(
            topology,
            vec![phases],
            Default::default(),
            Head::Fidelity { row: 1 },
        )
        .unwrap();
        let devices = model_devices(&model, &ReadoutConfig::ideal()).unwrap();
        let row: ModeVector = (0..4).map(|c| target[(1, c)].conj()).collect();
        let g =
            insitu_gradient(&model, &devices, &row, 0, GradientMethod::Digital, &mut rng).unwrap();
        let fd = finite_differences(&model, &row, 0, 1e-5);
        for (k, &(dt, dp)) in fd[0].iter().enumerate() {
            assert!((g.layers[0].theta[k] - dt).abs() < 1e-8);
            assert!((g.layers[0].phi[k] - dp).abs() < 1e-8);
        }
    }

    #[test]
    fn gradients_scale_with_input_power() {
        // single layer softmax: y_aj ∝ s y and x_η ∝ s, so ∂L/∂η at s x is
        // the oracle gradient at s x; compare against the reference there
        let mut rng = ChaCha8Rng::seed_from_u64(66);
        let model = PnnModel::random(4, 1, Head::softmax2(), &mut rng).unwrap();
        let devices = model_devices(&model, &ReadoutConfig::ideal()).unwrap();
        let x = input(&mut rng);
        for s in [0.5, 2.0] {
            let xs = x.scale(s);
            let g = insitu_gradient(&model, &devices, &xs, 0, GradientMethod::Digital, &mut rng)
                .unwrap();
            let r = reference_gradient(&model, &xs, 0).unwrap();
            for (a, b) in g.to_vec().iter().zip(r.to_vec()) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn standard_variant_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(67);
        let topology = MeshTopology::triangular_with(4, crate::mesh::MziVariant::Standard);
        let phases = MeshPhases::random(&topology, &mut rng);
        let model =
            PnnModel::new(topology, vec![phases], Default::default(), Head::softmax2()).unwrap();
        assert_eq!(
            reference_gradient(&model, &input(&mut rng), 0).unwrap_err(),
            Error::UnsupportedVariant
        );
    }
}
