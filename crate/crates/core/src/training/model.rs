//! Hybrid photonic network: mesh layers separated by a digital nonlinearity.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::backprop::vjp::{abs_vjp, softmax_groups_vjp};
use crate::error::{Error, Result};
use crate::mesh::{build_unitary, propagate, Direction, MeshPhases, MeshTopology};
use crate::mode::ModeVector;
use nalgebra::DMatrix;
use num_complex::Complex64;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Nonlinearity {
    /// Elementwise `|y|`.
    #[default]
    Abs,
}

impl Nonlinearity {
    pub fn apply(self, y: &ModeVector) -> ModeVector {
        match self {
            Nonlinearity::Abs => y.iter().map(|z| Complex64::new(z.norm(), 0.0)).collect(),
        }
    }

    pub fn vjp(self, y: &ModeVector, x_aj_next: &ModeVector) -> Result<ModeVector> {
        match self {
            Nonlinearity::Abs => abs_vjp(y, x_aj_next),
        }
    }
}

/// Loss applied to the output of the last layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Head {
    /// Softmax cross entropy over the summed powers of each output group.
    Softmax { groups: Vec<Vec<usize>>, scale: f64 },
    /// `1 - |y_row|²`; the caller drives the model with the conjugate target row.
    Fidelity { row: usize },
}

/// Loss, class probabilities and adjoint seed for one output.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadOutput {
    pub loss: f64,
    pub probabilities: Vec<f64>,
    pub adjoint: ModeVector,
}

impl HeadOutput {
    /// Index of the most probable class.
    pub fn predicted(&self) -> usize {
        self.probabilities
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &p)| {
                if p > best.1 {
                    (i, p)
                } else {
                    best
                }
            })
            .0
    }
}

impl Head {
    /// Two classes read from output groups `{0, 1}` and `{2, 3}`.
    pub fn softmax2() -> Self {
        Head::Softmax {
            groups: vec![vec![0, 1], vec![2, 3]],
            scale: 1.0,
        }
    }

    /// One class per output mode `0..n_classes`.
    pub fn per_mode(n_classes: usize, scale: f64) -> Self {
        Head::Softmax {
            groups: (0..n_classes).map(|i| vec![i]).collect(),
            scale,
        }
    }

    pub fn n_classes(&self) -> usize {
        match self {
            Head::Softmax { groups, .. } => groups.len(),
            Head::Fidelity { .. } => 0,
        }
    }

    fn validate(&self, n_modes: usize) -> Result<()> {
        match self {
            Head::Softmax { groups, scale } => {
                if groups.is_empty() || groups.iter().flatten().any(|&i| i >= n_modes) {
                    return Err(Error::InvalidArgument(
                        "softmax groups must index output modes".into(),
                    ));
                }
                if !(scale.is_finite() && *scale > 0.0) {
                    return Err(Error::InvalidArgument("softmax scale must be > 0".into()));
                }
            }
            Head::Fidelity { row } => {
                if *row >= n_modes {
                    return Err(Error::InvalidArgument(format!("row {row} out of range")));
                }
            }
        }
        Ok(())
    }

    pub fn evaluate(&self, y: &ModeVector, label: usize) -> Result<HeadOutput> {
        match self {
            Head::Softmax { groups, scale } => {
                let (loss, probabilities, adjoint) = softmax_groups_vjp(y, groups, *scale, label)?;
                Ok(HeadOutput {
                    loss,
                    probabilities,
                    adjoint,
                })
            }
            Head::Fidelity { row } => {
                let ym = y[*row];
                let mut adjoint = ModeVector::zeros(y.len());
                adjoint[*row] = -2.0 * ym.conj();
                Ok(HeadOutput {
                    loss: 1.0 - ym.norm_sqr(),
                    probabilities: Vec::new(),
                    adjoint,
                })
            }
        }
    }
}

/// Inputs and outputs of every layer for one example.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace {
    /// `inputs[ℓ]` is `x^(ℓ)`.
    pub inputs: Vec<ModeVector>,
    /// `outputs[ℓ]` is `y^(ℓ) = U^(ℓ) x^(ℓ)`.
    pub outputs: Vec<ModeVector>,
}

impl ForwardTrace {
    pub fn output(&self) -> &ModeVector {
        self.outputs.last().expect("at least one layer")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PnnModel {
    topology: MeshTopology,
    layers: Vec<MeshPhases>,
    nonlinearity: Nonlinearity,
    head: Head,
}

impl PnnModel {
    pub fn new(
        topology: MeshTopology,
        layers: Vec<MeshPhases>,
        nonlinearity: Nonlinearity,
        head: Head,
    ) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument(
                "a model needs at least one layer".into(),
            ));
        }
        for l in &layers {
            l.check(&topology)?;
        }
        head.validate(topology.n_modes())?;
        Ok(Self {
            topology,
            layers,
            nonlinearity,
            head,
        })
    }

    /// Uniformly random phases on `n_layers` triangular meshes of `n_modes`.
    pub fn random<R: Rng + ?Sized>(
        n_modes: usize,
        n_layers: usize,
        head: Head,
        rng: &mut R,
    ) -> Result<Self> {
        let topology = MeshTopology::triangular(n_modes);
        let layers = (0..n_layers)
            .map(|_| MeshPhases::random(&topology, rng))
            .collect();
        Self::new(topology, layers, Nonlinearity::Abs, head)
    }

    pub fn topology(&self) -> &MeshTopology {
        &self.topology
    }

    pub fn n_modes(&self) -> usize {
        self.topology.n_modes()
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn layers(&self) -> &[MeshPhases] {
        &self.layers
    }

    pub fn nonlinearity(&self) -> Nonlinearity {
        self.nonlinearity
    }

    pub fn head(&self) -> &Head {
        &self.head
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(MeshPhases::n_params).sum()
    }

    /// Layer-by-layer concatenation of `[θ…, φ…, γ…]`.
    pub fn params(&self) -> Vec<f64> {
        self.layers.iter().flat_map(MeshPhases::to_vec).collect()
    }

    pub fn apply_delta(&mut self, delta: &[f64]) -> Result<()> {
        if delta.len() != self.n_params() {
            return Err(Error::DimensionMismatch {
                expected: self.n_params(),
                found: delta.len(),
            });
        }
        let mut offset = 0;
        for layer in &mut self.layers {
            let n = layer.n_params();
            layer.apply_delta(&delta[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    pub fn set_layers(&mut self, layers: Vec<MeshPhases>) -> Result<()> {
        if layers.len() != self.layers.len() {
            return Err(Error::DimensionMismatch {
                expected: self.layers.len(),
                found: layers.len(),
            });
        }
        for l in &layers {
            l.check(&self.topology)?;
        }
        self.layers = layers;
        Ok(())
    }

    pub fn unitaries(&self) -> Result<Vec<DMatrix<Complex64>>> {
        self.layers
            .iter()
            .map(|p| build_unitary(&self.topology, p))
            .collect()
    }

    /// Exact forward computation.
    pub fn forward(&self, x: &ModeVector) -> Result<ForwardTrace> {
        x.require_len(self.n_modes())?;
        let mut inputs = Vec::with_capacity(self.n_layers());
        let mut outputs = Vec::with_capacity(self.n_layers());
        let mut current = x.clone();
        for (l, phases) in self.layers.iter().enumerate() {
            let (y, _) = propagate(&self.topology, phases, &current, Direction::Forward)?;
            inputs.push(current);
            current = if l + 1 < self.n_layers() {
                self.nonlinearity.apply(&y)
            } else {
                y.clone()
            };
            outputs.push(y);
        }
        Ok(ForwardTrace { inputs, outputs })
    }

    pub fn evaluate(&self, x: &ModeVector, label: usize) -> Result<HeadOutput> {
        let trace = self.forward(x)?;
        self.head.evaluate(trace.output(), label)
    }

    pub fn loss(&self, x: &ModeVector, label: usize) -> Result<f64> {
        Ok(self.evaluate(x, label)?.loss)
    }

    pub fn predict(&self, x: &ModeVector) -> Result<usize> {
        Ok(self.evaluate(x, 0)?.predicted())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn forward_matches_matrix_chain() {
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        let model = PnnModel::random(4, 3, Head::softmax2(), &mut rng).unwrap();
        let x = ModeVector::from_real(&[0.3, -0.5, 0.4, 0.2]);
        let trace = model.forward(&x).unwrap();
        let us = model.unitaries().unwrap();
        let mut v = x.clone();
        for (l, u) in us.iter().enumerate() {
            let y = v.transformed(u);
            assert!(y.max_abs_diff(&trace.outputs[l]) < 1e-12);
            v = Nonlinearity::Abs.apply(&y);
        }
        assert_eq!(model.n_params(), 3 * (2 * 6 + 4));
    }

    #[test]
    fn accuracy_is_invariant_to_common_power_scaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(52);
        let model = PnnModel::random(4, 2, Head::softmax2(), &mut rng).unwrap();
        let x = ModeVector::from_real(&[0.3, -0.5, 0.4, 0.2]);
        assert_eq!(
            model.predict(&x).unwrap(),
            model.predict(&x.scale(3.0)).unwrap()
        );
    }

    #[test]
    fn delta_updates_every_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        let mut model = PnnModel::random(3, 2, Head::softmax2_like_for_three(), &mut rng).unwrap();
        let before = model.params();
        model.apply_delta(&vec![0.01; model.n_params()]).unwrap();
        let after = model.params();
        assert!(before
            .iter()
            .zip(&after)
            .all(|(a, b)| a != b || *a == 0.0 || *a == std::f64::consts::PI));
        assert!(model.apply_delta(&[0.0]).is_err());
    }

    impl Head {
        fn softmax2_like_for_three() -> Self {
            Head::Softmax {
                groups: vec![vec![0], vec![1, 2]],
                scale: 1.0,
            }
        }
    }

    #[test]
    fn validation() {
        let mut rng = ChaCha8Rng::seed_from_u64(54);
        assert!(PnnModel::random(3, 1, Head::softmax2(), &mut rng).is_err());
        assert!(PnnModel::random(4, 0, Head::softmax2(), &mut rng).is_err());
        assert!(PnnModel::random(4, 1, Head::Fidelity { row: 3 }, &mut rng).is_ok());
    }
}
