//! Scalar metrics for gradients, unitaries and classifiers.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::mesh::{MeshPhases, MeshTopology};
use crate::mode::wrap_2pi;
use std::f64::consts::{PI, TAU};

/// `1 - cos∠(g, ĝ)`, in `[0, 2]`.
pub fn gradient_direction_error(g: &[f64], g_hat: &[f64]) -> Result<f64> {
    if g.len() != g_hat.len() {
        return Err(Error::DimensionMismatch {
            expected: g.len(),
            found: g_hat.len(),
        });
    }
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let (a, b) = (norm(g), norm(g_hat));
    if a == 0.0 || b == 0.0 {
        return Err(Error::ZeroVector);
    }
    let dot: f64 = g.iter().zip(g_hat).map(|(x, y)| x * y).sum();
    Ok((1.0 - dot / (a * b)).clamp(0.0, 2.0))
}

/// `1 - |tr(Û† U) / N|²`, in `[0, 1]`.
pub fn fidelity_error(u_hat: &DMatrix<Complex64>, u: &DMatrix<Complex64>) -> Result<f64> {
    if u_hat.shape() != u.shape() || !u.is_square() {
        return Err(Error::DimensionMismatch {
            expected: u.nrows(),
            found: u_hat.nrows(),
        });
    }
    let n = u.nrows() as f64;
    let trace: Complex64 = u_hat.iter().zip(u.iter()).map(|(a, b)| a.conj() * b).sum();
    Ok((1.0 - (trace / n).norm_sqr()).clamp(0.0, 1.0))
}

/// Adds `Normal(0, σ)` to every θ and φ and maps them back into range:
/// φ modulo 2π, θ reflected at 0 and π.
pub fn perturb_phases<R: Rng + ?Sized>(
    topology: &MeshTopology,
    phases: &MeshPhases,
    sigma: f64,
    rng: &mut R,
) -> Result<MeshPhases> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::InvalidArgument(
            "sigma must be a finite value >= 0".into(),
        ));
    }
    if sigma == 0.0 {
        return Ok(phases.clone());
    }
    let normal = Normal::new(0.0, sigma).expect("sigma validated");
    phases.check(topology)?;
    let theta = phases
        .theta
        .iter()
        .map(|t| reflect_theta(t + normal.sample(rng)))
        .collect();
    let phi = phases.phi.iter().map(|p| p + normal.sample(rng)).collect();
    MeshPhases::new(theta, phi, phases.gamma.clone())
}

fn reflect_theta(t: f64) -> f64 {
    let w = wrap_2pi(t);
    if w > PI {
        TAU - w
    } else {
        w
    }
}

/// Fraction of `predicted[i] == labels[i]`.
pub fn accuracy(predicted: &[usize], labels: &[usize]) -> f64 {
    if predicted.is_empty() {
        return 0.0;
    }
    let hits = predicted.iter().zip(labels).filter(|(a, b)| a == b).count();
    hits as f64 / predicted.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_unitary, haar_unitary, phases_from_unitary};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn direction_error_examples() {
        let g = [1.0, -2.0, 0.5];
        let neg: Vec<f64> = g.iter().map(|v| -v).collect();
        assert!(gradient_direction_error(&g, &g).unwrap().abs() < 1e-15);
        assert!((gradient_direction_error(&g, &neg).unwrap() - 2.0).abs() < 1e-15);
        assert!((gradient_direction_error(&[1.0, 0.0], &[0.0, 3.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(
            gradient_direction_error(&[0.0, 0.0], &[1.0, 0.0]).unwrap_err(),
            Error::ZeroVector
        );
    }

    #[test]
    fn fidelity_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(81);
        let u = haar_unitary(4, &mut rng);
        assert!(fidelity_error(&u, &u).unwrap() < 1e-14);
        let mut flip = DMatrix::<Complex64>::identity(4, 4);
        flip[(0, 0)] = Complex64::new(-1.0, 0.0);
        assert!((fidelity_error(&(&u * flip), &u).unwrap() - 0.75).abs() < 1e-12);
        assert!(fidelity_error(&u, &DMatrix::identity(3, 3)).is_err());
    }

    #[test]
    fn perturbation_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(82);
        let topology = MeshTopology::triangular(4);
        let u = haar_unitary(4, &mut rng);
        let phases = phases_from_unitary(&u).unwrap();
        assert_eq!(
            perturb_phases(&topology, &phases, 0.0, &mut rng).unwrap(),
            phases
        );
        // φ wraps modulo 2π, so measure the wrapped shift
        let mut shifts = Vec::new();
        while shifts.len() < 10_000 {
            let p = perturb_phases(&topology, &phases, 0.1, &mut rng).unwrap();
            for (a, b) in p.phi.iter().zip(&phases.phi) {
                shifts.push(crate::mode::wrap_pi(a - b));
            }
        }
        let std = (shifts.iter().map(|s| s * s).sum::<f64>() / shifts.len() as f64).sqrt();
        assert!((std - 0.1).abs() < 0.005, "std {std}");

        let mut means = Vec::new();
        for sigma in [1.0, 0.5, 0.2, 0.1] {
            let mean: f64 = (0..200)
                .map(|_| {
                    let p = perturb_phases(&topology, &phases, sigma, &mut rng).unwrap();
                    fidelity_error(&build_unitary(&topology, &p).unwrap(), &u).unwrap()
                })
                .sum::<f64>()
                / 200.0;
            assert!(mean > 0.0);
            means.push(mean);
        }
        assert!(means.windows(2).all(|w| w[0] > w[1]), "{means:?}");
    }
}
