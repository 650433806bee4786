//! Central finite differences of the end-to-end loss, the oracle for every
//! measured gradient.

use crate::error::{Error, Result};
use crate::mode::ModeVector;
use crate::training::model::PnnModel;

/// `∂L/∂p` by central differences with step `h`, laid out like
/// [`PnnModel::params`]. Phases are shifted without range normalization.
pub fn finite_difference_gradient(
    model: &PnnModel,
    x: &ModeVector,
    label: usize,
    h: f64,
) -> Result<Vec<f64>> {
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::InvalidArgument(
            "finite-difference step must be > 0".into(),
        ));
    }
    let mut out = Vec::with_capacity(model.n_params());
    for l in 0..model.n_layers() {
        let n_params = model.layers()[l].n_params();
        for k in 0..n_params {
            let shifted = |d: f64| -> Result<f64> {
                let mut layers = model.layers().to_vec();
                let p = &mut layers[l];
                let n = p.theta.len();
                match k {
                    k if k < n => p.theta[k] += d,
                    k if k < 2 * n => p.phi[k - n] += d,
                    k => p.gamma[k - 2 * n] += d,
                }
                PnnModel::new(
                    model.topology().clone(),
                    layers,
                    model.nonlinearity(),
                    model.head().clone(),
                )?
                .loss(x, label)
            };
            out.push((shifted(h)? - shifted(-h)?) / (2.0 * h));
        }
    }
    Ok(out)
}

/// `max_k |g_k - f_k| / max_k |f_k|`: the worst deviation relative to the
/// largest reference component, so near-zero components do not blow up.
pub fn max_relative_error(g: &[f64], reference: &[f64]) -> Result<f64> {
    if g.len() != reference.len() {
        return Err(Error::DimensionMismatch {
            expected: reference.len(),
            found: g.len(),
        });
    }
    let scale = reference.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok(g.iter()
        .zip(reference)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
        / scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backprop::insitu::{insitu_gradient, model_devices};
    use crate::backprop::GradientMethod;
    use crate::training::model::Head;
    use crate::vector_io::ReadoutConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn quadratic_head_matches_closed_form() {
        // one MZI layer with a fidelity head: L = 1 - |y_0|², checked against the device
        let mut rng = ChaCha8Rng::seed_from_u64(81);
        let model = PnnModel::random(2, 1, Head::Fidelity { row: 0 }, &mut rng).unwrap();
        let x = ModeVector::from_real(&[0.6, 0.8]);
        let fd = finite_difference_gradient(&model, &x, 0, 1e-5).unwrap();
        let devices = model_devices(&model, &ReadoutConfig::ideal()).unwrap();
        let g =
            insitu_gradient(&model, &devices, &x, 0, GradientMethod::Digital, &mut rng).unwrap();
        assert_eq!(fd.len(), model.n_params());
        assert!(max_relative_error(&g.to_vec(), &fd).unwrap() < 1e-7);
    }

    #[test]
    fn relative_error_definition() {
        assert!((max_relative_error(&[1.0, 2.1], &[1.0, 2.0]).unwrap() - 0.05).abs() < 1e-12);
        assert!(max_relative_error(&[1.0], &[0.0]).is_err());
        assert!(max_relative_error(&[1.0], &[1.0, 2.0]).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(82);
        let model = PnnModel::random(2, 1, Head::Fidelity { row: 0 }, &mut rng).unwrap();
        assert!(finite_difference_gradient(&model, &ModeVector::basis(2, 0), 0, 0.0).is_err());
    }
}
