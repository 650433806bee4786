//! Adjoint seeds for the digital parts of a model.
//!
//! Adjoints follow `dL = Re(Σ y_aj,i dy_i)`, i.e. `y_aj = ∂L/∂Re y - i ∂L/∂Im y`,
//! which makes `x_aj = Uᵀ y_aj` the adjoint of the layer input.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::mode::ModeVector;

/// Below this magnitude `|y|` is treated as the non-differentiable point.
pub const ABS_TOLERANCE: f64 = 1e-12;

/// Adjoint of `x = |y|` given the adjoint of `x`: `conj(y_i)/|y_i| · Re(x_aj,i)`.
/// Components with `|y_i| < 1e-12` get the subgradient 0.
pub fn abs_vjp(y: &ModeVector, x_aj_next: &ModeVector) -> Result<ModeVector> {
    x_aj_next.require_len(y.len())?;
    Ok(y.iter()
        .zip(x_aj_next.iter())
        .map(|(yi, a)| {
            let m = yi.norm();
            if m < ABS_TOLERANCE {
                Complex64::new(0.0, 0.0)
            } else {
                yi.conj() / m * a.re
            }
        })
        .collect())
}

/// Softmax cross entropy over the powers of output groups.
///
/// Logits are `scale · Σ_{i∈g} |y_i|²`; the loss is `-log ẑ_label`.
/// Returns `(loss, probabilities, y_aj)` with
/// `y_aj,i = 2 scale (ẑ_g - z_g) conj(y_i)` for `i` in group `g`.
pub fn softmax_groups_vjp(
    y: &ModeVector,
    groups: &[Vec<usize>],
    scale: f64,
    label: usize,
) -> Result<(f64, Vec<f64>, ModeVector)> {
    if label >= groups.len() {
        return Err(Error::InvalidArgument(format!(
            "label {label} out of range for {} classes",
            groups.len()
        )));
    }
    if y.norm_sqr() == 0.0 {
        return Err(Error::ZeroVector);
    }
    let powers: Vec<f64> = groups
        .iter()
        .map(|g| g.iter().map(|&i| y[i].norm_sqr()).sum())
        .collect();
    let probs = softmax(&powers, scale);
    let loss = -probs[label].max(f64::MIN_POSITIVE).ln();
    let mut adj = ModeVector::zeros(y.len());
    for (j, g) in groups.iter().enumerate() {
        let z = if j == label { 1.0 } else { 0.0 };
        let coeff = 2.0 * scale * (probs[j] - z);
        for &i in g {
            adj[i] = y[i].conj() * coeff;
        }
    }
    Ok((loss, probs, adj))
}

/// Numerically stable softmax of `scale · values`.
pub fn softmax(values: &[f64], scale: f64) -> Vec<f64> {
    let max = values
        .iter()
        .map(|v| v * scale)
        .fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = values.iter().map(|v| (v * scale - max).exp()).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|v| v / total).collect()
}

/// Two-class head on four outputs: groups `{0, 1}` and `{2, 3}`.
pub fn output_vjp(y: &ModeVector, label: usize) -> Result<ModeVector> {
    y.require_len(4)?;
    let (_, _, adj) = softmax_groups_vjp(y, &[vec![0, 1], vec![2, 3]], 1.0, label)?;
    Ok(adj)
}

/// Adjoint of `L_m = 1 - |û_mᵀ u_m*|²` with respect to the output of `Û`
/// driven by `u_m*`: `-2 conj(û_mᵀ u_m*) e_m`.
pub fn fidelity_loss_adjoint(
    u_hat_row: &ModeVector,
    u_row: &ModeVector,
    m: usize,
) -> Result<ModeVector> {
    u_row.require_len(u_hat_row.len())?;
    if m >= u_hat_row.len() {
        return Err(Error::InvalidArgument(format!("row {m} out of range")));
    }
    let overlap: Complex64 = u_hat_row
        .iter()
        .zip(u_row.iter())
        .map(|(a, b)| a * b.conj())
        .sum();
    let mut adj = ModeVector::zeros(u_hat_row.len());
    adj[m] = -2.0 * overlap.conj();
    Ok(adj)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn abs_vjp_examples() {
        // conj(2i)/2 · 3 = -3i; a finite-difference check below fixes the conjugate
        let r = abs_vjp(
            &ModeVector::new(vec![c(0.0, 2.0)]),
            &ModeVector::new(vec![c(3.0, 0.0)]),
        )
        .unwrap();
        assert!((r[0] - c(0.0, -3.0)).norm() < 1e-15);
        let r = abs_vjp(
            &ModeVector::new(vec![c(1.0, 0.0)]),
            &ModeVector::new(vec![c(0.0, 1.0)]),
        )
        .unwrap();
        assert_eq!(r[0], c(0.0, 0.0));
        let r = abs_vjp(
            &ModeVector::new(vec![c(0.0, 0.0)]),
            &ModeVector::new(vec![c(1.0, 0.0)]),
        )
        .unwrap();
        assert_eq!(r[0], c(0.0, 0.0));
    }

    /// dL = Re(Σ y_aj dy) checked with central differences along Re and Im.
    fn check_adjoint(y: &ModeVector, adj: &ModeVector, loss: impl Fn(&ModeVector) -> f64) {
        let h = 1e-6;
        for i in 0..y.len() {
            for dir in [c(1.0, 0.0), c(0.0, 1.0)] {
                let mut p = y.clone();
                p[i] += dir * h;
                let mut m = y.clone();
                m[i] -= dir * h;
                let fd = (loss(&p) - loss(&m)) / (2.0 * h);
                let analytic = (adj[i] * dir).re;
                assert!((fd - analytic).abs() < 1e-7, "i={i} fd={fd} an={analytic}");
            }
        }
    }

    #[test]
    fn abs_chain_matches_finite_differences() {
        // g(|y|) = Σ w_i |y_i|, so ∂g/∂|y_i| = w_i
        let y = ModeVector::new(vec![c(0.3, -0.7), c(-1.1, 0.2), c(0.05, 0.4)]);
        let w = [0.7, -1.3, 2.0];
        let x_aj: ModeVector = w.iter().map(|&v| c(v, 0.4)).collect();
        let adj = abs_vjp(&y, &x_aj).unwrap();
        check_adjoint(&y, &adj, |v| {
            v.iter().zip(&w).map(|(z, wi)| z.norm() * wi).sum()
        });
    }

    #[test]
    fn softmax_head_matches_finite_differences() {
        let y = ModeVector::new(vec![c(0.3, 0.1), c(-0.2, 0.5), c(0.6, -0.1), c(0.1, 0.2)]);
        for label in 0..2 {
            let groups = [vec![0, 1], vec![2, 3]];
            let (_, _, adj) = softmax_groups_vjp(&y, &groups, 1.0, label).unwrap();
            assert_eq!(adj, output_vjp(&y, label).unwrap());
            check_adjoint(&y, &adj, |v| {
                softmax_groups_vjp(v, &groups, 1.0, label).unwrap().0
            });
        }
        let groups: Vec<Vec<usize>> = (0..4).map(|i| vec![i]).collect();
        let (_, _, adj) = softmax_groups_vjp(&y, &groups, 7.0, 2).unwrap();
        check_adjoint(&y, &adj, |v| {
            softmax_groups_vjp(v, &groups, 7.0, 2).unwrap().0
        });
    }

    #[test]
    fn softmax_head_examples() {
        let q = c(0.5, 0.0);
        let y = ModeVector::new(vec![q; 4]);
        let (loss, probs, adj) = softmax_groups_vjp(&y, &[vec![0, 1], vec![2, 3]], 1.0, 0).unwrap();
        assert!((probs[0] - 0.5).abs() < 1e-15);
        assert!((loss - 2f64.ln()).abs() < 1e-15);
        // (ẑ₀ - z₀) = -0.5 times the power-to-field factor 2 conj(y)
        assert!((adj[0] - q.conj() * -1.0).norm() < 1e-15);
        assert!((adj[2] - q.conj() * 1.0).norm() < 1e-15);
        assert!(output_vjp(&ModeVector::zeros(4), 0).is_err());
        assert!(output_vjp(&y, 2).is_err());
    }

    #[test]
    fn fidelity_adjoint_examples() {
        let u = ModeVector::new(vec![c(0.6, 0.0), c(0.0, 0.8)]);
        let adj = fidelity_loss_adjoint(&u, &u, 1).unwrap();
        assert!((adj[1] - c(-2.0, 0.0)).norm() < 1e-15 && adj[0].norm() == 0.0);
        let o = ModeVector::new(vec![c(0.0, 0.8), c(0.6, 0.0)]);
        let adj = fidelity_loss_adjoint(&u, &o, 0).unwrap();
        assert!(adj.norm_sqr() < 1e-30);
    }
}
