//! Complex optical mode amplitudes.

use std::ops::{Index, IndexMut};

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Field amplitudes on a set of waveguide modes. The squared norm is the total optical power.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeVector(Vec<Complex64>);

impl ModeVector {
    pub fn new(amplitudes: Vec<Complex64>) -> Self {
        Self(amplitudes)
    }

    pub fn zeros(n: usize) -> Self {
        Self(vec![Complex64::new(0.0, 0.0); n])
    }

    /// Unit vector with all power in mode `k`.
    pub fn basis(n: usize, k: usize) -> Self {
        let mut v = Self::zeros(n);
        v.0[k] = Complex64::new(1.0, 0.0);
        v
    }

    pub fn from_real(values: &[f64]) -> Self {
        Self(values.iter().map(|&v| Complex64::new(v, 0.0)).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [Complex64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<Complex64> {
        self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Complex64> {
        self.0.iter()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.0.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn powers(&self) -> Vec<f64> {
        self.0.iter().map(|z| z.norm_sqr()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn scale(&self, s: f64) -> Self {
        Self(self.0.iter().map(|z| z * s).collect())
    }

    pub fn scale_complex(&self, s: Complex64) -> Self {
        Self(self.0.iter().map(|z| z * s).collect())
    }

    pub fn conj(&self) -> Self {
        Self(self.0.iter().map(|z| z.conj()).collect())
    }

    /// Unit-norm copy together with the original squared norm.
    pub fn normalized(&self) -> Result<(Self, f64)> {
        let p = self.norm_sqr();
        if p == 0.0 || !p.is_finite() {
            return Err(Error::ZeroVector);
        }
        Ok((self.scale(1.0 / p.sqrt()), p))
    }

    /// Errors unless the vector has unit norm within `tol`.
    pub fn require_unit(&self, tol: f64) -> Result<()> {
        let p = self.norm_sqr();
        if p == 0.0 {
            return Err(Error::ZeroVector);
        }
        if (p - 1.0).abs() > tol || !p.is_finite() {
            return Err(Error::NotNormalized { norm_sqr: p });
        }
        Ok(())
    }

    pub fn require_len(&self, n: usize) -> Result<()> {
        if self.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: self.len(),
            });
        }
        Ok(())
    }

    /// Max elementwise distance after removing the best global phase.
    pub fn distance_up_to_phase(&self, other: &Self) -> f64 {
        let overlap: Complex64 = self.0.iter().zip(&other.0).map(|(a, b)| a.conj() * b).sum();
        let rot = if overlap.norm() > 0.0 {
            overlap / overlap.norm()
        } else {
            Complex64::new(1.0, 0.0)
        };
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a * rot - b).norm())
            .fold(0.0, f64::max)
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    /// Matrix-vector product `m * self`.
    pub fn transformed(&self, m: &DMatrix<Complex64>) -> Self {
        let out = (0..m.nrows())
            .map(|r| (0..m.ncols()).map(|c| m[(r, c)] * self.0[c]).sum())
            .collect();
        Self(out)
    }
}

impl Index<usize> for ModeVector {
    type Output = Complex64;

    fn index(&self, i: usize) -> &Complex64 {
        &self.0[i]
    }
}

impl IndexMut<usize> for ModeVector {
    fn index_mut(&mut self, i: usize) -> &mut Complex64 {
        &mut self.0[i]
    }
}

impl From<Vec<Complex64>> for ModeVector {
    fn from(v: Vec<Complex64>) -> Self {
        Self(v)
    }
}

impl FromIterator<Complex64> for ModeVector {
    fn from_iter<I: IntoIterator<Item = Complex64>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}

/// Wraps an angle into `[0, 2π)`.
pub fn wrap_2pi(angle: f64) -> f64 {
    let tau = std::f64::consts::TAU;
    let w = angle.rem_euclid(tau);
    if w >= tau {
        0.0
    } else {
        w
    }
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_pi(angle: f64) -> f64 {
    let pi = std::f64::consts::PI;
    let w = wrap_2pi(angle + pi) - pi;
    if w <= -pi {
        w + std::f64::consts::TAU
    } else {
        w
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn wrapping() {
        assert_eq!(wrap_2pi(-0.5), 2.0 * PI - 0.5);
        assert_eq!(wrap_2pi(2.0 * PI), 0.0);
        assert!((wrap_pi(-PI) - PI).abs() < 1e-15);
        assert!((wrap_pi(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-15);
    }

    #[test]
    fn phase_distance_ignores_global_phase() {
        let a = ModeVector::new(vec![Complex64::new(0.6, 0.0), Complex64::new(0.0, 0.8)]);
        let b = a.scale_complex(Complex64::from_polar(1.0, 1.3));
        assert!(a.distance_up_to_phase(&b) < 1e-15);
        assert!(a.max_abs_diff(&b) > 0.1);
    }

    #[test]
    fn normalization() {
        let v = ModeVector::from_real(&[3.0, 4.0]);
        let (u, p) = v.normalized().unwrap();
        assert_eq!(p, 25.0);
        assert!((u.norm() - 1.0).abs() < 1e-15);
        assert_eq!(ModeVector::zeros(3).normalized(), Err(Error::ZeroVector));
    }
}
