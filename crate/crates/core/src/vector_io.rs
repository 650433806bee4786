//! Generator and analyzer vector units.
//!
//! Both are diagonal MZI cascades on modes `(0,1), (1,2), …, (N-2, N-1)`.
//! The analyzer visits them bottom-up: step `m` combines the field on
//! waveguide `m` with everything already collected from below and routes it
//! all to the top output. Running the same cascade backwards generates a
//! vector from light injected into mode 0.

use std::f64::consts::{FRAC_PI_2, PI};

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hardware::noise::{HardwareErrorConfig, PowerMonitor};
use crate::mesh::{mzi_transfer, MziVariant};
use crate::mode::{wrap_2pi, ModeVector};

/// Below this total power an analyzer reading is considered empty.
pub const DETECTION_THRESHOLD: f64 = 1e-12;
/// Below this amplitude the reference arm cannot define a phase.
pub const REFERENCE_THRESHOLD: f64 = 1e-6;

/// Phases of an `N`-mode vector unit: `N - 1` MZIs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VectorUnitPhases {
    pub theta: Vec<f64>,
    pub phi: Vec<f64>,
}

impl VectorUnitPhases {
    pub fn n_modes(&self) -> usize {
        self.theta.len() + 1
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReadoutMode {
    /// Exact fields, no error injection anywhere in the readout path.
    #[default]
    Ideal,
    /// Amplitudes from noisy power readings, phases from noisy four-point readings.
    SelfConfigure,
    /// As `SelfConfigure` but with the true relative phase at every step.
    TruePhase,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReadoutConfig {
    pub mode: ReadoutMode,
    pub error: HardwareErrorConfig,
}

impl ReadoutConfig {
    pub fn ideal() -> Self {
        Self::default()
    }

    pub fn noisy(mode: ReadoutMode, error: HardwareErrorConfig) -> Self {
        Self { mode, error }
    }

    pub fn is_ideal(&self) -> bool {
        self.mode == ReadoutMode::Ideal
    }
}

/// Angles that route `(a, b)` entirely to the top output of one MZI.
fn nullify(a: Complex64, b: Complex64) -> (f64, f64) {
    if b.norm() == 0.0 {
        return (PI, 0.0);
    }
    let theta = 2.0 * (a.norm() / b.norm()).atan();
    let phi = if a.norm() == 0.0 {
        0.0
    } else {
        wrap_2pi(-(a / b).arg())
    };
    (theta, phi)
}

fn top_output(theta: f64, phi: f64, a: Complex64, b: Complex64) -> Complex64 {
    let t = mzi_transfer(theta, phi, MziVariant::GlobalPhase);
    t[(0, 0)] * a + t[(0, 1)] * b
}

/// Phases of the cascade that concentrates `x` into mode 0.
pub fn vec2phase(x: &ModeVector) -> Result<VectorUnitPhases> {
    if x.is_empty() || x.norm_sqr() == 0.0 {
        return Err(Error::ZeroVector);
    }
    x.require_unit(1e-9)?;
    let n = x.len();
    let mut theta = vec![0.0; n - 1];
    let mut phi = vec![0.0; n - 1];
    let mut acc = x[n - 1];
    for m in (0..n - 1).rev() {
        let (th, ph) = nullify(x[m], acc);
        acc = top_output(th, ph, x[m], acc);
        theta[m] = th;
        phi[m] = ph;
    }
    Ok(VectorUnitPhases { theta, phi })
}

/// Unit vector generated by the cascade, with the last element's phase set to zero.
pub fn phase2vec(p: &VectorUnitPhases) -> Result<ModeVector> {
    if p.theta.len() != p.phi.len() {
        return Err(Error::DimensionMismatch {
            expected: p.theta.len(),
            found: p.phi.len(),
        });
    }
    let n = p.n_modes();
    let mut x = ModeVector::basis(n, 0);
    for m in 0..n - 1 {
        let t = mzi_transfer(p.theta[m], p.phi[m], MziVariant::GlobalPhase).adjoint();
        let (a, b) = (x[m], x[m + 1]);
        x[m] = t[(0, 0)] * a + t[(0, 1)] * b;
        x[m + 1] = t[(1, 0)] * a + t[(1, 1)] * b;
    }
    let last = x[n - 1];
    if last.norm() > 0.0 {
        x = x.scale_complex(last.conj() / last.norm());
    }
    Ok(x)
}

/// `[x √(1 - 1/N), √(1/N)]` for a unit vector `x` of length `N`.
pub fn embed_reference(x: &ModeVector, n: usize) -> Result<ModeVector> {
    if n < 2 {
        return Err(Error::InvalidArgument(
            "reference embedding needs N >= 2".into(),
        ));
    }
    x.require_len(n)?;
    x.require_unit(1e-9)?;
    let nf = n as f64;
    let scale = (1.0 - 1.0 / nf).sqrt();
    let mut v: Vec<Complex64> = x.iter().map(|z| z * scale).collect();
    v.push(Complex64::new((1.0 / nf).sqrt(), 0.0));
    Ok(ModeVector::new(v))
}

/// Inverse of [`embed_reference`]; the reference phase defines zero.
pub fn strip_reference(y: &ModeVector, n: usize) -> Result<ModeVector> {
    if n < 2 {
        return Err(Error::InvalidArgument(
            "reference embedding needs N >= 2".into(),
        ));
    }
    y.require_len(n + 1)?;
    let r = y[n];
    if r.norm() < REFERENCE_THRESHOLD {
        return Err(Error::WeakReference {
            amplitude: r.norm(),
        });
    }
    let rot = r.conj() / r.norm() / (1.0 - 1.0 / n as f64).sqrt();
    Ok(y.iter().take(n).map(|z| z * rot).collect())
}

/// Relative phase `arg(a / b)` from the top-output powers of a balanced MZI
/// whose external shifter is set to `0, π/2, π, 3π/2`.
pub fn four_point_phase(p0: f64, p_half: f64, p_pi: f64, p_3half: f64) -> Result<f64> {
    if [p0, p_half, p_pi, p_3half]
        .iter()
        .any(|p| !(p.is_finite() && *p >= 0.0))
    {
        return Err(Error::InvalidArgument(
            "powers must be finite and >= 0".into(),
        ));
    }
    let (y, x) = (p_3half - p_half, p0 - p_pi);
    if x == 0.0 && y == 0.0 {
        return Err(Error::IndeterminatePhase);
    }
    let d = y.atan2(x);
    Ok(if d <= -PI { d + 2.0 * PI } else { d })
}

/// Top-output power of the balanced analyzer MZI with external phase `psi`.
pub fn four_point_power(a: Complex64, b: Complex64, psi: f64) -> f64 {
    top_output(FRAC_PI_2, psi, a, b).norm_sqr()
}

/// Number of detector readings a self-configuring analyzer uses for `n` modes.
pub fn analyzer_taps(n: usize) -> usize {
    6 * n.saturating_sub(1) + 1
}

/// Configures the analyzer on `field` and reconstructs it from the settings
/// and the power collected at the top port.
pub fn self_configure_analyzer<R: Rng + ?Sized>(
    field: &ModeVector,
    cfg: &ReadoutConfig,
    rng: &mut R,
) -> Result<(VectorUnitPhases, ModeVector)> {
    let monitor = PowerMonitor::new(
        &cfg.error,
        analyzer_taps(field.len()),
        field.len(),
        u64::MAX,
    );
    self_configure_with(field, cfg.mode, &monitor, rng)
}

/// [`self_configure_analyzer`] with an explicit detector bank.
pub fn self_configure_with<R: Rng + ?Sized>(
    field: &ModeVector,
    mode: ReadoutMode,
    monitor: &PowerMonitor,
    rng: &mut R,
) -> Result<(VectorUnitPhases, ModeVector)> {
    let total = field.norm_sqr();
    if field.is_empty() || total.is_nan() || total < DETECTION_THRESHOLD {
        return Err(Error::LowPower { power: total });
    }
    if mode == ReadoutMode::Ideal {
        let (unit, _) = field.normalized()?;
        let phases = vec2phase(&unit)?;
        let recon = phase2vec(&phases)?.scale(total.sqrt());
        return Ok((phases, recon));
    }

    let n = field.len();
    if monitor.n_taps() < analyzer_taps(n) {
        return Err(Error::InvalidArgument(
            "analyzer monitor has too few taps".into(),
        ));
    }
    let mut theta = vec![0.0; n - 1];
    let mut phi = vec![0.0; n - 1];
    let mut acc = field[n - 1];
    for m in (0..n - 1).rev() {
        let a = field[m];
        let tap = 6 * m;
        let pa = monitor.measure(a.norm_sqr(), tap, rng);
        let pb = monitor.measure(acc.norm_sqr(), tap + 1, rng);
        let th = if pb > 0.0 {
            2.0 * (pa / pb).sqrt().atan()
        } else {
            PI
        };
        let delta = match mode {
            ReadoutMode::TruePhase => {
                if a.norm() > 0.0 && acc.norm() > 0.0 {
                    (a / acc).arg()
                } else {
                    0.0
                }
            }
            _ => {
                let readings: Vec<f64> = [0.0, FRAC_PI_2, PI, 3.0 * FRAC_PI_2]
                    .iter()
                    .enumerate()
                    .map(|(k, &psi)| {
                        monitor.measure(four_point_power(a, acc, psi), tap + 2 + k, rng)
                    })
                    .collect();
                four_point_phase(readings[0], readings[1], readings[2], readings[3]).unwrap_or(0.0)
            }
        };
        let ph = wrap_2pi(-delta);
        acc = top_output(th, ph, a, acc);
        theta[m] = th;
        phi[m] = ph;
    }
    let collected = monitor.measure(acc.norm_sqr(), 6 * (n - 1), rng);
    if collected.is_nan() || collected < DETECTION_THRESHOLD {
        return Err(Error::LowPower { power: collected });
    }
    let phases = VectorUnitPhases { theta, phi };
    let recon = phase2vec(&phases)?.scale(collected.sqrt());
    Ok((phases, recon))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_1_SQRT_2;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_unit(n: usize, rng: &mut ChaCha8Rng) -> ModeVector {
        let v: ModeVector = (0..n)
            .map(|_| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        v.normalized().unwrap().0
    }

    #[test]
    fn vec2phase_examples() {
        let x = ModeVector::new(vec![c(FRAC_1_SQRT_2, 0.0), c(FRAC_1_SQRT_2, 0.0)]);
        let p = vec2phase(&x).unwrap();
        assert!((p.theta[0] - FRAC_PI_2).abs() < 1e-12 && p.phi[0].abs() < 1e-12);
        let x = ModeVector::new(vec![c(FRAC_1_SQRT_2, 0.0), c(0.0, FRAC_1_SQRT_2)]);
        let p = vec2phase(&x).unwrap();
        assert!((p.theta[0] - FRAC_PI_2).abs() < 1e-12);
        assert!((p.phi[0] - FRAC_PI_2).abs() < 1e-12);
        assert_eq!(vec2phase(&ModeVector::zeros(3)), Err(Error::ZeroVector));
    }

    #[test]
    fn roundtrips() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in [1, 2, 5, 9] {
            let x = random_unit(n, &mut rng);
            let back = phase2vec(&vec2phase(&x).unwrap()).unwrap();
            let last = x[n - 1];
            let expect = x.scale_complex(last.conj() / last.norm());
            assert!(back.max_abs_diff(&expect) < 1e-10, "n={n}");

            let p = VectorUnitPhases {
                theta: (0..n - 1)
                    .map(|_| rng.random_range(0.1..PI - 0.1))
                    .collect(),
                phi: (0..n - 1)
                    .map(|_| rng.random_range(0.0..2.0 * PI))
                    .collect(),
            };
            let v = phase2vec(&p).unwrap();
            assert!((v.norm_sqr() - 1.0).abs() < 1e-12);
            let q = vec2phase(&v).unwrap();
            for m in 0..n - 1 {
                assert!((q.theta[m] - p.theta[m]).abs() < 1e-9);
                assert!((wrap_2pi(q.phi[m] - p.phi[m] + 0.5) - 0.5).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn phase2vec_special_states() {
        let bar = VectorUnitPhases {
            theta: vec![PI; 3],
            phi: vec![0.0; 3],
        };
        assert!(
            phase2vec(&bar)
                .unwrap()
                .distance_up_to_phase(&ModeVector::basis(4, 0))
                < 1e-12
        );
        let crossed = VectorUnitPhases {
            theta: vec![0.0, PI, PI],
            phi: vec![0.0; 3],
        };
        assert!(
            phase2vec(&crossed)
                .unwrap()
                .distance_up_to_phase(&ModeVector::basis(4, 1))
                < 1e-12
        );
    }

    #[test]
    fn reference_embedding() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = random_unit(4, &mut rng);
        let e = embed_reference(&x, 4).unwrap();
        assert!((e[4] - c(0.5, 0.0)).norm() < 1e-15);
        assert!((e[0] - x[0] * 3f64.sqrt() / 2.0).norm() < 1e-15);
        assert!((e.norm_sqr() - 1.0).abs() < 1e-12);
        assert!(strip_reference(&e, 4).unwrap().max_abs_diff(&x) < 1e-12);
        let rotated = e.scale_complex(Complex64::from_polar(1.0, 2.1));
        assert!(strip_reference(&rotated, 4).unwrap().max_abs_diff(&x) < 1e-12);

        let mut dead = e.clone();
        dead[4] = c(0.0, 0.0);
        assert!(matches!(
            strip_reference(&dead, 4),
            Err(Error::WeakReference { .. })
        ));
        assert!(embed_reference(&ModeVector::basis(1, 0), 1).is_err());
    }

    #[test]
    fn four_point_matches_simulated_analyzer() {
        let powers = |a: Complex64, b: Complex64| {
            [0.0, FRAC_PI_2, PI, 3.0 * FRAC_PI_2].map(|psi| four_point_power(a, b, psi))
        };
        let h = c(FRAC_1_SQRT_2, 0.0);
        let p = powers(h, h);
        for (got, want) in p.iter().zip([1.0, 0.5, 0.0, 0.5]) {
            assert!((got - want).abs() < 1e-12);
        }
        assert!(four_point_phase(1.0, 0.5, 0.0, 0.5).unwrap().abs() < 1e-15);

        let a = h * Complex64::from_polar(1.0, -FRAC_PI_2);
        let p = powers(a, h);
        for (got, want) in p.iter().zip([0.5, 1.0, 0.5, 0.0]) {
            assert!((got - want).abs() < 1e-12);
        }
        assert!((four_point_phase(0.5, 1.0, 0.5, 0.0).unwrap() + FRAC_PI_2).abs() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let a = c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let b = c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let p = powers(a, b);
            let d = four_point_phase(p[0], p[1], p[2], p[3]).unwrap();
            assert!((Complex64::from_polar(1.0, d) - (a / b) / (a / b).norm()).norm() < 1e-9);
            let shifted = four_point_phase(p[0] + 0.3, p[1] + 0.3, p[2] + 0.3, p[3] + 0.3).unwrap();
            let scaled = four_point_phase(2.0 * p[0], 2.0 * p[1], 2.0 * p[2], 2.0 * p[3]).unwrap();
            assert!((shifted - d).abs() < 1e-9 && (scaled - d).abs() < 1e-12);
        }
        assert_eq!(
            four_point_phase(0.2, 0.2, 0.2, 0.2),
            Err(Error::IndeterminatePhase)
        );
    }

    #[test]
    fn ideal_self_configuration() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for n in [2, 5, 8] {
            let x = random_unit(n, &mut rng).scale(0.7);
            let (p, y) = self_configure_analyzer(&x, &ReadoutConfig::ideal(), &mut rng).unwrap();
            assert_eq!(p.theta.len(), n - 1);
            assert!(y.distance_up_to_phase(&x) < 1e-10);
        }
        let e1 = ModeVector::basis(4, 0);
        let (p, y) = self_configure_analyzer(&e1, &ReadoutConfig::ideal(), &mut rng).unwrap();
        assert!(p.theta.iter().all(|&t| t == PI));
        assert!(y.max_abs_diff(&e1) < 1e-15);
        assert!(matches!(
            self_configure_analyzer(&ModeVector::zeros(3), &ReadoutConfig::ideal(), &mut rng),
            Err(Error::LowPower { .. })
        ));
    }

    #[test]
    fn noiseless_measured_modes_are_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = random_unit(6, &mut rng);
        for mode in [ReadoutMode::SelfConfigure, ReadoutMode::TruePhase] {
            let cfg = ReadoutConfig::noisy(mode, HardwareErrorConfig::ideal());
            let (_, y) = self_configure_analyzer(&x, &cfg, &mut rng).unwrap();
            assert!(y.distance_up_to_phase(&x) < 1e-10);
        }
    }

    #[test]
    fn readout_error_shrinks_with_snr() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut medians = Vec::new();
        for snr in [20.0, 30.0, 40.0] {
            let cfg = ReadoutConfig::noisy(
                ReadoutMode::SelfConfigure,
                HardwareErrorConfig {
                    snr_db: snr,
                    ..HardwareErrorConfig::ideal()
                },
            );
            let mut errs: Vec<f64> = (0..100)
                .map(|_| {
                    let x = random_unit(5, &mut rng);
                    let (_, y) = self_configure_analyzer(&x, &cfg, &mut rng).unwrap();
                    y.distance_up_to_phase(&x)
                })
                .collect();
            errs.sort_by(f64::total_cmp);
            assert!(errs[50] > 0.0);
            medians.push(errs[50]);
        }
        assert!(
            medians[0] > medians[1] && medians[1] > medians[2],
            "{medians:?}"
        );
    }
}
