//! Field generation/analysis errors and noisy power monitors.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mode::ModeVector;

/// Imperfections of the simulated chip.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HardwareErrorConfig {
    /// Relative std-dev of each generated/analyzed field amplitude.
    pub a_error: f64,
    /// Std-dev (rad) of each generated/analyzed field phase.
    pub p_error: f64,
    /// Detector SNR in dB at intensity `1/N`; `inf` disables shot noise.
    pub snr_db: f64,
    /// Relative std-dev of the per-tap coupling efficiency.
    pub tap_coupling_spread: f64,
    pub seed: u64,
    /// Draw the amplitude/phase offsets once per device instead of on every pass.
    pub static_io_errors: bool,
}

impl Default for HardwareErrorConfig {
    fn default() -> Self {
        Self::ideal()
    }
}

impl HardwareErrorConfig {
    pub fn ideal() -> Self {
        Self {
            a_error: 0.0,
            p_error: 0.0,
            snr_db: f64::INFINITY,
            tap_coupling_spread: 0.0,
            seed: 0,
            static_io_errors: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("a_error", self.a_error),
            ("p_error", self.p_error),
            ("tap_coupling_spread", self.tap_coupling_spread),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be a finite value >= 0"
                )));
            }
        }
        if self.snr_db.is_nan() || self.snr_db <= 0.0 {
            return Err(Error::InvalidArgument("snr_db must be > 0 or inf".into()));
        }
        Ok(())
    }

    pub fn has_io_errors(&self) -> bool {
        self.a_error > 0.0 || self.p_error > 0.0
    }

    pub fn is_ideal(&self) -> bool {
        !self.has_io_errors() && self.snr_db.is_infinite() && self.tap_coupling_spread == 0.0
    }

    /// `10^(snr_db / 10)`: ratio of mean reading to noise std-dev at intensity `1/N`.
    pub fn snr_linear(&self) -> f64 {
        10f64.powf(self.snr_db / 10.0)
    }
}

fn normal(std: f64) -> Normal<f64> {
    Normal::new(0.0, std).expect("std-dev validated as finite and >= 0")
}

/// Scales every amplitude by `1 + δa` and rotates it by `δp`, freshly drawn per element.
pub fn perturb_input<R: Rng + ?Sized>(
    x: &ModeVector,
    cfg: &HardwareErrorConfig,
    rng: &mut R,
) -> ModeVector {
    if !cfg.has_io_errors() {
        return x.clone();
    }
    let amp = normal(cfg.a_error);
    let phase = normal(cfg.p_error);
    x.iter()
        .map(|&z| {
            let da = amp.sample(rng);
            let dp = phase.sample(rng);
            z * Complex64::from_polar(1.0 + da, dp)
        })
        .collect()
}

/// Fixed per-mode amplitude/phase offsets for devices with static I/O errors.
#[derive(Clone, Debug, PartialEq)]
pub struct IoOffsets {
    factors: Vec<Complex64>,
}

impl IoOffsets {
    pub fn draw<R: Rng + ?Sized>(n: usize, cfg: &HardwareErrorConfig, rng: &mut R) -> Self {
        let ones = ModeVector::new(vec![Complex64::new(1.0, 0.0); n]);
        Self {
            factors: perturb_input(&ones, cfg, rng).into_vec(),
        }
    }

    pub fn apply(&self, x: &ModeVector) -> ModeVector {
        x.iter().zip(&self.factors).map(|(z, f)| z * f).collect()
    }
}

/// Single detector reading with coupling efficiency `coupling` and shot noise
/// anchored so that the SNR equals `snr_db` at intensity `1/n_modes`.
pub fn measure_power<R: Rng + ?Sized>(
    intensity: f64,
    coupling: f64,
    n_modes: usize,
    snr_db: f64,
    rng: &mut R,
) -> f64 {
    let signal = coupling * intensity;
    if snr_db.is_infinite() || intensity <= 0.0 {
        return signal.max(0.0);
    }
    let n = n_modes as f64;
    let snr = 10f64.powf(snr_db / 10.0);
    let std = (1.0 / n) / snr * (intensity * n).sqrt();
    (signal + normal(std).sample(rng)).max(0.0)
}

/// A bank of power taps whose coupling efficiencies are fixed at construction.
#[derive(Clone, Debug, PartialEq)]
pub struct PowerMonitor {
    couplings: Vec<f64>,
    n_modes: usize,
    snr_db: f64,
}

impl PowerMonitor {
    /// `stream` separates independent banks built from the same hardware seed.
    pub fn new(cfg: &HardwareErrorConfig, n_taps: usize, n_modes: usize, stream: u64) -> Self {
        let couplings = if cfg.tap_coupling_spread > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(stream);
            let dist = Normal::new(1.0, cfg.tap_coupling_spread).expect("validated spread");
            (0..n_taps).map(|_| dist.sample(&mut rng)).collect()
        } else {
            vec![1.0; n_taps]
        };
        Self {
            couplings,
            n_modes,
            snr_db: cfg.snr_db,
        }
    }

    pub fn n_taps(&self) -> usize {
        self.couplings.len()
    }

    pub fn coupling(&self, tap: usize) -> f64 {
        self.couplings[tap]
    }

    pub fn is_exact(&self) -> bool {
        self.snr_db.is_infinite() && self.couplings.iter().all(|&c| c == 1.0)
    }

    pub fn measure<R: Rng + ?Sized>(&self, intensity: f64, tap: usize, rng: &mut R) -> f64 {
        measure_power(
            intensity,
            self.couplings[tap],
            self.n_modes,
            self.snr_db,
            rng,
        )
    }
}
