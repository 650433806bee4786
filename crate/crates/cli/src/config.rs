//! Experiment configuration: a TOML document with flag overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use insitu_core::energy::EnergyParams;
use insitu_core::training::dataset::ShapeParams;
use insitu_core::training::train::DEFAULT_POWER;
use insitu_core::{
    AdamConfig, GradientMethod, HardwareErrorConfig, ReadoutConfig, ReadoutMode, TrainConfig,
};

use crate::error::CliError;

/// Input power of MNIST-64 runs: a sharper softmax over ten output modes.
pub const MNIST_POWER: f64 = 100.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Circle,
    Moons,
    Ring,
    Mnist64,
    /// Delimited text file at `dataset.path`.
    File,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub kind: DataSource,
    pub n: usize,
    pub noise: f64,
    /// Generator seed; the run seed when absent.
    pub seed: Option<u64>,
    pub shape: ShapeParams,
    pub path: Option<PathBuf>,
    pub mnist_dir: PathBuf,
    pub mnist_train: usize,
    pub mnist_test: usize,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            kind: DataSource::Circle,
            n: 250,
            noise: 0.05,
            seed: None,
            shape: ShapeParams::default(),
            path: None,
            mnist_dir: PathBuf::from("data/mnist5k"),
            mnist_train: 2000,
            mnist_test: 1000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    /// Mode count; 2-d datasets need 4, MNIST-64 needs 64.
    pub n_modes: Option<usize>,
    pub layers: usize,
    /// Softmax sharpness for the 10-class head.
    pub softmax_scale: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            n_modes: None,
            layers: 3,
            softmax_scale: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub iterations: usize,
    pub batch_size: usize,
    /// Total input power; [`DEFAULT_POWER`] for 2-d data, [`MNIST_POWER`] for MNIST-64.
    pub power: Option<f64>,
    pub eval_every: usize,
    pub reference_trace: bool,
    pub threads: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            iterations: 1000,
            batch_size: 1,
            power: None,
            eval_every: 10,
            reference_trace: true,
            threads: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckSection {
    pub examples: usize,
    pub step: f64,
    pub tolerance: f64,
}

impl Default for GradcheckSection {
    fn default() -> Self {
        Self {
            examples: 10,
            step: 1e-5,
            tolerance: 1e-5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSweepSection {
    pub a_error: Vec<f64>,
    pub p_error: Vec<f64>,
    pub snr_db: Vec<f64>,
    /// Grid points trained at once.
    pub parallelism: usize,
}

impl Default for NoiseSweepSection {
    fn default() -> Self {
        Self {
            a_error: vec![0.0, 0.01, 0.02, 0.05],
            p_error: vec![0.0, 0.01, 0.02, 0.05],
            snr_db: vec![f64::INFINITY, 30.0, 20.0, 10.0],
            parallelism: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrateSection {
    pub n_points: usize,
    pub repeats: usize,
    /// Detector SNR of the sweep.
    pub snr_db: f64,
    /// Ground-truth heater: phase cubic `(p0, p1, p2, p3)`, transmission `a`, `b`, voltage range.
    pub p_coeffs: [f64; 4],
    pub t_amp: f64,
    pub t_offset: f64,
    pub v_range: (f64, f64),
}

impl Default for CalibrateSection {
    fn default() -> Self {
        let m = insitu_core::CalibrationModel::default_true_model();
        Self {
            n_points: 201,
            repeats: 50,
            snr_db: 30.0,
            p_coeffs: m.p_coeffs,
            t_amp: m.t_amp,
            t_offset: m.t_offset,
            v_range: m.v_range,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalogDemoSection {
    pub sigmas: Vec<f64>,
    pub samples: usize,
    pub n_modes: usize,
    pub row: usize,
}

impl Default for AnalogDemoSection {
    fn default() -> Self {
        Self {
            sigmas: vec![1.0, 0.2],
            samples: 64,
            n_modes: 4,
            row: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReadoutSection {
    pub mode: ReadoutMode,
}

impl Default for ReadoutSection {
    fn default() -> Self {
        Self {
            mode: ReadoutMode::SelfConfigure,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub dataset: DatasetSection,
    pub model: ModelSection,
    pub hardware: HardwareErrorConfig,
    pub readout: ReadoutSection,
    pub gradient: GradientMethod,
    pub optimizer: AdamConfig,
    pub train: TrainSection,
    pub gradcheck: GradcheckSection,
    pub noise_sweep: NoiseSweepSection,
    pub calibrate: CalibrateSection,
    pub analog_demo: AnalogDemoSection,
    pub energy: EnergyParams,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("out"),
            dataset: DatasetSection::default(),
            model: ModelSection::default(),
            hardware: HardwareErrorConfig::ideal(),
            readout: ReadoutSection::default(),
            gradient: GradientMethod::Digital,
            optimizer: AdamConfig::default(),
            train: TrainSection::default(),
            gradcheck: GradcheckSection::default(),
            noise_sweep: NoiseSweepSection::default(),
            calibrate: CalibrateSection::default(),
            analog_demo: AnalogDemoSection::default(),
            energy: EnergyParams {
                n_modes: 4,
                e_inp: 1.0,
                e_meas: 1.0,
                e_grad: 1.0,
                e_grad_digital: 1.0,
            },
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub method: Option<GradientMethod>,
    pub ideal: bool,
}

impl ExperimentConfig {
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self, CliError> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
                Self::parse(&text)?
            }
            None => Self::default(),
        };
        if let Some(seed) = overrides.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &overrides.out {
            cfg.out = out.clone();
        }
        if let Some(method) = overrides.method {
            cfg.gradient = match (method, cfg.gradient) {
                // keep a configured sample count when the flag only picks the method
                (GradientMethod::Analog { .. }, g @ GradientMethod::Analog { .. }) => g,
                (m, _) => m,
            };
        }
        if overrides.ideal {
            cfg.hardware = HardwareErrorConfig::ideal();
            cfg.readout.mode = ReadoutMode::Ideal;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        self.hardware
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        self.optimizer
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        self.energy
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        if self.model.layers == 0 {
            return bad("model.layers must be >= 1".into());
        }
        if self.train.batch_size == 0 {
            return bad("train.batch_size must be >= 1".into());
        }
        if self
            .train
            .power
            .is_some_and(|p| !(p.is_finite() && p > 0.0))
        {
            return bad("train.power must be > 0".into());
        }
        if let GradientMethod::Analog { samples } = self.gradient {
            if samples < 3 {
                return bad("gradient.samples must be >= 3".into());
            }
        }
        if self.dataset.kind == DataSource::File && self.dataset.path.is_none() {
            return bad("dataset.path is required for kind = \"file\"".into());
        }
        if self.gradcheck.step.is_nan() || self.gradcheck.step <= 0.0 {
            return bad("gradcheck.step must be > 0".into());
        }
        if self.noise_sweep.parallelism == 0 {
            return bad("noise_sweep.parallelism must be >= 1".into());
        }
        if self.calibrate.n_points < 8 {
            return bad("calibrate.n_points must be >= 8".into());
        }
        if self.analog_demo.samples < 3 || self.analog_demo.row >= self.analog_demo.n_modes {
            return bad("analog_demo needs samples >= 3 and row < n_modes".into());
        }
        Ok(())
    }

    /// Canonical TOML rendering of the resolved config.
    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }

    /// SHA-256 of the canonical rendering, hex encoded. The output directory
    /// is excluded so moving a run does not change its identity.
    pub fn hash(&self) -> Result<String, CliError> {
        let mut c = self.clone();
        c.out = PathBuf::new();
        Ok(hex::encode(Sha256::digest(c.to_toml()?.as_bytes())))
    }

    /// Readout used for every device: exact when the hardware is ideal.
    pub fn readout_config(&self) -> ReadoutConfig {
        if self.hardware.is_ideal() {
            ReadoutConfig::ideal()
        } else {
            ReadoutConfig::noisy(self.readout.mode, self.hardware.clone())
        }
    }

    pub fn power(&self) -> f64 {
        self.train.power.unwrap_or(match self.dataset.kind {
            DataSource::Mnist64 => MNIST_POWER,
            _ => DEFAULT_POWER,
        })
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.train.batch_size,
            iterations: self.train.iterations,
            adam: self.optimizer,
            method: self.gradient,
            readout: self.readout_config(),
            seed: self.seed,
            power: self.power(),
            eval_every: self.train.eval_every,
            reference_trace: self.train.reference_trace,
            threads: self.train.threads,
        }
    }
}
