//! Minibatch training with gradients measured on the simulated hardware.

use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backprop::gradient::GradientMethod;
use crate::backprop::insitu::{
    device_evaluate, insitu_gradient, model_devices, reference_gradient,
};
use crate::backprop::passes::Device;
use crate::error::{Error, Result};
use crate::mode::ModeVector;
use crate::training::dataset::{Dataset, INPUT_MARGIN};
use crate::training::metrics::{accuracy, gradient_direction_error};
use crate::training::model::PnnModel;
use crate::training::optimizer::{AdamConfig, AdamState};
use crate::vector_io::ReadoutConfig;

/// Input power of the 2-d tasks. The model is homogeneous in its input, so
/// `P` sets the sharpness of the softmax over output powers.
pub const DEFAULT_POWER: f64 = 10.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub iterations: usize,
    pub adam: AdamConfig,
    pub method: GradientMethod,
    /// Readout mode and hardware errors of every layer.
    pub readout: ReadoutConfig,
    pub seed: u64,
    /// Total input power `P`.
    pub power: f64,
    /// Test-set evaluation period in iterations; 0 evaluates only at the end.
    pub eval_every: usize,
    /// Also compute the exact gradient of every batch and log the direction error.
    pub reference_trace: bool,
    /// Worker threads for the examples of one batch; 0 picks the machine's parallelism.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 1,
            iterations: 1000,
            adam: AdamConfig::default(),
            method: GradientMethod::Digital,
            readout: ReadoutConfig::ideal(),
            seed: 0,
            power: DEFAULT_POWER,
            eval_every: 10,
            reference_trace: true,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
        }
        if !(self.power.is_finite() && self.power > 0.0) {
            return Err(Error::InvalidArgument("power must be > 0".into()));
        }
        if let GradientMethod::Analog { samples } = self.method {
            if samples < 3 {
                return Err(Error::InvalidArgument(
                    "analog sweeps need at least 3 samples".into(),
                ));
            }
        }
        self.adam.validate()?;
        self.readout.error.validate()
    }
}

/// Model inputs with labels and the split they belong to.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainData {
    pub inputs: Vec<ModeVector>,
    pub labels: Vec<usize>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl TrainData {
    /// 2-d points are rescaled and padded to 4 modes; longer points are used
    /// as real amplitudes scaled to squared norm `power`.
    pub fn from_dataset(data: &Dataset, power: f64) -> Result<Self> {
        let inputs = if data.dim() == 2 {
            data.rescaled(power, INPUT_MARGIN)?.model_inputs(power)?
        } else {
            data.points
                .iter()
                .map(|p| Ok(ModeVector::from_real(p).normalized()?.0.scale(power.sqrt())))
                .collect::<Result<Vec<_>>>()?
        };
        Ok(Self {
            inputs,
            labels: data.labels.clone(),
            train: data.train.clone(),
            test: data.test.clone(),
        })
    }

    pub fn n_modes(&self) -> usize {
        self.inputs.first().map_or(0, ModeVector::len)
    }
}

/// Metrics of one iteration. Evaluation fields are set every `eval_every` iterations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub iteration: usize,
    /// Mean loss of the batch as measured on the device.
    pub batch_cost: f64,
    pub gradient_direction_error: Option<f64>,
    pub model_train_cost: Option<f64>,
    pub model_test_cost: Option<f64>,
    pub model_train_accuracy: Option<f64>,
    pub model_test_accuracy: Option<f64>,
    pub device_test_accuracy: Option<f64>,
    pub wall_time_s: f64,
}

/// Accuracy and cost of a model on both splits.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub train_cost: f64,
    pub test_cost: f64,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub seed: u64,
    pub iterations: Vec<IterationLog>,
    pub final_model: Evaluation,
    pub final_device_test_accuracy: f64,
}

impl TrainLog {
    /// Mean of the logged gradient direction errors.
    pub fn mean_gradient_error(&self) -> Option<f64> {
        let v: Vec<f64> = self
            .iterations
            .iter()
            .filter_map(|i| i.gradient_direction_error)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    /// The log with every wall-clock field zeroed.
    pub fn without_timing(&self) -> Self {
        let mut out = self.clone();
        for it in &mut out.iterations {
            it.wall_time_s = 0.0;
        }
        out
    }

    /// One JSON object per iteration, each tagged with the config hash and seed.
    pub fn write_jsonl<W: Write>(&self, mut w: W, config_hash: &str) -> Result<()> {
        for it in &self.iterations {
            let mut v = serde_json::to_value(it).map_err(|e| Error::Data(e.to_string()))?;
            v["config_hash"] = config_hash.into();
            v["seed"] = self.seed.into();
            writeln!(w, "{v}")?;
        }
        Ok(())
    }
}

/// Exact model metrics on the train and test splits.
pub fn evaluate_model(model: &PnnModel, data: &TrainData) -> Result<Evaluation> {
    let split = |idx: &[usize]| -> Result<(f64, f64)> {
        let mut cost = 0.0;
        let mut predicted = Vec::with_capacity(idx.len());
        let mut labels = Vec::with_capacity(idx.len());
        for &i in idx {
            let out = model.evaluate(&data.inputs[i], data.labels[i])?;
            cost += out.loss;
            predicted.push(out.predicted());
            labels.push(data.labels[i]);
        }
        Ok((
            cost / idx.len().max(1) as f64,
            accuracy(&predicted, &labels),
        ))
    };
    let (train_cost, train_accuracy) = split(&data.train)?;
    let (test_cost, test_accuracy) = split(&data.test)?;
    Ok(Evaluation {
        train_cost,
        test_cost,
        train_accuracy,
        test_accuracy,
    })
}

/// Accuracy of the model run through `devices` on the examples `idx`.
pub fn device_accuracy(
    model: &PnnModel,
    devices: &[Device],
    data: &TrainData,
    idx: &[usize],
    seed: u64,
) -> Result<f64> {
    if devices.iter().all(Device::is_ideal) {
        let predicted = idx
            .iter()
            .map(|&i| model.predict(&data.inputs[i]))
            .collect::<Result<Vec<_>>>()?;
        let labels: Vec<usize> = idx.iter().map(|&i| data.labels[i]).collect();
        return Ok(accuracy(&predicted, &labels));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut predicted = Vec::with_capacity(idx.len());
    let mut labels = Vec::with_capacity(idx.len());
    for &i in idx {
        predicted.push(
            device_evaluate(model, devices, &data.inputs[i], data.labels[i], &mut rng)?.predicted(),
        );
        labels.push(data.labels[i]);
    }
    Ok(accuracy(&predicted, &labels))
}

struct ExampleGradient {
    loss: f64,
    measured: Vec<f64>,
    reference: Option<Vec<f64>>,
}

fn example_gradient(
    model: &PnnModel,
    devices: &[Device],
    cfg: &TrainConfig,
    x: &ModeVector,
    label: usize,
    stream: u64,
) -> Result<ExampleGradient> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(stream);
    let g = insitu_gradient(model, devices, x, label, cfg.method, &mut rng)?;
    let reference = if cfg.reference_trace {
        Some(reference_gradient(model, x, label)?.to_vec())
    } else {
        None
    };
    Ok(ExampleGradient {
        loss: g.loss,
        measured: g.to_vec(),
        reference,
    })
}

fn batch_gradients(
    model: &PnnModel,
    devices: &[Device],
    cfg: &TrainConfig,
    data: &TrainData,
    batch: &[usize],
    first_stream: u64,
) -> Result<Vec<ExampleGradient>> {
    let threads = match cfg.threads {
        0 => std::thread::available_parallelism().map_or(1, |n| n.get()),
        t => t,
    }
    .min(batch.len());
    let run = |k: usize| {
        let i = batch[k];
        example_gradient(
            model,
            devices,
            cfg,
            &data.inputs[i],
            data.labels[i],
            first_stream + k as u64,
        )
    };
    if threads <= 1 {
        return (0..batch.len()).map(run).collect();
    }
    let chunk = batch.len().div_ceil(threads);
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..batch.len())
            .collect::<Vec<_>>()
            .chunks(chunk)
            .map(|ks| {
                let ks = ks.to_vec();
                let run = &run;
                s.spawn(move || ks.into_iter().map(run).collect::<Result<Vec<_>>>())
            })
            .collect();
        let mut out = Vec::with_capacity(batch.len());
        for h in handles {
            out.extend(h.join().expect("gradient worker panicked")?);
        }
        Ok(out)
    })
}

fn mean(vectors: impl Iterator<Item = Vec<f64>>, n: usize, count: usize) -> Vec<f64> {
    let mut acc = vec![0.0; n];
    for v in vectors {
        for (a, b) in acc.iter_mut().zip(v) {
            *a += b;
        }
    }
    acc.into_iter().map(|a| a / count as f64).collect()
}

/// Trains `model` in place. Batches are drawn without replacement from a
/// per-epoch shuffle of the train split; each example's measurement noise
/// has its own random stream, so the log depends only on the config and seed.
pub fn train(model: &mut PnnModel, data: &TrainData, cfg: &TrainConfig) -> Result<TrainLog> {
    cfg.validate()?;
    if data.n_modes() != model.n_modes() {
        return Err(Error::DimensionMismatch {
            expected: model.n_modes(),
            found: data.n_modes(),
        });
    }
    if data.train.is_empty() {
        return Err(Error::InvalidArgument("the train split is empty".into()));
    }
    let devices = model_devices(model, &cfg.readout)?;
    let mut adam = AdamState::new(model.n_params(), cfg.adam)?;
    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order = data.train.clone();
    order.shuffle(&mut order_rng);
    let mut cursor = 0;
    let start = Instant::now();
    let mut iterations = Vec::with_capacity(cfg.iterations);
    // stream 0 orders the data; streams from 2 on belong to examples
    let eval_seed = cfg.seed.wrapping_add(1);

    for it in 0..cfg.iterations {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        while batch.len() < cfg.batch_size {
            if cursor == order.len() {
                order.shuffle(&mut order_rng);
                cursor = 0;
            }
            batch.push(order[cursor]);
            cursor += 1;
        }
        let first_stream = 2 + (it * cfg.batch_size) as u64;
        let grads = batch_gradients(model, &devices, cfg, data, &batch, first_stream)?;
        let n = model.n_params();
        let b = grads.len();
        let batch_cost = grads.iter().map(|g| g.loss).sum::<f64>() / b as f64;
        let measured = mean(grads.iter().map(|g| g.measured.clone()), n, b);
        let gradient_direction_error = if cfg.reference_trace {
            let reference = mean(grads.iter().filter_map(|g| g.reference.clone()), n, b);
            gradient_direction_error(&reference, &measured).ok()
        } else {
            None
        };
        if measured.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite gradient at iteration {it}"
            )));
        }
        let delta = adam.step(&measured)?;
        model.apply_delta(&delta)?;

        let mut log = IterationLog {
            iteration: it,
            batch_cost,
            gradient_direction_error,
            model_train_cost: None,
            model_test_cost: None,
            model_train_accuracy: None,
            model_test_accuracy: None,
            device_test_accuracy: None,
            wall_time_s: 0.0,
        };
        let last = it + 1 == cfg.iterations;
        if last || (cfg.eval_every > 0 && (it + 1) % cfg.eval_every == 0) {
            let e = evaluate_model(model, data)?;
            log.model_train_cost = Some(e.train_cost);
            log.model_test_cost = Some(e.test_cost);
            log.model_train_accuracy = Some(e.train_accuracy);
            log.model_test_accuracy = Some(e.test_accuracy);
            log.device_test_accuracy = Some(device_accuracy(
                model, &devices, data, &data.test, eval_seed,
            )?);
        }
        log.wall_time_s = start.elapsed().as_secs_f64();
        iterations.push(log);
    }

    let final_model = evaluate_model(model, data)?;
    let final_device_test_accuracy = device_accuracy(model, &devices, data, &data.test, eval_seed)?;
    Ok(TrainLog {
        seed: cfg.seed,
        iterations,
        final_model,
        final_device_test_accuracy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hardware::noise::HardwareErrorConfig;
    use crate::training::dataset::{make_dataset, DatasetKind};
    use crate::training::model::Head;
    use crate::vector_io::ReadoutMode;

    fn setup(seed: u64) -> (PnnModel, TrainData) {
        let data = make_dataset(DatasetKind::Circle, 100, 0.05, seed).unwrap();
        let data = TrainData::from_dataset(&data, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = PnnModel::random(4, 2, Head::softmax2(), &mut rng).unwrap();
        (model, data)
    }

    #[test]
    fn runs_are_reproducible() {
        let (model, data) = setup(1);
        let readout = ReadoutConfig {
            mode: ReadoutMode::SelfConfigure,
            error: HardwareErrorConfig {
                snr_db: 30.0,
                a_error: 0.01,
                ..HardwareErrorConfig::ideal()
            },
        };
        let cfg = TrainConfig {
            iterations: 12,
            batch_size: 3,
            readout,
            ..TrainConfig::default()
        };
        let (mut a, mut b) = (model.clone(), model.clone());
        let la = train(&mut a, &data, &cfg).unwrap();
        let lb = train(
            &mut b,
            &data,
            &TrainConfig {
                threads: 3,
                ..cfg.clone()
            },
        )
        .unwrap();
        assert_eq!(la.without_timing(), lb.without_timing());
        assert_eq!(a, b);
        assert!(la.iterations[9].model_test_accuracy.is_some());
        assert!(la.iterations[8].model_test_accuracy.is_none());
        assert!(la.mean_gradient_error().unwrap() > 0.0);
    }

    #[test]
    fn ideal_insitu_follows_the_reference_trajectory() {
        let (model, data) = setup(2);
        let cfg = TrainConfig {
            iterations: 30,
            ..TrainConfig::default()
        };
        let mut a = model.clone();
        let mut b = model.clone();
        let la = train(&mut a, &data, &cfg).unwrap();
        train(
            &mut b,
            &data,
            &TrainConfig {
                method: GradientMethod::Reference,
                ..cfg
            },
        )
        .unwrap();
        for (p, q) in a.params().iter().zip(b.params()) {
            assert!((p - q).abs() < 1e-6);
        }
        assert!(la.mean_gradient_error().unwrap() < 1e-10);
    }

    #[test]
    fn jsonl_has_one_record_per_iteration() {
        let (mut model, data) = setup(3);
        let cfg = TrainConfig {
            iterations: 5,
            ..TrainConfig::default()
        };
        let log = train(&mut model, &data, &cfg).unwrap();
        let mut buf = Vec::new();
        log.write_jsonl(&mut buf, "abc").unwrap();
        let lines: Vec<serde_json::Value> = String::from_utf8(buf)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[4]["iteration"], 4);
        assert_eq!(lines[0]["config_hash"], "abc");
    }

    #[test]
    fn rejects_bad_configs() {
        let (mut model, data) = setup(4);
        let cfg = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(train(&mut model, &data, &cfg).is_err());
        let mut wide =
            PnnModel::random(6, 1, Head::softmax2(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(train(&mut wide, &data, &TrainConfig::default()).is_err());
    }
}
