//! One function per subcommand. Each returns the lines of its report.

use std::fs::File;
use std::io::{BufReader, Write};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use insitu_core::backprop::{finite_difference_gradient, max_relative_error};
use insitu_core::hardware::calibration::{
    fit_calibration, phase_rms_error, simulate_calibration_sweep,
};
use insitu_core::training::{
    gradient_direction_error, load_mnist64, make_dataset_with, perturb_phases, Evaluation,
    Nonlinearity,
};
use insitu_core::{
    dft_matrix, energy_estimate, insitu_gradient, model_devices, phases_from_unitary,
    reference_gradient, CalibrationModel, Dataset, DatasetKind, EnergyScheme, GradientMethod,
    HardwareErrorConfig, Head, MeshTopology, ModeVector, PnnModel, ReadoutConfig, TrainData,
};

use crate::config::{DataSource, ExperimentConfig};
use crate::error::CliError;
use crate::output::{cell, num, OutputDir};

/// Grid used to score a fitted calibration against the truth.
const CALIBRATION_GRID: usize = 1001;

pub fn load_dataset(cfg: &ExperimentConfig) -> Result<Dataset, CliError> {
    let d = &cfg.dataset;
    let seed = d.seed.unwrap_or(cfg.seed);
    let kind = match d.kind {
        DataSource::Circle => DatasetKind::Circle,
        DataSource::Moons => DatasetKind::Moons,
        DataSource::Ring => DatasetKind::Ring,
        DataSource::Mnist64 => {
            return load_mnist64(&d.mnist_dir, Some(d.mnist_train), Some(d.mnist_test))
                .map_err(|e| CliError::Data(format!("{}: {e}", d.mnist_dir.display())));
        }
        DataSource::File => {
            let path = d.path.as_ref().expect("validated");
            let f =
                File::open(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
            return Dataset::read_csv(BufReader::new(f), seed)
                .map_err(|e| CliError::Data(format!("{}: {e}", path.display())));
        }
    };
    make_dataset_with(kind, d.n, d.noise, seed, &d.shape)
        .map_err(|e| CliError::Config(e.to_string()))
}

/// Model sized for the data, with random phases drawn from the run seed.
pub fn build_model(
    cfg: &ExperimentConfig,
    data: &TrainData,
    n_classes: usize,
) -> Result<PnnModel, CliError> {
    let n = data.n_modes();
    if let Some(m) = cfg.model.n_modes {
        if m != n {
            return Err(CliError::Config(format!(
                "model.n_modes = {m} but the data needs {n} modes"
            )));
        }
    }
    let head = if n == 4 && n_classes == 2 {
        Head::softmax2()
    } else if n_classes <= n {
        Head::per_mode(n_classes, cfg.model.softmax_scale)
    } else {
        return Err(CliError::Config(format!(
            "{n_classes} classes do not fit on {n} output modes"
        )));
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    PnnModel::random(n, cfg.model.layers, head, &mut rng)
        .map_err(|e| CliError::Config(e.to_string()))
}

fn prepare(cfg: &ExperimentConfig) -> Result<(TrainData, PnnModel), CliError> {
    let dataset = load_dataset(cfg)?;
    let data = TrainData::from_dataset(&dataset, cfg.power())
        .map_err(|e| CliError::Data(e.to_string()))?;
    let model = build_model(cfg, &data, dataset.n_classes)?;
    Ok((data, model))
}

#[derive(Serialize)]
struct TrainSummary {
    iterations: usize,
    final_model: Evaluation,
    final_device_test_accuracy: f64,
    mean_gradient_direction_error: Option<f64>,
}

pub fn train(cfg: &ExperimentConfig, out: &OutputDir) -> Result<Vec<String>, CliError> {
    let (data, mut model) = prepare(cfg)?;
    let log = train_model(&mut model, &data, &cfg.train_config())?;
    let mut f = out.create_file("train_log.jsonl")?;
    log.write_jsonl(&mut f, out.hash())?;
    f.flush()?;
    let summary = TrainSummary {
        iterations: log.iterations.len(),
        final_model: log.final_model,
        final_device_test_accuracy: log.final_device_test_accuracy,
        mean_gradient_direction_error: log.mean_gradient_error(),
    };
    out.write_json("summary.json", &summary)?;
    out.write_json("model.json", &serde_json::json!({ "model": model }))?;
    let e = log.final_model;
    let mut lines = vec![
        format!("config hash {}", out.hash()),
        format!("wrote {}", out.dir().display()),
    ];
    if let Some(g) = summary.mean_gradient_direction_error {
        lines.push(format!("mean gradient direction error {g:.4e}"));
    }
    lines.push(format!(
        "final: train accuracy {:.4}, device test accuracy {:.4}, test accuracy {:.4}",
        e.train_accuracy, log.final_device_test_accuracy, e.test_accuracy
    ));
    Ok(lines)
}

fn train_model(
    model: &mut PnnModel,
    data: &TrainData,
    tc: &insitu_core::TrainConfig,
) -> Result<insitu_core::TrainLog, CliError> {
    insitu_core::train(model, data, tc).map_err(|e| match e {
        insitu_core::Error::InvalidArgument(m) if m.starts_with("non-finite") => {
            CliError::Numerical(m)
        }
        insitu_core::Error::InvalidArgument(m) => CliError::Config(m),
        e => e.into(),
    })
}

pub fn gradcheck(cfg: &ExperimentConfig, out: &OutputDir) -> Result<Vec<String>, CliError> {
    let (data, model) = prepare(cfg)?;
    let readout = cfg.readout_config();
    let devices = model_devices(&model, &readout)?;
    let gc = &cfg.gradcheck;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut rows = Vec::with_capacity(gc.examples);
    let mut worst = 0.0f64;
    for k in 0..gc.examples {
        let i = data.train[rng.random_range(0..data.train.len())];
        let (x, label) = (&data.inputs[i], data.labels[i]);
        let g = insitu_gradient(&model, &devices, x, label, cfg.gradient, &mut rng)?;
        let fd = finite_difference_gradient(&model, x, label, gc.step)?;
        let err = max_relative_error(&g.to_vec(), &fd)?;
        worst = worst.max(err);
        rows.push(vec![
            k.to_string(),
            i.to_string(),
            label.to_string(),
            num(g.loss),
            num(err),
        ]);
    }
    out.write_tsv(
        "gradcheck.tsv",
        &["example", "index", "label", "loss", "max_relative_error"],
        &rows,
    )?;
    let pass = worst < gc.tolerance;
    let mut lines = vec![
        format!(
            "{} examples, {} parameters, step {:e}",
            gc.examples,
            model.n_params(),
            gc.step
        ),
        format!(
            "max relative error {worst:.3e} (tolerance {:.0e}): {}",
            gc.tolerance,
            if pass { "PASS" } else { "FAIL" }
        ),
    ];
    if !readout.is_ideal() {
        lines.push(
            "hardware errors are enabled, so measured gradients are not expected to pass".into(),
        );
    } else if !pass {
        return Err(CliError::Numerical(lines.join("; ")));
    }
    Ok(lines)
}

/// Independent seed for grid point `index`.
pub fn point_seed(master: u64, index: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(index as u64 + 1);
    rng.next_u64()
}

struct SweepPoint {
    panel: &'static str,
    value: f64,
    seed: u64,
    hardware: HardwareErrorConfig,
}

fn sweep_points(cfg: &ExperimentConfig) -> Vec<SweepPoint> {
    let base = HardwareErrorConfig {
        a_error: 0.0,
        p_error: 0.0,
        snr_db: f64::INFINITY,
        ..cfg.hardware.clone()
    };
    let ns = &cfg.noise_sweep;
    let mut points = Vec::new();
    let panels: [(&'static str, &Vec<f64>); 3] = [
        ("a_error", &ns.a_error),
        ("p_error", &ns.p_error),
        ("snr_db", &ns.snr_db),
    ];
    for (panel, values) in panels {
        for &value in values {
            let mut hardware = base.clone();
            match panel {
                "a_error" => hardware.a_error = value,
                "p_error" => hardware.p_error = value,
                _ => hardware.snr_db = value,
            }
            let seed = point_seed(cfg.seed, points.len());
            hardware.seed = seed;
            points.push(SweepPoint {
                panel,
                value,
                seed,
                hardware,
            });
        }
    }
    points
}

pub fn noise_sweep(cfg: &ExperimentConfig, out: &OutputDir) -> Result<Vec<String>, CliError> {
    let (data, model) = prepare(cfg)?;
    let points = sweep_points(cfg);
    for p in &points {
        p.hardware
            .validate()
            .map_err(|e| CliError::Config(format!("{} = {}: {e}", p.panel, p.value)))?;
    }
    let run_point = |p: &SweepPoint| -> Result<insitu_core::TrainLog, CliError> {
        let mut tc = cfg.train_config();
        tc.seed = p.seed;
        tc.readout = if p.hardware.is_ideal() {
            ReadoutConfig::ideal()
        } else {
            ReadoutConfig::noisy(cfg.readout.mode, p.hardware.clone())
        };
        train_model(&mut model.clone(), &data, &tc)
    };
    let mut logs = Vec::with_capacity(points.len());
    for chunk in points.chunks(cfg.noise_sweep.parallelism) {
        let results: Vec<_> = std::thread::scope(|s| {
            let handles: Vec<_> = chunk.iter().map(|p| s.spawn(|| run_point(p))).collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("sweep worker panicked"))
                .collect()
        });
        for r in results {
            logs.push(r?);
        }
    }
    let mut rows = Vec::with_capacity(points.len());
    let mut lines = Vec::with_capacity(points.len() + 1);
    for (p, log) in points.iter().zip(&logs) {
        rows.push(vec![
            p.panel.to_string(),
            num(p.value),
            p.seed.to_string(),
            num(log.final_model.train_accuracy),
            num(log.final_model.test_accuracy),
            num(log.final_device_test_accuracy),
            cell(log.mean_gradient_error()),
        ]);
        lines.push(format!(
            "{} = {}: test accuracy {:.4}, device test accuracy {:.4}",
            p.panel, p.value, log.final_model.test_accuracy, log.final_device_test_accuracy
        ));
    }
    out.write_tsv(
        "noise_sweep.tsv",
        &[
            "panel",
            "value",
            "point_seed",
            "model_train_accuracy",
            "model_test_accuracy",
            "device_test_accuracy",
            "mean_gradient_direction_error",
        ],
        &rows,
    )?;
    lines.push(format!("wrote {}", out.path("noise_sweep.tsv").display()));
    Ok(lines)
}

pub fn calibrate(cfg: &ExperimentConfig, out: &OutputDir) -> Result<Vec<String>, CliError> {
    let c = &cfg.calibrate;
    let truth = CalibrationModel::new(c.p_coeffs, c.t_amp, c.t_offset, c.v_range)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let hw = HardwareErrorConfig {
        snr_db: c.snr_db,
        seed: cfg.seed,
        ..HardwareErrorConfig::ideal()
    };
    hw.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut fits = Vec::with_capacity(c.repeats);
    let mut sweep_rows = Vec::new();
    for r in 0..c.repeats.max(1) {
        let samples = simulate_calibration_sweep(&truth, c.n_points, &hw, &mut rng)?;
        if r == 0 {
            sweep_rows = samples.iter().map(|s| vec![num(s.v), num(s.t)]).collect();
        }
        let fitted = fit_calibration(&samples)?;
        let err = phase_rms_error(&fitted, &truth, CALIBRATION_GRID);
        fits.push((err, fitted));
    }
    out.write_tsv(
        "calibration_sweep.tsv",
        &["voltage", "split_ratio"],
        &sweep_rows,
    )?;
    let rows: Vec<Vec<String>> = fits
        .iter()
        .enumerate()
        .map(|(r, (err, m))| vec![r.to_string(), num(*err), cell(m.fit_rms)])
        .collect();
    out.write_tsv(
        "calibration_fits.tsv",
        &["repeat", "phase_rms_error", "fit_residual"],
        &rows,
    )?;
    let mut order: Vec<usize> = (0..fits.len()).collect();
    order.sort_by(|&a, &b| fits[a].0.total_cmp(&fits[b].0));
    let (median_err, median_fit) = &fits[order[(order.len() - 1) / 2]];
    out.write_text("calibration.toml", '#', &median_fit.to_toml()?)?;
    Ok(vec![
        format!(
            "{} fits of {} points at {} dB",
            fits.len(),
            c.n_points,
            c.snr_db
        ),
        format!("median θ(v) RMS error {median_err:.3e} rad"),
        format!("wrote {}", out.path("calibration.toml").display()),
    ])
}

pub fn analog_demo(cfg: &ExperimentConfig, out: &OutputDir) -> Result<Vec<String>, CliError> {
    let ad = &cfg.analog_demo;
    let topology = MeshTopology::triangular(ad.n_modes);
    let u = dft_matrix(ad.n_modes);
    let optimum = phases_from_unitary(&u)?;
    let x: ModeVector = (0..ad.n_modes).map(|c| u[(ad.row, c)].conj()).collect();
    let method = GradientMethod::Analog {
        samples: ad.samples,
    };
    let readout = cfg.readout_config();
    let mut traces = Vec::new();
    let mut grads = Vec::new();
    let mut lines = Vec::new();
    for (s, &sigma) in ad.sigmas.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(s as u64);
        let phases = perturb_phases(&topology, &optimum, sigma, &mut rng)
            .map_err(|e| CliError::Config(e.to_string()))?;
        let model = PnnModel::new(
            topology.clone(),
            vec![phases],
            Nonlinearity::Abs,
            Head::Fidelity { row: ad.row },
        )?;
        let devices = model_devices(&model, &readout)?;
        let measured = insitu_gradient(&model, &devices, &x, 0, method, &mut rng)?;
        let reference = reference_gradient(&model, &x, 0)?;
        let sweep = measured.sweeps[0]
            .as_ref()
            .expect("analog method records its sweep");
        for (shifter, set) in [("theta", &sweep.theta_traces), ("phi", &sweep.phi_traces)] {
            for (node, trace) in set.iter().enumerate() {
                let (offset, _, _) = insitu_core::backprop::gradient::fit_first_harmonic(trace);
                for (k, (&zeta, &p)) in sweep.zeta.iter().zip(trace).enumerate() {
                    traces.push(vec![
                        num(sigma),
                        shifter.into(),
                        node.to_string(),
                        k.to_string(),
                        num(zeta),
                        num(p),
                        num(p - offset),
                    ]);
                }
            }
        }
        let (m, r) = (&measured.layers[0], &reference.layers[0]);
        for (shifter, mv, rv) in [("theta", &m.theta, &r.theta), ("phi", &m.phi, &r.phi)] {
            for (node, (a, b)) in mv.iter().zip(rv).enumerate() {
                grads.push(vec![
                    num(sigma),
                    shifter.into(),
                    node.to_string(),
                    num(*a),
                    num(*b),
                ]);
            }
        }
        let err = gradient_direction_error(&reference.shifter_vec(), &measured.shifter_vec()).ok();
        lines.push(format!(
            "sigma {sigma}: loss {:.4e}, gradient direction error {}",
            measured.loss,
            err.map_or("undefined (zero gradient)".into(), |e| format!("{e:.4e}"))
        ));
    }
    out.write_tsv(
        "analog_traces.tsv",
        &[
            "sigma",
            "shifter",
            "node",
            "k",
            "zeta",
            "tap_power",
            "ac_component",
        ],
        &traces,
    )?;
    out.write_tsv(
        "analog_gradients.tsv",
        &[
            "sigma",
            "shifter",
            "node",
            "analog_gradient",
            "reference_gradient",
        ],
        &grads,
    )?;
    lines.push(format!("wrote {}", out.path("analog_traces.tsv").display()));
    Ok(lines)
}

#[derive(Serialize)]
struct EnergyReport {
    params: insitu_core::EnergyParams,
    inference: f64,
    backprop_analog: f64,
    backprop_digital: f64,
}

pub fn energy(cfg: &ExperimentConfig, out: &OutputDir) -> Result<Vec<String>, CliError> {
    let p = cfg.energy;
    let report = EnergyReport {
        params: p,
        inference: energy_estimate(&p, EnergyScheme::Inference)?,
        backprop_analog: energy_estimate(&p, EnergyScheme::BackpropAnalog)?,
        backprop_digital: energy_estimate(&p, EnergyScheme::BackpropDigital)?,
    };
    out.write_json("energy.json", &report)?;
    Ok(vec![
        format!("N = {}", p.n_modes),
        format!("inference {} J", report.inference),
        format!("backprop_analog {} J", report.backprop_analog),
        format!("backprop_digital {} J", report.backprop_digital),
    ])
}
