//! Voltage-to-phase calibration of thermal phase shifters.
//!
//! A heater at voltage `v` produces `θ(v) = p0 v³ + p1 v² + p2 v + p3`. A
//! calibration sweep records the split ratio `t = a sin θ(v) + b` of an MZI
//! while one shifter is swept, and the fit recovers `(a, b, p)`. The inverse
//! map uses a cubic fit of `v²` against `θ` as a starting point for Newton
//! iterations.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hardware::noise::{HardwareErrorConfig, PowerMonitor};
use crate::mesh::{fields_before_node, mzi_transfer, route_to_mzi, MeshPhases, MeshTopology};
use crate::mode::{wrap_2pi, wrap_pi, ModeVector};

/// Detector readings in a sweep are anchored at the intensity of one of the
/// two MZI outputs carrying equal power.
const SWEEP_REFERENCE_MODES: usize = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationModel {
    /// `(p0, p1, p2, p3)` of `θ(v) = p0 v³ + p1 v² + p2 v + p3`.
    pub p_coeffs: [f64; 4],
    /// `(q0, q1, q2, q3)` of `v² ≈ q0 θ³ + q1 θ² + q2 θ + q3`.
    pub q_coeffs: [f64; 4],
    pub t_amp: f64,
    pub t_offset: f64,
    pub v_range: (f64, f64),
    /// RMS phase residual of the fit that produced this model, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit_rms: Option<f64>,
}

/// One point of a calibration sweep: voltage and measured split ratio.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSample {
    pub v: f64,
    pub t: f64,
}

fn cubic(c: &[f64; 4], x: f64) -> f64 {
    ((c[0] * x + c[1]) * x + c[2]) * x + c[3]
}

fn cubic_slope(c: &[f64; 4], x: f64) -> f64 {
    (3.0 * c[0] * x + 2.0 * c[1]) * x + c[2]
}

/// Least-squares cubic `y ≈ c0 x³ + c1 x² + c2 x + c3`.
fn fit_cubic(xs: &[f64], ys: &[f64]) -> Result<[f64; 4]> {
    let a = DMatrix::from_fn(xs.len(), 4, |r, c| xs[r].powi(3 - c as i32));
    let b = DVector::from_column_slice(ys);
    let sol = a
        .svd(true, true)
        .solve(&b, 1e-14)
        .map_err(|e| Error::FitFailed(e.to_string()))?;
    Ok([sol[0], sol[1], sol[2], sol[3]])
}

impl CalibrationModel {
    /// Validated model with a fitted inverse. θ(v) must be strictly monotonic on
    /// `v_range` and cover at least 2π.
    pub fn new(p_coeffs: [f64; 4], t_amp: f64, t_offset: f64, v_range: (f64, f64)) -> Result<Self> {
        let (lo, hi) = v_range;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::InvalidCalibration(format!(
                "bad voltage range {lo}..{hi}"
            )));
        }
        if p_coeffs
            .iter()
            .chain([&t_amp, &t_offset])
            .any(|c| !c.is_finite())
        {
            return Err(Error::InvalidCalibration("non-finite coefficient".into()));
        }
        let mut probes = vec![lo, hi];
        if p_coeffs[0] != 0.0 {
            let vertex = -p_coeffs[1] / (3.0 * p_coeffs[0]);
            if vertex > lo && vertex < hi {
                probes.push(vertex);
            }
        }
        let slopes: Vec<f64> = probes.iter().map(|&v| cubic_slope(&p_coeffs, v)).collect();
        if !(slopes.iter().all(|&s| s > 0.0) || slopes.iter().all(|&s| s < 0.0)) {
            return Err(Error::InvalidCalibration(
                "θ(v) is not monotonic on the range".into(),
            ));
        }
        let span = (cubic(&p_coeffs, hi) - cubic(&p_coeffs, lo)).abs();
        if span < TAU {
            return Err(Error::InvalidCalibration(format!(
                "phase span {span:.3} rad is below 2π"
            )));
        }
        let mut model = Self {
            p_coeffs,
            q_coeffs: [0.0; 4],
            t_amp,
            t_offset,
            v_range,
            fit_rms: None,
        };
        let (thetas, vsq): (Vec<f64>, Vec<f64>) = (0..64)
            .map(|k| {
                let v = lo + (hi - lo) * k as f64 / 63.0;
                (cubic(&p_coeffs, v), v * v)
            })
            .unzip();
        model.q_coeffs = fit_cubic(&thetas, &vsq)?;
        Ok(model)
    }

    /// Synthetic heater spanning about 2.6π over 0–5 V.
    pub fn default_true_model() -> Self {
        Self::new([0.003, 0.3, 0.05, 0.1], 0.5, 0.5, (0.0, 5.0)).expect("default model is valid")
    }

    /// Unreduced phase at voltage `v`.
    pub fn phase_from_voltage(&self, v: f64) -> Result<f64> {
        let (lo, hi) = self.v_range;
        let tol = 1e-12 * (hi - lo).abs().max(1.0);
        if !(v >= lo - tol && v <= hi + tol) {
            return Err(Error::VoltageOutOfRange {
                voltage: v,
                min: lo,
                max: hi,
            });
        }
        Ok(cubic(&self.p_coeffs, v))
    }

    /// Split ratio `a sin θ(v) + b`.
    pub fn transmission(&self, v: f64) -> Result<f64> {
        Ok(self.t_amp * self.phase_from_voltage(v)?.sin() + self.t_offset)
    }

    fn phase_bounds(&self) -> (f64, f64) {
        let a = cubic(&self.p_coeffs, self.v_range.0);
        let b = cubic(&self.p_coeffs, self.v_range.1);
        (a.min(b), a.max(b))
    }

    /// Lowest-phase voltage realizing `theta` modulo 2π.
    pub fn voltage_from_phase(&self, theta: f64) -> Result<f64> {
        if !theta.is_finite() {
            return Err(Error::UnreachablePhase { phase: theta });
        }
        let (pmin, pmax) = self.phase_bounds();
        let target = pmin + wrap_2pi(theta - pmin);
        if target > pmax + 1e-12 {
            return Err(Error::UnreachablePhase { phase: theta });
        }
        let (lo, hi) = self.v_range;
        let increasing = cubic(&self.p_coeffs, hi) > cubic(&self.p_coeffs, lo);
        let f = |v: f64| {
            let d = cubic(&self.p_coeffs, v) - target;
            if increasing {
                d
            } else {
                -d
            }
        };
        let guess = cubic(&self.q_coeffs, target).max(0.0).sqrt();
        let mut v = if guess.is_finite() {
            guess.clamp(lo, hi)
        } else {
            0.5 * (lo + hi)
        };
        let (mut a, mut b) = (lo, hi);
        for _ in 0..200 {
            let fv = f(v);
            if fv.abs() < 1e-13 {
                return Ok(v);
            }
            if fv < 0.0 {
                a = v;
            } else {
                b = v;
            }
            let slope = cubic_slope(&self.p_coeffs, v) * if increasing { 1.0 } else { -1.0 };
            let newton = v - fv / slope;
            v = if slope > 0.0 && newton > a && newton < b {
                newton
            } else {
                0.5 * (a + b)
            };
            if b - a < 1e-15 * hi.abs().max(1.0) {
                break;
            }
        }
        if f(v).abs() < 1e-9 {
            Ok(v)
        } else {
            Err(Error::UnreachablePhase { phase: theta })
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidCalibration(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let raw: Self =
            toml::from_str(text).map_err(|e| Error::InvalidCalibration(e.to_string()))?;
        let mut model = Self::new(raw.p_coeffs, raw.t_amp, raw.t_offset, raw.v_range)?;
        model.fit_rms = raw.fit_rms;
        Ok(model)
    }
}

/// Splits `top`/`bottom` output powers into a measured ratio.
fn measured_ratio<R: Rng + ?Sized>(
    top: f64,
    bottom: f64,
    monitor: &PowerMonitor,
    rng: &mut R,
) -> f64 {
    let pt = monitor.measure(top, 0, rng);
    let pb = monitor.measure(bottom, 1, rng);
    if pt + pb > 0.0 {
        pt / (pt + pb)
    } else {
        0.5
    }
}

fn sweep_voltages(model: &CalibrationModel, n_points: usize) -> Result<Vec<f64>> {
    if n_points < 8 {
        return Err(Error::InvalidArgument(
            "a calibration sweep needs at least 8 points".into(),
        ));
    }
    let (lo, hi) = model.v_range;
    Ok((0..n_points)
        .map(|k| lo + (hi - lo) * k as f64 / (n_points - 1) as f64)
        .collect())
}

/// Sweep of an isolated MZI whose split ratio follows the model exactly.
pub fn simulate_calibration_sweep<R: Rng + ?Sized>(
    true_model: &CalibrationModel,
    n_points: usize,
    cfg: &HardwareErrorConfig,
    rng: &mut R,
) -> Result<Vec<CalibrationSample>> {
    let monitor = PowerMonitor::new(cfg, 2, SWEEP_REFERENCE_MODES, 0);
    sweep_voltages(true_model, n_points)?
        .into_iter()
        .map(|v| {
            let t = true_model.transmission(v)?;
            Ok(CalibrationSample {
                v,
                t: measured_ratio(t, 1.0 - t, &monitor, rng),
            })
        })
        .collect()
}

fn output_split(
    before: &ModeVector,
    top: usize,
    theta: f64,
    phi: f64,
    topology: &MeshTopology,
) -> (f64, f64) {
    let t = mzi_transfer(theta, phi, topology.variant());
    let (a, b) = (before[top], before[top + 1]);
    let y1 = t[(0, 0)] * a + t[(0, 1)] * b;
    let y2 = t[(1, 0)] * a + t[(1, 1)] * b;
    (y1.norm_sqr(), y2.norm_sqr())
}

/// Sweeps the θ shifter of node `target` with light routed to its top input.
/// The top output fraction is `sin²(θ/2) = ½ sin(θ - π/2) + ½`.
pub fn theta_sweep_in_mesh<R: Rng + ?Sized>(
    topology: &MeshTopology,
    target: usize,
    true_model: &CalibrationModel,
    n_points: usize,
    cfg: &HardwareErrorConfig,
    rng: &mut R,
) -> Result<Vec<CalibrationSample>> {
    let phases = route_to_mzi(topology, target)?;
    let before = fields_before_node(
        topology,
        &phases,
        &ModeVector::basis(topology.n_modes(), 0),
        target,
    )?;
    let top = topology.nodes()[target].top;
    let monitor = PowerMonitor::new(cfg, 2, SWEEP_REFERENCE_MODES, target as u64);
    sweep_voltages(true_model, n_points)?
        .into_iter()
        .map(|v| {
            let theta = true_model.phase_from_voltage(v)?;
            let (p1, p2) = output_split(&before, top, theta, phases.phi[target], topology);
            Ok(CalibrationSample {
                v,
                t: measured_ratio(p1, p2, &monitor, rng),
            })
        })
        .collect()
}

/// Phases and input for a φ sweep of `target`: its two inputs carry equal
/// power, split either by the upstream MZI on the same waveguide pair or by
/// the generator, and the target MZI itself is balanced.
pub fn meta_mzi_setup(topology: &MeshTopology, target: usize) -> Result<(MeshPhases, ModeVector)> {
    let nodes = topology.nodes();
    if target >= nodes.len() {
        return Err(Error::InvalidArgument(format!("no node {target}")));
    }
    let top = nodes[target].top;
    let n = topology.n_modes();
    let upstream = (0..target).rev().find(|&k| nodes[k].top == top);
    let (mut phases, input) = match upstream {
        Some(j) => {
            let mut p = route_to_mzi(topology, j)?;
            p.theta[j] = FRAC_PI_2;
            p.phi[j] = 0.0;
            (p, ModeVector::basis(n, 0))
        }
        None => {
            let mut x = ModeVector::zeros(n);
            x[top] = std::f64::consts::FRAC_1_SQRT_2.into();
            x[top + 1] = std::f64::consts::FRAC_1_SQRT_2.into();
            (MeshPhases::bar(topology), x)
        }
    };
    phases.theta[target] = FRAC_PI_2;
    Ok((phases, input))
}

/// Sweeps the φ shifter of node `target` inside a meta-MZI.
pub fn phi_sweep_in_mesh<R: Rng + ?Sized>(
    topology: &MeshTopology,
    target: usize,
    true_model: &CalibrationModel,
    n_points: usize,
    cfg: &HardwareErrorConfig,
    rng: &mut R,
) -> Result<Vec<CalibrationSample>> {
    let (phases, input) = meta_mzi_setup(topology, target)?;
    let before = fields_before_node(topology, &phases, &input, target)?;
    let top = topology.nodes()[target].top;
    let monitor = PowerMonitor::new(cfg, 2, SWEEP_REFERENCE_MODES, (1 << 32) + target as u64);
    sweep_voltages(true_model, n_points)?
        .into_iter()
        .map(|v| {
            let phi = true_model.phase_from_voltage(v)?;
            let (p1, p2) = output_split(&before, top, FRAC_PI_2, phi, topology);
            Ok(CalibrationSample {
                v,
                t: measured_ratio(p1, p2, &monitor, rng),
            })
        })
        .collect()
}

fn moving_average(xs: &[f64], half: usize) -> Vec<f64> {
    (0..xs.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(xs.len());
            xs[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

/// Whether the trace has both an interior peak and an interior valley that
/// stand out from their surroundings by at least `prominence`.
fn has_turning_points(xs: &[f64], prominence: f64) -> bool {
    let n = xs.len();
    let k = (n / 50).max(1);
    let (mut peak, mut valley) = (false, false);
    for i in k..n.saturating_sub(k) {
        let window = &xs[i - k..=i + k];
        let hi = window.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lo = window.iter().cloned().fold(f64::INFINITY, f64::min);
        let before = &xs[..i];
        let after = &xs[i + 1..];
        let min_of = |s: &[f64]| s.iter().cloned().fold(f64::INFINITY, f64::min);
        let max_of = |s: &[f64]| s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if xs[i] == hi && xs[i] - min_of(before).max(min_of(after)) > prominence {
            peak = true;
        }
        if xs[i] == lo && min_of(&[max_of(before), max_of(after)]) - xs[i] > prominence {
            valley = true;
        }
    }
    peak && valley
}

/// Monotone (non-decreasing) branch of `asin(s_i)` following a linear prediction.
fn unwrap_increasing(s: &[f64]) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::with_capacity(s.len());
    for (i, &si) in s.iter().enumerate() {
        let base = si.clamp(-1.0, 1.0).asin();
        if i == 0 {
            out.push(base);
            continue;
        }
        let prev = out[i - 1];
        let step = if i >= 2 {
            (prev - out[i - 2]).max(0.0)
        } else {
            0.0
        };
        let predicted = prev + step;
        let mut best = f64::NAN;
        let mut best_dist = f64::INFINITY;
        let k0 = ((prev - PI) / TAU).floor() as i64 - 1;
        for k in k0..k0 + 4 {
            for cand in [base + TAU * k as f64, PI - base + TAU * k as f64] {
                if cand < prev - 1e-12 {
                    continue;
                }
                let d = (cand - predicted).abs();
                if d < best_dist {
                    best_dist = d;
                    best = cand;
                }
            }
        }
        out.push(best);
    }
    out
}

/// Expands `Σ c_k ((v - m)/h)^(3-k)` into powers of `v`.
fn denormalize(c: &[f64; 4], m: f64, h: f64) -> [f64; 4] {
    // coefficients of v^3, v^2, v^1, v^0
    let mut out = [0.0; 4];
    for (k, &ck) in c.iter().enumerate() {
        let deg = 3 - k;
        let scale = ck / h.powi(deg as i32);
        // (v - m)^deg = Σ_j C(deg, j) v^j (-m)^(deg-j)
        for j in 0..=deg {
            let coeff = binomial(deg, j) * (-m).powi((deg - j) as i32);
            out[3 - j] += scale * coeff;
        }
    }
    out
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Fits `t = a sin θ(v) + b` with cubic `θ(v)` to a sweep.
pub fn fit_calibration(samples: &[CalibrationSample]) -> Result<CalibrationModel> {
    if samples.len() < 8 {
        return Err(Error::FitFailed("need at least 8 samples".into()));
    }
    let mut pts = samples.to_vec();
    if pts.iter().any(|p| !(p.v.is_finite() && p.t.is_finite())) {
        return Err(Error::FitFailed("non-finite sample".into()));
    }
    pts.sort_by(|a, b| a.v.total_cmp(&b.v));
    let vs: Vec<f64> = pts.iter().map(|p| p.v).collect();
    let ts: Vec<f64> = pts.iter().map(|p| p.t).collect();
    let n = pts.len();
    let (vlo, vhi) = (vs[0], vs[n - 1]);
    if vhi.is_nan() || vlo.is_nan() || vhi <= vlo {
        return Err(Error::FitFailed("sweep has no voltage extent".into()));
    }

    let smooth = moving_average(&ts, (n / 100).max(1));
    let (_, tmax) = smooth
        .iter()
        .enumerate()
        .fold(
            (0, f64::NEG_INFINITY),
            |acc, (i, &t)| if t > acc.1 { (i, t) } else { acc },
        );
    let (_, tmin) =
        smooth.iter().enumerate().fold(
            (0, f64::INFINITY),
            |acc, (i, &t)| if t < acc.1 { (i, t) } else { acc },
        );
    if tmax - tmin < 1e-9 || !has_turning_points(&smooth, 0.2 * (tmax - tmin)) {
        return Err(Error::InsufficientPhaseSpan);
    }
    let a0 = 0.5 * (tmax - tmin);
    let b0 = 0.5 * (tmax + tmin);
    let s: Vec<f64> = ts.iter().map(|t| (t - b0) / a0).collect();
    let unwrapped = unwrap_increasing(&s);
    if unwrapped[n - 1] - unwrapped[0] < PI {
        return Err(Error::InsufficientPhaseSpan);
    }

    // Work in a normalized voltage for conditioning.
    let mid = 0.5 * (vlo + vhi);
    let half = 0.5 * (vhi - vlo);
    let us: Vec<f64> = vs.iter().map(|v| (v - mid) / half).collect();
    let c0 = fit_cubic(&us, &unwrapped)?;

    let mut params = [a0, b0, c0[0], c0[1], c0[2], c0[3]];
    let residuals = |p: &[f64; 6]| -> Vec<f64> {
        let c = [p[2], p[3], p[4], p[5]];
        us.iter()
            .zip(&ts)
            .map(|(&u, &t)| t - (p[0] * cubic(&c, u).sin() + p[1]))
            .collect()
    };
    let cost = |r: &[f64]| r.iter().map(|x| x * x).sum::<f64>();
    let mut r = residuals(&params);
    let mut current = cost(&r);
    let mut lambda = 1e-3;
    for _ in 0..500 {
        let c = [params[2], params[3], params[4], params[5]];
        let jac = DMatrix::from_fn(n, 6, |i, k| {
            let u = us[i];
            let th = cubic(&c, u);
            match k {
                0 => th.sin(),
                1 => 1.0,
                _ => params[0] * th.cos() * u.powi(5 - k as i32),
            }
        });
        let jt = jac.transpose();
        let jtj = &jt * &jac;
        let jtr = &jt * DVector::from_vec(r.clone());
        let mut improved = false;
        for _ in 0..20 {
            let mut lhs = jtj.clone();
            for d in 0..6 {
                lhs[(d, d)] += lambda * jtj[(d, d)].max(1e-12);
            }
            let Some(step) = lhs.lu().solve(&jtr) else {
                lambda *= 10.0;
                continue;
            };
            let mut trial = params;
            for d in 0..6 {
                trial[d] += step[d];
            }
            let rt = residuals(&trial);
            let ct = cost(&rt);
            if ct < current {
                let rel = (current - ct) / current.max(1e-300);
                params = trial;
                r = rt;
                current = ct;
                lambda = (lambda / 10.0).max(1e-12);
                improved = rel > 1e-14;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    if !params.iter().all(|p| p.is_finite()) {
        return Err(Error::FitFailed("non-finite parameters".into()));
    }

    let mut c = [params[2], params[3], params[4], params[5]];
    let mut a = params[0];
    if a < 0.0 {
        a = -a;
        c[3] += PI;
    }
    let mut p = denormalize(&c, mid, half);
    // keep the offset phase in [0, 2π)
    p[3] = wrap_2pi(p[3]);

    let fitted: Vec<f64> = vs.iter().map(|&v| cubic(&p, v)).collect();
    let rms = (fitted
        .iter()
        .zip(&unwrapped)
        .map(|(f, u)| wrap_pi(f - u).powi(2))
        .sum::<f64>()
        / n as f64)
        .sqrt();
    let mut model = CalibrationModel::new(p, a, params[1], (vlo, vhi)).map_err(|e| match e {
        Error::InvalidCalibration(msg) if msg.contains("span") => Error::InsufficientPhaseSpan,
        other => Error::FitFailed(other.to_string()),
    })?;
    model.fit_rms = Some(rms);
    Ok(model)
}

/// RMS of the wrapped phase difference between two models on a common grid.
pub fn phase_rms_error(fitted: &CalibrationModel, truth: &CalibrationModel, n_grid: usize) -> f64 {
    let (lo, hi) = truth.v_range;
    let n = n_grid.max(2);
    let sum: f64 = (0..n)
        .map(|k| {
            let v = lo + (hi - lo) * k as f64 / (n - 1) as f64;
            wrap_pi(cubic(&fitted.p_coeffs, v) - cubic(&truth.p_coeffs, v)).powi(2)
        })
        .sum();
    (sum / n as f64).sqrt()
}
