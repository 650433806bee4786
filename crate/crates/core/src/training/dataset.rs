//! Labelled point sets for the two-class toy tasks.

use std::f64::consts::PI;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mode::ModeVector;

/// Fraction of the points used for training.
pub const TRAIN_FRACTION: f64 = 0.8;
/// Data is mapped into the disk of squared radius `INPUT_MARGIN · P`.
pub const INPUT_MARGIN: f64 = 0.8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Circle,
    Moons,
    Ring,
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DatasetKind::Circle => "circle",
            DatasetKind::Moons => "moons",
            DatasetKind::Ring => "ring",
        })
    }
}

impl FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "circle" => Ok(DatasetKind::Circle),
            "moons" => Ok(DatasetKind::Moons),
            "ring" => Ok(DatasetKind::Ring),
            other => Err(Error::InvalidArgument(format!(
                "unknown dataset kind `{other}`"
            ))),
        }
    }
}

/// Shape parameters of the generators.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShapeParams {
    /// Circle: class 0 inside this radius, class 1 in the annulus out to `outer_radius`.
    pub inner_radius: f64,
    pub outer_radius: f64,
    /// Ring: class 1 for radii in `[ring_inner, ring_outer]`, points drawn in the unit disk.
    pub ring_inner: f64,
    pub ring_outer: f64,
    /// Moons: horizontal and vertical offset of the second half circle.
    pub moon_shift_x: f64,
    pub moon_shift_y: f64,
}

impl Default for ShapeParams {
    fn default() -> Self {
        Self {
            inner_radius: 0.5,
            outer_radius: 1.0,
            ring_inner: 0.4,
            ring_outer: 0.75,
            moon_shift_x: 1.0,
            moon_shift_y: 0.5,
        }
    }
}

/// Points with class labels and a fixed train/test split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub points: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub n_classes: usize,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl Dataset {
    /// Checks shapes and splits `0..n` into train/test with a seeded shuffle.
    pub fn new(
        points: Vec<Vec<f64>>,
        labels: Vec<usize>,
        n_classes: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        let mut order: Vec<usize> = (0..points.len()).collect();
        order.shuffle(&mut rng);
        let n_train = (points.len() as f64 * TRAIN_FRACTION).round() as usize;
        let test = order.split_off(n_train);
        Self::with_split(points, labels, n_classes, order, test)
    }

    pub fn with_split(
        points: Vec<Vec<f64>>,
        labels: Vec<usize>,
        n_classes: usize,
        train: Vec<usize>,
        test: Vec<usize>,
    ) -> Result<Self> {
        if points.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: points.len(),
                found: labels.len(),
            });
        }
        if labels.iter().any(|&l| l >= n_classes) {
            return Err(Error::InvalidArgument("label out of range".into()));
        }
        let dim = points.first().map_or(0, Vec::len);
        if points
            .iter()
            .any(|p| p.len() != dim || p.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::InvalidArgument(
                "points must share a dimension and be finite".into(),
            ));
        }
        let mut seen = vec![false; points.len()];
        for &i in train.iter().chain(&test) {
            if i >= points.len() || std::mem::replace(&mut seen[i], true) {
                return Err(Error::InvalidArgument(
                    "split must be disjoint and in range".into(),
                ));
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::InvalidArgument(
                "split must cover every point".into(),
            ));
        }
        Ok(Self {
            points,
            labels,
            n_classes,
            train,
            test,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.first().map_or(0, Vec::len)
    }

    pub fn one_hot(&self, i: usize) -> Vec<f64> {
        (0..self.n_classes)
            .map(|c| f64::from(u8::from(c == self.labels[i])))
            .collect()
    }

    /// Maps every point affinely into the disk of squared radius `margin · power`.
    /// The map is a uniform scale about the bounding-box center.
    pub fn rescaled(&self, power: f64, margin: f64) -> Result<Dataset> {
        if self.dim() != 2 {
            return Err(Error::InvalidArgument(
                "rescaling is defined for 2-d points".into(),
            ));
        }
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for p in &self.points {
            for k in 0..2 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        let center = [(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0];
        let radius = self
            .points
            .iter()
            .map(|p| (p[0] - center[0]).hypot(p[1] - center[1]))
            .fold(0.0, f64::max);
        let target = (margin * power).sqrt();
        let scale = if radius > 0.0 { target / radius } else { 1.0 };
        let mut out = self.clone();
        for p in &mut out.points {
            p[0] = (p[0] - center[0]) * scale;
            p[1] = (p[1] - center[1]) * scale;
        }
        Ok(out)
    }

    /// Model inputs for every point, ready for a 4-mode model.
    pub fn model_inputs(&self, power: f64) -> Result<Vec<ModeVector>> {
        self.points.iter().map(|p| format_input(p, power)).collect()
    }

    /// Writes `x1,x2,label` rows after a `# kind=… seed=… noise=…` header.
    pub fn write_csv<W: Write>(&self, mut w: W, header: &str) -> Result<()> {
        writeln!(w, "# {header}")?;
        for (p, l) in self.points.iter().zip(&self.labels) {
            let cols: Vec<String> = p.iter().map(|v| format!("{v:.17e}")).collect();
            writeln!(w, "{},{l}", cols.join(","))?;
        }
        Ok(())
    }

    /// Reads rows written by [`Dataset::write_csv`]; lines starting with `#` are skipped.
    pub fn read_csv<R: BufRead>(r: R, seed: u64) -> Result<Dataset> {
        let mut points = Vec::new();
        let mut labels = Vec::new();
        for (line_no, line) in r.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = || {
                Error::Data(format!(
                    "line {}: expected numeric columns and a label",
                    line_no + 1
                ))
            };
            let cols: Vec<&str> = line
                .split([',', '\t', ' '])
                .filter(|s| !s.is_empty())
                .collect();
            let (label, coords) = cols.split_last().ok_or_else(bad)?;
            if coords.is_empty() {
                return Err(bad());
            }
            let point = coords
                .iter()
                .map(|c| c.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| bad())?;
            labels.push(label.parse::<usize>().map_err(|_| bad())?);
            points.push(point);
        }
        if points.is_empty() {
            return Err(Error::Data("no data rows".into()));
        }
        let n_classes = labels.iter().max().map_or(0, |m| m + 1).max(2);
        Dataset::new(points, labels, n_classes, seed)
    }
}

/// Generates `n` noisy points of the given shape and splits them 80/20.
pub fn make_dataset(kind: DatasetKind, n: usize, noise: f64, seed: u64) -> Result<Dataset> {
    make_dataset_with(kind, n, noise, seed, &ShapeParams::default())
}

pub fn make_dataset_with(
    kind: DatasetKind,
    n: usize,
    noise: f64,
    seed: u64,
    shape: &ShapeParams,
) -> Result<Dataset> {
    if n < 10 {
        return Err(Error::InvalidArgument(
            "a dataset needs at least 10 points".into(),
        ));
    }
    if !(noise.is_finite() && noise >= 0.0) {
        return Err(Error::InvalidArgument(
            "noise must be a finite value >= 0".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jitter = Normal::new(0.0, noise).expect("noise validated");
    let mut points = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let (p, label) = match kind {
            DatasetKind::Circle => {
                // equal class sizes; radii uniform in area within each region
                let label = i % 2;
                let (r0, r1) = if label == 0 {
                    (0.0, shape.inner_radius)
                } else {
                    (shape.inner_radius, shape.outer_radius)
                };
                let r = rng.random_range(r0 * r0..r1 * r1).sqrt();
                let a = rng.random_range(0.0..2.0 * PI);
                ([r * a.cos(), r * a.sin()], label)
            }
            DatasetKind::Ring => {
                let r = rng.random_range(0.0f64..1.0).sqrt();
                let a = rng.random_range(0.0..2.0 * PI);
                let label = usize::from(r >= shape.ring_inner && r <= shape.ring_outer);
                ([r * a.cos(), r * a.sin()], label)
            }
            DatasetKind::Moons => {
                let label = i % 2;
                let t = rng.random_range(0.0..PI);
                let p = if label == 0 {
                    [t.cos(), t.sin()]
                } else {
                    [shape.moon_shift_x - t.cos(), shape.moon_shift_y - t.sin()]
                };
                (p, label)
            }
        };
        points.push(vec![
            p[0] + jitter.sample(&mut rng),
            p[1] + jitter.sample(&mut rng),
        ]);
        labels.push(label);
    }
    Dataset::new(points, labels, 2, seed)
}

/// `(x1, x2, p, p)` with `p = √((P - x1² - x2²)/2)`, so the squared norm is `P`.
pub fn format_input(point: &[f64], power: f64) -> Result<ModeVector> {
    if point.len() != 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            found: point.len(),
        });
    }
    let r2 = point[0] * point[0] + point[1] * point[1];
    if power.is_nan() || power <= 0.0 || r2 > power {
        return Err(Error::InvalidArgument(format!(
            "point with squared radius {r2} does not fit in power {power}"
        )));
    }
    let p = ((power - r2) / 2.0).sqrt();
    Ok(ModeVector::from_real(&[point[0], point[1], p, p]))
}
