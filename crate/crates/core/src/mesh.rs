//! Triangular MZI meshes: transfer matrices, field propagation with phase
//! shifter taps, and decomposition of unitaries into mesh phases.
//!
//! Each MZI is a φ shifter on its top input arm, a 50/50 coupler, an internal
//! shifter, and a second 50/50 coupler. With the coupler
//! `B = [[1, i], [i, 1]] / √2` the single-arm device reads
//! `T̃(θ, φ) = B · diag(1, e^{-iθ}) · B · diag(e^{iφ}, 1)`, which equals
//! `e^{-iθ/2} T(θ, φ)`. The standard (differential) variant splits θ as
//! `diag(e^{iθ/2}, e^{-iθ/2})` across both internal arms.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use nalgebra::{DMatrix, Matrix2};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mode::{wrap_2pi, ModeVector};

const I: Complex64 = Complex64::new(0.0, 1.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);
const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Default tolerance on `max |U^H U - I|` accepted by the decomposition.
pub const UNITARITY_TOLERANCE: f64 = 1e-8;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MziVariant {
    /// `T(θ, φ)`, differential internal phase.
    Standard,
    /// `e^{-iθ/2} T(θ, φ)`, a single internal shifter as on the fabricated chip.
    #[default]
    GlobalPhase,
}

impl MziVariant {
    /// Phases applied to the (top, bottom) internal arms.
    fn internal_phases(self, theta: f64) -> (Complex64, Complex64) {
        match self {
            MziVariant::Standard => (
                Complex64::from_polar(1.0, theta / 2.0),
                Complex64::from_polar(1.0, -theta / 2.0),
            ),
            MziVariant::GlobalPhase => (ONE, Complex64::from_polar(1.0, -theta)),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

/// 2×2 transfer matrix of one MZI.
pub fn mzi_transfer(theta: f64, phi: f64, variant: MziVariant) -> Matrix2<Complex64> {
    let s = (theta / 2.0).sin();
    let c = (theta / 2.0).cos();
    let e_phi = Complex64::from_polar(1.0, phi);
    let t = Matrix2::new(e_phi * s, c.into(), e_phi * c, (-s).into()) * I;
    match variant {
        MziVariant::Standard => t,
        MziVariant::GlobalPhase => t * Complex64::from_polar(1.0, -theta / 2.0),
    }
}

#[inline]
fn coupler(a: Complex64, b: Complex64) -> (Complex64, Complex64) {
    ((a + I * b) * FRAC_1_SQRT_2, (I * a + b) * FRAC_1_SQRT_2)
}

/// One MZI of a mesh, acting on waveguides `top` and `top + 1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MziNode {
    pub column: usize,
    pub top: usize,
    pub theta_index: usize,
    pub phi_index: usize,
}

/// Arrangement of MZIs in a mesh. Nodes are stored in column order, which is
/// a valid propagation order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeshTopology {
    n_modes: usize,
    nodes: Vec<MziNode>,
    n_columns: usize,
    variant: MziVariant,
    /// `grid[d][m]`: node index of the `m`-th MZI on diagonal `d`.
    grid: Vec<Vec<usize>>,
}

impl MeshTopology {
    /// Triangular (Reck) mesh on `n_modes` waveguides with the default MZI variant.
    pub fn triangular(n_modes: usize) -> Self {
        Self::triangular_with(n_modes, MziVariant::default())
    }

    /// Triangular mesh made of diagonals: diagonal `d` cascades MZIs on
    /// waveguide pairs `(0,1), (1,2), …, (n-2-d, n-1-d)`, and MZI `m` of
    /// diagonal `d` sits in column `2d + m`.
    pub fn triangular_with(n_modes: usize, variant: MziVariant) -> Self {
        let mut placed = Vec::new();
        for d in 0..n_modes.saturating_sub(1) {
            for m in 0..(n_modes - 1 - d) {
                placed.push((2 * d + m, m, d));
            }
        }
        placed.sort_by_key(|&(col, top, _)| (col, top));

        let mut grid: Vec<Vec<usize>> = (0..n_modes.saturating_sub(1))
            .map(|d| vec![0; n_modes - 1 - d])
            .collect();
        let nodes = placed
            .iter()
            .enumerate()
            .map(|(k, &(column, top, d))| {
                grid[d][top] = k;
                MziNode {
                    column,
                    top,
                    theta_index: k,
                    phi_index: k,
                }
            })
            .collect::<Vec<_>>();
        let n_columns = nodes.last().map_or(0, |n| n.column + 1);
        Self {
            n_modes,
            nodes,
            n_columns,
            variant,
            grid,
        }
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn nodes(&self) -> &[MziNode] {
        &self.nodes
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_columns(&self) -> usize {
        self.n_columns
    }

    pub fn gamma_count(&self) -> usize {
        self.n_modes
    }

    pub fn variant(&self) -> MziVariant {
        self.variant
    }

    /// Total trainable phases (θ, φ and γ).
    pub fn n_params(&self) -> usize {
        2 * self.n_nodes() + self.gamma_count()
    }

    /// Node index of MZI `m` on diagonal `d`.
    pub fn node_at(&self, diagonal: usize, m: usize) -> usize {
        self.grid[diagonal][m]
    }

    /// Sign of `∂U/∂θ` relative to a standard `e^{+iη}` shifter: the
    /// single-arm device applies `e^{-iθ}`.
    pub fn theta_polarity(&self) -> Result<f64> {
        match self.variant {
            MziVariant::GlobalPhase => Ok(-1.0),
            MziVariant::Standard => Err(Error::UnsupportedVariant),
        }
    }
}

/// Phase settings for every shifter of a mesh.
///
/// θ is clamped to `[0, π]`; φ and γ are reduced into `[0, 2π)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeshPhases {
    pub theta: Vec<f64>,
    pub phi: Vec<f64>,
    pub gamma: Vec<f64>,
}

impl MeshPhases {
    pub fn new(theta: Vec<f64>, phi: Vec<f64>, gamma: Vec<f64>) -> Result<Self> {
        if theta.len() != phi.len() {
            return Err(Error::DimensionMismatch {
                expected: theta.len(),
                found: phi.len(),
            });
        }
        let all_finite = theta
            .iter()
            .chain(&phi)
            .chain(&gamma)
            .all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::InvalidArgument("phases must be finite".into()));
        }
        Ok(Self {
            theta: theta.into_iter().map(|t| t.clamp(0.0, PI)).collect(),
            phi: phi.into_iter().map(wrap_2pi).collect(),
            gamma: gamma.into_iter().map(wrap_2pi).collect(),
        })
    }

    /// Every MZI in the bar state (θ = π), all other phases zero.
    pub fn bar(topology: &MeshTopology) -> Self {
        Self {
            theta: vec![PI; topology.n_nodes()],
            phi: vec![0.0; topology.n_nodes()],
            gamma: vec![0.0; topology.gamma_count()],
        }
    }

    /// Independent uniform phases.
    pub fn random<R: Rng + ?Sized>(topology: &MeshTopology, rng: &mut R) -> Self {
        let n = topology.n_nodes();
        Self {
            theta: (0..n).map(|_| rng.random_range(0.0..PI)).collect(),
            phi: (0..n).map(|_| rng.random_range(0.0..2.0 * PI)).collect(),
            gamma: (0..topology.gamma_count())
                .map(|_| rng.random_range(0.0..2.0 * PI))
                .collect(),
        }
    }

    pub fn check(&self, topology: &MeshTopology) -> Result<()> {
        let n = topology.n_nodes();
        for len in [self.theta.len(), self.phi.len()] {
            if len != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: len,
                });
            }
        }
        if self.gamma.len() != topology.gamma_count() {
            return Err(Error::DimensionMismatch {
                expected: topology.gamma_count(),
                found: self.gamma.len(),
            });
        }
        Ok(())
    }

    pub fn n_params(&self) -> usize {
        self.theta.len() + self.phi.len() + self.gamma.len()
    }

    /// Flat parameter vector `[θ…, φ…, γ…]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.n_params());
        v.extend_from_slice(&self.theta);
        v.extend_from_slice(&self.phi);
        v.extend_from_slice(&self.gamma);
        v
    }

    /// Adds `delta` (laid out like [`MeshPhases::to_vec`]) and re-normalizes the ranges.
    pub fn apply_delta(&mut self, delta: &[f64]) {
        let n = self.theta.len();
        let g = self.gamma.len();
        assert_eq!(delta.len(), 2 * n + g, "delta length");
        for (t, d) in self.theta.iter_mut().zip(&delta[..n]) {
            *t = (*t + d).clamp(0.0, PI);
        }
        for (p, d) in self.phi.iter_mut().zip(&delta[n..2 * n]) {
            *p = wrap_2pi(*p + d);
        }
        for (p, d) in self.gamma.iter_mut().zip(&delta[2 * n..]) {
            *p = wrap_2pi(*p + d);
        }
    }
}

/// Complex field at the forward-input side of every shifter during one pass.
///
/// φ taps sit on the top input arm of each MZI, θ taps on the internal arm
/// carrying the single-arm shifter. In a backward pass the recorded field is
/// the one that has already traversed the shifter, so forward and backward
/// records refer to the same point in the waveguide.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct FieldTapRecord {
    pub theta_fields: Vec<Complex64>,
    pub phi_fields: Vec<Complex64>,
}

impl FieldTapRecord {
    fn zeros(n: usize) -> Self {
        Self {
            theta_fields: vec![ZERO; n],
            phi_fields: vec![ZERO; n],
        }
    }

    pub fn theta_powers(&self) -> Vec<f64> {
        self.theta_fields.iter().map(|z| z.norm_sqr()).collect()
    }

    pub fn phi_powers(&self) -> Vec<f64> {
        self.phi_fields.iter().map(|z| z.norm_sqr()).collect()
    }
}

/// Max elementwise `|U^H U - I|`.
pub fn unitarity_error(u: &DMatrix<Complex64>) -> f64 {
    let g = u.adjoint() * u;
    let mut worst: f64 = 0.0;
    for r in 0..g.nrows() {
        for c in 0..g.ncols() {
            let target = if r == c { ONE } else { ZERO };
            worst = worst.max((g[(r, c)] - target).norm());
        }
    }
    worst
}

/// Full transfer matrix `diag(e^{iγ}) · T_K ⋯ T_1`.
pub fn build_unitary(topology: &MeshTopology, phases: &MeshPhases) -> Result<DMatrix<Complex64>> {
    phases.check(topology)?;
    let n = topology.n_modes();
    let mut u = DMatrix::<Complex64>::identity(n, n);
    for (k, node) in topology.nodes().iter().enumerate() {
        let t = mzi_transfer(phases.theta[k], phases.phi[k], topology.variant());
        let (r0, r1) = (node.top, node.top + 1);
        for c in 0..n {
            let (a, b) = (u[(r0, c)], u[(r1, c)]);
            u[(r0, c)] = t[(0, 0)] * a + t[(0, 1)] * b;
            u[(r1, c)] = t[(1, 0)] * a + t[(1, 1)] * b;
        }
    }
    for (r, &g) in phases.gamma.iter().enumerate() {
        let e = Complex64::from_polar(1.0, g);
        for c in 0..n {
            u[(r, c)] *= e;
        }
    }
    Ok(u)
}

/// Propagates through the MZIs only (no γ), recording shifter taps.
pub(crate) fn propagate_optical(
    topology: &MeshTopology,
    phases: &MeshPhases,
    input: &ModeVector,
    direction: Direction,
) -> Result<(ModeVector, FieldTapRecord)> {
    phases.check(topology)?;
    input.require_len(topology.n_modes())?;
    let mut w = input.clone();
    let mut taps = FieldTapRecord::zeros(topology.n_nodes());
    let variant = topology.variant();
    let nodes = topology.nodes();
    match direction {
        Direction::Forward => {
            for (k, node) in nodes.iter().enumerate() {
                let t = node.top;
                taps.phi_fields[k] = w[t];
                let a = w[t] * Complex64::from_polar(1.0, phases.phi[k]);
                let (u1, u2) = coupler(a, w[t + 1]);
                taps.theta_fields[k] = u2;
                let (top, bot) = variant.internal_phases(phases.theta[k]);
                let (o1, o2) = coupler(u1 * top, u2 * bot);
                w[t] = o1;
                w[t + 1] = o2;
            }
        }
        Direction::Backward => {
            for (k, node) in nodes.iter().enumerate().rev() {
                let t = node.top;
                let (u1, u2) = coupler(w[t], w[t + 1]);
                let (top, bot) = variant.internal_phases(phases.theta[k]);
                let (v1, v2) = (u1 * top, u2 * bot);
                taps.theta_fields[k] = v2;
                let (o1, o2) = coupler(v1, v2);
                let o1 = o1 * Complex64::from_polar(1.0, phases.phi[k]);
                taps.phi_fields[k] = o1;
                w[t] = o1;
                w[t + 1] = o2;
            }
        }
    }
    Ok((w, taps))
}

fn apply_gamma(v: &mut ModeVector, gamma: &[f64]) {
    for (z, &g) in v.as_mut_slice().iter_mut().zip(gamma) {
        *z *= Complex64::from_polar(1.0, g);
    }
}

/// Propagates `input` through the mesh. Forward computes `U x`; backward
/// computes `Uᵀ x` (light entering from the output side). γ is applied only
/// at the output boundary and does not appear in the tap record.
pub fn propagate(
    topology: &MeshTopology,
    phases: &MeshPhases,
    input: &ModeVector,
    direction: Direction,
) -> Result<(ModeVector, FieldTapRecord)> {
    phases.check(topology)?;
    input.require_len(topology.n_modes())?;
    match direction {
        Direction::Forward => {
            let (mut out, taps) = propagate_optical(topology, phases, input, direction)?;
            apply_gamma(&mut out, &phases.gamma);
            Ok((out, taps))
        }
        Direction::Backward => {
            let mut x = input.clone();
            apply_gamma(&mut x, &phases.gamma);
            propagate_optical(topology, phases, &x, direction)
        }
    }
}

/// Field on every waveguide immediately before node `target` (forward light).
pub fn fields_before_node(
    topology: &MeshTopology,
    phases: &MeshPhases,
    input: &ModeVector,
    target: usize,
) -> Result<ModeVector> {
    phases.check(topology)?;
    input.require_len(topology.n_modes())?;
    if target >= topology.n_nodes() {
        return Err(Error::InvalidArgument(format!("no node {target}")));
    }
    let mut w = input.clone();
    for (k, node) in topology.nodes().iter().enumerate().take(target) {
        let t = mzi_transfer(phases.theta[k], phases.phi[k], topology.variant());
        let (a, b) = (w[node.top], w[node.top + 1]);
        w[node.top] = t[(0, 0)] * a + t[(0, 1)] * b;
        w[node.top + 1] = t[(1, 0)] * a + t[(1, 1)] * b;
    }
    Ok(w)
}

/// Decomposes a unitary into triangular-mesh phases (single-arm MZIs).
pub fn phases_from_unitary(u: &DMatrix<Complex64>) -> Result<MeshPhases> {
    decompose(u, MziVariant::default(), UNITARITY_TOLERANCE)
}

/// Column-wise nullification: diagonal `d` is chosen so that row `n-1-d`
/// of the remaining matrix collapses onto the diagonal; leftover diagonal
/// phases become γ.
pub fn decompose(
    u: &DMatrix<Complex64>,
    variant: MziVariant,
    tolerance: f64,
) -> Result<MeshPhases> {
    let n = u.nrows();
    if n < 1 {
        return Err(Error::InvalidArgument("matrix must be at least 1x1".into()));
    }
    if u.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: u.ncols(),
        });
    }
    let deviation = unitarity_error(u);
    if deviation.is_nan() || deviation > tolerance {
        return Err(Error::NonUnitary { deviation });
    }

    let topology = MeshTopology::triangular_with(n, variant);
    let mut theta = vec![0.0; topology.n_nodes()];
    let mut phi = vec![0.0; topology.n_nodes()];
    let mut w = u.clone();

    for d in 0..n.saturating_sub(1) {
        let last = n - 1 - d;
        let mut v: Vec<Complex64> = (0..=last).map(|c| w[(last, c)].conj()).collect();
        for m in 0..last {
            let (x1, x2) = (v[m], v[m + 1]);
            // Route all power to the bottom output: y1 = 0.
            let (th, ph) = if x1.norm() == 0.0 {
                (PI, 0.0)
            } else {
                let ratio = -x2 / x1;
                let ph = if x2.norm() == 0.0 {
                    0.0
                } else {
                    wrap_2pi(ratio.arg())
                };
                (2.0 * (x2.norm() / x1.norm()).atan(), ph)
            };
            let t = mzi_transfer(th, ph, variant);
            v[m] = t[(0, 0)] * x1 + t[(0, 1)] * x2;
            v[m + 1] = t[(1, 0)] * x1 + t[(1, 1)] * x2;
            let th_adj = t.adjoint();
            for r in 0..n {
                let (a, b) = (w[(r, m)], w[(r, m + 1)]);
                w[(r, m)] = a * th_adj[(0, 0)] + b * th_adj[(1, 0)];
                w[(r, m + 1)] = a * th_adj[(0, 1)] + b * th_adj[(1, 1)];
            }
            let k = topology.node_at(d, m);
            theta[k] = th;
            phi[k] = ph;
        }
    }
    let gamma = (0..n).map(|j| wrap_2pi(w[(j, j)].arg())).collect();
    MeshPhases::new(theta, phi, gamma)
}

/// Phases that carry unit power from input port 0 to the top input of
/// `target`, setting every MZI on the way to pure bar or cross.
pub fn route_to_mzi(topology: &MeshTopology, target: usize) -> Result<MeshPhases> {
    let nodes = topology.nodes();
    if target >= nodes.len() {
        return Err(Error::InvalidArgument(format!("no node {target}")));
    }
    let n = topology.n_modes();
    // reach[k][w]: light from port 0 can be on waveguide w before node k.
    let mut reach = vec![vec![false; n]; target + 1];
    reach[0][0] = true;
    for k in 0..target {
        let t = nodes[k].top;
        let mut next = reach[k].clone();
        if reach[k][t] || reach[k][t + 1] {
            next[t] = true;
            next[t + 1] = true;
        }
        reach[k + 1] = next;
    }
    let goal = nodes[target].top;
    if !reach[target][goal] {
        return Err(Error::Unreachable(target));
    }

    let mut phases = MeshPhases::bar(topology);
    let mut wg = goal;
    for k in (0..target).rev() {
        let t = nodes[k].top;
        if wg != t && wg != t + 1 {
            continue;
        }
        let other = if wg == t { t + 1 } else { t };
        if reach[k][wg] {
            continue; // bar keeps the light on its waveguide
        }
        debug_assert!(reach[k][other]);
        phases.theta[k] = 0.0;
        wg = other;
    }
    Ok(phases)
}

/// Haar-random unitary from the QR decomposition of a complex Gaussian matrix.
pub fn haar_unitary<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DMatrix<Complex64> {
    let z = DMatrix::<Complex64>::from_fn(n, n, |_, _| {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        Complex64::new(re, im) * FRAC_1_SQRT_2
    });
    let qr = z.qr();
    let mut q = qr.q();
    let r = qr.r();
    for c in 0..n {
        let d = r[(c, c)];
        let ph = if d.norm() > 0.0 { d / d.norm() } else { ONE };
        for row in 0..n {
            q[(row, c)] *= ph;
        }
    }
    q
}

/// Unitary discrete Fourier transform.
pub fn dft_matrix(n: usize) -> DMatrix<Complex64> {
    let scale = 1.0 / (n as f64).sqrt();
    DMatrix::from_fn(n, n, |r, c| {
        Complex64::from_polar(scale, 2.0 * PI * (r * c) as f64 / n as f64)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn close(a: &Matrix2<Complex64>, b: &Matrix2<Complex64>, tol: f64) -> bool {
        (a - b).iter().all(|z| z.norm() < tol)
    }

    #[test]
    fn transfer_matrix_special_states() {
        let cross = mzi_transfer(0.0, 0.0, MziVariant::Standard);
        assert!(close(&cross, &Matrix2::new(ZERO, I, I, ZERO), 1e-15));
        let bar = mzi_transfer(PI, 0.0, MziVariant::Standard);
        assert!(close(&bar, &Matrix2::new(I, ZERO, ZERO, -I), 1e-15));
        let half = mzi_transfer(PI / 2.0, PI / 2.0, MziVariant::Standard);
        let expect = Matrix2::new(c(-1.0, 0.0), I, c(-1.0, 0.0), -I) * c(FRAC_1_SQRT_2, 0.0);
        assert!(close(&half, &expect, 1e-15));
    }

    #[test]
    fn global_phase_variant_is_rescaled_standard() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let th = rng.random_range(0.0..PI);
            let ph = rng.random_range(0.0..2.0 * PI);
            let t = mzi_transfer(th, ph, MziVariant::Standard);
            let tg = mzi_transfer(th, ph, MziVariant::GlobalPhase);
            assert!(close(
                &(t * Complex64::from_polar(1.0, -th / 2.0)),
                &tg,
                1e-15
            ));
            let x = nalgebra::Vector2::new(c(0.3, 0.1), c(-0.2, 0.7));
            let (y, yg) = (t * x, tg * x);
            for i in 0..2 {
                assert!((y[i].norm_sqr() - yg[i].norm_sqr()).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn transfer_matches_coupler_composition() {
        for variant in [MziVariant::Standard, MziVariant::GlobalPhase] {
            let (th, ph) = (1.1, 4.2);
            let t = mzi_transfer(th, ph, variant);
            for col in 0..2 {
                let (a, b) = if col == 0 { (ONE, ZERO) } else { (ZERO, ONE) };
                let a = a * Complex64::from_polar(1.0, ph);
                let (u1, u2) = coupler(a, b);
                let (p, q) = variant.internal_phases(th);
                let (o1, o2) = coupler(u1 * p, u2 * q);
                assert!((o1 - t[(0, col)]).norm() < 1e-15);
                assert!((o2 - t[(1, col)]).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn topology_shape() {
        for n in 1..9 {
            let top = MeshTopology::triangular(n);
            assert_eq!(top.n_nodes(), n * (n - 1) / 2);
            assert_eq!(top.n_columns(), if n < 2 { 0 } else { 2 * n - 3 });
            for col in 0..top.n_columns() {
                let mut used = vec![false; n];
                for node in top.nodes().iter().filter(|nd| nd.column == col) {
                    assert!(node.top + 1 < n);
                    assert!(!used[node.top] && !used[node.top + 1]);
                    used[node.top] = true;
                    used[node.top + 1] = true;
                }
            }
        }
    }

    #[test]
    fn single_mzi_mesh() {
        let top = MeshTopology::triangular_with(2, MziVariant::Standard);
        let phases = MeshPhases::new(vec![0.0], vec![0.0], vec![0.0, 0.0]).unwrap();
        let u = build_unitary(&top, &phases).unwrap();
        assert!((u[(0, 1)] - I).norm() < 1e-15 && (u[(1, 0)] - I).norm() < 1e-15);
        assert!(u[(0, 0)].norm() < 1e-15 && u[(1, 1)].norm() < 1e-15);
    }

    #[test]
    fn bar_mesh_taps() {
        let top = MeshTopology::triangular_with(2, MziVariant::Standard);
        let phases = MeshPhases::bar(&top);
        let (y, taps) =
            propagate(&top, &phases, &ModeVector::basis(2, 0), Direction::Forward).unwrap();
        assert!((y[0] - I).norm() < 1e-15 && y[1].norm() < 1e-15);
        assert!((taps.phi_fields[0] - ONE).norm() < 1e-15);
        // the internal arm sits after the first coupler and carries half the power
        assert!((taps.theta_fields[0].norm_sqr() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn random_meshes_are_unitary() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in [2, 5, 8, 16, 32, 64] {
            let top = MeshTopology::triangular(n);
            let phases = MeshPhases::random(&top, &mut rng);
            let u = build_unitary(&top, &phases).unwrap();
            assert!(unitarity_error(&u) < 1e-10, "n={n}");
        }
    }

    #[test]
    fn propagation_matches_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for variant in [MziVariant::Standard, MziVariant::GlobalPhase] {
            let top = MeshTopology::triangular_with(8, variant);
            let phases = MeshPhases::random(&top, &mut rng);
            let u = build_unitary(&top, &phases).unwrap();
            let x: ModeVector = (0..8)
                .map(|_| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                .collect();
            let (y, _) = propagate(&top, &phases, &x, Direction::Forward).unwrap();
            assert!(y.max_abs_diff(&x.transformed(&u)) < 1e-12);
            assert!((y.norm_sqr() - x.norm_sqr()).abs() < 1e-12);
            let (z, _) = propagate(&top, &phases, &x, Direction::Backward).unwrap();
            assert!(z.max_abs_diff(&x.transformed(&u.transpose())) < 1e-12);

            let e1 = ModeVector::basis(8, 0);
            let (fwd, _) = propagate(&top, &phases, &e1, Direction::Forward).unwrap();
            let (round, _) = propagate(&top, &phases, &fwd, Direction::Backward).unwrap();
            let oracle = e1.transformed(&(u.transpose() * &u));
            assert!(round.max_abs_diff(&oracle) < 1e-12);
        }
    }

    #[test]
    fn forward_and_backward_taps_refer_to_the_same_point() {
        // Perturbing shifter η by δ changes yᵀ_aj U x by i δ x_η x_aj,η (φ)
        // and by -i δ x_η x_aj,η (θ, single-arm).
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let top = MeshTopology::triangular(5);
        let phases = MeshPhases::random(&top, &mut rng);
        let x: ModeVector = (0..5).map(|_| c(rng.random(), rng.random())).collect();
        let yaj: ModeVector = (0..5).map(|_| c(rng.random(), rng.random())).collect();
        let (_, ft) = propagate(&top, &phases, &x, Direction::Forward).unwrap();
        let (_, bt) = propagate(&top, &phases, &yaj, Direction::Backward).unwrap();
        let bilinear = |p: &MeshPhases| -> Complex64 {
            let y = x.transformed(&build_unitary(&top, p).unwrap());
            yaj.iter().zip(y.iter()).map(|(a, b)| a * b).sum()
        };
        let h = 1e-6;
        for k in 0..top.n_nodes() {
            let mut p = phases.clone();
            p.phi[k] += h;
            let mut m = phases.clone();
            m.phi[k] -= h;
            let fd = (bilinear(&p) - bilinear(&m)) / (2.0 * h);
            let analytic = I * ft.phi_fields[k] * bt.phi_fields[k];
            assert!((fd - analytic).norm() < 1e-8, "phi {k}");

            if phases.theta[k] > 2.0 * h && phases.theta[k] < PI - 2.0 * h {
                let mut p = phases.clone();
                p.theta[k] += h;
                let mut m = phases.clone();
                m.theta[k] -= h;
                let fd = (bilinear(&p) - bilinear(&m)) / (2.0 * h);
                let analytic = -I * ft.theta_fields[k] * bt.theta_fields[k];
                assert!((fd - analytic).norm() < 1e-8, "theta {k}");
            }
        }
    }

    #[test]
    fn decomposition_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for n in [1, 2, 3, 4, 8, 16] {
            for variant in [MziVariant::Standard, MziVariant::GlobalPhase] {
                let u = haar_unitary(n, &mut rng);
                let phases = decompose(&u, variant, UNITARITY_TOLERANCE).unwrap();
                assert!(phases.theta.iter().all(|t| (0.0..=PI).contains(t)));
                let top = MeshTopology::triangular_with(n, variant);
                let rebuilt = build_unitary(&top, &phases).unwrap();
                let err = (&rebuilt - &u).iter().map(|z| z.norm()).fold(0.0, f64::max);
                assert!(err < 1e-9, "n={n} err={err}");
            }
        }
    }

    #[test]
    fn decomposition_of_scalar_and_dft() {
        let u = DMatrix::from_element(1, 1, Complex64::from_polar(1.0, 0.7));
        let p = phases_from_unitary(&u).unwrap();
        assert!(p.theta.is_empty() && p.phi.is_empty());
        assert!((p.gamma[0] - 0.7).abs() < 1e-15);

        let f = dft_matrix(4);
        let p = phases_from_unitary(&f).unwrap();
        let rebuilt = build_unitary(&MeshTopology::triangular(4), &p).unwrap();
        let err = (&rebuilt - &f).iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!(err < 1e-10);
    }

    #[test]
    fn decomposition_handles_permutations() {
        // zero entries force the tie-breaking branch
        let mut u = DMatrix::<Complex64>::zeros(4, 4);
        for (r, c) in [(0, 2), (1, 0), (2, 3), (3, 1)] {
            u[(r, c)] = ONE;
        }
        let p = phases_from_unitary(&u).unwrap();
        let rebuilt = build_unitary(&MeshTopology::triangular(4), &p).unwrap();
        assert!((&rebuilt - &u).iter().all(|z| z.norm() < 1e-12));
        let id = DMatrix::<Complex64>::identity(5, 5);
        let p = phases_from_unitary(&id).unwrap();
        let rebuilt = build_unitary(&MeshTopology::triangular(5), &p).unwrap();
        assert!((&rebuilt - &id).iter().all(|z| z.norm() < 1e-12));
    }

    #[test]
    fn decomposition_rejects_non_unitary() {
        let mut u = DMatrix::<Complex64>::identity(3, 3);
        u[(0, 1)] = c(0.1, 0.0);
        match phases_from_unitary(&u) {
            Err(Error::NonUnitary { deviation }) => assert!(deviation > 0.05),
            other => panic!("{other:?}"),
        }
        let empty = DMatrix::<Complex64>::zeros(0, 0);
        assert!(phases_from_unitary(&empty).is_err());
    }

    #[test]
    fn routing_reaches_every_node() {
        let top = MeshTopology::triangular(6);
        for k in 0..top.n_nodes() {
            let phases = route_to_mzi(&top, k).unwrap();
            assert!(phases.theta.iter().all(|&t| t == 0.0 || t == PI));
            let before = fields_before_node(&top, &phases, &ModeVector::basis(6, 0), k).unwrap();
            let power = before[top.nodes()[k].top].norm_sqr();
            assert!(power > 1.0 - 1e-9, "node {k}: {power}");
            let (_, taps) =
                propagate(&top, &phases, &ModeVector::basis(6, 0), Direction::Forward).unwrap();
            assert!(taps.phi_fields[k].norm_sqr() > 1.0 - 1e-9);
        }
        assert_eq!(route_to_mzi(&top, 0).unwrap(), MeshPhases::bar(&top));
        assert!(route_to_mzi(&top, 99).is_err());
    }

    #[test]
    fn haar_and_dft_are_unitary() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        assert!(unitarity_error(&haar_unitary(12, &mut rng)) < 1e-12);
        assert!(unitarity_error(&dft_matrix(7)) < 1e-12);
    }
}
