//! Optical passes through one simulated mesh layer.
//!
//! A pass embeds the signal next to a reference arm, prepares it with the
//! generator, sends it through the mesh (the reference bypasses the mesh),
//! reads the shifter taps, and optionally measures the output with the
//! self-configuring analyzer. Tap powers are reported relative to a unit-power
//! signal, i.e. divided by the `1 - 1/N` share that enters the mesh.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::hardware::noise::{perturb_input, HardwareErrorConfig, IoOffsets, PowerMonitor};
use crate::mesh::{propagate_optical, Direction, FieldTapRecord, MeshPhases, MeshTopology};
use crate::mode::ModeVector;
use crate::vector_io::{
    analyzer_taps, embed_reference, phase2vec, self_configure_with, strip_reference, vec2phase,
    ReadoutConfig, ReadoutMode,
};

/// Outcome of a forward or backward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct PassResult {
    /// Measured output, rescaled to the power of the pass input. Forward
    /// outputs include the digital γ phases.
    pub output: ModeVector,
    /// Ideal fields at the shifters for the unit-normalized input.
    pub taps: FieldTapRecord,
    /// Measured θ tap powers for the unit-normalized input.
    pub theta_powers: Vec<f64>,
    /// Measured φ tap powers for the unit-normalized input.
    pub phi_powers: Vec<f64>,
    /// Squared norm `P` of the pass input.
    pub input_power: f64,
    pub direction: Direction,
}

/// Tap readings of a pass that is not read out at the mesh output.
#[derive(Clone, Debug, PartialEq)]
pub struct TapReadings {
    pub taps: FieldTapRecord,
    pub theta_powers: Vec<f64>,
    pub phi_powers: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
struct StaticOffsets {
    generation: IoOffsets,
    analysis: IoOffsets,
}

/// One physical mesh layer with its generator, analyzer and detectors.
#[derive(Clone, Debug, PartialEq)]
pub struct Device {
    topology: MeshTopology,
    readout: ReadoutConfig,
    mesh_monitor: PowerMonitor,
    analyzer_monitor: PowerMonitor,
    offsets: Option<StaticOffsets>,
}

impl Device {
    /// `layer` selects independent coupling/offset draws for each layer of a model.
    pub fn new(topology: MeshTopology, readout: ReadoutConfig, layer: usize) -> Result<Self> {
        let n = topology.n_modes();
        if n < 2 {
            return Err(Error::InvalidArgument(
                "a device needs at least 2 modes".into(),
            ));
        }
        readout.error.validate()?;
        let cfg = &readout.error;
        let stream = 4 * layer as u64;
        let mesh_monitor = PowerMonitor::new(cfg, 2 * topology.n_nodes(), n, stream);
        let analyzer_monitor = PowerMonitor::new(cfg, analyzer_taps(n + 1), n, stream + 1);
        let offsets = if cfg.static_io_errors && !readout.is_ideal() {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(stream + 2);
            Some(StaticOffsets {
                generation: IoOffsets::draw(n + 1, cfg, &mut rng),
                analysis: IoOffsets::draw(n + 1, cfg, &mut rng),
            })
        } else {
            None
        };
        Ok(Self {
            topology,
            readout,
            mesh_monitor,
            analyzer_monitor,
            offsets,
        })
    }

    pub fn ideal(topology: MeshTopology) -> Result<Self> {
        Self::new(topology, ReadoutConfig::ideal(), 0)
    }

    pub fn topology(&self) -> &MeshTopology {
        &self.topology
    }

    pub fn readout(&self) -> &ReadoutConfig {
        &self.readout
    }

    pub fn is_ideal(&self) -> bool {
        self.readout.is_ideal()
    }

    fn error(&self) -> &HardwareErrorConfig {
        &self.readout.error
    }

    fn mesh_share(&self) -> f64 {
        1.0 - 1.0 / self.topology.n_modes() as f64
    }

    fn generate<R: Rng + ?Sized>(&self, field: &ModeVector, rng: &mut R) -> ModeVector {
        if self.is_ideal() {
            return field.clone();
        }
        match &self.offsets {
            Some(o) => o.generation.apply(field),
            None => perturb_input(field, self.error(), rng),
        }
    }

    fn analyze<R: Rng + ?Sized>(&self, field: &ModeVector, rng: &mut R) -> ModeVector {
        if self.is_ideal() {
            return field.clone();
        }
        match &self.offsets {
            Some(o) => o.analysis.apply(field),
            None => perturb_input(field, self.error(), rng),
        }
    }

    /// Propagates an embedded `N + 1` vector; returns the embedded output and
    /// normalized tap readings.
    fn optical<R: Rng + ?Sized>(
        &self,
        phases: &MeshPhases,
        embedded: &ModeVector,
        direction: Direction,
        rng: &mut R,
    ) -> Result<(ModeVector, TapReadings)> {
        let n = self.topology.n_modes();
        let generated = self.generate(embedded, rng);
        let mesh_in: ModeVector = generated.iter().take(n).copied().collect();
        let (mesh_out, raw) = propagate_optical(&self.topology, phases, &mesh_in, direction)?;
        let mut out = mesh_out.into_vec();
        out.push(generated[n]);

        let share = self.mesh_share();
        let unscale = 1.0 / share.sqrt();
        let taps = FieldTapRecord {
            theta_fields: raw.theta_fields.iter().map(|z| z * unscale).collect(),
            phi_fields: raw.phi_fields.iter().map(|z| z * unscale).collect(),
        };
        let k = self.topology.n_nodes();
        let (theta_powers, phi_powers) = if self.is_ideal() {
            (taps.theta_powers(), taps.phi_powers())
        } else {
            let read = |fields: &[Complex64], offset: usize, rng: &mut R| -> Vec<f64> {
                fields
                    .iter()
                    .enumerate()
                    .map(|(i, z)| self.mesh_monitor.measure(z.norm_sqr(), offset + i, rng) / share)
                    .collect()
            };
            let t = read(&raw.theta_fields, 0, rng);
            let p = read(&raw.phi_fields, k, rng);
            (t, p)
        };
        Ok((
            ModeVector::new(out),
            TapReadings {
                taps,
                theta_powers,
                phi_powers,
            },
        ))
    }

    fn read_out<R: Rng + ?Sized>(
        &self,
        embedded_out: &ModeVector,
        rng: &mut R,
    ) -> Result<ModeVector> {
        let n = self.topology.n_modes();
        let field = self.analyze(embedded_out, rng);
        let mode = if self.is_ideal() {
            ReadoutMode::Ideal
        } else {
            self.readout.mode
        };
        let (_, measured) = self_configure_with(&field, mode, &self.analyzer_monitor, rng)?;
        strip_reference(&measured, n)
    }

    fn check_input(&self, x: &ModeVector) -> Result<(ModeVector, f64)> {
        x.require_len(self.topology.n_modes())?;
        if !x.is_finite() {
            return Err(Error::InvalidArgument("non-finite input field".into()));
        }
        x.normalized()
    }

    /// Forward inference pass: returns `U x` as measured by the analyzer.
    ///
    /// The pass itself runs on `x / |x|`; the output is rescaled by `|x|`.
    pub fn mesh_forward<R: Rng + ?Sized>(
        &self,
        phases: &MeshPhases,
        x: &ModeVector,
        rng: &mut R,
    ) -> Result<PassResult> {
        let (unit, power) = self.check_input(x)?;
        let embedded = embed_reference(&unit, self.topology.n_modes())?;
        let generated = phase2vec(&vec2phase(&embedded)?)?;
        let (out, readings) = self.optical(phases, &generated, Direction::Forward, rng)?;
        let mut y = self.read_out(&out, rng)?;
        for (z, &g) in y.as_mut_slice().iter_mut().zip(&phases.gamma) {
            *z *= Complex64::from_polar(power.sqrt(), g);
        }
        Ok(PassResult {
            output: y,
            taps: readings.taps,
            theta_powers: readings.theta_powers,
            phi_powers: readings.phi_powers,
            input_power: power,
            direction: Direction::Forward,
        })
    }

    /// Adjoint pass: returns `Uᵀ y_aj`. The γ phases are applied digitally to
    /// the adjoint before it is generated at the mesh output side.
    pub fn mesh_backward<R: Rng + ?Sized>(
        &self,
        phases: &MeshPhases,
        y_aj: &ModeVector,
        rng: &mut R,
    ) -> Result<PassResult> {
        let (unit, power) = self.check_input(y_aj)?;
        let rotated: ModeVector = unit
            .iter()
            .zip(&phases.gamma)
            .map(|(z, &g)| z * Complex64::from_polar(1.0, g))
            .collect();
        let embedded = embed_reference(&rotated, self.topology.n_modes())?;
        // The generator on the output side is programmed with the conjugate field.
        let generated = phase2vec(&vec2phase(&embedded.conj())?)?.conj();
        let (out, readings) = self.optical(phases, &generated, Direction::Backward, rng)?;
        let x_aj = self.read_out(&out, rng)?.scale(power.sqrt());
        Ok(PassResult {
            output: x_aj,
            taps: readings.taps,
            theta_powers: readings.theta_powers,
            phi_powers: readings.phi_powers,
            input_power: power,
            direction: Direction::Backward,
        })
    }

    /// Forward pass that only reads the shifter taps. `field` may have any
    /// norm up to the power the generator delivers for a unit vector.
    pub fn tap_pass<R: Rng + ?Sized>(
        &self,
        phases: &MeshPhases,
        field: &ModeVector,
        rng: &mut R,
    ) -> Result<TapReadings> {
        let n = self.topology.n_modes();
        field.require_len(n)?;
        let scale = self.mesh_share().sqrt();
        let mut embedded: Vec<Complex64> = field.iter().map(|z| z * scale).collect();
        embedded.push(Complex64::new((1.0 / n as f64).sqrt(), 0.0));
        let (_, readings) =
            self.optical(phases, &ModeVector::new(embedded), Direction::Forward, rng)?;
        Ok(readings)
    }
}
