//! Full sensor forward model: bias sweep plus external field through the
//! spin-cavity system to the reflected baseband signal.

use nalgebra::{Matrix3, Rotation3, Vector3};
use num_complex::Complex64;

use crate::cavity::{
    flatten_frequencies, Integrator, LineFrequencies, ReferenceParams, SimState, Simulator, SpinCavityParams,
};
use crate::error::{Error, Result};
use crate::geometry::NvBasis;
use crate::synth::{spin_frequencies, BiasWaveform, PhysicalConstants, SampledSeries, TestField, HYPERFINE_M, TWO_PI};
use crate::trace::ReflectionTrace;

/// Everything about the sensor that stays fixed during a run.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorModel {
    pub params: SpinCavityParams,
    /// NV axes expressed in the lab frame.
    pub basis: NvBasis,
    pub constants: PhysicalConstants,
    /// Hyperfine offsets in units of `a_hf`.
    pub hyperfine: [f64; 3],
    /// Complex drive amplitude at the cavity port.
    pub drive: Complex64,
    pub integrator: Integrator,
    /// Bias periods simulated and discarded before the first output sample.
    pub warmup_periods: usize,
}

impl SensorModel {
    pub fn spin_frequencies(&self, b: &Vector3<f64>) -> LineFrequencies {
        flatten_frequencies(&spin_frequencies(&self.basis, b, &self.constants, &self.hyperfine))
    }
}

/// External (measured) field: static offset, test tones and an arbitrary
/// sampled component, summed.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExternalField {
    pub dc: Vector3<f64>,
    pub tones: Option<TestField>,
    pub sampled: Option<[SampledSeries; 3]>,
}

impl ExternalField {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn constant(b: Vector3<f64>) -> Self {
        Self { dc: b, ..Self::default() }
    }

    pub fn tones(t: TestField) -> Self {
        Self {
            tones: Some(t),
            ..Self::default()
        }
    }

    pub fn at(&self, t: f64) -> Vector3<f64> {
        let mut b = self.dc;
        if let Some(tones) = &self.tones {
            b += tones.at(t);
        }
        if let Some(s) = &self.sampled {
            b += Vector3::new(s[0].at(t), s[1].at(t), s[2].at(t));
        }
        b
    }
}

/// Multiplicative amplitude and phase noise on the MW drive,
/// `u = u₀(1 + a(t))e^{iφ(t)}`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MwNoise {
    pub amplitude: Option<SampledSeries>,
    pub phase: Option<SampledSeries>,
}

impl MwNoise {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn factor(&self, t: f64) -> Complex64 {
        let a = self.amplitude.as_ref().map_or(0.0, |s| s.at(t));
        let phi = self.phase.as_ref().map_or(0.0, |s| s.at(t));
        if phi == 0.0 {
            Complex64::new(1.0 + a, 0.0)
        } else {
            Complex64::from_polar(1.0 + a, phi)
        }
    }
}

/// Incremental generator of the reflected signal, so that long records never
/// have to be held in memory.
pub struct ReflectionStream<'a> {
    model: &'a SensorModel,
    bias: &'a BiasWaveform,
    external: &'a ExternalField,
    noise: &'a MwNoise,
    sim: Simulator,
    dt: f64,
    total: usize,
    next: usize,
    u_prev: Complex64,
    w_prev: LineFrequencies,
    y_prev: Complex64,
}

impl<'a> ReflectionStream<'a> {
    pub fn new(model: &'a SensorModel, bias: &'a BiasWaveform, external: &'a ExternalField, noise: &'a MwNoise) -> Result<Self> {
        let dt = 1.0 / bias.sample_rate;
        let total = (bias.duration * bias.sample_rate).round() as usize;
        // warm-up runs on the clean sweep so every record starts from the same periodic state
        let warm = model.warmup_periods as f64 * bias.period();
        let n_warm = (warm * bias.sample_rate).round() as usize;
        let t0 = -(n_warm as f64) * dt;
        let clean = |t: f64| bias.b0_vec * bias.reference(t);
        let w0 = if n_warm > 0 {
            model.spin_frequencies(&clean(t0))
        } else {
            model.spin_frequencies(&(bias.at(0.0) + external.at(0.0)))
        };
        let u0 = if n_warm > 0 { model.drive } else { model.drive * noise.factor(0.0) };
        let start = SimState::steady(&model.params, u0, &unflatten(&w0))?;
        let mut sim = Simulator::new(&model.params, model.integrator, &start)?;
        let mut w_prev = w0;
        for i in 1..=n_warm {
            let t = t0 + i as f64 * dt;
            let w = if i == n_warm {
                model.spin_frequencies(&(bias.at(0.0) + external.at(0.0)))
            } else {
                model.spin_frequencies(&clean(t))
            };
            let u1 = if i == n_warm { model.drive * noise.factor(0.0) } else { model.drive };
            sim.advance(dt, model.drive, u1, &w_prev, &w)?;
            w_prev = w;
        }
        let u_prev = model.drive * noise.factor(0.0);
        let y_prev = -u_prev + sim.x1();
        Ok(Self {
            model,
            bias,
            external,
            noise,
            sim,
            dt,
            total,
            next: 0,
            u_prev,
            w_prev,
            y_prev,
        })
    }

    pub fn sample_rate(&self) -> f64 {
        1.0 / self.dt
    }

    pub fn total_samples(&self) -> usize {
        self.total
    }

    pub fn remaining(&self) -> usize {
        self.total - self.next
    }

    /// Appends up to `n` further samples to `out`; returns how many were added.
    pub fn fill(&mut self, n: usize, out: &mut Vec<Complex64>) -> Result<usize> {
        let n = n.min(self.remaining());
        out.reserve(n);
        for _ in 0..n {
            let i = self.next;
            if i == 0 {
                out.push(self.y_prev);
            } else {
                let t = i as f64 * self.dt;
                let u = self.model.drive * self.noise.factor(t);
                let w = self.model.spin_frequencies(&(self.bias.at(t) + self.external.at(t)));
                let y = self
                    .sim
                    .advance(self.dt, self.u_prev, u, &self.w_prev, &w)
                    .map_err(|e| match e {
                        Error::Diverged { detail, .. } => Error::Diverged { sample: i, detail },
                        other => other,
                    })?;
                out.push(y);
                self.u_prev = u;
                self.w_prev = w;
            }
            self.next += 1;
        }
        Ok(n)
    }
}

fn unflatten(w: &LineFrequencies) -> [[f64; 3]; 8] {
    let mut out = [[0.0; 3]; 8];
    for k in 0..8 {
        for m in 0..3 {
            out[k][m] = w[k * 3 + m];
        }
    }
    out
}

/// Synthesizes the complete reflected record for the bias waveform's duration.
pub fn synthesize_reflection(
    model: &SensorModel,
    bias: &BiasWaveform,
    external: &ExternalField,
    mw_noise: &MwNoise,
) -> Result<ReflectionTrace> {
    let mut stream = ReflectionStream::new(model, bias, external, mw_noise)?;
    let mut out = Vec::new();
    stream.fill(stream.total_samples(), &mut out)?;
    Ok(ReflectionTrace::new(out, bias.sample_rate))
}

/// Reference geometry and physics: bias along lab `ẑ`, with the unit bias
/// projections on the four NV axes `(0.85, −0.61, −0.44, 0.20)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSensor {
    pub physics: ReferenceParams,
    pub constants: PhysicalConstants,
    /// Peak bias amplitude (T).
    pub bias_amplitude: f64,
    pub bias_frequency_hz: f64,
    pub unit_projections: [f64; 3],
    pub integrator: Integrator,
    pub warmup_periods: usize,
}

impl Default for ReferenceSensor {
    fn default() -> Self {
        Self {
            physics: ReferenceParams::default(),
            constants: PhysicalConstants::default(),
            bias_amplitude: 25e-4 * 2f64.sqrt(),
            bias_frequency_hz: 2e3,
            unit_projections: [0.85, -0.61, -0.44],
            integrator: Integrator::Adiabatic { max_substep: 2.5e-7 },
            warmup_periods: 4,
        }
    }
}

impl ReferenceSensor {
    /// Bias direction in the canonical diamond frame.
    pub fn diamond_bias_direction(&self) -> Vector3<f64> {
        let b = NvBasis::canonical();
        let p = self.unit_projections;
        let p4 = b.a_vec().dot(&Vector3::new(p[0], p[1], p[2]));
        let v = (b.axis(0) * p[0] + b.axis(1) * p[1] + b.axis(2) * p[2] + b.axis(3) * p4) * 0.75;
        v.normalize()
    }

    /// Orientation `U` of the diamond in the lab, with `Uᵀẑ` along the bias direction.
    pub fn rotation(&self) -> Matrix3<f64> {
        let v = self.diamond_bias_direction();
        Rotation3::rotation_between(&v, &Vector3::z())
            .unwrap_or_else(Rotation3::identity)
            .into_inner()
    }

    pub fn lab_basis(&self) -> Result<NvBasis> {
        NvBasis::canonical().rotate(&self.rotation())
    }

    pub fn model(&self) -> Result<SensorModel> {
        let basis = self.lab_basis()?;
        let params = self.physics.build(&self.constants, &basis, &Vector3::z())?;
        Ok(SensorModel {
            params,
            basis,
            constants: self.constants,
            hyperfine: HYPERFINE_M,
            drive: Complex64::new(1.0, 0.0),
            integrator: self.integrator,
            warmup_periods: self.warmup_periods,
        })
    }

    pub fn bias(&self, sample_rate: f64, duration: f64) -> Result<BiasWaveform> {
        BiasWaveform::new(
            Vector3::z() * self.bias_amplitude,
            TWO_PI * self.bias_frequency_hz,
            sample_rate,
            duration,
        )
    }

    /// Normalized bias position `β = (ω_c − D)/(γ|B₀·n̂|)` of the resonances
    /// for each of the first three orientations.
    pub fn betas(&self) -> Result<[f64; 3]> {
        let m = self.model()?;
        let offset = m.params.cavity.omega_c - self.constants.d_zfs;
        let mut out = [0.0; 3];
        for (i, o) in out.iter_mut().enumerate() {
            let proj = m.basis.axis(i).dot(&(Vector3::z() * self.bias_amplitude));
            *o = offset / (self.constants.gamma_e * proj.abs());
        }
        Ok(out)
    }
}
