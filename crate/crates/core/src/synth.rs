//! Bias waveforms, spin-frequency traces, test fields and colored noise.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::Vector3;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::geometry::NvBasis;

pub const TWO_PI: f64 = 2.0 * PI;

/// Physical constants entering the NV transition frequencies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicalConstants {
    /// Zero-field splitting D (rad/s).
    pub d_zfs: f64,
    /// Electron gyromagnetic ratio γ (rad/s/T).
    pub gamma_e: f64,
    /// ¹⁴N parallel hyperfine constant A∥ (rad/s).
    pub a_hf: f64,
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        Self {
            d_zfs: TWO_PI * 2.87e9,
            gamma_e: TWO_PI * 28e9,
            a_hf: TWO_PI * 2.22e6,
        }
    }
}

impl PhysicalConstants {
    /// Field equivalent of the hyperfine splitting, `A∥/γ` (T).
    pub fn hyperfine_field(&self) -> f64 {
        self.a_hf / self.gamma_e
    }
}

/// Nuclear spin projections of the ¹⁴N hyperfine triplet.
pub const HYPERFINE_M: [f64; 3] = [-1.0, 0.0, 1.0];

/// Index of a spin transition: orientation `0..4` and the `m_s = ±1` branch.
///
/// Transitions are laid out as `2 * orientation + branch` with branch 0 the
/// `m_s = +1` line (`ω = D − γB·n̂`) and branch 1 the `m_s = −1` line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TransitionId {
    pub orientation: usize,
    pub plus: bool,
}

impl TransitionId {
    pub fn index(&self) -> usize {
        2 * self.orientation + usize::from(!self.plus)
    }

    pub fn from_index(k: usize) -> Self {
        Self {
            orientation: k / 2,
            plus: k % 2 == 0,
        }
    }

    /// Sign in `ω = D + sign·γB·n̂`.
    pub fn field_sign(&self) -> f64 {
        if self.plus {
            -1.0
        } else {
            1.0
        }
    }
}

/// Real sampled series with its own clock, used for noise and modulation.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledSeries {
    pub samples: Vec<f64>,
    pub sample_rate: f64,
}

impl SampledSeries {
    /// Linear interpolation at time `t`; held constant beyond the ends.
    pub fn at(&self, t: f64) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        let x = t * self.sample_rate;
        if x <= 0.0 {
            return self.samples[0];
        }
        let i = x.floor() as usize;
        if i + 1 >= self.samples.len() {
            return *self.samples.last().unwrap();
        }
        let f = x - i as f64;
        if f == 0.0 {
            self.samples[i]
        } else {
            self.samples[i] * (1.0 - f) + self.samples[i + 1] * f
        }
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate
    }
}

/// AC bias field `Re{B₀(1 + a(t) + iφ(t)) e^{iω_m t}}`.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasWaveform {
    pub b0_vec: Vector3<f64>,
    pub omega_m: f64,
    pub amp_noise: Option<SampledSeries>,
    pub phase_noise: Option<SampledSeries>,
    pub sample_rate: f64,
    pub duration: f64,
}

impl BiasWaveform {
    pub fn new(b0_vec: Vector3<f64>, omega_m: f64, sample_rate: f64, duration: f64) -> Result<Self> {
        if !(omega_m > 0.0) {
            return Err(Error::InvalidInput("modulation frequency must be positive".into()));
        }
        if !(sample_rate > 0.0) || !(duration > 0.0) {
            return Err(Error::InvalidInput("sample rate and duration must be positive".into()));
        }
        Ok(Self {
            b0_vec,
            omega_m,
            amp_noise: None,
            phase_noise: None,
            sample_rate,
            duration,
        })
    }

    pub fn with_amp_noise(mut self, a: SampledSeries) -> Self {
        self.amp_noise = Some(a);
        self
    }

    pub fn with_phase_noise(mut self, phi: SampledSeries) -> Self {
        self.phase_noise = Some(phi);
        self
    }

    pub fn period(&self) -> f64 {
        TWO_PI / self.omega_m
    }

    /// Noise-free reference `cos(ω_m t)`.
    pub fn reference(&self, t: f64) -> f64 {
        (self.omega_m * t).cos()
    }

    /// Bias field at time `t`.
    pub fn at(&self, t: f64) -> Vector3<f64> {
        let wt = self.omega_m * t;
        if self.amp_noise.is_none() && self.phase_noise.is_none() {
            return self.b0_vec * wt.cos();
        }
        let a = self.amp_noise.as_ref().map_or(0.0, |s| s.at(t));
        let phi = self.phase_noise.as_ref().map_or(0.0, |s| s.at(t));
        self.b0_vec * ((1.0 + a) * wt.cos() - phi * wt.sin())
    }
}

pub fn evaluate_bias(w: &BiasWaveform, t_grid: &[f64]) -> Result<Vec<Vector3<f64>>> {
    let tol = 0.5 / w.sample_rate;
    if let Some(&t) = t_grid.iter().find(|&&t| t < -tol || t > w.duration + tol) {
        return Err(Error::InvalidInput(format!("time {t} outside waveform duration")));
    }
    Ok(t_grid.iter().map(|&t| w.at(t)).collect())
}

/// Spin transition frequencies for one field value.
///
/// Returns `[transition][hyperfine line]` in rad/s, transitions ordered as
/// in [`TransitionId`].
pub fn spin_frequencies(
    basis: &NvBasis,
    b: &Vector3<f64>,
    constants: &PhysicalConstants,
    hyperfine: &[f64; 3],
) -> [[f64; 3]; 8] {
    let mut out = [[0.0; 3]; 8];
    for (k, row) in out.iter_mut().enumerate() {
        let id = TransitionId::from_index(k);
        let centre = constants.d_zfs + id.field_sign() * constants.gamma_e * basis.axis(id.orientation).dot(b);
        for (slot, m) in row.iter_mut().zip(hyperfine) {
            *slot = centre + m * constants.a_hf;
        }
    }
    out
}

/// Spin frequency traces over a field time series, `[transition][line][sample]`.
pub fn spin_frequency_traces(
    basis: &NvBasis,
    total_field: &[Vector3<f64>],
    constants: &PhysicalConstants,
    hyperfine: &[f64; 3],
) -> Vec<Vec<Vec<f64>>> {
    let mut out = vec![vec![Vec::with_capacity(total_field.len()); 3]; 8];
    for b in total_field {
        let w = spin_frequencies(basis, b, constants, hyperfine);
        for (k, lines) in w.iter().enumerate() {
            for (m, v) in lines.iter().enumerate() {
                out[k][m].push(*v);
            }
        }
    }
    out
}

/// Three orthogonal sinusoidal test fields along x, y and z.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestField {
    /// RMS amplitude per lab axis (T).
    pub amplitudes: Vector3<f64>,
    /// Frequency per lab axis (Hz).
    pub freqs: Vector3<f64>,
}

impl TestField {
    pub fn zero() -> Self {
        Self {
            amplitudes: Vector3::zeros(),
            freqs: Vector3::new(1.0, 1.0, 1.0),
        }
    }

    pub fn at(&self, t: f64) -> Vector3<f64> {
        Vector3::from_fn(|k, _| {
            if self.amplitudes[k] == 0.0 {
                0.0
            } else {
                2f64.sqrt() * self.amplitudes[k] * (TWO_PI * self.freqs[k] * t).sin()
            }
        })
    }
}

pub fn test_field(amplitudes: Vector3<f64>, freqs: Vector3<f64>, t_grid: &[f64]) -> Vec<Vector3<f64>> {
    let f = TestField { amplitudes, freqs };
    t_grid.iter().map(|&t| f.at(t)).collect()
}

/// What a [`NoiseSpectrum`] describes, which fixes its units.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseKind {
    /// Fractional amplitude noise, PSD given in dBc/Hz.
    Amplitude,
    /// Phase noise, PSD given in dBc/Hz.
    Phase,
    /// Magnetic field noise, PSD given in T²/Hz.
    Field,
}

/// A one-sided noise PSD on a frequency grid.
///
/// For amplitude and phase noise the values are single-sideband levels
/// `L(f)` in dBc/Hz; the one-sided PSD of the fractional amplitude (or of the
/// phase in rad) is `2·10^(L/10)` per hertz. Field spectra are stored in T²/Hz.
/// Between grid points the PSD is interpolated linearly in log-power; outside
/// the grid it is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpectrum {
    pub freqs: Vec<f64>,
    pub psd: Vec<f64>,
    pub kind: NoiseKind,
}

/// Level used to encode "no noise" in dBc/Hz spectra.
pub const DBC_OFF: f64 = f64::NEG_INFINITY;

impl NoiseSpectrum {
    pub fn new(freqs: Vec<f64>, psd: Vec<f64>, kind: NoiseKind) -> Result<Self> {
        if freqs.len() != psd.len() || freqs.is_empty() {
            return Err(Error::InvalidInput("frequency and PSD grids must be non-empty and equal length".into()));
        }
        if freqs.windows(2).any(|w| !(w[1] > w[0])) || freqs[0] < 0.0 {
            return Err(Error::InvalidInput("frequencies must be non-negative and strictly increasing".into()));
        }
        let ok = match kind {
            NoiseKind::Field => psd.iter().all(|p| p.is_finite() && *p >= 0.0),
            _ => psd.iter().all(|p| p.is_finite() || *p == DBC_OFF),
        };
        if !ok {
            return Err(Error::InvalidInput("PSD values must be finite".into()));
        }
        Ok(Self { freqs, psd, kind })
    }

    /// Flat spectrum from `f_lo` to `f_hi`.
    pub fn flat(level: f64, f_lo: f64, f_hi: f64, kind: NoiseKind) -> Result<Self> {
        Self::new(vec![f_lo, f_hi], vec![level, level], kind)
    }

    pub fn max_freq(&self) -> f64 {
        *self.freqs.last().unwrap()
    }

    fn to_si(&self, v: f64) -> f64 {
        match self.kind {
            NoiseKind::Field => v,
            _ => dbc_to_fractional_psd(v),
        }
    }

    /// One-sided PSD in SI units at frequency `f`.
    pub fn si_psd(&self, f: f64) -> f64 {
        let n = self.freqs.len();
        if f < self.freqs[0] || f > self.freqs[n - 1] {
            return 0.0;
        }
        let j = self.freqs.partition_point(|&x| x <= f);
        if j == 0 {
            return self.to_si(self.psd[0]);
        }
        if j >= n {
            return self.to_si(self.psd[n - 1]);
        }
        let (f0, f1) = (self.freqs[j - 1], self.freqs[j]);
        let (p0, p1) = (self.to_si(self.psd[j - 1]), self.to_si(self.psd[j]));
        if p0 <= 0.0 || p1 <= 0.0 {
            let w = (f - f0) / (f1 - f0);
            return p0 * (1.0 - w) + p1 * w;
        }
        let w = if f0 > 0.0 {
            (f / f0).ln() / (f1 / f0).ln()
        } else {
            (f - f0) / (f1 - f0)
        };
        (p0.ln() * (1.0 - w) + p1.ln() * w).exp()
    }

    /// Reads a two-column CSV `freq_hz, psd`. A header line is optional.
    pub fn from_csv(path: &Path, kind: NoiseKind) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse_csv(&text, kind)
    }

    pub fn parse_csv(text: &str, kind: NoiseKind) -> Result<Self> {
        let mut freqs = Vec::new();
        let mut psd = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut cols = line.split(',').map(str::trim);
            let (Some(a), Some(b)) = (cols.next(), cols.next()) else {
                return Err(Error::Parse(format!("line {}: expected two columns", lineno + 1)));
            };
            match (a.parse::<f64>(), b.parse::<f64>()) {
                (Ok(f), Ok(p)) => {
                    freqs.push(f);
                    psd.push(p);
                }
                _ if freqs.is_empty() && lineno == 0 => continue,
                _ => return Err(Error::Parse(format!("line {}: not numeric: {line}", lineno + 1))),
            }
        }
        Self::new(freqs, psd, kind)
    }
}

/// Single-sideband dBc/Hz to one-sided fractional PSD per hertz.
pub fn dbc_to_fractional_psd(level_dbc: f64) -> f64 {
    2.0 * 10f64.powf(level_dbc / 10.0)
}

/// A generated noise time series.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseRealization {
    pub samples: Vec<f64>,
    pub sample_rate: f64,
    pub source_spectrum: NoiseSpectrum,
}

impl NoiseRealization {
    pub fn series(&self) -> SampledSeries {
        SampledSeries {
            samples: self.samples.clone(),
            sample_rate: self.sample_rate,
        }
    }

    pub fn into_series(self) -> SampledSeries {
        SampledSeries {
            samples: self.samples,
            sample_rate: self.sample_rate,
        }
    }
}

/// Gaussian noise with the given one-sided PSD, generated by shaping a
/// white complex-Gaussian spectrum and inverse transforming.
pub fn colored_noise(spec: &NoiseSpectrum, sample_rate: f64, duration: f64, seed: u64) -> Result<NoiseRealization> {
    if !(sample_rate > 0.0) || !(duration > 0.0) {
        return Err(Error::InvalidInput("sample rate and duration must be positive".into()));
    }
    let nyquist = sample_rate / 2.0;
    if spec.max_freq() > nyquist * (1.0 + 1e-12) {
        return Err(Error::InvalidInput(format!(
            "spectrum extends to {} Hz, beyond the Nyquist frequency {} Hz",
            spec.max_freq(),
            nyquist
        )));
    }
    let n = (duration * sample_rate).round() as usize;
    if n < 2 {
        return Err(Error::InvalidInput("realization needs at least two samples".into()));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let df = sample_rate / n as f64;
    let mut spectrum = vec![Complex64::new(0.0, 0.0); n];
    let half = n / 2;
    let mut any = false;
    for k in 1..=half {
        let s = spec.si_psd(k as f64 * df);
        let g1: f64 = StandardNormal.sample(&mut rng);
        let g2: f64 = StandardNormal.sample(&mut rng);
        if s <= 0.0 {
            continue;
        }
        any = true;
        if 2 * k == n {
            spectrum[k] = Complex64::new((s * sample_rate * n as f64).sqrt() * g1, 0.0);
        } else {
            let sigma = (s * sample_rate * n as f64 / 2.0).sqrt();
            let x = Complex64::new(g1, g2) * (sigma / 2f64.sqrt());
            spectrum[k] = x;
            spectrum[n - k] = x.conj();
        }
    }
    let samples = if any {
        FftPlanner::new().plan_fft_inverse(n).process(&mut spectrum);
        spectrum.iter().map(|c| c.re / n as f64).collect()
    } else {
        vec![0.0; n]
    };
    Ok(NoiseRealization {
        samples,
        sample_rate,
        source_spectrum: spec.clone(),
    })
}
