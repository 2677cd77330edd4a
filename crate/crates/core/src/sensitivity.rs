//! Noise-floor estimation, orthogonal-basis bounds, the harmonic structure of
//! the reflected signal and the noise-bandwidth study.

use std::io::Write;

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;

use crate::calibration::CalibrationResult;
use crate::chain::run_chain;
use crate::error::{Error, Result};
use crate::geometry::NvBasis;
use crate::pipeline::TemplateSet;
use crate::sensor::{ExternalField, MwNoise, SensorModel};
use crate::synth::{colored_noise, BiasWaveform, NoiseKind, NoiseSpectrum, TWO_PI};

/// Welch estimator settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AsdOptions {
    pub segment_seconds: f64,
    /// Fractional overlap of consecutive segments.
    pub overlap: f64,
    pub min_segments: usize,
}

impl Default for AsdOptions {
    fn default() -> Self {
        Self {
            segment_seconds: 1.0,
            overlap: 0.5,
            min_segments: 8,
        }
    }
}

/// One-sided amplitude spectral density.
#[derive(Debug, Clone, PartialEq)]
pub struct AmplitudeSpectralDensity {
    pub freqs: Vec<f64>,
    pub asd: Vec<f64>,
    pub segment_len: usize,
    pub segments: usize,
    pub window: &'static str,
    pub overlap: f64,
}

impl AmplitudeSpectralDensity {
    pub fn resolution(&self) -> f64 {
        self.freqs.get(1).copied().unwrap_or(0.0)
    }

    pub fn write_csv<W: Write>(&self, w: W, value_name: &str) -> Result<()> {
        let mut w = std::io::BufWriter::new(w);
        writeln!(w, "freq_hz,{value_name}")?;
        for (f, a) in self.freqs.iter().zip(&self.asd) {
            writeln!(w, "{f},{a:e}")?;
        }
        Ok(())
    }
}

fn hann(n: usize) -> Vec<f64> {
    (0..n).map(|k| 0.5 - 0.5 * (TWO_PI * k as f64 / n as f64).cos()).collect()
}

struct Segmentation {
    len: usize,
    step: usize,
    count: usize,
}

fn segmentation(n: usize, sample_rate: f64, opts: &AsdOptions) -> Result<Segmentation> {
    if !(sample_rate > 0.0) || !(opts.segment_seconds > 0.0) || !(0.0..1.0).contains(&opts.overlap) {
        return Err(Error::InvalidInput("invalid spectral estimator settings".into()));
    }
    let len = (opts.segment_seconds * sample_rate).round() as usize;
    let step = ((len as f64) * (1.0 - opts.overlap)).round().max(1.0) as usize;
    let count = if n >= len && len >= 2 { (n - len) / step + 1 } else { 0 };
    if count < opts.min_segments {
        return Err(Error::TooShort(format!(
            "{n} samples give {count} segments of {len}; need at least {}",
            opts.min_segments
        )));
    }
    Ok(Segmentation { len, step, count })
}

/// Averaged one-sided cross spectral density `S_ab` (units of a·b per Hz) of
/// mean-removed, Hann-windowed segments.
pub fn cross_spectral_density(a: &[f64], b: &[f64], sample_rate: f64, opts: &AsdOptions) -> Result<(Vec<f64>, Vec<Complex64>)> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(format!("{} vs {} samples", a.len(), b.len())));
    }
    let seg = segmentation(a.len(), sample_rate, opts)?;
    let win = hann(seg.len);
    let norm = sample_rate * win.iter().map(|w| w * w).sum::<f64>();
    let fft = FftPlanner::new().plan_fft_forward(seg.len);
    let nbins = seg.len / 2 + 1;
    let mut acc = vec![Complex64::new(0.0, 0.0); nbins];
    let spectrum = |x: &[f64]| {
        let mean = x.iter().sum::<f64>() / x.len() as f64;
        let mut buf: Vec<Complex64> = x.iter().zip(&win).map(|(v, w)| Complex64::new((v - mean) * w, 0.0)).collect();
        fft.process(&mut buf);
        buf
    };
    for s in 0..seg.count {
        let r = s * seg.step..s * seg.step + seg.len;
        let fa = spectrum(&a[r.clone()]);
        let fb = if std::ptr::eq(a, b) { fa.clone() } else { spectrum(&b[r]) };
        for k in 0..nbins {
            acc[k] += fa[k] * fb[k].conj();
        }
    }
    let scale = 1.0 / (seg.count as f64 * norm);
    let freqs = (0..nbins).map(|k| k as f64 * sample_rate / seg.len as f64).collect();
    let csd = acc
        .iter()
        .enumerate()
        .map(|(k, v)| {
            let one_sided = if k == 0 || 2 * k == seg.len { 1.0 } else { 2.0 };
            v * scale * one_sided
        })
        .collect();
    Ok((freqs, csd))
}

pub fn estimate_asd_with(series: &[f64], sample_rate: f64, opts: &AsdOptions) -> Result<AmplitudeSpectralDensity> {
    let seg = segmentation(series.len(), sample_rate, opts)?;
    let (freqs, psd) = cross_spectral_density(series, series, sample_rate, opts)?;
    Ok(AmplitudeSpectralDensity {
        freqs,
        asd: psd.iter().map(|p| p.re.max(0.0).sqrt()).collect(),
        segment_len: seg.len,
        segments: seg.count,
        window: "hann",
        overlap: opts.overlap,
    })
}

/// Welch estimate with 1 s Hann segments and 50% overlap.
pub fn estimate_asd(series: &[f64], sample_rate: f64) -> Result<AmplitudeSpectralDensity> {
    estimate_asd_with(series, sample_rate, &AsdOptions::default())
}

/// Frequency band used for single-number sensitivities.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatBand {
    pub lo: f64,
    pub hi: f64,
    /// Tone frequencies whose neighbourhood is excluded.
    pub exclude: Vec<f64>,
    pub exclude_half_width: f64,
}

impl Default for FlatBand {
    fn default() -> Self {
        Self {
            lo: 10.0,
            hi: 900.0,
            exclude: Vec::new(),
            exclude_half_width: 1.0,
        }
    }
}

impl FlatBand {
    pub fn excluding(mut self, tones: &[f64]) -> Self {
        self.exclude.extend_from_slice(tones);
        self
    }

    pub fn contains(&self, f: f64) -> bool {
        f >= self.lo && f <= self.hi && self.exclude.iter().all(|t| (f - t).abs() > self.exclude_half_width)
    }

    fn bins(&self, freqs: &[f64]) -> Result<Vec<usize>> {
        let idx: Vec<usize> = (0..freqs.len()).filter(|&k| self.contains(freqs[k])).collect();
        if idx.is_empty() {
            return Err(Error::InvalidInput(format!("no spectral bins in {}–{} Hz", self.lo, self.hi)));
        }
        Ok(idx)
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median ASD over the band.
pub fn band_floor(asd: &AmplitudeSpectralDensity, band: &FlatBand) -> Result<f64> {
    let idx = band.bins(&asd.freqs)?;
    Ok(median(idx.iter().map(|&k| asd.asd[k]).collect()))
}

/// Real part of the cross-spectral matrix of three series, averaged over the
/// band (units of series² per Hz).
pub fn noise_covariance(series: [&[f64]; 3], sample_rate: f64, opts: &AsdOptions, band: &FlatBand) -> Result<Matrix3<f64>> {
    let mut out = Matrix3::zeros();
    for i in 0..3 {
        for j in i..3 {
            let (freqs, csd) = cross_spectral_density(series[i], series[j], sample_rate, opts)?;
            let idx = band.bins(&freqs)?;
            let v = idx.iter().map(|&k| csd[k].re).sum::<f64>() / idx.len() as f64;
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    Ok(out)
}

/// Directional sensitivities of the calibrated vector output.
#[derive(Debug, Clone, PartialEq)]
pub struct OrthogonalBounds {
    /// Eigenvalues of `(I+C)Aσ²Aᵀ(I+C)ᵀ`, ascending.
    pub eigenvalues: [f64; 3],
    /// Square roots of the eigenvalues.
    pub sensitivities: [f64; 3],
    /// Unit eigenvectors as columns, matching `eigenvalues`.
    pub directions: Matrix3<f64>,
    /// The propagated covariance itself.
    pub field_covariance: Matrix3<f64>,
}

impl OrthogonalBounds {
    /// Variance along a unit direction.
    pub fn variance_along(&self, v: &Vector3<f64>) -> f64 {
        (v.transpose() * self.field_covariance * v)[(0, 0)]
    }
}

/// Eigen-decomposition of the τ covariance propagated to field.
pub fn orthogonal_bounds(sigma2: &Matrix3<f64>, cal: &CalibrationResult) -> Result<OrthogonalBounds> {
    let scale = sigma2.norm();
    if (sigma2 - sigma2.transpose()).norm() > 1e-12 * scale {
        return Err(Error::InvalidInput("covariance matrix is not symmetric".into()));
    }
    let t = cal.transfer();
    let mut cov = t * sigma2 * t.transpose();
    cov = (cov + cov.transpose()) * 0.5;
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    // round-off can leave tiny negative eigenvalues of a semidefinite matrix
    let tol = 1e-12 * cov.norm();
    let mut eigenvalues = [0.0; 3];
    let mut directions = Matrix3::zeros();
    for (slot, &k) in order.iter().enumerate() {
        let l = eig.eigenvalues[k];
        if l < -tol {
            return Err(Error::InvalidInput("covariance matrix is not positive semidefinite".into()));
        }
        eigenvalues[slot] = l.max(0.0);
        directions.set_column(slot, &eig.eigenvectors.column(k));
    }
    Ok(OrthogonalBounds {
        eigenvalues,
        sensitivities: eigenvalues.map(f64::sqrt),
        directions,
        field_covariance: cov,
    })
}

/// Field per unit τ along each orientation: the hyperfine single-axis gains
/// when available, otherwise `B₀ |(Un̂ᵢ)·b̂|` from the geometric fit.
pub fn single_axis_gains(cal: &CalibrationResult, basis: &NvBasis) -> [f64; 3] {
    cal.a_axis.unwrap_or_else(|| cal.projections(basis).map(|p| (cal.b0_mag * p).abs()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityReport {
    /// Flat-band floor of each τ component (1/√Hz).
    pub tau_floors: [f64; 3],
    /// The same floors in tesla/√Hz via the single-axis gains.
    pub single_axis_floors: [f64; 3],
    /// Band-averaged τ cross-spectral matrix.
    pub covariance: Matrix3<f64>,
    pub bounds: OrthogonalBounds,
    pub asd: [AmplitudeSpectralDensity; 3],
}

/// Floors, covariance and orthogonal bounds from three τ series.
pub fn sensitivity_report(
    series: [&[f64]; 3],
    frame_rate: f64,
    cal: &CalibrationResult,
    basis: &NvBasis,
    opts: &AsdOptions,
    band: &FlatBand,
) -> Result<SensitivityReport> {
    let asd = [
        estimate_asd_with(series[0], frame_rate, opts)?,
        estimate_asd_with(series[1], frame_rate, opts)?,
        estimate_asd_with(series[2], frame_rate, opts)?,
    ];
    let tau_floors = [band_floor(&asd[0], band)?, band_floor(&asd[1], band)?, band_floor(&asd[2], band)?];
    let gains = single_axis_gains(cal, basis);
    let covariance = noise_covariance(series, frame_rate, opts, band)?;
    let bounds = orthogonal_bounds(&covariance, cal)?;
    Ok(SensitivityReport {
        tau_floors,
        single_axis_floors: std::array::from_fn(|i| tau_floors[i] * gains[i]),
        covariance,
        bounds,
        asd,
    })
}

/// Complex amplitude of the `e^{i2πft}` component of a sampled signal.
pub fn line_amplitude(samples: &[Complex64], sample_rate: f64, freq: f64) -> Complex64 {
    let w = TWO_PI * freq / sample_rate;
    let s: Complex64 = samples
        .iter()
        .enumerate()
        .map(|(k, z)| z * Complex64::from_polar(1.0, -w * k as f64))
        .sum();
    s / samples.len() as f64
}

/// Fourier transform `R(ω) = ∫ r(t) e^{−iωt} dt` of a sampled segment.
pub fn segment_transform(segment: &[Complex64], sample_rate: f64, omega: f64) -> Complex64 {
    line_amplitude(segment, sample_rate, omega / TWO_PI) * (segment.len() as f64 / sample_rate)
}

/// Predicted spectral content at one harmonic of the bias frequency.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HarmonicLine {
    pub harmonic: usize,
    pub freq: f64,
    /// Line amplitude of the field-free periodic signal.
    pub comb: f64,
    /// Line amplitude contributed by a slowly varying external field.
    pub field: f64,
}

/// Harmonic structure of the reflected signal modelled as one half-period
/// segment repeated every half period.
///
/// `shift_per_tesla` converts field into the time shift of the segment and
/// `field_amplitude` is the magnitude of the field's spectrum at the
/// sideband in question. Even harmonics carry the comb `|R(ω)| ω_m/π`;
/// the field term `(ω_m/2π)|R(ω)| ω a |B| √(2 − 2cos(πω/ω_m))` vanishes there.
pub fn harmonic_model(
    half_period: &[Complex64],
    sample_rate: f64,
    omega_m: f64,
    shift_per_tesla: f64,
    field_amplitude: f64,
    n_harmonics: usize,
) -> Vec<HarmonicLine> {
    (1..=n_harmonics)
        .map(|n| {
            let w = n as f64 * omega_m;
            let r = segment_transform(half_period, sample_rate, w).norm();
            let comb = if n % 2 == 0 { r * omega_m / std::f64::consts::PI } else { 0.0 };
            let s = (2.0 - 2.0 * (std::f64::consts::PI * w / omega_m).cos()).max(0.0).sqrt();
            let field = omega_m / TWO_PI * r * w * shift_per_tesla * field_amplitude * s;
            HarmonicLine {
                harmonic: n,
                freq: w / TWO_PI,
                comb,
                field,
            }
        })
        .collect()
}

/// Measured line amplitudes `|c(n f_m)|` of a record at the first harmonics.
pub fn harmonic_amplitudes(samples: &[Complex64], sample_rate: f64, bias_freq: f64, n_harmonics: usize) -> Vec<f64> {
    (1..=n_harmonics)
        .map(|n| line_amplitude(samples, sample_rate, n as f64 * bias_freq).norm())
        .collect()
}

/// Settings of the noise-bandwidth study.
#[derive(Debug, Clone, PartialEq)]
pub struct BandwidthSweep {
    /// Single-sideband amplitude-noise level (dBc/Hz).
    pub psd_dbc: f64,
    pub bandwidths: Vec<f64>,
    pub seed: u64,
    pub asd: AsdOptions,
    pub band: FlatBand,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub bandwidth: f64,
    /// Flat-band τ floors (1/√Hz).
    pub tau_floors: [f64; 3],
}

/// Amplitude noise flat from 0 to `bandwidth` at the given level.
pub fn band_limited_amplitude_noise(psd_dbc: f64, bandwidth: f64, sample_rate: f64, duration: f64, seed: u64) -> Result<MwNoise> {
    let spec = NoiseSpectrum::flat(psd_dbc, 0.0, bandwidth, NoiseKind::Amplitude)?;
    // a little beyond the record so interpolation near the end stays inside
    let n = colored_noise(&spec, sample_rate, duration + 2.0 / sample_rate, seed)?;
    Ok(MwNoise {
        amplitude: Some(n.into_series()),
        phase: None,
    })
}

/// τ floors against amplitude-noise bandwidth. Every point reuses the same
/// seed, so a wider band adds spectral components to the narrower band's
/// realization rather than drawing a new one. Points run in parallel.
pub fn noise_bandwidth_sweep(
    model: &SensorModel,
    bias: &BiasWaveform,
    templates: &TemplateSet,
    sweep: &BandwidthSweep,
) -> Result<Vec<SweepPoint>> {
    let nyquist = bias.sample_rate / 2.0;
    if let Some(bw) = sweep.bandwidths.iter().find(|&&b| !(b > 0.0 && b <= nyquist)) {
        return Err(Error::InvalidInput(format!("bandwidth {bw} Hz outside (0, {nyquist}] Hz")));
    }
    let ext = ExternalField::none();
    sweep
        .bandwidths
        .par_iter()
        .map(|&bw| {
            let noise = band_limited_amplitude_noise(sweep.psd_dbc, bw, bias.sample_rate, bias.duration, sweep.seed)?;
            let run = run_chain(model, bias, &ext, &noise, templates, false)?;
            let s: [Vec<f64>; 3] = crate::calibration::fill_invalid(&run.taus)?;
            let mut floors = [0.0; 3];
            for i in 0..3 {
                floors[i] = band_floor(&estimate_asd_with(&s[i], run.frame_rate, &sweep.asd)?, &sweep.band)?;
            }
            Ok(SweepPoint {
                bandwidth: bw,
                tau_floors: floors,
            })
        })
        .collect()
}
