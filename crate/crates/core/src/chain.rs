//! End-to-end runs: forward model streamed frame by frame through the
//! readout pipeline.

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::pipeline::{
    combine_tau, frame_bounds, linearize_cosine, locate_peaks, Frame, FramePeaks, LinearizedFrame, TauVector,
    TemplateConfig, TemplateSet, XGrid,
};
use crate::sensor::{ExternalField, MwNoise, ReflectionStream, SensorModel};
use crate::synth::BiasWaveform;

/// Normalized resonance positions `β` and the template window half-widths of
/// the first three orientations for a sensor and bias amplitude vector.
pub fn resonance_layout(model: &SensorModel, b0: &Vector3<f64>) -> Result<([f64; 3], [f64; 3])> {
    let c = &model.constants;
    let offset = model.params.cavity.omega_c - c.d_zfs;
    let mut centers = [0.0; 3];
    let mut widths = [0.0; 3];
    for i in 0..3 {
        let sweep = c.gamma_e * model.basis.axis(i).dot(b0).abs();
        if !(sweep > offset) {
            return Err(Error::InvalidInput(format!("orientation {} is not swept through the cavity", i + 1)));
        }
        centers[i] = offset / sweep;
        let ks = model.params.transitions[2 * i].kappa_s;
        widths[i] = (c.a_hf + ks) / sweep;
    }
    Ok((centers, widths))
}

pub fn template_config(model: &SensorModel, b0: &Vector3<f64>, grid: XGrid) -> Result<TemplateConfig> {
    let (centers, widths) = resonance_layout(model, b0)?;
    Ok(TemplateConfig::new(grid, centers, widths))
}

/// Iterates over linearized frames of a synthesized record.
pub struct FrameSource<'a> {
    stream: ReflectionStream<'a>,
    bias: &'a BiasWaveform,
    grid: XGrid,
    index: usize,
    consumed: usize,
    buf: Vec<num_complex::Complex64>,
}

impl<'a> FrameSource<'a> {
    pub fn new(
        model: &'a SensorModel,
        bias: &'a BiasWaveform,
        external: &'a ExternalField,
        noise: &'a MwNoise,
        grid: XGrid,
    ) -> Result<Self> {
        Ok(Self {
            stream: ReflectionStream::new(model, bias, external, noise)?,
            bias,
            grid,
            index: 0,
            consumed: 0,
            buf: Vec::new(),
        })
    }

    pub fn frame_count(&self) -> usize {
        let mut n = 0;
        while frame_bounds(n, self.bias.period(), self.bias.sample_rate).1 <= self.stream.total_samples() {
            n += 1;
        }
        n
    }

    /// Next raw frame, or `None` once no full period remains.
    pub fn next_frame(&mut self) -> Result<Option<Frame>> {
        let (a, b) = frame_bounds(self.index, self.bias.period(), self.bias.sample_rate);
        if b > self.stream.total_samples() {
            return Ok(None);
        }
        debug_assert_eq!(a, self.consumed);
        self.buf.clear();
        self.stream.fill(b - a, &mut self.buf)?;
        self.consumed = b;
        let f = Frame {
            samples: self.buf.clone(),
            start_time: a as f64 / self.bias.sample_rate,
            index: self.index,
        };
        self.index += 1;
        Ok(Some(f))
    }

    pub fn next_linearized(&mut self) -> Result<Option<LinearizedFrame>> {
        let g = self.grid;
        let (om, fs) = (self.bias.omega_m, self.bias.sample_rate);
        Ok(self.next_frame()?.map(|f| linearize_cosine(&f, om, fs, g)))
    }
}

/// Learns templates from a clean record: no external field and no noise.
pub fn learn_templates(model: &SensorModel, bias: &BiasWaveform, cfg: &TemplateConfig, n_frames: usize) -> Result<TemplateSet> {
    let mut clean = BiasWaveform::new(bias.b0_vec, bias.omega_m, bias.sample_rate, n_frames as f64 * bias.period())?;
    clean.duration += 0.5 / bias.sample_rate;
    let ext = ExternalField::none();
    let noise = MwNoise::none();
    let mut src = FrameSource::new(model, &clean, &ext, &noise, cfg.grid)?;
    let mut frames = Vec::with_capacity(n_frames);
    while let Some(f) = src.next_linearized()? {
        frames.push(f);
    }
    TemplateSet::build(&frames, cfg)
}

/// Output of a processed record.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcessedRun {
    pub taus: Vec<TauVector>,
    /// Per-frame peaks, when requested.
    pub peaks: Vec<FramePeaks>,
    /// One τ sample per bias period.
    pub frame_rate: f64,
    pub invalid_frames: usize,
}

impl ProcessedRun {
    /// τ series of one orientation with invalid frames removed.
    pub fn tau_series(&self, orientation: usize) -> Vec<f64> {
        self.taus.iter().filter(|t| t.valid[orientation]).map(|t| t.tau[orientation]).collect()
    }

    /// Whether every frame produced all three values.
    pub fn all_valid(&self) -> bool {
        self.invalid_frames == 0
    }
}

/// Synthesizes and processes a record frame by frame.
pub fn run_chain(
    model: &SensorModel,
    bias: &BiasWaveform,
    external: &ExternalField,
    noise: &MwNoise,
    templates: &TemplateSet,
    keep_peaks: bool,
) -> Result<ProcessedRun> {
    let mut src = FrameSource::new(model, bias, external, noise, templates.config.grid)?;
    let mut taus = Vec::new();
    let mut peaks = Vec::new();
    let mut prior: Option<FramePeaks> = None;
    let mut invalid = 0;
    while let Some(lf) = src.next_linearized()? {
        let p = locate_peaks(&lf, templates, prior.as_ref(), taus.len());
        let t = combine_tau(&p);
        if !t.valid.iter().all(|&v| v) {
            invalid += 1;
        }
        taus.push(t);
        if keep_peaks {
            peaks.push(p.clone());
        }
        prior = Some(p);
    }
    Ok(ProcessedRun {
        taus,
        peaks,
        frame_rate: bias.omega_m / crate::synth::TWO_PI,
        invalid_frames: invalid,
    })
}
