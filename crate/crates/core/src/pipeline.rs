//! Readout processing: framing, linearization against the bias sweep,
//! matched filtering, peak localization and the noise-cancelling combination.
//!
//! # Coordinates
//!
//! Frames start at bias phase zero, so the first half of a frame is the
//! falling (↓) half and the second the rising (↑) half. Each half is resampled
//! onto a normalized bias coordinate `x ∈ [−1, 1]` that increases with time:
//! `x = −cos ω_m t` on the ↓ half and `x = cos ω_m t` on the ↑ half.
//!
//! An orientation with normalized resonance position `β` shows four peaks,
//! ordered `(−↓, +↓, +↑, −↑)` at `x ≈ (−β, +β, −β, +β)`. A static field adds
//! `δ = ΔB·n̂/(B₀·n̂)` to the first two and subtracts it from the last two, so
//! `τ = (x₀ + x₁ − x₂ − x₃)/4 = δ` exactly, while a bias amplitude scaling or a
//! time shift of the sweep cancels identically.

use std::io::Write;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::synth::TWO_PI;
use crate::trace::ReflectionTrace;

/// One bias period of the reflected signal.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub samples: Vec<Complex64>,
    pub start_time: f64,
    pub index: usize,
}

/// Number of samples in the frame starting at `index`, chosen so that frames
/// tile the record without gaps even when `T·f_s` is not an integer.
pub fn frame_bounds(index: usize, period: f64, sample_rate: f64) -> (usize, usize) {
    let a = (index as f64 * period * sample_rate).round() as usize;
    let b = ((index + 1) as f64 * period * sample_rate).round() as usize;
    (a, b)
}

/// Splits a trace into contiguous single-period frames; a partial trailing
/// period is dropped.
pub fn parse_frames(trace: &ReflectionTrace, omega_m: f64) -> Result<Vec<Frame>> {
    if !(omega_m > 0.0) {
        return Err(Error::InvalidInput("modulation frequency must be positive".into()));
    }
    let period = TWO_PI / omega_m;
    let fs = trace.sample_rate;
    let mut out = Vec::new();
    loop {
        let (a, b) = frame_bounds(out.len(), period, fs);
        if b > trace.len() || b == a {
            break;
        }
        out.push(Frame {
            samples: trace.samples[a..b].to_vec(),
            start_time: trace.start_time + a as f64 / fs,
            index: out.len(),
        });
    }
    if out.is_empty() {
        return Err(Error::TooShort(format!(
            "{} samples is less than one bias period ({:.1} samples)",
            trace.len(),
            period * fs
        )));
    }
    Ok(out)
}

/// Which half of the bias period a peak belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Half {
    Down,
    Up,
}

/// The four peak slots of one orientation: half and the side (`±β`) on which
/// the peak sits in the linearized coordinate.
pub const SLOTS: [(Half, f64); 4] = [(Half::Down, -1.0), (Half::Down, 1.0), (Half::Up, -1.0), (Half::Up, 1.0)];

/// Uniform cell-centred grid on `[−1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct XGrid {
    pub n: usize,
}

impl XGrid {
    pub fn step(&self) -> f64 {
        2.0 / self.n as f64
    }

    pub fn x(&self, j: f64) -> f64 {
        -1.0 + (j + 0.5) * self.step()
    }

    pub fn index(&self, x: f64) -> f64 {
        (x + 1.0) / self.step() - 0.5
    }
}

/// A frame resampled onto the normalized bias coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearizedFrame {
    pub grid: XGrid,
    pub down: Vec<Complex64>,
    pub up: Vec<Complex64>,
}

impl LinearizedFrame {
    pub fn half(&self, h: Half) -> &[Complex64] {
        match h {
            Half::Down => &self.down,
            Half::Up => &self.up,
        }
    }

    /// Magnitude of both halves, for export and inspection.
    pub fn magnitude(&self, h: Half) -> Vec<f64> {
        self.half(h).iter().map(|z| z.norm()).collect()
    }
}

/// Catmull-Rom interpolation at fractional sample position `pos`.
fn cubic_at(s: &[Complex64], pos: f64) -> Complex64 {
    let n = s.len() as isize;
    let i = pos.floor() as isize;
    let f = pos - i as f64;
    let at = |k: isize| s[k.clamp(0, n - 1) as usize];
    let (p0, p1, p2, p3) = (at(i - 1), at(i), at(i + 1), at(i + 2));
    let f2 = f * f;
    let f3 = f2 * f;
    p1 * (1.0 - 2.5 * f2 + 1.5 * f3) + (p2 - p0) * (0.5 * f) + p0 * (f2 - 0.5 * f3) + p2 * (2.0 * f2 - 1.5 * f3)
        - p3 * (0.5 * f2 - 0.5 * f3)
}

/// Linearizes a frame whose bias reference is `cos(ω_m t)` with `t` measured
/// from the frame start.
pub fn linearize_cosine(frame: &Frame, omega_m: f64, sample_rate: f64, grid: XGrid) -> LinearizedFrame {
    let period = TWO_PI / omega_m;
    let mut down = Vec::with_capacity(grid.n);
    let mut up = Vec::with_capacity(grid.n);
    for j in 0..grid.n {
        let x = grid.x(j as f64);
        let t_down = (-x).acos() / omega_m;
        let t_up = period - x.acos() / omega_m;
        down.push(cubic_at(&frame.samples, t_down * sample_rate));
        up.push(cubic_at(&frame.samples, t_up * sample_rate));
    }
    LinearizedFrame { grid, down, up }
}

/// Linearizes a frame against sampled bias reference values (normalized to
/// unit amplitude), one per frame sample. The reference must fall
/// monotonically to its minimum and then rise monotonically.
pub fn linearize(frame: &Frame, bias_reference: &[f64], grid: XGrid) -> Result<LinearizedFrame> {
    let n = frame.samples.len();
    if bias_reference.len() != n {
        return Err(Error::LengthMismatch("bias reference and frame differ in length".into()));
    }
    if n < 4 {
        return Err(Error::TooShort("frame needs at least four samples".into()));
    }
    let turn = bias_reference
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap();
    let falling = &bias_reference[..=turn];
    let rising = &bias_reference[turn..];
    if falling.windows(2).any(|w| w[1] > w[0]) || rising.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidInput("bias reference is not monotone on each half-cycle".into()));
    }
    // position (fractional sample index) at which the monotone segment reaches `v`
    let invert = |seg: &[f64], offset: usize, v: f64, increasing: bool| -> f64 {
        let key = |y: f64| if increasing { y } else { -y };
        let target = key(v);
        let k = seg.partition_point(|&y| key(y) < target);
        if k == 0 {
            return offset as f64;
        }
        if k >= seg.len() {
            return (offset + seg.len() - 1) as f64;
        }
        let (a, b) = (key(seg[k - 1]), key(seg[k]));
        let f = if b > a { (target - a) / (b - a) } else { 0.0 };
        (offset + k - 1) as f64 + f
    };
    let mut down = Vec::with_capacity(grid.n);
    let mut up = Vec::with_capacity(grid.n);
    for j in 0..grid.n {
        let x = grid.x(j as f64);
        down.push(cubic_at(&frame.samples, invert(falling, 0, -x, false)));
        up.push(cubic_at(&frame.samples, invert(rising, turn, x, true)));
    }
    Ok(LinearizedFrame { grid, down, up })
}

/// Layout of the peak windows and filter settings.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplateConfig {
    pub grid: XGrid,
    /// Nominal `β` of each orientation.
    pub centers: [f64; 3],
    /// Half-width of each orientation's template window, in `x` units.
    pub half_widths: [f64; 3],
    /// Largest peak excursion tracked from one frame to the next, in `x` units.
    pub search: f64,
    pub min_frames: usize,
    /// Normalized correlation below this marks a peak missing.
    pub threshold: f64,
}

impl TemplateConfig {
    pub fn new(grid: XGrid, centers: [f64; 3], half_widths: [f64; 3]) -> Self {
        Self {
            grid,
            centers,
            half_widths,
            search: 0.02,
            min_frames: 1,
            threshold: 0.5,
        }
    }
}

/// Template for one peak slot.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotTemplate {
    /// Mean-removed, unit-energy template.
    pub samples: Vec<Complex64>,
    /// Grid index of the first template sample at zero lag.
    pub start: usize,
    /// Linearized position of the window centre at zero lag.
    pub center: f64,
    /// Energy of the mean-removed clean window.
    pub reference: f64,
    /// Half-width (grid points) of the parabola fit.
    pub fit_half_width: usize,
}

/// All four slot templates of one orientation.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchedTemplate {
    pub orientation: usize,
    pub slots: [SlotTemplate; 4],
}

#[derive(Debug, Clone, PartialEq)]
pub struct TemplateSet {
    pub config: TemplateConfig,
    pub orientations: [MatchedTemplate; 3],
}

fn average_frames(frames: &[LinearizedFrame]) -> (Vec<Complex64>, Vec<Complex64>) {
    let n = frames[0].grid.n;
    let mut down = vec![Complex64::new(0.0, 0.0); n];
    let mut up = vec![Complex64::new(0.0, 0.0); n];
    for f in frames {
        for j in 0..n {
            down[j] += f.down[j];
            up[j] += f.up[j];
        }
    }
    let s = 1.0 / frames.len() as f64;
    (down.into_iter().map(|z| z * s).collect(), up.into_iter().map(|z| z * s).collect())
}

/// Builds the templates of one orientation from frames recorded without an
/// external field.
pub fn build_template(clean: &[LinearizedFrame], orientation: usize, cfg: &TemplateConfig) -> Result<MatchedTemplate> {
    if orientation >= 3 {
        return Err(Error::InvalidInput(format!("orientation {orientation} out of range")));
    }
    if clean.len() < cfg.min_frames.max(1) {
        return Err(Error::TooShort(format!(
            "{} clean frames given, at least {} required",
            clean.len(),
            cfg.min_frames.max(1)
        )));
    }
    if clean.iter().any(|f| f.grid != cfg.grid) {
        return Err(Error::InvalidInput("clean frames use a different grid".into()));
    }
    let (down, up) = average_frames(clean);
    let grid = cfg.grid;
    let half_pts = (cfg.half_widths[orientation] / grid.step()).round() as usize;
    let search_pts = (cfg.search / grid.step()).ceil() as usize;
    let mut slots = Vec::with_capacity(4);
    for (half, side) in SLOTS {
        let data = if half == Half::Down { &down } else { &up };
        let c = side * cfg.centers[orientation];
        let ci = grid.index(c).round() as isize;
        let start = ci - half_pts as isize;
        let len = 2 * half_pts + 1;
        if start - (search_pts as isize) < 0 || (start + len as isize + search_pts as isize) > grid.n as isize {
            return Err(Error::InvalidInput(format!(
                "template window of orientation {} at x = {c:.3} leaves the grid",
                orientation + 1
            )));
        }
        let seg = &data[start as usize..start as usize + len];
        let mean = seg.iter().sum::<Complex64>() / len as f64;
        let centred: Vec<Complex64> = seg.iter().map(|z| z - mean).collect();
        let energy = centred.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if !(energy > 0.0) {
            return Err(Error::Calibration(format!(
                "no resonance signal in window of orientation {}",
                orientation + 1
            )));
        }
        let samples: Vec<Complex64> = centred.iter().map(|z| z / energy).collect();
        // fit window: lags where the autocorrelation stays above 90% of its peak
        let auto = |k: usize| -> f64 {
            samples[k..].iter().zip(&samples[..len - k]).map(|(a, b)| (a * b.conj()).re).sum()
        };
        let mut w = 1;
        while w < len / 2 && auto(w) > 0.9 {
            w += 1;
        }
        slots.push(SlotTemplate {
            samples,
            start: start as usize,
            center: grid.x(ci as f64),
            reference: energy,
            fit_half_width: w.clamp(2, search_pts.max(2)),
        });
    }
    Ok(MatchedTemplate {
        orientation,
        slots: slots.try_into().expect("four slots"),
    })
}

impl TemplateSet {
    pub fn build(clean: &[LinearizedFrame], cfg: &TemplateConfig) -> Result<Self> {
        let o = [
            build_template(clean, 0, cfg)?,
            build_template(clean, 1, cfg)?,
            build_template(clean, 2, cfg)?,
        ];
        Ok(Self {
            config: cfg.clone(),
            orientations: o,
        })
    }
}

/// Peak positions found in one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FramePeaks {
    pub frame_index: usize,
    /// Linearized peak positions `[orientation][slot]`.
    pub x: [[f64; 4]; 3],
    /// Offsets from the template positions, in `x` units.
    pub shift: [[f64; 4]; 3],
    /// Normalized correlation at the best integer lag.
    pub quality: [[f64; 4]; 3],
    pub valid: [[bool; 4]; 3],
}

impl FramePeaks {
    /// Peak times relative to the frame start.
    pub fn times(&self, omega_m: f64) -> [[f64; 4]; 3] {
        let period = TWO_PI / omega_m;
        let mut out = [[0.0; 4]; 3];
        for i in 0..3 {
            for (s, (half, _)) in SLOTS.iter().enumerate() {
                let x = self.x[i][s].clamp(-1.0, 1.0);
                out[i][s] = match half {
                    Half::Down => (-x).acos() / omega_m,
                    Half::Up => period - x.acos() / omega_m,
                };
            }
        }
        out
    }
}

/// Normalized correlation `Re Σ y[start + k + j]·conj(t[j]) / ‖y − ȳ‖` at
/// integer lag `k`; one for data matching the template up to scale.
fn correlate(data: &[Complex64], t: &SlotTemplate, k: isize) -> Option<f64> {
    let s = t.start as isize + k;
    if s < 0 || s as usize + t.samples.len() > data.len() {
        return None;
    }
    let seg = &data[s as usize..s as usize + t.samples.len()];
    let n = seg.len() as f64;
    let mean = seg.iter().sum::<Complex64>() / n;
    let energy = (seg.iter().map(|z| z.norm_sqr()).sum::<f64>() - n * mean.norm_sqr()).max(0.0).sqrt();
    if !(energy > 0.0) {
        return Some(0.0);
    }
    let dot: f64 = seg.iter().zip(&t.samples).map(|(a, b)| a.re * b.re + a.im * b.im).sum();
    Some(dot / energy)
}

/// Vertex of the least-squares parabola through `(k, r_k)`, `k = −w..=w`.
fn parabola_vertex(r: &[f64]) -> Option<f64> {
    let w = (r.len() / 2) as f64;
    let (mut s2, mut s4, mut sy, mut sxy, mut sx2y) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let n = r.len() as f64;
    for (i, &y) in r.iter().enumerate() {
        let x = i as f64 - w;
        s2 += x * x;
        s4 += x * x * x * x;
        sy += y;
        sxy += x * y;
        sx2y += x * x * y;
    }
    // symmetric abscissae decouple the linear term
    let b = sxy / s2;
    let a = (n * sx2y - s2 * sy) / (n * s4 - s2 * s2);
    if !(a < 0.0) {
        return None;
    }
    Some(-b / (2.0 * a))
}

/// Locates the twelve peaks of a linearized frame. `prior` supplies the
/// previous frame's shifts for window tracking; without it the search is
/// centred on the template positions.
pub fn locate_peaks(lf: &LinearizedFrame, templates: &TemplateSet, prior: Option<&FramePeaks>, frame_index: usize) -> FramePeaks {
    let cfg = &templates.config;
    let dx = cfg.grid.step();
    let search = (cfg.search / dx).ceil() as isize;
    let mut out = FramePeaks {
        frame_index,
        x: [[f64::NAN; 4]; 3],
        shift: [[f64::NAN; 4]; 3],
        quality: [[0.0; 4]; 3],
        valid: [[false; 4]; 3],
    };
    for (i, mt) in templates.orientations.iter().enumerate() {
        for (s, t) in mt.slots.iter().enumerate() {
            let data = lf.half(SLOTS[s].0);
            let centre = prior
                .filter(|p| p.valid[i][s])
                .map_or(0, |p| (p.shift[i][s] / dx).round() as isize);
            let w = t.fit_half_width as isize;
            let lo = centre - search;
            let hi = centre + search;
            let mut best = (0isize, f64::NEG_INFINITY);
            for k in lo..=hi {
                if let Some(r) = correlate(data, t, k) {
                    if r > best.1 {
                        best = (k, r);
                    }
                }
            }
            out.quality[i][s] = best.1;
            if !(best.1 >= cfg.threshold) || best.0 - w < lo - w || best.0 == lo || best.0 == hi {
                continue;
            }
            let r: Option<Vec<f64>> = (best.0 - w..=best.0 + w).map(|k| correlate(data, t, k)).collect();
            let Some(vertex) = r.as_deref().and_then(parabola_vertex) else {
                continue;
            };
            if vertex.abs() > w as f64 {
                continue;
            }
            let shift = (best.0 as f64 + vertex) * dx;
            out.shift[i][s] = shift;
            out.x[i][s] = t.center + shift;
            out.valid[i][s] = true;
        }
    }
    out
}

/// Combined per-orientation quantity of one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TauVector {
    pub tau: [f64; 3],
    pub valid: [bool; 3],
    pub frame_index: usize,
}

/// `τ = (x₀ + x₁ − x₂ − x₃)/4` over the slots `(−↓, +↓, +↑, −↑)`.
pub fn combine_four(p: &[f64; 4]) -> f64 {
    (p[0] + p[1] - p[2] - p[3]) / 4.0
}

pub fn combine_tau(p: &FramePeaks) -> TauVector {
    let mut tau = [f64::NAN; 3];
    let mut valid = [false; 3];
    for i in 0..3 {
        if p.valid[i].iter().all(|&v| v) {
            tau[i] = combine_four(&p.x[i]);
            valid[i] = true;
        }
    }
    TauVector {
        tau,
        valid,
        frame_index: p.frame_index,
    }
}

fn phasors(omega: f64, t: &[f64; 4], signs: [f64; 4]) -> f64 {
    let z: Complex64 = t
        .iter()
        .zip(signs)
        .map(|(&ti, s)| Complex64::from_polar(s, omega * ti))
        .sum();
    z.norm() / 4.0
}

/// Response of `τ` to an external field, normalized to one at DC.
/// Peak times are ordered `(−↓, +↓, +↑, −↑)`.
pub fn response_external(omega: f64, peak_times: &[f64; 4]) -> f64 {
    phasors(omega, peak_times, [1.0; 4])
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta.abs() <= 1.0) {
        return Err(Error::InvalidInput(format!("|β| = {} exceeds one; orientation is never resonant", beta.abs())));
    }
    Ok(())
}

/// Response of `τ` to fractional bias amplitude noise.
pub fn response_amp(omega: f64, peak_times: &[f64; 4], beta: f64) -> Result<f64> {
    check_beta(beta)?;
    Ok(beta.abs() * phasors(omega, peak_times, [1.0, -1.0, -1.0, 1.0]))
}

/// Response of `τ` to bias phase noise (radians).
pub fn response_phase(omega: f64, peak_times: &[f64; 4], beta: f64) -> Result<f64> {
    check_beta(beta)?;
    let alpha = (1.0 - beta * beta).sqrt();
    Ok(alpha * phasors(omega, peak_times, [1.0, 1.0, -1.0, -1.0]))
}

/// Ideal peak times `(−↓, +↓, +↑, −↑)` of an orientation with resonance at `β`.
pub fn nominal_peak_times(beta: f64, omega_m: f64) -> [f64; 4] {
    let period = TWO_PI / omega_m;
    let a = beta.acos() / omega_m;
    let b = (-beta).acos() / omega_m;
    [a, b, period - b, period - a]
}

/// Writes a τ stream as CSV: `frame_index,t_seconds,tau1,tau2,tau3,valid_flags`.
pub fn write_tau_csv<W: Write>(w: W, taus: &[TauVector], frame_period: f64) -> Result<()> {
    let mut w = std::io::BufWriter::new(w);
    writeln!(w, "frame_index,t_seconds,tau1,tau2,tau3,valid_flags")?;
    for t in taus {
        let flags: String = t.valid.iter().map(|&v| if v { '1' } else { '0' }).collect();
        writeln!(
            w,
            "{},{:.9},{:.12e},{:.12e},{:.12e},{}",
            t.frame_index,
            t.frame_index as f64 * frame_period,
            t.tau[0],
            t.tau[1],
            t.tau[2],
            flags
        )?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace(n: usize, fs: f64) -> ReflectionTrace {
        ReflectionTrace::new(vec![Complex64::new(1.0, 0.0); n], fs)
    }

    #[test]
    fn frame_counts() {
        let w = TWO_PI * 2e3;
        assert_eq!(parse_frames(&trace(1000, 2e6), w).unwrap().len(), 1);
        assert_eq!(parse_frames(&trace(2500, 2e6), w).unwrap().len(), 2);
        assert!(matches!(parse_frames(&trace(999, 2e6), w), Err(Error::TooShort(_))));
        let f = parse_frames(&trace(5000, 2e6), w).unwrap();
        assert!(f.iter().all(|f| f.samples.len() == 1000));
        assert!((f[3].start_time - 1.5e-3).abs() < 1e-15);
    }

    #[test]
    fn frames_tile_with_fractional_period() {
        let w = TWO_PI * 3e3;
        let f = parse_frames(&trace(10_000, 1e6), w).unwrap();
        let total: usize = f.iter().map(|f| f.samples.len()).sum();
        assert_eq!(f.len(), 30);
        assert_eq!(total, frame_bounds(30, 1.0 / 3e3, 1e6).0);
    }

    #[test]
    fn combine_signatures() {
        let d = 0.013;
        assert_eq!(combine_four(&[d, d, -d, -d]), d);
        assert_eq!(combine_four(&[d, -d, d, -d]), 0.0);
        assert_eq!(combine_four(&[d, d, d, d]), 0.0);
    }

    #[test]
    fn response_limits() {
        let t = nominal_peak_times(0.5, TWO_PI * 2e3);
        assert!((response_external(0.0, &t) - 1.0).abs() < 1e-15);
        assert!(response_amp(0.0, &t, 0.5).unwrap().abs() < 1e-15);
        assert!(response_phase(0.0, &t, 0.5).unwrap().abs() < 1e-15);
        assert!(response_amp(1.0, &t, 1.2).is_err());
        // low-frequency scaling: amplitude ∝ ω², phase ∝ ω
        let w = TWO_PI;
        let a1 = response_amp(w, &t, 0.5).unwrap();
        let a2 = response_amp(2.0 * w, &t, 0.5).unwrap();
        let p1 = response_phase(w, &t, 0.5).unwrap();
        let p2 = response_phase(2.0 * w, &t, 0.5).unwrap();
        assert!((a2 / a1 - 4.0).abs() < 1e-3);
        assert!((p2 / p1 - 2.0).abs() < 1e-3);
    }

    #[test]
    fn nominal_times_round_trip_through_linearization() {
        let om = TWO_PI * 2e3;
        let t = nominal_peak_times(0.3, om);
        let x = [-0.3, 0.3, -0.3, 0.3];
        let p = FramePeaks {
            frame_index: 0,
            x: [x; 3],
            shift: [[0.0; 4]; 3],
            quality: [[1.0; 4]; 3],
            valid: [[true; 4]; 3],
        };
        let back = p.times(om);
        for s in 0..4 {
            assert!((back[0][s] - t[s]).abs() < 1e-15);
        }
    }

    #[test]
    fn parabola_recovers_vertex() {
        let r: Vec<f64> = (-3..=3).map(|k| 5.0 - 0.7 * (k as f64 - 0.23).powi(2)).collect();
        assert!((parabola_vertex(&r).unwrap() - 0.23).abs() < 1e-12);
        assert!(parabola_vertex(&[1.0, 2.0, 3.0]).is_none());
    }

    #[test]
    fn sampled_and_analytic_linearization_agree() {
        let om = TWO_PI * 2e3;
        let fs = 2e6;
        let n = 1000;
        let samples: Vec<Complex64> = (0..n)
            .map(|i| {
                let c = (om * i as f64 / fs).cos();
                Complex64::new(c * c, 0.3 * c)
            })
            .collect();
        let f = Frame { samples, start_time: 0.0, index: 0 };
        let reference: Vec<f64> = (0..n).map(|i| (om * i as f64 / fs).cos()).collect();
        let g = XGrid { n: 256 };
        let a = linearize_cosine(&f, om, fs, g);
        let b = linearize(&f, &reference, g).unwrap();
        for j in 20..236 {
            let x = g.x(j as f64);
            assert!((a.down[j] - Complex64::new(x * x, -0.3 * x)).norm() < 1e-4);
            assert!((a.up[j] - Complex64::new(x * x, 0.3 * x)).norm() < 1e-4);
            assert!((a.down[j] - b.down[j]).norm() < 1e-3);
        }
        let mut bad = reference.clone();
        bad[100] = 2.0;
        assert!(linearize(&f, &bad, g).is_err());
    }
}
