//! Named experiments. Each reads what it needs from the configuration and
//! writes CSV artifacts plus summary lines.

use std::fs::File;
use std::io::BufWriter;

use nalgebra::Vector3;
use nvcavity::calibration::{
    calibrate, fill_invalid, hyperfine_single_axis, reconstruct_series, spectral_line, CalibrationConfig,
};
use nvcavity::chain::{learn_templates, resonance_layout, run_chain, template_config, FrameSource};
use nvcavity::geometry::NvBasis;
use nvcavity::pipeline::{nominal_peak_times, response_amp, response_phase, write_tau_csv, TemplateSet, XGrid};
use nvcavity::sensitivity::{
    band_floor, estimate_asd_with, harmonic_amplitudes, harmonic_model, line_amplitude, noise_bandwidth_sweep,
    AsdOptions, BandwidthSweep, FlatBand,
};
use nvcavity::sensor::{synthesize_reflection, ExternalField, MwNoise, ReferenceSensor, SensorModel};
use nvcavity::synth::{
    colored_noise, dbc_to_fractional_psd, BiasWaveform, NoiseKind, NoiseSpectrum, SampledSeries, TestField, TWO_PI,
};

use crate::config::ExperimentConfig;
use crate::output::{Outputs, Stage, StageError, StageResult};

pub struct Context<'a> {
    pub cfg: &'a ExperimentConfig,
    pub sensor: ReferenceSensor,
    pub seed: u64,
}

pub type Summary = Vec<(String, String)>;

pub struct Experiment {
    pub name: &'static str,
    pub description: &'static str,
    pub run: fn(&Context, &mut Outputs) -> StageResult<Summary>,
}

pub const EXPERIMENTS: &[Experiment] = &[
    Experiment {
        name: "fig2-timeseries",
        description: "one bias period of the reflected signal and its resonance crossing times",
        run: fig2_timeseries,
    },
    Experiment {
        name: "fig3-vector",
        description: "three-tone calibration and vector reconstruction with per-axis spectra",
        run: fig3_vector,
    },
    Experiment {
        name: "figS-noise-bw",
        description: "sensitivity floor against amplitude-noise bandwidth",
        run: noise_bandwidth,
    },
    Experiment {
        name: "thermal-floors",
        description: "per-orientation noise floors under the configured MW noise",
        run: floors,
    },
    Experiment {
        name: "harmonics",
        description: "harmonic content without and with a slow test field",
        run: harmonics,
    },
    Experiment {
        name: "bias-noise",
        description: "tau noise from bias amplitude and phase noise against the analytic transfer",
        run: bias_noise,
    },
    Experiment {
        name: "hyperfine-calibration",
        description: "single-axis calibration from hyperfine line spacings (use a slow bias sweep)",
        run: hyperfine,
    },
];

pub fn find(name: &str) -> Result<&'static Experiment, String> {
    EXPERIMENTS.iter().find(|e| e.name == name).ok_or_else(|| {
        let names: Vec<&str> = EXPERIMENTS.iter().map(|e| e.name).collect();
        format!("unknown experiment '{name}'; available: {}", names.join(", "))
    })
}

fn line(key: &str, value: impl ToString) -> (String, String) {
    (key.to_string(), value.to_string())
}

fn fail<T>(stage: &'static str, message: impl Into<String>) -> StageResult<T> {
    Err(StageError {
        stage,
        message: message.into(),
    })
}

struct Rig {
    model: SensorModel,
    bias: BiasWaveform,
    templates: TemplateSet,
}

impl Context<'_> {
    fn sample_rate(&self) -> f64 {
        self.cfg.number("simulation", "sample_rate")
    }

    fn duration(&self) -> f64 {
        self.cfg.number("simulation", "duration")
    }

    fn model(&self) -> StageResult<SensorModel> {
        self.sensor.model().stage("config")
    }

    fn bias(&self, duration: f64) -> StageResult<BiasWaveform> {
        let fs = self.sample_rate();
        self.sensor.bias(fs, duration + 0.5 / fs).stage("config")
    }

    fn rig(&self, duration: f64) -> StageResult<Rig> {
        let model = self.model()?;
        let bias = self.bias(duration)?;
        let grid = XGrid {
            n: self.cfg.number("simulation", "grid_points") as usize,
        };
        let cfg = template_config(&model, &bias.b0_vec, grid).stage("config")?;
        let templates = learn_templates(&model, &bias, &cfg, 4).stage("templates")?;
        Ok(Rig { model, bias, templates })
    }

    fn noise_series(&self, section: &str, kind: NoiseKind, duration: f64, seed: u64) -> StageResult<Option<SampledSeries>> {
        let spec = if let Some(p) = self.cfg.path(section, "psd_file") {
            NoiseSpectrum::from_csv(&p, kind).stage("noise")?
        } else if let Some(level) = self.cfg.level(section, "level") {
            NoiseSpectrum::flat(level, 0.0, self.cfg.number(section, "bandwidth"), kind).stage("noise")?
        } else {
            return Ok(None);
        };
        let fs = self.sample_rate();
        Ok(Some(colored_noise(&spec, fs, duration + 2.0 / fs, seed).stage("noise")?.into_series()))
    }

    fn mw_noise(&self, duration: f64) -> StageResult<MwNoise> {
        Ok(MwNoise {
            amplitude: self.noise_series("noise.amplitude", NoiseKind::Amplitude, duration, self.seed)?,
            phase: self.noise_series("noise.phase", NoiseKind::Phase, duration, self.seed.wrapping_add(1))?,
        })
    }

    fn asd_options(&self) -> AsdOptions {
        AsdOptions {
            segment_seconds: self.cfg.number("analysis", "segment"),
            ..AsdOptions::default()
        }
    }

    fn band(&self) -> FlatBand {
        FlatBand {
            lo: self.cfg.number("analysis", "band_low"),
            hi: self.cfg.number("analysis", "band_high"),
            ..FlatBand::default()
        }
    }
}

/// `|n̂ᵢ·B⃗₀|`: field per unit τ along each orientation.
fn gains(model: &SensorModel, bias: &BiasWaveform) -> [f64; 3] {
    std::array::from_fn(|i| model.basis.axis(i).dot(&bias.b0_vec).abs())
}

fn fig2_timeseries(ctx: &Context, out: &mut Outputs) -> StageResult<Summary> {
    let model = ctx.model()?;
    let period = 1.0 / ctx.sensor.bias_frequency_hz;
    let bias = ctx.bias(period)?;
    let noise = ctx.mw_noise(period)?;
    let trace = synthesize_reflection(&model, &bias, &ExternalField::none(), &noise).stage("simulate")?;
    let peak = trace.samples.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let betas = ctx.sensor.betas().stage("config")?;
    let crossings: Vec<[f64; 4]> = betas.iter().map(|&b| nominal_peak_times(b, bias.omega_m)).collect();
    let groups = crossings[0].iter().filter(|t| t.is_finite() && **t < period).count();
    out.csv(
        "trace.csv",
        &["t_s", "bias_reference", "re", "im", "magnitude"],
        trace.samples.iter().enumerate().map(|(i, z)| {
            let t = i as f64 / trace.sample_rate;
            vec![t, bias.reference(t), z.re, z.im, z.norm()]
        }),
    )?;
    out.csv(
        "crossings.csv",
        &["orientation", "t1_s", "t2_s", "t3_s", "t4_s"],
        crossings.iter().enumerate().map(|(i, t)| vec![(i + 1) as f64, t[0], t[1], t[2], t[3]]),
    )?;
    Ok(vec![
        line("samples", trace.samples.len()),
        line("peak_magnitude", format!("{peak:e}")),
        line("triplet_groups_per_orientation", groups),
    ])
}

fn fig3_vector(ctx: &Context, out: &mut Outputs) -> StageResult<Summary> {
    let duration = ctx.duration();
    let r = ctx.rig(duration)?;
    let amp = ctx.cfg.number("test_field", "amplitude_rms");
    let f = ctx.cfg.list("test_field", "frequencies");
    let freqs = [f[0], f[1], f[2]];
    let field = ExternalField::tones(TestField {
        amplitudes: Vector3::repeat(amp),
        freqs: Vector3::from(freqs),
    });
    let noise = ctx.mw_noise(duration)?;
    let run = run_chain(&r.model, &r.bias, &field, &noise, &r.templates, false).stage("simulate")?;
    let cal_cfg = CalibrationConfig {
        test_freqs: freqs,
        test_amplitude: [amp; 3],
        ..CalibrationConfig::default()
    };
    let (m, cal) = calibrate(&run.taus, run.frame_rate, &NvBasis::canonical(), &cal_cfg).stage("calibrate")?;
    let rate = run.frame_rate;
    write_tau_csv(BufWriter::new(File::create(out.path("tau.csv")).stage("output")?), &run.taus, 1.0 / rate)
        .stage("output")?;
    cal.save(&out.path("calibration.txt")).stage("output")?;

    let fields = reconstruct_series(&run.taus, &cal).stage("reconstruct")?;
    out.csv(
        "field.csv",
        &["t_s", "bx_T", "by_T", "bz_T"],
        fields.iter().enumerate().map(|(k, b)| vec![(k as f64 + 0.5) / rate, b.x, b.y, b.z]),
    )?;
    let axes: Vec<Vec<f64>> = (0..3).map(|a| fields.iter().map(|b| b[a]).collect()).collect();
    let opts = ctx.asd_options();
    let asd: Vec<_> = axes.iter().map(|s| estimate_asd_with(s, rate, &opts)).collect::<Result<_, _>>().stage("analyze")?;
    out.csv(
        "field_asd.csv",
        &["freq_hz", "bx_T_per_rthz", "by_T_per_rthz", "bz_T_per_rthz"],
        (0..asd[0].freqs.len()).map(|k| vec![asd[0].freqs[k], asd[0].asd[k], asd[1].asd[k], asd[2].asd[k]]),
    )?;
    let tones: Vec<Vec<f64>> = (0..3)
        .map(|a| freqs.iter().map(|&fr| spectral_line(&axes[a], rate, fr, 0.5 / rate).norm() / 2f64.sqrt()).collect())
        .collect();
    out.csv(
        "tones.csv",
        &["axis", "tone1_rms_T", "tone2_rms_T", "tone3_rms_T"],
        tones.iter().enumerate().map(|(a, t)| vec![a as f64, t[0], t[1], t[2]]),
    )?;
    let mut summary = vec![
        line("b0_peak_T", format!("{:e}", cal.b0_mag)),
        line("b0_rms_G", format!("{:.3}", cal.b0_mag / 2f64.sqrt() * 1e4)),
        line("geometric_residual", format!("{:.4}", cal.residual)),
        line("max_abs_c", format!("{:.4}", cal.c_matrix.amax())),
        line("c_flagged", cal.is_c_flagged()),
        line("invalid_frames", run.invalid_frames),
        line("response_matrix", format!("{:?}", m.m.as_slice())),
    ];
    for (a, t) in tones.iter().enumerate() {
        let leak = (0..3).filter(|&k| k != a).map(|k| t[k] / amp).fold(0.0, f64::max);
        summary.push(line(&format!("axis{}_tone_rms_T", a + 1), format!("{:e}", t[a])));
        summary.push(line(&format!("axis{}_max_leakage_pct", a + 1), format!("{:.3}", leak * 100.0)));
    }
    Ok(summary)
}

fn noise_bandwidth(ctx: &Context, out: &mut Outputs) -> StageResult<Summary> {
    let duration = ctx.duration();
    let r = ctx.rig(duration)?;
    let Some(level) = ctx.cfg.level("sweep", "level") else {
        return fail("config", "sweep.level must be set");
    };
    let sweep = BandwidthSweep {
        psd_dbc: level,
        bandwidths: ctx.cfg.list("sweep", "bandwidths"),
        seed: ctx.seed,
        asd: ctx.asd_options(),
        band: ctx.band(),
    };
    let pts = noise_bandwidth_sweep(&r.model, &r.bias, &r.templates, &sweep).stage("simulate")?;
    let g = gains(&r.model, &r.bias);
    out.csv(
        "noise_bw.csv",
        &["bandwidth_hz", "tau1_per_rthz", "tau2_per_rthz", "tau3_per_rthz", "field1_T_per_rthz", "field2_T_per_rthz", "field3_T_per_rthz"],
        pts.iter().map(|p| {
            let t = p.tau_floors;
            vec![p.bandwidth, t[0], t[1], t[2], t[0] * g[0], t[1] * g[1], t[2] * g[2]]
        }),
    )?;
    let nondecreasing = (0..3).all(|i| pts.windows(2).all(|w| w[1].tau_floors[i] >= w[0].tau_floors[i]));
    let last = pts.last().map(|p| p.tau_floors).unwrap_or_default();
    Ok(vec![
        line("points", pts.len()),
        line("strictly_nondecreasing", nondecreasing),
        line("widest_band_field_floors_T_per_rthz", format!("{:e} {:e} {:e}", last[0] * g[0], last[1] * g[1], last[2] * g[2])),
    ])
}

fn floors(ctx: &Context, out: &mut Outputs) -> StageResult<Summary> {
    let duration = ctx.duration();
    let r = ctx.rig(duration)?;
    let noise = ctx.mw_noise(duration)?;
    let run = run_chain(&r.model, &r.bias, &ExternalField::none(), &noise, &r.templates, false).stage("simulate")?;
    let taus = fill_invalid(&run.taus).stage("analyze")?;
    let opts = ctx.asd_options();
    let asd: Vec<_> = taus.iter().map(|s| estimate_asd_with(s, run.frame_rate, &opts)).collect::<Result<_, _>>().stage("analyze")?;
    let band = ctx.band();
    let g = gains(&r.model, &r.bias);
    let mut tau_floor = [0.0; 3];
    for i in 0..3 {
        tau_floor[i] = band_floor(&asd[i], &band).stage("analyze")?;
    }
    out.csv(
        "tau_asd.csv",
        &["freq_hz", "tau1_per_rthz", "tau2_per_rthz", "tau3_per_rthz", "field1_T_per_rthz", "field2_T_per_rthz", "field3_T_per_rthz"],
        (0..asd[0].freqs.len()).map(|k| {
            let a = [asd[0].asd[k], asd[1].asd[k], asd[2].asd[k]];
            vec![asd[0].freqs[k], a[0], a[1], a[2], a[0] * g[0], a[1] * g[1], a[2] * g[2]]
        }),
    )?;
    let mut summary = vec![line("invalid_frames", run.invalid_frames)];
    for i in 0..3 {
        summary.push(line(&format!("orientation{}_floor_pT_per_rthz", i + 1), format!("{:.4e}", tau_floor[i] * g[i] * 1e12)));
    }
    Ok(summary)
}

fn harmonics(ctx: &Context, out: &mut Outputs) -> StageResult<Summary> {
    let model = ctx.model()?;
    let duration = ctx.duration();
    let bias = ctx.bias(duration)?;
    let fs = ctx.sample_rate();
    let fm = ctx.sensor.bias_frequency_hz;
    let n = ctx.cfg.number("harmonics", "count") as usize;
    let f_field = ctx.cfg.number("harmonics", "field_frequency");
    let noise = ctx.mw_noise(duration)?;
    let quiet = synthesize_reflection(&model, &bias, &ExternalField::none(), &noise).stage("simulate")?;
    let field = ExternalField::tones(TestField {
        amplitudes: Vector3::new(0.0, 0.0, ctx.cfg.number("harmonics", "field_rms")),
        freqs: Vector3::new(1.0, 1.0, f_field),
    });
    let driven = synthesize_reflection(&model, &bias, &field, &noise).stage("simulate")?;
    let quarter = (fs / fm / 4.0).round() as usize;
    if quiet.samples.len() < 3 * quarter {
        return fail("simulate", "record shorter than one bias period");
    }
    let model_lines = harmonic_model(&quiet.samples[quarter..3 * quarter], fs, TWO_PI * fm, 0.0, 0.0, n);
    let comb = harmonic_amplitudes(&quiet.samples, fs, fm, n);
    let side: Vec<f64> = (1..=n)
        .map(|h| {
            let f = h as f64 * fm;
            line_amplitude(&driven.samples, fs, f - f_field).norm() + line_amplitude(&driven.samples, fs, f + f_field).norm()
        })
        .collect();
    out.csv(
        "harmonics.csv",
        &["harmonic", "freq_hz", "no_field_line", "model_comb", "field_sidebands"],
        (0..n).map(|k| vec![(k + 1) as f64, model_lines[k].freq, comb[k], model_lines[k].comb, side[k]]),
    )?;
    let pick = |v: &[f64], even: bool| v.iter().enumerate().filter(|(k, _)| ((k + 1) % 2 == 0) == even).map(|(_, x)| *x).collect::<Vec<_>>();
    let max = |v: Vec<f64>| v.into_iter().fold(0.0, f64::max);
    let min = |v: Vec<f64>| v.into_iter().fold(f64::INFINITY, f64::min);
    Ok(vec![
        line("min_even_line", format!("{:e}", min(pick(&comb, true)))),
        line("max_odd_line", format!("{:e}", max(pick(&comb, false)))),
        line("min_odd_sideband", format!("{:e}", min(pick(&side, false)))),
        line("max_even_sideband", format!("{:e}", max(pick(&side, true)))),
    ])
}

fn bias_noise(ctx: &Context, out: &mut Outputs) -> StageResult<Summary> {
    let duration = ctx.duration();
    let r = ctx.rig(duration)?;
    let Some(level) = ctx.cfg.level("bias_noise", "level") else {
        return fail("config", "bias_noise.level must be set");
    };
    let bw = ctx.cfg.number("bias_noise", "bandwidth");
    let psd = dbc_to_fractional_psd(level);
    let betas = ctx.sensor.betas().stage("config")?;
    let opts = ctx.asd_options();
    let mut columns: Vec<Vec<f64>> = Vec::new();
    let mut freqs = Vec::new();
    let mut summary = Vec::new();
    for (k, (kind, label)) in [(NoiseKind::Amplitude, "amp"), (NoiseKind::Phase, "phase")].into_iter().enumerate() {
        let spec = NoiseSpectrum::flat(level, 0.0, bw, kind).stage("noise")?;
        let series = colored_noise(&spec, 20.0 * bw, duration + 0.01, ctx.seed.wrapping_add(k as u64))
            .stage("noise")?
            .into_series();
        let bias = match kind {
            NoiseKind::Amplitude => r.bias.clone().with_amp_noise(series),
            _ => r.bias.clone().with_phase_noise(series),
        };
        let run = run_chain(&r.model, &bias, &ExternalField::none(), &MwNoise::none(), &r.templates, false).stage("simulate")?;
        let taus = fill_invalid(&run.taus).stage("analyze")?;
        for i in 0..3 {
            let asd = estimate_asd_with(&taus[i], run.frame_rate, &opts).stage("analyze")?;
            let times = nominal_peak_times(betas[i], bias.omega_m);
            let predicted: Vec<f64> = asd
                .freqs
                .iter()
                .map(|&f| {
                    let h = match kind {
                        NoiseKind::Amplitude => response_amp(TWO_PI * f, &times, betas[i]),
                        _ => response_phase(TWO_PI * f, &times, betas[i]),
                    };
                    h.map(|h| if f <= bw { h * psd.sqrt() } else { 0.0 })
                })
                .collect::<Result<_, _>>()
                .stage("analyze")?;
            let (m, p) = asd
                .freqs
                .iter()
                .zip(asd.asd.iter().zip(&predicted))
                .filter(|(f, _)| **f >= 1.0 && **f <= bw)
                .fold((0.0, 0.0), |(m, p), (_, (a, b))| (m + a * a, p + b * b));
            summary.push(line(&format!("orientation{}_{label}_measured_over_analytic", i + 1), format!("{:.3}", (m / p).sqrt())));
            freqs = asd.freqs.clone();
            columns.push(asd.asd);
            columns.push(predicted);
        }
    }
    let header = [
        "freq_hz",
        "o1_amp_measured", "o1_amp_analytic", "o2_amp_measured", "o2_amp_analytic", "o3_amp_measured", "o3_amp_analytic",
        "o1_phase_measured", "o1_phase_analytic", "o2_phase_measured", "o2_phase_analytic", "o3_phase_measured", "o3_phase_analytic",
    ];
    out.csv(
        "bias_noise.csv",
        &header,
        (0..freqs.len()).map(|k| std::iter::once(freqs[k]).chain(columns.iter().map(|c| c[k])).collect()),
    )?;
    Ok(summary)
}

fn hyperfine(ctx: &Context, out: &mut Outputs) -> StageResult<Summary> {
    let model = ctx.model()?;
    let bias = ctx.bias(ctx.duration())?;
    let grid = XGrid {
        n: ctx.cfg.number("simulation", "grid_points") as usize,
    };
    let (centers, widths) = resonance_layout(&model, &bias.b0_vec).stage("config")?;
    let c = model.constants;
    let offset = model.params.cavity.omega_c - c.d_zfs;
    let guess = centers.map(|x| x * c.a_hf / offset);
    let (ext, noise) = (ExternalField::none(), ctx.mw_noise(ctx.duration())?);
    let mut src = FrameSource::new(&model, &bias, &ext, &noise, grid).stage("simulate")?;
    let mut frames = Vec::new();
    while let Some(f) = src.next_linearized().stage("simulate")? {
        frames.push(f);
    }
    let hf = hyperfine_single_axis(&frames, centers, widths, guess, &c).stage("calibrate")?;
    out.csv(
        "hyperfine.csv",
        &["orientation", "spacing_x", "axis_gain_T"],
        (0..3).map(|i| vec![(i + 1) as f64, hf.splittings[i].unwrap_or(f64::NAN), hf.a_axis[i].unwrap_or(f64::NAN)]),
    )?;
    let mut summary = vec![
        line("frames", frames.len()),
        line("true_b0_peak_T", format!("{:e}", ctx.sensor.bias_amplitude)),
        line("b0_peak_T", hf.b0.map_or("unresolved".into(), |b| format!("{b:e}"))),
        line("unit_projections", hf.unit_projections.map_or("unresolved".into(), |p| format!("{:.4} {:.4} {:.4}", p[0], p[1], p[2]))),
    ];
    for w in &hf.warnings {
        summary.push(line("warning", w));
    }
    Ok(summary)
}
