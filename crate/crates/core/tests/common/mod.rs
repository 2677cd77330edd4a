#![allow(dead_code)]

use num_complex::Complex64;
use nvcavity::cavity::SpinCavityParams;
use nvcavity::chain::{learn_templates, template_config};
use nvcavity::pipeline::{TemplateSet, XGrid};
use nvcavity::sensor::{ReferenceSensor, SensorModel};
use nvcavity::synth::BiasWaveform;

/// Reflection coefficient evaluated term by term from the steady-state
/// equations, independent of the library's closed form.
pub fn oracle_gamma(p: &SpinCavityParams, w: &[[f64; 3]; 8]) -> Complex64 {
    let c = p.cavity;
    let mut sum = Complex64::new(0.0, 0.0);
    for k in 0..8 {
        let t = p.transitions[k];
        for m in 0..3 {
            let n = t.n_spins * p.hyperfine_weights[m];
            let d = c.omega_d - w[k][m];
            let s = t.g_s * t.g_s * t.n_cav * t.kappa_s / (2.0 * t.kappa_op);
            let denom = Complex64::new(t.kappa_s / 2.0, d) + s / Complex64::new(t.kappa_s / 2.0, -d);
            sum += t.g_s * t.g_s * n / denom;
        }
    }
    Complex64::new(-1.0, 0.0) + c.kappa_c1 / (Complex64::new(c.kappa_c() / 2.0, c.omega_d - c.omega_c) + sum)
}

pub struct Rig {
    pub sensor: ReferenceSensor,
    pub model: SensorModel,
    pub bias: BiasWaveform,
    pub templates: TemplateSet,
}

/// Reference sensor with a bias record of `duration` seconds and templates
/// learned from a clean record.
pub fn rig(sensor: ReferenceSensor, sample_rate: f64, duration: f64) -> Rig {
    let model = sensor.model().unwrap();
    let bias = sensor.bias(sample_rate, duration + 1e-7).unwrap();
    let cfg = template_config(&model, &bias.b0_vec, XGrid { n: 4096 }).unwrap();
    let templates = learn_templates(&model, &bias, &cfg, 4).unwrap();
    Rig { sensor, model, bias, templates }
}

pub fn reference_rig(duration: f64) -> Rig {
    rig(ReferenceSensor::default(), 2e6, duration)
}
