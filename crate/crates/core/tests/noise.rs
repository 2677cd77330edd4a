use nvcavity::sensitivity::{estimate_asd_with, AsdOptions};
use nvcavity::synth::{colored_noise, dbc_to_fractional_psd, NoiseKind, NoiseSpectrum};
use proptest::prelude::*;

/// One-sided PSD of a two-point dBc spectrum, interpolated linearly in
/// log-power over log-frequency.
fn oracle_psd(f: f64, f0: f64, l0: f64, f1: f64, l1: f64) -> f64 {
    if f < f0 || f > f1 {
        return 0.0;
    }
    let w = (f / f0).ln() / (f1 / f0).ln();
    2.0 * 10f64.powf((l0 * (1.0 - w) + l1 * w) / 10.0)
}

#[test]
fn sloped_spectrum_is_recovered_by_welch() {
    let (f0, l0, f1, l1) = (10.0, -100.0, 4000.0, -140.0);
    let spec = NoiseSpectrum::new(vec![f0, f1], vec![l0, l1], NoiseKind::Phase).unwrap();
    let fs = 10e3;
    let n = colored_noise(&spec, fs, 60.0, 3).unwrap();
    let asd = estimate_asd_with(&n.samples, fs, &AsdOptions { segment_seconds: 0.5, ..AsdOptions::default() }).unwrap();
    for (lo, hi) in [(20.0, 60.0), (100.0, 300.0), (500.0, 1500.0), (2000.0, 3800.0)] {
        let (mut m, mut p, mut k) = (0.0, 0.0, 0);
        for (f, a) in asd.freqs.iter().zip(&asd.asd) {
            if *f >= lo && *f < hi {
                m += a * a;
                p += oracle_psd(*f, f0, l0, f1, l1);
                k += 1;
            }
        }
        assert!(k > 10);
        let ratio = m / p;
        assert!((ratio - 1.0).abs() < 0.1, "band {lo}-{hi} Hz: measured/expected {ratio}");
    }
}

#[test]
fn variance_equals_integrated_psd() {
    let level = -90.0;
    let (lo, hi) = (100.0, 20e3);
    let spec = NoiseSpectrum::flat(level, lo, hi, NoiseKind::Amplitude).unwrap();
    let n = colored_noise(&spec, 100e3, 20.0, 9).unwrap();
    let var = n.samples.iter().map(|x| x * x).sum::<f64>() / n.samples.len() as f64;
    let want = dbc_to_fractional_psd(level) * (hi - lo);
    assert!((var / want - 1.0).abs() < 0.02, "{var} vs {want}");
}

#[test]
fn band_limited_noise_has_no_power_outside_the_band() {
    let spec = NoiseSpectrum::flat(-100.0, 0.0, 1e3, NoiseKind::Amplitude).unwrap();
    let fs = 20e3;
    let n = colored_noise(&spec, fs, 10.0, 2).unwrap();
    let asd = estimate_asd_with(&n.samples, fs, &AsdOptions { segment_seconds: 0.5, ..AsdOptions::default() }).unwrap();
    let inside = asd.asd[asd.freqs.iter().position(|&f| f >= 500.0).unwrap()];
    let outside = asd.freqs.iter().zip(&asd.asd).filter(|(f, _)| **f > 1.5e3).map(|(_, a)| *a).fold(0.0, f64::max);
    assert!(outside < 1e-3 * inside, "{outside} vs {inside}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn realizations_are_seed_deterministic(seed in any::<u64>(), level in -160.0f64..-80.0) {
        let spec = NoiseSpectrum::flat(level, 0.0, 5e3, NoiseKind::Amplitude).unwrap();
        let a = colored_noise(&spec, 20e3, 0.05, seed).unwrap();
        let b = colored_noise(&spec, 20e3, 0.05, seed).unwrap();
        let c = colored_noise(&spec, 20e3, 0.05, seed.wrapping_add(1)).unwrap();
        prop_assert_eq!(&a.samples, &b.samples);
        prop_assert_ne!(&a.samples, &c.samples);
        prop_assert_eq!(a.samples.len(), 1000);
        let mean = a.samples.iter().sum::<f64>() / 1000.0;
        prop_assert!(mean.abs() < 1e-9);
    }

    #[test]
    fn amplitude_scales_with_level(seed in any::<u64>(), level in -160.0f64..-80.0) {
        let a = colored_noise(&NoiseSpectrum::flat(level, 0.0, 5e3, NoiseKind::Phase).unwrap(), 20e3, 0.05, seed).unwrap();
        let b = colored_noise(&NoiseSpectrum::flat(level + 20.0, 0.0, 5e3, NoiseKind::Phase).unwrap(), 20e3, 0.05, seed).unwrap();
        for (x, y) in a.samples.iter().zip(&b.samples) {
            prop_assert!((y - 10.0 * x).abs() <= 1e-9 * y.abs().max(1e-30));
        }
    }
}
