//! Experiment configuration: INI text with dotted section names and values
//! that carry unit strings, e.g. `linewidth = 146 kHz`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use ini::Ini;
use sha2::{Digest, Sha256};

use nvcavity::cavity::{Integrator, ReferenceParams};
use nvcavity::sensor::ReferenceSensor;
use nvcavity::synth::{PhysicalConstants, TWO_PI};

#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn err<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

/// Physical dimension a key is declared with.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dim {
    Frequency,
    Time,
    Field,
    Volume,
    /// Single-sideband noise level.
    Dbc,
    /// Gyromagnetic ratio, frequency per tesla.
    Gyro,
    Count,
    Text,
}

impl Dim {
    /// Accepted unit strings and their SI scale.
    fn units(self) -> &'static [(&'static str, f64)] {
        match self {
            Dim::Frequency => &[("Hz", 1.0), ("kHz", 1e3), ("MHz", 1e6), ("GHz", 1e9)],
            Dim::Time => &[("s", 1.0), ("ms", 1e-3), ("us", 1e-6), ("ns", 1e-9)],
            Dim::Field => &[("T", 1.0), ("mT", 1e-3), ("uT", 1e-6), ("nT", 1e-9), ("pT", 1e-12), ("G", 1e-4)],
            Dim::Volume => &[("m3", 1.0), ("cm3", 1e-6), ("mm3", 1e-9)],
            Dim::Dbc => &[("dBc/Hz", 1.0)],
            Dim::Gyro => &[("Hz/T", 1.0), ("MHz/T", 1e6), ("GHz/T", 1e9)],
            Dim::Count | Dim::Text => &[],
        }
    }

    fn name(self) -> &'static str {
        match self {
            Dim::Frequency => "frequency",
            Dim::Time => "time",
            Dim::Field => "magnetic field",
            Dim::Volume => "volume",
            Dim::Dbc => "noise level",
            Dim::Gyro => "gyromagnetic ratio",
            Dim::Count => "dimensionless",
            Dim::Text => "text",
        }
    }
}

/// Every key the runner understands, with its dimension and default.
/// Numbers are in the unit written next to them.
const SCHEMA: &[(&str, &str, Dim, &str)] = &[
    ("experiment", "name", Dim::Text, ""),
    ("experiment", "seed", Dim::Count, "1"),
    ("experiment", "output_dir", Dim::Text, "out"),
    ("physics.cavity", "linewidth", Dim::Frequency, "146 kHz"),
    ("physics.cavity", "offset", Dim::Frequency, "30 MHz"),
    ("physics.cavity", "mode_volume", Dim::Volume, "0.5 cm3"),
    ("physics.cavity", "photons", Dim::Count, "5e11"),
    ("physics.spins", "linewidth", Dim::Frequency, "2 MHz"),
    ("physics.spins", "pumping_rate", Dim::Frequency, "500 Hz"),
    ("physics.spins", "per_transition", Dim::Count, "3e14"),
    ("physics.constants", "zero_field_splitting", Dim::Frequency, "2.87 GHz"),
    ("physics.constants", "gyromagnetic_ratio", Dim::Gyro, "28 GHz/T"),
    ("physics.constants", "hyperfine", Dim::Frequency, "2.22 MHz"),
    ("bias", "amplitude_rms", Dim::Field, "25 G"),
    ("bias", "frequency", Dim::Frequency, "2 kHz"),
    ("bias", "projections", Dim::Count, "0.85 -0.61 -0.44"),
    ("simulation", "sample_rate", Dim::Frequency, "2 MHz"),
    ("simulation", "duration", Dim::Time, "1 s"),
    ("simulation", "warmup_periods", Dim::Count, "4"),
    ("simulation", "grid_points", Dim::Count, "4096"),
    ("simulation", "max_substep", Dim::Time, "250 ns"),
    ("test_field", "amplitude_rms", Dim::Field, "1 uT"),
    ("test_field", "frequencies", Dim::Frequency, "15 25 35 Hz"),
    ("noise.amplitude", "level", Dim::Dbc, "off"),
    ("noise.amplitude", "bandwidth", Dim::Frequency, "1 MHz"),
    ("noise.amplitude", "psd_file", Dim::Text, ""),
    ("noise.phase", "level", Dim::Dbc, "off"),
    ("noise.phase", "bandwidth", Dim::Frequency, "1 MHz"),
    ("noise.phase", "psd_file", Dim::Text, ""),
    ("analysis", "segment", Dim::Time, "0.2 s"),
    ("analysis", "band_low", Dim::Frequency, "10 Hz"),
    ("analysis", "band_high", Dim::Frequency, "900 Hz"),
    ("sweep", "bandwidths", Dim::Frequency, "1e3 4e3 2e4 1e5 3e5 6e5 1e6 Hz"),
    ("sweep", "level", Dim::Dbc, "-110 dBc/Hz"),
    ("harmonics", "count", Dim::Count, "20"),
    ("harmonics", "field_rms", Dim::Field, "2.1 uT"),
    ("harmonics", "field_frequency", Dim::Frequency, "50 Hz"),
    ("bias_noise", "level", Dim::Dbc, "-83 dBc/Hz"),
    ("bias_noise", "bandwidth", Dim::Frequency, "900 Hz"),
];

fn schema(section: &str, key: &str) -> Option<(Dim, &'static str)> {
    SCHEMA.iter().find(|(s, k, _, _)| *s == section && *k == key).map(|(_, _, d, v)| (*d, *v))
}

/// Parses `"<numbers...> <unit>"` into SI values.
pub fn parse_quantity(text: &str, dim: Dim) -> Result<Vec<f64>, String> {
    let mut parts: Vec<&str> = text.split_whitespace().collect();
    if parts.is_empty() {
        return Err("empty value".into());
    }
    let scale = if dim == Dim::Count {
        1.0
    } else {
        let unit = parts.pop().unwrap();
        let Some(&(_, s)) = dim.units().iter().find(|(u, _)| *u == unit) else {
            let accepted: Vec<&str> = dim.units().iter().map(|(u, _)| *u).collect();
            return Err(format!(
                "unit '{unit}' is not a {} unit (expected one of {})",
                dim.name(),
                accepted.join(", ")
            ));
        };
        s
    };
    if parts.is_empty() {
        return Err("missing number before the unit".into());
    }
    parts
        .iter()
        .map(|p| {
            p.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .map(|v| v * scale)
                .ok_or_else(|| format!("'{p}' is not a finite number"))
        })
        .collect()
}

/// Validated configuration: raw text per key, after defaults and overrides.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    values: BTreeMap<(String, String), String>,
    /// Directory of the config file; relative paths resolve against it.
    pub base_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, base)
    }

    pub fn parse(text: &str, base_dir: PathBuf) -> Result<Self, ConfigError> {
        let ini = Ini::load_from_str(text).map_err(|e| ConfigError(format!("malformed config: {e}")))?;
        let mut values = BTreeMap::new();
        for (section, props) in ini.iter() {
            let section = section.unwrap_or("");
            for (key, value) in props.iter() {
                let Some((dim, _)) = schema(section, key) else {
                    return err(format!("unknown key '{key}' in section [{section}]"));
                };
                let value = value.trim();
                let id = (section.to_string(), key.to_string());
                if values.contains_key(&id) {
                    return err(format!("duplicate key '{key}' in section [{section}]"));
                }
                check(section, key, dim, value)?;
                values.insert(id, value.to_string());
            }
        }
        if values.get(&("experiment".into(), "name".into())).map_or(true, |v| v.is_empty()) {
            return err("missing required key 'name' in section [experiment]");
        }
        for (s, k, dim, default) in SCHEMA {
            let id = (s.to_string(), k.to_string());
            if !values.contains_key(&id) {
                check(s, k, *dim, default)?;
                values.insert(id, default.to_string());
            }
        }
        Ok(Self { values, base_dir })
    }

    pub fn set(&mut self, section: &str, key: &str, value: &str) -> Result<(), ConfigError> {
        let (dim, _) = schema(section, key).ok_or_else(|| ConfigError(format!("unknown key {section}.{key}")))?;
        check(section, key, dim, value)?;
        self.values.insert((section.into(), key.into()), value.into());
        Ok(())
    }

    pub fn text(&self, section: &str, key: &str) -> &str {
        self.values
            .get(&(section.to_string(), key.to_string()))
            .map(String::as_str)
            .unwrap_or_else(|| panic!("key {section}.{key} missing from schema"))
    }

    pub fn list(&self, section: &str, key: &str) -> Vec<f64> {
        let (dim, _) = schema(section, key).expect("key in schema");
        parse_quantity(self.text(section, key), dim).expect("validated at load")
    }

    pub fn number(&self, section: &str, key: &str) -> f64 {
        self.list(section, key)[0]
    }

    /// Noise level in dBc/Hz, `None` when switched off.
    pub fn level(&self, section: &str, key: &str) -> Option<f64> {
        let t = self.text(section, key);
        (t != "off").then(|| self.number(section, key))
    }

    /// Path value resolved against the config directory, `None` when empty.
    pub fn path(&self, section: &str, key: &str) -> Option<PathBuf> {
        let t = self.text(section, key);
        (!t.is_empty()).then(|| self.base_dir.join(t))
    }

    pub fn name(&self) -> &str {
        self.text("experiment", "name")
    }

    pub fn seed(&self) -> u64 {
        self.text("experiment", "seed").parse().expect("validated at load")
    }

    /// Resolved configuration as sorted `section.key = value` lines.
    pub fn canonical(&self) -> String {
        self.values.iter().map(|((s, k), v)| format!("{s}.{k} = {v}\n")).collect()
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }

    pub fn sensor(&self) -> ReferenceSensor {
        let p = self.list("bias", "projections");
        ReferenceSensor {
            physics: ReferenceParams {
                cavity_linewidth_hz: self.number("physics.cavity", "linewidth"),
                cavity_offset_hz: self.number("physics.cavity", "offset"),
                spin_linewidth_hz: self.number("physics.spins", "linewidth"),
                pumping_rate_hz: self.number("physics.spins", "pumping_rate"),
                mode_volume_m3: self.number("physics.cavity", "mode_volume"),
                spins_per_transition: self.number("physics.spins", "per_transition"),
                n_cav: self.number("physics.cavity", "photons"),
            },
            constants: PhysicalConstants {
                d_zfs: TWO_PI * self.number("physics.constants", "zero_field_splitting"),
                gamma_e: TWO_PI * self.number("physics.constants", "gyromagnetic_ratio"),
                a_hf: TWO_PI * self.number("physics.constants", "hyperfine"),
            },
            bias_amplitude: self.number("bias", "amplitude_rms") * 2f64.sqrt(),
            bias_frequency_hz: self.number("bias", "frequency"),
            unit_projections: [p[0], p[1], p[2]],
            integrator: Integrator::Adiabatic {
                max_substep: self.number("simulation", "max_substep"),
            },
            warmup_periods: self.number("simulation", "warmup_periods") as usize,
        }
    }
}

fn check(section: &str, key: &str, dim: Dim, value: &str) -> Result<(), ConfigError> {
    let bad = |msg: String| ConfigError(format!("{section}.{key} = '{value}': {msg}"));
    match (section, key) {
        (_, "name" | "output_dir" | "psd_file") => Ok(()),
        ("experiment", "seed") => value.parse::<u64>().map(|_| ()).map_err(|_| bad("expected a non-negative integer".into())),
        (_, "level") if value == "off" => Ok(()),
        _ => {
            let v = parse_quantity(value, dim).map_err(bad)?;
            let expected = match (section, key) {
                ("bias", "projections") => 3,
                ("test_field", "frequencies") => 3,
                ("sweep", "bandwidths") => v.len().max(1),
                _ => 1,
            };
            if v.len() != expected {
                return Err(bad(format!("expected {expected} value(s), got {}", v.len())));
            }
            let positive = !matches!((section, key), ("bias", "projections") | (_, "level"));
            if positive && v.iter().any(|x| *x <= 0.0) {
                return Err(bad("must be positive".into()));
            }
            let integer = matches!(key, "warmup_periods" | "grid_points" | "count");
            if integer && v.iter().any(|x| x.fract() != 0.0) {
                return Err(bad("must be an integer".into()));
            }
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantities_scale_to_si() {
        assert_eq!(parse_quantity("146 kHz", Dim::Frequency).unwrap(), vec![146e3]);
        assert_eq!(parse_quantity("25 G", Dim::Field).unwrap(), vec![25e-4]);
        assert_eq!(parse_quantity("15 25 35 Hz", Dim::Frequency).unwrap(), vec![15.0, 25.0, 35.0]);
        assert!(parse_quantity("146 T", Dim::Frequency).unwrap_err().contains("not a frequency unit"));
        assert!(parse_quantity("kHz", Dim::Frequency).is_err());
        assert!(parse_quantity("nan Hz", Dim::Frequency).is_err());
    }

    #[test]
    fn defaults_fill_missing_keys() {
        let c = ExperimentConfig::parse("[experiment]\nname = fig2-timeseries\n", PathBuf::new()).unwrap();
        assert_eq!(c.seed(), 1);
        let (got, want) = (c.sensor(), ReferenceSensor::default());
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * b.abs();
        assert!(close(got.bias_amplitude, want.bias_amplitude));
        assert!(close(got.physics.cavity_linewidth_hz, want.physics.cavity_linewidth_hz));
        assert!(close(got.physics.mode_volume_m3, want.physics.mode_volume_m3));
        assert!(close(got.constants.a_hf, want.constants.a_hf));
        assert_eq!(got.unit_projections, want.unit_projections);
        let (Integrator::Adiabatic { max_substep: a }, Integrator::Adiabatic { max_substep: b }) = (got.integrator, want.integrator) else {
            panic!("integrator kind differs: {:?}", got.integrator);
        };
        assert!(close(a, b));
        assert_eq!(c.level("noise.amplitude", "level"), None);
    }

    #[test]
    fn errors_name_the_key() {
        let e = ExperimentConfig::parse("[experiment]\nname = x\n[bias]\nfrequency = 2 kT\n", PathBuf::new()).unwrap_err();
        assert!(e.0.starts_with("bias.frequency"), "{e}");
        let e = ExperimentConfig::parse("[experiment]\nname = x\n[bias]\nspeed = 1\n", PathBuf::new()).unwrap_err();
        assert!(e.0.contains("unknown key 'speed'"), "{e}");
        let e = ExperimentConfig::parse("[bias]\nfrequency = 2 kHz\n", PathBuf::new()).unwrap_err();
        assert!(e.0.contains("missing required key 'name'"), "{e}");
    }

    #[test]
    fn inline_comments_are_ignored() {
        let c = ExperimentConfig::parse("[experiment]\nname = x   # label\n[bias]\nfrequency = 3 kHz ; slower\n", PathBuf::new()).unwrap();
        assert_eq!(c.name(), "x");
        assert_eq!(c.number("bias", "frequency"), 3e3);
    }

    #[test]
    fn hash_tracks_resolved_values() {
        let a = ExperimentConfig::parse("[experiment]\nname = x\n", PathBuf::new()).unwrap();
        let b = ExperimentConfig::parse("[experiment]\nname = x\nseed = 1\n", PathBuf::new()).unwrap();
        let mut c = a.clone();
        c.set("experiment", "seed", "2").unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
    }
}
