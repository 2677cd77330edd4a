//! Vector calibration: response matrix from test tones, geometric fit of the
//! diamond orientation and bias strength, empirical correction, hyperfine
//! single-axis calibration and field reconstruction.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DVector, Matrix3, Rotation3, Vector3};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{cubic_rotation_group, magnitude_from_three, rotation_from_vector, NvBasis};
use crate::optimize::{levenberg_marquardt, LmOptions};
use crate::pipeline::{Half, LinearizedFrame, TauVector};
use crate::synth::{PhysicalConstants, TWO_PI};

/// Any correction entry above this magnitude is flagged.
pub const C_FLAG_LIMIT: f64 = 0.3;

/// Signed responses of the three τ components to the three test tones.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseMatrix {
    /// Row `i` is orientation `i`, column `j` the tone applied along lab axis `j`.
    pub m: Matrix3<f64>,
    pub test_freqs: [f64; 3],
    /// RMS amplitude of each tone (T).
    pub test_amplitude: [f64; 3],
}

impl ResponseMatrix {
    /// Diagonal matrix of applied amplitudes.
    pub fn applied(&self) -> Matrix3<f64> {
        Matrix3::from_diagonal(&Vector3::from(self.test_amplitude))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignmentOptions {
    /// Largest allowed deviation from a multiple of π.
    pub tolerance_deg: f64,
    /// Phase of each tone at `t = 0` in the `e^{iωt}` convention; a sine is `−π/2`.
    pub stimulus_phase: [f64; 3],
    /// Components weaker than this fraction of the strongest in a column take
    /// their sign without the tolerance check.
    pub weak_fraction: f64,
}

impl Default for AlignmentOptions {
    fn default() -> Self {
        Self {
            tolerance_deg: 15.0,
            stimulus_phase: [-std::f64::consts::FRAC_PI_2; 3],
            weak_fraction: 0.05,
        }
    }
}

/// Complex amplitude (peak) of one frequency in a uniformly sampled series
/// whose first sample sits at `t0`.
pub fn spectral_line(series: &[f64], sample_rate: f64, freq: f64, t0: f64) -> Complex64 {
    let n = series.len() as f64;
    let w = TWO_PI * freq;
    let sum: Complex64 = series
        .iter()
        .enumerate()
        .map(|(k, &v)| v * Complex64::from_polar(1.0, -w * (t0 + k as f64 / sample_rate)))
        .sum();
    sum * (2.0 / n)
}

fn wrap(a: f64) -> f64 {
    let r = a.rem_euclid(TWO_PI);
    if r > std::f64::consts::PI {
        r - TWO_PI
    } else {
        r
    }
}

/// Fills invalid τ samples by holding the last valid value (the first valid
/// one for a leading gap). Errors when a component has no valid sample.
pub fn fill_invalid(taus: &[TauVector]) -> Result<[Vec<f64>; 3]> {
    let mut out: [Vec<f64>; 3] = Default::default();
    for (i, o) in out.iter_mut().enumerate() {
        let first = taus
            .iter()
            .find(|t| t.valid[i])
            .map(|t| t.tau[i])
            .ok_or_else(|| Error::Calibration(format!("orientation {} has no valid samples", i + 1)))?;
        let mut last = first;
        *o = taus
            .iter()
            .map(|t| {
                if t.valid[i] {
                    last = t.tau[i];
                }
                last
            })
            .collect();
    }
    Ok(out)
}

/// Builds the signed response matrix from a τ stream recorded while the
/// three test tones were applied, one per lab axis.
///
/// Sample `k` is taken to represent time `(k + ½)/frame_rate`, the mean of
/// the four peak times of the frame.
pub fn build_response_matrix(
    taus: &[TauVector],
    frame_rate: f64,
    test_freqs: [f64; 3],
    test_amplitude: [f64; 3],
    opts: &AlignmentOptions,
) -> Result<ResponseMatrix> {
    if taus.len() < 2 {
        return Err(Error::TooShort(format!("{} τ samples", taus.len())));
    }
    let n = taus.len() as f64;
    for &f in &test_freqs {
        let cycles = f * n / frame_rate;
        if (cycles - cycles.round()).abs() > 1e-6 || cycles.round() < 1.0 {
            return Err(Error::InvalidInput(format!(
                "record of {} s holds {cycles} periods of {f} Hz; need an integer number",
                n / frame_rate
            )));
        }
    }
    let series = fill_invalid(taus)?;
    let t0 = 0.5 / frame_rate;
    let tol = opts.tolerance_deg.to_radians();
    let mut m = Matrix3::zeros();
    for j in 0..3 {
        let lines: Vec<Complex64> = (0..3).map(|i| spectral_line(&series[i], frame_rate, test_freqs[j], t0)).collect();
        let r = (0..3).max_by(|&a, &b| lines[a].norm().total_cmp(&lines[b].norm())).unwrap();
        let ref_phase = lines[r].arg();
        let d = wrap(ref_phase - opts.stimulus_phase[j]);
        let ref_sign = if d.abs() <= tol {
            1.0
        } else if d.abs() >= std::f64::consts::PI - tol {
            -1.0
        } else {
            return Err(Error::Calibration(format!(
                "tone {} Hz: orientation {} phase is {:.1}° from the stimulus, not a multiple of 180°",
                test_freqs[j],
                r + 1,
                d.to_degrees()
            )));
        };
        for i in 0..3 {
            let rel = wrap(lines[i].arg() - ref_phase);
            let sign = if lines[i].norm() < opts.weak_fraction * lines[r].norm() {
                rel.cos().signum()
            } else if rel.abs() <= tol {
                1.0
            } else if rel.abs() >= std::f64::consts::PI - tol {
                -1.0
            } else {
                return Err(Error::Calibration(format!(
                    "tone {} Hz: orientation {} phase differs from orientation {} by {:.1}°, not a multiple of 180°",
                    test_freqs[j],
                    i + 1,
                    r + 1,
                    rel.to_degrees()
                )));
            };
            m[(i, j)] = ref_sign * sign * lines[i].norm() / 2f64.sqrt();
        }
    }
    Ok(ResponseMatrix { m, test_freqs, test_amplitude })
}

/// Full calibration state.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationResult {
    /// Diamond orientation: lab axes are `U n̂ᵢ`.
    pub u: Matrix3<f64>,
    /// Peak bias amplitude (T).
    pub b0_mag: f64,
    /// Bias direction in the lab frame.
    pub bias_direction: Vector3<f64>,
    /// Maps τ to field (T per unit τ).
    pub a_matrix: Matrix3<f64>,
    pub c_matrix: Matrix3<f64>,
    /// `‖B_app − A M‖_F / ‖B_app‖_F` of the geometric fit.
    pub residual: f64,
    /// Diagonal of the single-axis calibration, where measured.
    pub a_axis: Option<[f64; 3]>,
    /// Peak bias amplitude from the hyperfine method (T).
    pub b0_hyperfine: Option<f64>,
}

/// `A⁻¹` for unit bias strength: rows `(Un̂ᵢ)ᵀ / ((Un̂ᵢ)·b̂)`.
pub fn inverse_geometry(u: &Matrix3<f64>, basis: &NvBasis, bias_direction: &Vector3<f64>) -> Matrix3<f64> {
    let mut inv = Matrix3::zeros();
    for i in 0..3 {
        let l = u * basis.axis(i);
        inv.set_row(i, &(l / l.dot(bias_direction)).transpose());
    }
    inv
}

/// Geometric calibration `A = B₀ (A⁻¹ for unit bias)⁻¹`.
pub fn geometric_a(u: &Matrix3<f64>, b0: f64, basis: &NvBasis, bias_direction: &Vector3<f64>) -> Result<Matrix3<f64>> {
    inverse_geometry(u, basis, bias_direction)
        .try_inverse()
        .map(|a| a * b0)
        .ok_or_else(|| Error::Singular("an NV axis is perpendicular to the bias".into()))
}

impl CalibrationResult {
    pub fn is_c_flagged(&self) -> bool {
        self.c_matrix.iter().any(|c| c.abs() > C_FLAG_LIMIT)
    }

    /// Unit projections `(Un̂ᵢ)·b̂` of the fitted geometry.
    pub fn projections(&self, basis: &NvBasis) -> [f64; 3] {
        std::array::from_fn(|i| (self.u * basis.axis(i)).dot(&self.bias_direction))
    }

    /// `(I + C) A`.
    pub fn transfer(&self) -> Matrix3<f64> {
        (Matrix3::identity() + self.c_matrix) * self.a_matrix
    }

    /// Key-value text form; matrices are written row by row, rows separated
    /// by `;` and entries by `,`.
    pub fn to_kv_string(&self) -> String {
        fn mat(m: &Matrix3<f64>) -> String {
            (0..3)
                .map(|r| (0..3).map(|c| format!("{:e}", m[(r, c)])).collect::<Vec<_>>().join(","))
                .collect::<Vec<_>>()
                .join(";")
        }
        let mut s = String::new();
        let _ = writeln!(s, "# u: diamond orientation; b0_mag: peak bias amplitude in tesla");
        let _ = writeln!(s, "# a_matrix: tesla per unit tau; c_matrix: dimensionless correction");
        let _ = writeln!(s, "u = {}", mat(&self.u));
        let _ = writeln!(s, "b0_mag = {:e}", self.b0_mag);
        let b = self.bias_direction;
        let _ = writeln!(s, "bias_direction = {:e},{:e},{:e}", b.x, b.y, b.z);
        let _ = writeln!(s, "a_matrix = {}", mat(&self.a_matrix));
        let _ = writeln!(s, "c_matrix = {}", mat(&self.c_matrix));
        let _ = writeln!(s, "residual = {:e}", self.residual);
        if let Some(a) = self.a_axis {
            let _ = writeln!(s, "a_axis = {:e},{:e},{:e}", a[0], a[1], a[2]);
        }
        if let Some(b) = self.b0_hyperfine {
            let _ = writeln!(s, "b0_hyperfine = {b:e}");
        }
        s
    }

    pub fn from_kv_str(text: &str) -> Result<Self> {
        let mut map = std::collections::HashMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("line {}: expected key = value", n + 1)))?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| map.get(k).ok_or_else(|| Error::Parse(format!("missing key {k}")));
        let nums = |k: &str, s: &str| -> Result<Vec<f64>> {
            s.split([',', ';'])
                .map(|x| x.trim().parse::<f64>().map_err(|e| Error::Parse(format!("{k}: {e}"))))
                .collect()
        };
        let mat = |k: &str| -> Result<Matrix3<f64>> {
            let v = nums(k, get(k)?)?;
            if v.len() != 9 {
                return Err(Error::Parse(format!("{k}: expected 9 entries, got {}", v.len())));
            }
            Ok(Matrix3::from_row_slice(&v))
        };
        let vec3 = |k: &str, s: &str| -> Result<[f64; 3]> {
            let v = nums(k, s)?;
            v.try_into().map_err(|_| Error::Parse(format!("{k}: expected 3 entries")))
        };
        let scalar = |k: &str, s: &str| -> Result<f64> { s.parse().map_err(|e| Error::Parse(format!("{k}: {e}"))) };
        Ok(Self {
            u: mat("u")?,
            b0_mag: scalar("b0_mag", get("b0_mag")?)?,
            bias_direction: Vector3::from(vec3("bias_direction", get("bias_direction")?)?),
            a_matrix: mat("a_matrix")?,
            c_matrix: mat("c_matrix")?,
            residual: scalar("residual", get("residual")?)?,
            a_axis: map.get("a_axis").map(|s| vec3("a_axis", s)).transpose()?,
            b0_hyperfine: map.get("b0_hyperfine").map(|s| scalar("b0_hyperfine", s)).transpose()?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_kv_string())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_kv_str(&std::fs::read_to_string(path)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeometryOptions {
    /// Bias direction in the lab frame.
    pub bias_direction: Vector3<f64>,
    /// Random starts in addition to the 24 cube rotations.
    pub extra_starts: usize,
    pub seed: u64,
    pub lm: LmOptions,
}

impl Default for GeometryOptions {
    fn default() -> Self {
        Self {
            bias_direction: Vector3::z(),
            extra_starts: 8,
            seed: 1,
            lm: LmOptions::default(),
        }
    }
}

struct Objective<'a> {
    m: &'a ResponseMatrix,
    basis: &'a NvBasis,
    b: Vector3<f64>,
    scale: f64,
}

impl Objective<'_> {
    /// Unit-strength `A M` and the least-squares bias strength.
    fn eval(&self, u: &Matrix3<f64>) -> Option<(f64, Matrix3<f64>)> {
        let inv = inverse_geometry(u, self.basis, &self.b);
        let am = inv.try_inverse()? * self.m.m;
        let app = self.m.applied();
        let b0 = app.dot(&am) / am.norm_squared();
        Some((b0, am))
    }

    fn residual(&self, u: &Matrix3<f64>) -> DVector<f64> {
        match self.eval(u) {
            Some((b0, am)) if b0 > 0.0 && b0.is_finite() => {
                let r = (self.m.applied() - am * b0) / self.scale;
                DVector::from_iterator(9, r.iter().copied())
            }
            // wrong bias sign or singular geometry: a large, smooth-enough penalty
            _ => DVector::from_element(9, 1e3),
        }
    }
}

fn rotation_log(u: &Matrix3<f64>) -> Vector3<f64> {
    Rotation3::from_matrix(u).scaled_axis()
}

/// Fits the diamond orientation and bias strength to a response matrix by
/// minimizing `‖B_app − A M‖_F` from many starting orientations.
pub fn fit_geometry(m: &ResponseMatrix, basis: &NvBasis, opts: &GeometryOptions) -> Result<CalibrationResult> {
    if m.m.determinant().abs() <= 1e-12 * m.m.norm().powi(3) {
        return Err(Error::Singular("response matrix".into()));
    }
    let b = opts.bias_direction.normalize();
    let scale = m.applied().norm();
    let obj = Objective { m, basis, b, scale };
    let mut starts: Vec<Matrix3<f64>> = cubic_rotation_group();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    for _ in 0..opts.extra_starts {
        let v = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        starts.push(rotation_from_vector(&(v * std::f64::consts::PI)));
    }
    let mut results = Vec::with_capacity(starts.len());
    for u0 in &starts {
        let f = |r: &DVector<f64>| obj.residual(&(rotation_from_vector(&Vector3::new(r[0], r[1], r[2])) * u0));
        let res = levenberg_marquardt(f, DVector::zeros(3), &opts.lm);
        let u = rotation_from_vector(&Vector3::new(res.x[0], res.x[1], res.x[2])) * u0;
        results.push((res, u));
    }
    let best_cost = results.iter().map(|(r, _)| r.cost).fold(f64::INFINITY, f64::min);
    // canonical pick among equally good minima: projections closest to
    // descending order, then the smallest rotation angle
    let order_score = |u: &Matrix3<f64>| {
        let p: Vec<f64> = (0..3).map(|i| (u * basis.axis(i)).dot(&b).abs()).collect();
        (p[1] - p[0]).max(0.0) + (p[2] - p[1]).max(0.0)
    };
    let (res, u) = results
        .iter()
        .filter(|(r, _)| r.cost <= best_cost + 1e-10 * (1.0 + best_cost))
        .min_by(|(_, a), (_, c)| {
            (order_score(a), rotation_log(a).norm())
                .partial_cmp(&(order_score(c), rotation_log(c).norm()))
                .unwrap()
        })
        .cloned()
        .unwrap();
    if !res.converged {
        return Err(Error::NotConverged {
            iterations: res.iterations,
            gradient_norm: res.gradient_norm,
            residual: (2.0 * res.cost).sqrt(),
        });
    }
    // re-orthonormalize against accumulated round-off
    let u = Rotation3::from_matrix(&u).into_inner();
    let (b0, _) = obj
        .eval(&u)
        .ok_or_else(|| Error::Singular("fitted geometry".into()))?;
    let a = geometric_a(&u, b0, basis, &b)?;
    let residual = (m.applied() - a * m.m).norm() / scale;
    Ok(CalibrationResult {
        u,
        b0_mag: b0,
        bias_direction: b,
        a_matrix: a,
        c_matrix: Matrix3::zeros(),
        residual,
        a_axis: None,
        b0_hyperfine: None,
    })
}

/// `C = B_app M⁻¹ A⁻¹ − I`, so that `(I + C) A M = B_app`.
pub fn fit_correction(m: &ResponseMatrix, cal: &CalibrationResult) -> Result<Matrix3<f64>> {
    let m_inv = m.m.try_inverse().ok_or_else(|| Error::Singular("response matrix".into()))?;
    let a_inv = cal
        .a_matrix
        .try_inverse()
        .ok_or_else(|| Error::Singular("geometric calibration".into()))?;
    Ok(m.applied() * m_inv * a_inv - Matrix3::identity())
}

/// Field from one τ sample; `None` if any component is invalid.
pub fn reconstruct(tau: &TauVector, cal: &CalibrationResult) -> Option<Vector3<f64>> {
    if !tau.valid.iter().all(|&v| v) {
        return None;
    }
    Some(cal.transfer() * Vector3::from(tau.tau))
}

/// Reconstructs a whole stream, holding the last valid τ over invalid frames.
pub fn reconstruct_series(taus: &[TauVector], cal: &CalibrationResult) -> Result<Vec<Vector3<f64>>> {
    let s = fill_invalid(taus)?;
    let t = cal.transfer();
    Ok((0..taus.len()).map(|k| t * Vector3::new(s[0][k], s[1][k], s[2][k])).collect())
}

/// Result of the hyperfine single-axis calibration.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperfineCalibration {
    /// Measured line spacing in linearized units, per orientation.
    pub splittings: [Option<f64>; 3],
    /// `|(Un̂ᵢ)·B⃗₀|` (T), which is also the single-axis gain per unit τ.
    pub a_axis: [Option<f64>; 3],
    /// Peak bias amplitude, when all three orientations were resolved.
    pub b0: Option<f64>,
    pub unit_projections: Option<[f64; 3]>,
    pub warnings: Vec<String>,
}

fn lorentz_triplet(p: &DVector<f64>, x: f64) -> f64 {
    let (x0, s, w) = (p[0], p[1], p[2]);
    let mut v = p[3] + p[4] * (x - x0);
    for (m, h) in [-1.0, 0.0, 1.0].iter().zip([p[5], p[6], p[7]]) {
        let d = (x - x0 - m * s) / w;
        v += h / (1.0 + d * d);
    }
    v
}

/// Fits three equally spaced lines of common width on a linear baseline.
/// Returns the spacing when the fit resolves three distinct lines.
pub fn fit_triplet(xs: &[f64], ys: &[f64], center: f64, spacing_guess: f64, width_guess: f64) -> Option<f64> {
    let h = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max) - ys.iter().copied().fold(f64::INFINITY, f64::min);
    let base = (ys[0] + ys[ys.len() - 1]) / 2.0;
    let x0 = xs[ys.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map(|(i, _)| i).unwrap_or(0)];
    let x0 = if (x0 - center).abs() < spacing_guess { x0 } else { center };
    let p0 = DVector::from_vec(vec![x0, spacing_guess, width_guess, base, 0.0, h * 0.6, h * 0.6, h * 0.6]);
    let f = |p: &DVector<f64>| DVector::from_iterator(xs.len(), xs.iter().zip(ys).map(|(&x, &y)| (lorentz_triplet(p, x) - y) / h));
    let opts = LmOptions { max_iterations: 400, ..LmOptions::default() };
    let r = levenberg_marquardt(f, p0, &opts);
    let (s, w) = (r.x[1].abs(), r.x[2].abs());
    let heights_ok = [r.x[5], r.x[6], r.x[7]].iter().all(|&hh| hh > 0.05 * h);
    let fit_ok = (2.0 * r.cost / xs.len() as f64).sqrt() < 0.05;
    let inside = (r.x[0] - center).abs() < 2.0 * spacing_guess && s > 0.2 * spacing_guess && s < 3.0 * spacing_guess;
    // three lines closer than about a width merge into one
    (heights_ok && fit_ok && inside && s > 0.5 * w).then_some(s)
}

/// Single-axis calibration from the hyperfine triplets in linearized frames
/// recorded without an external field.
///
/// Frames must hold the reflection normalized to the drive. The signal is
/// mapped through `1/(1 + y)`, which is affine in the summed spin response, so
/// each line contributes a Lorentzian in `x`. `centers` and `half_widths`
/// give the window of each orientation (the `+↓` slot is used) and
/// `spacing_guess` the nominal line spacing that seeds each fit.
pub fn hyperfine_single_axis(
    frames: &[LinearizedFrame],
    centers: [f64; 3],
    half_widths: [f64; 3],
    spacing_guess: [f64; 3],
    constants: &PhysicalConstants,
) -> Result<HyperfineCalibration> {
    if frames.is_empty() {
        return Err(Error::TooShort("no frames".into()));
    }
    let grid = frames[0].grid;
    let n = grid.n;
    let mut avg = vec![Complex64::new(0.0, 0.0); n];
    for f in frames {
        for (a, z) in avg.iter_mut().zip(f.half(Half::Down)) {
            *a += z;
        }
    }
    let inv_n = 1.0 / frames.len() as f64;
    let b_hf = constants.hyperfine_field();
    let mut out = HyperfineCalibration {
        splittings: [None; 3],
        a_axis: [None; 3],
        b0: None,
        unit_projections: None,
        warnings: Vec::new(),
    };
    for i in 0..3 {
        let c = centers[i];
        let hw = (2.5 * spacing_guess[i]).min(half_widths[i] * 2.0);
        let lo = grid.index(c - hw).max(0.0).ceil() as usize;
        let hi = (grid.index(c + hw).floor() as usize).min(n - 1);
        if hi <= lo + 16 {
            out.warnings.push(format!("orientation {}: window too narrow", i + 1));
            continue;
        }
        let xs: Vec<f64> = (lo..=hi).map(|j| grid.x(j as f64)).collect();
        let ys: Vec<f64> = (lo..=hi).map(|j| (1.0 / (1.0 + avg[j] * inv_n)).re).collect();
        let g = spacing_guess[i];
        match fit_triplet(&xs, &ys, c, g, g / 3.0) {
            Some(s) => {
                out.splittings[i] = Some(s);
                out.a_axis[i] = Some(b_hf / s);
            }
            None => out.warnings.push(format!("orientation {}: hyperfine triplet not resolved", i + 1)),
        }
    }
    if let [Some(a), Some(b), Some(c)] = out.a_axis {
        let mag = magnitude_from_three(&Vector3::new(a, b, c))?;
        out.b0 = Some(mag);
        out.unit_projections = Some([a / mag, b / mag, c / mag]);
    }
    Ok(out)
}

/// Settings of a complete calibration run.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationConfig {
    pub test_freqs: [f64; 3],
    pub test_amplitude: [f64; 3],
    pub alignment: AlignmentOptions,
    pub geometry: GeometryOptions,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            test_freqs: [15.0, 25.0, 35.0],
            test_amplitude: [1e-6; 3],
            alignment: AlignmentOptions::default(),
            geometry: GeometryOptions::default(),
        }
    }
}

/// Response matrix, geometric fit and correction from one stimulus record.
pub fn calibrate(taus: &[TauVector], frame_rate: f64, basis: &NvBasis, cfg: &CalibrationConfig) -> Result<(ResponseMatrix, CalibrationResult)> {
    let m = build_response_matrix(taus, frame_rate, cfg.test_freqs, cfg.test_amplitude, &cfg.alignment)?;
    let mut cal = fit_geometry(&m, basis, &cfg.geometry)?;
    cal.c_matrix = fit_correction(&m, &cal)?;
    Ok((m, cal))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn synthetic(u: &Matrix3<f64>, b0: f64, amp: f64) -> ResponseMatrix {
        let basis = NvBasis::canonical();
        let inv = inverse_geometry(u, &basis, &Vector3::z()) / b0;
        ResponseMatrix {
            m: inv * amp,
            test_freqs: [15.0, 25.0, 35.0],
            test_amplitude: [amp; 3],
        }
    }

    #[test]
    fn spectral_line_recovers_amplitude_and_phase() {
        let fr = 2000.0;
        let s: Vec<f64> = (0..20000).map(|k| 0.3 * (TWO_PI * 25.0 * k as f64 / fr + 0.4).cos()).collect();
        let z = spectral_line(&s, fr, 25.0, 0.0);
        assert_relative_eq!(z.norm(), 0.3, epsilon = 1e-12);
        assert_relative_eq!(z.arg(), 0.4, epsilon = 1e-12);
    }

    #[test]
    fn round_trip_geometry() {
        let u = rotation_from_vector(&Vector3::new(0.3, -0.7, 1.1));
        let m = synthetic(&u, 3.5e-3, 1e-6);
        let cal = fit_geometry(&m, &NvBasis::canonical(), &GeometryOptions::default()).unwrap();
        assert!(cal.residual < 1e-8, "residual {}", cal.residual);
        assert_relative_eq!(cal.b0_mag, 3.5e-3, max_relative = 1e-8);
        assert!((cal.a_matrix * m.m - m.applied()).norm() < 1e-8 * 1e-6);
        assert!((cal.u.transpose() * cal.u - Matrix3::identity()).norm() < 1e-10);
        let c = fit_correction(&m, &cal).unwrap();
        assert!(c.norm() < 1e-7);
    }

    #[test]
    fn identity_orientation_is_recovered() {
        let m = synthetic(&Matrix3::identity(), 2e-3, 1e-6);
        let cal = fit_geometry(&m, &NvBasis::canonical(), &GeometryOptions::default()).unwrap();
        let basis = NvBasis::canonical();
        for i in 0..3 {
            let got = cal.u * basis.axis(i);
            assert!((got - basis.axis(i)).norm() < 1e-7 || (got + basis.axis(i)).norm() < 1e-7);
        }
    }

    #[test]
    fn injected_coupling_appears_in_correction() {
        let u = rotation_from_vector(&Vector3::new(0.2, 0.5, -0.4));
        let mut m = synthetic(&u, 3e-3, 1e-6);
        let k = Matrix3::new(1.0, 0.1, 0.0, 0.0, 1.0, 0.1, 0.1, 0.0, 1.0);
        let clean = fit_geometry(&m, &NvBasis::canonical(), &GeometryOptions::default()).unwrap();
        // cross-coupling between lab axes before the field reaches the sensor
        m.m *= k;
        let mut cal = fit_geometry(&m, &NvBasis::canonical(), &GeometryOptions::default()).unwrap();
        cal.c_matrix = fit_correction(&m, &cal).unwrap();
        assert!(((Matrix3::identity() + cal.c_matrix) * cal.a_matrix * m.m - m.applied()).norm() < 1e-12 * 1e-6 * 10.0);
        let largest = cal.c_matrix.iter().fold(0.0f64, |a, c| a.max(c.abs()));
        assert!(largest > 0.03 && largest < 0.2, "largest {largest}");
        assert!(clean.c_matrix.norm() == 0.0);
    }

    #[test]
    fn reconstruct_zero_and_invalid() {
        let m = synthetic(&Matrix3::identity(), 2e-3, 1e-6);
        let cal = fit_geometry(&m, &NvBasis::canonical(), &GeometryOptions::default()).unwrap();
        let t = TauVector { tau: [0.0; 3], valid: [true; 3], frame_index: 0 };
        assert_eq!(reconstruct(&t, &cal), Some(Vector3::zeros()));
        let t = TauVector { tau: [0.0, f64::NAN, 0.0], valid: [true, false, true], frame_index: 0 };
        assert_eq!(reconstruct(&t, &cal), None);
    }

    #[test]
    fn single_axis_stimulus_gives_one_column() {
        let fr = 2000.0;
        let n = 20000;
        let p = [0.8, -0.3, 0.5];
        let taus: Vec<TauVector> = (0..n)
            .map(|k| {
                let t = (k as f64 + 0.5) / fr;
                let s = (TWO_PI * 25.0 * t).sin();
                TauVector { tau: [p[0] * s, p[1] * s, p[2] * s], valid: [true; 3], frame_index: k }
            })
            .collect();
        let m = build_response_matrix(&taus, fr, [15.0, 25.0, 35.0], [1.0; 3], &AlignmentOptions::default()).unwrap();
        for i in 0..3 {
            assert!(m.m[(i, 0)].abs() < 1e-12 && m.m[(i, 2)].abs() < 1e-12);
            assert_relative_eq!(m.m[(i, 1)], p[i] / 2f64.sqrt(), epsilon = 1e-12);
        }
    }

    #[test]
    fn misaligned_phase_is_rejected() {
        let fr = 2000.0;
        let taus: Vec<TauVector> = (0..20000)
            .map(|k| {
                let t = (k as f64 + 0.5) / fr;
                let a = (TWO_PI * 15.0 * t).sin();
                let b = (TWO_PI * 15.0 * t + 0.8).sin();
                TauVector { tau: [a, b, a], valid: [true; 3], frame_index: k }
            })
            .collect();
        let r = build_response_matrix(&taus, fr, [15.0, 25.0, 35.0], [1.0; 3], &AlignmentOptions::default());
        assert!(matches!(r, Err(Error::Calibration(_))));
    }

    #[test]
    fn non_integer_periods_rejected() {
        let taus = vec![TauVector { tau: [0.0; 3], valid: [true; 3], frame_index: 0 }; 1001];
        let r = build_response_matrix(&taus, 2000.0, [15.0, 25.0, 35.0], [1.0; 3], &AlignmentOptions::default());
        assert!(matches!(r, Err(Error::InvalidInput(_))));
    }

    #[test]
    fn key_value_round_trip() {
        let u = rotation_from_vector(&Vector3::new(0.3, -0.7, 1.1));
        let m = synthetic(&u, 3.5e-3, 1e-6);
        let mut cal = fit_geometry(&m, &NvBasis::canonical(), &GeometryOptions::default()).unwrap();
        cal.c_matrix = Matrix3::new(0.01, -0.02, 0.0, 0.1, 0.0, 0.0, 0.0, 0.0, -0.05);
        cal.a_axis = Some([1e-3, 2e-3, 3e-3]);
        let back = CalibrationResult::from_kv_str(&cal.to_kv_string()).unwrap();
        assert_eq!(back, cal);
        assert!(CalibrationResult::from_kv_str("u = 1,2\n").is_err());
    }

    #[test]
    fn triplet_fit_recovers_spacing() {
        let xs: Vec<f64> = (0..400).map(|i| 0.3 + i as f64 * 0.0005).collect();
        let truth = DVector::from_vec(vec![0.4, 0.021, 0.008, 1.2, 0.3, 0.5, 0.45, 0.4]);
        let ys: Vec<f64> = xs.iter().map(|&x| lorentz_triplet(&truth, x)).collect();
        let s = fit_triplet(&xs, &ys, 0.4, 0.018, 0.006).unwrap();
        assert_relative_eq!(s, 0.021, max_relative = 1e-6);
        // lines much wider than their spacing are not resolved
        let blurred = DVector::from_vec(vec![0.4, 0.005, 0.03, 1.2, 0.0, 0.5, 0.5, 0.5]);
        let ys: Vec<f64> = xs.iter().map(|&x| lorentz_triplet(&blurred, x)).collect();
        assert!(fit_triplet(&xs, &ys, 0.4, 0.005, 0.01).is_none());
    }
}
