//! Spin-cavity reflection model.
//!
//! # Closed form
//!
//! The reflection coefficient of the loaded cavity is
//! `Γ = −1 + κ_c1 / (κ_c/2 + i(ω_d − ω_c) + ΣΠ)`, where each spin line
//! contributes `Π = g²N / (κ_s/2 + iΔ + S/(κ_s/2 − iΔ))`, `Δ = ω_d − ω_s` and
//! `S = g² n_cav κ_s / (2κ_op)` is the saturation term.
//!
//! # Time domain
//!
//! All signals are complex envelopes in the frame rotating at `ω_d`. For every
//! hyperfine line `ℓ` of every transition there is a coherence `x2` and a
//! depolarized population `x3`, and all lines feed back into the single cavity
//! amplitude `x1`:
//!
//! ```text
//! dx1/dt  = −(κ_c/2 + iΔ_c) x1 − Σ_ℓ x2_ℓ + κ_c1 u
//! dx2_ℓ/dt = −(κ_s/2 + iΔ_ℓ) x2_ℓ + g²(N_ℓ − x3_ℓ) x1
//! dx3_ℓ/dt = W_ℓ (N_ℓ − x3_ℓ) − κ_op x3_ℓ,   W = g² n_cav (κ_s/2) / (κ_s²/4 + Δ²)
//! y       = −u + x1
//! ```
//!
//! With `u`, `Δ` and `n_cav` constant the fixed point is
//! `x3* = N W/(W + κ_op)`, hence `N − x3* = N/(1 + W/κ_op)` and
//! `x2* = g²(N − x3*)/(κ_s/2 + iΔ) · x1*`. Expanding
//! `(κ_s/2 + iΔ)·W/κ_op = S/(κ_s/2 − iΔ)` shows `x2* = Π x1*`, so
//! `x1* = κ_c1 u/(κ_c/2 + iΔ_c + ΣΠ)` and `y* = Γu`. The depolarization rate
//! `W` is the one fixed by requiring this equivalence; it is the only
//! coupling from coherence to population in the model.
//!
//! Repolarization proceeds at the optical pumping rate `κ_op`.
//!
//! `n_cav` is a fixed parameter by default. In
//! [`PhotonNumber::SelfConsistent`] mode it follows `|x1|²` instead, which
//! breaks the closed-form equivalence at high power.

use nalgebra::Vector3;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::geometry::NvBasis;
use crate::synth::{PhysicalConstants, TWO_PI};

pub const HBAR: f64 = 1.054_571_817e-34;
pub const MU0: f64 = 1.256_637_062_12e-6;

/// Number of spin transitions (4 orientations × 2).
pub const N_TRANSITIONS: usize = 8;
/// Hyperfine lines per transition.
pub const N_HF: usize = 3;
pub const N_LINES: usize = N_TRANSITIONS * N_HF;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CavityParams {
    /// Intrinsic linewidth κ_c0 (rad/s).
    pub kappa_c0: f64,
    /// Input coupling κ_c1 (rad/s).
    pub kappa_c1: f64,
    /// Resonance ω_c (rad/s).
    pub omega_c: f64,
    /// Drive ω_d (rad/s).
    pub omega_d: f64,
}

impl CavityParams {
    /// Loaded linewidth κ_c = κ_c0 + κ_c1.
    pub fn kappa_c(&self) -> f64 {
        self.kappa_c0 + self.kappa_c1
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.kappa_c0 > 0.0 && self.kappa_c1 > 0.0 && self.omega_c > 0.0 && self.omega_d > 0.0) {
            return Err(Error::InvalidInput(format!("cavity rates must be strictly positive: {self:?}")));
        }
        Ok(())
    }
}

/// Parameters of one spin transition.
///
/// `g_s` is the single spin-photon coupling and already includes the
/// transverse factor `n_perp` (see [`single_spin_coupling`]); `n_perp` is kept
/// for bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpinTransitionParams {
    pub g_s: f64,
    pub n_spins: f64,
    pub kappa_s: f64,
    pub kappa_op: f64,
    pub n_cav: f64,
    pub n_perp: f64,
}

impl SpinTransitionParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.g_s >= 0.0
            && self.kappa_s >= 0.0
            && self.kappa_op >= 0.0
            && self.n_cav >= 0.0
            && self.n_spins >= 0.0
            && (0.0..=1.0).contains(&self.n_perp);
        if !ok {
            return Err(Error::InvalidInput(format!("invalid spin transition parameters: {self:?}")));
        }
        Ok(())
    }

    /// Saturation term `g² n_cav κ_s / (2κ_op)`.
    pub fn saturation(&self) -> Result<f64> {
        if self.n_cav == 0.0 || self.g_s == 0.0 {
            return Ok(0.0);
        }
        if self.kappa_op == 0.0 {
            return Err(Error::InvalidInput("optical pumping rate is zero with photons present".into()));
        }
        Ok(self.g_s * self.g_s * self.n_cav * self.kappa_s / (2.0 * self.kappa_op))
    }
}

/// How the cavity photon number entering the depolarization rate is set.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum PhotonNumber {
    /// Use each transition's `n_cav` as given.
    #[default]
    Fixed,
    /// `n_cav = photons_per_unit · |x1|²`, updated continuously.
    SelfConsistent { photons_per_unit: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpinCavityParams {
    pub cavity: CavityParams,
    /// Indexed by [`crate::synth::TransitionId::index`].
    pub transitions: [SpinTransitionParams; N_TRANSITIONS],
    /// Fraction of each transition's spins in the `m_I = −1, 0, +1` lines.
    pub hyperfine_weights: [f64; N_HF],
    pub photon_number: PhotonNumber,
}

impl SpinCavityParams {
    pub fn validate(&self) -> Result<()> {
        self.cavity.validate()?;
        for t in &self.transitions {
            t.validate()?;
        }
        let w: f64 = self.hyperfine_weights.iter().sum();
        if self.hyperfine_weights.iter().any(|&x| x < 0.0) || (w - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput("hyperfine weights must be non-negative and sum to one".into()));
        }
        Ok(())
    }

    /// Parameters of a single hyperfine line, with its share of the spins.
    pub fn line(&self, transition: usize, hf: usize) -> SpinTransitionParams {
        let mut p = self.transitions[transition];
        p.n_spins *= self.hyperfine_weights[hf];
        p
    }

    /// Sum of `Π` over all lines for the given spin frequencies `[transition][line]`.
    pub fn pi_sum(&self, omega_s: &[[f64; N_HF]; N_TRANSITIONS]) -> Result<Complex64> {
        let mut sum = Complex64::new(0.0, 0.0);
        for (k, lines) in omega_s.iter().enumerate() {
            for (m, &ws) in lines.iter().enumerate() {
                sum += spin_term(&self.line(k, m), self.cavity.omega_d, ws)?;
            }
        }
        Ok(sum)
    }

    /// Closed-form `Γ` for static spin frequencies.
    pub fn gamma(&self, omega_s: &[[f64; N_HF]; N_TRANSITIONS]) -> Result<Complex64> {
        Ok(reflection_coefficient(&self.cavity, self.pi_sum(omega_s)?))
    }
}

/// Single spin-photon coupling `g_s = (γ n⊥/2)·√(ħω_c μ₀ / V_cav)`.
pub fn single_spin_coupling(gamma: f64, n_perp: f64, omega_c: f64, v_cav: f64) -> Result<f64> {
    if !(v_cav > 0.0) {
        return Err(Error::InvalidInput("mode volume must be positive".into()));
    }
    Ok(gamma * n_perp / 2.0 * (HBAR * omega_c * MU0 / v_cav).sqrt())
}

/// Spin-photon interaction term `Π` for one line.
pub fn spin_term(p: &SpinTransitionParams, omega_d: f64, omega_s: f64) -> Result<Complex64> {
    if p.g_s == 0.0 || p.n_spins == 0.0 {
        return Ok(Complex64::new(0.0, 0.0));
    }
    if !(p.kappa_s > 0.0) {
        return Err(Error::InvalidInput("spin linewidth must be positive".into()));
    }
    let s = p.saturation()?;
    let half = p.kappa_s / 2.0;
    let det = omega_d - omega_s;
    let denom = Complex64::new(half, det) + s / Complex64::new(half, -det);
    Ok(p.g_s * p.g_s * p.n_spins / denom)
}

/// `Γ = −1 + κ_c1 / (κ_c/2 + i(ω_d − ω_c) + Π)`.
pub fn reflection_coefficient(c: &CavityParams, pi_sum: Complex64) -> Complex64 {
    let denom = Complex64::new(c.kappa_c() / 2.0, c.omega_d - c.omega_c) + pi_sum;
    Complex64::new(-1.0, 0.0) + c.kappa_c1 / denom
}

/// Integrated state of the coupled system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimState {
    pub x1: Complex64,
    pub x2: [[Complex64; N_HF]; N_TRANSITIONS],
    pub x3: [[f64; N_HF]; N_TRANSITIONS],
}

impl SimState {
    pub fn zero() -> Self {
        Self {
            x1: Complex64::new(0.0, 0.0),
            x2: [[Complex64::new(0.0, 0.0); N_HF]; N_TRANSITIONS],
            x3: [[0.0; N_HF]; N_TRANSITIONS],
        }
    }

    /// Fixed point for a constant drive and constant spin frequencies.
    ///
    /// In self-consistent photon mode the fixed photon number of each
    /// transition is used, so this is only an approximate starting point.
    pub fn steady(params: &SpinCavityParams, drive: Complex64, omega_s: &[[f64; N_HF]; N_TRANSITIONS]) -> Result<Self> {
        let mut st = Self::zero();
        let mut pi = Complex64::new(0.0, 0.0);
        let mut terms = [[Complex64::new(0.0, 0.0); N_HF]; N_TRANSITIONS];
        for k in 0..N_TRANSITIONS {
            for m in 0..N_HF {
                let line = params.line(k, m);
                let t = spin_term(&line, params.cavity.omega_d, omega_s[k][m])?;
                terms[k][m] = t;
                pi += t;
                let det = params.cavity.omega_d - omega_s[k][m];
                let w = depolarization_rate(line.g_s * line.g_s, line.n_cav, line.kappa_s, det);
                st.x3[k][m] = if w > 0.0 { line.n_spins * w / (w + line.kappa_op) } else { 0.0 };
            }
        }
        let c = &params.cavity;
        st.x1 = c.kappa_c1 * drive / (Complex64::new(c.kappa_c() / 2.0, c.omega_d - c.omega_c) + pi);
        for k in 0..N_TRANSITIONS {
            for m in 0..N_HF {
                st.x2[k][m] = terms[k][m] * st.x1;
            }
        }
        Ok(st)
    }

    pub fn is_finite(&self) -> bool {
        self.x1.is_finite()
            && self.x2.iter().flatten().all(|z| z.is_finite())
            && self.x3.iter().flatten().all(|x| x.is_finite())
    }
}

/// MW-driven depolarization rate per polarized spin.
#[inline]
pub fn depolarization_rate(g2: f64, n_cav: f64, kappa_s: f64, detuning: f64) -> f64 {
    let half = 0.5 * kappa_s;
    g2 * n_cav * half / (half * half + detuning * detuning)
}

/// Time-stepping scheme used by [`Simulator`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Integrator {
    /// Classical fourth-order Runge-Kutta on the full state, with the internal
    /// step chosen so that `h·max(κ_c, κ_s) < 0.1` and `h·max|Δ| < 0.5`.
    #[default]
    Rk4,
    /// Spin coherences slaved to their instantaneous fixed point
    /// (`x2 = Π x1`, valid while the sweep is slow on the scale of κ_s); the
    /// cavity amplitude advances with an exact exponential step and the
    /// populations with a second-order step. Internal step `max_substep`.
    Adiabatic { max_substep: f64 },
}

#[derive(Debug, Clone, Copy)]
struct Line {
    g2: f64,
    n: f64,
    half_ks: f64,
    kop: f64,
    ncav: f64,
}

#[derive(Debug, Clone, Copy)]
struct Flat {
    x1: Complex64,
    x2: [Complex64; N_LINES],
    x3: [f64; N_LINES],
}

impl Flat {
    fn from_state(s: &SimState) -> Self {
        let mut f = Flat {
            x1: s.x1,
            x2: [Complex64::new(0.0, 0.0); N_LINES],
            x3: [0.0; N_LINES],
        };
        for k in 0..N_TRANSITIONS {
            for m in 0..N_HF {
                f.x2[k * N_HF + m] = s.x2[k][m];
                f.x3[k * N_HF + m] = s.x3[k][m];
            }
        }
        f
    }

    fn to_state(&self) -> SimState {
        let mut s = SimState::zero();
        s.x1 = self.x1;
        for k in 0..N_TRANSITIONS {
            for m in 0..N_HF {
                s.x2[k][m] = self.x2[k * N_HF + m];
                s.x3[k][m] = self.x3[k * N_HF + m];
            }
        }
        s
    }

    fn axpy(&self, h: f64, d: &Flat) -> Flat {
        let mut out = *self;
        out.x1 += d.x1 * h;
        for i in 0..N_LINES {
            out.x2[i] += d.x2[i] * h;
            out.x3[i] += d.x3[i] * h;
        }
        out
    }
}

/// Flattened spin frequencies `[transition * 3 + line]`.
pub type LineFrequencies = [f64; N_LINES];

pub fn flatten_frequencies(w: &[[f64; N_HF]; N_TRANSITIONS]) -> LineFrequencies {
    let mut out = [0.0; N_LINES];
    for k in 0..N_TRANSITIONS {
        for m in 0..N_HF {
            out[k * N_HF + m] = w[k][m];
        }
    }
    out
}

/// Stateful integrator of the spin-cavity model.
#[derive(Debug, Clone)]
pub struct Simulator {
    lines: [Line; N_LINES],
    half_kc: f64,
    det_c: f64,
    kappa_c1: f64,
    omega_d: f64,
    max_rate: f64,
    photon_number: PhotonNumber,
    integrator: Integrator,
    state: Flat,
}

impl Simulator {
    pub fn new(params: &SpinCavityParams, integrator: Integrator, initial: &SimState) -> Result<Self> {
        params.validate()?;
        if let Integrator::Adiabatic { max_substep } = integrator {
            if !(max_substep > 0.0) {
                return Err(Error::InvalidInput("adiabatic substep must be positive".into()));
            }
        }
        let mut lines = [Line { g2: 0.0, n: 0.0, half_ks: 0.0, kop: 0.0, ncav: 0.0 }; N_LINES];
        let mut max_ks: f64 = 0.0;
        for k in 0..N_TRANSITIONS {
            for m in 0..N_HF {
                let p = params.line(k, m);
                if p.g_s > 0.0 && p.n_spins > 0.0 && !(p.kappa_s > 0.0) {
                    return Err(Error::InvalidInput("coupled spin line with zero linewidth".into()));
                }
                max_ks = max_ks.max(p.kappa_s);
                lines[k * N_HF + m] = Line {
                    g2: p.g_s * p.g_s,
                    n: p.n_spins,
                    half_ks: 0.5 * p.kappa_s,
                    kop: p.kappa_op,
                    ncav: p.n_cav,
                };
            }
        }
        let c = &params.cavity;
        // collective coupling sets the fastest exchange rate between x1 and x2
        let collective: f64 = lines.iter().map(|l| l.g2 * l.n).sum::<f64>().sqrt();
        Ok(Self {
            lines,
            half_kc: 0.5 * c.kappa_c(),
            det_c: c.omega_d - c.omega_c,
            kappa_c1: c.kappa_c1,
            omega_d: c.omega_d,
            max_rate: c.kappa_c().max(max_ks).max(collective),
            photon_number: params.photon_number,
            integrator,
            state: Flat::from_state(initial),
        })
    }

    pub fn state(&self) -> SimState {
        self.state.to_state()
    }

    pub fn x1(&self) -> Complex64 {
        self.state.x1
    }

    #[inline]
    fn ncav(&self, line: &Line, x1: Complex64) -> f64 {
        match self.photon_number {
            PhotonNumber::Fixed => line.ncav,
            PhotonNumber::SelfConsistent { photons_per_unit } => photons_per_unit * x1.norm_sqr(),
        }
    }

    fn deriv(&self, s: &Flat, u: Complex64, w: &LineFrequencies) -> Flat {
        let mut d = Flat {
            x1: Complex64::new(0.0, 0.0),
            x2: [Complex64::new(0.0, 0.0); N_LINES],
            x3: [0.0; N_LINES],
        };
        let mut feedback = Complex64::new(0.0, 0.0);
        for i in 0..N_LINES {
            let l = &self.lines[i];
            let det = self.omega_d - w[i];
            let x2 = s.x2[i];
            feedback += x2;
            let pol = l.n - s.x3[i];
            d.x2[i] = -Complex64::new(l.half_ks, det) * x2 + s.x1 * (l.g2 * pol);
            let rate = depolarization_rate(l.g2, self.ncav(l, s.x1), 2.0 * l.half_ks, det);
            d.x3[i] = rate * pol - l.kop * s.x3[i];
        }
        d.x1 = -Complex64::new(self.half_kc, self.det_c) * s.x1 - feedback + u * self.kappa_c1;
        d
    }

    /// Advances by `dt`, with drive and spin frequencies interpolated linearly
    /// between their values at the two ends of the interval. Returns the
    /// output `y = −u + x1` at the end of the interval.
    pub fn advance(
        &mut self,
        dt: f64,
        u0: Complex64,
        u1: Complex64,
        w0: &LineFrequencies,
        w1: &LineFrequencies,
    ) -> Result<Complex64> {
        match self.integrator {
            Integrator::Rk4 => self.advance_rk4(dt, u0, u1, w0, w1),
            Integrator::Adiabatic { max_substep } => self.advance_adiabatic(dt, max_substep, u0, u1, w0, w1),
        }
        if !self.state.x1.is_finite() || !self.state.x3.iter().all(|x| x.is_finite()) {
            return Err(Error::Diverged {
                sample: 0,
                detail: format!("non-finite state, x1 = {}", self.state.x1),
            });
        }
        Ok(u1 * -1.0 + self.state.x1)
    }

    fn advance_rk4(&mut self, dt: f64, u0: Complex64, u1: Complex64, w0: &LineFrequencies, w1: &LineFrequencies) {
        let mut max_det = self.det_c.abs();
        for i in 0..N_LINES {
            if self.lines[i].g2 * self.lines[i].n > 0.0 {
                max_det = max_det.max((self.omega_d - w0[i]).abs()).max((self.omega_d - w1[i]).abs());
            }
        }
        let h_max = (0.1 / self.max_rate).min(if max_det > 0.0 { 0.5 / max_det } else { f64::INFINITY });
        let n = (dt / h_max).ceil().max(1.0) as usize;
        let h = dt / n as f64;
        let lerp_w = |f: f64| -> LineFrequencies {
            let mut w = [0.0; N_LINES];
            for i in 0..N_LINES {
                w[i] = w0[i] + (w1[i] - w0[i]) * f;
            }
            w
        };
        for j in 0..n {
            let fa = j as f64 / n as f64;
            let fm = (j as f64 + 0.5) / n as f64;
            let fb = (j + 1) as f64 / n as f64;
            let (ua, um, ub) = (u0 + (u1 - u0) * fa, u0 + (u1 - u0) * fm, u0 + (u1 - u0) * fb);
            let (wa, wm, wb) = (lerp_w(fa), lerp_w(fm), lerp_w(fb));
            let s = self.state;
            let k1 = self.deriv(&s, ua, &wa);
            let k2 = self.deriv(&s.axpy(h / 2.0, &k1), um, &wm);
            let k3 = self.deriv(&s.axpy(h / 2.0, &k2), um, &wm);
            let k4 = self.deriv(&s.axpy(h, &k3), ub, &wb);
            let mut next = s;
            next.x1 += (k1.x1 + (k2.x1 + k3.x1) * 2.0 + k4.x1) * (h / 6.0);
            for i in 0..N_LINES {
                next.x2[i] += (k1.x2[i] + (k2.x2[i] + k3.x2[i]) * 2.0 + k4.x2[i]) * (h / 6.0);
                next.x3[i] += (k1.x3[i] + 2.0 * (k2.x3[i] + k3.x3[i]) + k4.x3[i]) * (h / 6.0);
            }
            self.state = next;
        }
    }

    fn advance_adiabatic(
        &mut self,
        dt: f64,
        max_substep: f64,
        u0: Complex64,
        u1: Complex64,
        w0: &LineFrequencies,
        w1: &LineFrequencies,
    ) {
        let n = (dt / max_substep).ceil().max(1.0) as usize;
        let h = dt / n as f64;
        let mut pis = [Complex64::new(0.0, 0.0); N_LINES];
        for j in 0..n {
            let f = (j as f64 + 0.5) / n as f64;
            let u = u0 + (u1 - u0) * f;
            let x1 = self.state.x1;
            let mut pi_sum = Complex64::new(0.0, 0.0);
            for i in 0..N_LINES {
                let l = &self.lines[i];
                if l.g2 == 0.0 || l.n == 0.0 {
                    continue;
                }
                let det = self.omega_d - (w0[i] + (w1[i] - w0[i]) * f);
                let pol = l.n - self.state.x3[i];
                let p = l.g2 * pol / Complex64::new(l.half_ks, det);
                pis[i] = p;
                pi_sum += p;
                // populations: exact relaxation toward the instantaneous target
                let rate = depolarization_rate(l.g2, self.ncav(l, x1), 2.0 * l.half_ks, det);
                let r = rate + l.kop;
                if r > 0.0 {
                    let target = rate * l.n / r;
                    let rh = r * h;
                    let decay = if rh < 1e-3 { 1.0 - rh + 0.5 * rh * rh - rh * rh * rh / 6.0 } else { (-rh).exp() };
                    self.state.x3[i] = target + (self.state.x3[i] - target) * decay;
                }
            }
            let lambda = Complex64::new(self.half_kc, self.det_c) + pi_sum;
            let e = (-lambda * h).exp();
            let forced = u * self.kappa_c1 / lambda;
            self.state.x1 = forced + (x1 - forced) * e;
        }
        for i in 0..N_LINES {
            self.state.x2[i] = pis[i] * self.state.x1;
        }
    }
}

/// Integrates the model over a sampled drive and sampled spin frequencies
/// (`omega_s[transition][line][sample]`), returning `y = −u + x1` on the same
/// grid. The first output sample is the output of `initial`.
pub fn simulate(
    params: &SpinCavityParams,
    drive: &[Complex64],
    omega_s: &[Vec<Vec<f64>>],
    dt: f64,
    initial: &SimState,
    integrator: Integrator,
) -> Result<crate::trace::ReflectionTrace> {
    if omega_s.len() != N_TRANSITIONS || omega_s.iter().any(|t| t.len() != N_HF) {
        return Err(Error::LengthMismatch(format!("expected {N_TRANSITIONS}×{N_HF} spin frequency traces")));
    }
    let n = drive.len();
    if omega_s.iter().flatten().any(|t| t.len() != n) {
        return Err(Error::LengthMismatch("spin frequency traces and drive differ in length".into()));
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidInput("time step must be positive".into()));
    }
    let mut sim = Simulator::new(params, integrator, initial)?;
    let freqs_at = |i: usize| {
        let mut w = [0.0; N_LINES];
        for k in 0..N_TRANSITIONS {
            for m in 0..N_HF {
                w[k * N_HF + m] = omega_s[k][m][i];
            }
        }
        w
    };
    let mut out = Vec::with_capacity(n);
    if n == 0 {
        return Ok(crate::trace::ReflectionTrace::new(out, 1.0 / dt));
    }
    out.push(-drive[0] + initial.x1);
    let mut w_prev = freqs_at(0);
    for i in 1..n {
        let w = freqs_at(i);
        let y = sim.advance(dt, drive[i - 1], drive[i], &w_prev, &w).map_err(|e| match e {
            Error::Diverged { detail, .. } => Error::Diverged { sample: i, detail },
            other => other,
        })?;
        out.push(y);
        w_prev = w;
    }
    Ok(crate::trace::ReflectionTrace::new(out, 1.0 / dt))
}

/// A physically motivated parameter set resembling the demonstrated sensor.
///
/// The cavity is critically coupled with a 146 kHz loaded linewidth and sits
/// 30 MHz above the zero-field splitting; the spin linewidth is 2 MHz. The MW
/// field is taken parallel to the bias, so the transverse factor of each
/// orientation is `√(1 − (b̂₀·n̂ᵢ)²)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceParams {
    pub cavity_linewidth_hz: f64,
    pub cavity_offset_hz: f64,
    pub spin_linewidth_hz: f64,
    pub pumping_rate_hz: f64,
    pub mode_volume_m3: f64,
    pub spins_per_transition: f64,
    pub n_cav: f64,
}

impl Default for ReferenceParams {
    fn default() -> Self {
        Self {
            cavity_linewidth_hz: 146e3,
            cavity_offset_hz: 30e6,
            spin_linewidth_hz: 2e6,
            pumping_rate_hz: 500.0,
            mode_volume_m3: 5e-7,
            spins_per_transition: 3e14,
            n_cav: 5e11,
        }
    }
}

impl ReferenceParams {
    pub fn build(&self, constants: &PhysicalConstants, basis: &NvBasis, bias_dir: &Vector3<f64>) -> Result<SpinCavityParams> {
        let kc = TWO_PI * self.cavity_linewidth_hz;
        let omega_c = constants.d_zfs + TWO_PI * self.cavity_offset_hz;
        let cavity = CavityParams {
            kappa_c0: kc / 2.0,
            kappa_c1: kc / 2.0,
            omega_c,
            omega_d: omega_c,
        };
        let b_hat = bias_dir.normalize();
        let mut transitions = [SpinTransitionParams {
            g_s: 0.0,
            n_spins: 0.0,
            kappa_s: 0.0,
            kappa_op: 0.0,
            n_cav: 0.0,
            n_perp: 0.0,
        }; N_TRANSITIONS];
        for (k, t) in transitions.iter_mut().enumerate() {
            let o = k / 2;
            let c = basis.axis(o).dot(&b_hat);
            let n_perp = (1.0 - c * c).max(0.0).sqrt();
            *t = SpinTransitionParams {
                g_s: single_spin_coupling(constants.gamma_e, n_perp, omega_c, self.mode_volume_m3)?,
                n_spins: self.spins_per_transition,
                kappa_s: TWO_PI * self.spin_linewidth_hz,
                kappa_op: TWO_PI * self.pumping_rate_hz,
                n_cav: self.n_cav,
                n_perp,
            };
        }
        let p = SpinCavityParams {
            cavity,
            transitions,
            hyperfine_weights: [1.0 / 3.0; 3],
            photon_number: PhotonNumber::Fixed,
        };
        p.validate()?;
        Ok(p)
    }
}
