//! Microwave-driven dynamics in the rotating frame: pulses, propagation,
//! Rabi traces and their frequency analysis, and spectroscopy scans.
//!
//! Hamiltonians are expressed in Hz (`H/h`), so a state evolves as
//! `exp(−2πi·H·t)`. The basis orders all S0 levels first, then S1 levels.

use std::f64::consts::{LN_2, PI, TAU};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use crate::bands::BandStructure;
use crate::coupling::{bloch_coupling, WellPair};
use crate::error::{Error, Result};
use crate::lattice::{SpinState, PLANCK};
use crate::linalg::{hermitian_eigen, hermiticity_defect, CMatrix, CVector};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "lowercase")]
pub enum Envelope {
    /// Constant amplitude on [0, duration].
    Rectangular { duration: f64 },
    /// Gaussian centred at `truncation`, cut to [0, 2·truncation].
    Gaussian { fwhm: f64, truncation: f64 },
}

impl Envelope {
    /// Gaussian truncated at ±3·fwhm.
    pub fn gaussian(fwhm: f64) -> Self {
        Envelope::Gaussian {
            fwhm,
            truncation: 3.0 * fwhm,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Envelope::Rectangular { duration } if duration > 0.0 && duration.is_finite() => Ok(()),
            Envelope::Gaussian { fwhm, truncation } if fwhm > 0.0 && truncation > 0.0 && fwhm.is_finite() => Ok(()),
            e => Err(Error::Config(format!("invalid pulse envelope {e:?}"))),
        }
    }

    /// Time at which the envelope ends.
    pub fn span(&self) -> f64 {
        match *self {
            Envelope::Rectangular { duration } => duration,
            Envelope::Gaussian { truncation, .. } => 2.0 * truncation,
        }
    }

    pub fn value(&self, t: f64) -> f64 {
        match *self {
            Envelope::Rectangular { duration } => {
                if (0.0..=duration).contains(&t) {
                    1.0
                } else {
                    0.0
                }
            }
            Envelope::Gaussian { fwhm, truncation } => {
                let x = t - truncation;
                if x.abs() <= truncation {
                    (-4.0 * LN_2 * x * x / (fwhm * fwhm)).exp()
                } else {
                    0.0
                }
            }
        }
    }

    /// `∫ envelope dt`, s.
    pub fn integral(&self) -> f64 {
        match *self {
            Envelope::Rectangular { duration } => duration,
            Envelope::Gaussian { fwhm, truncation } => {
                fwhm * (PI / (4.0 * LN_2)).sqrt() * erf(2.0 * LN_2.sqrt() * truncation / fwhm)
            }
        }
    }
}

/// What a pulse detuning is measured from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Reference {
    /// The bare hyperfine splitting plus any Hamiltonian offset.
    Hyperfine,
    /// The line |0,n⟩ ↔ |1,n′⟩.
    Line { n: usize, nprime: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pulse {
    /// Ω₀, Hz.
    pub bare_rabi: f64,
    /// Drive detuning from `reference`, Hz.
    pub detuning: f64,
    pub reference: Reference,
    pub envelope: Envelope,
    /// Microwave phase, rad.
    pub phase: f64,
}

impl Pulse {
    pub fn new(bare_rabi: f64, envelope: Envelope) -> Result<Self> {
        let p = Self {
            bare_rabi,
            detuning: 0.0,
            reference: Reference::Hyperfine,
            envelope,
            phase: 0.0,
        };
        p.validate()?;
        Ok(p)
    }

    /// Gaussian pulse whose bare area is `area` (units of π).
    pub fn gaussian_with_area(area: f64, fwhm: f64) -> Result<Self> {
        let env = Envelope::gaussian(fwhm);
        env.validate()?;
        Self::new(area / (2.0 * env.integral()), env)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bare_rabi >= 0.0) || !self.bare_rabi.is_finite() {
            return Err(Error::Config(format!("bare Rabi frequency {} must be ≥ 0", self.bare_rabi)));
        }
        self.envelope.validate()
    }

    pub fn resonant_with(mut self, n: usize, nprime: usize) -> Self {
        self.reference = Reference::Line { n, nprime };
        self
    }

    pub fn with_detuning(mut self, detuning: f64) -> Self {
        self.detuning = detuning;
        self
    }

    /// Bare pulse area `2·Ω₀·∫envelope dt` in units of π.
    pub fn area(&self) -> f64 {
        2.0 * self.bare_rabi * self.envelope.integral()
    }
}

/// Rotating-frame drive Hamiltonian for two vibrational manifolds.
#[derive(Debug, Clone, PartialEq)]
pub struct DriveHamiltonian {
    /// S0 level energies, Hz.
    pub e0: Vec<f64>,
    /// S1 level energies relative to the hyperfine splitting, Hz.
    pub e1: Vec<f64>,
    /// `M[n′][n]`, rows S1 and columns S0.
    pub coupling: DMatrix<Complex64>,
    /// Frequency added to every S1 level (e.g. a Zeeman shift), Hz.
    pub offset: f64,
}

impl DriveHamiltonian {
    pub fn new(e0: Vec<f64>, e1: Vec<f64>, coupling: DMatrix<Complex64>, offset: f64) -> Result<Self> {
        if coupling.nrows() != e1.len() || coupling.ncols() != e0.len() {
            return Err(Error::Contract(format!(
                "coupling is {}×{} but levels are {}×{}",
                coupling.nrows(),
                coupling.ncols(),
                e1.len(),
                e0.len()
            )));
        }
        Ok(Self { e0, e1, coupling, offset })
    }

    /// Localized-basis Hamiltonian of a well pair, band centres as levels.
    pub fn from_pair(pair: &WellPair, offset: f64) -> Result<Self> {
        let e0 = pair.energies(SpinState::S0).iter().map(|e| e / PLANCK).collect();
        let e1 = pair.energies(SpinState::S1).iter().map(|e| e / PLANCK).collect();
        Self::new(e0, e1, pair.coupling.elements.clone(), offset)
    }

    /// Same-quasimomentum Hamiltonian at grid index `iq` of two band structures.
    pub fn from_bloch(sol0: &BandStructure, sol1: &BandStructure, iq: usize, offset: f64) -> Result<Self> {
        let m = bloch_coupling(sol0, sol1, iq)?;
        let e0 = sol0.energies[iq].iter().map(|e| e / PLANCK).collect();
        let e1 = sol1.energies[iq].iter().map(|e| e / PLANCK).collect();
        Self::new(e0, e1, m, offset)
    }

    /// Keep the lowest `n0` S0 and `n1` S1 levels.
    pub fn truncated(&self, n0: usize, n1: usize) -> Result<Self> {
        if n0 > self.e0.len() || n1 > self.e1.len() {
            return Err(Error::Range(format!("cannot keep {n0}×{n1} levels of {}×{}", self.e0.len(), self.e1.len())));
        }
        Self::new(
            self.e0[..n0].to_vec(),
            self.e1[..n1].to_vec(),
            self.coupling.view((0, 0), (n1, n0)).into_owned(),
            self.offset,
        )
    }

    pub fn dim(&self) -> usize {
        self.e0.len() + self.e1.len()
    }

    pub fn levels(&self, s: SpinState) -> usize {
        match s {
            SpinState::S0 => self.e0.len(),
            SpinState::S1 => self.e1.len(),
        }
    }

    /// Basis index of level `n` of spin `s`.
    pub fn index(&self, s: SpinState, n: usize) -> Result<usize> {
        if n >= self.levels(s) {
            return Err(Error::Range(format!("{s:?} level {n} outside the {}-level basis", self.levels(s))));
        }
        Ok(match s {
            SpinState::S0 => n,
            SpinState::S1 => self.e0.len() + n,
        })
    }

    pub fn basis_state(&self, s: SpinState, n: usize) -> Result<CVector> {
        let mut v = CVector::zeros(self.dim());
        v[self.index(s, n)?] = Complex64::new(1.0, 0.0);
        Ok(v)
    }

    /// Frequency of |0,n⟩ ↔ |1,n′⟩ relative to the hyperfine splitting, Hz.
    pub fn line_frequency(&self, n: usize, nprime: usize) -> Result<f64> {
        if n >= self.e0.len() || nprime >= self.e1.len() {
            return Err(Error::Range(format!("line ({n} → {nprime}) outside the basis")));
        }
        Ok(self.e1[nprime] + self.offset - self.e0[n])
    }

    pub fn drive_frequency(&self, pulse: &Pulse) -> Result<f64> {
        let base = match pulse.reference {
            Reference::Hyperfine => self.offset,
            Reference::Line { n, nprime } => self.line_frequency(n, nprime)?,
        };
        Ok(base + pulse.detuning)
    }

    /// Spacing of the two lowest S0 levels, Hz.
    pub fn trap_frequency(&self) -> Option<f64> {
        (self.e0.len() > 1).then(|| self.e0[1] - self.e0[0])
    }

    /// Rotating-frame matrix for drive frequency `f` and instantaneous Rabi
    /// frequency `rabi` (Hz).
    pub fn matrix(&self, f: f64, rabi: f64, phase: f64) -> CMatrix {
        let n0 = self.e0.len();
        let dim = self.dim();
        let mut h = CMatrix::zeros(dim, dim);
        for (i, &e) in self.e0.iter().enumerate() {
            h[(i, i)] = Complex64::new(e, 0.0);
        }
        for (i, &e) in self.e1.iter().enumerate() {
            h[(n0 + i, n0 + i)] = Complex64::new(e + self.offset - f, 0.0);
        }
        if rabi != 0.0 {
            let amp = Complex64::from_polar(rabi / 2.0, phase);
            for r in 0..self.e1.len() {
                for c in 0..n0 {
                    let v = amp * self.coupling[(r, c)];
                    h[(n0 + r, c)] = v;
                    h[(c, n0 + r)] = v.conj();
                }
            }
        }
        h
    }

    fn free_phases(&self, f: f64, t: f64) -> Vec<Complex64> {
        self.e0
            .iter()
            .copied()
            .chain(self.e1.iter().map(|e| e + self.offset - f))
            .map(|e| Complex64::from_polar(1.0, -TAU * e * t))
            .collect()
    }
}

/// States at the requested times.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<CVector>,
    /// S0 level count, to split the basis.
    pub split: usize,
}

impl Trajectory {
    pub fn spin_population(&self, i: usize, s: SpinState) -> f64 {
        let v = &self.states[i];
        let range = match s {
            SpinState::S0 => 0..self.split,
            SpinState::S1 => self.split..v.len(),
        };
        range.map(|k| v[k].norm_sqr()).sum()
    }
}

/// Norm drift tolerated before a run is rejected.
pub const NORM_TOLERANCE: f64 = 1e-8;
/// Population change allowed when the Magnus step is halved.
pub const STEP_TOLERANCE: f64 = 1e-6;

fn check_times(times: &[f64]) -> Result<()> {
    if times.iter().any(|t| !(*t >= 0.0) || !t.is_finite()) {
        return Err(Error::Domain("times must be finite and non-negative".into()));
    }
    if times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Domain("times must be non-decreasing".into()));
    }
    Ok(())
}

/// One fourth-order Magnus step `exp(Ω)` over [t, t + dt].
fn magnus_step(h: &DriveHamiltonian, pulse: &Pulse, f: f64, t: f64, dt: f64) -> Result<CMatrix> {
    let c = 3f64.sqrt() / 6.0;
    let h1 = h.matrix(f, pulse.bare_rabi * pulse.envelope.value(t + (0.5 - c) * dt), pulse.phase);
    let h2 = h.matrix(f, pulse.bare_rabi * pulse.envelope.value(t + (0.5 + c) * dt), pulse.phase);
    let comm = &h2 * &h1 - &h1 * &h2;
    // Ω = −iK with K Hermitian, written in Hz·s so exp(Ω) = propagator(K, 1)
    let k = (&h1 + &h2) * Complex64::new(dt / 2.0, 0.0)
        - comm * Complex64::new(0.0, 3f64.sqrt() / 12.0 * TAU * dt * dt);
    Ok(hermitian_eigen(&k)?.propagator(1.0))
}

/// Propagate `state` (one or more columns) from `t0` to `t1` with steps of at most `hmax`.
fn propagate(
    h: &DriveHamiltonian,
    pulse: &Pulse,
    f: f64,
    state: &CMatrix,
    t0: f64,
    t1: f64,
    hmax: f64,
) -> Result<CMatrix> {
    let span = pulse.envelope.span();
    let mut out = state.clone();
    let mut t = t0;
    let apply_free = |m: &mut CMatrix, dt: f64| {
        let ph = h.free_phases(f, dt);
        for (r, p) in ph.iter().enumerate() {
            for c in 0..m.ncols() {
                m[(r, c)] *= p;
            }
        }
    };
    // driven part
    let a = t0.max(0.0).min(span);
    let b = t1.min(span);
    if b > a {
        if a > t {
            apply_free(&mut out, a - t);
        }
        let steps = ((b - a) / hmax).ceil().max(1.0) as usize;
        let dt = (b - a) / steps as f64;
        for i in 0..steps {
            out = magnus_step(h, pulse, f, a + i as f64 * dt, dt)? * out;
        }
        t = b;
    }
    if t1 > t {
        apply_free(&mut out, t1 - t);
    }
    Ok(out)
}

fn run_adaptive(h: &DriveHamiltonian, pulse: &Pulse, f: f64, initial: &CMatrix, times: &[f64]) -> Result<Vec<CMatrix>> {
    let span = pulse.envelope.span();
    let mut hmax = match pulse.envelope {
        Envelope::Gaussian { fwhm, .. } => fwhm / 8.0,
        Envelope::Rectangular { duration } => duration / 8.0,
    };
    let sweep = |hmax: f64| -> Result<Vec<CMatrix>> {
        let mut out = Vec::with_capacity(times.len());
        let mut cur = initial.clone();
        let mut t = 0.0;
        for &tn in times {
            cur = propagate(h, pulse, f, &cur, t, tn, hmax)?;
            t = tn;
            out.push(cur.clone());
        }
        Ok(out)
    };
    let mut coarse = sweep(hmax)?;
    loop {
        hmax /= 2.0;
        if hmax < span * 1e-7 {
            return Err(Error::Integrator(format!(
                "step size fell below {:.3e} s without meeting the {STEP_TOLERANCE:e} population tolerance",
                hmax
            )));
        }
        let fine = sweep(hmax)?;
        let change = coarse
            .iter()
            .zip(&fine)
            .flat_map(|(a, b)| a.iter().zip(b.iter()).map(|(x, y)| (x.norm_sqr() - y.norm_sqr()).abs()))
            .fold(0.0, f64::max);
        if change < STEP_TOLERANCE {
            return Ok(fine);
        }
        coarse = fine;
    }
}

fn evolve_columns(h: &DriveHamiltonian, pulse: &Pulse, initial: &CMatrix, times: &[f64]) -> Result<Vec<CMatrix>> {
    pulse.validate()?;
    check_times(times)?;
    let f = h.drive_frequency(pulse)?;
    let driven = h.matrix(f, pulse.bare_rabi, pulse.phase);
    if hermiticity_defect(&driven) > 1e-12 {
        return Err(Error::Contract("drive Hamiltonian is not Hermitian".into()));
    }
    let out = match pulse.envelope {
        Envelope::Rectangular { duration } => {
            let eig = hermitian_eigen(&driven)?;
            let at_end = eig.propagator(duration) * initial;
            times
                .iter()
                .map(|&t| {
                    if t <= duration {
                        eig.propagator(t) * initial
                    } else {
                        let ph = h.free_phases(f, t - duration);
                        let mut m = at_end.clone();
                        for (r, p) in ph.iter().enumerate() {
                            for c in 0..m.ncols() {
                                m[(r, c)] *= p;
                            }
                        }
                        m
                    }
                })
                .collect()
        }
        Envelope::Gaussian { .. } => run_adaptive(h, pulse, f, initial, times)?,
    };
    for m in &out {
        for c in m.column_iter() {
            let drift = (c.norm_squared() - initial.column(0).norm_squared()).abs();
            if drift > NORM_TOLERANCE {
                return Err(Error::Integrator(format!("norm drifted by {drift:.3e}")));
            }
        }
    }
    Ok(out)
}

/// Evolve a normalized state under `pulse`, returning it at each of `times`
/// (seconds from the pulse start). The drive is off outside the envelope.
pub fn evolve(initial: &CVector, h: &DriveHamiltonian, pulse: &Pulse, times: &[f64]) -> Result<Trajectory> {
    if initial.len() != h.dim() {
        return Err(Error::Contract(format!("state has {} components, basis {}", initial.len(), h.dim())));
    }
    let norm = initial.norm_squared();
    if (norm - 1.0).abs() > 1e-10 {
        return Err(Error::Domain(format!("initial state not normalized (|ψ|² = {norm})")));
    }
    let cols = evolve_columns(h, pulse, &CMatrix::from_column_slice(h.dim(), 1, initial.as_slice()), times)?;
    Ok(Trajectory {
        times: times.to_vec(),
        states: cols.into_iter().map(|m| m.column(0).into_owned()).collect(),
        split: h.e0.len(),
    })
}

/// Full propagator over the complete pulse.
pub fn pulse_propagator(h: &DriveHamiltonian, pulse: &Pulse) -> Result<CMatrix> {
    let id = CMatrix::identity(h.dim(), h.dim());
    let mut out = evolve_columns(h, pulse, &id, &[pulse.envelope.span()])?;
    Ok(out.remove(0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RabiTrace {
    pub times: Vec<f64>,
    pub p0: Vec<f64>,
    pub p1: Vec<f64>,
    pub initial: (SpinState, usize),
    pub pulse: Pulse,
    /// Set when the drive is too strong for the target line to be resolved.
    pub warning: Option<String>,
}

impl RabiTrace {
    /// Population of the spin opposite to the initial one.
    pub fn transfer(&self) -> &[f64] {
        match self.initial.0 {
            SpinState::S0 => &self.p1,
            SpinState::S1 => &self.p0,
        }
    }

    pub fn rabi_frequency(&self) -> Result<f64> {
        extract_rabi(&self.times, self.transfer())
    }
}

/// Rabi oscillation starting from level `initial`, sampled at `times`.
pub fn rabi_trace(h: &DriveHamiltonian, initial: (SpinState, usize), pulse: &Pulse, times: &[f64]) -> Result<RabiTrace> {
    let psi = h.basis_state(initial.0, initial.1)?;
    let traj = evolve(&psi, h, pulse, times)?;
    let warning = match (pulse.reference, h.trap_frequency()) {
        (Reference::Line { n, nprime }, Some(trap)) => {
            let rabi = pulse.bare_rabi * h.coupling[(nprime, n)].norm();
            (rabi >= trap.abs() / 2.0).then(|| {
                format!("line Rabi frequency {rabi:.4e} Hz exceeds half the trap frequency {:.4e} Hz", trap.abs())
            })
        }
        _ => None,
    };
    Ok(RabiTrace {
        times: times.to_vec(),
        p0: (0..times.len()).map(|i| traj.spin_population(i, SpinState::S0)).collect(),
        p1: (0..times.len()).map(|i| traj.spin_population(i, SpinState::S1)).collect(),
        initial,
        pulse: *pulse,
        warning,
    })
}

/// `n` equally spaced times from 0 to `end` inclusive.
pub fn uniform_times(end: f64, n: usize) -> Vec<f64> {
    let n = n.max(2);
    (0..n).map(|i| end * i as f64 / (n - 1) as f64).collect()
}

fn uniform_step(times: &[f64]) -> Result<f64> {
    if times.len() < 8 {
        return Err(Error::Extraction(format!("{} samples are too few for a spectrum", times.len())));
    }
    let dt = (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64;
    if !(dt > 0.0) || times.windows(2).any(|w| ((w[1] - w[0]) - dt).abs() > 1e-6 * dt) {
        return Err(Error::Extraction("samples must be uniformly spaced in time".into()));
    }
    Ok(dt)
}

fn windowed(signal: &[f64]) -> Vec<f64> {
    let n = signal.len();
    let mean = signal.iter().sum::<f64>() / n as f64;
    signal
        .iter()
        .enumerate()
        .map(|(i, x)| (x - mean) * 0.5 * (1.0 - (TAU * i as f64 / (n - 1) as f64).cos()))
        .collect()
}

fn dtft_magnitude(x: &[f64], dt: f64, f: f64) -> f64 {
    let w = Complex64::from_polar(1.0, -TAU * f * dt);
    let mut ph = Complex64::new(1.0, 0.0);
    let mut acc = Complex64::new(0.0, 0.0);
    for &v in x {
        acc += ph * v;
        ph *= w;
    }
    acc.norm()
}

/// Golden-section search for the maximum of `g` on [a, b].
pub(crate) fn golden_max(mut a: f64, mut b: f64, g: impl Fn(f64) -> f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut gc, mut gd) = (g(c), g(d));
    for _ in 0..80 {
        if gc > gd {
            b = d;
            d = c;
            gd = gc;
            c = b - r * (b - a);
            gc = g(c);
        } else {
            a = c;
            c = d;
            gc = gd;
            d = a + r * (b - a);
            gd = g(d);
        }
    }
    0.5 * (a + b)
}

/// Amplitude spectrum of a uniformly sampled signal: Hann window,
/// zero padding, and the magnitude of the transform at positive frequencies.
pub fn amplitude_spectrum(times: &[f64], signal: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let dt = uniform_step(times)?;
    if signal.len() != times.len() {
        return Err(Error::Contract("signal and time grid differ in length".into()));
    }
    let x = windowed(signal);
    let len = (x.len().next_power_of_two() * 8).max(1024);
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    buf.resize(len, Complex64::new(0.0, 0.0));
    FftPlanner::new().plan_fft_forward(len).process(&mut buf);
    let df = 1.0 / (len as f64 * dt);
    let freqs = (0..len / 2).map(|k| k as f64 * df).collect();
    let mags = buf[..len / 2].iter().map(|z| z.norm()).collect();
    Ok((freqs, mags))
}

/// Dominant oscillation frequency of a population signal, Hz.
///
/// The peak of the zero-padded Hann-windowed transform is refined by
/// maximizing the windowed transform continuously around it.
pub fn extract_rabi(times: &[f64], signal: &[f64]) -> Result<f64> {
    let (freqs, mags) = amplitude_spectrum(times, signal)?;
    let dt = times[1] - times[0];
    let n = signal.len();
    let total = times[n - 1] - times[0];
    // ignore the DC lobe of the Hann window (±2 natural bins)
    let start = freqs.iter().position(|&f| f * total >= 2.0).unwrap_or(freqs.len());
    let (k, peak) = mags
        .iter()
        .enumerate()
        .skip(start)
        .fold((0, 0.0), |acc, (i, &m)| if m > acc.1 { (i, m) } else { acc });
    let mut sorted: Vec<f64> = mags[start.min(mags.len())..].to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = sorted.get(sorted.len() / 2).copied().unwrap_or(0.0);
    let scale = signal.iter().map(|v| v.abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    if k == 0 || peak <= 1e-9 * scale * n as f64 || peak < 10.0 * median {
        return Err(Error::Extraction("no spectral peak above the noise floor".into()));
    }
    let df = freqs[1];
    let x = windowed(signal);
    let f = golden_max((freqs[k] - df).max(0.0), freqs[k] + df, |f| dtft_magnitude(&x, dt, f));
    if f * total < 3.0 {
        return Err(Error::Extraction(format!(
            "trace spans {:.2} periods of {f:.4e} Hz; at least 3 are required",
            f * total
        )));
    }
    Ok(f)
}

/// Final transfer probability out of `initial_spin` versus detuning, for an
/// incoherent mixture with level populations `populations`.
pub fn spectrum_scan(
    h: &DriveHamiltonian,
    initial_spin: SpinState,
    populations: &[f64],
    pulse: &Pulse,
    detunings: &[f64],
) -> Result<Vec<f64>> {
    if populations.len() > h.levels(initial_spin) {
        return Err(Error::Range(format!(
            "{} populations for a {}-level manifold",
            populations.len(),
            h.levels(initial_spin)
        )));
    }
    let target = initial_spin.other();
    let tgt: Vec<usize> = (0..h.levels(target)).map(|m| h.index(target, m)).collect::<Result<_>>()?;
    detunings
        .par_iter()
        .map(|&d| {
            let u = pulse_propagator(h, &pulse.with_detuning(pulse.detuning + d))?;
            let mut p = 0.0;
            for (n, &w) in populations.iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                let col = h.index(initial_spin, n)?;
                p += w * tgt.iter().map(|&r| u[(r, col)].norm_sqr()).sum::<f64>();
            }
            Ok(p)
        })
        .collect()
}

/// Transfer spectrum of a Bloch-basis model averaged over quasimomentum,
/// with the initial manifold populated uniformly across the zone.
pub fn bloch_spectrum_scan(
    drives: &[DriveHamiltonian],
    initial_spin: SpinState,
    populations: &[f64],
    pulse: &Pulse,
    detunings: &[f64],
) -> Result<Vec<f64>> {
    if drives.is_empty() {
        return Err(Error::Config("no quasimomentum drives".into()));
    }
    // the reference line is taken from the zone-averaged level energies
    let mut sum = vec![0.0; detunings.len()];
    let mut mean = drives[0].clone();
    for (i, e) in mean.e0.iter_mut().enumerate() {
        *e = drives.iter().map(|d| d.e0[i]).sum::<f64>() / drives.len() as f64;
    }
    for (i, e) in mean.e1.iter_mut().enumerate() {
        *e = drives.iter().map(|d| d.e1[i]).sum::<f64>() / drives.len() as f64;
    }
    let f_ref = mean.drive_frequency(pulse)?;
    for d in drives {
        let local = Pulse {
            reference: Reference::Hyperfine,
            detuning: f_ref - d.offset,
            ..*pulse
        };
        let s = spectrum_scan(d, initial_spin, populations, &local, detunings)?;
        for (acc, v) in sum.iter_mut().zip(s) {
            *acc += v;
        }
    }
    Ok(sum.into_iter().map(|v| v / drives.len() as f64).collect())
}

/// Per-quasimomentum drive Hamiltonians of two band structures.
pub fn bloch_drives(sol0: &BandStructure, sol1: &BandStructure, offset: f64) -> Result<Vec<DriveHamiltonian>> {
    (0..sol0.quasimomenta.len()).map(|iq| DriveHamiltonian::from_bloch(sol0, sol1, iq, offset)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn two_level(m: f64) -> DriveHamiltonian {
        DriveHamiltonian::new(vec![0.0], vec![0.0], DMatrix::from_element(1, 1, Complex64::new(m, 0.0)), 0.0).unwrap()
    }

    #[test]
    fn gaussian_area_matches_quadrature() {
        let p = Pulse::gaussian_with_area(0.35, 1e-3).unwrap();
        assert_relative_eq!(p.area(), 0.35, max_relative = 1e-12);
        let span = p.envelope.span();
        let n = 20_000;
        let h = span / n as f64;
        // composite Simpson
        let s: f64 = (0..=n)
            .map(|i| {
                let w = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
                w * p.envelope.value(i as f64 * h)
            })
            .sum::<f64>()
            * h
            / 3.0;
        assert_relative_eq!(2.0 * p.bare_rabi * s, p.area(), max_relative = 1e-6);
        assert_relative_eq!(p.envelope.span(), 6e-3);
        assert!(Pulse::new(-1.0, Envelope::gaussian(1e-3)).is_err());
        assert!(Pulse::new(1.0, Envelope::Rectangular { duration: 0.0 }).is_err());
    }

    #[test]
    fn resonant_two_level_rabi() {
        let h = two_level(0.8);
        let pulse = Pulse::new(10e3, Envelope::Rectangular { duration: 1e-3 }).unwrap().resonant_with(0, 0);
        let times = uniform_times(1e-3, 101);
        let tr = rabi_trace(&h, (SpinState::S0, 0), &pulse, &times).unwrap();
        for (t, p) in times.iter().zip(tr.transfer()) {
            assert!((p - (PI * 8e3 * t).sin().powi(2)).abs() < 1e-6);
        }
        assert_eq!(tr.transfer()[0], 0.0);
    }

    #[test]
    fn detuned_two_level_generalized_rabi() {
        let h = two_level(1.0);
        let (omega, delta) = (5e3, 3e3);
        let pulse = Pulse::new(omega, Envelope::Rectangular { duration: 2e-3 }).unwrap().resonant_with(0, 0).with_detuning(delta);
        let times = uniform_times(2e-3, 57);
        let tr = rabi_trace(&h, (SpinState::S0, 0), &pulse, &times).unwrap();
        let gen = (omega * omega + delta * delta).sqrt();
        for (t, p) in times.iter().zip(tr.transfer()) {
            let want = omega * omega / (gen * gen) * (PI * gen * t).sin().powi(2);
            assert!((p - want).abs() < 1e-6, "{p} vs {want}");
        }
    }

    #[test]
    fn no_drive_no_transfer() {
        let h = two_level(1.0);
        let pulse = Pulse::new(0.0, Envelope::gaussian(1e-4)).unwrap();
        let tr = rabi_trace(&h, (SpinState::S0, 0), &pulse, &uniform_times(6e-4, 20)).unwrap();
        assert!(tr.transfer().iter().all(|p| *p == 0.0));
    }

    #[test]
    fn gaussian_pi_pulse_inverts() {
        let h = two_level(1.0);
        let pulse = Pulse::gaussian_with_area(1.0, 1e-3).unwrap().resonant_with(0, 0);
        let tr = rabi_trace(&h, (SpinState::S0, 0), &pulse, &[pulse.envelope.span()]).unwrap();
        // the ±3 fwhm truncation removes only ~1e-11 of the area
        assert!((tr.p1[0] - 1.0).abs() < 1e-6, "{}", tr.p1[0]);
    }

    #[test]
    fn rejects_bad_inputs() {
        let h = two_level(1.0);
        let pulse = Pulse::new(1e3, Envelope::Rectangular { duration: 1e-3 }).unwrap();
        let bad = CVector::from_vec(vec![Complex64::new(1.0, 0.0), Complex64::new(1.0, 0.0)]);
        assert!(matches!(evolve(&bad, &h, &pulse, &[0.0]), Err(Error::Domain(_))));
        let ok = h.basis_state(SpinState::S0, 0).unwrap();
        assert!(evolve(&ok, &h, &pulse, &[1e-3, 0.0]).is_err());
        assert!(h.basis_state(SpinState::S1, 3).is_err());
    }

    #[test]
    fn extracts_synthetic_frequency() {
        let f = 32e3;
        let times = uniform_times(200e-6, 400);
        let sig: Vec<f64> = times.iter().map(|t| (PI * f * t).sin().powi(2)).collect();
        let got = extract_rabi(&times, &sig).unwrap();
        assert!((got - f).abs() < 300.0, "{got}");
        // too short: 2 periods
        let short = uniform_times(62.5e-6, 200);
        let sig: Vec<f64> = short.iter().map(|t| (PI * f * t).sin().powi(2)).collect();
        assert!(matches!(extract_rabi(&short, &sig), Err(Error::Extraction(_))));
        let flat = vec![0.5; 400];
        assert!(matches!(extract_rabi(&times, &flat), Err(Error::Extraction(_))));
    }

    #[test]
    fn stronger_of_two_damped_tones_wins() {
        let times = uniform_times(1e-3, 1000);
        let sig: Vec<f64> = times
            .iter()
            .map(|t| {
                let d = (-t / 5e-4).exp();
                d * (0.6 * (TAU * 12e3 * t).cos() + 0.3 * (TAU * 31e3 * t).cos())
            })
            .collect();
        let got = extract_rabi(&times, &sig).unwrap();
        assert!((got - 12e3).abs() < 120.0, "{got}");
    }

    #[test]
    fn time_reversal_of_symmetric_pulse() {
        // real H and a symmetric envelope: evolving conj(ψ(T)) returns conj(ψ(0))
        let coupling = DMatrix::from_row_slice(2, 2, &[0.9, -0.3, 0.3, 0.8].map(|x| Complex64::new(x, 0.0)));
        let h = DriveHamiltonian::new(vec![0.0, 110e3], vec![0.0, 110e3], coupling, 0.0).unwrap();
        let pulse = Pulse::gaussian_with_area(2.3, 80e-6).unwrap().resonant_with(0, 1);
        let psi0 = h.basis_state(SpinState::S0, 0).unwrap();
        let span = pulse.envelope.span();
        let fwd = evolve(&psi0, &h, &pulse, &[span]).unwrap();
        let back = evolve(&fwd.states[0].map(|z| z.conj()), &h, &pulse, &[span]).unwrap();
        let fid = back.states[0].dotc(&psi0.map(|z| z.conj())).norm_sqr();
        assert!((fid - 1.0).abs() < 1e-6, "{fid}");
    }

    #[test]
    fn energy_conserved_under_constant_drive() {
        let coupling = DMatrix::from_row_slice(2, 2, &[0.9, -0.3, 0.3, 0.8].map(|x| Complex64::new(x, 0.0)));
        let h = DriveHamiltonian::new(vec![0.0, 50e3], vec![1e3, 52e3], coupling, 0.0).unwrap();
        let pulse = Pulse::new(20e3, Envelope::Rectangular { duration: 1e-3 }).unwrap().resonant_with(0, 0);
        let psi0 = h.basis_state(SpinState::S0, 0).unwrap();
        let times = uniform_times(1e-3, 50);
        let traj = evolve(&psi0, &h, &pulse, &times).unwrap();
        let hm = h.matrix(h.drive_frequency(&pulse).unwrap(), pulse.bare_rabi, 0.0);
        let e0 = psi0.dotc(&(&hm * &psi0)).re;
        for s in &traj.states {
            assert!((s.norm_squared() - 1.0).abs() < 1e-8);
            assert!((s.dotc(&(&hm * s)).re - e0).abs() < 1e-8 * 50e3);
        }
    }
}
