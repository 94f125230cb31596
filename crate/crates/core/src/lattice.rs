//! Physical constants, state-dependent lattice potentials and the
//! spin-dependent displacement between the two lattices.
//!
//! Two counterpropagating beams with linear polarizations at an angle
//! `theta` form a σ⁺ and a σ⁻ standing wave which move in opposite directions
//! as `theta` grows. Each hyperfine state samples the two standing waves with
//! its own pair of weights, so the two spin states see lattices that are
//! offset by a controllable distance.
//!
//! All stored frequencies are ordinary frequencies in Hz; energies are in
//! joules.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Planck constant, J s.
pub const PLANCK: f64 = 6.626_070_15e-34;
/// Reduced Planck constant, J s.
pub const HBAR: f64 = PLANCK / (2.0 * PI);
/// Boltzmann constant, J/K.
pub const BOLTZMANN: f64 = 1.380_649e-23;
/// Bohr magneton, J/T.
pub const BOHR_MAGNETON: f64 = 9.274_010_078_3e-24;
/// Atomic mass unit, kg.
pub const ATOMIC_MASS_UNIT: f64 = 1.660_539_066_60e-27;
/// Tesla per gauss.
pub const GAUSS: f64 = 1e-4;

/// Cesium-133 ground-state constants.
pub mod cesium {
    use super::ATOMIC_MASS_UNIT;

    pub const MASS: f64 = 132.905_451_933 * ATOMIC_MASS_UNIT;
    /// Ground-state hyperfine splitting, Hz (SI second definition).
    pub const HYPERFINE_SPLITTING: f64 = 9_192_631_770.0;
    /// Electron g-factor of 6S1/2.
    pub const G_J: f64 = 2.002_540_32;
    /// Nuclear g-factor, sign convention H = μ_B (g_J J + g_I I)·B.
    pub const G_I: f64 = -0.000_398_853_95;
    /// Nuclear spin.
    pub const NUCLEAR_SPIN: f64 = 3.5;
    /// D2 line wavelength, m.
    pub const D2_WAVELENGTH: f64 = 852.347_275_82e-9;
}

/// Landé factor of a hyperfine level of an S1/2 ground state.
pub fn hyperfine_g_factor(f: f64, g_j: f64, g_i: f64, nuclear_spin: f64) -> f64 {
    let j = 0.5;
    let ff = f * (f + 1.0);
    let ii = nuclear_spin * (nuclear_spin + 1.0);
    let jj = j * (j + 1.0);
    g_j * (ff - ii + jj) / (2.0 * ff) + g_i * (ff + ii - jj) / (2.0 * ff)
}

/// Species and lattice-laser constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalParams {
    pub atom_mass: f64,
    pub lattice_wavelength: f64,
    pub hyperfine_splitting: f64,
    /// Linear Zeeman slope of the |0⟩↔|1⟩ transition, Hz/T.
    pub zeeman_slope: f64,
}

impl PhysicalParams {
    pub fn new(
        atom_mass: f64,
        lattice_wavelength: f64,
        hyperfine_splitting: f64,
        zeeman_slope: f64,
    ) -> Result<Self> {
        for (name, v) in [
            ("atom_mass", atom_mass),
            ("lattice_wavelength", lattice_wavelength),
            ("hyperfine_splitting", hyperfine_splitting),
            ("zeeman_slope", zeeman_slope),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Domain(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(Self {
            atom_mass,
            lattice_wavelength,
            hyperfine_splitting,
            zeeman_slope,
        })
    }

    /// Cesium clock-pair constants for a lattice at `wavelength` (m).
    pub fn cesium(wavelength: f64) -> Result<Self> {
        let g4 = hyperfine_g_factor(4.0, cesium::G_J, cesium::G_I, cesium::NUCLEAR_SPIN);
        let g3 = hyperfine_g_factor(3.0, cesium::G_J, cesium::G_I, cesium::NUCLEAR_SPIN);
        let slope = (4.0 * g4 - 3.0 * g3) * BOHR_MAGNETON / PLANCK;
        Self::new(cesium::MASS, wavelength, cesium::HYPERFINE_SPLITTING, slope)
    }

    pub fn wavenumber(&self) -> f64 {
        2.0 * PI / self.lattice_wavelength
    }

    pub fn lattice_spacing(&self) -> f64 {
        self.lattice_wavelength / 2.0
    }

    pub fn recoil_energy(&self) -> f64 {
        let p = HBAR * self.wavenumber();
        p * p / (2.0 * self.atom_mass)
    }

    /// Recoil energy in Hz.
    pub fn recoil_frequency(&self) -> f64 {
        self.recoil_energy() / PLANCK
    }
}

/// `(ħ·2π/λ)² / 2m`.
pub fn recoil_energy(wavelength: f64, mass: f64) -> Result<f64> {
    if !(wavelength > 0.0 && mass > 0.0) {
        return Err(Error::Domain(format!(
            "recoil energy needs positive wavelength and mass, got {wavelength}, {mass}"
        )));
    }
    let p = HBAR * 2.0 * PI / wavelength;
    Ok(p * p / (2.0 * mass))
}

/// The two hyperfine clock states: `S0` = |F=3, m_F=3⟩, `S1` = |F=4, m_F=4⟩.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SpinState {
    S0,
    S1,
}

impl SpinState {
    pub const ALL: [SpinState; 2] = [SpinState::S0, SpinState::S1];

    pub fn other(self) -> Self {
        match self {
            SpinState::S0 => SpinState::S1,
            SpinState::S1 => SpinState::S0,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            SpinState::S0 => "S0",
            SpinState::S1 => "S1",
        }
    }
}

/// Red-detuned lattices trap at intensity maxima, blue-detuned at minima.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PotentialSign {
    Attractive,
    Repulsive,
}

impl PotentialSign {
    fn factor(self) -> f64 {
        match self {
            PotentialSign::Attractive => -1.0,
            PotentialSign::Repulsive => 1.0,
        }
    }
}

/// σ⁺/σ⁻ intensity weights of one spin state, normalized to one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CircularWeights {
    pub plus: f64,
    pub minus: f64,
}

impl CircularWeights {
    pub fn new(plus: f64, minus: f64) -> Result<Self> {
        if !(plus >= 0.0 && minus >= 0.0) || (plus + minus - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "σ± weights must be non-negative and sum to 1, got ({plus}, {minus})"
            )));
        }
        Ok(Self { plus, minus })
    }

    pub fn swapped(self) -> Self {
        Self {
            plus: self.minus,
            minus: self.plus,
        }
    }
}

/// Weights for both spin states.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpinWeights {
    pub s0: CircularWeights,
    pub s1: CircularWeights,
}

impl SpinWeights {
    /// Cesium near 866 nm: the stretched F=4 state sees only σ⁺; F=3, m=3
    /// sees (1 − g_F m_F, 1 + g_F m_F)/2 with g_F m_F = −3/4.
    pub fn cesium() -> Self {
        Self {
            s0: CircularWeights {
                plus: 0.125,
                minus: 0.875,
            },
            s1: CircularWeights {
                plus: 1.0,
                minus: 0.0,
            },
        }
    }

    /// Each spin couples to one circular component only.
    pub fn pure() -> Self {
        Self {
            s0: CircularWeights {
                plus: 0.0,
                minus: 1.0,
            },
            s1: CircularWeights {
                plus: 1.0,
                minus: 0.0,
            },
        }
    }

    pub fn get(&self, s: SpinState) -> CircularWeights {
        match s {
            SpinState::S0 => self.s0,
            SpinState::S1 => self.s1,
        }
    }

    pub fn swapped(self) -> Self {
        Self {
            s0: self.s1,
            s1: self.s0,
        }
    }
}

/// Geometry and depths defining both spin-dependent potentials.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatticeConfig {
    pub params: PhysicalParams,
    /// Polarization angle, rad, in [0, π/2].
    pub theta: f64,
    /// Peak depth of the σ⁺ standing wave, J.
    pub depth_plus: f64,
    /// Overall |1⟩-to-|0⟩ depth scaling.
    pub depth_ratio: f64,
    pub weights: SpinWeights,
    pub sign: PotentialSign,
}

/// Fourier form of a potential, `U(z) = offset + c·e^{2ikz} + c*·e^{−2ikz}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PotentialHarmonics {
    pub offset: f64,
    pub first: Complex64,
}

impl PotentialHarmonics {
    pub fn maximum(&self) -> f64 {
        self.offset + 2.0 * self.first.norm()
    }

    pub fn minimum(&self) -> f64 {
        self.offset - 2.0 * self.first.norm()
    }
}

impl LatticeConfig {
    pub fn new(
        params: PhysicalParams,
        theta: f64,
        depth_plus: f64,
        depth_ratio: f64,
        weights: SpinWeights,
        sign: PotentialSign,
    ) -> Result<Self> {
        let cfg = Self {
            params,
            theta,
            depth_plus,
            depth_ratio,
            weights,
            sign,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=PI / 2.0 + 1e-12).contains(&self.theta) {
            return Err(Error::Config(format!(
                "theta must lie in [0, π/2], got {}",
                self.theta
            )));
        }
        if !(self.depth_plus > 0.0 && self.depth_plus.is_finite()) {
            return Err(Error::Config(format!(
                "depth_plus must be positive, got {}",
                self.depth_plus
            )));
        }
        if !(self.depth_ratio > 0.0 && self.depth_ratio.is_finite()) {
            return Err(Error::Config(format!(
                "depth_ratio must be positive, got {}",
                self.depth_ratio
            )));
        }
        for s in SpinState::ALL {
            let w = self.weights.get(s);
            CircularWeights::new(w.plus, w.minus)?;
        }
        Ok(())
    }

    pub fn with_theta(&self, theta: f64) -> Result<Self> {
        let mut c = *self;
        c.theta = theta;
        c.validate()?;
        Ok(c)
    }

    pub fn with_depth(&self, depth_plus: f64) -> Result<Self> {
        let mut c = *self;
        c.depth_plus = depth_plus;
        c.validate()?;
        Ok(c)
    }

    pub fn depth_scale(&self, s: SpinState) -> f64 {
        match s {
            SpinState::S0 => 1.0,
            SpinState::S1 => self.depth_ratio,
        }
    }

    pub fn harmonics(&self, s: SpinState) -> PotentialHarmonics {
        let w = self.weights.get(s);
        let amp = self.sign.factor() * self.depth_plus * self.depth_scale(s);
        let half = self.theta;
        let first = Complex64::from_polar(w.plus, -half) + Complex64::from_polar(w.minus, half);
        PotentialHarmonics {
            offset: amp * (w.plus + w.minus) / 2.0,
            first: first * (amp / 4.0),
        }
    }
}

/// `U_s(z)` in joules.
pub fn state_potential(z: f64, s: SpinState, cfg: &LatticeConfig) -> f64 {
    let k = cfg.params.wavenumber();
    let w = cfg.weights.get(s);
    let half = cfg.theta / 2.0;
    let plus = (k * z - half).cos();
    let minus = (k * z + half).cos();
    cfg.sign.factor()
        * cfg.depth_plus
        * cfg.depth_scale(s)
        * (w.plus * plus * plus + w.minus * minus * minus)
}

/// Tolerances for locating potential minima.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinimumSearch {
    pub grid_points: usize,
    /// Bracket width at which refinement stops, in units of the lattice spacing.
    pub tolerance: f64,
    /// Smallest accepted curvature at the minimum, in units of `U⁺ k²`.
    pub curvature_floor: f64,
}

impl Default for MinimumSearch {
    fn default() -> Self {
        Self {
            grid_points: 1024,
            tolerance: 1e-10,
            curvature_floor: 1e-6,
        }
    }
}

/// A lattice-site minimum of one spin potential.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WellMinimum {
    /// Position within [0, a_lat), m.
    pub position: f64,
    pub value: f64,
    /// Second derivative of the potential at the minimum, J/m².
    pub curvature: f64,
}

/// Locate the potential minimum of spin `s` inside one lattice period by a
/// dense scan followed by golden-section refinement.
pub fn potential_minimum(cfg: &LatticeConfig, s: SpinState, search: &MinimumSearch) -> Result<WellMinimum> {
    let a = cfg.params.lattice_spacing();
    let k = cfg.params.wavenumber();
    let n = search.grid_points.max(16);
    let dz = a / n as f64;
    let u = |z: f64| state_potential(z, s, cfg);

    let (imin, _) = (0..n)
        .map(|i| (i, u(i as f64 * dz)))
        .fold((0usize, f64::INFINITY), |acc, (i, v)| if v < acc.1 { (i, v) } else { acc });

    // golden section on [z-dz, z+dz]
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut lo = (imin as f64 - 1.0) * dz;
    let mut hi = (imin as f64 + 1.0) * dz;
    let mut c = hi - inv_phi * (hi - lo);
    let mut d = lo + inv_phi * (hi - lo);
    let (mut fc, mut fd) = (u(c), u(d));
    while (hi - lo) > search.tolerance * a {
        if fc < fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - inv_phi * (hi - lo);
            fc = u(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + inv_phi * (hi - lo);
            fd = u(d);
        }
    }
    let z = 0.5 * (lo + hi);
    let h = 1e-4 * a;
    let curvature = (u(z + h) - 2.0 * u(z) + u(z - h)) / (h * h);
    let floor = search.curvature_floor * cfg.depth_plus * k * k;
    if !(curvature > floor) {
        return Err(Error::UndefinedDisplacement(format!(
            "potential of {} is flat: curvature {curvature:.3e} J/m² below floor {floor:.3e}",
            s.label()
        )));
    }
    Ok(WellMinimum {
        position: z.rem_euclid(a),
        value: u(z),
        curvature,
    })
}

/// Signed offset between the nearest minima of the S1 and S0 potentials,
/// `z_min(S1) − z_min(S0)`, wrapped to (−a_lat/2, a_lat/2]. Swapping the two
/// spin weights flips the sign; at the maximal offset the value is `+a_lat/2`.
pub fn displacement(cfg: &LatticeConfig) -> Result<f64> {
    displacement_with(cfg, &MinimumSearch::default())
}

pub fn displacement_with(cfg: &LatticeConfig, search: &MinimumSearch) -> Result<f64> {
    let a = cfg.params.lattice_spacing();
    let z0 = potential_minimum(cfg, SpinState::S0, search)?.position;
    let z1 = potential_minimum(cfg, SpinState::S1, search)?.position;
    let mut d = (z1 - z0).rem_euclid(a);
    if d > a / 2.0 {
        d -= a;
    }
    let snap = 4.0 * search.tolerance.max(1e-12) * a;
    if (d.abs() - a / 2.0).abs() <= snap {
        d = a / 2.0;
    }
    if d.abs() <= snap {
        d = 0.0;
    }
    Ok(d)
}

/// Polarization angle in [0, π/2] at which |Δx| equals `target` (m), by
/// bisection on the monotone displacement curve.
pub fn theta_for_displacement(cfg: &LatticeConfig, target: f64) -> Result<f64> {
    let end = displacement(&cfg.with_theta(PI / 2.0)?)?.abs();
    if !(target >= 0.0) || target > end * (1.0 + 1e-12) {
        return Err(Error::Range(format!(
            "displacement {target:e} m outside the reachable range [0, {end:e}] m"
        )));
    }
    let (mut lo, mut hi) = (0.0, PI / 2.0);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if displacement(&cfg.with_theta(mid)?)?.abs() < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Harmonic frequency (Hz) at the bottom of a pure cos² well of depth `depth` (J).
pub fn depth_to_frequency(depth: f64, params: &PhysicalParams) -> f64 {
    let er = params.recoil_energy();
    2.0 * (depth.max(0.0) / er).sqrt() * er / PLANCK
}

/// Depth (J) whose harmonic frequency is `frequency` (Hz).
pub fn frequency_to_depth(frequency: f64, params: &PhysicalParams) -> f64 {
    let er = params.recoil_energy();
    let x = frequency * PLANCK / (2.0 * er);
    x * x * er
}

/// Window inside which the linear Zeeman model is accepted.
pub const DEFAULT_ZEEMAN_WINDOW: f64 = 1e-3;

/// Linear Zeeman shift (Hz) of the clock transition at field `b` (T).
pub fn zeeman_shift(b: f64, params: &PhysicalParams) -> Result<f64> {
    zeeman_shift_within(b, params, DEFAULT_ZEEMAN_WINDOW)
}

pub fn zeeman_shift_within(b: f64, params: &PhysicalParams, window: f64) -> Result<f64> {
    if !(b.abs() <= window) {
        return Err(Error::Range(format!(
            "field {b:.3e} T outside the linear Zeeman window ±{window:.1e} T"
        )));
    }
    Ok(params.zeeman_slope * b)
}

/// Axial and radial trap data for a single tube of a 1D lattice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrapSpec {
    pub axial_frequency: f64,
    pub radial_frequency: f64,
    pub beam_waist: f64,
    pub depth: f64,
}

impl TrapSpec {
    pub fn new(axial_frequency: f64, radial_frequency: f64, beam_waist: f64, depth: f64) -> Result<Self> {
        for (name, v) in [
            ("axial_frequency", axial_frequency),
            ("radial_frequency", radial_frequency),
            ("beam_waist", beam_waist),
            ("depth", depth),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Domain(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(Self {
            axial_frequency,
            radial_frequency,
            beam_waist,
            depth,
        })
    }

    /// Check that the trap holds at least one bound level.
    pub fn require_bound(&self) -> Result<()> {
        if self.depth / (PLANCK * self.axial_frequency) > 1.0 {
            Ok(())
        } else {
            Err(Error::Domain(format!(
                "depth {:.3e} J holds no bound level at {} Hz",
                self.depth, self.axial_frequency
            )))
        }
    }
}

/// Energy conversions.
pub mod units {
    use super::{BOLTZMANN, PLANCK};

    pub fn joule_to_hz(e: f64) -> f64 {
        e / PLANCK
    }
    pub fn hz_to_joule(f: f64) -> f64 {
        f * PLANCK
    }
    pub fn joule_to_microkelvin(e: f64) -> f64 {
        e / BOLTZMANN * 1e6
    }
    pub fn microkelvin_to_joule(t: f64) -> f64 {
        t * 1e-6 * BOLTZMANN
    }
    pub fn hz_to_microkelvin(f: f64) -> f64 {
        joule_to_microkelvin(hz_to_joule(f))
    }
    pub fn microkelvin_to_hz(t: f64) -> f64 {
        joule_to_hz(microkelvin_to_joule(t))
    }
}
