use std::path::PathBuf;

use mwlattice::SpinState;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Fully resolved run configuration. Every table is optional in the input
/// document and falls back to the defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub lattice: Lattice,
    pub field: Field,
    pub solver: Solver,
    pub pulse: PulseConfig,
    pub rabi: Rabi,
    pub spectrum: Spectrum,
    pub ensemble: Ensemble,
    pub inhom: Inhom,
    pub thermometry: Thermometry,
    pub cooling: Cooling,
    pub couplings: Couplings,
    pub walk: Walk,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<Sweep>,
    pub output: Output,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            lattice: Lattice::default(),
            field: Field::default(),
            solver: Solver::default(),
            pulse: PulseConfig::default(),
            rabi: Rabi::default(),
            spectrum: Spectrum::default(),
            ensemble: Ensemble::default(),
            inhom: Inhom::default(),
            thermometry: Thermometry::default(),
            cooling: Cooling::default(),
            couplings: Couplings::default(),
            walk: Walk::default(),
            sweep: None,
            output: Output::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Spin {
    S0,
    S1,
}

impl From<Spin> for SpinState {
    fn from(s: Spin) -> Self {
        match s {
            Spin::S0 => SpinState::S0,
            Spin::S1 => SpinState::S1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sign {
    Attractive,
    Repulsive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Lattice {
    pub wavelength_nm: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta_rad: Option<f64>,
    /// Alternative to `theta_rad`: the angle is solved for this Δx.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub displacement_nm: Option<f64>,
    #[serde(rename = "depth_plus_Er")]
    pub depth_plus_er: f64,
    pub depth_ratio: f64,
    pub weights: Weights,
    pub sign: Sign,
}

impl Default for Lattice {
    fn default() -> Self {
        Self {
            wavelength_nm: 865.9,
            theta_rad: None,
            displacement_nm: None,
            depth_plus_er: 832.6,
            depth_ratio: 1.0,
            weights: Weights::default(),
            sign: Sign::Attractive,
        }
    }
}

/// `[σ⁺, σ⁻]` weights per spin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Weights {
    pub s0: [f64; 2],
    pub s1: [f64; 2],
}

impl Default for Weights {
    fn default() -> Self {
        Self {
            s0: [0.125, 0.875],
            s1: [1.0, 0.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Field {
    #[serde(rename = "B_gauss")]
    pub b_gauss: f64,
}

impl Default for Field {
    fn default() -> Self {
        Self { b_gauss: 3.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Model {
    /// Localized states of one S0 well and its partner S1 well.
    Wells,
    /// Bloch bands on a quasimomentum grid.
    Bloch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Solver {
    pub model: Model,
    pub quasimomenta: usize,
    pub bands: usize,
    /// Levels per spin for the well model; absent keeps every bound level plus four.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub levels: Option<usize>,
    pub samples_per_x0: f64,
    /// Depth nodes interpolated across an inhomogeneous depth spread.
    pub depth_nodes: usize,
}

impl Default for Solver {
    fn default() -> Self {
        Self {
            model: Model::Wells,
            quasimomenta: 16,
            bands: 6,
            levels: None,
            samples_per_x0: 12.0,
            depth_nodes: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Rectangular,
    Gaussian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PulseConfig {
    #[serde(rename = "rabi_kHz")]
    pub rabi_khz: f64,
    pub shape: Shape,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub duration_us: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fwhm_us: Option<f64>,
    /// Bare pulse area in units of π; overrides `rabi_kHz`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub area_pi: Option<f64>,
    #[serde(rename = "detuning_kHz")]
    pub detuning_khz: f64,
    pub phase_rad: f64,
}

impl Default for PulseConfig {
    fn default() -> Self {
        Self {
            rabi_khz: 10.0,
            shape: Shape::Rectangular,
            duration_us: None,
            fwhm_us: None,
            area_pi: None,
            detuning_khz: 0.0,
            phase_rad: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Rabi {
    pub initial_spin: Spin,
    pub initial_level: usize,
    /// `[n, nprime]`: drive resonant with |0,n⟩ ↔ |1,n′⟩; absent drives the hyperfine frequency.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub line: Option<[usize; 2]>,
    pub t_max_us: f64,
    pub points: usize,
}

impl Default for Rabi {
    fn default() -> Self {
        Self {
            initial_spin: Spin::S1,
            initial_level: 0,
            line: None,
            t_max_us: 200.0,
            points: 2001,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Spectrum {
    pub initial_spin: Spin,
    pub windows: Vec<Window>,
}

impl Default for Spectrum {
    fn default() -> Self {
        Self {
            initial_spin: Spin::S1,
            windows: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Window {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub line: Option<[usize; 2]>,
    /// Window centre relative to the field-shifted hyperfine frequency.
    #[serde(rename = "center_kHz", default, skip_serializing_if = "Option::is_none")]
    pub center_khz: Option<f64>,
    #[serde(rename = "half_width_kHz")]
    pub half_width_khz: f64,
    pub points: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub area_pi: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Ensemble {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nbar: Option<f64>,
    #[serde(rename = "T_uK", skip_serializing_if = "Option::is_none")]
    pub t_uk: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Inhom {
    #[serde(rename = "sigma_U_frac")]
    pub sigma_u_frac: f64,
    #[serde(rename = "sigma_B_gauss")]
    pub sigma_b_gauss: f64,
    pub samples: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub radial: Option<Radial>,
}

impl Default for Inhom {
    fn default() -> Self {
        Self {
            sigma_u_frac: 0.0,
            sigma_b_gauss: 0.0,
            samples: 64,
            radial: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Radial {
    #[serde(rename = "T_uK")]
    pub t_uk: f64,
    #[serde(rename = "omega_kHz")]
    pub omega_khz: f64,
    pub waist_um: f64,
    /// Overrides `inhom.samples` when given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Sideband,
    Beat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Thermometry {
    pub method: Method,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
    pub initial_spin: Spin,
    #[serde(rename = "half_window_kHz")]
    pub half_window_khz: f64,
    /// Carrier levels fitted by the beat method.
    pub levels: usize,
}

impl Default for Thermometry {
    fn default() -> Self {
        Self {
            method: Method::Sideband,
            input: None,
            initial_spin: Spin::S1,
            half_window_khz: 30.0,
            levels: 6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Cooling {
    #[serde(rename = "rabi_kHz")]
    pub rabi_khz: f64,
    #[serde(rename = "detuning_kHz")]
    pub detuning_khz: f64,
    pub repump_rate_per_s: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub optical_eta: Option<f64>,
    pub duration_ms: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub levels: Option<usize>,
    pub samples: usize,
}

impl Default for Cooling {
    fn default() -> Self {
        Self {
            rabi_khz: 5.0,
            detuning_khz: 0.0,
            repump_rate_per_s: 7e4,
            optical_eta: None,
            duration_ms: 20.0,
            levels: None,
            samples: 201,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Couplings {
    /// Levels per spin reported in the table.
    pub levels: usize,
    /// `start:stop:steps` in radians.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta_scan: Option<String>,
}

impl Default for Couplings {
    fn default() -> Self {
        Self {
            levels: 3,
            theta_scan: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Walk {
    /// Run length in single-well Rabi periods 1/(Ω₀|M|); `t_max_us` overrides it.
    pub periods: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_max_us: Option<f64>,
    pub points: usize,
    pub min_sites: usize,
}

impl Default for Walk {
    fn default() -> Self {
        Self {
            periods: 5.0,
            t_max_us: None,
            points: 501,
            min_sites: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    /// Dotted path of a numeric leaf, e.g. `lattice.theta_rad`.
    pub path: String,
    pub start: f64,
    pub stop: f64,
    pub steps: usize,
    pub command: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Output {
    pub dir: PathBuf,
}

impl Default for Output {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

/// `start:stop:steps`.
pub fn parse_scan(s: &str) -> Result<(f64, f64, usize), CliError> {
    let parts: Vec<&str> = s.split(':').collect();
    let bad = || CliError::Schema(format!("scan `{s}` is not start:stop:steps"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let start: f64 = parts[0].trim().parse().map_err(|_| bad())?;
    let stop: f64 = parts[1].trim().parse().map_err(|_| bad())?;
    let steps: usize = parts[2].trim().parse().map_err(|_| bad())?;
    if steps == 0 || !start.is_finite() || !stop.is_finite() {
        return Err(bad());
    }
    Ok((start, stop, steps))
}

/// `steps` evenly spaced values from `start` to `stop`; a single step is `start`.
pub fn grid(start: f64, stop: f64, steps: usize) -> Vec<f64> {
    if steps <= 1 {
        return vec![start];
    }
    (0..steps).map(|i| start + (stop - start) * i as f64 / (steps - 1) as f64).collect()
}

fn positive(name: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(CliError::Schema(format!("{name} must be positive and finite, got {v}")))
    }
}

fn non_negative(name: &str, v: f64) -> Result<(), CliError> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(CliError::Schema(format!("{name} must be non-negative and finite, got {v}")))
    }
}

impl RunConfig {
    /// Parse one TOML document; unknown keys and type mismatches are schema errors.
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Schema(e.message().to_string()))?;
        Ok(cfg)
    }

    pub fn from_value(v: toml::Value) -> Result<Self, CliError> {
        v.try_into().map_err(|e: toml::de::Error| CliError::Schema(e.message().to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// Cross-field checks the type system cannot express.
    pub fn validate(&self) -> Result<(), CliError> {
        let l = &self.lattice;
        if l.theta_rad.is_some() && l.displacement_nm.is_some() {
            return Err(CliError::Schema("lattice.theta_rad and lattice.displacement_nm are exclusive".into()));
        }
        positive("lattice.wavelength_nm", l.wavelength_nm)?;
        positive("lattice.depth_plus_Er", l.depth_plus_er)?;
        positive("lattice.depth_ratio", l.depth_ratio)?;
        if let Some(t) = l.theta_rad {
            if !(0.0..=std::f64::consts::FRAC_PI_2 + 1e-12).contains(&t) {
                return Err(CliError::Schema(format!("lattice.theta_rad {t} outside [0, π/2]")));
            }
        }
        if let Some(d) = l.displacement_nm {
            non_negative("lattice.displacement_nm", d)?;
        }
        if !self.field.b_gauss.is_finite() {
            return Err(CliError::Schema("field.B_gauss must be finite".into()));
        }
        let s = &self.solver;
        if s.quasimomenta == 0 || s.bands == 0 || s.levels == Some(0) {
            return Err(CliError::Schema("solver counts must be at least 1".into()));
        }
        if s.depth_nodes < 2 {
            return Err(CliError::Schema("solver.depth_nodes must be at least 2".into()));
        }
        positive("solver.samples_per_x0", s.samples_per_x0)?;
        let p = &self.pulse;
        non_negative("pulse.rabi_kHz", p.rabi_khz)?;
        if let Some(d) = p.duration_us {
            positive("pulse.duration_us", d)?;
        }
        if let Some(f) = p.fwhm_us {
            positive("pulse.fwhm_us", f)?;
        }
        if let Some(a) = p.area_pi {
            non_negative("pulse.area_pi", a)?;
        }
        if p.shape == Shape::Gaussian && p.fwhm_us.is_none() {
            return Err(CliError::Schema("pulse.shape = \"gaussian\" needs pulse.fwhm_us".into()));
        }
        if !p.detuning_khz.is_finite() || !p.phase_rad.is_finite() {
            return Err(CliError::Schema("pulse detuning and phase must be finite".into()));
        }
        positive("rabi.t_max_us", self.rabi.t_max_us)?;
        if self.rabi.points < 2 {
            return Err(CliError::Schema("rabi.points must be at least 2".into()));
        }
        for (i, w) in self.spectrum.windows.iter().enumerate() {
            if w.line.is_some() == w.center_khz.is_some() {
                return Err(CliError::Schema(format!("spectrum.windows[{i}] needs exactly one of line and center_kHz")));
            }
            positive("spectrum.windows.half_width_kHz", w.half_width_khz)?;
            if w.points < 3 {
                return Err(CliError::Schema(format!("spectrum.windows[{i}].points must be at least 3")));
            }
            if let Some(a) = w.area_pi {
                non_negative("spectrum.windows.area_pi", a)?;
            }
        }
        match (self.ensemble.nbar, self.ensemble.t_uk) {
            (Some(_), Some(_)) => {
                return Err(CliError::Schema("ensemble.nbar and ensemble.T_uK are exclusive".into()));
            }
            (Some(n), None) => non_negative("ensemble.nbar", n)?,
            (None, Some(t)) => non_negative("ensemble.T_uK", t)?,
            (None, None) => {}
        }
        let h = &self.inhom;
        non_negative("inhom.sigma_U_frac", h.sigma_u_frac)?;
        non_negative("inhom.sigma_B_gauss", h.sigma_b_gauss)?;
        if h.samples == 0 || h.radial.as_ref().is_some_and(|r| r.samples == Some(0)) {
            return Err(CliError::Schema("inhom sample counts must be at least 1".into()));
        }
        if let Some(r) = &h.radial {
            non_negative("inhom.radial.T_uK", r.t_uk)?;
            positive("inhom.radial.omega_kHz", r.omega_khz)?;
            positive("inhom.radial.waist_um", r.waist_um)?;
        }
        positive("thermometry.half_window_kHz", self.thermometry.half_window_khz)?;
        if self.thermometry.levels == 0 {
            return Err(CliError::Schema("thermometry.levels must be at least 1".into()));
        }
        let c = &self.cooling;
        non_negative("cooling.rabi_kHz", c.rabi_khz)?;
        positive("cooling.repump_rate_per_s", c.repump_rate_per_s)?;
        positive("cooling.duration_ms", c.duration_ms)?;
        if c.levels.is_some_and(|l| l < 2) || c.samples < 2 || !c.detuning_khz.is_finite() {
            return Err(CliError::Schema("cooling needs levels ≥ 2, samples ≥ 2 and a finite detuning".into()));
        }
        if let Some(e) = c.optical_eta {
            non_negative("cooling.optical_eta", e)?;
        }
        if self.couplings.levels == 0 {
            return Err(CliError::Schema("couplings.levels must be at least 1".into()));
        }
        if let Some(scan) = &self.couplings.theta_scan {
            parse_scan(scan)?;
            if l.displacement_nm.is_some() {
                return Err(CliError::Schema("couplings.theta_scan conflicts with lattice.displacement_nm".into()));
            }
        }
        let w = &self.walk;
        positive("walk.periods", w.periods)?;
        if let Some(t) = w.t_max_us {
            positive("walk.t_max_us", t)?;
        }
        if w.points < 3 || w.min_sites == 0 {
            return Err(CliError::Schema("walk needs points ≥ 3 and min_sites ≥ 1".into()));
        }
        if let Some(sw) = &self.sweep {
            if sw.steps == 0 || !sw.start.is_finite() || !sw.stop.is_finite() {
                return Err(CliError::Schema("sweep needs steps ≥ 1 and finite bounds".into()));
            }
        }
        Ok(())
    }
}

/// Recursively overlay `top` onto `base`.
pub fn merge(base: &mut toml::Value, top: toml::Value) {
    match (base, top) {
        (toml::Value::Table(b), toml::Value::Table(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(existing) if existing.is_table() && v.is_table() => merge(existing, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, t) => *b = t,
    }
}

/// Set the numeric leaf at dotted `path`. Missing optional leaves are created
/// inside existing tables; the schema check happens on re-parsing.
pub fn set_path(root: &mut toml::Value, path: &str, value: f64) -> Result<(), CliError> {
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(CliError::Schema(format!("sweep path `{path}` is malformed")));
    }
    let (leaf, parents) = keys.split_last().unwrap();
    let mut node = root;
    for k in parents {
        node = node
            .as_table_mut()
            .and_then(|t| t.get_mut(*k))
            .ok_or_else(|| CliError::Schema(format!("sweep path `{path}`: no table `{k}`")))?;
    }
    let table =
        node.as_table_mut().ok_or_else(|| CliError::Schema(format!("sweep path `{path}` does not end in a table")))?;
    let new = match table.get(*leaf) {
        Some(toml::Value::Integer(_)) => {
            if value.fract() != 0.0 {
                return Err(CliError::Schema(format!("sweep path `{path}` is an integer; {value} is not")));
            }
            toml::Value::Integer(value as i64)
        }
        Some(toml::Value::Float(_)) | None => toml::Value::Float(value),
        Some(_) => return Err(CliError::Schema(format!("sweep path `{path}` is not numeric"))),
    };
    table.insert(leaf.to_string(), new);
    Ok(())
}
