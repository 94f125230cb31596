//! Conversions from the configuration document to library objects.

use mwlattice::bands::BlochBasisSpec;
use mwlattice::coupling::WellPairOptions;
use mwlattice::dynamics::{Envelope, Pulse};
use mwlattice::ensembles::{InhomogeneityModel, RadialModel, ThermalEnsemble};
use mwlattice::lattice::{
    theta_for_displacement, zeeman_shift, CircularWeights, LatticeConfig, PhysicalParams, PotentialSign, SpinWeights,
    GAUSS,
};

use crate::config::{PulseConfig, RunConfig, Shape, Sign};
use crate::error::CliError;

pub fn physical(cfg: &RunConfig) -> Result<PhysicalParams, CliError> {
    Ok(PhysicalParams::cesium(cfg.lattice.wavelength_nm * 1e-9)?)
}

pub fn lattice(cfg: &RunConfig) -> Result<LatticeConfig, CliError> {
    let l = &cfg.lattice;
    let p = physical(cfg)?;
    let weights = SpinWeights {
        s0: CircularWeights::new(l.weights.s0[0], l.weights.s0[1])?,
        s1: CircularWeights::new(l.weights.s1[0], l.weights.s1[1])?,
    };
    let sign = match l.sign {
        Sign::Attractive => PotentialSign::Attractive,
        Sign::Repulsive => PotentialSign::Repulsive,
    };
    let base = LatticeConfig::new(p, l.theta_rad.unwrap_or(0.0), l.depth_plus_er * p.recoil_energy(), l.depth_ratio, weights, sign)?;
    match l.displacement_nm {
        Some(dx) if dx > 0.0 => Ok(base.with_theta(theta_for_displacement(&base, dx * 1e-9)?)?),
        _ => Ok(base),
    }
}

/// Field shift of the clock transition, Hz.
pub fn offset(cfg: &RunConfig) -> Result<f64, CliError> {
    Ok(zeeman_shift(cfg.field.b_gauss * GAUSS, &physical(cfg)?)?)
}

/// Depth of the deeper spin lattice in recoils.
pub fn deepest_er(lat: &LatticeConfig) -> f64 {
    lat.depth_plus * lat.depth_ratio.max(1.0) / lat.params.recoil_energy()
}

pub fn bloch_basis(cfg: &RunConfig, lat: &LatticeConfig) -> Result<BlochBasisSpec, CliError> {
    Ok(BlochBasisSpec::for_depth(deepest_er(lat), cfg.solver.quasimomenta, cfg.solver.bands)?)
}

pub fn well_options(cfg: &RunConfig) -> WellPairOptions {
    WellPairOptions {
        levels: cfg.solver.levels,
        samples_per_x0: cfg.solver.samples_per_x0,
        ..WellPairOptions::default()
    }
}

/// Pulse from `[pulse]`; rectangular pulses without a duration last `default_duration` s.
pub fn pulse(p: &PulseConfig, area_pi: Option<f64>, default_duration: Option<f64>) -> Result<Pulse, CliError> {
    let envelope = match p.shape {
        Shape::Rectangular => {
            let d = p.duration_us.map(|d| d * 1e-6).or(default_duration).ok_or_else(|| {
                CliError::Schema("a rectangular pulse needs pulse.duration_us".into())
            })?;
            Envelope::Rectangular { duration: d }
        }
        Shape::Gaussian => Envelope::gaussian(p.fwhm_us.unwrap_or(0.0) * 1e-6),
    };
    let mut out = Pulse::new(p.rabi_khz * 1e3, envelope)?;
    if let Some(a) = area_pi.or(p.area_pi) {
        out.bare_rabi = a / (2.0 * envelope.integral());
    }
    out.detuning = p.detuning_khz * 1e3;
    out.phase = p.phase_rad;
    Ok(out)
}

pub fn inhomogeneity(cfg: &RunConfig) -> InhomogeneityModel {
    let h = &cfg.inhom;
    InhomogeneityModel {
        sigma_depth: h.sigma_u_frac,
        sigma_field: h.sigma_b_gauss * GAUSS,
        radial: h.radial.as_ref().map(|r| RadialModel {
            temperature: r.t_uk * 1e-6,
            frequency: r.omega_khz * 1e3,
            waist: r.waist_um * 1e-6,
        }),
        samples: h.radial.as_ref().and_then(|r| r.samples).unwrap_or(h.samples),
        seed: cfg.seed,
    }
}

/// Thermal ensemble of `[ensemble]` at trap frequency `axial` (Hz); the
/// ground state if neither n̄ nor T is given.
pub fn ensemble(cfg: &RunConfig, axial: f64) -> Result<ThermalEnsemble, CliError> {
    let e = &cfg.ensemble;
    Ok(match (e.nbar, e.t_uk) {
        (_, Some(t)) => ThermalEnsemble::from_temperature(t * 1e-6, axial)?,
        (n, None) => ThermalEnsemble::from_nbar(n.unwrap_or(0.0), axial)?,
    })
}
