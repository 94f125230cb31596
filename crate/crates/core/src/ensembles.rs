//! Thermal vibrational ensembles, thermometry, and inhomogeneous averaging
//! over lattice depth, magnetic field and radial thermal motion.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::bands::{diagonalize, BlochBasisSpec};
use crate::coupling::{well_pair, CouplingMatrix, WellPairOptions};
use crate::dynamics::{bloch_drives, bloch_spectrum_scan, spectrum_scan, DriveHamiltonian, Pulse, RabiTrace, Reference};
use crate::error::{Error, Result};
use crate::lattice::{LatticeConfig, PhysicalParams, SpinState, BOLTZMANN, PLANCK};

/// Thermal weight allowed beyond the truncation.
pub const LEAKAGE: f64 = 1e-6;

/// Mean occupation of a harmonic mode at temperature `temperature` (K).
pub fn nbar_from_temperature(temperature: f64, axial_frequency: f64) -> Result<f64> {
    if !(temperature >= 0.0) || !(axial_frequency > 0.0) {
        return Err(Error::Domain(format!("need T ≥ 0 and ω > 0, got {temperature}, {axial_frequency}")));
    }
    if temperature == 0.0 {
        return Ok(0.0);
    }
    Ok(1.0 / (PLANCK * axial_frequency / (BOLTZMANN * temperature)).exp_m1())
}

pub fn temperature_from_nbar(nbar: f64, axial_frequency: f64) -> Result<f64> {
    if !(nbar >= 0.0) || !(axial_frequency > 0.0) {
        return Err(Error::Domain(format!("need n̄ ≥ 0 and ω > 0, got {nbar}, {axial_frequency}")));
    }
    if nbar == 0.0 {
        return Ok(0.0);
    }
    Ok(PLANCK * axial_frequency / (BOLTZMANN * (1.0 / nbar).ln_1p()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThermalEnsemble {
    pub populations: Vec<f64>,
    pub nbar: f64,
    /// K.
    pub temperature: f64,
    /// Hz.
    pub axial_frequency: f64,
    pub n_max: usize,
}

impl ThermalEnsemble {
    /// Boltzmann distribution, truncated where the remaining weight drops below `LEAKAGE`.
    pub fn from_nbar(nbar: f64, axial_frequency: f64) -> Result<Self> {
        let temperature = temperature_from_nbar(nbar, axial_frequency)?;
        let r = nbar / (1.0 + nbar);
        // weight beyond n_max is r^(n_max + 1)
        let n_max = if r == 0.0 { 0 } else { (LEAKAGE.ln() / r.ln()).ceil().max(1.0) as usize };
        let mut populations: Vec<f64> = (0..=n_max).map(|n| (1.0 - r) * r.powi(n as i32)).collect();
        let total: f64 = populations.iter().sum();
        populations.iter_mut().for_each(|p| *p /= total);
        let nbar_trunc = populations.iter().enumerate().map(|(n, p)| n as f64 * p).sum();
        Ok(Self {
            populations,
            nbar: nbar_trunc,
            temperature,
            axial_frequency,
            n_max,
        })
    }

    pub fn from_temperature(temperature: f64, axial_frequency: f64) -> Result<Self> {
        let nbar = nbar_from_temperature(temperature, axial_frequency)?;
        Ok(Self { temperature, ..Self::from_nbar(nbar, axial_frequency)? })
    }

    /// Arbitrary populations; the temperature is the one with the same n̄.
    pub fn from_populations(populations: Vec<f64>, axial_frequency: f64) -> Result<Self> {
        if populations.is_empty() || populations.iter().any(|p| !(*p >= 0.0)) {
            return Err(Error::Domain("populations must be non-empty and non-negative".into()));
        }
        let total: f64 = populations.iter().sum();
        if total <= 0.0 {
            return Err(Error::Domain("populations sum to zero".into()));
        }
        let populations: Vec<f64> = populations.iter().map(|p| p / total).collect();
        let nbar = populations.iter().enumerate().map(|(n, p)| n as f64 * p).sum();
        Ok(Self {
            n_max: populations.len() - 1,
            temperature: temperature_from_nbar(nbar, axial_frequency)?,
            populations,
            nbar,
            axial_frequency,
        })
    }

    pub fn ground_population(&self) -> f64 {
        self.populations[0]
    }

    /// The first `levels` populations (not renormalized).
    pub fn head(&self, levels: usize) -> &[f64] {
        &self.populations[..levels.min(self.populations.len())]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SidebandThermometry {
    pub ratio: f64,
    pub nbar: f64,
    pub ground_population: f64,
}

/// Mean occupation from the areas of the cooling (red) and heating (blue)
/// sidebands, assuming a thermal distribution.
pub fn sideband_thermometry(red_area: f64, blue_area: f64) -> Result<SidebandThermometry> {
    if !(blue_area > 0.0) || !(red_area >= 0.0) {
        return Err(Error::Domain(format!("need blue area > 0 and red area ≥ 0, got {red_area}, {blue_area}")));
    }
    let ratio = red_area / blue_area;
    if ratio >= 1.0 {
        return Err(Error::Domain(format!("sideband ratio {ratio:.4} ≥ 1: not a cooled thermal distribution")));
    }
    Ok(SidebandThermometry {
        ratio,
        nbar: ratio / (1.0 - ratio),
        ground_population: 1.0 - ratio,
    })
}

/// Centroid, area and widths of a line inside `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineShape {
    pub center: f64,
    pub peak: f64,
    pub area: f64,
    pub rms_width: f64,
    pub fwhm: f64,
}

pub fn line_shape(frequencies: &[f64], transfer: &[f64], lo: f64, hi: f64) -> Result<LineShape> {
    if frequencies.len() != transfer.len() {
        return Err(Error::Contract("frequency and transfer lengths differ".into()));
    }
    let pts: Vec<(f64, f64)> =
        frequencies.iter().zip(transfer).filter(|(f, _)| **f >= lo && **f <= hi).map(|(f, p)| (*f, *p)).collect();
    if pts.len() < 3 || pts.windows(2).any(|w| w[1].0 <= w[0].0) {
        return Err(Error::Extraction(format!("need ≥ 3 increasing frequencies in [{lo:.4e}, {hi:.4e}]")));
    }
    let trap = |g: &dyn Fn(f64, f64) -> f64| -> f64 {
        pts.windows(2).map(|w| 0.5 * (g(w[0].0, w[0].1) + g(w[1].0, w[1].1)) * (w[1].0 - w[0].0)).sum()
    };
    let area = trap(&|_, p| p);
    if !(area > 0.0) {
        return Err(Error::Extraction("line has no area".into()));
    }
    let center = trap(&|f, p| f * p) / area;
    let var = trap(&|f, p| (f - center).powi(2) * p) / area;
    let (ipk, &(_, peak)) = pts.iter().enumerate().max_by(|a, b| a.1 .1.total_cmp(&b.1 .1)).unwrap();
    let half = peak / 2.0;
    let cross = |range: &mut dyn Iterator<Item = usize>, step: isize| -> f64 {
        for i in range {
            let j = (i as isize + step) as usize;
            let (fa, pa) = pts[i];
            let (fb, pb) = pts[j];
            if pb < half {
                return fa + (half - pa) * (fb - fa) / (pb - pa);
            }
        }
        if step < 0 { pts[0].0 } else { pts[pts.len() - 1].0 }
    };
    let left = cross(&mut (1..=ipk).rev(), -1);
    let right = cross(&mut (ipk..pts.len() - 1), 1);
    Ok(LineShape {
        center,
        peak,
        area,
        rms_width: var.sqrt(),
        fwhm: right - left,
    })
}

/// Frequencies of the sideband that removes a quantum (red) and the one that
/// adds one (blue), for atoms starting in `initial`.
pub fn sideband_frequencies(h: &DriveHamiltonian, initial: SpinState) -> Result<(f64, f64)> {
    match initial {
        SpinState::S1 => Ok((h.line_frequency(0, 1)?, h.line_frequency(1, 0)?)),
        SpinState::S0 => Ok((h.line_frequency(1, 0)?, h.line_frequency(0, 1)?)),
    }
}

/// Sideband thermometry on a spectrum sampled at absolute `frequencies`
/// (relative to the hyperfine splitting), integrating ±`half_window` around
/// each sideband.
pub fn spectrum_thermometry(
    h: &DriveHamiltonian,
    initial: SpinState,
    frequencies: &[f64],
    transfer: &[f64],
    half_window: f64,
) -> Result<SidebandThermometry> {
    let (red, blue) = sideband_frequencies(h, initial)?;
    let r = line_shape(frequencies, transfer, red - half_window, red + half_window)
        .map(|l| l.area)
        .or_else(|e| match e {
            Error::Extraction(_) if frequencies.iter().any(|f| (f - red).abs() <= half_window) => Ok(0.0),
            e => Err(e),
        })?;
    let b = line_shape(frequencies, transfer, blue - half_window, blue + half_window)?.area;
    sideband_thermometry(r, b)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeatThermometry {
    /// Normalized level populations of the fitted levels.
    pub populations: Vec<f64>,
    /// Carrier Rabi frequencies Ω₀|M[n][n]|, Hz.
    pub frequencies: Vec<f64>,
    /// K.
    pub temperature: f64,
    pub nbar: f64,
    /// Weighted RMS residual of the log-linear Boltzmann fit.
    pub residual: f64,
    /// RMS residual of the signal fit.
    pub signal_residual: f64,
}

/// Carrier transfer of an incoherent mixture under resonant two-level dynamics,
/// `Σ p_n sin²(π Ω₀|M[n][n]| t)`.
pub fn carrier_beat_signal(populations: &[f64], m: &CouplingMatrix, bare_rabi: f64, times: &[f64]) -> Result<Vec<f64>> {
    let freqs = carrier_frequencies(m, bare_rabi, populations.len())?;
    Ok(times
        .iter()
        .map(|t| populations.iter().zip(&freqs).map(|(p, f)| p * (std::f64::consts::PI * f * t).sin().powi(2)).sum())
        .collect())
}

fn carrier_frequencies(m: &CouplingMatrix, bare_rabi: f64, levels: usize) -> Result<Vec<f64>> {
    (0..levels)
        .map(|n| {
            m.abs(n, n)
                .map(|a| bare_rabi * a)
                .ok_or_else(|| Error::Range(format!("carrier {n} outside the coupling matrix")))
        })
        .collect()
}

/// Level populations from a carrier Rabi trace by least squares on the known
/// carrier frequencies of the lowest `levels` levels, then a Boltzmann fit.
pub fn beat_thermometry(
    trace: &RabiTrace,
    m: &CouplingMatrix,
    levels: usize,
    axial_frequency: f64,
) -> Result<BeatThermometry> {
    let times = &trace.times;
    let signal = trace.transfer();
    if levels == 0 || times.len() < 2 * levels + 2 {
        return Err(Error::Domain(format!("{} samples cannot resolve {levels} levels", times.len())));
    }
    let freqs = carrier_frequencies(m, trace.pulse.bare_rabi, levels)?;
    let span = times[times.len() - 1] - times[0];
    let resolution = 1.0 / span;
    let slowest = freqs.iter().copied().fold(f64::INFINITY, f64::min);
    if slowest < resolution {
        return Err(Error::Extraction(format!(
            "carrier frequency {slowest:.4e} Hz is below the resolution {resolution:.4e} Hz; use a different Δx"
        )));
    }
    if slowest * span < 5.0 {
        return Err(Error::Extraction(format!(
            "trace spans {:.2} periods of the slowest carrier; at least 5 are required",
            slowest * span
        )));
    }
    for i in 0..levels {
        for j in i + 1..levels {
            if (freqs[i] - freqs[j]).abs() < resolution {
                return Err(Error::Extraction(format!(
                    "carriers {i} and {j} ({:.4e}, {:.4e} Hz) collide at resolution {resolution:.4e} Hz; use a different Δx",
                    freqs[i], freqs[j]
                )));
            }
        }
    }
    let a = DMatrix::from_fn(times.len(), levels, |r, c| (std::f64::consts::PI * freqs[c] * times[r]).sin().powi(2));
    let b = DVector::from_column_slice(signal);
    let svd = a.clone().svd(true, true);
    let x = svd.solve(&b, 1e-12).map_err(|e| Error::Solver(format!("least squares failed: {e}")))?;
    let fit = &a * &x;
    let signal_residual = ((&fit - &b).norm_squared() / times.len() as f64).sqrt();
    let raw: Vec<f64> = x.iter().map(|v| v.max(0.0)).collect();
    let total: f64 = raw.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Extraction("no carrier amplitude in the trace".into()));
    }
    let populations: Vec<f64> = raw.iter().map(|p| p / total).collect();
    // weighted least squares on ln p_n = c − n·hω/(k_B T), weights p_n²
    let pts: Vec<(f64, f64, f64)> = populations
        .iter()
        .enumerate()
        .filter(|(_, p)| **p > 1e-4)
        .map(|(n, p)| (n as f64, p.ln(), p * p))
        .collect();
    let (temperature, residual) = if pts.len() < 2 {
        (0.0, 0.0)
    } else {
        let sw: f64 = pts.iter().map(|p| p.2).sum();
        let mx = pts.iter().map(|p| p.2 * p.0).sum::<f64>() / sw;
        let my = pts.iter().map(|p| p.2 * p.1).sum::<f64>() / sw;
        let sxy: f64 = pts.iter().map(|p| p.2 * (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| p.2 * (p.0 - mx).powi(2)).sum();
        let slope = sxy / sxx;
        let res = (pts.iter().map(|p| p.2 * (p.1 - my - slope * (p.0 - mx)).powi(2)).sum::<f64>() / sw).sqrt();
        if slope >= 0.0 {
            return Err(Error::Extraction(format!("populations do not decrease (slope {slope:.3e})")));
        }
        (PLANCK * axial_frequency / (BOLTZMANN * -slope), res)
    };
    Ok(BeatThermometry {
        nbar: nbar_from_temperature(temperature, axial_frequency)?,
        populations,
        frequencies: freqs,
        temperature,
        residual,
        signal_residual,
    })
}

/// Carrier trace of a mixture, in the shape `rabi_trace` returns.
pub fn synthetic_carrier_trace(populations: &[f64], m: &CouplingMatrix, pulse: &Pulse, times: &[f64]) -> Result<RabiTrace> {
    let p0 = carrier_beat_signal(populations, m, pulse.bare_rabi, times)?;
    Ok(RabiTrace {
        times: times.to_vec(),
        p1: p0.iter().map(|p| 1.0 - p).collect(),
        p0,
        initial: (SpinState::S1, 0),
        pulse: *pulse,
        warning: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadialModel {
    /// K.
    pub temperature: f64,
    /// Hz.
    pub frequency: f64,
    /// m.
    pub waist: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InhomogeneityModel {
    /// Fractional Gaussian spread of the lattice depth.
    pub sigma_depth: f64,
    /// Gaussian spread of the magnetic field, T.
    pub sigma_field: f64,
    pub radial: Option<RadialModel>,
    pub samples: usize,
    pub seed: u64,
}

impl Default for InhomogeneityModel {
    fn default() -> Self {
        Self {
            sigma_depth: 0.0,
            sigma_field: 0.0,
            radial: None,
            samples: 64,
            seed: 0,
        }
    }
}

/// One member of the inhomogeneous ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InhomogeneousSample {
    /// Local depth over nominal depth.
    pub depth_factor: f64,
    /// Field deviation, T.
    pub field: f64,
    /// Radial distance from the beam axis, m.
    pub radius: f64,
}

impl InhomogeneousSample {
    pub const NOMINAL: Self = Self {
        depth_factor: 1.0,
        field: 0.0,
        radius: 0.0,
    };
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let mut inv = 1.0 / base as f64;
    let mut x = 0.0;
    while i > 0 {
        x += (i % base) as f64 * inv;
        i /= base;
        inv /= base as f64;
    }
    x
}

impl InhomogeneityModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_depth >= 0.0) || !(self.sigma_field >= 0.0) {
            return Err(Error::Config("inhomogeneity widths must be non-negative".into()));
        }
        if self.samples == 0 {
            return Err(Error::Config("sample count must be at least 1".into()));
        }
        if let Some(r) = self.radial {
            if !(r.temperature >= 0.0) || !(r.frequency > 0.0) || !(r.waist > 0.0) {
                return Err(Error::Config("radial model needs T ≥ 0, ω > 0 and w > 0".into()));
            }
        }
        Ok(())
    }

    pub fn is_trivial(&self) -> bool {
        self.sigma_depth == 0.0 && self.sigma_field == 0.0 && self.radial.is_none_or(|r| r.temperature == 0.0)
    }

    /// Quasi-random samples: a Halton sequence with a seeded random shift,
    /// mapped to Gaussian depth and field deviations and a 2D Boltzmann
    /// radial position.
    pub fn sample_points(&self, mass: f64) -> Result<Vec<InhomogeneousSample>> {
        self.validate()?;
        if self.is_trivial() {
            return Ok(vec![InhomogeneousSample::NOMINAL]);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let shift: [f64; 4] = std::array::from_fn(|_| rng.random::<f64>());
        let normal = Normal::new(0.0, 1.0).map_err(|e| Error::Solver(e.to_string()))?;
        let sigma_r = self.radial.map_or(0.0, |r| {
            (BOLTZMANN * r.temperature / mass).sqrt() / (std::f64::consts::TAU * r.frequency)
        });
        let waist = self.radial.map_or(1.0, |r| r.waist);
        (0..self.samples as u64)
            .map(|i| {
                let z: [f64; 4] = std::array::from_fn(|d| {
                    let u = (radical_inverse(i + 1, [2, 3, 5, 7][d]) + shift[d]).fract();
                    normal.inverse_cdf(u.clamp(1e-12, 1.0 - 1e-12))
                });
                let r2 = sigma_r * sigma_r * (z[2] * z[2] + z[3] * z[3]);
                let depth_factor = (1.0 + self.sigma_depth * z[0]) * (-2.0 * r2 / (waist * waist)).exp();
                if depth_factor <= 0.0 {
                    return Err(Error::Domain(format!(
                        "sample {i} has non-positive depth factor {depth_factor:.4}; σ_U = {} is too broad",
                        self.sigma_depth
                    )));
                }
                Ok(InhomogeneousSample {
                    depth_factor,
                    field: self.sigma_field * z[1],
                    radius: r2.sqrt(),
                })
            })
            .collect()
    }
}

/// Componentwise mean and spread of a vector observable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Averaged {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub stderr: Vec<f64>,
    pub samples: usize,
}

/// Average `observable` over the ensemble. Samples are evaluated in parallel
/// and combined in sample order, so results do not depend on the thread count.
pub fn inhomogeneous_average<F>(model: &InhomogeneityModel, mass: f64, observable: F) -> Result<Averaged>
where
    F: Fn(&InhomogeneousSample) -> Result<Vec<f64>> + Sync,
{
    let points = model.sample_points(mass)?;
    let values: Vec<Vec<f64>> = points
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let v = observable(s).map_err(|e| {
                Error::Domain(format!("observable failed at sample {i} ({s:?}): {e}"))
            })?;
            if let Some(k) = v.iter().position(|x| !x.is_finite()) {
                return Err(Error::Domain(format!("observable component {k} diverges at sample {i} ({s:?})")));
            }
            Ok(v)
        })
        .collect::<Result<_>>()?;
    let dim = values[0].len();
    if values.iter().any(|v| v.len() != dim) {
        return Err(Error::Contract("observable changed length between samples".into()));
    }
    // Welford
    let mut mean = vec![0.0; dim];
    let mut m2 = vec![0.0; dim];
    for (k, v) in values.iter().enumerate() {
        let n = (k + 1) as f64;
        for d in 0..dim {
            let delta = v[d] - mean[d];
            mean[d] += delta / n;
            m2[d] += delta * (v[d] - mean[d]);
        }
    }
    let n = values.len();
    let std: Vec<f64> = m2.iter().map(|m| if n > 1 { (m / (n - 1) as f64).sqrt() } else { 0.0 }).collect();
    let stderr = std.iter().map(|s| s / (n as f64).sqrt()).collect();
    Ok(Averaged { mean, std, stderr, samples: n })
}

/// Drive models at several depth fractions; level energies are interpolated
/// between nodes, couplings are those of the node nearest the nominal depth.
#[derive(Debug, Clone)]
pub struct DepthNodes {
    pub fractions: Vec<f64>,
    /// `drives[node][iq]`; a single entry per node for the localized model.
    pub drives: Vec<Vec<DriveHamiltonian>>,
}

impl DepthNodes {
    pub fn new(fractions: Vec<f64>, drives: Vec<Vec<DriveHamiltonian>>) -> Result<Self> {
        if fractions.is_empty() || fractions.len() != drives.len() {
            return Err(Error::Contract("need one drive set per depth node".into()));
        }
        if fractions.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Contract("depth nodes must increase".into()));
        }
        let shape = |d: &Vec<DriveHamiltonian>| d.iter().map(|h| (h.e0.len(), h.e1.len())).collect::<Vec<_>>();
        if drives.iter().any(|d| d.is_empty() || shape(d) != shape(&drives[0])) {
            return Err(Error::Contract("depth nodes disagree on the basis".into()));
        }
        Ok(Self { fractions, drives })
    }

    /// Localized well-pair models at `fractions` of the configured depth.
    pub fn well_pair(cfg: &LatticeConfig, fractions: &[f64], opts: &WellPairOptions, offset: f64) -> Result<Self> {
        let hs: Vec<DriveHamiltonian> = fractions
            .iter()
            .map(|f| {
                let c = cfg.with_depth(cfg.depth_plus * f)?;
                DriveHamiltonian::from_pair(&well_pair(&c, opts)?, offset)
            })
            .collect::<Result<_>>()?;
        let n0 = hs.iter().map(|h| h.e0.len()).min().unwrap_or(0);
        let n1 = hs.iter().map(|h| h.e1.len()).min().unwrap_or(0);
        let drives = hs.iter().map(|h| h.truncated(n0, n1).map(|t| vec![t])).collect::<Result<_>>()?;
        Self::new(fractions.to_vec(), drives)
    }

    /// Bloch-basis models at `fractions` of the configured depth.
    pub fn bloch(cfg: &LatticeConfig, fractions: &[f64], nq: usize, bands: usize, offset: f64) -> Result<Self> {
        let drives = fractions
            .iter()
            .map(|f| {
                let c = cfg.with_depth(cfg.depth_plus * f)?;
                let depth_er = c.depth_plus / c.params.recoil_energy();
                let basis = BlochBasisSpec::for_depth(depth_er, nq, bands)?;
                let s0 = diagonalize(&c, SpinState::S0, &basis)?;
                let s1 = diagonalize(&c, SpinState::S1, &basis)?;
                bloch_drives(&s0, &s1, offset)
            })
            .collect::<Result<_>>()?;
        Self::new(fractions.to_vec(), drives)
    }

    fn nominal(&self) -> usize {
        (0..self.fractions.len())
            .min_by(|&a, &b| (self.fractions[a] - 1.0).abs().total_cmp(&(self.fractions[b] - 1.0).abs()))
            .unwrap()
    }

    /// Drives at depth `fraction` with every S1 level moved by `shift` Hz.
    pub fn at(&self, fraction: f64, shift: f64) -> Result<Vec<DriveHamiltonian>> {
        let nodes = &self.fractions;
        let (lo, hi) = (nodes[0], nodes[nodes.len() - 1]);
        if nodes.len() == 1 {
            if (fraction - lo).abs() > 1e-12 {
                return Err(Error::Range(format!("single depth node {lo} cannot serve fraction {fraction}")));
            }
        } else if fraction < lo - 1e-12 || fraction > hi + 1e-12 {
            return Err(Error::Range(format!("depth fraction {fraction:.4} outside the node range [{lo}, {hi}]")));
        }
        let (i, k, w) = if nodes.len() == 1 {
            (0, 0, 0.0)
        } else {
            let k = nodes.partition_point(|f| *f <= fraction).clamp(1, nodes.len() - 1);
            (k - 1, k, (fraction - nodes[k - 1]) / (nodes[k] - nodes[k - 1]))
        };
        let nominal = &self.drives[self.nominal()];
        let lerp = |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| x + w * (y - x)).collect() };
        nominal
            .iter()
            .enumerate()
            .map(|(iq, h)| {
                let (a, b) = (&self.drives[i][iq], &self.drives[k][iq]);
                let e1 = lerp(&a.e1, &b.e1).into_iter().map(|e| e + shift).collect();
                DriveHamiltonian::new(lerp(&a.e0, &b.e0), e1, h.coupling.clone(), h.offset)
            })
            .collect()
    }

    /// Depth fractions spanning `[lo, hi]` with `count` evenly spaced nodes, always including 1.
    pub fn span(lo: f64, hi: f64, count: usize) -> Vec<f64> {
        if hi - lo < 1e-12 || count < 2 {
            return vec![1.0];
        }
        let mut v: Vec<f64> = (0..count).map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64).collect();
        if !v.iter().any(|f| (f - 1.0).abs() < 1e-12) && lo <= 1.0 && hi >= 1.0 {
            v.push(1.0);
            v.sort_by(f64::total_cmp);
        }
        v
    }
}

/// Transfer spectrum at absolute drive frequencies (relative to the
/// hyperfine splitting), averaged over the inhomogeneous ensemble.
pub fn ensemble_spectrum(
    nodes: &DepthNodes,
    params: &PhysicalParams,
    model: &InhomogeneityModel,
    initial_spin: SpinState,
    populations: &[f64],
    pulse: &Pulse,
    frequencies: &[f64],
) -> Result<Averaged> {
    let abs_pulse = Pulse {
        reference: Reference::Hyperfine,
        detuning: 0.0,
        ..*pulse
    };
    inhomogeneous_average(model, params.atom_mass, |s| {
        let drives = nodes.at(s.depth_factor, params.zeeman_slope * s.field)?;
        let offset = drives[0].offset;
        let detunings: Vec<f64> = frequencies.iter().map(|f| f - offset).collect();
        if drives.len() == 1 {
            spectrum_scan(&drives[0], initial_spin, populations, &abs_pulse, &detunings)
        } else {
            bloch_spectrum_scan(&drives, initial_spin, populations, &abs_pulse, &detunings)
        }
    })
}

/// Depth-node range needed to cover every sample of `model`, with a margin.
pub fn node_range(model: &InhomogeneityModel, mass: f64) -> Result<(f64, f64)> {
    let pts = model.sample_points(mass)?;
    let lo = pts.iter().map(|s| s.depth_factor).fold(1.0, f64::min);
    let hi = pts.iter().map(|s| s.depth_factor).fold(1.0, f64::max);
    Ok((lo, hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;
    use num_complex::Complex64;

    #[test]
    fn temperature_conversions() {
        let t = temperature_from_nbar(0.8, 110e3).unwrap();
        assert!((t - 6.5e-6).abs() < 0.15 * 6.5e-6, "{t}");
        assert_relative_eq!(nbar_from_temperature(t, 110e3).unwrap(), 0.8, max_relative = 1e-12);
        assert_eq!(temperature_from_nbar(0.0, 110e3).unwrap(), 0.0);
        assert_eq!(nbar_from_temperature(0.0, 110e3).unwrap(), 0.0);
        // classical limit
        let hot = nbar_from_temperature(1e-3, 110e3).unwrap();
        let classical = BOLTZMANN * 1e-3 / (PLANCK * 110e3);
        assert!(hot >= 50.0 && (hot - classical).abs() < 0.01 * classical);
        assert!(nbar_from_temperature(-1.0, 110e3).is_err());
    }

    #[test]
    fn boltzmann_ensemble_properties() {
        for nbar in [0.0309, 0.8, 1.2, 5.0] {
            let e = ThermalEnsemble::from_nbar(nbar, 110e3).unwrap();
            assert!((e.populations.iter().sum::<f64>() - 1.0).abs() < 1e-10);
            let r = (-PLANCK * 110e3 / (BOLTZMANN * e.temperature)).exp();
            for w in e.populations.windows(2) {
                assert_relative_eq!(w[1] / w[0], r, max_relative = 1e-9);
            }
            let leak = (nbar / (1.0 + nbar)).powi(e.n_max as i32 + 1);
            assert!(leak < LEAKAGE);
            assert!((e.nbar - nbar).abs() < 1e-4 * nbar.max(1.0));
        }
    }

    #[test]
    fn sideband_ratio() {
        let t = sideband_thermometry(0.03, 1.0).unwrap();
        assert_relative_eq!(t.ground_population, 0.97);
        let z = sideband_thermometry(0.0, 2.0).unwrap();
        assert_eq!((z.nbar, z.ground_population), (0.0, 1.0));
        assert!(sideband_thermometry(1.0, 1.0).is_err());
        assert!(sideband_thermometry(0.1, 0.0).is_err());
    }

    #[test]
    fn line_shape_of_gaussian() {
        let f: Vec<f64> = (-400..=400).map(|i| i as f64 * 10.0).collect();
        let p: Vec<f64> = f.iter().map(|x| 0.5 * (-(x - 200.0).powi(2) / (2.0 * 300f64.powi(2))).exp()).collect();
        let l = line_shape(&f, &p, -4000.0, 4000.0).unwrap();
        assert_relative_eq!(l.center, 200.0, epsilon = 1e-6);
        assert_relative_eq!(l.rms_width, 300.0, max_relative = 1e-4);
        assert_relative_eq!(l.fwhm, 2.0 * (2.0 * 2f64.ln()).sqrt() * 300.0, max_relative = 1e-3);
        assert_relative_eq!(l.area, 0.5 * 300.0 * (2.0 * std::f64::consts::PI).sqrt(), max_relative = 1e-6);
    }

    fn diagonal_coupling(m: &[f64]) -> CouplingMatrix {
        CouplingMatrix {
            delta_x: 0.0,
            bare_rabi: 1.0,
            elements: DMatrix::from_fn(m.len(), m.len(), |r, c| Complex64::new(if r == c { m[r] } else { 0.0 }, 0.0)),
        }
    }

    #[test]
    fn pure_ground_state_beat() {
        let m = diagonal_coupling(&[0.9, 0.75, 0.6, 0.45]);
        let pulse = Pulse::new(10e3, crate::dynamics::Envelope::Rectangular { duration: 1.0 }).unwrap();
        let times = crate::dynamics::uniform_times(2e-3, 2001);
        let trace = synthetic_carrier_trace(&[1.0], &m, &pulse, &times).unwrap();
        let b = beat_thermometry(&trace, &m, 4, 110e3).unwrap();
        assert!((b.populations[0] - 1.0).abs() < 1e-9);
        assert!(b.populations[1..].iter().all(|p| *p < 1e-3));
        assert_eq!(b.temperature, 0.0);
    }

    #[test]
    fn colliding_carriers_are_rejected() {
        let m = diagonal_coupling(&[0.9, 0.9005, 0.6]);
        let pulse = Pulse::new(10e3, crate::dynamics::Envelope::Rectangular { duration: 1.0 }).unwrap();
        let times = crate::dynamics::uniform_times(2e-3, 2001);
        let trace = synthetic_carrier_trace(&[0.6, 0.3, 0.1], &m, &pulse, &times).unwrap();
        match beat_thermometry(&trace, &m, 3, 110e3) {
            Err(Error::Extraction(msg)) => assert!(msg.contains("Δx")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn trivial_model_returns_point_value() {
        let model = InhomogeneityModel { samples: 50, ..Default::default() };
        let a = inhomogeneous_average(&model, 2.2e-25, |s| Ok(vec![s.depth_factor * 0.1234567, 7.0])).unwrap();
        assert_eq!(a.mean, vec![0.1234567, 7.0]);
        assert_eq!(a.std, vec![0.0, 0.0]);
    }

    #[test]
    fn samples_are_reproducible_and_gaussian() {
        let model = InhomogeneityModel {
            sigma_depth: 0.02,
            sigma_field: 1e-7,
            radial: None,
            samples: 4096,
            seed: 7,
        };
        let a = model.sample_points(2.2e-25).unwrap();
        assert_eq!(a, model.sample_points(2.2e-25).unwrap());
        let other = InhomogeneityModel { seed: 8, ..model }.sample_points(2.2e-25).unwrap();
        assert_ne!(a, other);
        let n = a.len() as f64;
        let mean = a.iter().map(|s| s.field).sum::<f64>() / n;
        let sd = (a.iter().map(|s| (s.field - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!(mean.abs() < 1e-9 && (sd - 1e-7).abs() < 0.01 * 1e-7, "{mean} {sd}");
    }

    #[test]
    fn radial_positions_follow_two_dimensional_boltzmann() {
        let mass = 2.2069e-25;
        let r = RadialModel { temperature: 10e-6, frequency: 1.1e3, waist: 20e-6 };
        let model = InhomogeneityModel { radial: Some(r), samples: 4096, ..Default::default() };
        let pts = model.sample_points(mass).unwrap();
        // ⟨r²⟩ = 2 k_B T/(m ω²)
        let expect = 2.0 * BOLTZMANN * r.temperature / (mass * (std::f64::consts::TAU * r.frequency).powi(2));
        let got = pts.iter().map(|s| s.radius * s.radius).sum::<f64>() / pts.len() as f64;
        assert!((got - expect).abs() < 0.02 * expect, "{got} {expect}");
        assert!(pts.iter().all(|s| s.depth_factor <= 1.0));
    }

    #[test]
    fn divergent_observable_reports_sample() {
        let model = InhomogeneityModel { sigma_depth: 0.1, samples: 16, ..Default::default() };
        let err = inhomogeneous_average(&model, 1.0, |s| Ok(vec![1.0 / (s.depth_factor - s.depth_factor)])).unwrap_err();
        assert!(matches!(err, Error::Domain(ref m) if m.contains("sample")), "{err:?}");
    }

    #[test]
    fn depth_nodes_interpolate_linearly() {
        let c = DMatrix::from_element(1, 1, Complex64::new(1.0, 0.0));
        let h = |e: f64| vec![DriveHamiltonian::new(vec![0.0], vec![e], c.clone(), 5.0).unwrap()];
        let nodes = DepthNodes::new(vec![0.9, 1.0, 1.1], vec![h(-10.0), h(0.0), h(30.0)]).unwrap();
        assert_relative_eq!(nodes.at(0.95, 0.0).unwrap()[0].e1[0], -5.0, epsilon = 1e-12);
        assert_relative_eq!(nodes.at(1.05, 2.0).unwrap()[0].e1[0], 17.0, epsilon = 1e-12);
        assert_relative_eq!(nodes.at(1.1, 0.0).unwrap()[0].e1[0], 30.0, epsilon = 1e-12);
        assert!(nodes.at(1.2, 0.0).is_err());
        assert_eq!(DepthNodes::span(0.9, 1.1, 3), vec![0.9, 1.0, 1.1]);
    }
}
