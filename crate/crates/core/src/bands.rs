//! Plane-wave band structure of the 1D lattice for each spin state, Wannier
//! localization, bound-state counting and the transition table.
//!
//! Quasimomenta are stored in units of the lattice wavenumber `k`, so the
//! first Brillouin zone is (−1, 1] and reciprocal vectors are `2kj`.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{
    potential_minimum, LatticeConfig, MinimumSearch, PotentialHarmonics, SpinState, HBAR, PLANCK,
};
use crate::linalg::{symmetric_eigen, CMatrix};
use crate::oscillator;

/// Plane-wave basis, quasimomentum sampling and number of retained bands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlochBasisSpec {
    /// Reciprocal vectors kept on each side of zero.
    pub plane_wave_cutoff: usize,
    /// Quasimomenta in units of k, inside (−1, 1].
    pub quasimomenta: Vec<f64>,
    pub band_count: usize,
}

/// `q_m = 2m/N`, a uniform grid of `n` points in (−1, 1].
pub fn uniform_quasimomenta(n: usize) -> Vec<f64> {
    let n = n.max(1);
    let lo = -((n as i64 - 1) / 2);
    (0..n as i64).map(|i| 2.0 * (lo + i) as f64 / n as f64).collect()
}

impl BlochBasisSpec {
    pub fn new(plane_wave_cutoff: usize, quasimomenta: Vec<f64>, band_count: usize) -> Result<Self> {
        let spec = Self {
            plane_wave_cutoff,
            quasimomenta,
            band_count,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Default cutoff for a lattice of `depth_er` recoils: `max(32, ⌈3√U⌉)`.
    pub fn default_cutoff(depth_er: f64) -> usize {
        32usize.max((3.0 * depth_er.max(0.0).sqrt()).ceil() as usize)
    }

    pub fn for_depth(depth_er: f64, quasimomentum_points: usize, band_count: usize) -> Result<Self> {
        let cutoff = Self::default_cutoff(depth_er).max(band_count + 4);
        Self::new(cutoff, uniform_quasimomenta(quasimomentum_points), band_count)
    }

    pub fn validate(&self) -> Result<()> {
        if self.band_count == 0 {
            return Err(Error::Config("band_count must be at least 1".into()));
        }
        if self.plane_wave_cutoff < self.band_count + 4 {
            return Err(Error::Config(format!(
                "plane-wave cutoff {} must be at least band_count + 4 = {}",
                self.plane_wave_cutoff,
                self.band_count + 4
            )));
        }
        if self.quasimomenta.is_empty() {
            return Err(Error::Config("empty quasimomentum grid".into()));
        }
        for &q in &self.quasimomenta {
            if !(q > -1.0 && q <= 1.0) {
                return Err(Error::Config(format!("quasimomentum {q} outside (−1, 1]")));
            }
            let mirror = if (q - 1.0).abs() < 1e-12 { 1.0 } else { -q };
            if !self.quasimomenta.iter().any(|&p| (p - mirror).abs() < 1e-9) {
                return Err(Error::Config(format!("quasimomentum grid not symmetric: {q} has no partner")));
            }
        }
        Ok(())
    }

    pub fn basis_size(&self) -> usize {
        2 * self.plane_wave_cutoff + 1
    }
}

/// Bands of one spin state on a quasimomentum grid.
#[derive(Debug, Clone)]
pub struct BandStructure {
    pub spin: SpinState,
    pub quasimomenta: Vec<f64>,
    /// `energies[iq][band]`, J, ascending in band.
    pub energies: Vec<Vec<f64>>,
    /// `coefficients[iq]` has one column per band; row `i` multiplies
    /// `exp(i(q + 2(i − cutoff))kz)`.
    pub coefficients: Vec<CMatrix>,
    pub cutoff: usize,
    pub harmonics: PotentialHarmonics,
    pub wavenumber: f64,
    pub lattice_spacing: f64,
    pub recoil_energy: f64,
    pub mass: f64,
    /// Position of the potential minimum nearest to z = 0, m.
    pub well_center: f64,
    /// Potential curvature at the minimum, J/m².
    pub well_curvature: f64,
}

/// Plane-wave Hamiltonian in the gauge `c_j → c_j·e^{ijφ}` with `φ = −arg(first)`,
/// which makes it real symmetric tridiagonal.
fn bloch_hamiltonian(q: f64, cutoff: usize, h: &PotentialHarmonics, er: f64) -> DMatrix<f64> {
    let n = 2 * cutoff + 1;
    let v = h.first.norm();
    DMatrix::from_fn(n, n, |r, c| {
        if r == c {
            let kin = q + 2.0 * (r as f64 - cutoff as f64);
            er * kin * kin + h.offset
        } else if r.abs_diff(c) == 1 {
            v
        } else {
            0.0
        }
    })
}

fn solve_q(q: f64, cutoff: usize, bands: usize, h: &PotentialHarmonics, er: f64) -> Result<(Vec<f64>, CMatrix)> {
    let (values, real) = symmetric_eigen(&bloch_hamiltonian(q, cutoff, h, er))?;
    if values.len() < bands {
        return Err(Error::Solver(format!("basis of {} too small for {bands} bands", values.len())));
    }
    let n = real.nrows();
    let phi = -h.first.arg();
    let mut vecs = CMatrix::zeros(n, bands);
    for b in 0..bands {
        // deterministic phase: largest coefficient positive before undoing the gauge
        let imax = (0..n).fold(0, |best, r| if real[(r, b)].abs() > real[(best, b)].abs() + 1e-14 { r } else { best });
        let sign = real[(imax, b)].signum();
        for r in 0..n {
            let j = r as f64 - cutoff as f64;
            vecs[(r, b)] = Complex64::from_polar(sign * real[(r, b)], -j * phi);
        }
    }
    Ok((values[..bands].to_vec(), vecs))
}

fn eigenvalues_q(q: f64, cutoff: usize, h: &PotentialHarmonics, er: f64) -> Vec<f64> {
    let mut v: Vec<f64> = bloch_hamiltonian(q, cutoff, h, er).symmetric_eigenvalues().iter().copied().collect();
    v.sort_by(f64::total_cmp);
    v
}

/// Diagonalize `H(q) = ħ²(q+G)²/2m + U_s` on every quasimomentum of `basis`.
///
/// Convergence is checked by re-solving the first quasimomentum with twice
/// the cutoff; any retained energy moving by more than 1e-8 E_R is an error.
pub fn diagonalize(cfg: &LatticeConfig, s: SpinState, basis: &BlochBasisSpec) -> Result<BandStructure> {
    basis.validate()?;
    let h = cfg.harmonics(s);
    let er = cfg.params.recoil_energy();
    let cutoff = basis.plane_wave_cutoff;
    let bands = basis.band_count;

    let solved: Vec<(Vec<f64>, CMatrix)> = basis
        .quasimomenta
        .par_iter()
        .map(|&q| solve_q(q, cutoff, bands, &h, er))
        .collect::<Result<_>>()?;

    let check = eigenvalues_q(basis.quasimomenta[0], 2 * cutoff, &h, er);
    let drift = check
        .iter()
        .zip(&solved[0].0)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    if drift > 1e-8 * er {
        return Err(Error::Solver(format!(
            "band energies not converged at cutoff {cutoff}: doubling moved them by {:.3e} E_R",
            drift / er
        )));
    }

    let well = potential_minimum(cfg, s, &MinimumSearch::default())?;
    let a = cfg.params.lattice_spacing();
    let mut center = well.position.rem_euclid(a);
    if center > a / 2.0 {
        center -= a;
    }
    let (energies, coefficients) = solved.into_iter().unzip();
    Ok(BandStructure {
        spin: s,
        quasimomenta: basis.quasimomenta.clone(),
        energies,
        coefficients,
        cutoff,
        harmonics: h,
        wavenumber: cfg.params.wavenumber(),
        lattice_spacing: a,
        recoil_energy: er,
        mass: cfg.params.atom_mass,
        well_center: center,
        well_curvature: well.curvature,
    })
}

impl BandStructure {
    pub fn band_count(&self) -> usize {
        self.energies.first().map_or(0, |e| e.len())
    }

    pub fn band_energies(&self, band: usize) -> impl Iterator<Item = f64> + '_ {
        self.energies.iter().map(move |e| e[band])
    }

    /// Mean of the band energy over the quasimomentum grid, J.
    pub fn band_center(&self, band: usize) -> f64 {
        self.band_energies(band).sum::<f64>() / self.energies.len() as f64
    }

    pub fn band_centers(&self) -> Vec<f64> {
        (0..self.band_count()).map(|b| self.band_center(b)).collect()
    }

    pub fn band_min(&self, band: usize) -> f64 {
        self.band_energies(band).fold(f64::INFINITY, f64::min)
    }

    pub fn band_max(&self, band: usize) -> f64 {
        self.band_energies(band).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn band_width(&self, band: usize) -> f64 {
        self.band_max(band) - self.band_min(band)
    }

    pub fn potential_max(&self) -> f64 {
        self.harmonics.maximum()
    }

    /// Band energies at the Brillouin-zone center q = 0, J.
    pub fn zone_center_energies(&self) -> Vec<f64> {
        if let Some(i) = self.quasimomenta.iter().position(|&q| q == 0.0) {
            return self.energies[i].clone();
        }
        let mut e = eigenvalues_q(0.0, self.cutoff, &self.harmonics, self.recoil_energy);
        e.truncate(self.band_count());
        e
    }

    /// Number of retained bands whose zone-center energy lies below the
    /// potential maximum.
    pub fn bound_count(&self) -> usize {
        let top = self.potential_max();
        self.zone_center_energies().iter().take_while(|&&e| e < top).count()
    }

    /// Harmonic ground-state size at the well bottom, m.
    pub fn harmonic_size(&self) -> f64 {
        let omega = (self.well_curvature / self.mass).sqrt();
        (HBAR / (2.0 * self.mass * omega)).sqrt()
    }

    /// Band-width criterion for Wannier localization: width below 10% of the
    /// adjacent gap (the gap below, or above for the lowest band).
    pub fn is_localizable(&self, band: usize) -> bool {
        let width = self.band_width(band);
        let gap = if band > 0 {
            self.band_min(band) - self.band_max(band - 1)
        } else if self.band_count() > 1 {
            self.band_min(1) - self.band_max(0)
        } else {
            return true;
        };
        width < 0.1 * gap
    }

    fn same_grid(&self, other: &BandStructure) -> bool {
        self.quasimomenta.len() == other.quasimomenta.len()
            && self.quasimomenta.iter().zip(&other.quasimomenta).all(|(a, b)| (a - b).abs() < 1e-12)
    }
}

/// Number of bands whose zone-center energy lies below the potential maximum.
/// The plane-wave cutoff is doubled until the count is stable.
pub fn bound_state_count(cfg: &LatticeConfig, s: SpinState, basis: &BlochBasisSpec) -> Result<usize> {
    basis.validate()?;
    let h = cfg.harmonics(s);
    let er = cfg.params.recoil_energy();
    let top = h.maximum();
    let count = |cutoff: usize| eigenvalues_q(0.0, cutoff, &h, er).iter().take_while(|&&e| e < top).count();
    let mut cutoff = basis.plane_wave_cutoff;
    let mut current = count(cutoff);
    for _ in 0..6 {
        let next = count(2 * cutoff);
        if next == current && current + 4 <= 2 * cutoff + 1 {
            return Ok(current);
        }
        cutoff *= 2;
        current = next;
    }
    Err(Error::Solver(format!("bound-state count not stable up to cutoff {cutoff}")))
}

/// Uniform real-space sampling, `z_i = start + i·step`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RealGrid {
    pub start: f64,
    pub step: f64,
    pub len: usize,
}

impl RealGrid {
    /// `sites` lattice periods centered on z = 0 at `points_per_site` samples each.
    pub fn centered(lattice_spacing: f64, sites: usize, points_per_site: usize) -> Self {
        let len = sites * points_per_site;
        Self {
            start: -(sites as f64) * lattice_spacing / 2.0,
            step: lattice_spacing / points_per_site as f64,
            len,
        }
    }

    pub fn position(&self, i: usize) -> f64 {
        self.start + i as f64 * self.step
    }

    pub fn positions(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len).map(|i| self.position(i))
    }

    pub fn matches(&self, other: &RealGrid) -> bool {
        self.len == other.len
            && (self.start - other.start).abs() <= 1e-9 * self.step
            && (self.step - other.step).abs() <= 1e-12 * self.step
    }
}

/// A vibrational state of one well on a real-space grid.
#[derive(Debug, Clone)]
pub struct LocalizedState {
    pub band: usize,
    pub site: i64,
    /// Well center, m.
    pub center: f64,
    /// Amplitudes, 1/√m, normalized on the grid.
    pub amplitudes: Vec<Complex64>,
    /// Set when the band failed the localization criterion and a Bloch
    /// state is returned instead.
    pub delocalized: bool,
}

/// Localized states of one spin state, all on a common grid.
#[derive(Debug, Clone)]
pub struct LocalizedSet {
    pub spin: SpinState,
    pub grid: RealGrid,
    pub states: Vec<LocalizedState>,
    /// Band centers, J.
    pub energies: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalizeOptions {
    pub bands: usize,
    /// Permit bands above the bound-state count.
    pub allow_unbound: bool,
    pub grid: RealGrid,
}

impl LocalizedSet {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// `⟨a|O|b⟩`-style grid inner product `Σ conj(a)·b·dz`.
    pub fn inner(&self, a: usize, other: &LocalizedSet, b: usize) -> Complex64 {
        let dz = self.grid.step;
        self.states[a]
            .amplitudes
            .iter()
            .zip(&other.states[b].amplitudes)
            .map(|(x, y)| x.conj() * y)
            .sum::<Complex64>()
            * dz
    }

    /// Position variance of state `i`, m².
    pub fn variance(&self, i: usize) -> f64 {
        let dz = self.grid.step;
        let (mut m0, mut m1, mut m2) = (0.0, 0.0, 0.0);
        for (j, a) in self.states[i].amplitudes.iter().enumerate() {
            let z = self.grid.position(j);
            let p = a.norm_sqr() * dz;
            m0 += p;
            m1 += p * z;
            m2 += p * z * z;
        }
        m2 / m0 - (m1 / m0).powi(2)
    }
}

/// Wannier states for site `site`, built by projecting each band's Bloch
/// states onto the harmonic-oscillator state of the same index centered on
/// that site. The gauge makes the overlap with the harmonic reference real
/// and positive, so signs follow the Hermite convention of `oscillator`.
pub fn localized_states(sol: &BandStructure, site: i64, opts: &LocalizeOptions) -> Result<LocalizedSet> {
    if opts.bands > sol.band_count() {
        return Err(Error::Range(format!(
            "requested {} bands but the solution holds {}",
            opts.bands,
            sol.band_count()
        )));
    }
    let bound = sol.bound_count();
    if opts.bands > bound && !opts.allow_unbound {
        return Err(Error::Range(format!(
            "requested {} bands but only {bound} are bound (set allow_unbound to force)",
            opts.bands
        )));
    }
    let a = sol.lattice_spacing;
    let k = sol.wavenumber;
    let center = site as f64 * a + sol.well_center;
    let x0 = sol.harmonic_size();
    let nq = sol.quasimomenta.len();
    let supercell = nq as f64 * a;
    let npw = 2 * sol.cutoff + 1;
    let grid = opts.grid;
    let dz = grid.step;

    let states = (0..opts.bands)
        .into_par_iter()
        .map(|band| {
            let localizable = sol.is_localizable(band);
            // per-q complex weights multiplying the Bloch coefficients
            let weights: Vec<Complex64> = if localizable {
                sol.quasimomenta
                    .iter()
                    .enumerate()
                    .map(|(iq, &q)| {
                        let c = &sol.coefficients[iq];
                        let mut overlap = Complex64::new(0.0, 0.0);
                        for i in 0..npw {
                            let kappa = k * (q + 2.0 * (i as f64 - sol.cutoff as f64));
                            let ft = oscillator::fourier_transforms(band, kappa, x0)[band];
                            overlap += c[(i, band)] * ft * Complex64::from_polar(1.0, kappa * center);
                        }
                        let mag = overlap.norm();
                        if mag > 0.0 {
                            overlap.conj() / mag
                        } else {
                            Complex64::new(1.0, 0.0)
                        }
                    })
                    .collect()
            } else {
                let q0 = sol
                    .quasimomenta
                    .iter()
                    .enumerate()
                    .min_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
                    .map(|(i, _)| i)
                    .unwrap_or(0);
                (0..nq).map(|iq| if iq == q0 { Complex64::new(1.0, 0.0) } else { Complex64::new(0.0, 0.0) }).collect()
            };
            let prefactor = 1.0 / (nq as f64 * supercell).sqrt();
            let mut amps = vec![Complex64::new(0.0, 0.0); grid.len];
            for (iq, &q) in sol.quasimomenta.iter().enumerate() {
                let w = weights[iq];
                if w.norm() == 0.0 {
                    continue;
                }
                let c = &sol.coefficients[iq];
                for (zi, amp) in amps.iter_mut().enumerate() {
                    let z = grid.position(zi);
                    let step = Complex64::from_polar(1.0, 2.0 * k * z);
                    let mut ph = Complex64::from_polar(1.0, k * (q - 2.0 * sol.cutoff as f64) * z);
                    let mut s = Complex64::new(0.0, 0.0);
                    for i in 0..npw {
                        s += c[(i, band)] * ph;
                        ph *= step;
                    }
                    *amp += w * s * prefactor;
                }
            }
            let norm = (amps.iter().map(|x| x.norm_sqr()).sum::<f64>() * dz).sqrt();
            if !(norm > 0.0) {
                return Err(Error::Solver(format!("band {band} vanishes on the grid")));
            }
            // global phase: overlap with the harmonic reference real positive
            let reference: Complex64 = amps
                .iter()
                .enumerate()
                .map(|(zi, x)| x * oscillator::wavefunctions(band, grid.position(zi) - center, x0)[band])
                .sum();
            let phase = if reference.norm() > 1e-300 {
                reference.conj() / reference.norm()
            } else {
                Complex64::new(1.0, 0.0)
            };
            for x in amps.iter_mut() {
                *x *= phase / norm;
            }
            Ok(LocalizedState {
                band,
                site,
                center,
                amplitudes: amps,
                delocalized: !localizable,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(LocalizedSet {
        spin: sol.spin,
        grid,
        states,
        energies: (0..opts.bands).map(|b| sol.band_center(b)).collect(),
    })
}

/// One line of the microwave spectrum between bands `n` (S0) and `nprime` (S1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitionRow {
    pub n: usize,
    pub nprime: usize,
    /// Quasimomentum-averaged transition frequency relative to the bare
    /// hyperfine splitting, Hz.
    pub center: f64,
    /// Spread of the transition frequency across the Brillouin zone, Hz.
    pub width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionTable {
    pub rows: Vec<TransitionRow>,
}

impl TransitionTable {
    pub fn get(&self, n: usize, nprime: usize) -> Option<&TransitionRow> {
        self.rows.iter().find(|r| r.n == n && r.nprime == nprime)
    }
}

/// Transition frequencies `E_{1,n'}(q) − E_{0,n}(q)` for every retained band pair.
pub fn transition_table(sol0: &BandStructure, sol1: &BandStructure) -> Result<TransitionTable> {
    if sol0.spin != SpinState::S0 || sol1.spin != SpinState::S1 {
        return Err(Error::Contract("transition table needs an S0 and an S1 solution".into()));
    }
    if !sol0.same_grid(sol1) {
        return Err(Error::Contract("band structures use different quasimomentum grids".into()));
    }
    let mut rows = Vec::new();
    for n in 0..sol0.band_count() {
        for nprime in 0..sol1.band_count() {
            let diffs: Vec<f64> = sol0
                .energies
                .iter()
                .zip(&sol1.energies)
                .map(|(e0, e1)| (e1[nprime] - e0[n]) / PLANCK)
                .collect();
            let center = diffs.iter().sum::<f64>() / diffs.len() as f64;
            let lo = diffs.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = diffs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            rows.push(TransitionRow {
                n,
                nprime,
                center,
                width: hi - lo,
            });
        }
    }
    Ok(TransitionTable { rows })
}

/// Transition table at each lattice depth (`depth_plus`, J).
pub fn light_shift_scan(
    cfg: &LatticeConfig,
    depths: &[f64],
    quasimomentum_points: usize,
    band_count: usize,
) -> Result<Vec<(f64, TransitionTable)>> {
    depths
        .par_iter()
        .map(|&u| {
            let c = cfg.with_depth(u)?;
            let er = c.params.recoil_energy();
            let deepest = u * c.depth_ratio.max(1.0) / er;
            let basis = BlochBasisSpec::for_depth(deepest, quasimomentum_points, band_count)?;
            let s0 = diagonalize(&c, SpinState::S0, &basis)?;
            let s1 = diagonalize(&c, SpinState::S1, &basis)?;
            Ok((u, transition_table(&s0, &s1)?))
        })
        .collect()
}

/// Grid spacing suggestion: resolve the harmonic ground state of the
/// deepest spin potential with at least `per_x0` points.
pub fn points_per_site(cfg: &LatticeConfig, per_x0: f64) -> usize {
    let a = cfg.params.lattice_spacing();
    let er = cfg.params.recoil_energy();
    let depth = cfg.depth_plus * cfg.depth_ratio.max(1.0);
    let omega = 2.0 * (depth / er).sqrt() * er / HBAR;
    let x0 = (HBAR / (2.0 * cfg.params.atom_mass * omega)).sqrt();
    let n = (per_x0 * a / x0).ceil() as usize;
    n.max(64).next_power_of_two()
}

/// Harmonic-oscillator size for trap frequency `frequency` (Hz).
pub fn oscillator_size(frequency: f64, mass: f64) -> f64 {
    (HBAR / (2.0 * mass * 2.0 * std::f64::consts::PI * frequency)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{units, PhysicalParams, PotentialSign, SpinWeights};
    use approx::assert_relative_eq;

    fn cfg(depth_er: f64, theta: f64) -> LatticeConfig {
        let p = PhysicalParams::cesium(865.9e-9).unwrap();
        LatticeConfig::new(
            p,
            theta,
            depth_er * p.recoil_energy(),
            1.0,
            SpinWeights::pure(),
            PotentialSign::Attractive,
        )
        .unwrap()
    }

    #[test]
    fn quasimomentum_grid_is_symmetric() {
        for n in [1, 2, 7, 8, 16] {
            let q = uniform_quasimomenta(n);
            assert_eq!(q.len(), n);
            BlochBasisSpec::new(40, q, 3).unwrap();
        }
        assert!(BlochBasisSpec::new(40, vec![0.1, 0.3], 3).is_err());
        assert!(BlochBasisSpec::new(6, vec![0.0], 3).is_err());
    }

    #[test]
    fn free_particle_bands_are_folded_parabolas() {
        // vanishingly shallow lattice: E(q) = E_R (q + 2j)²
        let c = cfg(1e-12, 0.0);
        let er = c.params.recoil_energy();
        let basis = BlochBasisSpec::new(32, uniform_quasimomenta(8), 4).unwrap();
        let sol = diagonalize(&c, SpinState::S0, &basis).unwrap();
        for (iq, &q) in sol.quasimomenta.iter().enumerate() {
            let mut free: Vec<f64> = (-3..=3).map(|j| er * (q + 2.0 * j as f64).powi(2)).collect();
            free.sort_by(f64::total_cmp);
            for b in 0..4 {
                assert_relative_eq!(sol.energies[iq][b], free[b], epsilon = 1e-9 * er);
            }
        }
        let zero = sol.quasimomenta.iter().position(|&q| q == 0.0).unwrap();
        assert!(sol.energies[zero][0].abs() < 1e-9 * er);
    }

    #[test]
    fn time_reversal_symmetry() {
        let c = cfg(30.0, 0.6);
        let basis = BlochBasisSpec::for_depth(30.0, 9, 4).unwrap();
        let sol = diagonalize(&c, SpinState::S1, &basis).unwrap();
        let er = c.params.recoil_energy();
        for (iq, &q) in sol.quasimomenta.iter().enumerate() {
            let jq = sol.quasimomenta.iter().position(|&p| (p + q).abs() < 1e-12).unwrap();
            for b in 0..4 {
                assert_relative_eq!(sol.energies[iq][b], sol.energies[jq][b], epsilon = 1e-10 * er);
            }
        }
    }

    #[test]
    fn adding_plane_waves_never_raises_energies() {
        let c = cfg(200.0, 0.3);
        let er = c.params.recoil_energy();
        let mut prev: Option<Vec<f64>> = None;
        for cutoff in [12, 16, 24, 48] {
            let basis = BlochBasisSpec::new(cutoff, uniform_quasimomenta(4), 8).unwrap();
            let h = c.harmonics(SpinState::S0);
            let (e, _) = solve_q(basis.quasimomenta[1], cutoff, 8, &h, er).unwrap();
            if let Some(p) = &prev {
                for (a, b) in e.iter().zip(p) {
                    assert!(*a <= b + 1e-9 * er, "variational bound violated: {a} > {b}");
                }
            }
            prev = Some(e);
        }
    }

    #[test]
    fn harmonic_spacing_at_80_microkelvin() {
        let p = PhysicalParams::cesium(865.9e-9).unwrap();
        let depth = units::microkelvin_to_joule(80.0) / p.recoil_energy();
        let c = cfg(depth, 0.0);
        let sol = diagonalize(&c, SpinState::S0, &BlochBasisSpec::for_depth(depth, 8, 3).unwrap()).unwrap();
        let spacing = (sol.band_center(1) - sol.band_center(0)) / PLANCK;
        assert!((spacing - 110e3).abs() < 0.05 * 110e3, "{spacing}");
    }

    #[test]
    fn bound_count_small_and_monotone() {
        for &u in &[0.05, 0.3] {
            let c = cfg(u, 0.0);
            let basis = BlochBasisSpec::for_depth(u, 8, 2).unwrap();
            assert_eq!(bound_state_count(&c, SpinState::S0, &basis).unwrap(), 1);
        }
        let mut prev = 0;
        for &u in &[10.0, 20.0, 40.0, 80.0, 160.0] {
            let c = cfg(u, 0.0);
            let basis = BlochBasisSpec::for_depth(u, 8, 4).unwrap();
            let n = bound_state_count(&c, SpinState::S0, &basis).unwrap();
            assert!(n > prev, "count {n} at {u} E_R not above {prev}");
            prev = n;
        }
    }

    #[test]
    fn band_widths_shrink_with_depth() {
        let mut prev = vec![f64::INFINITY; 3];
        for &u in &[5.0, 10.0, 20.0, 40.0] {
            let c = cfg(u, 0.0);
            let sol = diagonalize(&c, SpinState::S0, &BlochBasisSpec::for_depth(u, 16, 3).unwrap()).unwrap();
            for b in 0..3 {
                let w = sol.band_width(b);
                assert!(w < prev[b], "band {b} width grew at {u} E_R");
                prev[b] = w;
            }
        }
    }

    #[test]
    fn identical_potentials_give_zero_transition() {
        let c = cfg(50.0, 0.0);
        let basis = BlochBasisSpec::for_depth(50.0, 8, 3).unwrap();
        let s0 = diagonalize(&c, SpinState::S0, &basis).unwrap();
        let s1 = diagonalize(&c, SpinState::S1, &basis).unwrap();
        let t = transition_table(&s0, &s1).unwrap();
        for n in 0..3 {
            let row = t.get(n, n).unwrap();
            assert!(row.center.abs() < 1e-6 && row.width.abs() < 1e-6, "{row:?}");
        }
        assert!(transition_table(&s1, &s0).is_err());
        let other = diagonalize(&c, SpinState::S1, &BlochBasisSpec::for_depth(50.0, 4, 3).unwrap()).unwrap();
        assert!(matches!(transition_table(&s0, &other), Err(Error::Contract(_))));
    }

    #[test]
    fn localized_ground_state_matches_harmonic_gaussian() {
        let c = cfg(600.0, 0.0);
        let sol = diagonalize(&c, SpinState::S0, &BlochBasisSpec::for_depth(600.0, 8, 4).unwrap()).unwrap();
        let grid = RealGrid::centered(c.params.lattice_spacing(), 4, points_per_site(&c, 12.0));
        let set = localized_states(&sol, 0, &LocalizeOptions { bands: 4, allow_unbound: false, grid }).unwrap();
        let x0 = oscillator_size(crate::lattice::depth_to_frequency(c.depth_plus, &c.params), c.params.atom_mass);
        let overlap: Complex64 = grid
            .positions()
            .zip(&set.states[0].amplitudes)
            .map(|(z, a)| a * oscillator::wavefunctions(0, z - set.states[0].center, x0)[0])
            .sum::<Complex64>()
            * grid.step;
        assert!(overlap.norm() >= 0.999, "{}", overlap.norm());
        // orthonormal across bands, alternating parity about the well
        for i in 0..4 {
            for j in 0..4 {
                let s = set.inner(i, &set, j);
                assert!((s - if i == j { 1.0 } else { 0.0 }).norm() < 1e-8, "({i},{j}) {s}");
            }
            let amps = &set.states[i].amplitudes;
            let n = amps.len();
            let parity = if i % 2 == 0 { 1.0 } else { -1.0 };
            // grid is symmetric about the well center z = 0 for θ = 0
            for zi in 1..n / 2 {
                let d = amps[n / 2 + zi] - amps[n / 2 - zi] * parity;
                assert!(d.norm() < 1e-6 * amps.iter().map(|x| x.norm()).fold(0.0, f64::max));
            }
        }
    }

    #[test]
    fn node_count_equals_band_index() {
        let c = cfg(800.0, 0.0);
        let sol = diagonalize(&c, SpinState::S0, &BlochBasisSpec::for_depth(800.0, 8, 6).unwrap()).unwrap();
        let grid = RealGrid::centered(c.params.lattice_spacing(), 2, 512);
        let set = localized_states(&sol, 0, &LocalizeOptions { bands: 6, allow_unbound: false, grid }).unwrap();
        for st in &set.states {
            let peak = st.amplitudes.iter().map(|x| x.norm()).fold(0.0, f64::max);
            let signif: Vec<f64> = st
                .amplitudes
                .iter()
                .filter(|x| x.norm() > 1e-3 * peak)
                .map(|x| x.re)
                .collect();
            let nodes = signif.windows(2).filter(|w| w[0].signum() != w[1].signum()).count();
            assert_eq!(nodes, st.band, "band {}", st.band);
        }
    }

    #[test]
    fn shallow_high_bands_flagged() {
        let c = cfg(20.0, 0.0);
        let sol = diagonalize(&c, SpinState::S0, &BlochBasisSpec::for_depth(20.0, 16, 7).unwrap()).unwrap();
        assert!(sol.is_localizable(0));
        assert!(!sol.is_localizable(6));
        let grid = RealGrid::centered(c.params.lattice_spacing(), 16, 64);
        let bound = sol.bound_count();
        let err = localized_states(&sol, 0, &LocalizeOptions { bands: 7, allow_unbound: false, grid });
        assert!(matches!(err, Err(Error::Range(_))));
        let set = localized_states(&sol, 0, &LocalizeOptions { bands: 7, allow_unbound: true, grid }).unwrap();
        assert!(set.states[6].delocalized);
        assert!(!set.states[0].delocalized);
        assert!(bound < 7);
    }
}
