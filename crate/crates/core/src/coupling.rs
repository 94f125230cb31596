//! Franck–Condon couplings between the vibrational states of the two
//! displaced spin potentials, and the displaced harmonic-oscillator limit.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_factorial;

use crate::bands::{
    diagonalize, localized_states, points_per_site, uniform_quasimomenta, BandStructure, BlochBasisSpec,
    LocalizeOptions, LocalizedSet, RealGrid,
};
use crate::error::{Error, Result};
use crate::lattice::{LatticeConfig, SpinState, HBAR};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambDicke {
    /// |η_eff| = Δx/(2x0).
    pub eta_eff: f64,
    /// Ground-state size √(ħ/2mω), m.
    pub x0: f64,
    /// Momentum width ħ/(2x0), kg·m/s.
    pub p0: f64,
}

/// Effective Lamb-Dicke parameter for a displacement `delta_x` (m) in a trap
/// of frequency `omega_ax` (Hz).
pub fn effective_lamb_dicke(delta_x: f64, omega_ax: f64, mass: f64) -> Result<LambDicke> {
    if !(omega_ax > 0.0) || !(mass > 0.0) {
        return Err(Error::Domain(format!("trap frequency {omega_ax} and mass {mass} must be positive")));
    }
    let x0 = (HBAR / (2.0 * mass * 2.0 * std::f64::consts::PI * omega_ax)).sqrt();
    Ok(LambDicke {
        eta_eff: delta_x.abs() / (2.0 * x0),
        x0,
        p0: HBAR / (2.0 * x0),
    })
}

/// Generalized Laguerre polynomial L_n^(k)(x) by three-term recurrence.
fn laguerre(n: u32, k: f64, x: f64) -> f64 {
    let mut prev = 1.0;
    if n == 0 {
        return prev;
    }
    let mut cur = 1.0 + k - x;
    for m in 1..n {
        let m = m as f64;
        let next = ((2.0 * m + 1.0 + k - x) * cur - (m + k) * prev) / (m + 1.0);
        prev = cur;
        cur = next;
    }
    cur
}

/// `⟨n′|D(α)|n⟩` for the displaced harmonic oscillator,
/// `√(n!/n′!) α^(n′−n) e^(−α²/2) L_n^(n′−n)(α²)` for n′ ≥ n and
/// `(−1)^(n−n′)` times the transposed value otherwise.
pub fn ho_overlap(n: i64, nprime: i64, alpha: f64) -> Result<f64> {
    if n < 0 || nprime < 0 {
        return Err(Error::Domain(format!("negative quantum number ({n}, {nprime})")));
    }
    if !alpha.is_finite() {
        return Err(Error::Domain(format!("displacement parameter {alpha} not finite")));
    }
    if nprime < n {
        let sign = if (n - nprime) % 2 == 0 { 1.0 } else { -1.0 };
        return Ok(sign * ho_overlap(nprime, n, alpha)?);
    }
    let d = (nprime - n) as u32;
    if d > 0 && alpha == 0.0 {
        return Ok(0.0);
    }
    let lag = laguerre(n as u32, d as f64, alpha * alpha);
    let mut log_mag = 0.5 * (ln_factorial(n as u64) - ln_factorial(nprime as u64)) - alpha * alpha / 2.0;
    if d > 0 {
        log_mag += d as f64 * alpha.abs().ln();
    }
    let sign = if alpha < 0.0 && d % 2 == 1 { -1.0 } else { 1.0 };
    Ok(sign * log_mag.exp() * lag)
}

/// Franck–Condon matrix `M[n′][n] = ⟨1,n′|0,n⟩`, stored with rows indexed
/// by the S1 level and columns by the S0 level.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingMatrix {
    /// Centre-to-centre displacement of the coupled wells, m.
    pub delta_x: f64,
    /// Ω₀, Hz.
    pub bare_rabi: f64,
    pub elements: DMatrix<Complex64>,
}

impl CouplingMatrix {
    pub fn dims(&self) -> (usize, usize) {
        (self.elements.nrows(), self.elements.ncols())
    }

    /// `⟨1,n′|0,n⟩`.
    pub fn get(&self, n: usize, nprime: usize) -> Option<Complex64> {
        (nprime < self.elements.nrows() && n < self.elements.ncols()).then(|| self.elements[(nprime, n)])
    }

    pub fn abs(&self, n: usize, nprime: usize) -> Option<f64> {
        self.get(n, nprime).map(|z| z.norm())
    }

    /// Σ_n |M[n′][n]|² for each S1 level n′.
    pub fn row_weights(&self) -> Vec<f64> {
        self.elements.row_iter().map(|r| r.iter().map(|z| z.norm_sqr()).sum()).collect()
    }

    /// Σ_n′ |M[n′][n]|² for each S0 level n.
    pub fn column_weights(&self) -> Vec<f64> {
        self.elements.column_iter().map(|c| c.iter().map(|z| z.norm_sqr()).sum()).collect()
    }

    pub fn with_bare_rabi(mut self, bare_rabi: f64) -> Self {
        self.bare_rabi = bare_rabi;
        self
    }
}

/// Largest edge amplitude tolerated, relative to the state's peak.
pub const EDGE_TOLERANCE: f64 = 1e-6;

fn edge_ratio(amps: &[Complex64]) -> f64 {
    let peak = amps.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let edge = amps.first().map_or(0.0, |z| z.norm()).max(amps.last().map_or(0.0, |z| z.norm()));
    if peak > 0.0 { edge / peak } else { 0.0 }
}

/// `M[n′][n] = Σ conj(ψ₁,n′)·ψ₀,n·dz` on a shared grid.
///
/// Localized states must decay to `EDGE_TOLERANCE` of their peak at the
/// grid boundary; states flagged delocalized are exempt.
pub fn franck_condon_matrix(states0: &LocalizedSet, states1: &LocalizedSet, bare_rabi: f64) -> Result<CouplingMatrix> {
    if states0.spin != SpinState::S0 || states1.spin != SpinState::S1 {
        return Err(Error::Contract("Franck–Condon matrix needs S0 then S1 states".into()));
    }
    if !states0.grid.matches(&states1.grid) {
        return Err(Error::Contract("localized states live on different grids".into()));
    }
    for set in [states0, states1] {
        for st in set.states.iter().filter(|s| !s.delocalized) {
            let r = edge_ratio(&st.amplitudes);
            if r > EDGE_TOLERANCE {
                return Err(Error::Contract(format!(
                    "{:?} band {} reaches the grid edge with relative amplitude {r:.2e}",
                    set.spin, st.band
                )));
            }
        }
    }
    let elements = DMatrix::from_fn(states1.len(), states0.len(), |r, c| states1.inner(r, states0, c));
    let delta_x = match (states1.states.first(), states0.states.first()) {
        (Some(a), Some(b)) => a.center - b.center,
        _ => 0.0,
    };
    Ok(CouplingMatrix {
        delta_x,
        bare_rabi,
        elements,
    })
}

/// Weak-drive Rabi frequency Ω₀·|M[n′][n]|, Hz.
pub fn rabi_frequency(n: usize, nprime: usize, m: &CouplingMatrix) -> Result<f64> {
    m.abs(n, nprime).map(|a| m.bare_rabi * a).ok_or_else(|| {
        let (r, c) = m.dims();
        Error::Range(format!("transition ({n} → {nprime}) outside the {c}×{r} coupling matrix"))
    })
}

/// Same-quasimomentum Bloch overlaps `⟨1,n′,q|0,n,q⟩` at grid index `iq`.
pub fn bloch_coupling(sol0: &BandStructure, sol1: &BandStructure, iq: usize) -> Result<DMatrix<Complex64>> {
    if sol0.cutoff != sol1.cutoff || sol0.quasimomenta.len() != sol1.quasimomenta.len() {
        return Err(Error::Contract("band structures use different bases".into()));
    }
    if iq >= sol0.quasimomenta.len() {
        return Err(Error::Range(format!("quasimomentum index {iq} out of range")));
    }
    Ok(sol1.coefficients[iq].adjoint() * &sol0.coefficients[iq])
}

/// Options for building both spin solutions and their coupling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WellPairOptions {
    /// Levels per spin; `None` keeps every bound level plus four above the barrier.
    pub levels: Option<usize>,
    /// Samples per harmonic ground-state size on the real-space grid.
    pub samples_per_x0: f64,
    /// Initial number of lattice periods covered by the grid.
    pub sites: usize,
    pub bare_rabi: f64,
}

impl Default for WellPairOptions {
    fn default() -> Self {
        Self {
            levels: None,
            samples_per_x0: 12.0,
            sites: 4,
            bare_rabi: 0.0,
        }
    }
}

/// Band structures, localized states and the coupling matrix for the S0
/// well at site 0 and the nearest S1 well.
#[derive(Debug, Clone)]
pub struct WellPair {
    pub bands0: BandStructure,
    pub bands1: BandStructure,
    pub states0: LocalizedSet,
    pub states1: LocalizedSet,
    pub coupling: CouplingMatrix,
    /// Site index of the S1 well paired with S0 site 0.
    pub partner_site: i64,
}

impl WellPair {
    /// Level energies per spin (band centres), J.
    pub fn energies(&self, s: SpinState) -> &[f64] {
        match s {
            SpinState::S0 => &self.states0.energies,
            SpinState::S1 => &self.states1.energies,
        }
    }
}

/// S1 site whose well center lies in (−a/2, a/2] relative to the S0 well of site 0.
pub fn partner_site(c0: f64, c1: f64, a: f64) -> i64 {
    let d = c1 - c0;
    let mut j = (-(d / a)).round() as i64;
    let mut rel = d + j as f64 * a;
    if rel <= -a / 2.0 + 1e-9 * a {
        j += 1;
        rel += a;
    }
    if rel > a / 2.0 + 1e-9 * a {
        j -= 1;
    }
    j
}

pub fn well_pair(cfg: &LatticeConfig, opts: &WellPairOptions) -> Result<WellPair> {
    let er = cfg.params.recoil_energy();
    let a = cfg.params.lattice_spacing();
    let deepest = cfg.depth_plus * cfg.depth_ratio.max(1.0) / er;
    let mut sites = opts.sites.max(2);
    loop {
        let nq = (2 * sites).max(8);
        let levels = match opts.levels {
            Some(l) => l,
            None => {
                let probe = BlochBasisSpec::for_depth(deepest, 1, 4)?;
                let b0 = crate::bands::bound_state_count(cfg, SpinState::S0, &probe)?;
                let b1 = crate::bands::bound_state_count(cfg, SpinState::S1, &probe)?;
                b0.max(b1) + 4
            }
        };
        let basis = BlochBasisSpec::for_depth(deepest, nq, levels)?;
        let bands0 = diagonalize(cfg, SpinState::S0, &basis)?;
        let bands1 = diagonalize(cfg, SpinState::S1, &basis)?;
        let grid = RealGrid::centered(a, sites, points_per_site(cfg, opts.samples_per_x0));
        let lo = LocalizeOptions {
            bands: levels,
            allow_unbound: true,
            grid,
        };
        let states0 = localized_states(&bands0, 0, &lo)?;
        let j = partner_site(bands0.well_center, bands1.well_center, a);
        let states1 = localized_states(&bands1, j, &lo)?;
        match franck_condon_matrix(&states0, &states1, opts.bare_rabi) {
            Ok(coupling) => {
                return Ok(WellPair {
                    bands0,
                    bands1,
                    states0,
                    states1,
                    coupling,
                    partner_site: j,
                })
            }
            Err(Error::Contract(_)) if sites < 64 => sites *= 2,
            Err(e) => return Err(e),
        }
    }
}

/// Convenience: coupling matrix only.
pub fn coupling_matrix(cfg: &LatticeConfig, levels: Option<usize>, bare_rabi: f64) -> Result<CouplingMatrix> {
    well_pair(
        cfg,
        &WellPairOptions {
            levels,
            bare_rabi,
            ..WellPairOptions::default()
        },
    )
    .map(|p| p.coupling)
}

/// Quasimomentum grid helper re-exported for callers building Bloch-basis dynamics.
pub fn default_quasimomenta(n: usize) -> Vec<f64> {
    uniform_quasimomenta(n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{PhysicalParams, PotentialSign, SpinWeights};
    use crate::oscillator;
    use approx::assert_relative_eq;

    #[test]
    fn lamb_dicke_examples() {
        let m = crate::lattice::cesium::MASS;
        let ld = effective_lamb_dicke(0.0, 110e3, m).unwrap();
        assert_eq!(ld.eta_eff, 0.0);
        assert!((ld.x0 - 18.6e-9).abs() < 0.1e-9, "{}", ld.x0);
        let ld = effective_lamb_dicke(24e-9, 110e3, m).unwrap();
        assert!((ld.eta_eff - 0.645).abs() < 0.003, "{}", ld.eta_eff);
        assert_relative_eq!(ld.p0, HBAR / (2.0 * ld.x0));
        assert!(effective_lamb_dicke(1e-9, 0.0, m).is_err());
    }

    #[test]
    fn ho_overlap_closed_forms() {
        let a = 0.645;
        assert_relative_eq!(ho_overlap(0, 0, a).unwrap(), (-a * a / 2.0).exp(), epsilon = 1e-15);
        assert!((ho_overlap(0, 0, a).unwrap() - 0.812).abs() < 1e-3);
        assert_relative_eq!(ho_overlap(0, 1, a).unwrap(), a * (-a * a / 2.0).exp(), epsilon = 1e-15);
        assert!((ho_overlap(0, 1, a).unwrap() - 0.524).abs() < 1e-3);
        assert_relative_eq!(ho_overlap(1, 1, 1.0).unwrap(), 0.0, epsilon = 1e-15);
        assert_relative_eq!(ho_overlap(1, 1, 0.3).unwrap(), (1.0 - 0.09) * (-0.045f64).exp(), epsilon = 1e-15);
        for n in 0..8 {
            for np in 0..8 {
                assert_eq!(ho_overlap(n, np, 0.0).unwrap(), if n == np { 1.0 } else { 0.0 });
            }
        }
        assert!(matches!(ho_overlap(-1, 0, 0.1), Err(Error::Domain(_))));
    }

    #[test]
    fn ho_overlap_matches_quadrature_of_displaced_states() {
        // ⟨n′|D(α)|n⟩ = ∫ φ_n′(x) φ_n(x − Δx) dx with α = Δx/(2x0)
        let x0 = 1.0;
        let dx = 0.004;
        for &alpha in &[0.3, 0.645, 1.4] {
            let shift = 2.0 * alpha * x0;
            for n in 0..6 {
                for np in 0..6 {
                    let s: f64 = (-4000..=4000)
                        .map(|i| {
                            let x = i as f64 * dx;
                            oscillator::wavefunctions(6, x, x0)[np] * oscillator::wavefunctions(6, x - shift, x0)[n]
                        })
                        .sum::<f64>()
                        * dx;
                    assert!((s - ho_overlap(n as i64, np as i64, alpha).unwrap()).abs() < 1e-10, "({n},{np}) α={alpha}");
                }
            }
        }
    }

    #[test]
    fn ho_overlap_stable_at_high_index() {
        for &alpha in &[0.2, 1.0, 3.0] {
            let rows: Vec<f64> = (0..=300).map(|np| ho_overlap(60, np, alpha).unwrap().powi(2)).collect();
            let total: f64 = rows.iter().sum();
            assert!(rows.iter().all(|v| v.is_finite()));
            assert!((total - 1.0).abs() < 1e-9, "α={alpha} Σ={total}");
        }
    }

    fn cfg(depth_er: f64, theta: f64) -> LatticeConfig {
        let p = PhysicalParams::cesium(865.9e-9).unwrap();
        LatticeConfig::new(p, theta, depth_er * p.recoil_energy(), 1.0, SpinWeights::pure(), PotentialSign::Attractive)
            .unwrap()
    }

    #[test]
    fn identical_potentials_give_identity() {
        let c = cfg(300.0, 0.0);
        let m = coupling_matrix(&c, Some(6), 60e3).unwrap();
        for r in 0..6 {
            for col in 0..6 {
                let want = if r == col { 1.0 } else { 0.0 };
                assert!((m.elements[(r, col)] - want).norm() < 1e-10, "({r},{col}) {}", m.elements[(r, col)]);
            }
        }
        assert_relative_eq!(rabi_frequency(0, 0, &m).unwrap(), 60e3, max_relative = 1e-10);
        assert!(rabi_frequency(0, 9, &m).is_err());
    }

    #[test]
    fn grids_must_match() {
        let c = cfg(300.0, 0.3);
        let p = well_pair(&c, &WellPairOptions { levels: Some(3), ..Default::default() }).unwrap();
        let mut other = p.states1.clone();
        other.grid.start += other.grid.step * 0.5;
        assert!(matches!(franck_condon_matrix(&p.states0, &other, 1.0), Err(Error::Contract(_))));
        // a grid that clips the states fails the edge check
        let grid = RealGrid::centered(c.params.lattice_spacing(), 1, 256);
        let lo = LocalizeOptions { bands: 3, allow_unbound: false, grid };
        let s0 = localized_states(&p.bands0, 0, &lo).unwrap();
        let s1 = localized_states(&p.bands1, p.partner_site, &lo).unwrap();
        assert!(matches!(franck_condon_matrix(&s0, &s1, 1.0), Err(Error::Contract(_))));
    }

    #[test]
    fn partner_site_wraps_into_half_open_cell() {
        let a = 1.0;
        assert_eq!(partner_site(0.0, 0.2, a), 0);
        assert_eq!(partner_site(0.0, 0.5, a), 0);
        assert_eq!(partner_site(0.0, -0.5, a), 1);
        assert_eq!(partner_site(0.1, -0.7, a), 1);
    }
}
