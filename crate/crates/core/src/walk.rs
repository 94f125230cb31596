//! Spin-dependent quantum walk in a shallow, maximally offset lattice pair.
//!
//! Each S0 well couples through the microwave to the S1 wells on either side,
//! so a continuous resonant drive turns the alternating chain
//! `… S0_j, S1_j, S0_{j+1} …` into a tight-binding lattice with period a/2.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::bands::{localized_states, LocalizeOptions};
use crate::coupling::{franck_condon_matrix, partner_site, well_pair, WellPairOptions};
use crate::error::{Error, Result};
use crate::lattice::{LatticeConfig, SpinState, PLANCK};
use crate::linalg::{hermitian_eigen, CMatrix, CVector};

/// Nearest-neighbour couplings of the lowest band between the two lattices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WalkChain {
    /// `⟨1, right|0, 0⟩` for the S1 well at `+offset`.
    pub right: Complex64,
    /// `⟨1, left|0, 0⟩` for the S1 well at `offset − a`.
    pub left: Complex64,
    /// S1 well position relative to its S0 neighbour on the left, in (0, a).
    pub offset: f64,
    pub lattice_spacing: f64,
    /// Position variances of the S0 and S1 localized states, m².
    pub variance0: f64,
    pub variance1: f64,
    /// Carrier frequency |0,0⟩ → |1,0⟩ relative to the hyperfine splitting, Hz.
    pub carrier: f64,
}

impl WalkChain {
    /// Uniform chain with equal hopping on both sides of every well.
    pub fn uniform(m: f64, lattice_spacing: f64) -> Self {
        Self {
            right: Complex64::new(m, 0.0),
            left: Complex64::new(m, 0.0),
            offset: lattice_spacing / 2.0,
            lattice_spacing,
            variance0: 0.0,
            variance1: 0.0,
            carrier: 0.0,
        }
    }
}

/// Lowest-band couplings between an S0 well and both neighbouring S1 wells.
pub fn walk_chain(cfg: &LatticeConfig) -> Result<WalkChain> {
    let pair = well_pair(
        cfg,
        &WellPairOptions {
            levels: Some(1),
            sites: 8,
            ..WellPairOptions::default()
        },
    )?;
    let a = cfg.params.lattice_spacing();
    let j = partner_site(pair.bands0.well_center, pair.bands1.well_center, a);
    let mut offset = pair.coupling.delta_x;
    // the partner may sit on either side; name the S1 well to the right "right"
    let (right_site, left_site) = if offset > 0.0 { (j, j - 1) } else { (j + 1, j) };
    if offset <= 0.0 {
        offset += a;
    }
    let lo = LocalizeOptions {
        bands: 1,
        allow_unbound: true,
        grid: pair.states0.grid,
    };
    let coupling_to = |site: i64| -> Result<Complex64> {
        let s1 = localized_states(&pair.bands1, site, &lo)?;
        Ok(franck_condon_matrix(&pair.states0, &s1, 0.0)?.elements[(0, 0)])
    };
    Ok(WalkChain {
        right: coupling_to(right_site)?,
        left: coupling_to(left_site)?,
        offset,
        lattice_spacing: a,
        variance0: pair.states0.variance(0),
        variance1: pair.states1.variance(0),
        carrier: (pair.states1.energies[0] - pair.states0.energies[0]) / PLANCK,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WalkResult {
    /// Well positions along the chain, m; even indices are S0 wells.
    pub positions: Vec<f64>,
    pub times: Vec<f64>,
    /// `populations[t][m]`.
    pub populations: Vec<Vec<f64>>,
    pub sigma_x: Vec<f64>,
    pub p0: Vec<f64>,
    /// Largest population seen on the outermost wells.
    pub edge_population: f64,
    /// False if the chain could not be made long enough.
    pub valid: bool,
    pub sites: usize,
}

/// Edge population above which the chain is considered too short.
pub const EDGE_LIMIT: f64 = 1e-4;
/// Largest chain (S0 sites) tried before the result is flagged invalid.
pub const MAX_SITES: usize = 512;

fn run_chain(chain: &WalkChain, sites: usize, bare_rabi: f64, detuning: f64, times: &[f64]) -> Result<WalkResult> {
    let dim = 2 * sites;
    let origin = sites / 2;
    let a = chain.lattice_spacing;
    let positions: Vec<f64> = (0..dim)
        .map(|m| {
            let j = (m / 2) as f64 - origin as f64;
            if m % 2 == 0 { j * a } else { j * a + chain.offset }
        })
        .collect();
    let mut h = CMatrix::zeros(dim, dim);
    for m in 0..dim {
        if m % 2 == 1 {
            h[(m, m)] = Complex64::new(-detuning, 0.0);
            // S1 well m: left neighbour S0 at m − 1 through `right`, right neighbour at m + 1 through `left`
            let v = chain.right * (bare_rabi / 2.0);
            h[(m, m - 1)] = v;
            h[(m - 1, m)] = v.conj();
            if m + 1 < dim {
                let v = chain.left * (bare_rabi / 2.0);
                h[(m, m + 1)] = v;
                h[(m + 1, m)] = v.conj();
            }
        }
    }
    let eig = hermitian_eigen(&h)?;
    let mut psi0 = CVector::zeros(dim);
    psi0[2 * origin] = Complex64::new(1.0, 0.0);
    let mut populations = Vec::with_capacity(times.len());
    let mut sigma_x = Vec::with_capacity(times.len());
    let mut p0 = Vec::with_capacity(times.len());
    let mut edge: f64 = 0.0;
    for &t in times {
        let psi = eig.apply(&psi0, t);
        let norm = psi.norm_squared();
        if (norm - 1.0).abs() > 1e-8 {
            return Err(Error::Integrator(format!("walk norm drifted by {:.3e}", norm - 1.0)));
        }
        let p: Vec<f64> = psi.iter().map(|z| z.norm_sqr()).collect();
        let mean: f64 = p.iter().zip(&positions).map(|(w, x)| w * x).sum();
        let second: f64 = p.iter().zip(&positions).map(|(w, x)| w * x * x).sum();
        let intrinsic: f64 = p
            .iter()
            .enumerate()
            .map(|(m, w)| w * if m % 2 == 0 { chain.variance0 } else { chain.variance1 })
            .sum();
        sigma_x.push((second - mean * mean + intrinsic).max(0.0).sqrt());
        p0.push(p.iter().step_by(2).sum());
        edge = edge.max(p[0] + p[1] + p[dim - 2] + p[dim - 1]);
        populations.push(p);
    }
    Ok(WalkResult {
        positions,
        times: times.to_vec(),
        populations,
        sigma_x,
        p0,
        edge_population: edge,
        valid: edge < EDGE_LIMIT,
        sites,
    })
}

/// Walk from a single S0 well under a continuous drive `detuning` (Hz) away
/// from the carrier, doubling the chain from `min_sites` (at least 64) until
/// the outermost wells stay below `EDGE_LIMIT`.
pub fn quantum_walk(chain: &WalkChain, bare_rabi: f64, detuning: f64, times: &[f64], min_sites: usize) -> Result<WalkResult> {
    if times.windows(2).any(|w| w[1] < w[0]) || times.iter().any(|t| !(*t >= 0.0)) {
        return Err(Error::Domain("times must be non-negative and non-decreasing".into()));
    }
    let mut sites = min_sites.max(64);
    loop {
        let r = run_chain(chain, sites, bare_rabi, detuning, times)?;
        if r.valid || sites >= MAX_SITES {
            return Ok(r);
        }
        sites *= 2;
    }
}

/// Power-law exponent and linear slope of σ_x(t) over `t ≥ from`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BallisticFit {
    pub exponent: f64,
    /// m/s.
    pub slope: f64,
}

pub fn ballistic_fit(times: &[f64], sigma: &[f64], from: f64) -> Result<BallisticFit> {
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(sigma)
        .filter(|(t, s)| **t >= from && **t > 0.0 && **s > 0.0)
        .map(|(t, s)| (*t, *s))
        .collect();
    if pts.len() < 3 {
        return Err(Error::Extraction("fewer than three points in the fit window".into()));
    }
    let n = pts.len() as f64;
    let (lx, ly): (Vec<f64>, Vec<f64>) = pts.iter().map(|(t, s)| (t.ln(), s.ln())).unzip();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    let slope = pts.iter().map(|(t, s)| t * s).sum::<f64>() / pts.iter().map(|(t, _)| t * t).sum::<f64>();
    Ok(BallisticFit {
        exponent: sxy / sxx,
        slope,
    })
}

impl WalkResult {
    /// Peak-to-peak swing of P₀ in `[k·period, (k+1)·period]` relative to
    /// the swing in the first period.
    pub fn visibility(&self, period: f64, k: usize) -> f64 {
        let swing = |lo: f64, hi: f64| {
            let vals: Vec<f64> =
                self.times.iter().zip(&self.p0).filter(|(t, _)| **t >= lo && **t <= hi).map(|(_, p)| *p).collect();
            let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
            max - min
        };
        swing(k as f64 * period, (k + 1) as f64 * period) / swing(0.0, period)
    }

    pub fn spin_populations(&self) -> (Vec<f64>, Vec<f64>) {
        (self.p0.clone(), self.p0.iter().map(|p| 1.0 - p).collect())
    }
}

/// Spin of chain index `m`.
pub fn chain_spin(m: usize) -> SpinState {
    if m % 2 == 0 { SpinState::S0 } else { SpinState::S1 }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_coupling_is_stationary() {
        let chain = WalkChain { variance0: 1e-16, variance1: 1e-16, ..WalkChain::uniform(0.3, 433e-9) };
        let times: Vec<f64> = (0..20).map(|i| i as f64 * 1e-4).collect();
        let r = quantum_walk(&chain, 0.0, 0.0, &times, 64).unwrap();
        assert!(r.sigma_x.iter().all(|s| (s - 1e-8).abs() < 1e-20));
        assert!(r.p0.iter().all(|p| *p == 1.0));
        assert!(r.valid);
        assert!((r.sigma_x[0].powi(2) - chain.variance0).abs() < 1e-28);
    }

    #[test]
    fn enlarges_until_edges_are_quiet() {
        let chain = WalkChain::uniform(0.3, 433e-9);
        // hopping 1.5 kHz; after 3 ms the front has moved ~2·2π·1.5e3·3e-3 ≈ 57 wells
        let times: Vec<f64> = (0..=30).map(|i| i as f64 * 1e-4).collect();
        let r = quantum_walk(&chain, 10e3, 0.0, &times, 64).unwrap();
        assert!(r.valid && r.sites > 64, "{} {}", r.sites, r.edge_population);
        for p in &r.populations {
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-8);
        }
    }
}
