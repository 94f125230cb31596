//! Microwave sideband cooling: a coherent |1,n⟩ → |0,n−1⟩ drive together
//! with optical repumping back to |1⟩.
//!
//! The repump is adiabatically eliminated. Every line |0,n⟩ ↔ |1,n′⟩ then
//! becomes an incoherent transfer at the rate `W = Ω²Γ/(Γ² + 4Δ²)` (Ω, Δ
//! angular), and |0,n⟩ returns to |1,n′⟩ at rate `Γ·q[n′][n]`.

use std::f64::consts::TAU;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::coupling::{effective_lamb_dicke, WellPair};
use crate::dynamics::DriveHamiltonian;
use crate::ensembles::ThermalEnsemble;
use crate::error::{Error, Result};
use crate::lattice::{cesium, SpinState, PLANCK};
use crate::linalg::{expm_real, stationary_vector};

/// Column-sum defect of the redistribution matrix allowed before truncation.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-6;
/// Largest basis tried when `CoolingParams::levels` is left automatic.
pub const MAX_AUTO_LEVELS: usize = 16;
/// Emission-angle quadrature points on cos θ ∈ [−1, 1].
const ANGLE_POINTS: usize = 65;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoolingParams {
    /// Bare microwave Rabi frequency, Hz.
    pub bare_rabi: f64,
    /// Drive detuning from the |1,1⟩ → |0,0⟩ line, Hz.
    pub detuning: f64,
    /// Optical pumping rate out of |0⟩, 1/s.
    pub repump_rate: f64,
    /// Photon-recoil Lamb-Dicke factor of the repump, averaged over the
    /// emission pattern; `None` uses the D2 recoil at the trap frequency.
    pub optical_eta: Option<f64>,
    /// s.
    pub duration: f64,
    /// Vibrational levels kept per spin; `None` keeps the largest basis (up
    /// to `MAX_AUTO_LEVELS`) whose repump columns stay normalized.
    pub levels: Option<usize>,
    /// Trajectory samples over `duration`.
    pub samples: usize,
}

impl Default for CoolingParams {
    fn default() -> Self {
        Self {
            bare_rabi: 5e3,
            detuning: 0.0,
            repump_rate: 7e4,
            optical_eta: None,
            duration: 20e-3,
            levels: None,
            samples: 201,
        }
    }
}

impl CoolingParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.bare_rabi >= 0.0) || !(self.repump_rate > 0.0) || !(self.duration > 0.0) {
            return Err(Error::Config("need Ω₀ ≥ 0, repump rate > 0 and duration > 0".into()));
        }
        if self.optical_eta.is_some_and(|e| !(e >= 0.0)) {
            return Err(Error::Config("optical η must be non-negative".into()));
        }
        if self.levels.is_some_and(|l| l < 2) || self.samples < 2 || !self.detuning.is_finite() {
            return Err(Error::Config("need at least 2 levels, 2 samples and a finite detuning".into()));
        }
        Ok(())
    }
}

/// Emission-averaged Lamb-Dicke factor of the D2 line for a trap of
/// frequency `axial_frequency`: √(2/5)·k·x0.
pub fn default_optical_eta(axial_frequency: f64, mass: f64) -> Result<f64> {
    let x0 = effective_lamb_dicke(0.0, axial_frequency, mass)?.x0;
    Ok((0.4f64).sqrt() * TAU / cesium::D2_WAVELENGTH * x0)
}

fn trap_frequency(pair: &WellPair) -> Result<f64> {
    let e = &pair.states0.energies;
    if e.len() < 2 {
        return Err(Error::Range("need two S0 levels for the trap frequency".into()));
    }
    Ok((e[1] - e[0]) / PLANCK)
}

/// `q[n′][n]`, the probability that repumping takes |0,n⟩ to |1,n′⟩: the
/// displaced-well projection with a photon-recoil kick, averaged over the
/// dipole emission pattern. The lowest `levels` S0 columns are returned with
/// rows beyond `levels` folded into the last row.
pub fn redistribution_matrix(pair: &WellPair, optical_eta: f64, levels: usize) -> Result<DMatrix<f64>> {
    let q = projections(pair, optical_eta, levels)?;
    let rows = q.nrows();
    for n in 0..levels {
        let defect = 1.0 - q.column(n).sum();
        if defect.abs() > NORMALIZATION_TOLERANCE {
            return Err(Error::Truncation(format!(
                "repump from |0,{n}⟩ keeps {:.3e} of its weight outside the {rows} S1 levels",
                defect
            )));
        }
    }
    let mut out = DMatrix::<f64>::zeros(levels, levels);
    for n in 0..levels {
        for np in 0..levels - 1 {
            out[(np, n)] = q[(np, n)];
        }
        out[(levels - 1, n)] = 1.0 - out.column(n).rows(0, levels - 1).sum();
    }
    Ok(out)
}

/// Largest basis, at most `max`, whose lowest columns all pass the
/// normalization check of `redistribution_matrix`.
pub fn supported_levels(pair: &WellPair, optical_eta: f64, max: usize) -> Result<usize> {
    let cols = max.min(pair.states0.len()).min(pair.states1.len());
    let q = projections(pair, optical_eta, cols)?;
    let l = (0..cols).take_while(|&n| (1.0 - q.column(n).sum()).abs() <= NORMALIZATION_TOLERANCE).count();
    if l < 2 {
        return Err(Error::Truncation(format!("only {l} repump columns stay normalized")));
    }
    Ok(l)
}

// Unfolded q over every S1 level for the lowest `levels` S0 columns.
fn projections(pair: &WellPair, optical_eta: f64, levels: usize) -> Result<DMatrix<f64>> {
    let s0 = &pair.states0;
    let s1 = &pair.states1;
    if !s0.grid.matches(&s1.grid) {
        return Err(Error::Contract("localized states on different grids".into()));
    }
    if levels > s0.len() || levels > s1.len() {
        return Err(Error::Range(format!("{levels} levels requested, {}×{} available", s0.len(), s1.len())));
    }
    if !(optical_eta >= 0.0) {
        return Err(Error::Domain("optical η must be non-negative".into()));
    }
    let x0 = effective_lamb_dicke(0.0, trap_frequency(pair)?, pair.bands0.mass)?.x0;
    let kappa = optical_eta / ((0.4f64).sqrt() * x0);
    let grid = s0.grid;
    let origin = s0.states[0].center;
    let rows = s1.len();
    // Simpson weights for the (3/8)(1 + u²) emission pattern on u = cos θ
    let (us, ws): (Vec<f64>, Vec<f64>) = if kappa == 0.0 {
        (vec![0.0], vec![1.0])
    } else {
        let h = 2.0 / (ANGLE_POINTS - 1) as f64;
        (0..ANGLE_POINTS)
            .map(|i| {
                let u = -1.0 + i as f64 * h;
                let simpson = if i == 0 || i == ANGLE_POINTS - 1 { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
                (u, simpson * h / 3.0 * 0.375 * (1.0 + u * u))
            })
            .unzip()
    };
    let mut q = DMatrix::<f64>::zeros(rows, levels);
    for (u, w) in us.iter().zip(&ws) {
        let k = kappa * u;
        let kick: Vec<Complex64> = (0..grid.len)
            .map(|i| Complex64::from_polar(1.0, k * (grid.position(i) - origin)))
            .collect();
        for n in 0..levels {
            let kicked: Vec<Complex64> =
                s0.states[n].amplitudes.iter().zip(&kick).map(|(a, e)| a * e).collect();
            for np in 0..rows {
                let amp: Complex64 =
                    s1.states[np].amplitudes.iter().zip(&kicked).map(|(b, a)| b.conj() * a).sum::<Complex64>()
                        * grid.step;
                q[(np, n)] += w * amp.norm_sqr();
            }
        }
    }
    Ok(q)
}

/// Truncated rate model of one cooling configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct CoolingModel {
    /// `rates[n′][n]`: transfer rate |1,n′⟩ ↔ |0,n⟩, 1/s.
    pub rates: DMatrix<f64>,
    /// `q[n′][n]`.
    pub redistribution: DMatrix<f64>,
    pub repump_rate: f64,
    pub optical_eta: f64,
    /// Sideband Rabi frequencies Ω₀|M[n−1][n]| of |1,n⟩ → |0,n−1⟩, Hz.
    pub sideband_rabi: Vec<f64>,
}

impl CoolingModel {
    pub fn levels(&self) -> usize {
        self.rates.nrows()
    }

    /// Heating of the vibrational ground state per repump, Σ_{n′>0} q[n′][0].
    pub fn ground_heating(&self) -> f64 {
        1.0 - self.redistribution[(0, 0)]
    }

    /// Generator `A` of dP/dt = A·P with P = (S0 levels, S1 levels).
    pub fn generator(&self) -> DMatrix<f64> {
        let l = self.levels();
        let mut a = DMatrix::<f64>::zeros(2 * l, 2 * l);
        for np in 0..l {
            for n in 0..l {
                let w = self.rates[(np, n)];
                // |1,n′⟩ ↔ |0,n⟩
                a[(n, l + np)] += w;
                a[(l + np, l + np)] -= w;
                a[(l + np, n)] += w;
                a[(n, n)] -= w;
                let r = self.repump_rate * self.redistribution[(np, n)];
                a[(l + np, n)] += r;
                a[(n, n)] -= r;
            }
        }
        a
    }

    /// S1 populations after pumping everything left in S0 back to S1.
    pub fn after_repump(&self, p: &DVector<f64>) -> DVector<f64> {
        let l = self.levels();
        let p0 = p.rows(0, l);
        let mut out = p.rows(l, l).into_owned();
        out += &self.redistribution * p0;
        out
    }
}

/// Rate model for a well pair driven on the |1,1⟩ → |0,0⟩ sideband.
pub fn cooling_model(pair: &WellPair, p: &CoolingParams) -> Result<CoolingModel> {
    p.validate()?;
    let eta = match p.optical_eta {
        Some(e) => e,
        None => default_optical_eta(trap_frequency(pair)?, pair.bands0.mass)?,
    };
    let levels = match p.levels {
        Some(l) => l,
        None => supported_levels(pair, eta, MAX_AUTO_LEVELS)?,
    };
    let q = redistribution_matrix(pair, eta, levels)?;
    let h = DriveHamiltonian::from_pair(pair, 0.0)?.truncated(levels, levels)?;
    let drive = h.line_frequency(0, 1)? + p.detuning;
    let gamma = p.repump_rate;
    let rates = DMatrix::from_fn(levels, levels, |np, n| {
        let omega = TAU * p.bare_rabi * h.coupling[(np, n)].norm();
        let delta = TAU * (h.line_frequency(n, np).unwrap() - drive);
        omega * omega * gamma / (gamma * gamma + 4.0 * delta * delta)
    });
    let sideband_rabi = (0..levels)
        .map(|n| if n == 0 { 0.0 } else { p.bare_rabi * h.coupling[(n, n - 1)].norm() })
        .collect();
    Ok(CoolingModel {
        rates,
        redistribution: q,
        repump_rate: gamma,
        optical_eta: eta,
        sideband_rabi,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoolingResult {
    pub times: Vec<f64>,
    /// `populations[t]` over (S0 levels, S1 levels).
    pub populations: Vec<Vec<f64>>,
    /// Mean vibrational number after a final repump, per time.
    pub nbar: Vec<f64>,
    /// Ground-state population after a final repump, per time.
    pub ground: Vec<f64>,
    pub final_nbar: f64,
    pub ground_population: f64,
    /// n̄ of the stationary state of the rate model.
    pub steady_state_nbar: f64,
    /// |dn̄/dt| < 1e-4·n̄ per ms at the final time.
    pub steady: bool,
    /// False if the run had to be extended past 10× the duration without becoming steady.
    pub converged: bool,
}

fn repumped_stats(model: &CoolingModel, p: &DVector<f64>) -> (f64, f64) {
    let s1 = model.after_repump(p);
    let total = s1.sum();
    let nbar = s1.iter().enumerate().map(|(n, x)| n as f64 * x).sum::<f64>() / total;
    (nbar, s1[0] / total)
}

/// Evolve a thermal ensemble prepared in S1 under simultaneous drive and repump.
pub fn cool(initial: &ThermalEnsemble, model: &CoolingModel, p: &CoolingParams) -> Result<CoolingResult> {
    p.validate()?;
    let l = model.levels();
    if p.levels.is_some_and(|want| want != l) {
        return Err(Error::Contract(format!("model has {l} levels, parameters ask for {:?}", p.levels)));
    }
    let mut start = DVector::<f64>::zeros(2 * l);
    for (n, w) in initial.populations.iter().enumerate() {
        start[l + n.min(l - 1)] += w;
    }
    let a = model.generator();
    let dt = p.duration / (p.samples - 1) as f64;
    let step = expm_real(&(&a * dt));
    let steady_at = |x: &DVector<f64>| {
        let (nbar, _) = repumped_stats(model, x);
        let rate = repumped_stats(model, &(x + &a * x * 1e-6)).0 - nbar;
        // per-second slope against 0.1·n̄ per second (1e-4·n̄ per ms)
        (rate / 1e-6).abs() <= 0.1 * nbar + 1e-12
    };
    let mut times = Vec::new();
    let mut populations = Vec::new();
    let mut nbar = Vec::new();
    let mut ground = Vec::new();
    let mut x = start;
    let mut t = 0.0;
    let mut k = 0usize;
    let limit = 10 * (p.samples - 1);
    loop {
        let total = x.sum();
        if (total - 1.0).abs() > 1e-8 {
            return Err(Error::Integrator(format!("population drifted by {:.3e}", total - 1.0)));
        }
        let (nb, g) = repumped_stats(model, &x);
        times.push(t);
        populations.push(x.iter().copied().collect());
        nbar.push(nb);
        ground.push(g);
        if k >= p.samples - 1 && (steady_at(&x) || k >= limit) {
            break;
        }
        x = &step * &x;
        t += dt;
        k += 1;
    }
    let steady = steady_at(&x);
    let stationary = stationary_vector(&a)?;
    let (steady_state_nbar, _) = repumped_stats(model, &stationary);
    Ok(CoolingResult {
        final_nbar: *nbar.last().unwrap(),
        ground_population: *ground.last().unwrap(),
        times,
        populations,
        nbar,
        ground,
        steady_state_nbar,
        steady,
        converged: steady,
    })
}

/// Populations of one spin at trajectory index `i`.
pub fn spin_levels(result: &CoolingResult, i: usize, s: SpinState) -> &[f64] {
    let l = result.populations[i].len() / 2;
    match s {
        SpinState::S0 => &result.populations[i][..l],
        SpinState::S1 => &result.populations[i][l..],
    }
}
