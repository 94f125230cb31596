use std::f64::consts::PI;
use std::path::Path;

use mwlattice::bands::{diagonalize, transition_table};
use mwlattice::cooling::{cool, cooling_model, redistribution_matrix, CoolingParams};
use mwlattice::coupling::well_pair;
use mwlattice::dynamics::{rabi_trace, uniform_times, DriveHamiltonian, RabiTrace};
use mwlattice::ensembles::{
    beat_thermometry, ensemble_spectrum, line_shape, node_range, spectrum_thermometry, temperature_from_nbar, DepthNodes,
};
use mwlattice::lattice::{displacement, SpinState, PLANCK};
use mwlattice::walk::{ballistic_fit, quantum_walk, walk_chain};
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::config::{grid, parse_scan, Method, Model, RunConfig};
use crate::error::CliError;
use crate::model;
use crate::output::{Cell, Table};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::Subcommand)]
pub enum Command {
    /// Bloch bands of both spin lattices.
    Bandstructure,
    /// Zone-averaged line centres and widths.
    Transitions,
    /// Franck–Condon matrix, optionally over a polarization-angle scan.
    Couplings,
    /// Rabi oscillation of one vibrational level.
    Rabi,
    /// Transfer spectrum of a thermal, inhomogeneous ensemble.
    Spectrum,
    /// Sideband cooling trajectory.
    Cool,
    /// Temperature from a spectrum or carrier-trace CSV.
    Thermometry,
    /// Quantum walk in the shallow lattice.
    Walk,
    /// Repeat another subcommand over a parameter grid.
    Sweep,
}

impl Command {
    pub const ALL: [Command; 9] = [
        Command::Bandstructure,
        Command::Transitions,
        Command::Couplings,
        Command::Rabi,
        Command::Spectrum,
        Command::Cool,
        Command::Thermometry,
        Command::Walk,
        Command::Sweep,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Bandstructure => "bandstructure",
            Command::Transitions => "transitions",
            Command::Couplings => "couplings",
            Command::Rabi => "rabi",
            Command::Spectrum => "spectrum",
            Command::Cool => "cool",
            Command::Thermometry => "thermometry",
            Command::Walk => "walk",
            Command::Sweep => "sweep",
        }
    }

    pub fn from_name(s: &str) -> Result<Self, CliError> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| CliError::Schema(format!("unknown subcommand `{s}`")))
    }
}

/// Result of one subcommand before anything is written.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub table: Option<Table>,
    pub summary: Value,
    /// Set when the result is flagged invalid (exit 4).
    pub invalid: Option<String>,
}

impl Outcome {
    fn ok(table: Table, summary: Value) -> Self {
        Self {
            table: Some(table),
            summary,
            invalid: None,
        }
    }
}

pub fn run_command(cmd: Command, cfg: &RunConfig) -> Result<Outcome, CliError> {
    match cmd {
        Command::Bandstructure => bandstructure(cfg),
        Command::Transitions => transitions(cfg),
        Command::Couplings => couplings(cfg),
        Command::Rabi => rabi(cfg),
        Command::Spectrum => spectrum(cfg),
        Command::Cool => cooling(cfg),
        Command::Thermometry => thermometry(cfg),
        Command::Walk => walk(cfg),
        Command::Sweep => sweep(cfg),
    }
}

fn hz(e: f64) -> f64 {
    e / PLANCK
}

fn bandstructure(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let lat = model::lattice(cfg)?;
    let er = lat.params.recoil_energy();
    let basis = model::bloch_basis(cfg, &lat)?;
    let mut t = Table::new(&["q_over_k", "band", "spin", "energy_Er"]);
    let mut spins = serde_json::Map::new();
    for s in SpinState::ALL {
        let b = diagonalize(&lat, s, &basis)?;
        for (iq, q) in b.quasimomenta.iter().enumerate() {
            for (band, e) in b.energies[iq].iter().enumerate() {
                t.push(vec![(*q).into(), band.into(), s.label().into(), (e / er).into()]);
            }
        }
        let centers: Vec<f64> = (0..b.band_count()).map(|n| b.band_center(n) / er).collect();
        let widths: Vec<f64> = (0..b.band_count()).map(|n| hz(b.band_width(n))).collect();
        spins.insert(
            s.label().into(),
            json!({
                "band_center_Er": centers,
                "band_width_Hz": widths,
                "bound_bands": b.bound_count(),
                "spacing_01_Hz": (b.band_count() > 1).then(|| hz(b.band_center(1) - b.band_center(0))),
            }),
        );
    }
    Ok(Outcome::ok(t, json!({ "spins": spins, "depth_Er": model::deepest_er(&lat), "plane_wave_cutoff": basis.plane_wave_cutoff })))
}

fn transitions(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let lat = model::lattice(cfg)?;
    let offset = model::offset(cfg)?;
    let basis = model::bloch_basis(cfg, &lat)?;
    let s0 = diagonalize(&lat, SpinState::S0, &basis)?;
    let s1 = diagonalize(&lat, SpinState::S1, &basis)?;
    let table = transition_table(&s0, &s1)?;
    let mut t = Table::new(&["n", "nprime", "center_Hz", "width_Hz"]);
    for r in &table.rows {
        t.push(vec![r.n.into(), r.nprime.into(), (r.center + offset).into(), r.width.into()]);
    }
    Ok(Outcome::ok(
        t,
        json!({ "offset_Hz": offset, "depth_Er": model::deepest_er(&lat), "displacement_nm": displacement(&lat).ok().map(|d| d * 1e9) }),
    ))
}

fn couplings(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let lat = model::lattice(cfg)?;
    let thetas = match &cfg.couplings.theta_scan {
        Some(s) => {
            let (a, b, n) = parse_scan(s)?;
            grid(a, b, n)
        }
        None => vec![lat.theta],
    };
    let opts = model::well_options(cfg);
    let levels = cfg.couplings.levels;
    let rabi = cfg.pulse.rabi_khz * 1e3;
    let per_theta: Vec<Vec<Vec<Cell>>> = thetas
        .par_iter()
        .map(|&theta| {
            let c = lat.with_theta(theta)?;
            let pair = well_pair(&c, &opts)?;
            let (d0, d1) = pair.coupling.dims();
            if levels > d0.min(d1) {
                return Err(CliError::Schema(format!(
                    "couplings.levels = {levels} exceeds the {}-level basis",
                    d0.min(d1)
                )));
            }
            let dx = pair.coupling.delta_x * 1e9;
            let mut rows = Vec::new();
            for n in 0..levels {
                for np in 0..levels {
                    let m = pair.coupling.abs(n, np).unwrap();
                    rows.push(vec![theta.into(), dx.into(), n.into(), np.into(), m.into(), (rabi * m).into()]);
                }
            }
            Ok(rows)
        })
        .collect::<Result<_, CliError>>()?;
    let mut t = Table::new(&["theta_rad", "delta_x_nm", "n", "nprime", "abs_M", "rabi_Hz"]);
    per_theta.into_iter().flatten().for_each(|r| t.push(r));
    Ok(Outcome::ok(t, json!({ "angles": thetas.len(), "levels": levels, "bare_rabi_Hz": rabi })))
}

fn rabi(cfg: &RunConfig) -> Result<Outcome, CliError> {
    if cfg.solver.model != Model::Wells {
        return Err(CliError::Schema("rabi runs on the well model (solver.model = \"wells\")".into()));
    }
    let lat = model::lattice(cfg)?;
    let pair = well_pair(&lat, &model::well_options(cfg))?;
    let h = DriveHamiltonian::from_pair(&pair, model::offset(cfg)?)?;
    let r = &cfg.rabi;
    let t_max = r.t_max_us * 1e-6;
    let mut pulse = model::pulse(&cfg.pulse, None, Some(t_max))?;
    if let Some([n, np]) = r.line {
        pulse = pulse.resonant_with(n, np);
    }
    let times = uniform_times(t_max, r.points);
    let trace = rabi_trace(&h, (r.initial_spin.into(), r.initial_level), &pulse, &times)?;
    let mut t = Table::new(&["t_us", "P0", "P1"]);
    for i in 0..times.len() {
        t.push(vec![(times[i] * 1e6).into(), trace.p0[i].into(), trace.p1[i].into()]);
    }
    let extracted = trace.rabi_frequency();
    let line = r.line.and_then(|[n, np]| pair.coupling.abs(n, np).map(|m| json!({ "abs_M": m, "rabi_Hz": pulse.bare_rabi * m })));
    Ok(Outcome::ok(
        t,
        json!({
            "rabi_frequency_Hz": extracted.as_ref().ok(),
            "extraction_error": extracted.as_ref().err().map(|e| e.to_string()),
            "weak_drive": line,
            "bare_rabi_Hz": pulse.bare_rabi,
            "trap_Hz": h.trap_frequency(),
            "displacement_nm": pair.coupling.delta_x * 1e9,
            "levels": h.levels(SpinState::S0),
            "warning": trace.warning,
        }),
    ))
}

/// Drive with quasimomentum-averaged level energies.
fn mean_drive(drives: &[DriveHamiltonian]) -> DriveHamiltonian {
    let mut m = drives[0].clone();
    let n = drives.len() as f64;
    for (i, e) in m.e0.iter_mut().enumerate() {
        *e = drives.iter().map(|d| d.e0[i]).sum::<f64>() / n;
    }
    for (i, e) in m.e1.iter_mut().enumerate() {
        *e = drives.iter().map(|d| d.e1[i]).sum::<f64>() / n;
    }
    m
}

fn spectrum(cfg: &RunConfig) -> Result<Outcome, CliError> {
    if cfg.spectrum.windows.is_empty() {
        return Err(CliError::Schema("spectrum needs at least one [[spectrum.windows]] entry".into()));
    }
    let lat = model::lattice(cfg)?;
    let params = lat.params;
    let offset = model::offset(cfg)?;
    let inhom = model::inhomogeneity(cfg);
    let (lo, hi) = node_range(&inhom, params.atom_mass)?;
    let fractions = DepthNodes::span(lo, hi, cfg.solver.depth_nodes);
    let nodes = match cfg.solver.model {
        Model::Wells => DepthNodes::well_pair(&lat, &fractions, &model::well_options(cfg), offset)?,
        Model::Bloch => DepthNodes::bloch(&lat, &fractions, cfg.solver.quasimomenta, cfg.solver.bands, offset)?,
    };
    let reference = mean_drive(&nodes.at(1.0, 0.0)?);
    let spin: SpinState = cfg.spectrum.initial_spin.into();
    let ladder = match spin {
        SpinState::S0 => &reference.e0,
        SpinState::S1 => &reference.e1,
    };
    let axial = if ladder.len() > 1 { ladder[1] - ladder[0] } else { 0.0 };
    let ens = model::ensemble(cfg, axial)?;
    let pops = ens.head(reference.levels(spin));
    let mut t = Table::new(&["detuning_kHz", "transfer"]);
    let mut windows = Vec::new();
    for w in &cfg.spectrum.windows {
        let center = match (w.line, w.center_khz) {
            (Some([n, np]), _) => reference.line_frequency(n, np)?,
            (None, Some(c)) => offset + c * 1e3,
            (None, None) => unreachable!("validated"),
        };
        let half = w.half_width_khz * 1e3;
        let freqs: Vec<f64> = grid(center - half, center + half, w.points);
        let pulse = model::pulse(&cfg.pulse, w.area_pi, None)?;
        let avg = ensemble_spectrum(&nodes, &params, &inhom, spin, pops, &pulse, &freqs)?;
        for (f, p) in freqs.iter().zip(&avg.mean) {
            t.push(vec![((f - offset) * 1e-3).into(), (*p).into()]);
        }
        let shape = line_shape(&freqs, &avg.mean, center - half, center + half).ok();
        windows.push(json!({
            "line": w.line,
            "nominal_kHz": (center - offset) * 1e-3,
            "center_kHz": shape.map(|s| (s.center - offset) * 1e-3),
            "peak": shape.map(|s| s.peak),
            "area_kHz": shape.map(|s| s.area * 1e-3),
            "fwhm_kHz": shape.map(|s| s.fwhm * 1e-3),
            "rms_width_kHz": shape.map(|s| s.rms_width * 1e-3),
            "bare_rabi_Hz": pulse.bare_rabi,
            "max_stderr": avg.stderr.iter().copied().fold(0.0, f64::max),
        }));
    }
    Ok(Outcome::ok(
        t,
        json!({
            "windows": windows,
            "offset_Hz": offset,
            "axial_Hz": axial,
            "nbar": ens.nbar,
            "depth_nodes": fractions,
            "samples": inhom.sample_points(params.atom_mass)?.len(),
        }),
    ))
}

fn cooling(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let lat = model::lattice(cfg)?;
    let pair = well_pair(&lat, &model::well_options(cfg))?;
    let c = &cfg.cooling;
    let p = CoolingParams {
        bare_rabi: c.rabi_khz * 1e3,
        detuning: c.detuning_khz * 1e3,
        repump_rate: c.repump_rate_per_s,
        optical_eta: c.optical_eta,
        duration: c.duration_ms * 1e-3,
        levels: c.levels,
        samples: c.samples,
    };
    let m = cooling_model(&pair, &p)?;
    let levels = m.levels();
    let axial = hz(pair.states1.energies[1] - pair.states1.energies[0]);
    let ens = model::ensemble(cfg, axial)?;
    let r = cool(&ens, &m, &CoolingParams { levels: Some(levels), ..p })?;
    let projection = redistribution_matrix(&pair, 0.0, levels)?;
    let mut t = Table::new(&["t_ms", "nbar", "p0"]);
    for i in 0..r.times.len() {
        t.push(vec![(r.times[i] * 1e3).into(), r.nbar[i].into(), r.ground[i].into()]);
    }
    let heating = m.ground_heating();
    let from_projection = 1.0 - projection[(0, 0)];
    let summary = json!({
        "final_nbar": r.final_nbar,
        "ground_population": r.ground_population,
        "steady_state_nbar": r.steady_state_nbar,
        "steady": r.steady,
        "converged": r.converged,
        "levels": levels,
        "optical_eta": m.optical_eta,
        "axial_Hz": axial,
        "initial_nbar": ens.nbar,
        "ground_heating": {
            "total": heating,
            "displaced_wells": from_projection,
            "photon_recoil": heating - from_projection,
        },
        "sideband_rabi_Hz": m.sideband_rabi,
    });
    Ok(Outcome {
        invalid: (!r.converged).then(|| "cooling did not reach a steady state within 10× the duration".to_string()),
        ..Outcome::ok(t, summary)
    })
}

fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>), CliError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let header: Vec<String> =
        rdr.headers().map_err(|e| CliError::Schema(format!("{}: {e}", path.display())))?.iter().map(String::from).collect();
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| CliError::Schema(format!("{}: {e}", path.display())))?;
        let row = rec
            .iter()
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<Vec<f64>, _>>()
            .map_err(|e| CliError::Schema(format!("{} row {}: {e}", path.display(), i + 1)))?;
        rows.push(row);
    }
    Ok((header, rows))
}

fn column(header: &[String], rows: &[Vec<f64>], name: &str) -> Result<Vec<f64>, CliError> {
    let i = header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| CliError::Schema(format!("input has no `{name}` column (columns: {})", header.join(","))))?;
    Ok(rows.iter().map(|r| r[i]).collect())
}

fn thermometry(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let th = &cfg.thermometry;
    let input = th.input.as_ref().ok_or_else(|| CliError::Schema("thermometry needs --input or thermometry.input".into()))?;
    let (header, rows) = read_csv(input)?;
    let lat = model::lattice(cfg)?;
    let pair = well_pair(&lat, &model::well_options(cfg))?;
    let offset = model::offset(cfg)?;
    let h = DriveHamiltonian::from_pair(&pair, offset)?;
    let spin: SpinState = th.initial_spin.into();
    let energies = pair.energies(spin);
    let axial = hz(energies[1] - energies[0]);
    let summary = match th.method {
        Method::Sideband => {
            let mut pts: Vec<(f64, f64)> = column(&header, &rows, "detuning_kHz")?
                .into_iter()
                .zip(column(&header, &rows, "transfer")?)
                .map(|(d, p)| (d * 1e3 + offset, p))
                .collect();
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
            pts.dedup_by(|a, b| a.0 == b.0);
            let (f, p): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
            let s = spectrum_thermometry(&h, spin, &f, &p, th.half_window_khz * 1e3)?;
            json!({
                "nbar": s.nbar,
                "p0": s.ground_population,
                "T_uK": temperature_from_nbar(s.nbar, axial)? * 1e6,
                "method": "sideband",
                "residual": Value::Null,
                "ratio": s.ratio,
                "axial_Hz": axial,
            })
        }
        Method::Beat => {
            let times: Vec<f64> = column(&header, &rows, "t_us")?.into_iter().map(|t| t * 1e-6).collect();
            let span = times.last().copied().unwrap_or(0.0);
            let trace = RabiTrace {
                p0: column(&header, &rows, "P0")?,
                p1: column(&header, &rows, "P1")?,
                times,
                initial: (spin, 0),
                pulse: model::pulse(&cfg.pulse, None, Some(span.max(1e-6)))?,
                warning: None,
            };
            let b = beat_thermometry(&trace, &pair.coupling, th.levels, axial)?;
            json!({
                "nbar": b.nbar,
                "p0": b.populations[0],
                "T_uK": b.temperature * 1e6,
                "method": "beat",
                "residual": b.residual,
                "populations": b.populations,
                "carrier_Hz": b.frequencies,
                "signal_residual": b.signal_residual,
                "axial_Hz": axial,
            })
        }
    };
    Ok(Outcome {
        table: None,
        summary,
        invalid: None,
    })
}

fn walk(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let lat = model::lattice(cfg)?;
    let chain = walk_chain(&lat)?;
    let rabi = cfg.pulse.rabi_khz * 1e3;
    let m = 0.5 * (chain.right.norm() + chain.left.norm());
    if !(rabi * m > 0.0) {
        return Err(CliError::Schema("walk needs a non-zero drive and neighbour coupling".into()));
    }
    let period = 1.0 / (rabi * m);
    let w = &cfg.walk;
    let t_max = w.t_max_us.map_or(w.periods * period, |t| t * 1e-6);
    let times = uniform_times(t_max, w.points);
    let r = quantum_walk(&chain, rabi, cfg.pulse.detuning_khz * 1e3, &times, w.min_sites)?;
    let mut t = Table::new(&["t_us", "sigma_x_nm", "P0"]);
    for i in 0..times.len() {
        t.push(vec![(times[i] * 1e6).into(), (r.sigma_x[i] * 1e9).into(), r.p0[i].into()]);
    }
    let fit = ballistic_fit(&times, &r.sigma_x, period.min(t_max / 2.0))?;
    let oracle = 2f64.sqrt() * PI * rabi * m * chain.lattice_spacing / 2.0;
    let last_period = (t_max / period).floor() as usize;
    let visibility = (last_period >= 2).then(|| r.visibility(period, last_period - 1));
    let summary = json!({
        "exponent": fit.exponent,
        "slope_m_per_s": fit.slope,
        "tight_binding_slope_m_per_s": oracle,
        "visibility_last_period": visibility,
        "rabi_period_us": period * 1e6,
        "coupling_right": chain.right.norm(),
        "coupling_left": chain.left.norm(),
        "well_offset_nm": chain.offset * 1e9,
        "sites": r.sites,
        "edge_population": r.edge_population,
        "valid": r.valid,
    });
    Ok(Outcome {
        invalid: (!r.valid).then(|| format!("walk reached the chain edge (population {:.2e})", r.edge_population)),
        ..Outcome::ok(t, summary)
    })
}

fn scalar_cells(summary: &Value) -> (Vec<String>, Vec<Cell>) {
    let mut header = Vec::new();
    let mut cells = Vec::new();
    if let Value::Object(map) = summary {
        for (k, v) in map {
            let cell = match v {
                Value::Number(n) => n.as_i64().map_or_else(|| Cell::Float(n.as_f64().unwrap_or(f64::NAN)), Cell::Int),
                Value::String(s) => Cell::Text(s.clone()),
                Value::Bool(b) => Cell::Text(b.to_string()),
                Value::Null => Cell::Empty,
                _ => continue,
            };
            header.push(k.clone());
            cells.push(cell);
        }
    }
    (header, cells)
}

fn sweep(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let sw = cfg.sweep.clone().ok_or_else(|| CliError::Schema("sweep needs a [sweep] table".into()))?;
    let inner = Command::from_name(&sw.command)?;
    if inner == Command::Sweep {
        return Err(CliError::Schema("a sweep cannot run another sweep".into()));
    }
    let mut base = cfg.clone();
    base.sweep = None;
    // the sweep grid replaces the couplings angle scan
    base.couplings.theta_scan = None;
    let base = toml::Value::try_from(&base).map_err(|e| CliError::Schema(e.to_string()))?;
    let values = grid(sw.start, sw.stop, sw.steps);
    let configs: Vec<RunConfig> = values
        .iter()
        .map(|&v| {
            let mut t = base.clone();
            crate::config::set_path(&mut t, &sw.path, v)?;
            let c = RunConfig::from_value(t)?;
            c.validate()?;
            Ok(c)
        })
        .collect::<Result<_, CliError>>()?;
    let results: Vec<Result<Outcome, CliError>> = configs.par_iter().map(|c| run_command(inner, c)).collect();
    let inner_header: Vec<String> = results
        .iter()
        .find_map(|r| r.as_ref().ok())
        .map(|o| match &o.table {
            Some(t) => t.header.clone(),
            None => scalar_cells(&o.summary).0,
        })
        .unwrap_or_default();
    let mut header = vec!["point".to_string(), sw.path.clone(), "status".to_string()];
    header.extend(inner_header.iter().cloned());
    header.push("message".into());
    let mut t = Table {
        header,
        rows: Vec::new(),
    };
    let mut points = Vec::new();
    let mut bad = 0;
    for (i, (v, r)) in values.iter().zip(&results).enumerate() {
        let lead = |status: &str| vec![Cell::from(i), Cell::Float(*v), Cell::from(status)];
        match r {
            Ok(o) => {
                let (status, msg) = match &o.invalid {
                    Some(m) => ("invalid", m.clone()),
                    None => ("ok", String::new()),
                };
                bad += o.invalid.is_some() as usize;
                let rows = match &o.table {
                    Some(tab) => tab.rows.clone(),
                    None => vec![scalar_cells(&o.summary).1],
                };
                for row in rows {
                    let mut full = lead(status);
                    full.extend(row);
                    full.push(Cell::Text(msg.clone()));
                    t.rows.push(full);
                }
                points.push(json!({ "point": i, "value": v, "status": status, "summary": o.summary }));
            }
            Err(e) => {
                bad += 1;
                let mut full = lead("failed");
                full.extend(std::iter::repeat_n(Cell::Empty, inner_header.len()));
                full.push(Cell::Text(e.to_string()));
                t.rows.push(full);
                points.push(json!({ "point": i, "value": v, "status": "failed", "error": e.to_json() }));
            }
        }
    }
    Ok(Outcome {
        table: Some(t),
        summary: json!({ "path": sw.path, "command": sw.command, "points": points }),
        invalid: (bad > 0).then(|| format!("{bad} of {} sweep points failed or were flagged invalid", values.len())),
    })
}
