//! One runner per scenario kind. Each reads its keys up front and returns a
//! job, so unknown keys are reported before any computation starts.

use crate::config::{CliError, Kind, Reader};
use crate::output::{column, read_delimited, DelimitedData, Outcome, Table};
use crate::units::{parse_si, Dimension};
use rand::RngCore;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rydion::constants::HBAR;
use rydion::crystal::{equilibrium_positions, linear_chain, min_spacing, normal_modes, CrystalIon, ElectronicTag};
use rydion::dynamics::{
    adiabatic_eliminate, evolve, find_peaks, geometric_phase_gate, spectroscopy_scan, stirap, Probe, ScanMode, StirapPulses,
    SystemState, ThreeLevelSystem, GROUND, INTERMEDIATE, RYDBERG, SINK,
};
use rydion::interactions::{
    blockade_gate, first_arrival, optimize_kick, plaquette_couplings, spin_transport, uniformity, BlockadeProtocol, KickGateProblem,
    InteractionError, KickSegment, KickTargets, KickWarning, RamanDrive, TransportBasis, TransportParams, KICK_BASIS,
};
use rydion::rydstate::{fit_rydberg_series, level_energy, QuantumDefectModel, RydbergLevel, SeriesGuess, SeriesLine, SeriesParameterization};
use rydion::spectra::{fit_line, fwhm, line_profile, resolved_features, sideband_series, LineModel, ObservedSpectrum};
use rydion::trap::{secular_frequencies, IonSpecies, TrapConfig};
use std::f64::consts::PI;
use std::path::Path;

use Dimension::*;

pub type Job = Box<dyn FnOnce(&mut ChaCha8Rng) -> Result<Outcome, CliError> + Send>;

/// Reads the parameters of `kind` and returns the computation.
pub fn prepare(kind: Kind, r: &Reader) -> Result<Job, CliError> {
    match kind {
        Kind::Spectrum => spectrum(r),
        Kind::Modes => modes(r),
        Kind::Rabi => rabi(r),
        Kind::AutlerTownes => autler_townes(r),
        Kind::Stirap => stirap_scenario(r),
        Kind::GeometricGate => geometric_gate(r),
        Kind::Blockade => blockade(r),
        Kind::KickGate => kick_gate(r),
        Kind::Transport => transport(r),
        Kind::Plaquette => plaquette(r),
        Kind::SeriesFit => series_fit(r),
        Kind::LineFit => line_fit(r),
    }
}

fn species(r: &Reader, key: &str) -> Result<IonSpecies, CliError> {
    match r.choice(key, &["Ca40", "Sr88"], "Ca40")? {
        "Sr88" => Ok(IonSpecies::strontium88()),
        _ => Ok(IonSpecies::calcium40()),
    }
}

/// Trap from secular frequencies or from electrode gradients.
fn trap(r: &Reader, ion: &IonSpecies, kind: Kind) -> Result<TrapConfig, CliError> {
    let rf = r.quantity("trap.rf", Frequency)?;
    let built = if r.has("trap.gamma") || r.has("trap.gamma_prime") {
        let gamma_prime = r.quantity("trap.gamma_prime", Gradient)?;
        let gamma = r.quantity("trap.gamma", Gradient)?;
        let epsilon = r.quantity_or("trap.epsilon", Dimensionless, 0.0)?;
        TrapConfig::new(gamma_prime, gamma, epsilon, rf)
    } else {
        let axial = r.quantity("trap.axial", Frequency)?;
        let radial = r.quantity("trap.radial", Frequency)?;
        TrapConfig::from_secular(ion, radial, axial, rf)
    };
    built.map_err(|e| CliError::module(kind, e))
}

/// Ladder couplings, detunings and losses.
fn ladder(r: &Reader) -> Result<ThreeLevelSystem, CliError> {
    let mut sys = ThreeLevelSystem::lossless(
        r.quantity_or("rabi1", Frequency, 0.0)?,
        r.quantity_or("rabi2", Frequency, 0.0)?,
        r.quantity_or("delta1", Frequency, 0.0)?,
        r.quantity_or("delta2", Frequency, 0.0)?,
    );
    sys.phi = r.quantity_or("phi", Angle, 0.0)?;
    sys.gamma_e = r.quantity_or("gamma_e", Frequency, 0.0)?;
    sys.gamma_r = match (r.opt_quantity("gamma_r", Frequency)?, r.opt_quantity("rydberg_lifetime", Time)?) {
        (Some(_), Some(_)) => return Err(r.error("rydberg_lifetime", "give either gamma_r or rydberg_lifetime").into()),
        (Some(g), None) => g,
        (None, Some(t)) if t > 0.0 => 1.0 / t,
        (None, Some(_)) => return Err(r.error("rydberg_lifetime", "must be positive").into()),
        (None, None) => 0.0,
    };
    sys.laser_linewidths = (r.quantity_or("linewidth1", Frequency, 0.0)?, r.quantity_or("linewidth2", Frequency, 0.0)?);
    Ok(sys)
}

fn pulses(r: &Reader, default_phase: f64) -> Result<StirapPulses, CliError> {
    Ok(StirapPulses {
        peak_omega1: r.quantity("pulses.peak1", Frequency)?,
        peak_omega2: r.quantity("pulses.peak2", Frequency)?,
        duration: r.quantity("pulses.duration", Time)?,
        overlap: r.quantity_or("pulses.overlap", Dimensionless, 0.5)?,
        wait: r.quantity_or("pulses.wait", Time, 0.0)?,
        phase: r.quantity_or("pulses.phase", Angle, default_phase)?,
    })
}

/// Uniform grid of `points` samples over [−span/2, span/2] around `centre`.
fn symmetric_grid(centre: f64, span: f64, points: usize) -> Vec<f64> {
    if points < 2 {
        return vec![centre];
    }
    (0..points).map(|i| centre - 0.5 * span + span * i as f64 / (points - 1) as f64).collect()
}

fn max_of(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(f64::NEG_INFINITY, f64::max)
}

fn min_of(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(f64::INFINITY, f64::min)
}

fn spectrum(r: &Reader) -> Result<Job, CliError> {
    let carrier = r.quantity_or("carrier", Frequency, 0.0)?;
    let beta_mm = r.quantity_or("beta_mm", Dimensionless, 0.0)?;
    let rf = r.quantity("rf", Frequency)?;
    let width = r.quantity("width", Frequency)?;
    let model = match (r.opt_quantity("stark_index", Dimensionless)?, r.opt_quantity("alpha", Polarizability)?) {
        (Some(_), Some(_)) => return Err(r.error("alpha", "give either stark_index or alpha with e_res").into()),
        (Some(s), None) => LineModel::from_indices(carrier, beta_mm, s, rf, width),
        (None, Some(a)) => LineModel::from_physical(carrier, beta_mm, a, r.quantity("e_res", Field)?, rf, width),
        (None, None) => LineModel::from_indices(carrier, beta_mm, 0.0, rf, width),
    };
    let span = r.quantity("span", Frequency)?;
    let points = r.count_or("points", 2001)?;
    let noise = r.quantity_or("noise", Dimensionless, 0.0)?;
    let amplitude = r.quantity_or("amplitude", Dimensionless, 1.0)?;
    if !(noise >= 0.0) {
        return Err(r.error("noise", "must be non-negative").into());
    }
    Ok(Box::new(move |rng| {
        let kind = Kind::Spectrum;
        let grid = symmetric_grid(carrier, span, points);
        let clean = line_profile(&model, &grid).map_err(|e| CliError::module(kind, e))?;
        let bands = sideband_series(&model, model.default_order_cap()).map_err(|e| CliError::module(kind, e))?;
        let gauss = Normal::new(0.0, noise).expect("non-negative noise");
        let mut out = Outcome::default();
        let mut main = Table::new("spectrum", &[("detuning", "MHz"), ("signal", "1"), ("sigma", "1"), ("model", "1")]);
        for (d, v) in grid.iter().zip(&clean) {
            let noisy = amplitude * v + if noise > 0.0 { gauss.sample(rng) } else { 0.0 };
            main.push(&[*d, noisy, noise, amplitude * v]);
        }
        let mut side = Table::new("sidebands", &[("order", "1"), ("offset", "MHz"), ("weight", "1")]);
        for b in &bands {
            side.push(&[b.order as f64, b.offset, b.weight]);
        }
        out.scalar("carrier_offset", model.carrier_offset, "MHz");
        out.scalar("beta_alpha", model.beta_alpha, "1");
        out.scalar("sidebands_above_1e-3", bands.iter().filter(|b| b.weight > 1e-3).count() as f64, "1");
        out.scalar("resolved_features", resolved_features(&clean) as f64, "1");
        out.scalar("fwhm", fwhm(&grid, &clean).unwrap_or(f64::NAN), "MHz");
        out.line(format!("{} sidebands above 1e-3 weight, {} resolved features", out.get("sidebands_above_1e-3").unwrap(), out.get("resolved_features").unwrap()));
        out.tables = vec![main, side];
        Ok(out)
    }))
}

fn data_table(path: &Path, kind: Kind) -> Result<DelimitedData, CliError> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io { path: path.into(), source })?;
    read_delimited(&text).map_err(|m| CliError::module(kind, format!("{}: {m}", path.display())))
}

/// SI values of a data column, converting through its unit token.
fn data_column(data: &DelimitedData, name: &str, dim: Dimension, path: &Path, kind: Kind) -> Result<Option<Vec<f64>>, CliError> {
    let Some(i) = data.find(name) else {
        return Ok(None);
    };
    let unit = &data.columns[i].unit;
    let factor = parse_si(&format!("1 {unit}"), dim).map_err(|m| CliError::module(kind, format!("{}: column `{name}`: {m}", path.display())))?;
    Ok(Some(data.rows.iter().map(|row| row[i] * factor).collect()))
}

fn required_column(data: &DelimitedData, name: &str, dim: Dimension, path: &Path, kind: Kind) -> Result<Vec<f64>, CliError> {
    data_column(data, name, dim, path, kind)?.ok_or_else(|| CliError::module(kind, format!("{}: no `{name}` column", path.display())))
}

fn line_fit(r: &Reader) -> Result<Job, CliError> {
    let kind = Kind::LineFit;
    let path = r.data_file("data")?.ok_or_else(|| r.error("data", "required key is missing"))?;
    let rf = r.quantity("rf", Frequency)?;
    let e_res = r.opt_quantity("e_res", Field)?;
    let beta_mm = r.quantity_or("guess.beta_mm", Dimensionless, 0.3)?;
    let width = r.quantity("guess.width", Frequency)?;
    let amplitude = r.opt_quantity("guess.amplitude", Dimensionless)?;
    let guess = match (r.opt_quantity("guess.stark_index", Dimensionless)?, r.opt_quantity("guess.alpha", Polarizability)?) {
        (Some(_), Some(_)) => return Err(r.error("guess.alpha", "give either guess.stark_index or guess.alpha").into()),
        (None, Some(a)) => {
            let e = e_res.ok_or_else(|| r.error("e_res", "needed to turn guess.alpha into a Stark index"))?;
            LineModel { carrier_offset: 0.0, ..LineModel::from_physical(0.0, beta_mm, a, e, rf, width) }
        }
        (s, None) => LineModel::from_indices(0.0, beta_mm, s.unwrap_or(0.1), rf, width),
    };
    let data = data_table(&path, kind)?;
    Ok(Box::new(move |_rng| {
        let detuning = required_column(&data, "detuning", Frequency, &path, kind)?;
        let signal = required_column(&data, "signal", Dimensionless, &path, kind)?;
        let sigma = match data_column(&data, "sigma", Dimensionless, &path, kind)? {
            Some(s) if s.iter().all(|v| *v > 0.0) => s,
            _ => vec![1.0; signal.len()],
        };
        let amplitude = amplitude.unwrap_or_else(|| max_of(signal.iter().copied()).max(1e-12));
        let observed = ObservedSpectrum { detuning: detuning.clone(), signal: signal.clone(), sigma };
        let fit = fit_line(&observed, rf, &guess, amplitude, e_res).map_err(|e| CliError::module(kind, e))?;
        let model = line_profile(&fit.model, &detuning).map_err(|e| CliError::module(kind, e))?;
        let mut table = Table::new("fit", &[("detuning", "MHz"), ("signal", "1"), ("model", "1"), ("residual", "1")]);
        for ((d, s), m) in detuning.iter().zip(&signal).zip(&model) {
            table.push(&[*d, *s, fit.amplitude * m, s - fit.amplitude * m]);
        }
        let mut out = Outcome::default();
        out.scalar("centre", fit.estimates[0], "MHz");
        out.scalar("centre_sigma", fit.sigmas[0], "MHz");
        out.scalar("beta_mm", fit.estimates[1], "1");
        out.scalar("beta_mm_sigma", fit.sigmas[1], "1");
        out.scalar("stark_index", fit.estimates[2], "1");
        out.scalar("stark_index_sigma", fit.sigmas[2], "1");
        out.scalar("amplitude", fit.estimates[3], "1");
        out.scalar("width", fit.estimates[4], "MHz");
        out.scalar("reduced_chi2", fit.reduced_chi2, "1");
        if let Some((a, s)) = fit.alpha {
            out.scalar("alpha", a, "MHz/(V/cm)^2");
            out.scalar("alpha_sigma", s, "MHz/(V/cm)^2");
            out.line(format!("polarizability {:.1} ± {:.1} MHz/(V/cm)^2", out.get("alpha").unwrap(), out.get("alpha_sigma").unwrap()));
        }
        if fit.fixed.iter().any(|f| *f) {
            out.warnings.push("modulation indices collapsed and were held at zero".into());
        }
        out.line(format!("beta_mm {:.4} ± {:.4}, Stark index {:.4} ± {:.4}", fit.estimates[1], fit.sigmas[1], fit.estimates[2], fit.sigmas[2]));
        out.tables = vec![table];
        Ok(out)
    }))
}

fn defect_model(r: &Reader, kind: Kind) -> Result<QuantumDefectModel, CliError> {
    match r.data_file("defects")? {
        Some(path) => QuantumDefectModel::from_file(&path).map_err(|e| CliError::module(kind, e)),
        None => match r.choice("species", &["Sr88", "Ca40"], "Sr88")? {
            "Ca40" => Ok(QuantumDefectModel::calcium40()),
            _ => Ok(QuantumDefectModel::strontium88()),
        },
    }
}

/// Synthetic lines of one series with Gaussian energy noise.
struct SyntheticSeries {
    l: u32,
    twice_j: u32,
    n_range: (u32, u32),
    noise: f64,
}

fn series_fit(r: &Reader) -> Result<Job, CliError> {
    let kind = Kind::SeriesFit;
    let model = defect_model(r, kind)?;
    let data = r.data_file("data")?;
    let synthetic = if r.has("synthetic") {
        if data.is_some() {
            return Err(r.error("synthetic", "give either data or synthetic").into());
        }
        let n_min = r.count("synthetic.n_min")? as u32;
        let n_max = r.count("synthetic.n_max")? as u32;
        if n_max < n_min {
            return Err(r.error("synthetic.n_max", "must not be below n_min").into());
        }
        Some(SyntheticSeries {
            l: r.count_or("synthetic.l", 0)? as u32,
            twice_j: (2.0 * r.quantity_or("synthetic.j", Dimensionless, 0.5)?).round() as u32,
            n_range: (n_min, n_max),
            noise: r.quantity("synthetic.noise", Energy)?,
        })
    } else {
        None
    };
    let lines_from_file = match &data {
        Some(path) => {
            let table = data_table(path, kind)?;
            let n = required_column(&table, "n", Dimensionless, path, kind)?;
            let l = required_column(&table, "l", Dimensionless, path, kind)?;
            let j = required_column(&table, "j", Dimensionless, path, kind)?;
            let energy = required_column(&table, "energy", Energy, path, kind)?;
            let sigma = required_column(&table, "sigma", Energy, path, kind)?;
            Some(
                (0..n.len())
                    .map(|i| SeriesLine { n: n[i] as u32, l: l[i] as u32, twice_j: (2.0 * j[i]).round() as u32, energy: energy[i], sigma: sigma[i] })
                    .collect::<Vec<_>>(),
            )
        }
        None if synthetic.is_none() => return Err(r.error("data", "give a data file or a synthetic section").into()),
        None => None,
    };
    let param = match r.choice("parameterization", &["tied", "free"], "tied")? {
        "free" => SeriesParameterization::Free,
        _ => SeriesParameterization::Tied,
    };
    let limit_guess = r.opt_quantity("guess.ionization_limit", Energy)?;
    let mu0_guess = r.opt_quantity("guess.mu0", Dimensionless)?;
    let mu1_guess = r.opt_quantity("guess.mu1", Dimensionless)?;
    Ok(Box::new(move |rng| {
        let lines = match (lines_from_file, synthetic) {
            (Some(lines), _) => lines,
            (None, Some(s)) => {
                let gauss = Normal::new(0.0, s.noise).map_err(|e| CliError::module(kind, e))?;
                (s.n_range.0..=s.n_range.1)
                    .map(|n| {
                        let level = RydbergLevel::new(n, s.l, s.twice_j as f64 / 2.0, s.twice_j as f64 / 2.0).map_err(|e| CliError::module(kind, e))?;
                        let e = level_energy(&model, &level).map_err(|e| CliError::module(kind, e))?;
                        Ok(SeriesLine { n, l: s.l, twice_j: s.twice_j, energy: e + gauss.sample(rng), sigma: s.noise })
                    })
                    .collect::<Result<Vec<_>, CliError>>()?
            }
            (None, None) => unreachable!("checked while reading"),
        };
        let first = lines.first().ok_or_else(|| CliError::module(kind, "no lines to fit"))?;
        let defaults = model.series(first.l, first.twice_j).copied().ok();
        let guess = SeriesGuess {
            ionization_limit: limit_guess.unwrap_or(model.ionization_limit),
            mu0: mu0_guess.or(defaults.map(|d| d.mu0)).unwrap_or(0.0),
            mu1: mu1_guess.or(defaults.map(|d| d.mu1)).unwrap_or(0.0),
            dmu_de: 0.0,
            reduced_rydberg: model.reduced_rydberg,
            core_charge: model.core_charge,
        };
        let fit = fit_rydberg_series(&lines, &guess, param).map_err(|e| CliError::module(kind, e))?;
        // same layout as the data input, so the table can be refitted
        let mut table = Table::new("lines", &[("n", "1"), ("l", "1"), ("j", "1"), ("energy", "cm^-1"), ("sigma", "h*MHz"), ("residual", "h*MHz")]);
        for (l, res) in lines.iter().zip(&fit.residuals) {
            table.push(&[l.n as f64, l.l as f64, l.twice_j as f64 / 2.0, l.energy, l.sigma, *res]);
        }
        let mut out = Outcome::default();
        out.scalar("ionization_limit", fit.ionization_limit, "cm^-1");
        out.scalar("ionization_limit_sigma", fit.sigma_ionization_limit(), "h*MHz");
        out.scalar("mu0", fit.mu0, "1");
        out.scalar("mu0_sigma", fit.covariance[(1, 1)].sqrt(), "1");
        out.scalar("mu1", fit.mu1, "1");
        out.scalar("mu1_sigma", fit.covariance[(2, 2)].sqrt(), "1");
        out.scalar("dmu_de_rydberg", fit.dmu_de * model.reduced_rydberg, "1");
        out.scalar("chi2", fit.chi2, "1");
        out.scalar("condition", fit.condition, "1");
        out.line(format!(
            "ionization limit {:.5} cm^-1 ± {:.2} MHz, mu0 {:.6}",
            out.get("ionization_limit").unwrap(),
            out.get("ionization_limit_sigma").unwrap(),
            fit.mu0
        ));
        if fit.condition > 1e12 {
            out.warnings.push(format!("normal matrix condition number {:.1e}", fit.condition));
        }
        out.tables = vec![table];
        Ok(out)
    }))
}

fn ion_list(r: &Reader, ion: &IonSpecies, count: usize) -> Result<Vec<CrystalIon>, CliError> {
    let mut ions = vec![CrystalIon::ground(ion.clone()); count];
    let doubly = r.indices("doubly_charged")?;
    let rydberg = r.indices("rydberg")?;
    let alpha = if rydberg.is_empty() { 0.0 } else { r.quantity("alpha", Polarizability)? };
    for (list, key) in [(&doubly, "doubly_charged"), (&rydberg, "rydberg")] {
        if let Some(bad) = list.iter().find(|&&i| i >= count) {
            return Err(r.error(key, format!("ion index {bad} out of range for {count} ions")).into());
        }
    }
    for &i in &doubly {
        ions[i].tag = ElectronicTag::DoublyCharged;
    }
    for &i in &rydberg {
        ions[i].tag = ElectronicTag::Rydberg { alpha };
    }
    Ok(ions)
}

fn modes(r: &Reader) -> Result<Job, CliError> {
    let kind = Kind::Modes;
    let ion = species(r, "species")?;
    let count = r.count("ions")?;
    let trap = trap(r, &ion, kind)?;
    let ions = ion_list(r, &ion, count)?;
    let linear = r.flag_or("linear", false)?;
    Ok(Box::new(move |_rng| {
        let crystal = if linear { linear_chain(&trap, &ions) } else { equilibrium_positions(&trap, &ions) }.map_err(|e| CliError::module(kind, e))?;
        let m = normal_modes(&crystal).map_err(|e| CliError::module(kind, e))?;
        let axial = secular_frequencies(&trap, &ion).map_err(|e| CliError::module(kind, e))?.as_array()[2];
        let mut columns = vec![column("mode", "1"), column("frequency", "MHz"), column("ratio_to_axial", "1"), column("axis", "1")];
        for i in 0..count {
            for a in ["x", "y", "z"] {
                columns.push(column(format!("{a}{i}"), "1"));
            }
        }
        let mut table = Table::with_columns("modes", columns);
        for k in 0..m.frequencies.len() {
            let mut row = vec![k as f64, m.frequencies[k], m.frequencies[k] / axial, m.axis(k) as f64];
            row.extend(m.eigenvectors.column(k).iter());
            table.push(&row);
        }
        let mut positions = Table::new("positions", &[("ion", "1"), ("x", "um"), ("y", "um"), ("z", "um")]);
        for (i, p) in crystal.positions.iter().enumerate() {
            positions.push(&[i as f64, p[0], p[1], p[2]]);
        }
        let axial_ratios: Vec<f64> = (0..m.frequencies.len()).filter(|&k| m.axis(k) == 2).map(|k| m.frequencies[k] / axial).collect();
        let mut out = Outcome::default();
        out.scalar("lowest_mode", m.frequencies[0], "MHz");
        out.scalar("highest_mode", *m.frequencies.last().unwrap(), "MHz");
        out.scalar("length_scale", crystal.length_scale, "um");
        if count > 1 {
            out.scalar("min_spacing", min_spacing(&crystal), "um");
        }
        out.line(format!("axial mode ratios {}", axial_ratios.iter().map(|v| format!("{v:.6}")).collect::<Vec<_>>().join(", ")));
        out.tables = vec![table, positions];
        Ok(out)
    }))
}

fn rabi(r: &Reader) -> Result<Job, CliError> {
    let kind = Kind::Rabi;
    let sys = ladder(r)?;
    let duration = r.quantity("duration", Time)?;
    let step = r.quantity_or("step", Time, duration / 200.0)?;
    let start = match r.choice("initial", &["ground", "intermediate", "rydberg"], "ground")? {
        "intermediate" => INTERMEDIATE,
        "rydberg" => RYDBERG,
        _ => GROUND,
    };
    if !(duration > 0.0 && step > 0.0) {
        return Err(r.error("duration", "duration and step must be positive").into());
    }
    Ok(Box::new(move |_rng| {
        let traj = evolve(&sys, &SystemState::basis(4, start), duration, step).map_err(|e| CliError::module(kind, e))?;
        let mut table = Table::new("populations", &[("time", "us"), ("p_ground", "1"), ("p_intermediate", "1"), ("p_rydberg", "1"), ("p_lost", "1")]);
        for (t, s) in traj.times.iter().zip(&traj.states) {
            table.push(&[*t, s.population(GROUND), s.population(INTERMEDIATE), s.population(RYDBERG), s.population(SINK)]);
        }
        let last = traj.states.last().expect("trajectory has samples");
        let mut out = Outcome::default();
        out.scalar("final_ground", last.population(GROUND), "1");
        out.scalar("final_intermediate", last.population(INTERMEDIATE), "1");
        out.scalar("final_rydberg", last.population(RYDBERG), "1");
        out.scalar("max_rydberg", max_of(traj.population(RYDBERG)), "1");
        out.scalar("max_intermediate", max_of(traj.population(INTERMEDIATE)), "1");
        if sys.delta1 != 0.0 {
            if let Ok(eff) = adiabatic_eliminate(&sys) {
                out.scalar("effective_rabi", eff.omega_eff, "MHz");
            }
        }
        out.line(format!("max Rydberg population {:.4}", out.get("max_rydberg").unwrap()));
        out.tables = vec![table];
        Ok(out)
    }))
}

fn probe(r: &Reader) -> Result<Probe, CliError> {
    Ok(match r.choice("probe", &["intermediate", "rydberg", "depletion"], "intermediate")? {
        "rydberg" => Probe::Rydberg,
        "depletion" => Probe::Depletion,
        _ => Probe::Intermediate,
    })
}

fn autler_townes(r: &Reader) -> Result<Job, CliError> {
    let kind = Kind::AutlerTownes;
    let sys = ladder(r)?;
    let span = r.quantity("scan.span", Frequency)?;
    let points = r.count_or("scan.points", 801)?;
    let delta2 = r.quantity_array("scan.delta2", Frequency)?.unwrap_or_else(|| vec![sys.delta2]);
    let probe = probe(r)?;
    let mode = match r.opt_quantity("interaction_time", Time)? {
        Some(t) => ScanMode::Duration(t),
        None => ScanMode::SteadyState,
    };
    let threshold = r.quantity_or("peak_threshold", Dimensionless, 0.1)?;
    if delta2.is_empty() {
        return Err(r.error("scan.delta2", "needs at least one value").into());
    }
    Ok(Box::new(move |_rng| {
        let grid = symmetric_grid(0.0, span, points);
        let map = spectroscopy_scan(&sys, &grid, &delta2, mode, probe).map_err(|e| CliError::module(kind, e))?;
        let mut table = Table::new("scan", &[("delta1", "MHz"), ("delta2", "MHz"), ("signal", "1")]);
        for (j, d2) in delta2.iter().enumerate() {
            for (d1, row) in grid.iter().zip(&map) {
                table.push(&[*d1, *d2, row[j]]);
            }
        }
        let first: Vec<f64> = map.iter().map(|row| row[0]).collect();
        let peaks = find_peaks(&grid, &first, threshold);
        let mut out = Outcome::default();
        out.scalar("peaks", peaks.len() as f64, "1");
        let splitting = if peaks.len() == 2 { peaks[1] - peaks[0] } else { f64::NAN };
        out.scalar("splitting", splitting, "MHz");
        out.scalar("coupling_rabi", sys.omega2.at(0.0), "MHz");
        let mut peak_table = Table::new("peaks", &[("delta2", "MHz"), ("peak", "MHz")]);
        for (j, d2) in delta2.iter().enumerate() {
            let column: Vec<f64> = map.iter().map(|row| row[j]).collect();
            for p in find_peaks(&grid, &column, threshold) {
                peak_table.push(&[*d2, p]);
            }
        }
        out.line(format!("peak splitting {:.4} MHz for Omega2 {:.4} MHz", out.get("splitting").unwrap(), out.get("coupling_rabi").unwrap()));
        out.tables = vec![table, peak_table];
        Ok(out)
    }))
}

fn stirap_scenario(r: &Reader) -> Result<Job, CliError> {
    let kind = Kind::Stirap;
    let sys = ladder(r)?;
    let nominal = pulses(r, 0.0)?;
    let peaks = r.quantity_array("box.peak", Frequency)?;
    let durations = r.quantity_array("box.duration", Time)?;
    Ok(Box::new(move |_rng| {
        let run = |p: &StirapPulses| stirap(&sys, p).map_err(|e| CliError::module(kind, e));
        let centre = run(&nominal)?;
        let mut table = Table::new("transfer", &[("peak1", "MHz"), ("peak2", "MHz"), ("duration", "us"), ("single_pass", "1"), ("double_pass", "1")]);
        table.push(&[nominal.peak_omega1, nominal.peak_omega2, nominal.duration, centre.transfer_efficiency, centre.return_population]);
        let boxed = peaks.is_some() || durations.is_some();
        if boxed {
            let peaks = peaks.clone().unwrap_or_else(|| vec![nominal.peak_omega1]);
            let durations = durations.clone().unwrap_or_else(|| vec![nominal.duration]);
            for &p in &peaks {
                for &d in &durations {
                    let pulse = StirapPulses { peak_omega1: p, peak_omega2: p * nominal.peak_omega2 / nominal.peak_omega1, duration: d, ..nominal };
                    let o = run(&pulse)?;
                    table.push(&[pulse.peak_omega1, pulse.peak_omega2, d, o.transfer_efficiency, o.return_population]);
                }
            }
        }
        let spread = |col: usize| {
            let v: Vec<f64> = table.rows.iter().map(|row| row[col]).collect();
            0.5 * (max_of(v.iter().copied()) - min_of(v.iter().copied()))
        };
        let mut out = Outcome::default();
        out.scalar("single_pass", centre.transfer_efficiency, "1");
        out.scalar("double_pass", centre.return_population, "1");
        out.scalar("acquired_phase", centre.acquired_phase, "rad");
        if boxed {
            let (s, d) = (spread(3), spread(4));
            out.scalar("single_pass_spread", s, "1");
            out.scalar("double_pass_spread", d, "1");
            out.line(format!("single-pass efficiency {:.2}±{:.2}", centre.transfer_efficiency, s));
            out.line(format!("double-pass efficiency {:.2}±{:.2}", centre.return_population, d));
        } else {
            out.line(format!("single-pass efficiency {:.3}", centre.transfer_efficiency));
            out.line(format!("double-pass efficiency {:.3}", centre.return_population));
        }
        out.tables = vec![table];
        Ok(out)
    }))
}

fn geometric_gate(r: &Reader) -> Result<Job, CliError> {
    let kind = Kind::GeometricGate;
    let sys = ladder(r)?;
    let pulse = pulses(r, PI)?;
    let points = r.count_or("ramsey_points", 12)?;
    Ok(Box::new(move |_rng| {
        let phases: Vec<f64> = (0..points).map(|i| 2.0 * PI * i as f64 / points as f64).collect();
        let g = geometric_phase_gate(&sys, &pulse, &phases).map_err(|e| CliError::module(kind, e))?;
        let mut table = Table::new("ramsey", &[("analysis_phase", "rad"), ("p_ground", "1")]);
        for (f, p) in g.phases.iter().zip(&g.ramsey_p0) {
            table.push(&[*f, *p]);
        }
        let mut out = Outcome::default();
        out.scalar("fidelity", g.fidelity, "1");
        if points > 0 {
            out.scalar("contrast", max_of(g.ramsey_p0.iter().copied()) - min_of(g.ramsey_p0.iter().copied()), "1");
        }
        out.scalar("projected", if g.projected { 1.0 } else { 0.0 }, "1");
        out.line(format!("process fidelity {:.4}", g.fidelity));
        out.tables = vec![table];
        Ok(out)
    }))
}

/// Time of the first local maximum, parabolically refined.
fn first_maximum(t: &[f64], y: &[f64]) -> f64 {
    let Some(i) = (1..y.len().saturating_sub(1)).find(|&i| y[i] >= y[i - 1] && y[i] > y[i + 1]) else {
        return f64::NAN;
    };
    let denom = y[i - 1] - 2.0 * y[i] + y[i + 1];
    let shift = if denom != 0.0 { 0.5 * (y[i - 1] - y[i + 1]) / denom } else { 0.0 };
    t[i] + shift * (t[i + 1] - t[i])
}

fn blockade(r: &Reader) -> Result<Job, CliError> {
    let kind = Kind::Blockade;
    let mut sys = ladder(r)?;
    if !r.has("delta2") {
        sys.delta2 = -sys.delta1;
    }
    let eff = if sys.delta1 != 0.0 { adiabatic_eliminate(&sys).map(|e| e.omega_eff).unwrap_or(f64::NAN) } else { f64::NAN };
    let v_dd = match (r.opt_quantity("v_dd", Frequency)?, r.opt_quantity("v_over_omega_eff", Dimensionless)?) {
        (Some(_), Some(_)) => return Err(r.error("v_over_omega_eff", "give either v_dd or v_over_omega_eff").into()),
        (Some(v), None) => v,
        (None, Some(x)) if eff.is_finite() => x * eff,
        (None, Some(_)) => return Err(r.error("v_over_omega_eff", "needs a non-zero delta1 to define the effective Rabi frequency").into()),
        (None, None) => return Err(r.error("v_dd", "required key is missing").into()),
    };
    let protocol = match r.choice("protocol", &["direct", "stirap"], "direct")? {
        "stirap" => BlockadeProtocol::Stirap(pulses(r, PI)?),
        _ => {
            let default = if eff.is_finite() { 4.0 * PI / eff.abs() } else { f64::NAN };
            let duration = r.quantity_or("duration", Time, default)?;
            if !duration.is_finite() {
                return Err(r.error("duration", "required when delta1 is zero").into());
            }
            BlockadeProtocol::Direct { duration }
        }
    };
    let samples = r.count_or("samples", 400)?;
    let compare = r.flag_or("compare_unblocked", true)?;
    Ok(Box::new(move |_rng| {
        let run = |v: f64| blockade_gate(&sys, &sys, v, &protocol, samples).map_err(|e| CliError::module(kind, e));
        let blocked = run(v_dd)?;
        let mut table = Table::new(
            "pairs",
            &[("time", "us"), ("p_00", "1"), ("p_0r", "1"), ("p_r0", "1"), ("p_rr", "1"), ("rydberg_a", "1"), ("rydberg_b", "1")],
        );
        for ((t, p), ry) in blocked.times.iter().zip(&blocked.pairs).zip(&blocked.rydberg) {
            table.push(&[*t, p.p00, p.p0r, p.pr0, p.prr, ry[0], ry[1]]);
        }
        let mut out = Outcome::default();
        let max_prr = max_of(blocked.pairs.iter().map(|p| p.prr));
        out.scalar("max_p_rr", max_prr, "1");
        out.scalar("v_dd", v_dd, "MHz");
        out.scalar("effective_rabi", eff, "MHz");
        if let Some(phase) = blocked.conditional_phase {
            out.scalar("conditional_phase", phase, "rad");
        }
        if let Some(f) = blocked.fidelity {
            out.scalar("fidelity", f, "1");
        }
        if compare && matches!(protocol, BlockadeProtocol::Direct { .. }) {
            let free = run(0.0)?;
            let single: Vec<f64> = free.rydberg.iter().map(|x| x[0]).collect();
            let collective: Vec<f64> = blocked.pairs.iter().map(|p| p.p0r + p.pr0).collect();
            let speedup = first_maximum(&free.times, &single) / first_maximum(&blocked.times, &collective);
            out.scalar("collective_speedup", speedup, "1");
            out.line(format!("max P_rr {max_prr:.4}, collective speed-up {speedup:.4}"));
        } else {
            out.line(format!("max P_rr {max_prr:.4}"));
        }
        out.tables = vec![table];
        Ok(out)
    }))
}

fn kick_gate(r: &Reader) -> Result<Job, CliError> {
    let kind = Kind::KickGate;
    let ion = species(r, "species")?;
    let trap = trap(r, &ion, kind)?;
    let alpha = r.quantity("alpha", Polarizability)?;
    let mut targets = KickTargets {
        segments: r.count_or("segments", 3)?,
        total_duration: r.opt_quantity("total_duration", Time)?,
        phase: r.quantity_or("target_phase", Angle, PI)?,
        local_corrections: r.flag_or("local_corrections", true)?,
        restarts: r.count_or("restarts", 8)?,
        ..KickTargets::default()
    };
    targets.max_evaluations = r.count_or("max_evaluations", targets.max_evaluations)?;
    if targets.segments == 0 {
        return Err(r.error("segments", "needs at least one segment").into());
    }
    let seed_pulse = match r.opt_quantity("initial_duration", Time)? {
        Some(d) if d > 0.0 => vec![KickSegment { amplitude: 0.0, duration: d }],
        Some(_) => return Err(r.error("initial_duration", "must be positive").into()),
        None => vec![],
    };
    let allow_infeasible = r.flag_or("allow_infeasible", false)?;
    let template = KickGateProblem::two_ion(&trap, &ion, alpha, seed_pulse).map_err(|e| CliError::module(kind, e))?;
    Ok(Box::new(move |rng| {
        let targets = KickTargets { seed: rng.next_u64(), ..targets };
        let best = match optimize_kick(&template, &targets) {
            Ok(b) => b,
            Err(InteractionError::NoFeasiblePulse { infidelity }) if allow_infeasible => {
                let mut out = Outcome::default();
                out.scalar("infidelity", infidelity, "1");
                out.warnings.push(format!("no feasible pulse, best infidelity {infidelity:.3e}"));
                out.line(format!("no feasible pulse, best infidelity {infidelity:.2e}"));
                return Ok(out);
            }
            Err(e) => return Err(CliError::module(kind, e)),
        };
        let mut pulse = Table::new("pulse", &[("segment", "1"), ("amplitude", "V/m"), ("duration", "ns")]);
        for (i, s) in best.pulse.iter().enumerate() {
            pulse.push(&[i as f64, s.amplitude, s.duration]);
        }
        let mut states = Table::new(
            "states",
            &[("state", "1"), ("phase", "rad"), ("com_frequency", "MHz"), ("stretch_frequency", "MHz"), ("residual_com", "1"), ("residual_stretch", "1")],
        );
        for s in 0..4 {
            let w = template.mode_frequencies[s];
            let n = best.report.residual_phonons[s];
            states.push(&[s as f64, best.report.phases[s], w[0], w[1], n[0], n[1]]);
        }
        let residual = max_of(best.report.residual_phonons.iter().flatten().copied());
        let mut out = Outcome::default();
        out.scalar("infidelity", best.infidelity, "1");
        out.scalar("conditional_phase", best.report.conditional_phase(), "rad");
        out.scalar("max_residual_phonons", residual, "1");
        out.scalar("duration", best.pulse.iter().map(|s: &KickSegment| s.duration).sum(), "ns");
        out.scalar("objective", best.objective, "1");
        for w in &best.report.warnings {
            let KickWarning::NotImpulsive { duration, period } = w;
            out.warnings.push(format!("pulse of {:.1} ns is not impulsive against a {:.1} ns mode period", duration * 1e9, period * 1e9));
        }
        out.line(format!("infidelity {:.2e}, states {}", best.infidelity, KICK_BASIS.join("/")));
        out.tables = vec![pulse, states];
        Ok(out)
    }))
}

fn transport(r: &Reader) -> Result<Job, CliError> {
    let kind = Kind::Transport;
    let ion = species(r, "species")?;
    let count = r.count("ions")?;
    let trap = trap(r, &ion, kind)?;
    let params = TransportParams {
        exchange: HBAR * r.quantity("exchange", Frequency)?,
        onsite: HBAR * r.quantity_or("onsite", Frequency, 0.0)?,
        basis: match r.choice("basis", &["single", "full"], "single")? {
            "full" => TransportBasis::Full,
            _ => TransportBasis::SingleExcitation,
        },
    };
    let duration = r.quantity("duration", Time)?;
    let points = r.count_or("points", 601)?;
    let from_last = r.flag_or("from_last", false)?;
    let threshold = r.quantity_or("arrival_threshold", Dimensionless, -0.4)?;
    if count < 2 || points < 3 {
        return Err(r.error("ions", "need at least two ions and three time points").into());
    }
    Ok(Box::new(move |_rng| {
        let chain = linear_chain(&trap, &vec![CrystalIon::ground(ion); count]).map_err(|e| CliError::module(kind, e))?;
        let times: Vec<f64> = (0..points).map(|k| duration * k as f64 / (points - 1) as f64).collect();
        let run = spin_transport(&chain, &params, &times, from_last).map_err(|e| CliError::module(kind, e))?;
        let unit = HBAR / params.exchange.abs();
        let mut columns = vec![column("time", "us"), column("time_exchange", "1")];
        columns.extend((0..count).map(|i| column(format!("sz{i}"), "1")));
        columns.push(column("sz_total", "1"));
        let mut table = Table::with_columns("magnetization", columns);
        for (k, t) in run.times.iter().enumerate() {
            let mut row = vec![*t, t / unit];
            row.extend(&run.magnetization[k]);
            row.push(run.total[k]);
            table.push(&row);
        }
        let far = if from_last { 0 } else { count - 1 };
        let arrival = first_arrival(&run, far, threshold).unwrap_or(f64::NAN);
        let drift = max_of(run.total.iter().map(|t| (t - run.total[0]).abs()));
        let mut out = Outcome::default();
        out.scalar("arrival", arrival, "us");
        out.scalar("arrival_exchange", arrival / unit, "1");
        out.scalar("sz_total_drift", drift, "1");
        out.line(format!("first-to-last peak at {:.3} hbar/J, total S_z drift {:.1e}", arrival / unit, drift));
        out.tables = vec![table];
        Ok(out)
    }))
}

fn plaquette(r: &Reader) -> Result<Job, CliError> {
    let kind = Kind::Plaquette;
    let ion = species(r, "species")?;
    let count = r.count_or("ions", 7)?;
    let trap = trap(r, &ion, kind)?;
    let pin = r.quantity_list("pin_centre", Frequency, 3)?;
    let rabi = r.quantity_list("rabi", Frequency, count)?.ok_or_else(|| r.error("rabi", "required key is missing"))?;
    let rabi_perp = r.quantity_list("rabi_perp", Frequency, count)?;
    let k = r.quantity_list("k_effective", Wavevector, 3)?.ok_or_else(|| r.error("k_effective", "required key is missing"))?;
    let detuning = r.quantity("detuning", Frequency)?;
    let nbar = r.quantity_or("nbar", Dimensionless, 0.0)?;
    if count < 2 {
        return Err(r.error("ions", "need at least two ions").into());
    }
    Ok(Box::new(move |_rng| {
        let module = |e: &dyn std::fmt::Display| CliError::module(kind, e);
        let crystal = equilibrium_positions(&trap, &vec![CrystalIon::ground(ion); count]).map_err(|e| module(&e))?;
        let radius = |p: &[f64; 3]| (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
        let centre = (0..count).min_by(|&a, &b| radius(&crystal.positions[a]).total_cmp(&radius(&crystal.positions[b]))).expect("non-empty crystal");
        let crystal = match &pin {
            Some(w) => crystal.with_tag(centre, ElectronicTag::Frequencies { omega: [w[0], w[1], w[2]] }).relaxed().map_err(|e| module(&e))?,
            None => crystal,
        };
        let modes = normal_modes(&crystal).map_err(|e| module(&e))?;
        let axis = (0..3).max_by(|&a, &b| k[a].abs().total_cmp(&k[b].abs())).unwrap();
        let lowest = min_of((0..modes.frequencies.len()).filter(|&m| modes.axis(m) == axis).map(|m| modes.frequencies[m]));
        let drive = RamanDrive { rabi: rabi.clone(), rabi_perp: rabi_perp.clone(), k_effective: [k[0], k[1], k[2]], beat: lowest - detuning, nbar };
        let j = plaquette_couplings(&crystal, &drive).map_err(|e| module(&e))?;
        let mut table = Table::new("couplings", &[("i", "1"), ("j", "1"), ("distance", "um"), ("jz", "kHz"), ("jperp", "kHz")]);
        for a in 0..count {
            for b in (a + 1)..count {
                let d = (0..3).map(|x| (crystal.positions[a][x] - crystal.positions[b][x]).powi(2)).sum::<f64>().sqrt();
                let perp = j.jperp.as_ref().map(|m| m[(a, b)]).unwrap_or(f64::NAN);
                table.push(&[a as f64, b as f64, d, j.jz[(a, b)], perp]);
            }
        }
        let outer: Vec<usize> = (0..count).filter(|&i| i != centre).collect();
        let spread = uniformity(&j.jz, &outer);
        let mut out = Outcome::default();
        out.scalar("lowest_transverse_mode", lowest, "MHz");
        out.scalar("centre_ion", centre as f64, "1");
        out.scalar("outer_jz_spread", spread, "1");
        out.scalar("lamb_dicke_violations", j.lamb_dicke_violations.len() as f64, "1");
        if !j.lamb_dicke_violations.is_empty() {
            out.warnings.push(format!("{} mode/ion pairs outside the Lamb-Dicke regime", j.lamb_dicke_violations.len()));
        }
        out.line(format!("outer-ring J_z spread {spread:.3} with the lowest transverse mode at {:.4} MHz", lowest / (2.0 * PI * 1e6)));
        out.tables = vec![table];
        Ok(out)
    }))
}
