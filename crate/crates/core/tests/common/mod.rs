//! Invariant checks shared by the property suites and the acceptance run.
#![allow(dead_code)]

use rydion::constants::{angular, coulomb_e2};
use rydion::crystal::{equilibrium_positions, normal_modes, CrystalIon, ElectronicTag};
use rydion::dynamics::{evolve, Envelope, SystemState, ThreeLevelSystem, GROUND};
use rydion::interactions::{pair_potential_exact, pair_potential_multipole};
use rydion::numerics::special::bessel_j_all;
use rydion::spectra::{sideband_series, LineModel};
use rydion::trap::{trap_field, IonSpecies, TrapConfig};

pub type Check = Result<(), String>;

/// Ladder parameters in MHz (ordinary frequency) and the start level.
#[derive(Debug, Clone, Copy)]
pub struct LadderCase {
    pub rabi: [f64; 2],
    pub detuning: [f64; 2],
    pub decay: [f64; 2],
    pub linewidth: [f64; 2],
    pub pulsed: bool,
    pub start: usize,
}

pub fn density_matrix_contract(case: &LadderCase) -> Check {
    let mhz = |v: f64| angular(v * 1e6);
    let mut sys = ThreeLevelSystem::lossless(mhz(case.rabi[0]), mhz(case.rabi[1]), mhz(case.detuning[0]), mhz(case.detuning[1]));
    if case.pulsed {
        sys.omega1 = Envelope::SinSquared { peak: mhz(case.rabi[0]), start: 0.1e-6, width: 0.4e-6 };
    }
    sys.gamma_e = mhz(case.decay[0]);
    sys.gamma_r = mhz(case.decay[1]);
    sys.laser_linewidths = (mhz(case.linewidth[0]), mhz(case.linewidth[1]));
    let traj = evolve(&sys, &SystemState::basis(4, case.start), 0.6e-6, 0.1e-6).map_err(|e| e.to_string())?;
    for s in &traj.states {
        s.check(1e-8).map_err(|e| format!("{e} for {case:?}"))?;
    }
    if case.start == GROUND && case.decay == [0.0, 0.0] {
        let sink = traj.states.last().unwrap().population(3);
        if sink.abs() > 1e-9 {
            return Err(format!("sink populated without decay: {sink:e}"));
        }
    }
    Ok(())
}

/// Trap in V/m² with a probe point (m) and time (s).
#[derive(Debug, Clone, Copy)]
pub struct TrapCase {
    pub gamma_prime: f64,
    pub gamma: f64,
    pub epsilon: f64,
    pub omega_rf: f64,
    pub stray: [f64; 3],
    pub pos: [f64; 3],
    pub time: f64,
}

/// The electrode potential and its field both satisfy Laplace's equation.
pub fn laplace_constraint(case: &TrapCase) -> Check {
    let mut trap = TrapConfig::new(case.gamma_prime, case.gamma, case.epsilon, case.omega_rf).map_err(|e| e.to_string())?;
    trap.e_stray = case.stray;
    let h = 1e-5;
    let shifted = |a: usize, s: f64| {
        let mut p = case.pos;
        p[a] += s * h;
        p
    };
    let scale = 2.0 * (case.gamma_prime.abs() + 2.0 * case.gamma.abs() * (1.0 + case.epsilon.abs()));
    let mut laplacian = 0.0;
    let mut divergence = 0.0;
    for a in 0..3 {
        let plus = trap.potential(shifted(a, 1.0), case.time);
        let minus = trap.potential(shifted(a, -1.0), case.time);
        laplacian += (plus - 2.0 * trap.potential(case.pos, case.time) + minus) / (h * h);
        divergence += (trap_field(&trap, shifted(a, 1.0), case.time)[a] - trap_field(&trap, shifted(a, -1.0), case.time)[a]) / (2.0 * h);
    }
    if laplacian.abs() > 1e-6 * scale || divergence.abs() > 1e-6 * scale {
        return Err(format!("laplacian {laplacian:e}, divergence {divergence:e}, scale {scale:e}"));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct CrystalCase {
    pub ions: usize,
    /// Radial over axial secular frequency.
    pub aspect: f64,
    pub axial_mhz: f64,
    /// Ions tagged doubly charged.
    pub doubly: Vec<bool>,
}

/// Mass-weighted normal-mode vectors form an orthonormal basis with real frequencies.
pub fn mode_orthonormality(case: &CrystalCase) -> Check {
    let ca = IonSpecies::calcium40();
    let wz = angular(case.axial_mhz * 1e6);
    let trap = TrapConfig::from_secular(&ca, case.aspect * wz, wz, 20.0 * case.aspect * wz).map_err(|e| e.to_string())?;
    let ions: Vec<CrystalIon> = (0..case.ions)
        .map(|i| {
            let tag = if case.doubly.get(i).copied().unwrap_or(false) { ElectronicTag::DoublyCharged } else { ElectronicTag::Ground };
            CrystalIon { species: ca.clone(), tag }
        })
        .collect();
    let crystal = equilibrium_positions(&trap, &ions).map_err(|e| e.to_string())?;
    let modes = normal_modes(&crystal).map_err(|e| e.to_string())?;
    let v = &modes.eigenvectors;
    let gram = v.transpose() * v;
    let dim = gram.nrows();
    for i in 0..dim {
        for j in 0..dim {
            let expect = if i == j { 1.0 } else { 0.0 };
            if (gram[(i, j)] - expect).abs() > 1e-9 {
                return Err(format!("gram[{i},{j}] = {} for {case:?}", gram[(i, j)]));
            }
        }
    }
    // a zigzag in a symmetric trap keeps a free rotation about the axis
    if modes.frequencies.iter().any(|w| !(*w >= 0.0)) || modes.frequencies.windows(2).any(|w| w[1] < w[0]) {
        return Err(format!("frequencies not non-negative ascending: {:?}", modes.frequencies));
    }
    Ok(())
}

/// Σ J_n(x)² = 1 and the sideband weights of a modulated line sum to one.
pub fn bessel_completeness(x: f64, beta_mm: f64, beta_alpha: f64) -> Check {
    let cap = (x.abs().ceil() as usize) + 30;
    let j = bessel_j_all(cap, x);
    let total: f64 = j[0] * j[0] + 2.0 * j[1..].iter().map(|v| v * v).sum::<f64>();
    if (total - 1.0).abs() > 1e-12 {
        return Err(format!("Σ J_n({x})² = {total}"));
    }
    let model = LineModel::from_indices(0.0, beta_mm, beta_alpha, angular(6.5e6), angular(1e6));
    let bands = sideband_series(&model, model.default_order_cap()).map_err(|e| e.to_string())?;
    let weights: f64 = bands.iter().map(|b| b.weight).sum();
    if (weights - 1.0).abs() > 1e-6 {
        return Err(format!("sideband weights sum to {weights} at ({beta_mm}, {beta_alpha})"));
    }
    Ok(())
}

/// Core separation along `direction`, electron offsets along unit vectors with relative lengths.
#[derive(Debug, Clone, Copy)]
pub struct PairCase {
    pub distance: f64,
    pub direction: [f64; 3],
    pub electron_dirs: [[f64; 3]; 2],
    pub electron_scale: [f64; 2],
}

fn normalized(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// 1/|R + a| − 1/|R| without cancellation.
fn inverse_distance_change(r: [f64; 3], a: [f64; 3]) -> f64 {
    let moved = [r[0] + a[0], r[1] + a[1], r[2] + a[2]];
    let (d0, d1) = (dot(r, r).sqrt(), dot(moved, moved).sqrt());
    -(2.0 * dot(r, a) + dot(a, a)) / (d0 * d1 * (d0 + d1))
}

/// Signed remainder exact − expansion (J) with electron offsets scaled by `ratio`.
///
/// The exact energy minus its monopole part is evaluated in a cancellation-free
/// form so the third-order remainder stays above rounding noise.
fn multipole_remainder(case: &PairCase, ratio: f64) -> Result<f64, String> {
    let core = normalized(case.direction).map(|c| c * case.distance);
    let separation = core.map(|c| -c);
    let offset = |k: usize| normalized(case.electron_dirs[k]).map(|c| c * case.electron_scale[k] * ratio * case.distance);
    let (ri, rj) = (offset(0), offset(1));
    let series = pair_potential_multipole([0.0; 3], core, ri, rj).map_err(|e| e.to_string())?;
    let exact = pair_potential_exact([0.0; 3], core, ri, rj).map_err(|e| e.to_string())?;
    let monopole = coulomb_e2() / case.distance;
    if ((series.coulomb - monopole) / monopole).abs() > 1e-14 || ((exact - monopole) / monopole).abs() > 10.0 * ratio.abs() {
        return Err(format!("monopole mismatch at ratio {ratio}"));
    }
    let neg_rj = rj.map(|c| -c);
    let diff = [ri[0] - rj[0], ri[1] - rj[1], ri[2] - rj[2]];
    let higher = -2.0 * inverse_distance_change(separation, neg_rj) - 2.0 * inverse_distance_change(separation, ri)
        + inverse_distance_change(separation, diff);
    Ok(coulomb_e2() * higher - (series.dipole_charge + series.quadrupole_charge + series.dipole_dipole))
}

/// log-log slope of the leading remainder against the size ratio.
///
/// The odd part under r → −r isolates the third-order term; the full remainder
/// turns fourth-order dominated where that term nearly vanishes.
pub fn multipole_slope(case: &PairCase) -> Result<f64, String> {
    let (small, large): (f64, f64) = (2e-4, 8e-4);
    let odd = |e: f64| -> Result<f64, String> { Ok(0.5 * (multipole_remainder(case, e)? - multipole_remainder(case, -e)?).abs()) };
    Ok((odd(large)? / odd(small)?).ln() / (large / small).ln())
}

pub fn multipole_slope_check(case: &PairCase) -> Check {
    let slope = multipole_slope(case)?;
    if (slope - 3.0).abs() > 0.2 {
        return Err(format!("slope {slope} for {case:?}"));
    }
    Ok(())
}

/// Rejects near-zero vectors drawn for directions.
pub fn usable_direction(v: &[f64; 3]) -> bool {
    v.iter().map(|c| c * c).sum::<f64>() > 0.01
}
