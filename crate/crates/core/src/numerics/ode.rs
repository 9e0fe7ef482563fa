//! Adaptive Dormand–Prince 5(4) integrator for real state vectors.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OdeError {
    #[error("step size underflow at t = {t}")]
    StepFailure { t: f64 },
    #[error("non-finite state at t = {t}")]
    NonFinite { t: f64 },
}

/// Tolerances and step control.
#[derive(Debug, Clone, Copy)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    pub initial_step: Option<f64>,
    pub max_step: f64,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self { rtol: 1e-9, atol: 1e-10, initial_step: None, max_step: f64::INFINITY, max_steps: 5_000_000 }
    }
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

/// Integrates dy/dt = f(t, y) and returns the state at each requested time.
///
/// `times` must be nondecreasing and start at or after `t0`.
pub fn integrate<F>(mut f: F, t0: f64, y0: &[f64], times: &[f64], opts: &OdeOptions) -> Result<Vec<Vec<f64>>, OdeError>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let n = y0.len();
    let mut y = y0.to_vec();
    let mut t = t0;
    let mut k: Vec<Vec<f64>> = (0..7).map(|_| vec![0.0; n]).collect();
    let mut tmp = vec![0.0; n];
    let mut ynew = vec![0.0; n];
    f(t, &y, &mut k[0]);
    let mut h = opts.initial_step.unwrap_or_else(|| {
        let scale: f64 = y.iter().map(|v| v.abs()).fold(0.0, f64::max).max(opts.atol);
        let rate: f64 = k[0].iter().map(|v| v.abs()).fold(0.0, f64::max);
        if rate > 0.0 {
            0.01 * scale / rate
        } else {
            1e-6
        }
    });
    let mut out = Vec::with_capacity(times.len());
    let mut steps = 0usize;
    for &target in times {
        while t < target {
            if steps > opts.max_steps {
                return Err(OdeError::StepFailure { t });
            }
            let remaining = target - t;
            let mut hh = h.min(opts.max_step).min(remaining);
            let last = hh >= remaining * (1.0 - 1e-12);
            if last {
                hh = remaining;
            }
            if hh <= 1e-14 * t.abs().max(1e-300) && !last {
                return Err(OdeError::StepFailure { t });
            }
            for i in 0..n {
                tmp[i] = y[i] + hh * A21 * k[0][i];
            }
            let (k0, rest) = k.split_at_mut(1);
            f(t + C2 * hh, &tmp, &mut rest[0]);
            for i in 0..n {
                tmp[i] = y[i] + hh * (A31 * k0[0][i] + A32 * rest[0][i]);
            }
            f(t + C3 * hh, &tmp, &mut rest[1]);
            for i in 0..n {
                tmp[i] = y[i] + hh * (A41 * k0[0][i] + A42 * rest[0][i] + A43 * rest[1][i]);
            }
            f(t + C4 * hh, &tmp, &mut rest[2]);
            for i in 0..n {
                tmp[i] = y[i] + hh * (A51 * k0[0][i] + A52 * rest[0][i] + A53 * rest[1][i] + A54 * rest[2][i]);
            }
            f(t + C5 * hh, &tmp, &mut rest[3]);
            for i in 0..n {
                tmp[i] = y[i]
                    + hh * (A61 * k0[0][i] + A62 * rest[0][i] + A63 * rest[1][i] + A64 * rest[2][i] + A65 * rest[3][i]);
            }
            f(t + hh, &tmp, &mut rest[4]);
            for i in 0..n {
                ynew[i] = y[i]
                    + hh * (B1 * k0[0][i] + B3 * rest[1][i] + B4 * rest[2][i] + B5 * rest[3][i] + B6 * rest[4][i]);
            }
            f(t + hh, &ynew, &mut rest[5]);
            let mut err = 0.0f64;
            for i in 0..n {
                let e = hh
                    * (E1 * k0[0][i] + E3 * rest[1][i] + E4 * rest[2][i] + E5 * rest[3][i] + E6 * rest[4][i]
                        + E7 * rest[5][i]);
                let sc = opts.atol + opts.rtol * y[i].abs().max(ynew[i].abs());
                err = err.max((e / sc).abs());
            }
            steps += 1;
            if !err.is_finite() {
                h = hh * 0.1;
                if h < 1e-300 {
                    return Err(OdeError::NonFinite { t });
                }
                continue;
            }
            if err <= 1.0 {
                t = if last { target } else { t + hh };
                std::mem::swap(&mut y, &mut ynew);
                let (k0, rest) = k.split_at_mut(1);
                std::mem::swap(&mut k0[0], &mut rest[5]);
                let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
                if !last || fac < 1.0 {
                    h = hh * fac;
                }
            } else {
                h = hh * (0.9 * err.powf(-0.2)).clamp(0.1, 0.9);
            }
        }
        out.push(y.clone());
    }
    Ok(out)
}
