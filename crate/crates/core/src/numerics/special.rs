//! Special functions: Bessel functions of the first kind, associated Laguerre
//! polynomials, log-factorials and angular-momentum coupling coefficients.

/// Bessel functions J_0(x) … J_nmax(x) for real x by Miller's backward recurrence.
pub fn bessel_j_all(nmax: usize, x: f64) -> Vec<f64> {
    let mut out = vec![0.0; nmax + 1];
    if x == 0.0 {
        out[0] = 1.0;
        return out;
    }
    let ax = x.abs();
    let start = {
        let base = (nmax as f64).max(ax) + 20.0 + (40.0 * (nmax as f64).max(ax)).sqrt();
        let m = base.ceil() as usize;
        m + (m % 2)
    };
    let mut j_next = 0.0_f64;
    let mut j_cur = 1.0e-300_f64;
    let mut norm = 0.0;
    let mut vals = vec![0.0; start + 1];
    vals[start] = j_cur;
    for k in (1..=start).rev() {
        let j_prev = 2.0 * k as f64 / ax * j_cur - j_next;
        j_next = j_cur;
        j_cur = j_prev;
        vals[k - 1] = j_cur;
        if j_cur.abs() > 1.0e250 {
            for v in vals.iter_mut().skip(k - 1) {
                *v *= 1.0e-250;
            }
            j_next *= 1.0e-250;
            j_cur *= 1.0e-250;
        }
    }
    for (k, v) in vals.iter().enumerate() {
        if k == 0 {
            norm += v;
        } else if k % 2 == 0 {
            norm += 2.0 * v;
        }
    }
    for (n, o) in out.iter_mut().enumerate() {
        let mut v = vals[n] / norm;
        if x < 0.0 && n % 2 == 1 {
            v = -v;
        }
        *o = v;
    }
    out
}

/// Bessel function J_n(x) for any integer order.
pub fn bessel_j(n: i64, x: f64) -> f64 {
    let m = n.unsigned_abs() as usize;
    let v = bessel_j_all(m, x)[m];
    if n < 0 && m % 2 == 1 {
        -v
    } else {
        v
    }
}

/// ln(n!) by direct summation for small n and Stirling series above.
pub fn ln_factorial(n: u64) -> f64 {
    if n < 64 {
        (2..=n).map(|k| (k as f64).ln()).sum()
    } else {
        let x = n as f64 + 1.0;
        (x - 0.5) * x.ln() - x + 0.5 * (2.0 * std::f64::consts::PI).ln() + 1.0 / (12.0 * x)
            - 1.0 / (360.0 * x.powi(3))
            + 1.0 / (1260.0 * x.powi(5))
    }
}

/// Generalized Laguerre polynomial L_n^(a)(x) by upward recurrence.
pub fn laguerre(n: u64, a: f64, x: f64) -> f64 {
    if n == 0 {
        return 1.0;
    }
    let mut lm1 = 1.0;
    let mut l = 1.0 + a - x;
    for k in 1..n {
        let kf = k as f64;
        let next = ((2.0 * kf + 1.0 + a - x) * l - (kf + a) * lm1) / (kf + 1.0);
        lm1 = l;
        l = next;
    }
    l
}

fn ln_fact_i(n: i64) -> f64 {
    debug_assert!(n >= 0);
    ln_factorial(n as u64)
}

fn triangle_ok(a: i64, b: i64, c: i64) -> bool {
    c >= (a - b).abs() && c <= a + b && (a + b + c) % 2 == 0
}

fn ln_delta(a: i64, b: i64, c: i64) -> f64 {
    // arguments are doubled angular momenta
    0.5 * (ln_fact_i((a + b - c) / 2) + ln_fact_i((a - b + c) / 2) + ln_fact_i((-a + b + c) / 2)
        - ln_fact_i((a + b + c) / 2 + 1))
}

/// Wigner 3j symbol with every argument given as twice its value.
pub fn wigner_3j(j1: i64, j2: i64, j3: i64, m1: i64, m2: i64, m3: i64) -> f64 {
    if m1 + m2 + m3 != 0 || !triangle_ok(j1, j2, j3) {
        return 0.0;
    }
    if m1.abs() > j1 || m2.abs() > j2 || m3.abs() > j3 {
        return 0.0;
    }
    if (j1 + m1) % 2 != 0 || (j2 + m2) % 2 != 0 || (j3 + m3) % 2 != 0 {
        return 0.0;
    }
    let pre = ln_delta(j1, j2, j3)
        + 0.5
            * (ln_fact_i((j1 + m1) / 2)
                + ln_fact_i((j1 - m1) / 2)
                + ln_fact_i((j2 + m2) / 2)
                + ln_fact_i((j2 - m2) / 2)
                + ln_fact_i((j3 + m3) / 2)
                + ln_fact_i((j3 - m3) / 2));
    let kmin = 0.max((j2 - j3 - m1) / 2).max((j1 - j3 + m2) / 2);
    let kmax = ((j1 + j2 - j3) / 2).min((j1 - m1) / 2).min((j2 + m2) / 2);
    let mut sum = 0.0;
    for k in kmin..=kmax {
        let den = ln_fact_i(k)
            + ln_fact_i((j1 + j2 - j3) / 2 - k)
            + ln_fact_i((j1 - m1) / 2 - k)
            + ln_fact_i((j2 + m2) / 2 - k)
            + ln_fact_i((j3 - j2 + m1) / 2 + k)
            + ln_fact_i((j3 - j1 - m2) / 2 + k);
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        sum += sign * (pre - den).exp();
    }
    let phase = (j1 - j2 - m3) / 2;
    if phase.rem_euclid(2) == 0 {
        sum
    } else {
        -sum
    }
}

/// Wigner 6j symbol {j1 j2 j3; j4 j5 j6} with doubled arguments.
pub fn wigner_6j(j1: i64, j2: i64, j3: i64, j4: i64, j5: i64, j6: i64) -> f64 {
    if !triangle_ok(j1, j2, j3)
        || !triangle_ok(j1, j5, j6)
        || !triangle_ok(j4, j2, j6)
        || !triangle_ok(j4, j5, j3)
    {
        return 0.0;
    }
    let pre = ln_delta(j1, j2, j3) + ln_delta(j1, j5, j6) + ln_delta(j4, j2, j6) + ln_delta(j4, j5, j3);
    let a = [(j1 + j2 + j3) / 2, (j1 + j5 + j6) / 2, (j4 + j2 + j6) / 2, (j4 + j5 + j3) / 2];
    let b = [(j1 + j2 + j4 + j5) / 2, (j2 + j3 + j5 + j6) / 2, (j3 + j1 + j6 + j4) / 2];
    let kmin = *a.iter().max().unwrap();
    let kmax = *b.iter().min().unwrap();
    let mut sum = 0.0;
    for k in kmin..=kmax {
        let den: f64 = a.iter().map(|&ai| ln_fact_i(k - ai)).sum::<f64>()
            + b.iter().map(|&bi| ln_fact_i(bi - k)).sum::<f64>();
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        sum += sign * (pre + ln_fact_i(k + 1) - den).exp();
    }
    sum
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bessel_reference_values() {
        assert!((bessel_j(0, 1.0) - 0.765_197_686_557_966_6).abs() < 1e-14);
        assert!((bessel_j(1, 1.0) - 0.440_050_585_744_933_5).abs() < 1e-14);
        assert!((bessel_j(2, 2.5) - 0.446_059_058_439_617_2).abs() < 1e-13);
        assert!((bessel_j(-1, 1.0) + 0.440_050_585_744_933_5).abs() < 1e-14);
        assert!((bessel_j(5, 0.3) - 6.3043e-7).abs() < 1e-10);
    }

    #[test]
    fn bessel_completeness() {
        for &x in &[0.1, 1.0, 3.0, 5.0] {
            let j = bessel_j_all(40, x);
            let s: f64 = j[0] * j[0] + 2.0 * j[1..].iter().map(|v| v * v).sum::<f64>();
            assert!((s - 1.0).abs() < 1e-12, "x={x} sum={s}");
        }
    }

    #[test]
    fn laguerre_low_orders() {
        let x = 0.7;
        assert!((laguerre(1, 2.0, x) - (3.0 - x)).abs() < 1e-14);
        assert!((laguerre(2, 0.0, x) - (x * x - 4.0 * x + 2.0) / 2.0).abs() < 1e-14);
    }

    #[test]
    fn ln_factorial_matches_direct() {
        let direct: f64 = (2..=100u64).map(|k| (k as f64).ln()).sum();
        assert!((ln_factorial(100) - direct).abs() < 1e-10);
    }

    #[test]
    fn three_j_known() {
        // (1 1 0; 0 0 0) = -1/sqrt(3)
        assert!((wigner_3j(2, 2, 0, 0, 0, 0) + 1.0 / 3f64.sqrt()).abs() < 1e-14);
        // (1/2 1/2 1; 1/2 -1/2 0) = 1/sqrt(6)
        assert!((wigner_3j(1, 1, 2, 1, -1, 0) - 1.0 / 6f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn six_j_known() {
        // {1/2 1/2 1; 1/2 1/2 0} = 1/2 ; {1 1 1; 1 1 1} = 1/6
        assert!((wigner_6j(1, 1, 2, 1, 1, 0) - 0.5).abs() < 1e-14);
        assert!((wigner_6j(2, 2, 2, 2, 2, 2) - 1.0 / 6.0).abs() < 1e-14);
    }
}
