//! Radial wavefunctions of a single valence electron in a Coulomb potential with
//! non-integer effective quantum number, by inward Numerov integration on a
//! square-root mesh x = √r (atomic units).
//!
//! With u(r) = x^{1/2} X(x) the radial equation becomes X'' = g(x) X where
//! g(x) = (2l + 1/2)(2l + 3/2)/x² − 8𝒵 − 8E x².

/// Radial wavefunction sampled on the uniform grid x_k = k·h.
#[derive(Debug, Clone)]
pub struct RadialWave {
    pub h: f64,
    /// Index of the first stored sample.
    pub first: usize,
    /// X(x_k) for k = first, first+1, …; normalized so ∫u² dr = 1.
    pub values: Vec<f64>,
}

impl RadialWave {
    pub fn last(&self) -> usize {
        self.first + self.values.len() - 1
    }

    pub fn x(&self, k: usize) -> f64 {
        k as f64 * self.h
    }
}

/// Default mesh step in √a₀.
pub const DEFAULT_STEP: f64 = 0.01;

/// Inner and outer radial limits (a₀) for effective quantum number `n_star`.
pub fn radial_limits(n_star: f64, l: u32, z: f64) -> (f64, f64) {
    let ll = (l * (l + 1)) as f64;
    let disc = (1.0 - ll / (n_star * n_star)).max(0.0);
    let r_turn = n_star * n_star * (1.0 - disc.sqrt()) / z;
    let r_in = r_turn.max(0.05 / z);
    let r_out = 2.0 * n_star * (n_star + 15.0) / z;
    (r_in, r_out)
}

/// Integrates the radial equation for a state of effective quantum number
/// `n_star`, orbital momentum `l` and core charge `z`.
pub fn radial_wave(n_star: f64, l: u32, z: f64, step: f64) -> Option<RadialWave> {
    if !(n_star > 0.5) {
        return None;
    }
    let energy = -z * z / (2.0 * n_star * n_star);
    let (r_in, r_out) = radial_limits(n_star, l, z);
    // at least ten samples per local wavelength in x
    let kmax = (8.0 * z).sqrt();
    let h = step.min(2.0 * std::f64::consts::PI / kmax / 10.0);
    let lf = l as f64;
    let a = (2.0 * lf + 0.5) * (2.0 * lf + 1.5);
    let g = |x: f64| a / (x * x) - 8.0 * z - 8.0 * energy * x * x;
    let last = (r_out.sqrt() / h).ceil() as usize;
    let first = ((r_in.sqrt() / h).floor() as usize).max(1);
    if first + 4 >= last {
        return None;
    }
    let len = last - first + 1;
    let mut vals = vec![0.0; len];
    vals[len - 1] = 1e-10;
    vals[len - 2] = 1e-10 * (1.0 + h * g(last as f64 * h).max(0.0).sqrt());
    let h12 = h * h / 12.0;
    for i in (0..len - 2).rev() {
        let k = first + i;
        let x0 = k as f64 * h;
        let x1 = x0 + h;
        let x2 = x0 + 2.0 * h;
        let v = (2.0 * (1.0 + 5.0 * h12 * g(x1)) * vals[i + 1] - (1.0 - h12 * g(x2)) * vals[i + 2]) / (1.0 - h12 * g(x0));
        vals[i] = v;
        if !v.is_finite() {
            return None;
        }
        if v.abs() > 1e250 {
            for w in vals.iter_mut().skip(i) {
                *w *= 1e-250;
            }
        }
    }
    let norm: f64 = simpson(&vals.iter().enumerate().map(|(i, v)| {
        let x = (first + i) as f64 * h;
        2.0 * x * x * v * v
    }).collect::<Vec<_>>(), h);
    if !(norm > 0.0) || !norm.is_finite() {
        return None;
    }
    let s = 1.0 / norm.sqrt();
    // fix overall sign so the outermost lobe is positive
    let sign = vals.iter().rev().find(|v| v.abs() > 0.0).map(|v| v.signum()).unwrap_or(1.0);
    for v in vals.iter_mut() {
        *v *= s * sign;
    }
    Some(RadialWave { h, first, values: vals })
}

fn simpson(f: &[f64], h: f64) -> f64 {
    let n = f.len();
    if n < 3 {
        return f.iter().sum::<f64>() * h;
    }
    let mut s = 0.0;
    let m = if n % 2 == 1 { n } else { n - 1 };
    for i in (0..m - 2).step_by(2) {
        s += f[i] + 4.0 * f[i + 1] + f[i + 2];
    }
    s *= h / 3.0;
    if m < n {
        s += 0.5 * h * (f[n - 2] + f[n - 1]);
    }
    s
}

/// ⟨a| r^p |b⟩ in units of a₀^p. Both waves must share the mesh step.
pub fn radial_integral(a: &RadialWave, b: &RadialWave, power: i32) -> f64 {
    assert!((a.h - b.h).abs() < 1e-15, "mesh mismatch");
    let lo = a.first.max(b.first);
    let hi = a.last().min(b.last());
    if lo >= hi {
        return 0.0;
    }
    let h = a.h;
    let f: Vec<f64> = (lo..=hi)
        .map(|k| {
            let x = k as f64 * h;
            2.0 * x.powi(2 + 2 * power) * a.values[k - a.first] * b.values[k - b.first]
        })
        .collect();
    simpson(&f, h)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hydrogen_expectation_values() {
        for &(n, l) in &[(30u32, 0u32), (30, 1), (25, 2), (40, 5)] {
            let w = radial_wave(n as f64, l, 1.0, DEFAULT_STEP).unwrap();
            let r = radial_integral(&w, &w, 1);
            let nn = (n * n) as f64;
            let expected = (3.0 * nn - (l * (l + 1)) as f64) / 2.0;
            assert!((r / expected - 1.0).abs() < 1e-3, "n={n} l={l} r={r} exp={expected}");
            let r2 = radial_integral(&w, &w, 2);
            let e2 = nn * (5.0 * nn + 1.0 - 3.0 * (l * (l + 1)) as f64) / 2.0;
            assert!((r2 / e2 - 1.0).abs() < 1e-3, "r2 {r2} {e2}");
        }
    }

    #[test]
    fn hydrogen_dipole_same_n() {
        // ⟨n,l|r|n,l-1⟩ = (3/2) n √(n² − l²)
        let n = 20u32;
        let a = radial_wave(n as f64, 1, 1.0, DEFAULT_STEP).unwrap();
        let b = radial_wave(n as f64, 0, 1.0, DEFAULT_STEP).unwrap();
        let d = radial_integral(&a, &b, 1).abs();
        let exp = 1.5 * n as f64 * ((n * n - 1) as f64).sqrt();
        assert!((d / exp - 1.0).abs() < 1e-3, "{d} {exp}");
    }

    #[test]
    fn matrix_elements_symmetric() {
        let a = radial_wave(47.3, 0, 2.0, DEFAULT_STEP).unwrap();
        let b = radial_wave(47.65, 1, 2.0, DEFAULT_STEP).unwrap();
        let ab = radial_integral(&a, &b, 1);
        let ba = radial_integral(&b, &a, 1);
        assert!(((ab - ba) / ab).abs() < 1e-12);
    }
}
