//! Harmonic-oscillator eigenfunctions in position and momentum space.
//!
//! Wavefunctions use the ground-state size `x0 = √(ħ/2mω)`, so
//! `|φ_0(x)|² ∝ exp(−x²/2x0²)`, and Hermite polynomials with a positive
//! leading coefficient (every φ_n is positive for large positive x).

use num_complex::Complex64;

/// `H_n(u)·e^{−u²/2} / √(2ⁿ n!)` for n = 0..=n_max, by stable recurrence.
pub fn hermite_functions(n_max: usize, u: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(n_max + 1);
    let h0 = (-u * u / 2.0).exp();
    out.push(h0);
    if n_max == 0 {
        return out;
    }
    out.push(std::f64::consts::SQRT_2 * u * h0);
    for n in 1..n_max {
        let next = (2.0 / (n as f64 + 1.0)).sqrt() * u * out[n]
            - (n as f64 / (n as f64 + 1.0)).sqrt() * out[n - 1];
        out.push(next);
    }
    out
}

/// Normalized φ_n(x) for n = 0..=n_max, 1/√m.
pub fn wavefunctions(n_max: usize, x: f64, x0: f64) -> Vec<f64> {
    let u = x / (std::f64::consts::SQRT_2 * x0);
    let norm = (2.0 * std::f64::consts::PI * x0 * x0).powf(-0.25);
    hermite_functions(n_max, u).into_iter().map(|h| h * norm).collect()
}

/// `∫ φ_n(x) e^{iκx} dx` for n = 0..=n_max.
pub fn fourier_transforms(n_max: usize, kappa: f64, x0: f64) -> Vec<Complex64> {
    let nu = std::f64::consts::SQRT_2 * x0 * kappa;
    let norm = (8.0 * std::f64::consts::PI * x0 * x0).powf(0.25);
    let mut phase = Complex64::new(1.0, 0.0);
    hermite_functions(n_max, nu)
        .into_iter()
        .map(|h| {
            let v = phase * (h * norm);
            phase *= Complex64::i();
            v
        })
        .collect()
}
