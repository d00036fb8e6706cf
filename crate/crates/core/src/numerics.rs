//! Small special-function helpers shared by the closed-form routines.

use statrs::function::gamma::ln_gamma;

/// Log of the negative binomial pmf: probability of `failures` failures before
/// the `successes`-th success in Bernoulli(`p`) trials,
/// `C(failures + successes - 1, successes - 1) p^successes (1-p)^failures`.
pub fn ln_negbin_pmf(failures: u64, successes: u64, p: f64) -> f64 {
    debug_assert!(successes >= 1);
    debug_assert!(p > 0.0 && p <= 1.0);
    let j = failures as f64;
    let m = successes as f64;
    let ln_binom = if failures == 0 {
        0.0
    } else {
        ln_gamma(j + m) - ln_gamma(m) - ln_gamma(j + 1.0)
    };
    let fail_term = if failures == 0 { 0.0 } else { j * (1.0 - p).ln() };
    ln_binom + m * p.ln() + fail_term
}

pub fn negbin_pmf(failures: u64, successes: u64, p: f64) -> f64 {
    ln_negbin_pmf(failures, successes, p).exp()
}

/// Riemann zeta for real `s > 1`, by Euler–Maclaurin summation with a
/// 64-term head. Absolute error is below 1e-15 for `s` in (1, 4].
pub fn zeta(s: f64) -> f64 {
    assert!(s > 1.0, "zeta requires s > 1");
    const N: usize = 64;
    let head: f64 = (1..N).map(|k| (k as f64).powf(-s)).sum();
    let n = N as f64;
    let tail = n.powf(1.0 - s) / (s - 1.0) + 0.5 * n.powf(-s) + s * n.powf(-s - 1.0) / 12.0
        - s * (s + 1.0) * (s + 2.0) * n.powf(-s - 3.0) / 720.0
        + s * (s + 1.0) * (s + 2.0) * (s + 3.0) * (s + 4.0) * n.powf(-s - 5.0) / 30240.0;
    head + tail
}
