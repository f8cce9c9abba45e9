use std::f64::consts::FRAC_PI_2;

use crate::error::{Error, Result};

/// Offset of the squared-cosine ᾱ curve.
pub const COSINE_OFFSET: f64 = 0.008;

/// Variance-preserving schedule: `alphas[t]² + sigmas[t]² = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSchedule {
    pub steps: usize,
    pub alphas: Vec<f64>,
    pub sigmas: Vec<f64>,
}

/// `ᾱ(t) = cos²(((t/T + s)/(1 + s))·π/2) / cos²((s/(1 + s))·π/2)`,
/// `α_t = √ᾱ`, `σ_t = √(1 − ᾱ)`.
pub fn cosine_schedule(steps: usize) -> Result<DiffusionSchedule> {
    if steps == 0 {
        return Err(Error::invalid("schedule needs at least one step"));
    }
    let s = COSINE_OFFSET;
    let f = |t: f64| (((t / steps as f64 + s) / (1.0 + s)) * FRAC_PI_2).cos().powi(2);
    let f0 = f(0.0);
    let mut alphas = Vec::with_capacity(steps + 1);
    let mut sigmas = Vec::with_capacity(steps + 1);
    for t in 0..=steps {
        let abar = (f(t as f64) / f0).clamp(0.0, 1.0);
        alphas.push(abar.sqrt());
        sigmas.push((1.0 - abar).sqrt());
    }
    Ok(DiffusionSchedule { steps, alphas, sigmas })
}

impl DiffusionSchedule {
    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t]
    }

    pub fn sigma(&self, t: usize) -> f64 {
        self.sigmas[t]
    }

    fn check(&self, s: usize, t: usize) -> Result<()> {
        if s > t || t > self.steps {
            return Err(Error::invalid(format!(
                "need s <= t <= {}, got s = {s}, t = {t}",
                self.steps
            )));
        }
        Ok(())
    }

    /// `(α_{t|s}, σ_{t|s})` of the Markov step from `s` to `t`.
    pub fn transition_params(&self, s: usize, t: usize) -> Result<(f64, f64)> {
        self.check(s, t)?;
        if s == t {
            return Ok((1.0, 0.0));
        }
        let a = self.alphas[t] / self.alphas[s];
        let v = self.sigmas[t].powi(2) - a * a * self.sigmas[s].powi(2);
        Ok((a, v.max(0.0).sqrt()))
    }

    /// Coefficients of `q(G_s | G_t, Ĝ_0)`: `mean = c_t·G_t + c_0·Ĝ_0`.
    /// Returns `(c_t, c_0, std)`.
    pub fn posterior_coefficients(&self, s: usize, t: usize) -> Result<(f64, f64, f64)> {
        self.check(s, t)?;
        if s == t {
            return Ok((1.0, 0.0, 0.0));
        }
        let (a_ts, sig_ts) = self.transition_params(s, t)?;
        let var_t = self.sigmas[t].powi(2);
        let var_s = self.sigmas[s].powi(2);
        let var_ts = sig_ts * sig_ts;
        let c_t = a_ts * var_s / var_t;
        let c_0 = self.alphas[s] * var_ts / var_t;
        let std = (var_ts * var_s / var_t).sqrt();
        Ok((c_t, c_0, std))
    }

    /// Posterior mean (elementwise) and standard deviation.
    pub fn posterior_params(&self, s: usize, t: usize, g_t: &[f64], g0_hat: &[f64]) -> Result<(Vec<f64>, f64)> {
        if g_t.len() != g0_hat.len() {
            return Err(Error::invalid("posterior inputs differ in length"));
        }
        let (c_t, c_0, std) = self.posterior_coefficients(s, t)?;
        let mean = g_t.iter().zip(g0_hat).map(|(x, g)| c_t * x + c_0 * g).collect();
        Ok((mean, std))
    }

    /// `α_t² / σ_t²`; infinite at `t = 0`.
    pub fn snr(&self, t: usize) -> f64 {
        (self.alphas[t] / self.sigmas[t]).powi(2)
    }

    /// Loss weight `sigmoid(SNR(t))`.
    pub fn ddpm_weight(&self, t: usize) -> f64 {
        let snr = self.snr(t);
        1.0 / (1.0 + (-snr).exp())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn endpoints() {
        let s = cosine_schedule(1000).unwrap();
        assert_eq!(s.alpha(0), 1.0);
        assert_eq!(s.sigma(0), 0.0);
        assert!(s.alpha(1000) < 1e-3);
        assert_eq!(s.alphas.len(), 1001);
    }

    #[test]
    fn variance_preserving_and_monotone() {
        let s = cosine_schedule(1000).unwrap();
        for t in 0..=1000 {
            assert!((s.alpha(t).powi(2) + s.sigma(t).powi(2) - 1.0).abs() < 1e-12);
            if t > 0 {
                assert!(s.alpha(t) <= s.alpha(t - 1));
            }
        }
    }

    #[test]
    fn transition_endpoints() {
        let s = cosine_schedule(50).unwrap();
        assert_eq!(s.transition_params(7, 7).unwrap(), (1.0, 0.0));
        let (a, sg) = s.transition_params(0, 30).unwrap();
        assert_abs_diff_eq!(a, s.alpha(30), epsilon = 1e-15);
        assert_abs_diff_eq!(sg, s.sigma(30), epsilon = 1e-12);
        assert!(s.transition_params(8, 3).is_err());
    }

    #[test]
    fn posterior_endpoints() {
        let s = cosine_schedule(50).unwrap();
        let (m, sd) = s.posterior_params(20, 20, &[0.3, -0.1], &[0.9, 0.9]).unwrap();
        assert_eq!((m, sd), (vec![0.3, -0.1], 0.0));
        let (m, sd) = s.posterior_params(0, 20, &[0.3, -0.1], &[0.5, 0.7]).unwrap();
        assert_abs_diff_eq!(m[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(m[1], 0.7, epsilon = 1e-12);
        assert_eq!(sd, 0.0);
    }

    #[test]
    fn posterior_mean_on_the_noiseless_path() {
        let s = cosine_schedule(50).unwrap();
        for (si, ti) in [(3, 10), (10, 49), (0, 1), (25, 50)] {
            let g0 = 0.42;
            let (m, _) = s.posterior_params(si, ti, &[s.alpha(ti) * g0], &[g0]).unwrap();
            assert_abs_diff_eq!(m[0], s.alpha(si) * g0, epsilon = 1e-12);
        }
    }

    #[test]
    fn weight_examples() {
        let s = cosine_schedule(1000).unwrap();
        let t = (0..=1000).min_by(|a, b| (s.snr(*a) - 1.0).abs().total_cmp(&(s.snr(*b) - 1.0).abs())).unwrap();
        assert_abs_diff_eq!(s.ddpm_weight(t), 0.73106, epsilon = 2e-3);
        assert_abs_diff_eq!(s.ddpm_weight(1000), 0.5, epsilon = 1e-6);
        for t in 1..=1000 {
            assert!(s.ddpm_weight(t) <= s.ddpm_weight(t - 1));
        }
    }
}
