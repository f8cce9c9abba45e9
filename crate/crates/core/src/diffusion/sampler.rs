use rand::Rng;
use rand_distr::StandardNormal;

use super::schedule::DiffusionSchedule;
use super::tensor::UVTensor;
use crate::error::{Error, Result};

/// Predicts `G_0` from a noisy state at step `t`.
pub trait Denoiser {
    fn denoise(&self, g_t: &[f64], t: usize, schedule: &DiffusionSchedule) -> Result<Vec<f64>>;
}

impl<F> Denoiser for F
where
    F: Fn(&[f64], usize, &DiffusionSchedule) -> Vec<f64>,
{
    fn denoise(&self, g_t: &[f64], t: usize, schedule: &DiffusionSchedule) -> Result<Vec<f64>> {
        Ok(self(g_t, t, schedule))
    }
}

/// Exact posterior mean `E[G_0 | G_t]` for elementwise `G_0 ~ N(mean, std²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalyticGaussDenoiser {
    pub mean: f64,
    pub std: f64,
}

impl AnalyticGaussDenoiser {
    pub fn new(mean: f64, std: f64) -> Result<Self> {
        if !mean.is_finite() || !std.is_finite() || std < 0.0 {
            return Err(Error::invalid(format!("invalid Gaussian data model N({mean}, {std}^2)")));
        }
        Ok(AnalyticGaussDenoiser { mean, std })
    }

    pub fn predict(&self, x: f64, alpha: f64, sigma: f64) -> f64 {
        let s2 = self.std * self.std;
        let v2 = sigma * sigma;
        let denom = alpha * alpha * s2 + v2;
        if denom == 0.0 {
            return self.mean;
        }
        (alpha * s2 * x + v2 * self.mean) / denom
    }
}

impl Denoiser for AnalyticGaussDenoiser {
    fn denoise(&self, g_t: &[f64], t: usize, schedule: &DiffusionSchedule) -> Result<Vec<f64>> {
        let (a, s) = (schedule.alpha(t), schedule.sigma(t));
        Ok(g_t.iter().map(|x| self.predict(*x, a, s)).collect())
    }
}

/// `G_t = α_t·G_0 + σ_t·noise`.
pub fn q_sample(schedule: &DiffusionSchedule, g0: &[f64], t: usize, noise: &[f64]) -> Result<Vec<f64>> {
    if t > schedule.steps {
        return Err(Error::invalid(format!("timestep {t} beyond {}", schedule.steps)));
    }
    if g0.len() != noise.len() {
        return Err(Error::invalid("q_sample inputs differ in length"));
    }
    let (a, s) = (schedule.alpha(t), schedule.sigma(t));
    Ok(g0.iter().zip(noise).map(|(x, e)| a * x + s * e).collect())
}

/// `w_t · ‖G_0 − f(G_t, t)‖²` with the sum-of-squares norm.
pub fn denoiser_loss<D: Denoiser + ?Sized>(
    schedule: &DiffusionSchedule,
    g0: &[f64],
    t: usize,
    noise: &[f64],
    denoiser: &D,
) -> Result<f64> {
    let g_t = q_sample(schedule, g0, t, noise)?;
    let pred = denoiser.denoise(&g_t, t, schedule)?;
    if pred.len() != g0.len() {
        return Err(Error::invalid("denoiser output has the wrong length"));
    }
    let sq: f64 = g0.iter().zip(&pred).map(|(a, b)| (a - b).powi(2)).sum();
    Ok(schedule.ddpm_weight(t) * sq)
}

/// Visited timesteps from `T` down to 0, evenly strided.
pub fn timesteps(total: usize, steps: usize) -> Result<Vec<usize>> {
    if steps == 0 || steps > total {
        return Err(Error::invalid(format!("step count must be in 1..={total}, got {steps}")));
    }
    let mut ts: Vec<usize> = (0..=steps).rev().map(|k| (k * total + steps / 2) / steps).collect();
    ts.dedup();
    Ok(ts)
}

fn normals<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Ancestral sampler over one chain per element of a `shape` tensor.
pub fn reverse_sample<D: Denoiser + ?Sized, R: Rng + ?Sized>(
    schedule: &DiffusionSchedule,
    denoiser: &D,
    shape: (usize, usize, usize),
    rng: &mut R,
    steps: usize,
) -> Result<UVTensor> {
    run(schedule, denoiser, shape, rng, steps, None)
}

/// Reverse sampling where `mask`ed elements are pinned to `known`: noised to
/// the current step after every update and written exactly at the end.
pub fn inpaint_sample<D: Denoiser + ?Sized, R: Rng + ?Sized>(
    schedule: &DiffusionSchedule,
    denoiser: &D,
    known: &UVTensor,
    mask: &[bool],
    rng: &mut R,
    steps: usize,
) -> Result<UVTensor> {
    if mask.len() != known.len() {
        return Err(Error::invalid(format!(
            "inpainting mask has {} entries, tensor has {}",
            mask.len(),
            known.len()
        )));
    }
    run(schedule, denoiser, known.shape(), rng, steps, Some((known, mask)))
}

fn pin<R: Rng + ?Sized>(
    state: &mut [f64],
    known: &UVTensor,
    mask: &[bool],
    schedule: &DiffusionSchedule,
    t: usize,
    rng: &mut R,
) {
    let (a, s) = (schedule.alpha(t), schedule.sigma(t));
    for ((x, k), m) in state.iter_mut().zip(&known.data).zip(mask) {
        if *m {
            *x = if t == 0 {
                *k
            } else {
                let e: f64 = rng.sample(StandardNormal);
                a * k + s * e
            };
        }
    }
}

fn run<D: Denoiser + ?Sized, R: Rng + ?Sized>(
    schedule: &DiffusionSchedule,
    denoiser: &D,
    shape: (usize, usize, usize),
    rng: &mut R,
    steps: usize,
    known: Option<(&UVTensor, &[bool])>,
) -> Result<UVTensor> {
    let ts = timesteps(schedule.steps, steps)?;
    let n = shape.0 * shape.1 * shape.2;
    let mut state = normals(rng, n);
    if let Some((k, m)) = known {
        pin(&mut state, k, m, schedule, schedule.steps, rng);
    }
    for pair in ts.windows(2) {
        let (t, s) = (pair[0], pair[1]);
        let mut g0 = denoiser.denoise(&state, t, schedule)?;
        if g0.len() != n {
            return Err(Error::invalid("denoiser output has the wrong length"));
        }
        g0.iter_mut().for_each(|v| *v = v.clamp(-1.0, 1.0));
        let (c_t, c_0, std) = schedule.posterior_coefficients(s, t)?;
        let noise = normals(rng, n);
        for ((x, g), e) in state.iter_mut().zip(&g0).zip(&noise) {
            *x = c_t * *x + c_0 * g + std * e;
        }
        if let Some((k, m)) = known {
            pin(&mut state, k, m, schedule, s, rng);
        }
        if let Some(i) = state.iter().position(|v| !v.is_finite()) {
            return Err(Error::numeric("reverse_sample", format!("non-finite state at element {i}, step {s}")));
        }
    }
    Ok(UVTensor {
        rows: shape.0,
        cols: shape.1,
        channels: shape.2,
        data: state,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::cosine_schedule;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn moments(v: &[f64]) -> (f64, f64) {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        (m, (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
    }

    #[test]
    fn q_sample_examples() {
        let s = cosine_schedule(100).unwrap();
        let g0 = [0.2, -0.7];
        assert_eq!(q_sample(&s, &g0, 0, &[3.0, 4.0]).unwrap(), g0.to_vec());
        let z = q_sample(&s, &g0, 40, &[0.0, 0.0]).unwrap();
        assert_eq!(z, vec![s.alpha(40) * 0.2, s.alpha(40) * -0.7]);
    }

    #[test]
    fn vp_marginal_variance() {
        let s = cosine_schedule(1000).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g0 = normals(&mut rng, 100_000);
        let e = normals(&mut rng, 100_000);
        let (_, sd) = moments(&q_sample(&s, &g0, 500, &e).unwrap());
        assert!((sd * sd - 1.0).abs() < 0.02, "{sd}");
    }

    #[test]
    fn marginal_consistency_through_transition() {
        let s = cosine_schedule(50).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let n = 100_000;
        let g0: Vec<f64> = normals(&mut rng, n).iter().map(|x| 0.3 + 0.5 * x).collect();
        let gs = q_sample(&s, &g0, 10, &normals(&mut rng, n)).unwrap();
        let (a, sg) = s.transition_params(10, 30).unwrap();
        let e = normals(&mut rng, n);
        let two: Vec<f64> = gs.iter().zip(&e).map(|(x, e)| a * x + sg * e).collect();
        let direct = q_sample(&s, &g0, 30, &normals(&mut rng, n)).unwrap();
        let ((m1, s1), (m2, s2)) = (moments(&two), moments(&direct));
        assert!((m1 - m2).abs() < 0.01 && (s1 / s2 - 1.0).abs() < 0.01, "{m1} {m2} {s1} {s2}");
    }

    #[test]
    fn posterior_bridge_recovers_marginal() {
        let s = cosine_schedule(50).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 100_000;
        let g0: Vec<f64> = normals(&mut rng, n).iter().map(|x| -0.2 + 0.4 * x).collect();
        let gt = q_sample(&s, &g0, 35, &normals(&mut rng, n)).unwrap();
        let (mean, sd) = s.posterior_params(12, 35, &gt, &g0).unwrap();
        let e = normals(&mut rng, n);
        let bridged: Vec<f64> = mean.iter().zip(&e).map(|(m, e)| m + sd * e).collect();
        let direct = q_sample(&s, &g0, 12, &normals(&mut rng, n)).unwrap();
        let ((m1, s1), (m2, s2)) = (moments(&bridged), moments(&direct));
        assert!((m1 - m2).abs() < 0.01 && (s1 / s2 - 1.0).abs() < 0.01, "{m1} {m2} {s1} {s2}");
    }

    #[test]
    fn analytic_denoiser_limits() {
        let d = AnalyticGaussDenoiser::new(0.3, 0.0).unwrap();
        assert_eq!(d.predict(5.0, 0.6, 0.8), 0.3);
        let d = AnalyticGaussDenoiser::new(0.3, 0.2).unwrap();
        assert_eq!(d.predict(0.77, 1.0, 0.0), 0.77);
        assert!(AnalyticGaussDenoiser::new(0.0, -1.0).is_err());
    }

    #[test]
    fn analytic_denoiser_matches_quadrature() {
        let d = AnalyticGaussDenoiser::new(0.3, 0.2).unwrap();
        let (a, s) = (0.7_f64, (1.0_f64 - 0.49).sqrt());
        for x in [-1.0, 0.0, 0.4, 1.3] {
            let (mut num, mut den) = (0.0, 0.0);
            let n = 200_000;
            for i in 0..=n {
                let g = -2.0 + 4.6 * i as f64 / n as f64;
                let w = (-(g - 0.3_f64).powi(2) / (2.0 * 0.04) - (x - a * g).powi(2) / (2.0 * s * s)).exp();
                num += g * w;
                den += w;
            }
            assert!((num / den - d.predict(x, a, s)).abs() < 1e-6);
        }
    }

    #[test]
    fn denoiser_loss_examples() {
        let s = cosine_schedule(100).unwrap();
        let g0 = vec![0.1, 0.5, -0.3];
        let noise = vec![0.2, -0.1, 1.0];
        let perfect = |_: &[f64], _: usize, _: &DiffusionSchedule| vec![0.1, 0.5, -0.3];
        assert_eq!(denoiser_loss(&s, &g0, 30, &noise, &perfect).unwrap(), 0.0);
        let zero = |x: &[f64], _: usize, _: &DiffusionSchedule| vec![0.0; x.len()];
        let l = denoiser_loss(&s, &g0, 30, &noise, &zero).unwrap();
        assert!((l - s.ddpm_weight(30) * 0.35).abs() < 1e-15);
    }

    #[test]
    fn timestep_grid() {
        assert_eq!(timesteps(10, 5).unwrap(), vec![10, 8, 6, 4, 2, 0]);
        assert_eq!(timesteps(10, 1).unwrap(), vec![10, 0]);
        assert_eq!(timesteps(7, 7).unwrap(), (0..=7).rev().collect::<Vec<_>>());
        assert!(timesteps(10, 0).is_err() && timesteps(10, 11).is_err());
    }

    #[test]
    fn zero_variance_data_collapses() {
        let s = cosine_schedule(100).unwrap();
        let d = |x: &[f64], _: usize, _: &DiffusionSchedule| vec![0.0; x.len()];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = reverse_sample(&s, &d, (2, 3, 4), &mut rng, 100).unwrap();
        assert!(out.data.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn one_step_oracle_is_exact() {
        let s = cosine_schedule(100).unwrap();
        let target: Vec<f64> = (0..6).map(|i| i as f64 / 10.0 - 0.2).collect();
        let t2 = target.clone();
        let oracle = move |_: &[f64], _: usize, _: &DiffusionSchedule| t2.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let out = reverse_sample(&s, &oracle, (1, 2, 3), &mut rng, 1).unwrap();
        assert_eq!(out.data, target);
    }

    #[test]
    fn gaussian_oracle_moments_at_full_length() {
        let s = cosine_schedule(1000).unwrap();
        let d = AnalyticGaussDenoiser::new(0.3, 0.2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let out = reverse_sample(&s, &d, (1, 10_000, 1), &mut rng, 1000).unwrap();
        let (m, sd) = moments(&out.data);
        assert!((m - 0.3).abs() < 0.006 && (sd / 0.2 - 1.0).abs() < 0.02, "{m} {sd}");
    }

    #[test]
    fn inpainting_masks() {
        let s = cosine_schedule(50).unwrap();
        let d = AnalyticGaussDenoiser::new(0.0, 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let known = UVTensor {
            rows: 2,
            cols: 2,
            channels: 3,
            data: normals(&mut rng, 12),
        };
        let full = inpaint_sample(&s, &d, &known, &[true; 12], &mut ChaCha8Rng::seed_from_u64(9), 50).unwrap();
        assert_eq!(full, known);
        let empty = inpaint_sample(&s, &d, &known, &[false; 12], &mut ChaCha8Rng::seed_from_u64(9), 50).unwrap();
        let plain = reverse_sample(&s, &d, (2, 2, 3), &mut ChaCha8Rng::seed_from_u64(9), 50).unwrap();
        assert_eq!(empty, plain);
        let mask: Vec<bool> = (0..12).map(|i| i % 3 == 0).collect();
        let part = inpaint_sample(&s, &d, &known, &mask, &mut ChaCha8Rng::seed_from_u64(9), 50).unwrap();
        for i in 0..12 {
            if mask[i] {
                assert_eq!(part.data[i], known.data[i]);
            } else {
                assert_ne!(part.data[i], known.data[i]);
            }
        }
        assert!(inpaint_sample(&s, &d, &known, &[true; 5], &mut rng, 50).is_err());
    }
}
