use std::hash::{Hash, Hasher};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::TriPlanePayload;

pub const LATENT_DIM: usize = 512;
/// Extra decoder inputs besides the code: normalized `(h/H, w/W)`.
const COORD_DIM: usize = 2;

/// Shared per-texel network mapping `(z, h/H, w/W)` to one texel's payload
/// through two ReLU hidden layers.
///
/// Weights are input-major like [`RenderMlp`](crate::render::RenderMlp).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatentDecoder {
    pub z: Vec<f64>,
    pub hidden: usize,
    pub res: usize,
    pub channels: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub w3: Vec<f64>,
    pub b3: Vec<f64>,
}

struct TexelActs {
    h1: Vec<f64>,
    h2: Vec<f64>,
}

fn glorot<R: Rng + ?Sized>(rng: &mut R, fan_in: usize, fan_out: usize) -> Vec<f64> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..fan_in * fan_out).map(|_| rng.random_range(-a..a)).collect()
}

impl LatentDecoder {
    pub fn payload_len(&self) -> usize {
        3 * self.res * self.res * self.channels
    }

    /// Random init with `z ~ N(0, 0.01²)`.
    pub fn init<R: Rng + ?Sized>(rng: &mut R, hidden: usize, res: usize, channels: usize) -> Result<Self> {
        if hidden == 0 || res == 0 || channels == 0 {
            return Err(Error::invalid("decoder dimensions must be positive"));
        }
        let p = 3 * res * res * channels;
        let normal = Normal::new(0.0, 0.01).expect("valid std");
        let z = (0..LATENT_DIM).map(|_| normal.sample(rng)).collect();
        let w1 = glorot(rng, LATENT_DIM + COORD_DIM, hidden);
        let w2 = glorot(rng, hidden, hidden);
        // Small output layer keeps initial payloads near zero.
        let w3 = glorot(rng, hidden, p).into_iter().map(|w| 0.1 * w).collect();
        Ok(LatentDecoder {
            z,
            hidden,
            res,
            channels,
            w1,
            b1: vec![0.1; hidden],
            w2,
            b2: vec![0.1; hidden],
            w3,
            b3: vec![0.0; p],
        })
    }

    pub fn zeros(hidden: usize, res: usize, channels: usize) -> Self {
        let p = 3 * res * res * channels;
        LatentDecoder {
            z: vec![0.0; LATENT_DIM],
            hidden,
            res,
            channels,
            w1: vec![0.0; (LATENT_DIM + COORD_DIM) * hidden],
            b1: vec![0.0; hidden],
            w2: vec![0.0; hidden * hidden],
            b2: vec![0.0; hidden],
            w3: vec![0.0; hidden * p],
            b3: vec![0.0; p],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let h = self.hidden;
        let p = self.payload_len();
        let ok = self.z.len() == LATENT_DIM
            && self.w1.len() == (LATENT_DIM + COORD_DIM) * h
            && self.b1.len() == h
            && self.w2.len() == h * h
            && self.b2.len() == h
            && self.w3.len() == h * p
            && self.b3.len() == p;
        if !ok || h == 0 {
            return Err(Error::invalid("latent decoder weights have inconsistent shapes"));
        }
        if self.z.iter().chain(self.weights_iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite latent decoder value"));
        }
        Ok(())
    }

    fn weights_iter(&self) -> impl Iterator<Item = &f64> {
        self.w1
            .iter()
            .chain(&self.b1)
            .chain(&self.w2)
            .chain(&self.b2)
            .chain(&self.w3)
            .chain(&self.b3)
    }

    /// Network weights (not the code) flattened: w1, b1, w2, b2, w3, b3.
    pub fn weights_flat(&self) -> Vec<f64> {
        self.weights_iter().copied().collect()
    }

    pub fn set_weights_flat(&mut self, v: &[f64]) -> Result<()> {
        let n = self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len() + self.w3.len() + self.b3.len();
        if v.len() != n {
            return Err(Error::invalid(format!("decoder expects {n} weights, got {}", v.len())));
        }
        let mut rest = v;
        for dst in [
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.w3,
            &mut self.b3,
        ] {
            let (head, tail) = rest.split_at(dst.len());
            dst.copy_from_slice(head);
            rest = tail;
        }
        Ok(())
    }

    /// `W1ᵀ z + b1`, shared by every texel.
    fn code_preact(&self) -> Vec<f64> {
        let h = self.hidden;
        let mut pre = self.b1.clone();
        for (i, zi) in self.z.iter().enumerate() {
            let row = &self.w1[i * h..(i + 1) * h];
            for (p, w) in pre.iter_mut().zip(row) {
                *p += zi * w;
            }
        }
        pre
    }

    fn coords(height: usize, width: usize, texel: usize) -> [f64; COORD_DIM] {
        let (r, c) = (texel / width, texel % width);
        [r as f64 / height as f64, c as f64 / width as f64]
    }

    fn forward_texel(&self, shared: &[f64], uv: [f64; COORD_DIM], out: &mut [f64]) -> TexelActs {
        let h = self.hidden;
        let mut h1 = shared.to_vec();
        for (k, x) in uv.iter().enumerate() {
            let row = &self.w1[(LATENT_DIM + k) * h..(LATENT_DIM + k + 1) * h];
            for (p, w) in h1.iter_mut().zip(row) {
                *p += x * w;
            }
        }
        h1.iter_mut().for_each(|v| *v = v.max(0.0));
        let mut h2 = self.b2.clone();
        for (i, a) in h1.iter().enumerate() {
            if *a == 0.0 {
                continue;
            }
            for (p, w) in h2.iter_mut().zip(&self.w2[i * h..(i + 1) * h]) {
                *p += a * w;
            }
        }
        h2.iter_mut().for_each(|v| *v = v.max(0.0));
        let p = self.payload_len();
        out.copy_from_slice(&self.b3);
        for (i, a) in h2.iter().enumerate() {
            if *a == 0.0 {
                continue;
            }
            for (o, w) in out.iter_mut().zip(&self.w3[i * p..(i + 1) * p]) {
                *o += a * w;
            }
        }
        TexelActs { h1, h2 }
    }

    /// Payload grid for an `height × width` avatar, texels row-major.
    pub fn decode_payloads(&self, height: usize, width: usize) -> Result<Vec<TriPlanePayload>> {
        Ok(self.decode_traced(height, width)?.0)
    }

    /// Payloads plus a hash of every hidden unit's ReLU state.
    pub fn decode_traced(&self, height: usize, width: usize) -> Result<(Vec<TriPlanePayload>, u64)> {
        self.validate()?;
        let shared = self.code_preact();
        let p = self.payload_len();
        let mut hasher = std::collections::hash_map::DefaultHasher::new();
        let mut out = Vec::with_capacity(height * width);
        for t in 0..height * width {
            let mut buf = vec![0.0; p];
            let acts = self.forward_texel(&shared, Self::coords(height, width, t), &mut buf);
            for v in acts.h1.iter().chain(&acts.h2) {
                (*v > 0.0).hash(&mut hasher);
            }
            out.push(TriPlanePayload::from_vec(self.res, self.channels, buf)?);
        }
        Ok((out, hasher.finish()))
    }

    /// Pulls payload gradients (texel-major, flat) back to `(z, weights)`.
    pub fn backward(&self, height: usize, width: usize, payload_grad: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let h = self.hidden;
        let p = self.payload_len();
        let shared = self.code_preact();
        let mut gw1 = vec![0.0; self.w1.len()];
        let mut gb1 = vec![0.0; h];
        let mut gw2 = vec![0.0; self.w2.len()];
        let mut gb2 = vec![0.0; h];
        let mut gw3 = vec![0.0; self.w3.len()];
        let mut gb3 = vec![0.0; p];
        // Gradient w.r.t. the shared code pre-activation, summed over texels.
        let mut g_shared = vec![0.0; h];
        let mut buf = vec![0.0; p];
        for t in 0..height * width {
            let ob = &payload_grad[t * p..(t + 1) * p];
            if ob.iter().all(|v| *v == 0.0) {
                continue;
            }
            let uv = Self::coords(height, width, t);
            let acts = self.forward_texel(&shared, uv, &mut buf);
            for (g, o) in gb3.iter_mut().zip(ob) {
                *g += o;
            }
            let mut h2_bar = vec![0.0; h];
            for i in 0..h {
                if acts.h2[i] <= 0.0 {
                    continue;
                }
                let row = &self.w3[i * p..(i + 1) * p];
                let grow = &mut gw3[i * p..(i + 1) * p];
                let mut acc = 0.0;
                for k in 0..p {
                    grow[k] += acts.h2[i] * ob[k];
                    acc += row[k] * ob[k];
                }
                h2_bar[i] = acc;
                gb2[i] += acc;
            }
            let mut h1_bar = vec![0.0; h];
            for i in 0..h {
                if acts.h1[i] <= 0.0 {
                    continue;
                }
                let row = &self.w2[i * h..(i + 1) * h];
                let grow = &mut gw2[i * h..(i + 1) * h];
                let mut acc = 0.0;
                for j in 0..h {
                    grow[j] += acts.h1[i] * h2_bar[j];
                    acc += row[j] * h2_bar[j];
                }
                h1_bar[i] = acc;
            }
            for (k, x) in uv.iter().enumerate() {
                let grow = &mut gw1[(LATENT_DIM + k) * h..(LATENT_DIM + k + 1) * h];
                for j in 0..h {
                    grow[j] += x * h1_bar[j];
                }
            }
            for j in 0..h {
                g_shared[j] += h1_bar[j];
            }
        }
        let mut gz = vec![0.0; LATENT_DIM];
        for i in 0..LATENT_DIM {
            let row = &self.w1[i * h..(i + 1) * h];
            let grow = &mut gw1[i * h..(i + 1) * h];
            let mut acc = 0.0;
            for j in 0..h {
                grow[j] += self.z[i] * g_shared[j];
                acc += row[j] * g_shared[j];
            }
            gz[i] = acc;
        }
        gb1.copy_from_slice(&g_shared);
        let mut gw = gw1;
        for v in [gb1, gw2, gb2, gw3, gb3] {
            gw.extend(v);
        }
        (gz, gw)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_weights_decode_to_zero() {
        let d = LatentDecoder::zeros(4, 2, 3);
        let p = d.decode_payloads(2, 3).unwrap();
        assert_eq!(p.len(), 6);
        assert!(p.iter().all(|q| q.data().iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn output_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d = LatentDecoder::init(&mut rng, 8, 8, 8).unwrap();
        let p = d.decode_payloads(4, 4).unwrap();
        assert_eq!(p.len(), 16);
        assert!(p.iter().all(|q| q.res() == 8 && q.channels() == 8 && q.len() == 3 * 8 * 8 * 8));
    }

    #[test]
    fn texel_depends_only_on_its_coordinates() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = LatentDecoder::init(&mut rng, 8, 2, 8).unwrap();
        let a = d.decode_payloads(4, 4).unwrap();
        let b = d.decode_payloads(4, 4).unwrap();
        assert_eq!(a, b);
        // Texel (2, 0) of a 4x4 grid and (1, 0) of a 2x2 grid share uv.
        let c = d.decode_payloads(2, 2).unwrap();
        assert_eq!(a[8], c[2]);
    }

    #[test]
    fn different_codes_give_different_payloads() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d = LatentDecoder::init(&mut rng, 16, 2, 8).unwrap();
        let mut e = d.clone();
        e.z = (0..LATENT_DIM).map(|i| (i as f64).sin() * 0.5).collect();
        assert_ne!(d.decode_payloads(2, 2).unwrap(), e.decode_payloads(2, 2).unwrap());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut d = LatentDecoder::init(&mut rng, 6, 1, 8).unwrap();
        d.z.iter_mut().for_each(|v| *v *= 30.0);
        let (hh, ww) = (2, 2);
        let p = d.payload_len();
        let weights: Vec<f64> = (0..hh * ww * p).map(|i| ((i * 7 % 11) as f64 - 5.0) * 0.1).collect();
        let obj = |d: &LatentDecoder| -> f64 {
            let out = d.decode_payloads(hh, ww).unwrap();
            out.iter().flat_map(|q| q.data().iter()).zip(&weights).map(|(a, b)| a * b).sum()
        };
        let (gz, gw) = d.backward(hh, ww, &weights);
        let h = 1e-6;
        for i in (0..LATENT_DIM).step_by(37) {
            let mut a = d.clone();
            let mut b = d.clone();
            a.z[i] += h;
            b.z[i] -= h;
            assert_abs_diff_eq!(gz[i], (obj(&a) - obj(&b)) / (2.0 * h), epsilon = 1e-7);
        }
        let flat = d.weights_flat();
        for i in (0..flat.len()).step_by(13) {
            let mut a = d.clone();
            let mut b = d.clone();
            let mut fa = flat.clone();
            let mut fb = flat.clone();
            fa[i] += h;
            fb[i] -= h;
            a.set_weights_flat(&fa).unwrap();
            b.set_weights_flat(&fb).unwrap();
            assert_abs_diff_eq!(gw[i], (obj(&a) - obj(&b)) / (2.0 * h), epsilon = 1e-7);
        }
    }
}
