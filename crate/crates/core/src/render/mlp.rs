use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MLP_IN: usize = 8;
pub const MLP_HIDDEN: usize = 32;
pub const MLP_OUT: usize = 4;
/// Total scalar count: `8·32 + 32 + 32·4 + 4`.
pub const MLP_PARAMS: usize = MLP_IN * MLP_HIDDEN + MLP_HIDDEN + MLP_HIDDEN * MLP_OUT + MLP_OUT;

/// Shared 8→32→4 shading network: ReLU hidden layer, sigmoid on all outputs
/// (RGB then opacity).
///
/// Weights are stored input-major: `w1[i * 32 + h]`, `w2[h * 4 + o]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenderMlp {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone, Copy)]
pub struct MlpEval {
    pub hidden: [f64; MLP_HIDDEN],
    /// Sigmoid outputs: r, g, b, opacity.
    pub out: [f64; MLP_OUT],
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl RenderMlp {
    pub fn zeros() -> Self {
        RenderMlp {
            w1: vec![0.0; MLP_IN * MLP_HIDDEN],
            b1: vec![0.0; MLP_HIDDEN],
            w2: vec![0.0; MLP_HIDDEN * MLP_OUT],
            b2: vec![0.0; MLP_OUT],
        }
    }

    /// Glorot-uniform weights and a small positive hidden bias.
    pub fn init<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let a1 = (6.0 / (MLP_IN + MLP_HIDDEN) as f64).sqrt();
        let a2 = (6.0 / (MLP_HIDDEN + MLP_OUT) as f64).sqrt();
        RenderMlp {
            w1: (0..MLP_IN * MLP_HIDDEN).map(|_| rng.random_range(-a1..a1)).collect(),
            b1: vec![0.1; MLP_HIDDEN],
            w2: (0..MLP_HIDDEN * MLP_OUT).map(|_| rng.random_range(-a2..a2)).collect(),
            b2: vec![0.0; MLP_OUT],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.w1.len() != MLP_IN * MLP_HIDDEN
            || self.b1.len() != MLP_HIDDEN
            || self.w2.len() != MLP_HIDDEN * MLP_OUT
            || self.b2.len() != MLP_OUT
        {
            return Err(Error::invalid("render MLP must have shape 8x32x4"));
        }
        if self.to_flat().iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite render MLP weight"));
        }
        Ok(())
    }

    /// Flat parameter vector: w1, b1, w2, b2.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(MLP_PARAMS);
        v.extend_from_slice(&self.w1);
        v.extend_from_slice(&self.b1);
        v.extend_from_slice(&self.w2);
        v.extend_from_slice(&self.b2);
        v
    }

    pub fn from_flat(v: &[f64]) -> Result<Self> {
        if v.len() != MLP_PARAMS {
            return Err(Error::invalid(format!(
                "render MLP expects {MLP_PARAMS} scalars, got {}",
                v.len()
            )));
        }
        let (w1, rest) = v.split_at(MLP_IN * MLP_HIDDEN);
        let (b1, rest) = rest.split_at(MLP_HIDDEN);
        let (w2, b2) = rest.split_at(MLP_HIDDEN * MLP_OUT);
        Ok(RenderMlp {
            w1: w1.to_vec(),
            b1: b1.to_vec(),
            w2: w2.to_vec(),
            b2: b2.to_vec(),
        })
    }

    pub fn eval(&self, f: &[f64; MLP_IN]) -> MlpEval {
        let mut hidden = [0.0; MLP_HIDDEN];
        hidden.copy_from_slice(&self.b1);
        for (i, fi) in f.iter().enumerate() {
            if *fi == 0.0 {
                continue;
            }
            let row = &self.w1[i * MLP_HIDDEN..(i + 1) * MLP_HIDDEN];
            for (h, w) in hidden.iter_mut().zip(row) {
                *h += fi * w;
            }
        }
        let mut z = [0.0; MLP_OUT];
        z.copy_from_slice(&self.b2);
        for (h, hv) in hidden.iter_mut().enumerate() {
            if *hv <= 0.0 {
                *hv = 0.0;
                continue;
            }
            let row = &self.w2[h * MLP_OUT..(h + 1) * MLP_OUT];
            for (zo, w) in z.iter_mut().zip(row) {
                *zo += *hv * w;
            }
        }
        MlpEval {
            hidden,
            out: z.map(sigmoid),
        }
    }

    /// Accumulates weight gradients into `grad` (flat layout) and returns the
    /// feature adjoint.
    pub fn backward(
        &self,
        f: &[f64; MLP_IN],
        e: &MlpEval,
        out_bar: &[f64; MLP_OUT],
        grad: &mut [f64],
    ) -> [f64; MLP_IN] {
        let (gw1, rest) = grad.split_at_mut(MLP_IN * MLP_HIDDEN);
        let (gb1, rest) = rest.split_at_mut(MLP_HIDDEN);
        let (gw2, gb2) = rest.split_at_mut(MLP_HIDDEN * MLP_OUT);
        let mut z_bar = [0.0; MLP_OUT];
        for o in 0..MLP_OUT {
            let s = e.out[o];
            z_bar[o] = out_bar[o] * s * (1.0 - s);
            gb2[o] += z_bar[o];
        }
        let mut pre_bar = [0.0; MLP_HIDDEN];
        for h in 0..MLP_HIDDEN {
            let hv = e.hidden[h];
            if hv <= 0.0 {
                continue;
            }
            let row = &self.w2[h * MLP_OUT..(h + 1) * MLP_OUT];
            let grow = &mut gw2[h * MLP_OUT..(h + 1) * MLP_OUT];
            let mut acc = 0.0;
            for o in 0..MLP_OUT {
                grow[o] += hv * z_bar[o];
                acc += row[o] * z_bar[o];
            }
            pre_bar[h] = acc;
            gb1[h] += acc;
        }
        let mut f_bar = [0.0; MLP_IN];
        for i in 0..MLP_IN {
            let row = &self.w1[i * MLP_HIDDEN..(i + 1) * MLP_HIDDEN];
            let grow = &mut gw1[i * MLP_HIDDEN..(i + 1) * MLP_HIDDEN];
            let mut acc = 0.0;
            for h in 0..MLP_HIDDEN {
                grow[h] += f[i] * pre_bar[h];
                acc += row[h] * pre_bar[h];
            }
            f_bar[i] = acc;
        }
        f_bar
    }

    /// Bit mask of active hidden units (ReLU branch state).
    pub fn relu_mask(e: &MlpEval) -> u32 {
        e.hidden
            .iter()
            .enumerate()
            .fold(0u32, |m, (i, h)| if *h > 0.0 { m | (1 << i) } else { m })
    }
}

/// Color and opacity for one feature vector.
pub fn mlp_forward(mlp: &RenderMlp, feature: &[f64; MLP_IN]) -> ([f64; 3], f64) {
    let e = mlp.eval(feature);
    ([e.out[0], e.out[1], e.out[2]], e.out[3])
}
