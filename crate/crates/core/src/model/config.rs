use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ray marching and blending settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderConfig {
    /// Stratified samples per ray (J).
    pub samples_per_ray: usize,
    /// Nearest Gaussians blended per sample (K).
    pub knn_k: usize,
    /// Influence scale η.
    pub eta: f64,
    /// Influence temperature τ.
    pub tau: f64,
    /// Normalization slack ε in the color weights.
    pub epsilon: f64,
    pub background: [f64; 3],
    /// Seed of the per-pixel stratification jitter.
    pub seed: u64,
    /// Marching stops once transmittance falls below this. Zero disables.
    pub transmittance_cutoff: f64,
    /// A sample whose K influences all fall below this is empty space.
    pub influence_floor: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            samples_per_ray: 32,
            knn_k: 3,
            eta: 5.0,
            tau: 1.0,
            epsilon: 1e-6,
            background: [1.0, 1.0, 1.0],
            seed: 0,
            transmittance_cutoff: 1e-4,
            influence_floor: 1e-9,
        }
    }
}

impl RenderConfig {
    /// Settings with no early termination, for exact gradient comparisons.
    pub fn exact() -> Self {
        RenderConfig {
            transmittance_cutoff: 0.0,
            influence_floor: 1e-300,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples_per_ray == 0 {
            return Err(Error::invalid("samples_per_ray must be at least 1"));
        }
        if self.knn_k == 0 {
            return Err(Error::invalid("knn_k must be at least 1"));
        }
        if !(self.eta > 0.0 && self.tau > 0.0 && self.epsilon > 0.0) {
            return Err(Error::invalid("eta, tau and epsilon must be positive"));
        }
        if !(self.transmittance_cutoff >= 0.0 && self.influence_floor > 0.0) {
            return Err(Error::invalid("cutoffs must be non-negative"));
        }
        if self.background.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::invalid("background color must lie in [0, 1]"));
        }
        Ok(())
    }
}
