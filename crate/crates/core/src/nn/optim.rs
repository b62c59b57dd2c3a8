use serde::{Deserialize, Serialize};

use super::Model;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgdSettings {
    pub momentum: f64,
    #[serde(default)]
    pub weight_decay: f64,
}

impl Default for SgdSettings {
    fn default() -> Self {
        SgdSettings {
            momentum: 0.9,
            weight_decay: 0.0,
        }
    }
}

/// Momentum SGD: `v ← m·v + g + wd·w`, `w ← w − lr·v`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sgd {
    pub settings: SgdSettings,
    velocity: Option<Model>,
    pub skipped_steps: usize,
}

impl Sgd {
    pub fn new(settings: SgdSettings) -> Self {
        Sgd {
            settings,
            velocity: None,
            skipped_steps: 0,
        }
    }

    /// Applies one update. Returns `false`, leaving everything untouched, when
    /// any gradient entry is non-finite.
    pub fn step(&mut self, model: &mut Model, grads: &Model, lr: f64) -> bool {
        if !grads.is_finite() {
            self.skipped_steps += 1;
            log::warn!("optimizer: non-finite gradient, step skipped");
            return false;
        }
        let velocity = self.velocity.get_or_insert_with(|| model.zeros_like());
        let SgdSettings {
            momentum,
            weight_decay,
        } = self.settings;
        for ((w, g), v) in model
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(velocity.tensors_mut())
        {
            for ((wi, &gi), vi) in w.iter_mut().zip(g).zip(v.iter_mut()) {
                *vi = momentum * *vi + gi + weight_decay * *wi;
                *wi -= lr * *vi;
            }
        }
        true
    }
}
