//! Adam with linear warmup followed by inverse-square-root decay.

use super::graph::Mat;
use super::params::ParamStore;

#[derive(Debug, Clone)]
pub struct AdamConfig {
    pub max_lr: f64,
    pub warmup_steps: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global-norm gradient clip; None disables.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            max_lr: 5e-4,
            warmup_steps: 8000,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
            clip_norm: Some(1.0),
        }
    }
}

pub struct Adam {
    cfg: AdamConfig,
    step: usize,
    m: Vec<Mat>,
    v: Vec<Mat>,
}

impl Adam {
    pub fn new(store: &ParamStore, cfg: AdamConfig) -> Self {
        let m = store.iter().map(|(_, _, p)| Mat::zeros(p.dim())).collect();
        let v = store.iter().map(|(_, _, p)| Mat::zeros(p.dim())).collect();
        Self {
            cfg,
            step: 0,
            m,
            v,
        }
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    /// lr(step) = max_lr * min(step/warmup, sqrt(warmup/step)), step >= 1.
    pub fn lr_at(&self, step: usize) -> f64 {
        let s = step.max(1) as f64;
        let w = self.cfg.warmup_steps.max(1) as f64;
        self.cfg.max_lr * (s / w).min((w / s).sqrt())
    }

    /// One update from summed `(param_idx, grad)` pairs. Returns the lr used.
    pub fn apply(&mut self, store: &mut ParamStore, grads: &[(usize, Mat)]) -> f64 {
        self.step += 1;
        let lr = self.lr_at(self.step);
        if lr == 0.0 {
            return lr;
        }
        // merge duplicate indices (a param may appear in several graph leaves)
        let mut merged: Vec<Option<Mat>> = (0..store.len()).map(|_| None).collect();
        for (idx, g) in grads {
            match &mut merged[*idx] {
                Some(acc) => *acc += g,
                slot @ None => *slot = Some(g.clone()),
            }
        }
        let scale = match self.cfg.clip_norm {
            Some(max_norm) => {
                let total: f64 = merged
                    .iter()
                    .flatten()
                    .map(|g| g.iter().map(|x| x * x).sum::<f64>())
                    .sum::<f64>()
                    .sqrt();
                if total > max_norm {
                    max_norm / total
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        let b1 = self.cfg.beta1;
        let b2 = self.cfg.beta2;
        let bc1 = 1.0 - b1.powi(self.step as i32);
        let bc2 = 1.0 - b2.powi(self.step as i32);
        for (idx, g) in merged.into_iter().enumerate() {
            let Some(mut g) = g else { continue };
            if scale != 1.0 {
                g *= scale;
            }
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            ndarray::Zip::from(&mut *m).and(&g).for_each(|m, &g| {
                *m = b1 * *m + (1.0 - b1) * g;
            });
            ndarray::Zip::from(&mut *v).and(&g).for_each(|v, &g| {
                *v = b2 * *v + (1.0 - b2) * g * g;
            });
            let p = store.get_mut(idx);
            let eps = self.cfg.eps;
            ndarray::Zip::from(p).and(&*m).and(&*v).for_each(|p, &m, &v| {
                let mhat = m / bc1;
                let vhat = v / bc2;
                *p -= lr * mhat / (vhat.sqrt() + eps);
            });
        }
        lr
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::zeros_mat;

    #[test]
    fn warmup_step_one_is_max_lr_over_warmup() {
        let store = ParamStore::new();
        let adam = Adam::new(&store, AdamConfig::default());
        let lr1 = adam.lr_at(1);
        assert!((lr1 - 5e-4 / 8000.0).abs() < 1e-18);
        // peak at the warmup boundary, decay afterwards
        assert!((adam.lr_at(8000) - 5e-4).abs() < 1e-12);
        assert!(adam.lr_at(32000) < adam.lr_at(8000));
        assert!((adam.lr_at(32000) - 5e-4 * 0.5).abs() < 1e-12);
    }

    #[test]
    fn zero_lr_leaves_params_unchanged() {
        let mut store = ParamStore::new();
        let idx = store.add("w", zeros_mat(2, 2));
        let cfg = AdamConfig {
            max_lr: 0.0,
            ..Default::default()
        };
        let mut adam = Adam::new(&store, cfg);
        let before = store.get(idx).clone();
        let g = Mat::from_elem((2, 2), 3.0);
        adam.apply(&mut store, &[(idx, g)]);
        assert_eq!(store.get(idx), &before);
    }

    #[test]
    fn gradient_step_moves_against_gradient() {
        let mut store = ParamStore::new();
        let idx = store.add("w", zeros_mat(1, 1));
        let cfg = AdamConfig {
            max_lr: 0.1,
            warmup_steps: 1,
            clip_norm: None,
            ..Default::default()
        };
        let mut adam = Adam::new(&store, cfg);
        let g = Mat::from_elem((1, 1), 1.0);
        adam.apply(&mut store, &[(idx, g)]);
        assert!(store.get(idx)[(0, 0)] < 0.0);
    }

    use super::super::graph::Mat;
}
