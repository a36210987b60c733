//! AdamW: adaptive moments with bias correction and decoupled weight decay.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A named, contiguous block of parameters. `decay` marks weight matrices;
/// biases are exempt from weight decay.
pub struct ParamBlock<'a> {
    pub name: String,
    pub values: &'a [f64],
    pub decay: bool,
}

pub struct ParamBlockMut<'a> {
    pub name: String,
    pub values: &'a mut [f64],
    pub decay: bool,
}

/// Anything the optimizer can update. Gradients use the same type, so block
/// order and sizes line up.
pub trait Parameters {
    fn blocks(&self) -> Vec<ParamBlock<'_>>;
    fn blocks_mut(&mut self) -> Vec<ParamBlockMut<'_>>;

    fn n_params(&self) -> usize {
        self.blocks().iter().map(|b| b.values.len()).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01 }
    }
}

/// Optimizer state: first and second moments per block plus the step count.
#[derive(Clone, Debug, Default)]
pub struct AdamW {
    config: AdamWConfig,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    step: u64,
}

impl AdamW {
    pub fn new(config: AdamWConfig) -> Self {
        AdamW { config, first: Vec::new(), second: Vec::new(), step: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update. Gradients are checked for finiteness before any parameter
    /// changes; the first offending block is named in the error.
    pub fn step<P: Parameters>(&mut self, params: &mut P, grads: &P) -> Result<()> {
        let gblocks = grads.blocks();
        for b in &gblocks {
            if b.values.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteGradient(b.name.clone()));
            }
        }
        let mut pblocks = params.blocks_mut();
        if pblocks.len() != gblocks.len() {
            return Err(Error::shape("gradient blocks do not match parameter blocks"));
        }
        if self.first.is_empty() {
            self.first = pblocks.iter().map(|b| vec![0.0; b.values.len()]).collect();
            self.second = self.first.clone();
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bias1 = 1.0 - c.beta1.powi(t);
        let bias2 = 1.0 - c.beta2.powi(t);
        for (k, (p, g)) in pblocks.iter_mut().zip(&gblocks).enumerate() {
            if p.values.len() != g.values.len() || p.values.len() != self.first[k].len() {
                return Err(Error::shape(format!("block `{}` changed size", p.name)));
            }
            let m = &mut self.first[k];
            let v = &mut self.second[k];
            for i in 0..p.values.len() {
                let gi = g.values[i];
                if p.decay && c.weight_decay != 0.0 {
                    p.values[i] -= c.learning_rate * c.weight_decay * p.values[i];
                }
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                p.values[i] -= c.learning_rate * m_hat / (v_hat.sqrt() + c.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Clone)]
    struct Scalar {
        w: Vec<f64>,
        b: Vec<f64>,
    }

    impl Parameters for Scalar {
        fn blocks(&self) -> Vec<ParamBlock<'_>> {
            vec![
                ParamBlock { name: "w".into(), values: &self.w, decay: true },
                ParamBlock { name: "b".into(), values: &self.b, decay: false },
            ]
        }
        fn blocks_mut(&mut self) -> Vec<ParamBlockMut<'_>> {
            vec![
                ParamBlockMut { name: "w".into(), values: &mut self.w, decay: true },
                ParamBlockMut { name: "b".into(), values: &mut self.b, decay: false },
            ]
        }
    }

    #[test]
    fn zero_gradient_without_decay_is_identity() {
        let mut p = Scalar { w: vec![0.3, -2.0], b: vec![1.5] };
        let g = Scalar { w: vec![0.0, 0.0], b: vec![0.0] };
        let mut opt = AdamW::new(AdamWConfig { weight_decay: 0.0, ..Default::default() });
        for _ in 0..10 {
            opt.step(&mut p, &g).unwrap();
        }
        assert_eq!(p.w, vec![0.3, -2.0]);
        assert_eq!(p.b, vec![1.5]);
    }

    #[test]
    fn first_step_matches_hand_calculation() {
        let mut p = Scalar { w: vec![1.0], b: vec![1.0] };
        let g = Scalar { w: vec![1.0], b: vec![1.0] };
        let mut opt = AdamW::new(AdamWConfig::default());
        opt.step(&mut p, &g).unwrap();
        // m_hat = 1, v_hat = 1: step = lr / (1 + eps); decay lr * wd * w on weights only.
        let expected_w = 1.0 - 1e-3 * 0.01 * 1.0 - 1e-3 / (1.0 + 1e-8);
        let expected_b = 1.0 - 1e-3 / (1.0 + 1e-8);
        assert!((p.w[0] - expected_w).abs() < 1e-12);
        assert!((p.b[0] - expected_b).abs() < 1e-12);
    }

    #[test]
    fn constant_gradient_moves_by_learning_rate() {
        let mut p = Scalar { w: vec![0.0], b: vec![0.0] };
        let g = Scalar { w: vec![-3.0], b: vec![0.25] };
        let mut opt = AdamW::new(AdamWConfig { weight_decay: 0.0, ..Default::default() });
        let mut prev = p.clone();
        for _ in 0..200 {
            prev = p.clone();
            opt.step(&mut p, &g).unwrap();
        }
        assert!(((p.w[0] - prev.w[0]) - 1e-3).abs() < 1e-9);
        assert!(((p.b[0] - prev.b[0]) + 1e-3).abs() < 1e-9);
    }

    #[test]
    fn non_finite_gradient_names_block() {
        let mut p = Scalar { w: vec![0.0], b: vec![0.0] };
        let g = Scalar { w: vec![0.0], b: vec![f64::NAN] };
        let err = AdamW::new(AdamWConfig::default()).step(&mut p, &g).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient(ref n) if n == "b"));
        assert_eq!(p.w, vec![0.0]);
    }
}
