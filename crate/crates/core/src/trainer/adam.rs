use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::error::{check_dim, Result};
use crate::model::{ModelParams, ParamGrad};

/// First and second moment estimates for a flat parameter vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

/// How learning rates are assigned across the scorer's parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LrSchedule {
    /// `lr_deep` everywhere.
    Uniform,
    /// `lr_shallow` for the shallow partition, `lr_deep` elsewhere.
    ShallowDeep,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepOutcome {
    Applied,
    /// The gradient held a NaN or infinity; parameters were left untouched.
    Skipped,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }

    /// Bias-corrected Adam update of `values` in place with per-entry rates.
    pub fn update(
        &mut self,
        values: &mut [f64],
        grads: &[f64],
        lr: impl Fn(usize) -> f64,
        config: &TrainConfig,
    ) -> Result<()> {
        check_dim("adam values", self.m.len(), values.len())?;
        check_dim("adam gradient", self.m.len(), grads.len())?;
        self.step += 1;
        let (b1, b2) = (config.beta1, config.beta2);
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        for (i, (w, &g)) in values.iter_mut().zip(grads).enumerate() {
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g;
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            *w -= lr(i) * m_hat / (v_hat.sqrt() + config.epsilon);
        }
        Ok(())
    }
}

/// One optimizer step on the scorer followed by GDN projection.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &ParamGrad,
    state: &mut AdamState,
    config: &TrainConfig,
    schedule: LrSchedule,
) -> Result<StepOutcome> {
    check_dim("gradient", params.num_params(), grads.values.len())?;
    if !grads.is_finite() {
        log::warn!("non-finite gradient at step {}; skipping update", state.step + 1);
        return Ok(StepOutcome::Skipped);
    }
    let mut flat = params.flatten();
    let mask = match schedule {
        LrSchedule::Uniform => None,
        LrSchedule::ShallowDeep => Some(params.shallow_mask()),
    };
    let lr = |i: usize| match &mask {
        Some(m) if m[i] => config.lr_shallow,
        _ => config.lr_deep,
    };
    state.update(&mut flat, &grads.values, lr, config)?;
    params.assign_flat(&flat)?;
    params.project();
    Ok(StepOutcome::Applied)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, Layer, GDN_FLOOR};

    fn config() -> TrainConfig {
        TrainConfig {
            lr_deep: 1e-3,
            lr_shallow: 1e-4,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = init_params(0, &[4, 3, 3, 1]).unwrap();
        let before = p.clone();
        let mut st = AdamState::new(p.num_params());
        let g = ParamGrad::zeros(p.num_params());
        adam_step(&mut p, &g, &mut st, &config(), LrSchedule::Uniform).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = init_params(1, &[4, 3, 3, 1]).unwrap();
        let before = p.flatten();
        let n = p.num_params();
        let g = ParamGrad {
            values: (0..n).map(|i| 0.5 + (i % 7) as f64 - 3.0).collect(),
        };
        let mut st = AdamState::new(n);
        let cfg = config();
        adam_step(&mut p, &g, &mut st, &cfg, LrSchedule::ShallowDeep).unwrap();
        let mask = p.shallow_mask();
        let gdn_indices: Vec<bool> = gdn_mask(&p);
        for (i, (a, b)) in p.flatten().iter().zip(&before).enumerate() {
            if gdn_indices[i] {
                continue; // projection may clip these
            }
            let lr = if mask[i] { cfg.lr_shallow } else { cfg.lr_deep };
            let gi = g.values[i];
            let expect = lr * gi.abs() / (gi.abs() + cfg.epsilon);
            assert!(((b - a).abs() - expect).abs() < 1e-15, "index {i}");
            assert_eq!((b - a).signum(), gi.signum());
        }
    }

    fn gdn_mask(p: &ModelParams) -> Vec<bool> {
        p.layers
            .iter()
            .flat_map(|l| std::iter::repeat_n(matches!(l, Layer::Gdn(_)), l.num_params()))
            .collect()
    }

    #[test]
    fn step_keeps_gdn_symmetric_and_floored() {
        let mut p = init_params(2, &[4, 3, 1]).unwrap();
        let n = p.num_params();
        // Push gamma entries asymmetrically and far below the floor.
        let mut g = ParamGrad::zeros(n);
        let offset = 4 * 3 + 3 + 3; // affine, then omega
        g.values[offset + 1] = 5.0;
        g.values[offset + 3] = -5.0;
        g.values[offset] = 100.0;
        let mut st = AdamState::new(n);
        let cfg = TrainConfig {
            lr_deep: 0.5,
            ..TrainConfig::default()
        };
        adam_step(&mut p, &g, &mut st, &cfg, LrSchedule::Uniform).unwrap();
        let Layer::Gdn(gdn) = &p.layers[1] else { panic!() };
        gdn.validate().unwrap();
        assert_eq!(gdn.gamma_at(0, 0), GDN_FLOOR);
    }

    #[test]
    fn non_finite_gradient_is_skipped() {
        let mut p = init_params(3, &[4, 3, 1]).unwrap();
        let before = p.clone();
        let mut g = ParamGrad::zeros(p.num_params());
        g.values[0] = f64::NAN;
        let mut st = AdamState::new(p.num_params());
        let out = adam_step(&mut p, &g, &mut st, &config(), LrSchedule::Uniform).unwrap();
        assert_eq!(out, StepOutcome::Skipped);
        assert_eq!(p, before);
        assert_eq!(st.step, 0);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut p = init_params(3, &[4, 3, 1]).unwrap();
        let mut st = AdamState::new(p.num_params());
        let g = ParamGrad::zeros(3);
        assert!(adam_step(&mut p, &g, &mut st, &config(), LrSchedule::Uniform).is_err());
    }
}
