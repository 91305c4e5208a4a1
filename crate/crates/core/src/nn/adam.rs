use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::params::{Gradients, NetworkParams};

/// Adaptive-moment optimizer hyper-parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Adam {
    pub fn new(lr: f32) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn with_beta1(mut self, beta1: f32) -> Self {
        self.beta1 = beta1;
        self
    }

    /// One bias-corrected update of `values` in place.
    pub fn step(&self, values: &mut [f32], grads: &[f32], moments: &mut Moments) -> Result<()> {
        if values.len() != grads.len() || moments.m.len() != values.len() {
            return Err(Error::Shape {
                node: "adam".into(),
                expected: vec![values.len()],
                got: vec![grads.len(), moments.m.len()],
            });
        }
        moments.t += 1;
        let bc1 = 1.0 - (self.beta1 as f64).powi(moments.t as i32);
        let bc2 = 1.0 - (self.beta2 as f64).powi(moments.t as i32);
        let step = (self.lr as f64 / bc1) as f32;
        let bc2 = bc2 as f32;
        for (((w, &g), m), v) in values
            .iter_mut()
            .zip(grads)
            .zip(moments.m.iter_mut())
            .zip(moments.v.iter_mut())
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *w -= step * *m / ((*v / bc2).sqrt() + self.eps);
        }
        Ok(())
    }
}

/// First and second moment estimates for one flat parameter vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub m: Vec<f32>,
    pub v: Vec<f32>,
    pub t: u32,
}

impl Moments {
    pub fn zeros(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }
}

/// Per-tensor moments for a whole network.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    moments: IndexMap<String, Moments>,
}

impl AdamState {
    pub fn moments(&self, name: &str) -> Option<&Moments> {
        self.moments.get(name)
    }
}

/// Apply one Adam update to every parameter that has a gradient.
pub fn adam_step(
    params: &mut NetworkParams,
    grads: &Gradients,
    state: &mut AdamState,
    adam: &Adam,
) -> Result<()> {
    for (name, g) in grads.iter() {
        let p = params
            .get_mut(name)
            .ok_or_else(|| Error::MissingTensor(name.to_string()))?;
        if p.shape() != g.shape() {
            return Err(Error::TensorShapeMismatch {
                name: name.to_string(),
                expected: p.shape().to_vec(),
                found: g.shape().to_vec(),
            });
        }
        let m = state
            .moments
            .entry(name.to_string())
            .or_insert_with(|| Moments::zeros(g.len()));
        adam.step(p.data_mut(), g.data(), m)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_value_and_decays_moments() {
        let adam = Adam::new(0.1);
        let mut w = vec![0.5f32, -2.0];
        let mut m = Moments {
            m: vec![0.3, -0.2],
            v: vec![0.5, 0.1],
            t: 3,
        };
        // With nonzero moments a zero gradient still moves w, so start from zero moments.
        let mut fresh = Moments::zeros(2);
        adam.step(&mut w, &[0.0, 0.0], &mut fresh).unwrap();
        assert_eq!(w, vec![0.5, -2.0]);
        assert_eq!(fresh.m, vec![0.0, 0.0]);

        let before = m.clone();
        adam.step(&mut w.clone(), &[0.0, 0.0], &mut m).unwrap();
        for i in 0..2 {
            assert!(m.m[i].abs() < before.m[i].abs());
            assert!(m.v[i] < before.v[i]);
        }
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let adam = Adam::new(0.01);
        for g in [3.0f32, -0.002, 250.0] {
            let mut w = [1.0f32];
            let mut m = Moments::zeros(1);
            adam.step(&mut w, &[g], &mut m).unwrap();
            let delta = w[0] - 1.0;
            assert!((delta + 0.01 * g.signum()).abs() < 1e-5, "g={g} delta={delta}");
        }
    }

    #[test]
    fn quadratic_descent_is_monotone() {
        // Straight-line reference of the same recurrence in f64.
        let (lr, b1, b2, eps) = (0.1f64, 0.9f64, 0.999f64, 1e-8f64);
        let (mut wr, mut mr, mut vr) = (1.0f64, 0.0f64, 0.0f64);
        let adam = Adam::new(0.1);
        let mut w = [1.0f32];
        let mut mom = Moments::zeros(1);
        let mut prev = 1.0f32;
        for t in 1..=10 {
            let g = 2.0 * w[0];
            adam.step(&mut w, &[g], &mut mom).unwrap();
            let gr = 2.0 * wr;
            mr = b1 * mr + (1.0 - b1) * gr;
            vr = b2 * vr + (1.0 - b2) * gr * gr;
            wr -= lr * (mr / (1.0 - b1.powi(t))) / ((vr / (1.0 - b2.powi(t))).sqrt() + eps);
            assert!(w[0].abs() < prev.abs(), "step {t}: |{}| !< |{prev}|", w[0]);
            assert!((w[0] as f64 - wr).abs() < 1e-5);
            prev = w[0];
        }
    }

    #[test]
    fn mismatched_lengths_rejected() {
        let adam = Adam::new(0.1);
        let mut w = [0.0f32; 3];
        let mut m = Moments::zeros(3);
        assert!(adam.step(&mut w, &[0.0; 2], &mut m).is_err());
    }
}
