use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConstants {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConstants {
    fn default() -> Self {
        AdamConstants {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConstants {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2) && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid ADAM constants {self:?}")))
        }
    }
}

/// Moment estimates over the flattened parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub constants: AdamConstants,
}

impl AdamState {
    pub fn new(len: usize, constants: AdamConstants) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
            constants,
        }
    }
}

/// One bias-corrected ADAM update of `params` in place.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, eta: f64) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::DimensionMismatch {
            op: "adam_step",
            expected: state.m.len(),
            got: grads.len(),
        });
    }
    let AdamConstants { beta1, beta2, eps } = state.constants;
    state.step += 1;
    let c1 = 1.0 - beta1.powi(state.step as i32);
    let c2 = 1.0 - beta2.powi(state.step as i32);
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= eta * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_eta_times_sign() {
        let eta = 1e-2;
        let g = [3.0, -0.5, 1e-3, -42.0];
        let mut p = [0.0; 4];
        let mut state = AdamState::new(4, AdamConstants::default());
        adam_step(&mut p, &g, &mut state, eta).unwrap();
        for (d, gi) in p.iter().zip(g) {
            // bias correction makes m_hat = g, v_hat = g^2 on the first step
            let expected = -eta * gi / (gi.abs() + 1e-8);
            assert!((d - expected).abs() < 1e-6 * eta);
            assert!((d + eta * gi.signum()).abs() < 1e-5 * eta);
        }
        assert_eq!(state.step, 1);
    }

    #[test]
    fn zero_gradient_keeps_parameters() {
        let mut p = [1.0, -2.0, 0.5];
        let mut state = AdamState::new(3, AdamConstants::default());
        adam_step(&mut p, &[0.0; 3], &mut state, 0.1).unwrap();
        assert_eq!(p, [1.0, -2.0, 0.5]);
    }

    #[test]
    fn deterministic_updates() {
        let run = || {
            let mut p = vec![0.3, -0.1];
            let mut state = AdamState::new(2, AdamConstants::default());
            for k in 0..10 {
                let g = [p[0] * 2.0 + k as f64, (p[1] * 3.0).sin()];
                adam_step(&mut p, &g, &mut state, 0.05).unwrap();
            }
            p
        };
        let a = run();
        let b = run();
        assert_eq!(a[0].to_bits(), b[0].to_bits());
        assert_eq!(a[1].to_bits(), b[1].to_bits());
    }

    #[test]
    fn minimizes_quadratic() {
        let mut p = vec![5.0, -3.0];
        let mut state = AdamState::new(2, AdamConstants::default());
        for _ in 0..2000 {
            let g = [2.0 * p[0], 2.0 * p[1]];
            adam_step(&mut p, &g, &mut state, 0.05).unwrap();
        }
        assert!(p.iter().all(|v| v.abs() < 1e-2), "{p:?}");
    }

    #[test]
    fn rejects_shape_mismatch() {
        let mut p = [0.0; 2];
        let mut state = AdamState::new(3, AdamConstants::default());
        assert!(adam_step(&mut p, &[1.0, 2.0], &mut state, 0.1).is_err());
        assert!(AdamConstants { beta1: 1.0, ..Default::default() }.validate().is_err());
    }
}
