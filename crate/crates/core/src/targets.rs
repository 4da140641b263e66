//! Scalar bootstrap targets for soft actor-critic and TD3-style agents.

use ndarray::{Array1, ArrayView1, Zip};

use crate::error::{check_shape, Error, Result};
use crate::Scalar;

/// Inputs to a one-sample target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetInputs<T> {
    pub reward: T,
    pub gamma: T,
    /// n-step exponent on the discount.
    pub n_step: u32,
    /// Continuation mask: `0` at termination, `1` otherwise.
    pub continuation: T,
    /// Aggregated target-critic value (min, mean, ... chosen by the caller).
    pub q_aggregate: T,
    pub entropy_temperature: T,
    pub next_log_prob: T,
}

impl<T: Scalar> TargetInputs<T> {
    pub fn new(reward: T, gamma: T, q_aggregate: T) -> Self {
        Self {
            reward,
            gamma,
            n_step: 1,
            continuation: T::one(),
            q_aggregate,
            entropy_temperature: T::zero(),
            next_log_prob: T::zero(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > T::zero() && self.gamma <= T::one()) {
            return Err(Error::InvalidArgument(format!("discount {} outside (0, 1]", self.gamma)));
        }
        if self.continuation != T::zero() && self.continuation != T::one() {
            return Err(Error::InvalidArgument(format!(
                "continuation mask {} not in {{0, 1}}",
                self.continuation
            )));
        }
        Ok(())
    }

    fn bootstrap_factor(&self) -> T {
        self.gamma.powi(self.n_step as i32) * self.continuation
    }
}

/// `r + γⁿ m (Q_agg - α log π)`.
pub fn sac_target<T: Scalar>(t: &TargetInputs<T>) -> T {
    t.reward + t.bootstrap_factor() * (t.q_aggregate - t.entropy_temperature * t.next_log_prob)
}

/// `r + γⁿ m Q_agg`.
pub fn td3_target<T: Scalar>(t: &TargetInputs<T>) -> T {
    t.reward + t.bootstrap_factor() * t.q_aggregate
}

/// `clip(μ + clip(ε, -c, c), a_min, a_max)` elementwise.
pub fn td3_smoothed_action<T: Scalar>(
    mean_action: ArrayView1<'_, T>,
    noise: ArrayView1<'_, T>,
    noise_clip: T,
    a_min: T,
    a_max: T,
) -> Result<Array1<T>> {
    check_shape("smoothed action", mean_action.shape(), noise.shape())?;
    if !(a_min <= a_max) {
        return Err(Error::InvalidArgument(format!("action bounds [{a_min}, {a_max}]")));
    }
    if !(noise_clip > T::zero()) {
        return Err(Error::InvalidArgument(format!("noise clip {noise_clip} must be positive")));
    }
    let mut out = Array1::zeros(mean_action.len());
    Zip::from(&mut out)
        .and(&mean_action)
        .and(&noise)
        .for_each(|o, &m, &e| {
            let e = e.max(-noise_clip).min(noise_clip);
            *o = (m + e).max(a_min).min(a_max);
        });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn sac_examples() {
        let t = TargetInputs::new(1.0, 0.5, 2.0);
        assert_eq!(sac_target(&t), 2.0);
        let t = TargetInputs {
            continuation: 0.0,
            q_aggregate: 123.0,
            ..TargetInputs::new(0.7, 0.9, 0.0)
        };
        assert_eq!(sac_target(&t), 0.7);
        let t = TargetInputs {
            entropy_temperature: 0.1,
            next_log_prob: -2.0,
            ..TargetInputs::<f64>::new(0.0, 0.97, 1.0)
        };
        assert!((sac_target(&t) - 1.164).abs() < 1e-12);
    }

    #[test]
    fn td3_examples() {
        let t = TargetInputs {
            continuation: 0.0,
            ..TargetInputs::new(1.5, 0.9, 10.0)
        };
        assert_eq!(td3_target(&t), 1.5);
        let t = TargetInputs {
            n_step: 2,
            ..TargetInputs::new(1.0, 0.5, 4.0)
        };
        assert_eq!(td3_target(&t), 2.0);
    }

    #[test]
    fn smoothed_action_examples() {
        let a = td3_smoothed_action(array![0.3, 1.4].view(), array![0.0, 0.0].view(), 0.5, -1.0, 1.0).unwrap();
        assert_eq!(a, array![0.3, 1.0]);
        let a = td3_smoothed_action(array![0.0].view(), array![0.7].view(), 0.5, -1.0, 1.0).unwrap();
        assert_eq!(a, array![0.5]);
        let a = td3_smoothed_action(array![0.9].view(), array![0.3].view(), 0.5, -1.0, 1.0).unwrap();
        assert_eq!(a, array![1.0]);
        assert!(td3_smoothed_action(array![0.0].view(), array![0.0].view(), 0.5, 1.0, -1.0).is_err());
    }

    #[test]
    fn validation() {
        assert!(TargetInputs::new(0.0, 0.0, 0.0).validate().is_err());
        let t = TargetInputs {
            continuation: 0.5,
            ..TargetInputs::new(0.0, 0.9, 0.0)
        };
        assert!(t.validate().is_err());
        assert!(TargetInputs::new(0.0, 1.0, 0.0).validate().is_ok());
    }

    proptest! {
        #[test]
        fn sac_reduces_to_td3(r in -5.0f64..5.0, g in 0.01f64..1.0, n in 1u32..5, m in 0u8..2, q in -10.0f64..10.0, lp in -5.0f64..5.0) {
            let t = TargetInputs { n_step: n, continuation: m as f64, next_log_prob: lp, ..TargetInputs::new(r, g, q) };
            prop_assert_eq!(sac_target(&t), td3_target(&t));
        }

        #[test]
        fn targets_monotone_in_q(r in -5.0f64..5.0, g in 0.01f64..1.0, q in -10.0f64..10.0, dq in 0.0f64..5.0, alpha in 0.0f64..1.0, lp in -5.0f64..5.0) {
            let lo = TargetInputs { entropy_temperature: alpha, next_log_prob: lp, ..TargetInputs::new(r, g, q) };
            let hi = TargetInputs { q_aggregate: q + dq, ..lo };
            prop_assert!(sac_target(&hi) >= sac_target(&lo));
            prop_assert!(td3_target(&hi) >= td3_target(&lo));
        }
    }
}
