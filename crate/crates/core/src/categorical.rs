//! Fixed-support categorical value heads.

use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{check_shape, Error, Result};
use crate::Scalar;

/// Evenly spaced atoms `z_i = v_min + i (v_max - v_min) / (N - 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueSupport<T> {
    pub v_min: T,
    pub v_max: T,
    atoms: Array1<T>,
}

impl<T: Scalar> ValueSupport<T> {
    pub fn new(v_min: T, v_max: T, num_atoms: usize) -> Result<Self> {
        if num_atoms < 2 {
            return Err(Error::InvalidArgument(format!(
                "support needs at least 2 atoms, got {num_atoms}"
            )));
        }
        if !(v_max > v_min) {
            return Err(Error::InvalidArgument(format!(
                "empty support [{v_min}, {v_max}]"
            )));
        }
        let last = T::from_usize(num_atoms - 1).expect("atom count fits scalar");
        let mut atoms = Array1::from_shape_fn(num_atoms, |i| {
            v_min + T::from_usize(i).expect("index fits scalar") / last * (v_max - v_min)
        });
        atoms[num_atoms - 1] = v_max;
        Ok(Self {
            v_min,
            v_max,
            atoms,
        })
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn atoms(&self) -> ArrayView1<'_, T> {
        self.atoms.view()
    }

    pub fn spacing(&self) -> T {
        (self.v_max - self.v_min) / T::from_usize(self.len() - 1).expect("fits")
    }
}

/// Probabilities over a [`ValueSupport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalDistribution<T> {
    pub probs: Array1<T>,
}

impl<T: Scalar> CategoricalDistribution<T> {
    /// Validates nonnegativity and unit mass (within `1e-9`).
    pub fn new(probs: Array1<T>) -> Result<Self> {
        if probs.iter().any(|&p| !(p >= T::zero())) {
            return Err(Error::InvalidArgument("negative or NaN probability".into()));
        }
        let mass = probs.sum();
        if (mass - T::one()).abs() > T::lit(1e-9) {
            return Err(Error::InvalidArgument(format!("probabilities sum to {mass}")));
        }
        Ok(Self { probs })
    }

    pub fn point_mass(num_atoms: usize, index: usize) -> Self {
        let mut probs = Array1::zeros(num_atoms);
        probs[index] = T::one();
        Self { probs }
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

/// `log softmax`, max-subtracted.
pub fn log_softmax<T: Scalar>(logits: ArrayView1<'_, T>) -> Result<Array1<T>> {
    if logits.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("logits"));
    }
    let max = logits.fold(T::neg_infinity(), |m, &x| m.max(x));
    let log_norm = logits.iter().map(|&x| (x - max).exp()).sum::<T>().ln() + max;
    Ok(logits.mapv(|x| x - log_norm))
}

pub fn logits_to_probs<T: Scalar>(logits: ArrayView1<'_, T>) -> Result<CategoricalDistribution<T>> {
    if logits.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("logits"));
    }
    let max = logits.fold(T::neg_infinity(), |m, &x| m.max(x));
    let mut probs = logits.mapv(|x| (x - max).exp());
    let total = probs.sum();
    probs.mapv_inplace(|p| p / total);
    Ok(CategoricalDistribution { probs })
}

/// `Σ z_i p_i`.
pub fn expectation<T: Scalar>(d: &CategoricalDistribution<T>, support: &ValueSupport<T>) -> T {
    d.probs.dot(&support.atoms)
}

/// Shifts every atom to `clip(reward + discount * z_i, v_min, v_max)` and
/// splits its mass between the two neighbouring atoms. `discount` is the
/// full `γⁿ m` factor. A backed-up value landing on an atom keeps all its
/// mass there.
pub fn c51_project<T: Scalar>(
    d: &CategoricalDistribution<T>,
    reward: T,
    discount: T,
    support: &ValueSupport<T>,
) -> Result<CategoricalDistribution<T>> {
    check_shape("c51 projection", &[support.len()], d.probs.shape())?;
    let n = support.len();
    let dz = support.spacing();
    let mut out = Array1::zeros(n);
    for (&p, &z) in d.probs.iter().zip(support.atoms.iter()) {
        if p == T::zero() {
            continue;
        }
        let tz = (reward + discount * z).max(support.v_min).min(support.v_max);
        let mut pos = ((tz - support.v_min) / dz).max(T::zero());
        // a value that lands on an atom up to rounding keeps its mass there
        let nearest = pos.round();
        let slack = T::lit(16.0) * T::epsilon() * ((tz.abs() + support.v_min.abs()) / dz + pos + T::one());
        if (pos - nearest).abs() <= slack {
            pos = nearest;
        }
        let lower = pos.floor();
        let l = lower.to_usize().unwrap_or(0).min(n - 1);
        let frac = pos - lower;
        if frac == T::zero() || l == n - 1 {
            out[l] += p;
        } else {
            out[l] += p * (T::one() - frac);
            out[l + 1] += p * frac;
        }
    }
    Ok(CategoricalDistribution { probs: out })
}

/// Cross-entropy `-Σ target_i log softmax(logits)_i` and its gradient
/// `softmax(logits) - target` with respect to the logits.
pub fn cross_entropy_loss<T: Scalar>(
    logits: ArrayView1<'_, T>,
    target: &CategoricalDistribution<T>,
) -> Result<(T, Array1<T>)> {
    check_shape("cross entropy", logits.shape(), target.probs.shape())?;
    let log_p = log_softmax(logits)?;
    let loss = -target
        .probs
        .iter()
        .zip(log_p.iter())
        .filter(|(&t, _)| t != T::zero())
        .map(|(&t, &lp)| t * lp)
        .sum::<T>();
    let grad = log_p.mapv(T::exp) - &target.probs;
    Ok((loss, grad))
}

/// Gradient of the head's expected value `Σ z_i softmax(f)_i` with respect
/// to the logits: `p_i (z_i - Q)`.
pub fn expectation_logit_grad<T: Scalar>(probs: ArrayView1<'_, T>, support: &ValueSupport<T>) -> Array1<T> {
    let q = probs.dot(&support.atoms);
    Array1::from_shape_fn(probs.len(), |i| probs[i] * (support.atoms[i] - q))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn support_grid() {
        let s = ValueSupport::<f64>::new(-1.0, 2.0, 51).unwrap();
        assert_eq!(s.atoms()[0], -1.0);
        assert_eq!(s.atoms()[50], 2.0);
        assert!((s.spacing() - 0.06).abs() < 1e-15);
        assert!(ValueSupport::new(1.0, 1.0, 3).is_err());
        assert!(ValueSupport::new(0.0, 1.0, 1).is_err());
    }

    #[test]
    fn softmax_examples() {
        let p = logits_to_probs(array![2.0f64, 2.0, 2.0, 2.0].view()).unwrap();
        assert!(p.probs.iter().all(|&x| (x - 0.25).abs() < 1e-15));
        let p = logits_to_probs(array![1000.0f64, 0.0].view()).unwrap();
        assert!((p.probs[0] - 1.0).abs() < 1e-12 && p.probs[1] < 1e-12);
        let base = array![0.3f64, -1.2, 2.5];
        let a = logits_to_probs(base.view()).unwrap();
        let b = logits_to_probs((&base + 17.0).view()).unwrap();
        assert!((&a.probs - &b.probs).iter().all(|x| x.abs() < 1e-12));
        assert!(logits_to_probs(array![f64::NAN, 0.0].view()).is_err());
        assert!(logits_to_probs(array![f64::INFINITY, 0.0].view()).is_err());
    }

    #[test]
    fn expectation_examples() {
        let s3 = ValueSupport::new(-1.0, 1.0, 3).unwrap();
        let mid = CategoricalDistribution::<f64>::point_mass(3, 1);
        assert_eq!(expectation(&mid, &s3), 0.0);
        let uni = CategoricalDistribution::new(array![1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]).unwrap();
        assert!(expectation(&uni, &s3).abs() < 1e-15);
        let s2 = ValueSupport::<f64>::new(0.0, 10.0, 2).unwrap();
        let d = CategoricalDistribution::new(array![0.3, 0.7]).unwrap();
        assert!((expectation(&d, &s2) - 7.0).abs() < 1e-12);
    }

    #[test]
    fn projection_examples() {
        let s = ValueSupport::new(-1.0, 1.0, 3).unwrap();
        let d = CategoricalDistribution::new(array![0.2, 0.5, 0.3]).unwrap();
        assert_eq!(c51_project(&d, 0.0, 1.0, &s).unwrap(), d);
        let centre = CategoricalDistribution::point_mass(3, 1);
        let out = c51_project(&centre, 0.5, 1.0, &s).unwrap();
        assert_eq!(out.probs, array![0.0, 0.5, 0.5]);
        let out = c51_project(&d, 10.0, 1.0, &s).unwrap();
        assert_eq!(out.probs, array![0.0, 0.0, 1.0]);
        let out = c51_project(&d, -10.0, 0.5, &s).unwrap();
        assert_eq!(out.probs, array![1.0, 0.0, 0.0]);
    }

    #[test]
    fn cross_entropy_examples() {
        let uni = CategoricalDistribution::new(array![0.5f64, 0.5]).unwrap();
        let (loss, _) = cross_entropy_loss(array![0.0, 0.0].view(), &uni).unwrap();
        assert!((loss - 2f64.ln()).abs() < 1e-15);
        let logits = array![0.4f64, -1.0, 2.2, 0.1];
        let target = logits_to_probs(logits.view()).unwrap();
        let (_, grad) = cross_entropy_loss(logits.view(), &target).unwrap();
        assert!(grad.iter().all(|g| g.abs() < 1e-12));
        // confident logits stay finite
        let (loss, _) = cross_entropy_loss(array![800.0, -800.0].view(), &uni).unwrap();
        assert!(loss.is_finite());
    }

    #[test]
    fn cross_entropy_gradient_matches_finite_differences() {
        let mut rng = crate::rng::stream(9, crate::rng::Stream::Custom(3));
        for _ in 0..50 {
            let n = 2 + crate::rng::index(&mut rng, 9);
            let logits: Array1<f64> = Array1::from_shape_simple_fn(n, || crate::rng::normal(&mut rng, 2.0));
            let raw: Array1<f64> = Array1::from_shape_simple_fn(n, || crate::rng::normal::<f64>(&mut rng, 1.0).abs());
            let target = CategoricalDistribution::new(&raw / raw.sum()).unwrap();
            let (_, grad) = cross_entropy_loss(logits.view(), &target).unwrap();
            let h = 1e-5;
            for i in 0..n {
                let mut up = logits.clone();
                up[i] += h;
                let mut dn = logits.clone();
                dn[i] -= h;
                let fd = (cross_entropy_loss(up.view(), &target).unwrap().0
                    - cross_entropy_loss(dn.view(), &target).unwrap().0)
                    / (2.0 * h);
                let rel = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-6);
                assert!(rel < 1e-6, "rel {rel}");
            }
        }
    }

    proptest! {
        #[test]
        fn projection_conserves_mass(seed in 0u64..100_000, r in -3.0f64..3.0, g in 0.0f64..1.0) {
            let mut rng = crate::rng::stream(seed, crate::rng::Stream::Custom(4));
            let s = ValueSupport::<f64>::new(-1.0, 2.0, 51).unwrap();
            let raw: Array1<f64> = Array1::from_shape_simple_fn(51, || crate::rng::normal::<f64>(&mut rng, 1.0).abs());
            let d = CategoricalDistribution::new(&raw / raw.sum()).unwrap();
            let out = c51_project(&d, r, g, &s).unwrap();
            prop_assert!((out.probs.sum() - 1.0).abs() < 1e-12);
            prop_assert!(out.probs.iter().all(|&p| p >= 0.0));
        }
    }
}
