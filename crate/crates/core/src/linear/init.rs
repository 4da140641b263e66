//! Weight initializers: fan-in uniform, semi-orthogonal and rank-limited
//! frozen bases, LoRA factor draws and one-shot pruning masks.

use nalgebra::DMatrix;
use ndarray::Array2;
use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::Scalar;

/// `U(-1/sqrt(d_in), 1/sqrt(d_in))`.
pub fn fan_in_uniform<T: Scalar>(d_out: usize, d_in: usize, rng: &mut Rng) -> Array2<T> {
    let bound = 1.0 / (d_in as f64).sqrt();
    Array2::from_shape_simple_fn((d_out, d_in), || rng::uniform_sym(rng, bound))
}

pub fn gaussian<T: Scalar>(d_out: usize, d_in: usize, std: f64, rng: &mut Rng) -> Array2<T> {
    Array2::from_shape_simple_fn((d_out, d_in), || rng::normal(rng, std))
}

/// Random matrix with orthonormal columns (tall) or orthonormal rows (wide),
/// from the QR factorization of a Gaussian draw with the sign of `R`'s
/// diagonal folded into `Q`.
pub fn random_semi_orthogonal<T: Scalar>(d_out: usize, d_in: usize, rng: &mut Rng) -> Array2<T> {
    let (tall, short) = if d_out >= d_in { (d_out, d_in) } else { (d_in, d_out) };
    let g = DMatrix::<f64>::from_fn(tall, short, |_, _| rng::normal::<f64>(rng, 1.0));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..short {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    if d_out >= d_in {
        Array2::from_shape_fn((d_out, d_in), |(i, j)| T::lit(q[(i, j)]))
    } else {
        Array2::from_shape_fn((d_out, d_in), |(i, j)| T::lit(q[(j, i)]))
    }
}

/// Scales every row to L2 norm `norm`.
pub fn rescale_rows<T: Scalar>(w: &mut Array2<T>, norm: T) -> Result<()> {
    for (j, mut row) in w.rows_mut().into_iter().enumerate() {
        let n = row.iter().map(|&x| x * x).sum::<T>().sqrt();
        if n == T::zero() {
            return Err(Error::ZeroRow(j));
        }
        let f = norm / n;
        row.mapv_inplace(|x| x * f);
    }
    Ok(())
}

/// Frozen base matrix with every row of norm `norm` and numeric rank `base_rank`.
///
/// Full rank uses a random semi-orthogonal matrix; lower ranks use the
/// product of two Gaussian factors with inner dimension `base_rank`.
pub fn build_frozen_base<T: Scalar>(
    d_out: usize,
    d_in: usize,
    base_rank: usize,
    norm: T,
    rng: &mut Rng,
) -> Result<Array2<T>> {
    let full = d_out.min(d_in);
    if base_rank == 0 || base_rank > full {
        return Err(Error::InvalidArgument(format!(
            "base rank {base_rank} outside [1, {full}]"
        )));
    }
    if !(norm > T::zero() && norm < T::one()) {
        return Err(Error::InvalidArgument(format!(
            "base row norm {norm} outside (0, 1)"
        )));
    }
    let mut w = if base_rank == full {
        random_semi_orthogonal(d_out, d_in, rng)
    } else {
        let u: Array2<T> = gaussian(d_out, base_rank, 1.0, rng);
        let v: Array2<T> = gaussian(base_rank, d_in, 1.0, rng);
        u.dot(&v)
    };
    rescale_rows(&mut w, norm)?;
    Ok(w)
}

/// Binary mask with exactly `floor(sparsity * d_out * d_in)` zeros at
/// uniformly random positions.
pub fn build_prune_mask<T: Scalar>(
    d_out: usize,
    d_in: usize,
    sparsity: f64,
    rng: &mut Rng,
) -> Result<Array2<T>> {
    if !(0.0..1.0).contains(&sparsity) {
        return Err(Error::InvalidArgument(format!(
            "sparsity {sparsity} outside [0, 1)"
        )));
    }
    let total = d_out * d_in;
    let zeros = (sparsity * total as f64).floor() as usize;
    let mut flat = vec![T::one(); total];
    for i in index::sample(rng, total, zeros) {
        flat[i] = T::zero();
    }
    Ok(Array2::from_shape_vec((d_out, d_in), flat).expect("shape matches length"))
}

/// How LoRA adapter factors are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LoraInit {
    /// `A ~ N(0, std = 1/sqrt(fan_in))`, `B = 0`; the adapted map starts equal to its base.
    #[default]
    ZeroB,
    /// `A ~ N(0, var = 1/r)`, `B ~ N(0, var = 1/d_out)`; the update starts nonzero,
    /// which the unit-norm projection needs.
    NormalBoth,
}

impl LoraInit {
    pub fn a_std(self, rank: usize, d_in: usize) -> f64 {
        match self {
            LoraInit::ZeroB => 1.0 / (d_in as f64).sqrt(),
            LoraInit::NormalBoth => (1.0 / rank as f64).sqrt(),
        }
    }

    pub fn b_std(self, d_out: usize) -> f64 {
        match self {
            LoraInit::ZeroB => 0.0,
            LoraInit::NormalBoth => (1.0 / d_out as f64).sqrt(),
        }
    }

    /// Draws `(A, B)` with shapes `r x d_in` and `d_out x r`.
    pub fn sample<T: Scalar>(
        self,
        d_out: usize,
        d_in: usize,
        rank: usize,
        rng: &mut Rng,
    ) -> (Array2<T>, Array2<T>) {
        let a = gaussian(rank, d_in, self.a_std(rank, d_in), rng);
        let b = match self {
            LoraInit::ZeroB => Array2::zeros((d_out, rank)),
            LoraInit::NormalBoth => gaussian(d_out, rank, self.b_std(d_out), rng),
        };
        (a, b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    fn row_norms(w: &Array2<f64>) -> Vec<f64> {
        w.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect()
    }

    fn singular_values(w: &Array2<f64>) -> Vec<f64> {
        let m = DMatrix::from_fn(w.nrows(), w.ncols(), |i, j| w[[i, j]]);
        let mut sv: Vec<f64> = m.singular_values().iter().copied().collect();
        sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
        sv
    }

    #[test]
    fn full_rank_base_has_rows_of_requested_norm() {
        let mut rng = stream(1, Stream::Weights);
        for (d_out, d_in) in [(8, 8), (16, 4), (4, 16)] {
            let w = build_frozen_base::<f64>(d_out, d_in, d_out.min(d_in), 0.5, &mut rng).unwrap();
            assert!(row_norms(&w).iter().all(|n| (n - 0.5).abs() < 1e-10));
            let sv = singular_values(&w);
            assert!(sv[d_out.min(d_in) - 1] > 1e-6);
        }
    }

    #[test]
    fn semi_orthogonal_square_is_orthogonal() {
        // Oracle: Q from nalgebra's QR of an independent draw satisfies QᵀQ = I;
        // our construction must match that property on square shapes.
        let mut rng = stream(2, Stream::Weights);
        let w: Array2<f64> = random_semi_orthogonal(12, 12, &mut rng);
        let gram = w.t().dot(&w);
        for i in 0..12 {
            for j in 0..12 {
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((gram[[i, j]] - expected).abs() < 1e-8);
            }
        }
        let wide: Array2<f64> = random_semi_orthogonal(3, 7, &mut rng);
        let gram = wide.dot(&wide.t());
        assert!((gram - Array2::<f64>::eye(3)).iter().all(|x| x.abs() < 1e-10));
    }

    #[test]
    fn low_rank_base_has_exact_numeric_rank() {
        let mut rng = stream(3, Stream::Weights);
        let w = build_frozen_base::<f64>(10, 6, 1, 0.5, &mut rng).unwrap();
        let first = w.row(0).to_owned();
        for row in w.rows() {
            let cos = row.dot(&first) / (row.dot(&row).sqrt() * first.dot(&first).sqrt());
            assert!((cos.abs() - 1.0).abs() < 1e-10, "rows must be parallel");
        }
        for k in 1..=6 {
            let w = build_frozen_base::<f64>(10, 6, k, 0.3, &mut rng).unwrap();
            let sv = singular_values(&w);
            assert!(sv[k - 1] > 1e-10 * sv[0]);
            assert!(sv[k..].iter().all(|&s| s < 1e-10 * sv[0]), "k={k} {sv:?}");
            assert!(row_norms(&w).iter().all(|n| (n - 0.3).abs() < 1e-10));
        }
    }

    #[test]
    fn invalid_base_arguments() {
        let mut rng = stream(0, Stream::Weights);
        assert!(build_frozen_base::<f64>(4, 4, 0, 0.5, &mut rng).is_err());
        assert!(build_frozen_base::<f64>(4, 4, 5, 0.5, &mut rng).is_err());
        assert!(build_frozen_base::<f64>(4, 4, 4, 1.0, &mut rng).is_err());
        assert!(build_frozen_base::<f64>(4, 4, 4, 0.0, &mut rng).is_err());
    }

    #[test]
    fn prune_masks() {
        let mut rng = stream(0, Stream::Mask);
        let m: Array2<f64> = build_prune_mask(16, 16, 0.0, &mut rng).unwrap();
        assert!(m.iter().all(|&x| x == 1.0));
        let m: Array2<f64> = build_prune_mask(40, 25, 0.85, &mut rng).unwrap();
        let zeros = m.iter().filter(|&&x| x == 0.0).count();
        assert!((zeros as f64 / 1000.0 - 0.85).abs() <= 1.0 / 1000.0);
        let a: Array2<f64> = build_prune_mask(9, 7, 0.5, &mut stream(4, Stream::Mask)).unwrap();
        let b: Array2<f64> = build_prune_mask(9, 7, 0.5, &mut stream(4, Stream::Mask)).unwrap();
        assert_eq!(a, b);
        assert!(build_prune_mask::<f64>(2, 2, 1.0, &mut rng).is_err());
    }

    #[test]
    fn lora_init_modes() {
        let mut rng = stream(0, Stream::Adapters);
        let (_, b) = LoraInit::ZeroB.sample::<f64>(8, 4, 2, &mut rng);
        assert!(b.iter().all(|&x| x == 0.0));
        let (a, b) = LoraInit::NormalBoth.sample::<f64>(8, 4, 2, &mut rng);
        assert!(b.dot(&a).iter().any(|&x| x != 0.0));
        assert_eq!(LoraInit::ZeroB.a_std(4, 64), 0.125);
        assert_eq!(LoraInit::NormalBoth.a_std(4, 64), 0.5);
        assert_eq!(LoraInit::NormalBoth.b_std(16), 0.25);
    }
}
