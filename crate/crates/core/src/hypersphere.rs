//! Unit-norm row constraints for weight matrices, and the variant that
//! keeps a LoRA map's frozen base fixed.
//!
//! Plain row normalization rescales the whole row. For `W_eff = W0 + ΔW`
//! that would also rescale `W0`. Instead each row solves
//! `|w + s δ| = 1` for `s > 0`, i.e. the quadratic
//! `|δ|² s² + 2<w, δ> s + (|w|² - 1) = 0`, and `s` is folded into row `j` of `B`.
//! With `|w| < 1` the constant term is negative, so the roots have opposite
//! signs and the positive root always exists.

use ndarray::{Array1, Array2, ArrayView1, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{check_shape, Error, Result};
use crate::linear::LoraLinear;
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectionConfig {
    /// Denominator clamp: `|δ|²` is floored at `eps²`, `<w, δ> + √disc` at `eps`.
    pub eps: f64,
    /// Rows with `|δ| <= degenerate_tol` are rejected.
    pub degenerate_tol: f64,
    pub enabled: bool,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        Self {
            eps: 1e-8,
            degenerate_tol: 1e-12,
            enabled: true,
        }
    }
}

fn norm<T: Scalar>(v: ArrayView1<'_, T>) -> T {
    v.dot(&v).sqrt()
}

/// Each row scaled to unit L2 norm.
pub fn row_normalize<T: Scalar>(w: &Array2<T>) -> Result<Array2<T>> {
    let mut out = w.clone();
    normalize_rows_in_place(&mut out)?;
    Ok(out)
}

pub fn normalize_rows_in_place<T: Scalar>(w: &mut Array2<T>) -> Result<()> {
    for (j, row) in w.rows().into_iter().enumerate() {
        let n = norm(row);
        if n == T::zero() || !n.is_finite() {
            return Err(Error::ZeroRow(j));
        }
    }
    for mut row in w.rows_mut() {
        let n = norm(row.view());
        row.mapv_inplace(|x| x / n);
    }
    Ok(())
}

/// Both roots of the row-scale quadratic, ordered `negative <= positive`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleRoots<T> {
    pub negative: T,
    pub positive: T,
}

/// Quadratic coefficients `(|δ|², <w, δ>, |w|² - 1)`.
fn coefficients<T: Scalar>(w: ArrayView1<'_, T>, delta: ArrayView1<'_, T>) -> (T, T, T) {
    (delta.dot(&delta), w.dot(&delta), w.dot(&w) - T::one())
}

fn discriminant<T: Scalar>(quad: T, half_lin: T, constant: T) -> Result<T> {
    let disc = half_lin * half_lin - quad * constant;
    if disc >= T::zero() {
        Ok(disc)
    } else if disc.abs() < T::lit(1e-14) {
        Ok(T::zero())
    } else {
        Err(Error::NegativeDiscriminant(disc.to_f64_lossy()))
    }
}

fn validate_row<T: Scalar>(
    w: ArrayView1<'_, T>,
    delta: ArrayView1<'_, T>,
    cfg: &ProjectionConfig,
) -> Result<()> {
    check_shape("row scale", w.shape(), delta.shape())?;
    let wn = norm(w);
    if !(wn < T::one()) {
        return Err(Error::InfeasibleBase {
            norm: wn.to_f64_lossy(),
        });
    }
    let dn = norm(delta);
    if !(dn > T::lit(cfg.degenerate_tol)) {
        return Err(Error::DegenerateDirection {
            norm: dn.to_f64_lossy(),
        });
    }
    Ok(())
}

/// Both roots of `|w + s δ|² = 1`.
pub fn scale_roots<T: Scalar>(
    w: ArrayView1<'_, T>,
    delta: ArrayView1<'_, T>,
    cfg: &ProjectionConfig,
) -> Result<ScaleRoots<T>> {
    validate_row(w, delta, cfg)?;
    let (quad, half_lin, constant) = coefficients(w, delta);
    let root = discriminant(quad, half_lin, constant)?.sqrt();
    let denom = quad.max(T::lit(cfg.eps));
    let r1 = (-half_lin + root) / denom;
    let r2 = (-half_lin - root) / denom;
    Ok(ScaleRoots {
        negative: r1.min(r2),
        positive: r1.max(r2),
    })
}

/// Positive `s` with `|w + s δ|₂ = 1`.
///
/// For `<w, δ> > 0` the algebraically identical form `(1 - |w|²) / (<w, δ> + √disc)`
/// is used to avoid cancellation.
pub fn solve_row_scale<T: Scalar>(
    w: ArrayView1<'_, T>,
    delta: ArrayView1<'_, T>,
    cfg: &ProjectionConfig,
) -> Result<T> {
    validate_row(w, delta, cfg)?;
    let (quad, half_lin, constant) = coefficients(w, delta);
    let root = discriminant(quad, half_lin, constant)?.sqrt();
    // Both forms are free of cancellation on their branch. `quad` is bounded
    // away from zero by the degeneracy check, so the clamp only guards
    // against overflow and never moves a feasible root.
    let s = if half_lin <= T::zero() {
        (-half_lin + root) / quad.max(T::lit(cfg.eps) * T::lit(cfg.eps))
    } else {
        -constant / (half_lin + root).max(T::lit(cfg.eps))
    };
    if !s.is_finite() {
        return Err(Error::NonFinite("row scale"));
    }
    Ok(s)
}

/// Rescales each row of `B` so every row of `W0 + (alpha/r) B A` has unit
/// norm, leaving `W0` untouched. Returns the per-row scales.
pub fn project_lora<T: Scalar>(m: &mut LoraLinear<T>, cfg: &ProjectionConfig) -> Result<Vec<T>> {
    if !cfg.enabled {
        return Ok(vec![T::one(); m.base.nrows()]);
    }
    let delta = m.delta();
    let scales = m
        .base
        .rows()
        .into_iter()
        .zip(delta.rows())
        .enumerate()
        .map(|(row, (w, d))| {
            solve_row_scale(w, d, cfg).map_err(|e| Error::RowProjection {
                row,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<T>>>()?;
    for (mut b_row, &s) in m.b.rows_mut().into_iter().zip(&scales) {
        b_row.mapv_inplace(|x| x * s);
    }
    Ok(scales)
}

/// Outcome of normalizing one effective row both ways.
#[derive(Debug, Clone, PartialEq)]
pub struct IncompatibilityReport<T> {
    /// `1 / (|w + δ| + ε)`, the factor naive normalization applies to both parts.
    pub naive_factor: T,
    /// Base component after naive normalization, `c w`.
    pub base_after_naive: Array1<T>,
    /// Base component after the base-preserving projection, always `w`.
    pub base_after_ours: Array1<T>,
    /// Scale applied to `δ` by the base-preserving projection.
    pub delta_scale: Option<T>,
    pub naive_row_norm: T,
    pub ours_row_norm: Option<T>,
}

impl<T: Scalar> IncompatibilityReport<T> {
    /// Whether naive normalization moved the frozen base.
    pub fn naive_moves_base(&self) -> bool {
        self.naive_factor != T::one()
    }
}

/// Compares naive row normalization of `w + δ` with the base-preserving
/// projection on a single row.
pub fn demonstrate_incompatibility<T: Scalar>(
    w: ArrayView1<'_, T>,
    delta: ArrayView1<'_, T>,
    cfg: &ProjectionConfig,
) -> Result<IncompatibilityReport<T>> {
    check_shape("incompatibility", w.shape(), delta.shape())?;
    let sum = &w + &delta;
    let c = T::one() / (norm(sum.view()) + T::lit(cfg.eps));
    let base_after_naive = w.mapv(|x| x * c);
    let naive_row_norm = norm(sum.mapv(|x| x * c).view());
    let delta_scale = solve_row_scale(w, delta, cfg).ok();
    let ours_row_norm = delta_scale.map(|s| {
        let mut row = w.to_owned();
        Zip::from(&mut row).and(&delta).for_each(|r, &d| *r += s * d);
        norm(row.view())
    });
    Ok(IncompatibilityReport {
        naive_factor: c,
        base_after_naive,
        base_after_ours: w.to_owned(),
        delta_scale,
        naive_row_norm,
        ours_row_norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linear::{build_frozen_base, gaussian, LoraInit};
    use crate::rng::{stream, Stream};
    use ndarray::array;
    use proptest::prelude::*;

    fn cfg() -> ProjectionConfig {
        ProjectionConfig::default()
    }

    fn unit_gap(w: ArrayView1<'_, f64>, d: ArrayView1<'_, f64>, s: f64) -> f64 {
        let r = &w + &(&d * s);
        (r.dot(&r).sqrt() - 1.0).abs()
    }

    #[test]
    fn row_normalize_examples() {
        let w = array![[3.0f64, 4.0], [1.0, 0.0]];
        let n = row_normalize(&w).unwrap();
        assert!((n[[0, 0]] - 0.6).abs() < 1e-15 && (n[[0, 1]] - 0.8).abs() < 1e-15);
        assert!((n[[1, 0]] - 1.0).abs() <= 1e-15);
        assert!(matches!(row_normalize(&array![[0.0, 0.0]]), Err(Error::ZeroRow(0))));
    }

    #[test]
    fn row_scale_examples() {
        let w = array![0.5, 0.0];
        let s = solve_row_scale(w.view(), array![0.0, 1.0].view(), &cfg()).unwrap();
        // Oracle: |(0.5, s)| = 1  =>  s = sqrt(0.75).
        assert!((s - 0.75f64.sqrt()).abs() < 1e-15);
        assert!(unit_gap(w.view(), array![0.0, 1.0].view(), s) < 1e-10);
        let s = solve_row_scale(w.view(), array![1.0, 0.0].view(), &cfg()).unwrap();
        assert!((s - 0.5).abs() < 1e-15);
        let roots = scale_roots(w.view(), array![1.0, 0.0].view(), &cfg()).unwrap();
        assert!((roots.negative + 1.5).abs() < 1e-15);
    }

    #[test]
    fn row_scale_errors() {
        let c = cfg();
        assert!(matches!(
            solve_row_scale(array![0.5, 0.0].view(), array![0.0, 0.0].view(), &c),
            Err(Error::DegenerateDirection { .. })
        ));
        assert!(matches!(
            solve_row_scale(array![1.0, 0.0].view(), array![0.0, 1.0].view(), &c),
            Err(Error::InfeasibleBase { .. })
        ));
        assert!(solve_row_scale(array![0.5].view(), array![0.0, 1.0].view(), &c).is_err());
    }

    fn lora_map(seed: u64, d_out: usize, d_in: usize, rank: usize) -> LoraLinear<f64> {
        let mut rng = stream(seed, Stream::Custom(1));
        let base = build_frozen_base(d_out, d_in, d_out.min(d_in), 0.5, &mut rng).unwrap();
        let (a, b) = LoraInit::NormalBoth.sample(d_out, d_in, rank, &mut rng);
        LoraLinear::new(base, a, b, rank as f64).unwrap()
    }

    #[test]
    fn project_lora_reaches_unit_rows_and_keeps_base() {
        let mut m = lora_map(3, 12, 8, 2);
        let base = m.base.clone();
        project_lora(&mut m, &cfg()).unwrap();
        assert_eq!(m.base, base);
        let eff = m.effective_weight();
        for row in eff.rows() {
            assert!((row.dot(&row).sqrt() - 1.0).abs() < 1e-9);
        }
        let b_first = m.b.clone();
        let scales = project_lora(&mut m, &cfg()).unwrap();
        assert!(scales.iter().all(|s| (s - 1.0).abs() < 1e-9));
        for (x, y) in m.b.iter().zip(b_first.iter()) {
            assert!((x - y).abs() <= 1e-9 * y.abs().max(1e-12));
        }
    }

    #[test]
    fn project_lora_reports_bad_row() {
        let mut m = lora_map(4, 4, 4, 1);
        m.b.row_mut(2).fill(0.0);
        match project_lora(&mut m, &cfg()) {
            Err(Error::RowProjection { row: 2, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn disabled_projection_is_identity() {
        let mut m = lora_map(5, 4, 4, 1);
        let before = m.clone();
        let c = ProjectionConfig {
            enabled: false,
            ..cfg()
        };
        project_lora(&mut m, &c).unwrap();
        assert_eq!(m, before);
    }

    #[test]
    fn incompatibility_examples() {
        let r = demonstrate_incompatibility(array![0.5, 0.0].view(), array![0.0, 1.0].view(), &cfg()).unwrap();
        assert!((r.naive_factor - 1.0 / 1.25f64.sqrt()).abs() < 1e-7);
        assert!((r.base_after_naive[0] - 0.4472135955).abs() < 1e-7);
        assert!(r.naive_moves_base());
        assert_eq!(r.base_after_ours, array![0.5, 0.0]);

        let r = demonstrate_incompatibility(array![0.6f64, 0.0].view(), array![0.0, 0.8].view(), &cfg()).unwrap();
        assert!((r.naive_factor - 1.0).abs() < 1e-7);
        assert!((r.base_after_naive[0] - 0.6).abs() < 1e-7);
        assert!((r.delta_scale.unwrap() - 1.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn roots_have_opposite_signs(seed in 0u64..10_000, kappa in 0.05f64..0.95, dim in 2usize..12) {
            let mut rng = stream(seed, Stream::Custom(2));
            let mut w: Array2<f64> = gaussian(1, dim, 1.0, &mut rng);
            crate::linear::rescale_rows(&mut w, kappa).unwrap();
            let d: Array2<f64> = gaussian(1, dim, 0.3, &mut rng);
            let (w, d) = (w.row(0), d.row(0));
            let roots = scale_roots(w, d, &cfg()).unwrap();
            prop_assert!(roots.negative < 0.0 && roots.positive > 0.0);
            let s = solve_row_scale(w, d, &cfg()).unwrap();
            prop_assert!((s - roots.positive).abs() <= 1e-9 * roots.positive.max(1.0));
            prop_assert!(unit_gap(w, d, s) < 1e-10);
        }
    }
}
