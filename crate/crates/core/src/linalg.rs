//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::DMatrix;

use crate::error::{Result, TdpError};

/// Moore-Penrose pseudo-inverse in factored form.
///
/// Singular values at or below `max(rows, cols) * f64::EPSILON * σ_max` are
/// treated as zero.
#[derive(Debug, Clone)]
pub struct PseudoInverse {
    /// `A† = left * diag(inv_singular) * right`
    pub left: DMatrix<f64>,
    pub inv_singular: Vec<f64>,
    pub right: DMatrix<f64>,
    pub rank: usize,
}

impl PseudoInverse {
    pub fn new(a: &DMatrix<f64>) -> Result<Self> {
        let (rows, cols) = a.shape();
        let svd = a.clone().svd(true, true);
        let u = svd.u.ok_or_else(|| TdpError::invalid("SVD did not produce U"))?;
        let v_t = svd.v_t.ok_or_else(|| TdpError::invalid("SVD did not produce V^T"))?;
        let sigma_max = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
        let cutoff = rows.max(cols) as f64 * f64::EPSILON * sigma_max;
        let inv_singular: Vec<f64> = svd
            .singular_values
            .iter()
            .map(|&s| if s > cutoff { 1.0 / s } else { 0.0 })
            .collect();
        let rank = inv_singular.iter().filter(|v| **v != 0.0).count();
        // A = U S V^T  =>  A† = V S⁻¹ U^T
        Ok(Self {
            left: v_t.transpose(),
            inv_singular,
            right: u.transpose(),
            rank,
        })
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        let mut scaled = self.left.clone();
        for (j, s) in self.inv_singular.iter().enumerate() {
            scaled.column_mut(j).scale_mut(*s);
        }
        scaled * &self.right
    }

    /// `m * A†` without materialising `A†`.
    pub fn apply_right(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let mut ml = m * &self.left;
        for (j, s) in self.inv_singular.iter().enumerate() {
            ml.column_mut(j).scale_mut(*s);
        }
        ml * &self.right
    }
}

pub fn pseudo_inverse(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(PseudoInverse::new(a)?.to_matrix())
}

/// Relative Frobenius error `‖a − b‖_F / ‖b‖_F`.
pub fn relative_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pinv_of_full_rank_wide_matrix_is_right_inverse() {
        let a = DMatrix::from_row_slice(2, 4, &[1.0, 0.0, 2.0, -1.0, 0.0, 1.0, 1.0, 3.0]);
        let p = pseudo_inverse(&a).unwrap();
        let id = &a * &p;
        assert!((id - DMatrix::identity(2, 2)).amax() < 1e-12);
    }

    #[test]
    fn pinv_satisfies_penrose_conditions_when_rank_deficient() {
        // second row is twice the first
        let a = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 6.0]);
        let pi = PseudoInverse::new(&a).unwrap();
        assert_eq!(pi.rank, 1);
        let p = pi.to_matrix();
        assert!((&a * &p * &a - &a).amax() < 1e-12);
        assert!((&p * &a * &p - &p).amax() < 1e-12);
        let ap = &a * &p;
        assert!((&ap - ap.transpose()).amax() < 1e-12);
    }

    #[test]
    fn zero_matrix_has_rank_zero() {
        let pi = PseudoInverse::new(&DMatrix::zeros(2, 2)).unwrap();
        assert_eq!(pi.rank, 0);
        assert_eq!(pi.to_matrix(), DMatrix::zeros(2, 2));
    }

    #[test]
    fn apply_right_matches_explicit_product() {
        let a = DMatrix::from_fn(3, 7, |i, j| ((i * 7 + j) as f64).sin());
        let m = DMatrix::from_fn(5, 7, |i, j| ((i + 2 * j) as f64).cos());
        let pi = PseudoInverse::new(&a).unwrap();
        let direct = &m * pi.to_matrix();
        assert!((pi.apply_right(&m) - direct).amax() < 1e-12);
    }
}
