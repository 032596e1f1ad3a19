//! Matrix-inequality modelling layer and the stability, performance and
//! synthesis conditions built on it.

mod assemble;
mod expr;

pub use assemble::{
    assemble_analysis_known, assemble_analysis_partial, assemble_performance, assemble_synthesis,
    AssemblyOptions, Assembled, Certificate, CertificateVars, PartialMode, SynthesisProblem,
};
pub use expr::{
    AffineMatrixExpr, Assignment, DecisionVar, LinearObjective, LmiConstraint, LmiError, LmiProblem,
    Sense, UpperEntries, VarId, VarKind,
};

use nalgebra::DMatrix;

use crate::linalg::kron;
use crate::model::SectorBounds;

/// `[[A1, A3ᵀ], [A3, −A2]]`.
pub fn schur_embed(a1: &DMatrix<f64>, a2: &DMatrix<f64>, a3: &DMatrix<f64>) -> Result<DMatrix<f64>, LmiError> {
    let s = a1.nrows();
    let t = a2.nrows();
    if a1.ncols() != s || a2.ncols() != t || a3.shape() != (t, s) {
        return Err(LmiError::DimensionMismatch(format!(
            "A1 {:?}, A2 {:?}, A3 {:?}",
            a1.shape(),
            a2.shape(),
            a3.shape()
        )));
    }
    let mut out = DMatrix::zeros(s + t, s + t);
    out.view_mut((0, 0), (s, s)).copy_from(a1);
    out.view_mut((0, s), (s, t)).copy_from(&a3.transpose());
    out.view_mut((s, 0), (t, s)).copy_from(a3);
    out.view_mut((s, s), (t, t)).copy_from(&(-a2));
    Ok(out)
}

/// `F3 = I₂ ⊗ (F1ᵀF2 + F2ᵀF1)/2` and `F4 = I₂ ⊗ (F1 + F2)ᵀ/2`.
pub fn sector_multiplier_blocks(sector: &SectorBounds) -> (DMatrix<f64>, DMatrix<f64>) {
    let (f1, f2) = (&sector.f1, &sector.f2);
    let i2 = DMatrix::identity(2, 2);
    let f3 = (f1.transpose() * f2 + f2.transpose() * f1) * 0.5;
    let f4 = (f1 + f2).transpose() * 0.5;
    (kron(&i2, &f3), kron(&i2, &f4))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::lambda_max;
    use nalgebra::DVector;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn s(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    #[test]
    fn scalar_embedding() {
        let b = schur_embed(&s(-1.0), &s(1.0), &s(0.5)).unwrap();
        assert_eq!(b, DMatrix::from_row_slice(2, 2, &[-1.0, 0.5, 0.5, -1.0]));
        let mut e: Vec<f64> = b.symmetric_eigenvalues().iter().cloned().collect();
        e.sort_by(f64::total_cmp);
        assert!((e[0] + 1.5).abs() < 1e-12 && (e[1] + 0.5).abs() < 1e-12);
        assert!(-1.0 + 0.25 < 0.0);
    }

    #[test]
    fn decoupled_and_boundary_embeddings() {
        let b = schur_embed(&s(-2.0), &s(3.0), &s(0.0)).unwrap();
        assert!(lambda_max(&b) < 0.0);
        let b = schur_embed(&s(1.0), &s(3.0), &s(0.0)).unwrap();
        assert!(lambda_max(&b) >= 0.0);
        let b = schur_embed(&s(0.0), &s(1.0), &s(0.0)).unwrap();
        assert!(lambda_max(&b) >= 0.0);
        assert!(schur_embed(&s(0.0), &DMatrix::identity(2, 2), &s(0.0)).is_err());
    }

    #[test]
    fn sector_blocks() {
        let z = SectorBounds { f1: DMatrix::zeros(2, 2), f2: DMatrix::zeros(2, 2) };
        let (f3, f4) = sector_multiplier_blocks(&z);
        assert_eq!(f3, DMatrix::zeros(4, 4));
        assert_eq!(f4, DMatrix::zeros(4, 4));
        let d = |a: f64, b: f64| DMatrix::from_diagonal(&DVector::from_vec(vec![a, b]));
        let sec = SectorBounds { f1: d(0.2, 0.1), f2: d(0.1, 0.2) };
        let (f3, f4) = sector_multiplier_blocks(&sec);
        let i2 = DMatrix::identity(2, 2);
        assert!((f3 - kron(&i2, &d(0.02, 0.02))).abs().max() < 1e-15);
        assert!((f4 - kron(&i2, &d(0.15, 0.15))).abs().max() < 1e-15);
        let f = d(0.3, -0.4);
        let (f3, f4) = sector_multiplier_blocks(&SectorBounds { f1: f.clone(), f2: f.clone() });
        assert!((f3 - kron(&i2, &(&f * &f))).abs().max() < 1e-15);
        assert_eq!(f4, kron(&i2, &f));
    }

    #[test]
    fn schur_complement_both_directions() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let mut disagreements = 0;
        for _ in 0..200 {
            let sdim = rng.gen_range(1..5);
            let tdim = rng.gen_range(1..5);
            let g = DMatrix::from_fn(sdim, sdim, |_, _| rng.gen_range(-1.0..1.0));
            let a1 = (&g + g.transpose()) * 0.5 - DMatrix::identity(sdim, sdim) * rng.gen_range(0.0..2.0);
            let h = DMatrix::from_fn(tdim, tdim, |_, _| rng.gen_range(-1.0..1.0));
            let a2 = &h * h.transpose() + DMatrix::identity(tdim, tdim) * 0.1;
            let a3 = DMatrix::from_fn(tdim, sdim, |_, _| rng.gen_range(-1.0..1.0));
            let block = lambda_max(&schur_embed(&a1, &a2, &a3).unwrap()) < 0.0;
            let comp = &a1 + a3.transpose() * a2.clone().try_inverse().unwrap() * &a3;
            if block != (lambda_max(&comp) < 0.0) {
                disagreements += 1;
            }
        }
        assert_eq!(disagreements, 0);
    }

    proptest! {
        #[test]
        fn embedding_is_exactly_symmetric(v in proptest::collection::vec(-3.0f64..3.0, 9)) {
            let a1 = DMatrix::from_row_slice(2, 2, &[v[0], v[1], v[1], v[2]]);
            let a2 = DMatrix::from_row_slice(1, 1, &[v[3].abs() + 0.1]);
            let a3 = DMatrix::from_row_slice(1, 2, &[v[4], v[5]]);
            let b = schur_embed(&a1, &a2, &a3).unwrap();
            prop_assert_eq!(b.clone(), b.transpose());
        }
    }
}
