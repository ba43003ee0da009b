use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Entries closer than this (relative to the largest magnitude) to being
/// conjugate-symmetric are accepted and then symmetrized exactly.
const SYMMETRY_TOL: f64 = 1e-12;

/// Relative slack on the smallest eigenvalue before a matrix counts as
/// indefinite.
const PSD_TOL: f64 = 1e-8;

/// Relative gap under which two leading eigenvalues are treated as tied.
const TIE_TOL: f64 = 1e-10;

/// A complex Hermitian matrix. Construction symmetrizes the input so the
/// diagonal is exactly real and `a[(i, j)] == a[(j, i)].conj()` bit for bit.
#[derive(Clone, Debug, PartialEq)]
pub struct HermitianMatrix {
    data: DMatrix<Complex64>,
}

impl HermitianMatrix {
    pub fn new(m: DMatrix<Complex64>) -> Result<Self> {
        if m.nrows() != m.ncols() || m.nrows() == 0 {
            return Err(Error::Dimension(format!(
                "Hermitian matrix must be square and nonempty, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let scale = m.iter().map(|z| z.norm()).fold(1.0, f64::max);
        let n = m.nrows();
        for i in 0..n {
            for j in i..n {
                let d = (m[(i, j)] - m[(j, i)].conj()).norm();
                if d > SYMMETRY_TOL * scale || !m[(i, j)].is_finite() {
                    return Err(Error::Domain(format!(
                        "entry ({i},{j}) breaks conjugate symmetry by {d:e}"
                    )));
                }
            }
        }
        Ok(Self::symmetrized(m))
    }

    /// Builds from any square matrix by taking its Hermitian part.
    pub fn symmetrized(m: DMatrix<Complex64>) -> Self {
        let n = m.nrows();
        let mut data = DMatrix::zeros(n, n);
        for i in 0..n {
            data[(i, i)] = Complex64::new(m[(i, i)].re, 0.0);
            for j in (i + 1)..n {
                let v = (m[(i, j)] + m[(j, i)].conj()) * 0.5;
                data[(i, j)] = v;
                data[(j, i)] = v.conj();
            }
        }
        Self { data }
    }

    pub fn from_real(m: &DMatrix<f64>) -> Result<Self> {
        Self::new(m.map(|v| Complex64::new(v, 0.0)))
    }

    pub fn identity(n: usize) -> Self {
        Self { data: DMatrix::identity(n, n) }
    }

    pub fn zeros(n: usize) -> Self {
        Self { data: DMatrix::zeros(n, n) }
    }

    /// `v v^H`
    pub fn outer(v: &DVector<Complex64>) -> Self {
        Self::symmetrized(v * v.adjoint())
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<Complex64> {
        &self.data
    }

    pub fn into_matrix(self) -> DMatrix<Complex64> {
        self.data
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim()).map(|i| self.data[(i, i)].re).sum()
    }

    /// `Re tr(self * other)`; exact for Hermitian pairs.
    pub fn inner(&self, other: &HermitianMatrix) -> f64 {
        self.data.zip_fold(&other.data, 0.0, |acc, a, b| acc + (a.conj() * b).re)
    }

    /// `v^H self v`
    pub fn quad_form(&self, v: &DVector<Complex64>) -> f64 {
        (v.adjoint() * &self.data * v)[(0, 0)].re
    }

    /// Eigenvalues in ascending order with matching unit eigenvectors as columns.
    pub fn eigh(&self) -> (Vec<f64>, DMatrix<Complex64>) {
        let eig = self.data.clone().symmetric_eigen();
        let mut order: Vec<usize> = (0..self.dim()).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
        let vectors = DMatrix::from_fn(self.dim(), self.dim(), |i, c| eig.eigenvectors[(i, order[c])]);
        (values, vectors)
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.data.clone().symmetric_eigenvalues().iter().copied().collect();
        v.sort_by(f64::total_cmp);
        v
    }

    pub fn is_psd(&self, rel_tol: f64) -> bool {
        let ev = self.eigenvalues();
        let scale = ev.iter().map(|v| v.abs()).fold(0.0, f64::max);
        ev[0] >= -rel_tol * scale
    }
}

impl std::ops::Index<(usize, usize)> for HermitianMatrix {
    type Output = Complex64;
    fn index(&self, idx: (usize, usize)) -> &Complex64 {
        &self.data[idx]
    }
}

/// `[[Re H, -Im H], [Im H, Re H]]`, the real symmetric matrix of size `2n`
/// whose quadratic form matches `H` on stacked real/imaginary parts.
pub fn hermitian_to_real_embedding(h: &HermitianMatrix) -> DMatrix<f64> {
    let n = h.dim();
    let mut out = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            let z = h[(i, j)];
            out[(i, j)] = z.re;
            out[(i + n, j + n)] = z.re;
            out[(i, j + n)] = -z.im;
            out[(i + n, j)] = z.im;
        }
    }
    out
}

/// Largest eigenpair of a PSD matrix.
///
/// When the top eigenvalue is repeated the returned vector is the normalized
/// projection of the first standard basis vector (then the second, ...) onto
/// the top eigenspace, which does not depend on the eigensolver's basis. In all
/// cases the first entry with magnitude above 1e-12 is made real positive.
pub fn principal_rank_one(h: &HermitianMatrix) -> Result<(f64, DVector<Complex64>)> {
    let n = h.dim();
    let (values, vectors) = h.eigh();
    let top = values[n - 1];
    let scale = values.iter().map(|v| v.abs()).fold(0.0, f64::max);
    if !h.is_psd(PSD_TOL) {
        return Err(Error::Domain(format!(
            "matrix is not PSD: smallest eigenvalue {:e} against largest {:e}",
            values[0], top
        )));
    }
    let tied: Vec<usize> = (0..n).filter(|&k| top - values[k] <= TIE_TOL * scale).collect();
    let mut v = if tied.len() == 1 {
        vectors.column(n - 1).into_owned()
    } else {
        let basis = DMatrix::from_fn(n, tied.len(), |i, c| vectors[(i, tied[c])]);
        let mut picked = None;
        for e in 0..n {
            // projection of e_e onto span(basis) is basis * basis[e, :]^H
            let coeffs = basis.row(e).adjoint();
            let p = &basis * coeffs;
            if p.norm() > 1e-6 {
                picked = Some(p);
                break;
            }
        }
        picked.expect("a nonempty eigenspace contains a non-orthogonal basis vector")
    };
    let norm = v.norm();
    v /= Complex64::new(norm, 0.0);
    if let Some(first) = v.iter().find(|z| z.norm() > 1e-12).copied() {
        let rot = first.conj() / first.norm();
        v *= rot;
    }
    Ok((top, v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_hermitian(rng: &mut ChaCha8Rng, n: usize) -> HermitianMatrix {
        let a = DMatrix::from_fn(n, n, |_, _| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        HermitianMatrix::symmetrized(&a + a.adjoint())
    }

    fn random_psd(rng: &mut ChaCha8Rng, n: usize) -> HermitianMatrix {
        let a = DMatrix::from_fn(n, n, |_, _| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        HermitianMatrix::symmetrized(&a * a.adjoint())
    }

    fn power_iteration(h: &HermitianMatrix) -> f64 {
        let n = h.dim();
        let mut v = DVector::from_fn(n, |i, _| c(1.0 + i as f64 * 0.1, 0.3));
        let mut lambda = 0.0;
        for _ in 0..20_000 {
            let w = h.as_matrix() * &v;
            let nw = w.norm();
            v = w / c(nw, 0.0);
            let next = h.quad_form(&v);
            if (next - lambda).abs() < 1e-15 * next.abs() {
                lambda = next;
                break;
            }
            lambda = next;
        }
        lambda
    }

    #[test]
    fn construction_rejects_asymmetry() {
        let m = DMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(0.0, 1.0), c(0.0, 1.0), c(1.0, 0.0)]);
        assert!(matches!(HermitianMatrix::new(m), Err(Error::Domain(_))));
    }

    #[test]
    fn construction_zeroes_diagonal_imaginary_part() {
        let m = DMatrix::from_row_slice(2, 2, &[c(1.0, 1e-14), c(2.0, 1.0), c(2.0, -1.0), c(3.0, 0.0)]);
        let h = HermitianMatrix::new(m).unwrap();
        assert_eq!(h[(0, 0)].im, 0.0);
        assert_eq!(h[(0, 1)], h[(1, 0)].conj());
    }

    #[test]
    fn embedding_of_scalar() {
        let h = HermitianMatrix::from_real(&DMatrix::from_element(1, 1, 2.0)).unwrap();
        assert_eq!(hermitian_to_real_embedding(&h), DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 2.0]));
    }

    #[test]
    fn embedding_of_two_by_two() {
        let m = DMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(0.0, 1.0), c(0.0, -1.0), c(1.0, 0.0)]);
        let e = hermitian_to_real_embedding(&HermitianMatrix::new(m).unwrap());
        let mut ev: Vec<f64> = e.symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        for (got, want) in ev.iter().zip([0.0, 0.0, 2.0, 2.0]) {
            assert!((got - want).abs() < 1e-12, "{ev:?}");
        }
    }

    #[test]
    fn embedding_doubles_spectrum() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = random_hermitian(&mut rng, 5);
        let mut doubled: Vec<f64> = h.eigenvalues().iter().flat_map(|&v| [v, v]).collect();
        doubled.sort_by(f64::total_cmp);
        let mut emb: Vec<f64> = hermitian_to_real_embedding(&h).symmetric_eigenvalues().iter().copied().collect();
        emb.sort_by(f64::total_cmp);
        for (a, b) in doubled.iter().zip(&emb) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn embedding_preserves_psd_both_ways() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for k in 0..100 {
            let n = 1 + k % 6;
            let h = if k % 2 == 0 { random_psd(&mut rng, n) } else { random_hermitian(&mut rng, n) };
            let min_h = h.eigenvalues()[0];
            let min_e = hermitian_to_real_embedding(&h).symmetric_eigenvalues().min();
            assert!((min_h - min_e).abs() < 1e-9);
            assert_eq!(min_h >= -1e-10, min_e >= -1e-10);
        }
    }

    #[test]
    fn rank_one_recovers_vector_up_to_phase() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let q = DVector::from_vec(vec![c(s, 0.0), c(0.0, s)]);
        let (lambda, v) = principal_rank_one(&HermitianMatrix::outer(&q)).unwrap();
        assert!((lambda - 1.0).abs() < 1e-12);
        assert!(((q.adjoint() * &v)[(0, 0)].norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identity_tie_break_is_first_basis_vector() {
        let (lambda, v) = principal_rank_one(&HermitianMatrix::identity(3)).unwrap();
        assert!((lambda - 1.0).abs() < 1e-12);
        assert!((v[0] - c(1.0, 0.0)).norm() < 1e-12);
        assert!(v[1].norm() < 1e-12 && v[2].norm() < 1e-12);
    }

    #[test]
    fn first_nonzero_entry_has_zero_phase() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (_, v) = principal_rank_one(&random_psd(&mut rng, 4)).unwrap();
        assert!(v[0].im.abs() < 1e-14 && v[0].re > 0.0);
    }

    #[test]
    fn top_eigenvalue_matches_power_iteration() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = random_psd(&mut rng, 6);
        let (lambda, v) = principal_rank_one(&h).unwrap();
        let oracle = power_iteration(&h);
        assert!((lambda - oracle).abs() <= 1e-9 * oracle.max(1.0), "{lambda} vs {oracle}");
        assert!((v.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn indefinite_input_is_rejected() {
        let h = HermitianMatrix::from_real(&DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0])).unwrap();
        assert!(matches!(principal_rank_one(&h), Err(Error::Domain(_))));
    }

    proptest::proptest! {
        #[test]
        fn rayleigh_quotient_matches(seed in 0u64..1000, n in 1usize..7) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let h = random_psd(&mut rng, n);
            let (lambda, v) = principal_rank_one(&h).unwrap();
            let scale = lambda.abs().max(1.0);
            proptest::prop_assert!((lambda * v.norm_squared() - h.quad_form(&v)).abs() <= 1e-9 * scale);
        }
    }
}
