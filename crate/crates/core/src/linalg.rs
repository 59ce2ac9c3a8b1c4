//! Dense complex linear-algebra helpers shared by the design and link modules.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{BeamError, Result};

pub type C64 = Complex64;
pub type CMat = DMatrix<C64>;

/// Condition-number estimate above which a system is treated as singular.
pub const SINGULAR_COND: f64 = 1e12;

/// Eigendecomposition of a Hermitian matrix, eigenvalues sorted descending.
#[derive(Debug, Clone)]
pub struct HermitianEig {
    /// Columns are eigenvectors, in the same order as `values`.
    pub vectors: CMat,
    pub values: Vec<f64>,
}

/// Eigendecomposition of the Hermitian part of `m`.
///
/// Ties are broken by original index (stable sort) and every eigenvector is
/// rotated so its largest-magnitude entry is real and positive.
pub fn hermitian_eig(m: &CMat) -> HermitianEig {
    let herm = hermitian_part(m);
    let eig = herm.symmetric_eigen();
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let mut vectors = CMat::zeros(m.nrows(), n);
    let mut values = Vec::with_capacity(n);
    for (dst, &src) in order.iter().enumerate() {
        values.push(eig.eigenvalues[src]);
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    fix_column_phases(&mut vectors);
    HermitianEig { vectors, values }
}

/// Rotates each column so that its largest-magnitude entry is real positive.
pub fn fix_column_phases(m: &mut CMat) {
    for j in 0..m.ncols() {
        let mut best = 0;
        let mut best_mag = -1.0;
        for i in 0..m.nrows() {
            let mag = m[(i, j)].norm();
            if mag > best_mag {
                best_mag = mag;
                best = i;
            }
        }
        if best_mag > 0.0 {
            let phase = m[(best, j)].conj() / best_mag;
            for i in 0..m.nrows() {
                m[(i, j)] *= phase;
            }
        }
    }
}

pub fn hermitian_part(m: &CMat) -> CMat {
    (m + m.adjoint()).scale(0.5)
}

/// Inverse of a square matrix via LU solve against the identity.
///
/// Fails when the 1-norm condition estimate exceeds [`SINGULAR_COND`].
pub fn inverse(m: &CMat) -> Result<CMat> {
    if m.nrows() != m.ncols() {
        return Err(BeamError::DimensionMismatch(format!(
            "cannot invert {}x{} matrix",
            m.nrows(),
            m.ncols()
        )));
    }
    let n = m.nrows();
    let inv = m
        .clone()
        .lu()
        .solve(&CMat::identity(n, n))
        .ok_or(BeamError::Singular(f64::INFINITY))?;
    let cond = norm_1(m) * norm_1(&inv);
    if !cond.is_finite() || cond > SINGULAR_COND {
        return Err(BeamError::Singular(cond));
    }
    Ok(inv)
}

/// Maximum absolute column sum.
pub fn norm_1(m: &CMat) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn trace_re(m: &CMat) -> f64 {
    m.diagonal().iter().map(|z| z.re).sum()
}

/// Largest singular value.
pub fn spectral_norm(m: &CMat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone()
        .singular_values()
        .iter()
        .copied()
        .fold(0.0, f64::max)
}

/// `max |(M)_ij - I_ij|`.
pub fn max_dev_from_identity(m: &CMat) -> f64 {
    let mut dev: f64 = 0.0;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            let target = if i == j { 1.0 } else { 0.0 };
            dev = dev.max((m[(i, j)] - C64::new(target, 0.0)).norm());
        }
    }
    dev
}

/// Orthonormalizes the rows of `m` by sequential projection and normalization.
///
/// Each row is projected off the span of the previous ones twice (classical
/// Gram-Schmidt with one re-orthogonalization pass). A row whose residual
/// falls below `1e-10` of its original norm makes the rows linearly dependent.
pub fn orthonormalize_rows(m: &CMat) -> Result<CMat> {
    let (rows, cols) = m.shape();
    let mut out = CMat::zeros(rows, cols);
    for r in 0..rows {
        let mut v = m.row(r).clone_owned();
        let original = v.norm();
        for _ in 0..2 {
            for p in 0..r {
                let q = out.row(p);
                // coefficient <q, v> with rows treated as vectors
                let coef: C64 = q.iter().zip(v.iter()).map(|(a, b)| a.conj() * b).sum();
                v -= q * coef;
            }
        }
        let residual = v.norm();
        if original == 0.0 || residual <= 1e-10 * original {
            return Err(BeamError::DegenerateGeometry(format!(
                "row {r} is linearly dependent on earlier rows"
            )));
        }
        out.set_row(r, &(v / C64::new(residual, 0.0)));
    }
    Ok(out)
}

/// Orthogonal projector onto the row space of a matrix with orthonormal rows.
pub fn row_projector(b: &CMat) -> CMat {
    b.adjoint() * b
}

/// Circularly-symmetric complex Gaussian sample with unit variance.
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

pub fn random_complex<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> CMat {
    CMat::from_fn(rows, cols, |_, _| complex_normal(rng))
}

/// Haar-distributed `k x n` matrix with orthonormal rows.
pub fn random_orthonormal_rows<R: Rng + ?Sized>(k: usize, n: usize, rng: &mut R) -> CMat {
    loop {
        let g = random_complex(k, n, rng);
        if let Ok(q) = orthonormalize_rows(&g) {
            return q;
        }
    }
}

/// Random Hermitian matrix with a prescribed spectrum.
pub fn hermitian_with_spectrum<R: Rng + ?Sized>(values: &[f64], rng: &mut R) -> CMat {
    let n = values.len();
    let u = random_orthonormal_rows(n, n, rng);
    let d = CMat::from_diagonal(&nalgebra::DVector::from_iterator(
        n,
        values.iter().map(|&v| C64::new(v, 0.0)),
    ));
    u.adjoint() * d * u
}
