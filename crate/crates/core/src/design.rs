//! Fixed beam-generation matrices `B` (`K x N`, orthonormal rows).
//!
//! Four designs are provided:
//!
//! * **reference**: Gaussian angular weighting of feeds around each beam
//!   centre, rows orthonormalized. Needs only the geometry.
//! * **adaptive**: left singular vectors of one concrete channel. Optimal for
//!   that channel and used as the channel-adaptive benchmark.
//! * **robust**: dominant eigenvectors of `H̄ H̄ᴴ`. Minimizes the worst-case
//!   SMSE surrogate built from the nominal channel and its uncertainty ball,
//!   for the return and the forward link alike.
//! * **perturbation-aware**: the robust eigenvectors corrected by a
//!   first-order eigenvector perturbation, then re-orthonormalized.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::channel::{BeamGeometry, Channel, NominalChannel};
use crate::error::{BeamError, Result};
use crate::linalg::{
    fix_column_phases, hermitian_part, inverse, max_dev_from_identity, orthonormalize_rows, trace_re, CMat, C64,
};

/// Relative eigenvalue gap below which first-order perturbation is rejected.
pub const EIGEN_GAP_TOL: f64 = 1e-8;

/// Relative singular-value threshold for rank decisions.
pub const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignKind {
    Reference,
    Adaptive,
    Robust,
    PerturbationAware,
}

impl DesignKind {
    pub const ALL: [DesignKind; 4] = [
        DesignKind::Reference,
        DesignKind::Adaptive,
        DesignKind::Robust,
        DesignKind::PerturbationAware,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DesignKind::Reference => "reference",
            DesignKind::Adaptive => "adaptive",
            DesignKind::Robust => "robust",
            DesignKind::PerturbationAware => "perturbation_aware",
        }
    }
}

impl std::str::FromStr for DesignKind {
    type Err = BeamError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| BeamError::InvalidParameter(format!("unknown design kind '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamMatrix {
    /// `K x N`
    pub values: CMat,
    pub kind: DesignKind,
    /// Set when the perturbation-aware design hit a degenerate spectrum and
    /// returned the robust design instead.
    pub fallback_to_robust: bool,
}

impl BeamMatrix {
    pub fn new(values: CMat, kind: DesignKind) -> Self {
        Self { values, kind, fallback_to_robust: false }
    }

    pub fn num_beams(&self) -> usize {
        self.values.nrows()
    }

    pub fn num_feeds(&self) -> usize {
        self.values.ncols()
    }
}

/// `max |B Bᴴ - I|`.
pub fn check_orthonormal(b: &BeamMatrix) -> f64 {
    max_dev_from_identity(&(&b.values * b.values.adjoint()))
}

/// Geographic reference design with the feed pattern width as weighting scale.
pub fn design_reference(geometry: &BeamGeometry) -> Result<BeamMatrix> {
    design_reference_weighted(geometry, geometry.feed_pattern_width)
}

/// Row `k` weights feed `n` by `exp(-ln2 (θ_kn / width)^2)` where `θ_kn` is the
/// angle between beam centre `k` and feed `n`; rows are then orthonormalized.
pub fn design_reference_weighted(geometry: &BeamGeometry, width: f64) -> Result<BeamMatrix> {
    geometry.validate()?;
    if !(width > 0.0) {
        return Err(BeamError::InvalidParameter("reference weighting width must be positive".into()));
    }
    let (k, n) = (geometry.num_beams(), geometry.num_feeds());
    let weights = CMat::from_fn(k, n, |row, col| {
        let c = geometry.beam_centers[row];
        let f = geometry.feed_positions[col];
        let theta = (c[0] - f[0]).hypot(c[1] - f[1]);
        C64::new(crate::channel::feed_gain(theta, width), 0.0)
    });
    let values = orthonormalize_rows(&weights).map_err(|_| {
        BeamError::DegenerateGeometry("beam weight rows are linearly dependent".into())
    })?;
    Ok(BeamMatrix::new(values, DesignKind::Reference))
}

/// Channel-adaptive design: the first `K` rows of `Uᴴ` for `H = U Φ Vᴴ`.
pub fn design_adaptive(h: &Channel) -> Result<BeamMatrix> {
    let k = h.num_users();
    if k == 0 || k > h.num_feeds() {
        return Err(BeamError::DimensionMismatch(format!(
            "channel is {}x{}, need K <= N",
            h.num_feeds(),
            k
        )));
    }
    let svd = h.values.clone().svd(true, false);
    let u = svd.u.ok_or(BeamError::Singular(f64::INFINITY))?;
    let sv = &svd.singular_values;
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]));
    let top = sv[order[0]];
    let found = order.iter().filter(|&&i| top > 0.0 && sv[i] > RANK_TOL * top).count();
    if found < k {
        return Err(BeamError::RankDeficient { needed: k, found });
    }
    let mut cols = CMat::zeros(h.num_feeds(), k);
    for (dst, &src) in order.iter().take(k).enumerate() {
        cols.set_column(dst, &u.column(src));
    }
    fix_column_phases(&mut cols);
    Ok(BeamMatrix::new(cols.adjoint(), DesignKind::Adaptive))
}

/// `2 α δ_max(H̄)`.
pub fn epsilon_h(nominal: &NominalChannel) -> f64 {
    epsilon_for(nominal, nominal.alpha)
}

fn epsilon_for(nominal: &NominalChannel, alpha: f64) -> f64 {
    let top = nominal.eig.values.first().copied().unwrap_or(0.0);
    2.0 * alpha * top.max(0.0).sqrt()
}

/// Eigenvalue-only worst-case surrogate of `Z = H Hᴴ`.
#[derive(Debug, Clone)]
pub struct RobustSurrogate {
    /// `Ū (Σ̄ - ε_H I)⁺ Ūᴴ`
    pub z_breve: CMat,
    pub epsilon_h: f64,
    pub alpha_used: f64,
    pub alpha_clamped: bool,
}

/// Builds `Ž` for the nominal's uncertainty radius, shrinking the radius by
/// bisection when the top-K clipped eigenvalues would not all stay positive.
pub fn robust_surrogate(nominal: &NominalChannel) -> Result<RobustSurrogate> {
    let k = nominal.num_users();
    let values = &nominal.eig.values;
    if k == 0 || values.len() < k || nominal.mean.norm() == 0.0 {
        return Err(BeamError::NoFeasibleAlpha);
    }
    let lambda_k = values[k - 1];
    if !(lambda_k > 0.0) {
        return Err(BeamError::NoFeasibleAlpha);
    }
    let feasible = |alpha: f64| lambda_k - epsilon_for(nominal, alpha) > 0.0;

    let (alpha_used, alpha_clamped) = if feasible(nominal.alpha) {
        (nominal.alpha, false)
    } else {
        let (mut lo, mut hi) = (0.0, nominal.alpha);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if feasible(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        (lo, true)
    };

    let eps = epsilon_for(nominal, alpha_used);
    let clipped = DVector::from_iterator(values.len(), values.iter().map(|&v| C64::new((v - eps).max(0.0), 0.0)));
    let u = &nominal.eig.vectors;
    let z_breve = hermitian_part(&(u * CMat::from_diagonal(&clipped) * u.adjoint()));
    Ok(RobustSurrogate { z_breve, epsilon_h: eps, alpha_used, alpha_clamped })
}

fn require_signal_rank(nominal: &NominalChannel) -> Result<usize> {
    let k = nominal.num_users();
    if nominal.rank < k {
        return Err(BeamError::RankDeficient { needed: k, found: nominal.rank });
    }
    Ok(k)
}

/// Robust design: first `K` rows of `Ūᴴ`. Independent of `α`.
pub fn design_robust(nominal: &NominalChannel) -> Result<BeamMatrix> {
    let k = require_signal_rank(nominal)?;
    let us = nominal.eig.vectors.columns(0, k);
    Ok(BeamMatrix::new(us.adjoint(), DesignKind::Robust))
}

/// First-order perturbation of the signal eigenvectors of `H̄ H̄ᴴ`.
#[derive(Debug, Clone)]
pub struct EigPerturbation {
    /// `ΔU_s`, `N x r`
    pub delta_u: CMat,
    /// In-subspace rotation `R`, `r x r`
    pub r_matrix: CMat,
    /// Hadamard weights; zero diagonal, antisymmetric.
    pub d_weights: DMatrix<f64>,
}

/// `ΔU_s = Ū_s R + Ū_n Ū_nᴴ ΔZ Ū_s Σ̄_s⁻¹` with
/// `R = D ∘ (Ū_sᴴ ΔZ Ū_s Σ̄_s + Σ̄_s Ū_sᴴ ΔZᴴ Ū_s)`.
///
/// The bracket carries a factor `λ_f + λ_g` in entry `(f, g)`, so the weights
/// are `D_fg = 1 / (λ_g² - λ_f²)`; together they give the usual first-order
/// coefficient `(u_fᴴ ΔZ u_g) / (λ_g - λ_f)`.
pub fn eig_perturb_first_order(nominal: &NominalChannel, delta_z: &CMat) -> Result<EigPerturbation> {
    let n = nominal.num_feeds();
    if delta_z.shape() != (n, n) {
        return Err(BeamError::DimensionMismatch(format!(
            "ΔZ is {:?}, expected {n}x{n}",
            delta_z.shape()
        )));
    }
    let r = require_signal_rank(nominal)?;
    let lambda = &nominal.eig.values[..r];
    let scale = nominal.eig.values[0];
    let tol = EIGEN_GAP_TOL * scale;
    // gaps inside the signal space and between the signal and null spaces
    let mut min_gap = lambda[r - 1];
    for f in 0..r {
        for g in (f + 1)..r {
            min_gap = min_gap.min((lambda[f] - lambda[g]).abs());
        }
    }
    if !(min_gap >= tol) || !(scale > 0.0) {
        return Err(BeamError::EigenGap { gap: min_gap, tol });
    }

    let us = nominal.eig.vectors.columns(0, r).clone_owned();
    let sigma = CMat::from_diagonal(&DVector::from_iterator(r, lambda.iter().map(|&v| C64::new(v, 0.0))));
    let inner = us.adjoint() * delta_z * &us;
    let inner_h = us.adjoint() * delta_z.adjoint() * &us;
    let bracket = &inner * &sigma + &sigma * &inner_h;

    let d_weights = DMatrix::from_fn(r, r, |f, g| {
        if f == g {
            0.0
        } else {
            1.0 / (lambda[g] * lambda[g] - lambda[f] * lambda[f])
        }
    });
    let r_matrix = CMat::from_fn(r, r, |f, g| bracket[(f, g)] * d_weights[(f, g)]);

    let sigma_inv = CMat::from_diagonal(&DVector::from_iterator(r, lambda.iter().map(|&v| C64::new(1.0 / v, 0.0))));
    let null_proj = CMat::identity(n, n) - &us * us.adjoint();
    let delta_u = &us * &r_matrix + null_proj * delta_z * &us * sigma_inv;
    Ok(EigPerturbation { delta_u, r_matrix, d_weights })
}

/// Which `ΔZ` drives the perturbation-aware correction.
#[derive(Debug, Clone)]
pub enum DzMode {
    /// `ΔZ = ε_H I`; the correction vanishes identically.
    PaperLiteral,
    /// Ensemble mean of `H̄Δᴴ + ΔH̄ᴴ + ΔΔᴴ`, Hermitian part; rescaled to
    /// Frobenius norm `ε_H` at design time.
    Empirical { mean_dz: CMat },
}

impl DzMode {
    pub fn empirical(nominal: &NominalChannel, ensemble: &[Channel]) -> Result<Self> {
        if ensemble.is_empty() {
            return Err(BeamError::EmptyEnsemble);
        }
        let n = nominal.num_feeds();
        let hbar = &nominal.mean;
        let mut acc = CMat::zeros(n, n);
        for h in ensemble {
            if h.values.shape() != hbar.shape() {
                return Err(BeamError::DimensionMismatch("ensemble channel shape differs from nominal".into()));
            }
            let delta = &h.values - hbar;
            acc += hbar * delta.adjoint() + &delta * hbar.adjoint() + &delta * delta.adjoint();
        }
        acc /= C64::new(ensemble.len() as f64, 0.0);
        Ok(DzMode::Empirical { mean_dz: hermitian_part(&acc) })
    }
}

/// `ΔZ` actually fed to the perturbation formulas for a given `ε_H`.
pub fn delta_z_for(mode: &DzMode, n: usize, eps: f64) -> CMat {
    match mode {
        DzMode::PaperLiteral => CMat::identity(n, n) * C64::new(eps, 0.0),
        DzMode::Empirical { mean_dz } => {
            let norm = mean_dz.norm();
            if norm > 0.0 {
                mean_dz * C64::new(eps / norm, 0.0)
            } else {
                CMat::zeros(n, n)
            }
        }
    }
}

/// Robust design with first-order corrected eigenvectors `Û_s = Ū_s + ΔU_s`,
/// rows re-orthonormalized. Falls back to the robust design (flagged) when the
/// signal spectrum is too degenerate for the perturbation formulas.
pub fn design_perturbation_aware(nominal: &NominalChannel, mode: &DzMode) -> Result<BeamMatrix> {
    let surrogate = robust_surrogate(nominal)?;
    let k = require_signal_rank(nominal)?;
    let dz = delta_z_for(mode, nominal.num_feeds(), surrogate.epsilon_h);
    match eig_perturb_first_order(nominal, &dz) {
        Ok(p) => {
            let corrected = nominal.eig.vectors.columns(0, k) + &p.delta_u;
            let values = orthonormalize_rows(&corrected.adjoint())?;
            Ok(BeamMatrix::new(values, DesignKind::PerturbationAware))
        }
        Err(BeamError::EigenGap { .. }) => {
            let mut b = design_robust(nominal)?;
            b.kind = DesignKind::PerturbationAware;
            b.fallback_to_robust = true;
            Ok(b)
        }
        Err(e) => Err(e),
    }
}

/// `trace((I + β B Z Bᴴ)⁻¹)`.
pub fn return_surrogate_objective(b: &CMat, z: &CMat, beta: f64) -> Result<f64> {
    let k = b.nrows();
    let m = CMat::identity(k, k) + b * z * b.adjoint() * C64::new(beta, 0.0);
    Ok(trace_re(&inverse(&m)?))
}

/// `trace((B Z Bᴴ + (K / P_FL) I)⁻¹)`.
pub fn forward_surrogate_objective(b: &CMat, z: &CMat, p_fl: f64) -> Result<f64> {
    let k = b.nrows();
    let reg = k as f64 / p_fl;
    let m = b * z * b.adjoint() + CMat::identity(k, k) * C64::new(reg, 0.0);
    Ok(trace_re(&inverse(&m)?))
}

/// Largest principal angle (radians) between the row spaces of two
/// orthonormal-row matrices.
pub fn subspace_angle(a: &CMat, b: &CMat) -> f64 {
    // sine form stays accurate for tiny angles
    let outside = b - b * a.adjoint() * a;
    crate::linalg::spectral_norm(&outside).min(1.0).asin()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{estimate_nominal, AlphaMode, GEO_ALTITUDE_M};
    use crate::linalg::{random_complex, random_orthonormal_rows, row_projector, spectral_norm};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    /// Columns are scaled standard basis vectors.
    fn basis_channel(n: usize, scales: &[f64]) -> CMat {
        let mut h = CMat::zeros(n, scales.len());
        for (j, &s) in scales.iter().enumerate() {
            h[(j, j)] = c(s);
        }
        h
    }

    fn selector(k: usize, n: usize) -> CMat {
        CMat::from_fn(k, n, |i, j| if i == j { c(1.0) } else { c(0.0) })
    }

    /// `|B_ij|` equal to the selector pattern, ignoring row phases.
    fn equal_up_to_row_phase(b: &CMat, target: &CMat) -> bool {
        b.iter().zip(target.iter()).all(|(x, y)| (x.norm() - y.norm()).abs() < 1e-12)
            && (row_projector(b) - row_projector(target)).norm() < 1e-10
    }

    fn random_nominal(n: usize, k: usize, alpha: f64, rng: &mut ChaCha8Rng) -> NominalChannel {
        NominalChannel::new(random_complex(n, k, rng), alpha).unwrap()
    }

    #[test]
    fn reference_selects_coincident_feeds() {
        let feeds = vec![[0.0, 0.0], [0.01, 0.0], [0.0, 0.01], [0.01, 0.01]];
        let beams = vec![[0.0, 0.0], [0.01, 0.01]];
        let geom = BeamGeometry::new(feeds, beams, 0.001, 0.004, GEO_ALTITUDE_M).unwrap();
        let b = design_reference_weighted(&geom, 1e-6).unwrap();
        let mut expected = CMat::zeros(2, 4);
        expected[(0, 0)] = c(1.0);
        expected[(1, 3)] = c(1.0);
        assert!((b.values - expected).norm() < 1e-15);
    }

    #[test]
    fn reference_rows_orthonormal_and_span_preserved() {
        let feeds = vec![[0.0, 0.0], [0.01, 0.0], [0.0, 0.01], [0.01, 0.01]];
        let beams = vec![[0.002, 0.003], [0.008, 0.006]];
        let geom = BeamGeometry::new(feeds.clone(), beams.clone(), 0.002, 0.008, GEO_ALTITUDE_M).unwrap();
        let b = design_reference(&geom).unwrap();
        assert!(check_orthonormal(&b) < 1e-10);

        // projector of the raw weight rows: W^H (W W^H)^-1 W
        let w = CMat::from_fn(2, 4, |i, j| {
            let d = (beams[i][0] - feeds[j][0]).hypot(beams[i][1] - feeds[j][1]);
            c((-(2f64.ln()) * (d / 0.008).powi(2)).exp())
        });
        let proj_w = w.adjoint() * inverse(&(&w * w.adjoint())).unwrap() * &w;
        assert!((row_projector(&b.values) - proj_w).norm() < 1e-10);
    }

    #[test]
    fn reference_rejects_duplicate_beams() {
        let feeds = vec![[0.0, 0.0], [0.01, 0.0], [0.0, 0.01]];
        let beams = vec![[0.005, 0.005], [0.005, 0.005]];
        let geom = BeamGeometry::new(feeds, beams, 0.001, 0.004, GEO_ALTITUDE_M).unwrap();
        assert!(matches!(design_reference(&geom), Err(BeamError::DegenerateGeometry(_))));
    }

    #[test]
    fn adaptive_on_basis_channel() {
        let h = Channel { values: basis_channel(5, &[3.0, 2.0, 1.0]) };
        let b = design_adaptive(&h).unwrap();
        assert!(equal_up_to_row_phase(&b.values, &selector(3, 5)));
        assert!(check_orthonormal(&b) < 1e-12);
    }

    #[test]
    fn adaptive_rejects_rank_deficiency() {
        let h = Channel { values: basis_channel(5, &[3.0, 0.0, 1.0]) };
        assert!(matches!(design_adaptive(&h), Err(BeamError::RankDeficient { needed: 3, found: 2 })));
    }

    #[test]
    fn adaptive_beats_random_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let h = random_complex(8, 3, &mut rng);
        let z = &h * h.adjoint();
        let b = design_adaptive(&Channel { values: h }).unwrap();
        let best = return_surrogate_objective(&b.values, &z, 2.0).unwrap();
        for _ in 0..500 {
            let cand = random_orthonormal_rows(3, 8, &mut rng);
            assert!(best <= return_surrogate_objective(&cand, &z, 2.0).unwrap() + 1e-12);
        }
    }

    #[test]
    fn epsilon_examples() {
        let nom = NominalChannel::new(basis_channel(4, &[1.0, 1.0]), 0.1).unwrap();
        assert!((epsilon_h(&nom) - 0.2).abs() < 1e-14);
        assert_eq!(epsilon_h(&nom.with_alpha(0.0).unwrap()), 0.0);

        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for _ in 0..20 {
            let nom = random_nominal(7, 3, 0.3, &mut rng);
            // independent route: Golub-Kahan SVD of H̄ directly
            let delta = nom.mean.clone().svd(false, false).singular_values.max();
            assert!((epsilon_h(&nom) - 2.0 * 0.3 * delta).abs() < 1e-10 * delta);
        }
    }

    #[test]
    fn surrogate_with_zero_alpha_is_nominal_gram() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let nom = random_nominal(6, 3, 0.0, &mut rng);
        let s = robust_surrogate(&nom).unwrap();
        let gram = &nom.mean * nom.mean.adjoint();
        assert!((s.z_breve - &gram).norm() <= 1e-12 * gram.norm());
        assert!(!s.alpha_clamped);
        assert_eq!(s.epsilon_h, 0.0);
    }

    #[test]
    fn surrogate_clamps_infeasible_alpha() {
        // eigenvalues {4, 1, 0}; delta_max = 2; alpha = 0.5 gives eps = 2
        let nom = NominalChannel::new(basis_channel(3, &[2.0, 1.0]), 0.5).unwrap();
        assert!((epsilon_h(&nom) - 2.0).abs() < 1e-12);
        let s = robust_surrogate(&nom).unwrap();
        assert!(s.alpha_clamped);
        assert!(s.alpha_used < 0.25 && s.alpha_used > 0.25 * (1.0 - 1e-9));
        assert!(1.0 - s.epsilon_h > 0.0);
        assert!((s.epsilon_h - 2.0 * 2.0 * s.alpha_used).abs() < 1e-15);
        let eig = crate::linalg::hermitian_eig(&s.z_breve);
        assert!(eig.values.iter().all(|&v| v >= -1e-12));
    }

    #[test]
    fn surrogate_rejects_zero_nominal() {
        let nom = NominalChannel::new(CMat::zeros(4, 2), 0.1).unwrap();
        assert!(matches!(robust_surrogate(&nom), Err(BeamError::NoFeasibleAlpha)));
    }

    #[test]
    fn surrogate_bound_holds_for_sampled_perturbations() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let nom = random_nominal(6, 2, 0.2, &mut rng);
        let s = robust_surrogate(&nom).unwrap();
        let b_fixed = [design_robust(&nom).unwrap().values, random_orthonormal_rows(2, 6, &mut rng)];
        let bound_robust = return_surrogate_objective(&b_fixed[0], &s.z_breve, 1.5).unwrap();
        for _ in 0..1000 {
            let delta = crate::channel::sample_perturbation(6, 2, s.alpha_used, &mut rng).delta;
            let h = &nom.mean + delta;
            let z = &h * h.adjoint();
            let actual = return_surrogate_objective(&b_fixed[0], &z, 1.5).unwrap();
            assert!(actual <= bound_robust + 1e-12);
        }
        // Ž entries never exceed H̄H̄ᴴ eigenvalues
        let ez = crate::linalg::hermitian_eig(&s.z_breve);
        for (a, b) in ez.values.iter().zip(&nom.eig.values) {
            assert!(*a <= b + 1e-9);
        }
    }

    #[test]
    fn robust_on_basis_nominal_and_alpha_independent() {
        let nom = NominalChannel::new(basis_channel(5, &[3.0, 2.0, 1.0]), 0.1).unwrap();
        let b = design_robust(&nom).unwrap();
        assert!(equal_up_to_row_phase(&b.values, &selector(3, 5)));

        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let nom = random_nominal(8, 3, 0.1, &mut rng);
        let b1 = design_robust(&nom).unwrap();
        let b2 = design_robust(&nom.with_alpha(0.7).unwrap()).unwrap();
        assert!(subspace_angle(&b1.values, &b2.values) <= 1e-12);
        assert!((b1.values - b2.values).norm() < 1e-12);
    }

    #[test]
    fn robust_minimizes_surrogate_over_random_candidates() {
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        let nom = random_nominal(8, 3, 0.05, &mut rng);
        let s = robust_surrogate(&nom).unwrap();
        let b = design_robust(&nom).unwrap();
        let best = return_surrogate_objective(&b.values, &s.z_breve, 1.0).unwrap();
        for _ in 0..500 {
            let cand = random_orthonormal_rows(3, 8, &mut rng);
            assert!(best <= return_surrogate_objective(&cand, &s.z_breve, 1.0).unwrap() + 1e-12);
        }
    }

    #[test]
    fn perturbation_vanishes_for_scaled_identity_and_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(27);
        let nom = random_nominal(6, 3, 0.1, &mut rng);
        let p = eig_perturb_first_order(&nom, &(CMat::identity(6, 6) * c(0.7))).unwrap();
        assert!(p.delta_u.norm() <= 1e-12);
        let p0 = eig_perturb_first_order(&nom, &CMat::zeros(6, 6)).unwrap();
        assert_eq!(p0.delta_u.norm(), 0.0);
        for f in 0..3 {
            assert_eq!(p.d_weights[(f, f)], 0.0);
            for g in 0..3 {
                assert_eq!(p.d_weights[(g, f)], -p.d_weights[(f, g)]);
            }
        }
    }

    #[test]
    fn perturbation_rejects_degenerate_spectrum() {
        let nom = NominalChannel::new(basis_channel(4, &[1.0, 1.0]), 0.1).unwrap();
        let dz = CMat::identity(4, 4);
        assert!(matches!(eig_perturb_first_order(&nom, &dz), Err(BeamError::EigenGap { .. })));
        // design falls back to the robust matrix with a flag
        let mut rng = ChaCha8Rng::seed_from_u64(28);
        let ens = vec![Channel { values: &nom.mean + random_complex(4, 2, &mut rng) * c(0.01) }];
        let mode = DzMode::empirical(&nom, &ens).unwrap();
        let b = design_perturbation_aware(&nom, &mode).unwrap();
        assert!(b.fallback_to_robust);
    }

    /// Aligns each column of `exact` to `approx` by a unit phase.
    fn aligned_error(exact: &CMat, approx: &CMat) -> f64 {
        let mut err = 0.0;
        for j in 0..approx.ncols() {
            let ip: C64 = exact.column(j).iter().zip(approx.column(j).iter()).map(|(e, a)| e.conj() * a).sum();
            let phase = ip / ip.norm();
            let diff = exact.column(j) * phase - approx.column(j);
            err += diff.norm_squared();
        }
        err.sqrt()
    }

    #[test]
    fn first_order_error_is_quadratic() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let nom = random_nominal(6, 3, 0.0, &mut rng);
        let a = random_complex(6, 6, &mut rng);
        let dz = hermitian_part(&a);
        let p = eig_perturb_first_order(&nom, &dz).unwrap();
        let zbar = &nom.mean * nom.mean.adjoint();
        let us = nom.eig.vectors.columns(0, 3).clone_owned();
        let err = |t: f64| {
            let exact = crate::linalg::hermitian_eig(&(&zbar + &dz * c(t))).vectors.columns(0, 3).clone_owned();
            aligned_error(&exact, &(&us + &p.delta_u * c(t)))
        };
        let t = 1e-3 * nom.eig.values[2] / spectral_norm(&dz);
        let ratio = err(t) / err(t / 2.0);
        assert!((3.0..=5.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn paper_literal_mode_equals_robust() {
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let nom = random_nominal(8, 3, 0.05, &mut rng);
        let pa = design_perturbation_aware(&nom, &DzMode::PaperLiteral).unwrap();
        let robust = design_robust(&nom).unwrap();
        assert!((pa.values - robust.values).norm() < 1e-12);
        assert!(!pa.fallback_to_robust);
    }

    #[test]
    fn empirical_mode_with_zero_alpha_equals_robust() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let base = random_complex(8, 3, &mut rng);
        let ens: Vec<Channel> = (0..20)
            .map(|_| Channel { values: &base + random_complex(8, 3, &mut rng) * c(0.1) })
            .collect();
        let nom = estimate_nominal(&ens, AlphaMode::Max).unwrap().with_alpha(0.0).unwrap();
        let mode = DzMode::empirical(&nom, &ens).unwrap();
        let pa = design_perturbation_aware(&nom, &mode).unwrap();
        assert!((pa.values - design_robust(&nom).unwrap().values).norm() < 1e-12);
    }

    #[test]
    fn empirical_mode_angle_grows_with_spread() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let hbar = random_complex(8, 3, &mut rng);
        let dir = random_complex(8, 3, &mut rng);
        let dir = &dir / c(dir.norm());
        let mut last = -1.0;
        for mag in [0.05, 0.1, 0.2] {
            let d0 = &dir * c(mag);
            let ens = vec![Channel { values: &hbar + &d0 }, Channel { values: &hbar - &d0 }];
            let nom = estimate_nominal(&ens, AlphaMode::Max).unwrap();
            let mode = DzMode::empirical(&nom, &ens).unwrap();
            let pa = design_perturbation_aware(&nom, &mode).unwrap();
            assert!(check_orthonormal(&pa) < 1e-10);
            let angle = subspace_angle(&pa.values, &design_robust(&nom).unwrap().values);
            assert!(angle > last, "angle {angle} after {last}");
            last = angle;
        }
    }

    #[test]
    fn subspace_angle_of_rotated_line() {
        for t in [1e-11f64, 1e-6, 0.3, 1.2] {
            let a = CMat::from_row_slice(1, 2, &[c(1.0), c(0.0)]);
            let b = CMat::from_row_slice(1, 2, &[c(t.cos()), C64::new(0.0, t.sin())]);
            assert!((subspace_angle(&a, &b) - t).abs() <= 1e-15 * t.max(1.0), "{t}");
        }
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let a = random_orthonormal_rows(3, 7, &mut rng);
        let phases = CMat::from_diagonal(&DVector::from_vec(vec![C64::from_polar(1.0, 0.4), c(-1.0), C64::i()]));
        assert!(subspace_angle(&a, &(phases * &a)) < 1e-14);
    }

    #[test]
    fn orthonormality_check_examples() {
        let b = BeamMatrix::new(selector(3, 5), DesignKind::Reference);
        assert_eq!(check_orthonormal(&b), 0.0);
        let scaled = BeamMatrix::new(selector(3, 5) * c(2.0), DesignKind::Reference);
        assert!((check_orthonormal(&scaled) - 3.0).abs() < 1e-15);
    }

    #[test]
    fn all_designs_orthonormal_on_random_nominals() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let geom = BeamGeometry::hexagonal(16, 8, 0.0087, 0.005, 0.005, GEO_ALTITUDE_M).unwrap();
        let reference = design_reference(&geom).unwrap();
        assert!(check_orthonormal(&reference) <= 1e-10);
        for _ in 0..100 {
            let base = random_complex(16, 8, &mut rng);
            let ens: Vec<Channel> = (0..10)
                .map(|_| Channel { values: &base + random_complex(16, 8, &mut rng) * c(0.2) })
                .collect();
            let nom = estimate_nominal(&ens, AlphaMode::Max).unwrap();
            let mode = DzMode::empirical(&nom, &ens).unwrap();
            for b in [
                design_adaptive(&ens[0]).unwrap(),
                design_robust(&nom).unwrap(),
                design_perturbation_aware(&nom, &mode).unwrap(),
            ] {
                assert!(check_orthonormal(&b) <= 1e-10, "{:?}", b.kind);
            }
        }
    }
}
