//! Gateway-side linear processing: LMMSE detection on the return link and
//! regularized zero-forcing precoding on the forward link.
//!
//! All quantities are noise-normalized. The return link observes
//! `y = √β B H s + B n` and the forward link delivers `r = Hᵀ Bᵀ T c + w`,
//! both with unit-variance symbols and noise.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::channel::Channel;
use crate::design::BeamMatrix;
use crate::error::{BeamError, Result};
use crate::linalg::{inverse, trace_re, CMat, C64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Return,
    Forward,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Return => "return",
            Direction::Forward => "forward",
        }
    }
}

impl std::str::FromStr for Direction {
    type Err = BeamError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "return" => Ok(Direction::Return),
            "forward" => Ok(Direction::Forward),
            _ => Err(BeamError::InvalidParameter(format!("unknown direction '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReturnLinkParams {
    /// User EIRP, linear.
    pub beta: f64,
}

impl ReturnLinkParams {
    pub fn new(beta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(BeamError::InvalidParameter(format!("beta must be positive, got {beta}")));
        }
        Ok(Self { beta })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForwardLinkParams {
    /// Total transmit power, linear.
    pub p_fl: f64,
}

impl ForwardLinkParams {
    pub fn new(p_fl: f64) -> Result<Self> {
        if !(p_fl > 0.0 && p_fl.is_finite()) {
            return Err(BeamError::InvalidParameter(format!("P_FL must be positive, got {p_fl}")));
        }
        Ok(Self { p_fl })
    }
}

/// LMMSE filter `Wᴴ = (I + β Hᴴ Bᴴ B H)⁻¹ Hᴴ Bᴴ`.
///
/// The stored filter omits the `√β` that the observation carries; estimates
/// are formed as `ŝ = √β Wᴴ y`, which is the Wiener solution.
#[derive(Debug, Clone)]
pub struct Detector {
    pub w: CMat,
    pub beta: f64,
}

impl Detector {
    pub fn estimate(&self, y: &DVector<C64>) -> DVector<C64> {
        &self.w * y * C64::new(self.beta.sqrt(), 0.0)
    }
}

/// Power-normalized RZF precoder; `trace(T Tᴴ) = P_FL`.
#[derive(Debug, Clone)]
pub struct Precoder {
    pub t: CMat,
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkResult {
    pub sinr: Vec<f64>,
    pub mse_diag: Vec<f64>,
    pub smse: f64,
    pub direction: Direction,
}

fn effective(b: &BeamMatrix, h: &Channel) -> Result<CMat> {
    if b.num_feeds() != h.num_feeds() || b.num_beams() != h.num_users() {
        return Err(BeamError::DimensionMismatch(format!(
            "B is {}x{}, H is {}x{}",
            b.num_beams(),
            b.num_feeds(),
            h.num_feeds(),
            h.num_users()
        )));
    }
    Ok(&b.values * &h.values)
}

fn gram_plus(a: &CMat, scale: f64, ridge: f64) -> CMat {
    let k = a.ncols();
    CMat::identity(k, k) * C64::new(ridge, 0.0) + a.adjoint() * a * C64::new(scale, 0.0)
}

fn return_from_mse(mse: &CMat) -> LinkResult {
    let mse_diag: Vec<f64> = mse.diagonal().iter().map(|z| z.re).collect();
    let sinr = mse_diag.iter().map(|&m| (1.0 / m - 1.0).max(0.0)).collect();
    LinkResult { sinr, smse: mse_diag.iter().sum(), mse_diag, direction: Direction::Return }
}

pub fn lmmse_detector(b: &BeamMatrix, h: &Channel, rl: ReturnLinkParams) -> Result<Detector> {
    let a = effective(b, h)?;
    let w = inverse(&gram_plus(&a, rl.beta, 1.0))? * a.adjoint();
    Ok(Detector { w, beta: rl.beta })
}

/// `MSE = (I + β Hᴴ Bᴴ B H)⁻¹`, `SINR_i = 1 / MSE_ii - 1`.
pub fn return_mse(b: &BeamMatrix, h: &Channel, rl: ReturnLinkParams) -> Result<LinkResult> {
    let a = effective(b, h)?;
    Ok(return_from_mse(&inverse(&gram_plus(&a, rl.beta, 1.0))?))
}

/// LMMSE on the full `N`-dimensional feed observation.
pub fn onground_return(h: &Channel, rl: ReturnLinkParams) -> Result<LinkResult> {
    Ok(return_from_mse(&inverse(&gram_plus(&h.values, rl.beta, 1.0))?))
}

/// `T = √ρ A* (c I + Aᵀ A*)⁻¹` for an effective channel `A` (`M x K`),
/// with `c = K / P_FL` and `ρ` set so the power constraint holds with equality.
fn rzf_for(a: &CMat, fl: ForwardLinkParams) -> Result<Precoder> {
    let k = a.ncols();
    if a.iter().all(|z| *z == C64::new(0.0, 0.0)) {
        return Err(BeamError::ZeroChannel);
    }
    let reg = k as f64 / fl.p_fl;
    let conj_a = a.map(|z| z.conj());
    let m = a.transpose() * &conj_a + CMat::identity(k, k) * C64::new(reg, 0.0);
    let t0 = conj_a * inverse(&m)?;
    let power = t0.norm_squared();
    if !(power > 0.0 && power.is_finite()) {
        return Err(BeamError::ZeroChannel);
    }
    let rho = fl.p_fl / power;
    Ok(Precoder { t: t0 * C64::new(rho.sqrt(), 0.0), rho })
}

pub fn rzf_precoder(b: &BeamMatrix, h: &Channel, fl: ForwardLinkParams) -> Result<Precoder> {
    rzf_for(&effective(b, h)?, fl)
}

/// `SINR_i = |F_ii|² / (Σ_{j≠i} |F_ij|² + 1)` for the end-to-end gain `F`.
pub fn sinr_from_gain(f: &CMat) -> Vec<f64> {
    (0..f.nrows())
        .map(|i| {
            let signal = f[(i, i)].norm_sqr();
            let interference: f64 = (0..f.ncols()).filter(|&j| j != i).map(|j| f[(i, j)].norm_sqr()).sum();
            signal / (interference + 1.0)
        })
        .collect()
}

/// SINR at the user terminals with `F = Hᵀ Bᵀ T`.
pub fn sinr_forward(b: &BeamMatrix, h: &Channel, p: &Precoder) -> Result<Vec<f64>> {
    let a = effective(b, h)?;
    if p.t.shape() != (a.nrows(), a.ncols()) {
        return Err(BeamError::DimensionMismatch("precoder does not match effective channel".into()));
    }
    Ok(sinr_from_gain(&(a.transpose() * &p.t)))
}

/// Forward-link MSE matrix evaluated with every `B` product spelled out:
/// `c (Hᵀ Bᵀ B* Bᵀ B* H* + c I)(Hᵀ Bᵀ B* H* + c I)⁻²`.
pub fn forward_mse_matrix(b: &BeamMatrix, h: &Channel, fl: ForwardLinkParams) -> Result<CMat> {
    effective(b, h)?;
    let k = h.num_users();
    let reg = k as f64 / fl.p_fl;
    let ht = h.values.transpose();
    let hc = h.values.map(|z| z.conj());
    let bt = b.values.transpose();
    let bc = b.values.map(|z| z.conj());
    let ident = CMat::identity(k, k) * C64::new(reg, 0.0);
    let outer = &ht * &bt * &bc * &bt * &bc * &hc + &ident;
    let inner_inv = inverse(&(&ht * &bt * &bc * &hc + &ident))?;
    Ok(outer * &inner_inv * &inner_inv * C64::new(reg, 0.0))
}

/// `(K / P_FL) trace((Hᴴ Bᴴ B H + (K / P_FL) I)⁻¹)`.
pub fn forward_smse_closed(b: &BeamMatrix, h: &Channel, fl: ForwardLinkParams) -> Result<f64> {
    let a = effective(b, h)?;
    let reg = h.num_users() as f64 / fl.p_fl;
    Ok(reg * trace_re(&inverse(&gram_plus(&a, 1.0, reg))?))
}

pub fn forward_mse(b: &BeamMatrix, h: &Channel, fl: ForwardLinkParams) -> Result<LinkResult> {
    let mse = forward_mse_matrix(b, h, fl)?;
    let mse_diag: Vec<f64> = mse.diagonal().iter().map(|z| z.re).collect();
    let sinr = sinr_forward(b, h, &rzf_precoder(b, h, fl)?)?;
    Ok(LinkResult { sinr, smse: mse_diag.iter().sum(), mse_diag, direction: Direction::Forward })
}

/// RZF on the raw channel; the precoder is `N x K`.
pub fn onground_precoder(h: &Channel, fl: ForwardLinkParams) -> Result<Precoder> {
    rzf_for(&h.values, fl)
}

pub fn onground_forward(h: &Channel, fl: ForwardLinkParams) -> Result<LinkResult> {
    let p = onground_precoder(h, fl)?;
    let reg = h.num_users() as f64 / fl.p_fl;
    let mse = inverse(&gram_plus(&h.values, 1.0, reg))? * C64::new(reg, 0.0);
    let mse_diag: Vec<f64> = mse.diagonal().iter().map(|z| z.re).collect();
    let sinr = sinr_from_gain(&(h.values.transpose() * &p.t));
    Ok(LinkResult { sinr, smse: mse_diag.iter().sum(), mse_diag, direction: Direction::Forward })
}
