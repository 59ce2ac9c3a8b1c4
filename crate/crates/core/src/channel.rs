//! Synthetic multibeam user-link channel `H = G D`.
//!
//! Feeds and beams live on hexagonal lattices in a two-dimensional angular
//! plane (radians off the satellite boresight). Feed radiation is a Gaussian
//! beam with a configurable 3 dB half-width, path loss follows the free-space
//! expression normalized to receiver noise, and rain fading is an independent
//! per-beam lognormal attenuation with Bernoulli rain occurrence.

use std::f64::consts::{LN_2, PI};

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use crate::error::{BeamError, Result};
use crate::linalg::{complex_normal, hermitian_eig, CMat, HermitianEig, C64};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
pub const BOLTZMANN: f64 = 1.380_649e-23;
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;
pub const GEO_ALTITUDE_M: f64 = 35_786_000.0;

/// Angular coordinate `[u, v]` in radians.
pub type Angle2 = [f64; 2];

fn angular_distance(a: Angle2, b: Angle2) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RfParams {
    /// Hz
    pub carrier_freq: f64,
    /// Hz
    pub bandwidth: f64,
    /// Linear amplitude gain of the user terminal antenna.
    pub rx_antenna_gain: f64,
    /// Kelvin
    pub rx_noise_temp: f64,
    /// J/K
    pub boltzmann: f64,
    /// Forward/return scaling factor; fixed at 1.
    pub fl_scale: f64,
    /// Apply the path-length phase `exp(-j 2 pi d_k / lambda)` to each column.
    pub path_phase: bool,
}

impl Default for RfParams {
    fn default() -> Self {
        Self {
            carrier_freq: 30e9,
            bandwidth: 500e6,
            rx_antenna_gain: 10f64.powf(40.0 / 20.0),
            rx_noise_temp: 290.0,
            boltzmann: BOLTZMANN,
            fl_scale: 1.0,
            path_phase: false,
        }
    }
}

impl RfParams {
    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_freq
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("carrier_freq", self.carrier_freq),
            ("bandwidth", self.bandwidth),
            ("rx_antenna_gain", self.rx_antenna_gain),
            ("rx_noise_temp", self.rx_noise_temp),
            ("boltzmann", self.boltzmann),
            ("fl_scale", self.fl_scale),
        ];
        for (name, v) in fields {
            if !(v > 0.0 && v.is_finite()) {
                return Err(BeamError::InvalidParameter(format!("rf.{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// `sqrt(K_B T_R B_W)`, the noise amplitude the gains are normalized to.
    pub fn noise_amplitude(&self) -> f64 {
        (self.boltzmann * self.rx_noise_temp * self.bandwidth).sqrt()
    }
}

/// Gaussian feed pattern amplitude at angular offset `angle` from boresight.
///
/// `half_width` is the 3 dB half-width: `feed_gain(half_width, half_width) == 0.5`.
pub fn feed_gain(angle: f64, half_width: f64) -> f64 {
    let x = angle / half_width;
    (-LN_2 * x * x).exp()
}

/// Slant range from a satellite at `altitude` to a ground point seen at
/// off-nadir angle `off_nadir` (spherical Earth).
pub fn slant_range(off_nadir: f64, altitude: f64) -> f64 {
    let rs = EARTH_RADIUS_M + altitude;
    let s = off_nadir.sin();
    let disc = EARTH_RADIUS_M * EARTH_RADIUS_M - rs * rs * s * s;
    if disc < 0.0 {
        return f64::NAN;
    }
    rs * off_nadir.cos() - disc.sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamGeometry {
    pub feed_positions: Vec<Angle2>,
    pub beam_centers: Vec<Angle2>,
    /// rad
    pub beam_radius: f64,
    /// 3 dB half-width of each feed pattern, rad.
    pub feed_pattern_width: f64,
    /// Orbital altitude used for slant ranges, m.
    pub altitude: f64,
}

impl BeamGeometry {
    pub fn new(
        feed_positions: Vec<Angle2>,
        beam_centers: Vec<Angle2>,
        beam_radius: f64,
        feed_pattern_width: f64,
        altitude: f64,
    ) -> Result<Self> {
        let g = Self {
            feed_positions,
            beam_centers,
            beam_radius,
            feed_pattern_width,
            altitude,
        };
        g.validate()?;
        Ok(g)
    }

    /// Beams on a hexagonal lattice of pitch `beam_spacing` around boresight,
    /// feeds on a finer hexagonal lattice (pitch scaled by `sqrt(K/N)`) centred
    /// on the beam footprint.
    pub fn hexagonal(
        num_feeds: usize,
        num_beams: usize,
        beam_spacing: f64,
        beam_radius: f64,
        feed_pattern_width: f64,
        altitude: f64,
    ) -> Result<Self> {
        if num_beams == 0 || num_beams >= num_feeds {
            return Err(BeamError::InvalidParameter(format!(
                "need 0 < K < N, got N={num_feeds}, K={num_beams}"
            )));
        }
        if !(beam_spacing > 0.0) {
            return Err(BeamError::InvalidParameter("beam_spacing must be positive".into()));
        }
        let beams = hex_lattice([0.0, 0.0], beam_spacing, num_beams);
        let centroid = centroid(&beams);
        let feed_spacing = beam_spacing * (num_beams as f64 / num_feeds as f64).sqrt();
        let feeds = hex_lattice(centroid, feed_spacing, num_feeds);
        Self::new(feeds, beams, beam_radius, feed_pattern_width, altitude)
    }

    pub fn num_feeds(&self) -> usize {
        self.feed_positions.len()
    }

    pub fn num_beams(&self) -> usize {
        self.beam_centers.len()
    }

    pub fn validate(&self) -> Result<()> {
        let (n, k) = (self.num_feeds(), self.num_beams());
        if k == 0 || k >= n {
            return Err(BeamError::InvalidParameter(format!("need 0 < K < N, got N={n}, K={k}")));
        }
        if !(self.beam_radius >= 0.0 && self.beam_radius.is_finite()) {
            return Err(BeamError::InvalidParameter("beam_radius must be nonnegative".into()));
        }
        if !(self.feed_pattern_width > 0.0) {
            return Err(BeamError::InvalidParameter("feed_pattern_width must be positive".into()));
        }
        if !(self.altitude > 0.0) {
            return Err(BeamError::InvalidParameter("altitude must be positive".into()));
        }
        for c in &self.beam_centers {
            let worst = c[0].hypot(c[1]) + self.beam_radius;
            if slant_range(worst, self.altitude).is_nan() {
                return Err(BeamError::InvalidParameter(
                    "beam footprint extends beyond the Earth limb".into(),
                ));
            }
        }
        Ok(())
    }
}

fn centroid(points: &[Angle2]) -> Angle2 {
    let n = points.len() as f64;
    let (u, v) = points.iter().fold((0.0, 0.0), |(u, v), p| (u + p[0], v + p[1]));
    [u / n, v / n]
}

/// The `count` lattice points nearest to `origin` on a hexagonal lattice of
/// pitch `spacing`; ordered by distance, then by polar angle.
fn hex_lattice(origin: Angle2, spacing: f64, count: usize) -> Vec<Angle2> {
    let reach = (count as f64).sqrt().ceil() as i64 + 2;
    let mut pts = Vec::new();
    for i in -reach..=reach {
        for j in -reach..=reach {
            let u = spacing * (i as f64 + 0.5 * j as f64);
            let v = spacing * (3f64.sqrt() / 2.0) * j as f64;
            pts.push([u, v]);
        }
    }
    let key = |p: &Angle2| {
        let r = (p[0].hypot(p[1]) / spacing * 1e9).round() as i64;
        (r, p[1].atan2(p[0]))
    };
    pts.sort_by(|a, b| {
        let (ra, ta) = key(a);
        let (rb, tb) = key(b);
        ra.cmp(&rb).then(ta.total_cmp(&tb))
    });
    pts.truncate(count);
    pts.into_iter().map(|p| [p[0] + origin[0], p[1] + origin[1]]).collect()
}

/// One user per beam.
#[derive(Debug, Clone, PartialEq)]
pub struct UserDrop {
    pub positions: Vec<Angle2>,
    /// Slant ranges, m.
    pub distances: Vec<f64>,
}

/// Draws one user uniformly over each beam disc.
pub fn sample_user_drop<R: Rng + ?Sized>(geometry: &BeamGeometry, rng: &mut R) -> UserDrop {
    let mut positions = Vec::with_capacity(geometry.num_beams());
    let mut distances = Vec::with_capacity(geometry.num_beams());
    for c in &geometry.beam_centers {
        let r = geometry.beam_radius * rng.random::<f64>().sqrt();
        let phi = 2.0 * PI * rng.random::<f64>();
        let p = [c[0] + r * phi.cos(), c[1] + r * phi.sin()];
        distances.push(slant_range(p[0].hypot(p[1]), geometry.altitude));
        positions.push(p);
    }
    UserDrop { positions, distances }
}

/// Feed-to-user gains, stored `N x K` (row = feed, column = user).
#[derive(Debug, Clone, PartialEq)]
pub struct GainMatrix {
    pub values: CMat,
    pub normalized: bool,
}

/// Free-space gain of one feed/user pair relative to receiver noise.
pub fn gain_entry(pattern: f64, distance: f64, rf: &RfParams) -> f64 {
    rf.rx_antenna_gain * pattern / (4.0 * PI * (distance / rf.wavelength()) * rf.noise_amplitude())
}

pub fn build_gain_matrix(geometry: &BeamGeometry, drop: &UserDrop, rf: &RfParams) -> Result<GainMatrix> {
    let (n, k) = (geometry.num_feeds(), geometry.num_beams());
    if drop.positions.len() != k || drop.distances.len() != k {
        return Err(BeamError::DimensionMismatch(format!(
            "drop has {} positions / {} distances for {k} beams",
            drop.positions.len(),
            drop.distances.len()
        )));
    }
    if let Some((user, &distance)) = drop
        .distances
        .iter()
        .enumerate()
        .find(|(_, &d)| !(d > 0.0))
    {
        return Err(BeamError::NonPositiveDistance { user, distance });
    }
    let lambda = rf.wavelength();
    let mut values = CMat::zeros(n, k);
    for (col, (pos, &d)) in drop.positions.iter().zip(&drop.distances).enumerate() {
        let phase = if rf.path_phase {
            let cycles = d / lambda;
            C64::from_polar(1.0, -2.0 * PI * (cycles - cycles.floor()))
        } else {
            C64::new(1.0, 0.0)
        };
        for (row, feed) in geometry.feed_positions.iter().enumerate() {
            let a = feed_gain(angular_distance(*pos, *feed), geometry.feed_pattern_width);
            values[(row, col)] = phase * gain_entry(a, d, rf);
        }
    }
    Ok(GainMatrix { values, normalized: false })
}

/// Per-entry spread of the gain matrix over a generating ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct GainStats {
    /// Population standard deviation `sqrt(E|g - E g|^2)` of every entry.
    pub std_devs: DMatrix<f64>,
}

impl GainStats {
    pub fn from_ensemble(ensemble: &[GainMatrix]) -> Result<Self> {
        let first = ensemble.first().ok_or(BeamError::EmptyEnsemble)?;
        let (n, k) = first.values.shape();
        if ensemble.iter().any(|g| g.values.shape() != (n, k)) {
            return Err(BeamError::DimensionMismatch("ensemble shapes differ".into()));
        }
        let count = ensemble.len() as f64;
        let mut std_devs = DMatrix::zeros(n, k);
        for idx in 0..n * k {
            // scaled by the largest magnitude so far-sidelobe gains do not underflow when squared
            let scale = ensemble.iter().map(|g| g.values[idx].norm()).fold(0.0, f64::max);
            if !(scale > 0.0) {
                continue;
            }
            let mean: C64 = ensemble.iter().map(|g| g.values[idx] / scale).sum::<C64>() / count;
            let var = ensemble.iter().map(|g| (g.values[idx] / scale - mean).norm_sqr()).sum::<f64>() / count;
            std_devs[idx] = scale * var.sqrt();
        }
        Ok(Self { std_devs })
    }
}

/// Divides every entry by its ensemble standard deviation. A matrix already
/// flagged as normalized is returned unchanged.
pub fn normalize_gain(g: &GainMatrix, stats: &GainStats) -> Result<GainMatrix> {
    if g.values.shape() != stats.std_devs.shape() {
        return Err(BeamError::DimensionMismatch(format!(
            "gain {:?} vs stats {:?}",
            g.values.shape(),
            stats.std_devs.shape()
        )));
    }
    if g.normalized {
        return Ok(g.clone());
    }
    let mut values = g.values.clone();
    for col in 0..values.ncols() {
        for row in 0..values.nrows() {
            let sd = stats.std_devs[(row, col)];
            if !(sd > 0.0) {
                return Err(BeamError::ZeroVariance { row, col });
            }
            values[(row, col)] /= sd;
        }
    }
    Ok(GainMatrix { values, normalized: true })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RainParams {
    /// Mean rain attenuation in dB (when raining).
    pub mean_db: f64,
    /// Standard deviation of the rain attenuation in dB.
    pub std_db: f64,
    /// Probability that a given beam is under rain.
    pub rain_prob: f64,
}

impl Default for RainParams {
    fn default() -> Self {
        Self { mean_db: 2.0, std_db: 1.0, rain_prob: 0.2 }
    }
}

impl RainParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rain_prob) {
            return Err(BeamError::InvalidProbability(self.rain_prob));
        }
        if !(self.std_db >= 0.0) {
            return Err(BeamError::InvalidParameter("fading.std_db must be nonnegative".into()));
        }
        if self.rain_prob > 0.0 && !(self.mean_db > 0.0) {
            return Err(BeamError::InvalidParameter("fading.mean_db must be positive".into()));
        }
        Ok(())
    }

    /// Parameters `(mu, sigma)` of `ln A` for a lognormal with the configured
    /// mean and standard deviation of `A` (dB).
    pub fn log_params(&self) -> (f64, f64) {
        let var_ratio = (self.std_db / self.mean_db).powi(2);
        let sigma2 = var_ratio.ln_1p();
        (self.mean_db.ln() - 0.5 * sigma2, sigma2.sqrt())
    }
}

/// Diagonal of `D`, amplitude domain.
#[derive(Debug, Clone, PartialEq)]
pub struct FadingDiag {
    pub values: Vec<f64>,
}

impl FadingDiag {
    pub fn clear_sky(k: usize) -> Self {
        Self { values: vec![1.0; k] }
    }
}

pub fn sample_fading<R: Rng + ?Sized>(k: usize, rain: &RainParams, rng: &mut R) -> Result<FadingDiag> {
    rain.validate()?;
    let (mu, sigma) = if rain.rain_prob > 0.0 { rain.log_params() } else { (0.0, 0.0) };
    let lognormal = LogNormal::new(mu, sigma).map_err(|e| BeamError::InvalidParameter(e.to_string()))?;
    let values = (0..k)
        .map(|_| {
            // draw both variates so the stream layout is independent of the outcome
            let raining = rng.random::<f64>() < rain.rain_prob;
            let atten_db = lognormal.sample(rng);
            if raining {
                10f64.powf(-atten_db / 20.0)
            } else {
                1.0
            }
        })
        .collect();
    Ok(FadingDiag { values })
}

/// User-link channel, `N x K`.
#[derive(Debug, Clone, PartialEq)]
pub struct Channel {
    pub values: CMat,
}

impl Channel {
    pub fn num_feeds(&self) -> usize {
        self.values.nrows()
    }

    pub fn num_users(&self) -> usize {
        self.values.ncols()
    }
}

/// `H = G D` computed as column scaling.
pub fn assemble_channel(g: &GainMatrix, d: &FadingDiag) -> Result<Channel> {
    if !g.normalized {
        return Err(BeamError::InvalidParameter("gain matrix must be normalized before assembly".into()));
    }
    if g.values.ncols() != d.values.len() {
        return Err(BeamError::DimensionMismatch(format!(
            "G has {} columns, D has {} entries",
            g.values.ncols(),
            d.values.len()
        )));
    }
    let mut values = g.values.clone();
    for (mut col, &scale) in values.column_iter_mut().zip(&d.values) {
        col *= C64::new(scale, 0.0);
    }
    Ok(Channel { values })
}

/// How the uncertainty radius is derived from the calibration ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum AlphaMode {
    Max,
    Quantile { q: f64 },
}

/// Nominal channel, uncertainty radius and the eigendecomposition of `H̄ H̄ᴴ`.
#[derive(Debug, Clone)]
pub struct NominalChannel {
    pub mean: CMat,
    pub alpha: f64,
    /// Eigenvectors (columns) and nonnegative eigenvalues, descending.
    pub eig: HermitianEig,
    pub rank: usize,
}

impl NominalChannel {
    pub fn new(mean: CMat, alpha: f64) -> Result<Self> {
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(BeamError::InvalidParameter(format!("alpha must be nonnegative, got {alpha}")));
        }
        let gram = &mean * mean.adjoint();
        let mut eig = hermitian_eig(&gram);
        for v in &mut eig.values {
            *v = v.max(0.0);
        }
        let top = eig.values.first().copied().unwrap_or(0.0);
        let rank = eig
            .values
            .iter()
            .take(mean.ncols())
            .filter(|&&v| top > 0.0 && v > 1e-10 * top)
            .count();
        Ok(Self { mean, alpha, eig, rank })
    }

    /// Same nominal with a different uncertainty radius.
    pub fn with_alpha(&self, alpha: f64) -> Result<Self> {
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(BeamError::InvalidParameter(format!("alpha must be nonnegative, got {alpha}")));
        }
        Ok(Self { alpha, ..self.clone() })
    }

    pub fn num_feeds(&self) -> usize {
        self.mean.nrows()
    }

    pub fn num_users(&self) -> usize {
        self.mean.ncols()
    }
}

pub fn estimate_nominal(ensemble: &[Channel], mode: AlphaMode) -> Result<NominalChannel> {
    let first = ensemble.first().ok_or(BeamError::EmptyEnsemble)?;
    let shape = first.values.shape();
    let mut mean = CMat::zeros(shape.0, shape.1);
    for h in ensemble {
        if h.values.shape() != shape {
            return Err(BeamError::DimensionMismatch("ensemble shapes differ".into()));
        }
        mean += &h.values;
    }
    mean /= C64::new(ensemble.len() as f64, 0.0);
    let mut devs: Vec<f64> = ensemble.iter().map(|h| (&h.values - &mean).norm()).collect();
    devs.sort_by(f64::total_cmp);
    let alpha = match mode {
        AlphaMode::Max => *devs.last().unwrap_or(&0.0),
        AlphaMode::Quantile { q } => {
            if !(0.0..=1.0).contains(&q) {
                return Err(BeamError::InvalidProbability(q));
            }
            quantile_sorted(&devs, q)
        }
    };
    NominalChannel::new(mean, alpha)
}

/// Linear-interpolation quantile of an ascending slice.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Channel deviation from the nominal.
#[derive(Debug, Clone)]
pub struct PerturbationSample {
    pub delta: CMat,
    pub norm: f64,
}

impl PerturbationSample {
    pub fn new(delta: CMat) -> Self {
        let norm = delta.norm();
        Self { delta, norm }
    }
}

/// Uniform draw from the unit Frobenius ball of complex `n x k` matrices.
pub fn sample_unit_ball<R: Rng + ?Sized>(n: usize, k: usize, rng: &mut R) -> CMat {
    let dir = CMat::from_fn(n, k, |_, _| complex_normal(rng));
    let dim = (2 * n * k) as f64;
    let radius = rng.random::<f64>().powf(1.0 / dim);
    let norm = dir.norm();
    dir * C64::new(radius / norm, 0.0)
}

/// Uniform draw from the uncertainty ball of radius `alpha`.
pub fn sample_perturbation<R: Rng + ?Sized>(n: usize, k: usize, alpha: f64, rng: &mut R) -> PerturbationSample {
    let mut delta = sample_unit_ball(n, k, rng) * C64::new(alpha, 0.0);
    // guard against the last-ulp overshoot of the scaled norm
    let norm = delta.norm();
    if norm > alpha {
        delta *= C64::new(alpha / norm, 0.0);
    }
    PerturbationSample::new(delta)
}

/// Geometry, RF constants, fading and gain-normalization statistics needed to
/// draw channel realizations.
#[derive(Debug, Clone)]
pub struct ChannelModel {
    pub geometry: BeamGeometry,
    pub rf: RfParams,
    pub rain: RainParams,
    pub stats: GainStats,
}

impl ChannelModel {
    /// Estimates normalization statistics from `n_drops` user drops.
    pub fn new<R: Rng + ?Sized>(
        geometry: BeamGeometry,
        rf: RfParams,
        rain: RainParams,
        n_drops: usize,
        rng: &mut R,
    ) -> Result<Self> {
        geometry.validate()?;
        rf.validate()?;
        rain.validate()?;
        let ensemble = (0..n_drops)
            .map(|_| build_gain_matrix(&geometry, &sample_user_drop(&geometry, rng), &rf))
            .collect::<Result<Vec<_>>>()?;
        let stats = GainStats::from_ensemble(&ensemble)?;
        Ok(Self { geometry, rf, rain, stats })
    }

    /// One channel realization: fresh user drop and fading.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Channel> {
        let drop = sample_user_drop(&self.geometry, rng);
        let g = normalize_gain(&build_gain_matrix(&self.geometry, &drop, &self.rf)?, &self.stats)?;
        let d = sample_fading(self.geometry.num_beams(), &self.rain, rng)?;
        assemble_channel(&g, &d)
    }
}
