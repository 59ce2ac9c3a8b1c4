//! Scenario files: TOML with `[geometry]`, `[rf]`, `[fading]`, `[nominal]`,
//! `[design]`, `[sim]`, `[sweep]` and `[metrics]` sections. Every field has a
//! desk-scale default and unknown keys are rejected.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::channel::{AlphaMode, BeamGeometry, RainParams, RfParams, GEO_ALTITUDE_M};
use crate::design::DesignKind;
use crate::error::{BeamError, Result};
use crate::link::Direction;
use crate::metrics::{DispersionConvention, ModcodTable};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeometryConfig {
    pub num_feeds: usize,
    pub num_beams: usize,
    /// Beam lattice pitch, rad.
    pub beam_spacing: f64,
    /// rad
    pub beam_radius: f64,
    /// Feed 3 dB half-width, rad.
    pub feed_pattern_width: f64,
    /// m
    pub altitude: f64,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        let spacing = 0.0087;
        Self {
            num_feeds: 16,
            num_beams: 8,
            beam_spacing: spacing,
            beam_radius: spacing / 3f64.sqrt(),
            // half the feed pitch
            feed_pattern_width: 0.5 * spacing * (8.0f64 / 16.0).sqrt(),
            altitude: GEO_ALTITUDE_M,
        }
    }
}

impl GeometryConfig {
    pub fn build(&self) -> Result<BeamGeometry> {
        BeamGeometry::hexagonal(
            self.num_feeds,
            self.num_beams,
            self.beam_spacing,
            self.beam_radius,
            self.feed_pattern_width,
            self.altitude,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaModeName {
    Max,
    Quantile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NominalConfig {
    /// Channels drawn to estimate `H̄` and `α`.
    pub n_calibration: usize,
    /// Drops used for the per-entry gain normalization statistics.
    pub n_normalization: usize,
    pub alpha_mode: AlphaModeName,
    /// Used when `alpha_mode = "quantile"`.
    pub alpha_quantile: f64,
}

impl Default for NominalConfig {
    fn default() -> Self {
        Self { n_calibration: 500, n_normalization: 1000, alpha_mode: AlphaModeName::Max, alpha_quantile: 0.95 }
    }
}

impl NominalConfig {
    pub fn alpha_mode(&self) -> AlphaMode {
        match self.alpha_mode {
            AlphaModeName::Max => AlphaMode::Max,
            AlphaModeName::Quantile => AlphaMode::Quantile { q: self.alpha_quantile },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DzModeName {
    Empirical,
    PaperLiteral,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DesignConfig {
    pub dz_mode: DzModeName,
    /// Reference-design weighting width as a multiple of the feed width.
    pub reference_width_factor: f64,
}

impl Default for DesignConfig {
    fn default() -> Self {
        Self { dz_mode: DzModeName::Empirical, reference_width_factor: 1.0 }
    }
}

/// A beam design or the on-ground baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Reference,
    Adaptive,
    Robust,
    PerturbationAware,
    Onground,
}

impl Target {
    pub const ALL: [Target; 5] =
        [Target::Reference, Target::Adaptive, Target::Robust, Target::PerturbationAware, Target::Onground];

    pub fn as_str(self) -> &'static str {
        match self {
            Target::Onground => "onground",
            other => other.design_kind().expect("beam design").as_str(),
        }
    }

    pub fn design_kind(self) -> Option<DesignKind> {
        match self {
            Target::Reference => Some(DesignKind::Reference),
            Target::Adaptive => Some(DesignKind::Adaptive),
            Target::Robust => Some(DesignKind::Robust),
            Target::PerturbationAware => Some(DesignKind::PerturbationAware),
            Target::Onground => None,
        }
    }
}

impl std::str::FromStr for Target {
    type Err = BeamError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| BeamError::InvalidParameter(format!("unknown design '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    /// Evaluation drops per sweep point.
    pub n_eval: usize,
    pub designs: Vec<Target>,
    pub directions: Vec<Direction>,
    /// Return-link EIRP sweep, linear.
    pub beta_values: Vec<f64>,
    /// Forward-link total power sweep, linear.
    pub p_fl_values: Vec<f64>,
}

impl Default for SimConfig {
    fn default() -> Self {
        let k = GeometryConfig::default().num_beams as f64;
        Self {
            n_eval: 200,
            designs: Target::ALL.to_vec(),
            directions: vec![Direction::Return, Direction::Forward],
            beta_values: vec![0.5, 1.0, 2.0, 4.0, 8.0],
            p_fl_values: vec![k / 4.0, k / 2.0, k, 2.0 * k, 4.0 * k],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    /// Uncertainty radii as fractions of the calibrated `α`.
    pub alpha_fractions: Vec<f64>,
    /// Return-link EIRP held fixed during the `α` sweep.
    pub beta: f64,
    /// Forward-link power held fixed during the `α` sweep.
    pub p_fl: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            alpha_fractions: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            beta: 2.0,
            p_fl: GeometryConfig::default().num_beams as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    pub dispersion: DispersionConvention,
    /// Modcod table file, or `builtin`.
    pub return_table: String,
    pub forward_table: String,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            dispersion: DispersionConvention::VarianceOverMean,
            return_table: "builtin".into(),
            forward_table: "builtin".into(),
        }
    }
}

impl MetricsConfig {
    pub fn table(&self, direction: Direction) -> Result<ModcodTable> {
        let source = match direction {
            Direction::Return => &self.return_table,
            Direction::Forward => &self.forward_table,
        };
        if source == "builtin" {
            Ok(ModcodTable::builtin(direction))
        } else {
            ModcodTable::load(direction, Path::new(source))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Scenario {
    pub seed: u64,
    pub geometry: GeometryConfig,
    pub rf: RfParams,
    pub fading: RainParams,
    pub nominal: NominalConfig,
    pub design: DesignConfig,
    pub sim: SimConfig,
    pub sweep: SweepConfig,
    pub metrics: MetricsConfig,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            seed: 1,
            geometry: GeometryConfig::default(),
            rf: RfParams::default(),
            fading: RainParams::default(),
            nominal: NominalConfig::default(),
            design: DesignConfig::default(),
            sim: SimConfig::default(),
            sweep: SweepConfig::default(),
            metrics: MetricsConfig::default(),
        }
    }
}

fn strictly_increasing(name: &str, values: &[f64], allow_zero_first: bool) -> Result<()> {
    if values.is_empty() {
        return Err(BeamError::Config(format!("{name} must not be empty")));
    }
    for (i, &v) in values.iter().enumerate() {
        let ok = v.is_finite() && (v > 0.0 || (allow_zero_first && i == 0 && v == 0.0));
        if !ok {
            return Err(BeamError::Config(format!("{name} must be positive, got {v}")));
        }
    }
    if values.windows(2).any(|w| w[1] <= w[0]) {
        return Err(BeamError::Config(format!("{name} must be strictly increasing")));
    }
    Ok(())
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let s: Scenario = toml::from_str(text).map_err(|e| BeamError::Config(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    /// Loads a scenario file (or the defaults) and applies `key=value`
    /// overrides. Keys are dotted paths or unambiguous bare field names.
    pub fn load_with_overrides(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p)?,
            None => String::new(),
        };
        let mut table: toml::Table = toml::from_str(&text).map_err(|e| BeamError::Config(e.to_string()))?;
        for item in overrides {
            apply_override(&mut table, item)?;
        }
        let s: Scenario = table.try_into().map_err(|e: toml::de::Error| BeamError::Config(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.build()?;
        self.rf.validate()?;
        self.fading.validate()?;
        if self.nominal.n_calibration == 0 {
            return Err(BeamError::Config("nominal.n_calibration must be at least 1".into()));
        }
        if self.nominal.n_normalization < 2 {
            return Err(BeamError::Config("nominal.n_normalization must be at least 2".into()));
        }
        if !(0.0..=1.0).contains(&self.nominal.alpha_quantile) {
            return Err(BeamError::InvalidProbability(self.nominal.alpha_quantile));
        }
        if !(self.design.reference_width_factor > 0.0) {
            return Err(BeamError::Config("design.reference_width_factor must be positive".into()));
        }
        if self.sim.n_eval == 0 {
            return Err(BeamError::Config("sim.n_eval must be at least 1".into()));
        }
        if self.sim.designs.is_empty() {
            return Err(BeamError::Config("sim.designs must not be empty".into()));
        }
        if self.sim.directions.is_empty() {
            return Err(BeamError::Config("sim.directions must not be empty".into()));
        }
        strictly_increasing("sim.beta_values", &self.sim.beta_values, false)?;
        strictly_increasing("sim.p_fl_values", &self.sim.p_fl_values, false)?;
        strictly_increasing("sweep.alpha_fractions", &self.sweep.alpha_fractions, true)?;
        if !(self.sweep.beta > 0.0 && self.sweep.p_fl > 0.0) {
            return Err(BeamError::Config("sweep.beta and sweep.p_fl must be positive".into()));
        }
        for d in [Direction::Return, Direction::Forward] {
            self.metrics.table(d)?;
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    /// SHA-256 of the canonical JSON form of the resolved scenario.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("scenario serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }
}

/// Every settable dotted key.
pub fn known_keys() -> BTreeSet<String> {
    let value = toml::Value::try_from(Scenario::default()).expect("scenario serializes");
    let mut keys = BTreeSet::new();
    collect_keys(&value, String::new(), &mut keys);
    keys
}

fn collect_keys(value: &toml::Value, prefix: String, out: &mut BTreeSet<String>) {
    match value {
        toml::Value::Table(t) => {
            for (k, v) in t {
                let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                collect_keys(v, path, out);
            }
        }
        _ => {
            out.insert(prefix);
        }
    }
}

fn resolve_key(key: &str) -> Result<String> {
    let keys = known_keys();
    if keys.contains(key) {
        return Ok(key.to_string());
    }
    let matches: Vec<&String> = keys.iter().filter(|k| k.rsplit('.').next() == Some(key)).collect();
    match matches.as_slice() {
        [one] => Ok((*one).clone()),
        [] => Err(BeamError::Config(format!("unknown key '{key}'"))),
        many => Err(BeamError::Config(format!(
            "ambiguous key '{key}': {}",
            many.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", ")
        ))),
    }
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn apply_override(table: &mut toml::Table, item: &str) -> Result<()> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| BeamError::Config(format!("override '{item}' is not key=value")))?;
    let path = resolve_key(key.trim())?;
    let mut value = parse_value(raw.trim());
    // integers are accepted where floats are expected
    if let (toml::Value::Integer(i), Some(toml::Value::Float(_))) = (&value, default_value(&path)) {
        value = toml::Value::Float(*i as f64);
    }
    let mut parts: Vec<&str> = path.split('.').collect();
    let leaf = parts.pop().expect("nonempty key");
    let mut cursor = table;
    for part in parts {
        cursor = cursor
            .entry(part)
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| BeamError::Config(format!("'{part}' is not a section")))?;
    }
    cursor.insert(leaf.to_string(), value);
    Ok(())
}

fn default_value(path: &str) -> Option<toml::Value> {
    let mut v = toml::Value::try_from(Scenario::default()).ok()?;
    for part in path.split('.') {
        v = v.as_table()?.get(part)?.clone();
    }
    Some(v)
}
