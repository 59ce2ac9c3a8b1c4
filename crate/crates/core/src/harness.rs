//! Monte Carlo orchestration: calibration, design computation, evaluation of
//! every design on common channel draws, parameter sweeps and result files.
//!
//! Randomness comes from one ChaCha8 generator per drop, keyed by
//! `(seed, purpose, sweep index, drop index)`, so results do not depend on the
//! number of worker threads.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{estimate_nominal, sample_unit_ball, Channel, ChannelModel, NominalChannel};
use crate::design::{
    design_adaptive, design_perturbation_aware, design_reference_weighted, design_robust, robust_surrogate,
    BeamMatrix, DesignKind, DzMode,
};
use crate::error::{BeamError, Result};
use crate::linalg::C64;
use crate::link::{
    forward_mse, onground_forward, onground_return, return_mse, Direction, ForwardLinkParams, LinkResult,
    ReturnLinkParams,
};
use crate::metrics::{shannon, summarize, MetricsSummary};
use crate::scenario::{DzModeName, Scenario, Target};

pub const STREAM_NORMALIZATION: u64 = 0;
pub const STREAM_CALIBRATION: u64 = 1;
pub const STREAM_EVALUATION: u64 = 2;
pub const STREAM_BALL: u64 = 3;

/// Independent generator for one `(purpose, sweep, drop)` triple.
pub fn stream_rng(seed: u64, purpose: u64, sweep: u64, drop: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((purpose << 48) | ((sweep & 0xffff) << 32) | (drop & 0xffff_ffff));
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    Beta,
    PFl,
    Alpha,
}

impl SweepParam {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepParam::Beta => "beta",
            SweepParam::PFl => "p_fl",
            SweepParam::Alpha => "alpha",
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunRecord {
    pub scenario_hash: String,
    pub seed: u64,
    pub design: Target,
    pub direction: Direction,
    pub sweep_param: SweepParam,
    pub sweep_value: f64,
    pub metrics: MetricsSummary,
    pub alpha_clamped: bool,
    pub fallback_to_robust: bool,
    pub wall_time_s: f64,
    /// Mean Shannon throughput of each drop, in drop order.
    pub per_drop_shannon: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct DesignFailure {
    pub design: Target,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct Evaluation {
    pub records: Vec<RunRecord>,
    pub failures: Vec<DesignFailure>,
}

/// Calibration output: the channel generator, the nominal channel and the
/// calibration ensemble it was estimated from.
#[derive(Debug, Clone)]
pub struct Calibration {
    pub model: ChannelModel,
    pub nominal: NominalChannel,
    pub ensemble: Vec<Channel>,
}

impl Calibration {
    pub fn dz_mode(&self, scenario: &Scenario) -> Result<DzMode> {
        match scenario.design.dz_mode {
            DzModeName::PaperLiteral => Ok(DzMode::PaperLiteral),
            DzModeName::Empirical => DzMode::empirical(&self.nominal, &self.ensemble),
        }
    }
}

/// Channel generator with gain-normalization statistics from their own stream.
pub fn build_model(scenario: &Scenario) -> Result<ChannelModel> {
    let geometry = scenario.geometry.build()?;
    let mut rng = stream_rng(scenario.seed, STREAM_NORMALIZATION, 0, 0);
    ChannelModel::new(
        geometry,
        scenario.rf.clone(),
        scenario.fading,
        scenario.nominal.n_normalization,
        &mut rng,
    )
}

fn draw_channels(model: &ChannelModel, seed: u64, purpose: u64, count: usize) -> Result<Vec<Channel>> {
    (0..count)
        .into_par_iter()
        .map(|i| model.draw(&mut stream_rng(seed, purpose, 0, i as u64)))
        .collect()
}

pub fn calibrate(scenario: &Scenario) -> Result<Calibration> {
    scenario.validate()?;
    let model = build_model(scenario)?;
    let ensemble = draw_channels(&model, scenario.seed, STREAM_CALIBRATION, scenario.nominal.n_calibration)?;
    let nominal = estimate_nominal(&ensemble, scenario.nominal.alpha_mode())?;
    Ok(Calibration { model, nominal, ensemble })
}

/// Fixed design for `kind` from calibration data. The adaptive design needs a
/// concrete channel and is rejected here.
pub fn fixed_design(scenario: &Scenario, cal: &Calibration, kind: DesignKind) -> Result<BeamMatrix> {
    match kind {
        DesignKind::Reference => design_reference_weighted(
            &cal.model.geometry,
            scenario.design.reference_width_factor * cal.model.geometry.feed_pattern_width,
        ),
        DesignKind::Robust => design_robust(&cal.nominal),
        DesignKind::PerturbationAware => design_perturbation_aware(&cal.nominal, &cal.dz_mode(scenario)?),
        DesignKind::Adaptive => Err(BeamError::InvalidParameter(
            "the adaptive design depends on a concrete channel draw, not on the nominal channel".into(),
        )),
    }
}

enum Processor {
    Fixed(BeamMatrix),
    Adaptive,
    Onground,
}

fn link_result(proc: &Processor, h: &Channel, direction: Direction, value: f64) -> Result<LinkResult> {
    let adaptive;
    let b = match proc {
        Processor::Fixed(b) => Some(b),
        Processor::Adaptive => {
            adaptive = design_adaptive(h)?;
            Some(&adaptive)
        }
        Processor::Onground => None,
    };
    match (direction, b) {
        (Direction::Return, Some(b)) => return_mse(b, h, ReturnLinkParams::new(value)?),
        (Direction::Forward, Some(b)) => forward_mse(b, h, ForwardLinkParams::new(value)?),
        (Direction::Return, None) => onground_return(h, ReturnLinkParams::new(value)?),
        (Direction::Forward, None) => onground_forward(h, ForwardLinkParams::new(value)?),
    }
}

struct PointSpec<'a> {
    design: Target,
    direction: Direction,
    sweep_param: SweepParam,
    sweep_value: f64,
    link_value: f64,
    alpha_clamped: bool,
    fallback_to_robust: bool,
    channels: &'a [Channel],
}

fn run_point(scenario: &Scenario, hash: &str, proc: &Processor, spec: PointSpec<'_>) -> Result<RunRecord> {
    let start = Instant::now();
    let results: Vec<LinkResult> = spec
        .channels
        .par_iter()
        .map(|h| link_result(proc, h, spec.direction, spec.link_value))
        .collect::<Result<_>>()?;
    let table = scenario.metrics.table(spec.direction)?;
    let metrics = summarize(&results, &table, scenario.metrics.dispersion)?;
    let per_drop_shannon = results
        .iter()
        .map(|r| {
            let total: f64 = r.sinr.iter().map(|&s| shannon(s)).sum::<Result<f64>>()?;
            Ok(total / r.sinr.len() as f64)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(RunRecord {
        scenario_hash: hash.to_string(),
        seed: scenario.seed,
        design: spec.design,
        direction: spec.direction,
        sweep_param: spec.sweep_param,
        sweep_value: spec.sweep_value,
        metrics,
        alpha_clamped: spec.alpha_clamped,
        fallback_to_robust: spec.fallback_to_robust,
        wall_time_s: start.elapsed().as_secs_f64(),
        per_drop_shannon,
    })
}

fn sweep_for(scenario: &Scenario, direction: Direction) -> (SweepParam, &[f64]) {
    match direction {
        Direction::Return => (SweepParam::Beta, &scenario.sim.beta_values),
        Direction::Forward => (SweepParam::PFl, &scenario.sim.p_fl_values),
    }
}

/// Evaluates every configured design and the on-ground baseline on the same
/// `n_eval` channel draws, sweeping `β` on the return link and `P_FL` on the
/// forward link.
pub fn evaluate(scenario: &Scenario, cal: &Calibration) -> Result<Evaluation> {
    scenario.validate()?;
    let hash = scenario.hash();
    let channels = draw_channels(&cal.model, scenario.seed, STREAM_EVALUATION, scenario.sim.n_eval)?;
    let clamped = robust_surrogate(&cal.nominal).map(|s| s.alpha_clamped).unwrap_or(false);

    let mut out = Evaluation::default();
    let mut procs = Vec::new();
    for &target in &scenario.sim.designs {
        let proc = match target.design_kind() {
            None => Processor::Onground,
            Some(DesignKind::Adaptive) => Processor::Adaptive,
            Some(kind) => match fixed_design(scenario, cal, kind) {
                Ok(b) => Processor::Fixed(b),
                Err(e) => {
                    out.failures.push(DesignFailure { design: target, message: e.to_string() });
                    continue;
                }
            },
        };
        procs.push((target, proc));
    }

    for &direction in &scenario.sim.directions {
        let (param, values) = sweep_for(scenario, direction);
        for (target, proc) in &procs {
            let fallback = matches!(proc, Processor::Fixed(b) if b.fallback_to_robust);
            let uses_surrogate = matches!(target, Target::Robust | Target::PerturbationAware);
            for &value in values {
                let spec = PointSpec {
                    design: *target,
                    direction,
                    sweep_param: param,
                    sweep_value: value,
                    link_value: value,
                    alpha_clamped: uses_surrogate && clamped,
                    fallback_to_robust: fallback,
                    channels: &channels,
                };
                out.records.push(run_point(scenario, &hash, proc, spec)?);
            }
        }
    }
    Ok(out)
}

/// Robust and perturbation-aware designs over the `α` grid (fractions of the
/// calibrated radius). Designs use the feasibility-clamped radius; evaluation
/// channels are `H̄ + α Δ_i` with `Δ_i` uniform on the unit ball, the same
/// `Δ_i` at every grid point.
pub fn sweep_alpha(scenario: &Scenario, cal: &Calibration) -> Result<Evaluation> {
    scenario.validate()?;
    let hash = scenario.hash();
    let (n, k) = (cal.nominal.num_feeds(), cal.nominal.num_users());
    let units: Vec<_> = (0..scenario.sim.n_eval)
        .into_par_iter()
        .map(|i| sample_unit_ball(n, k, &mut stream_rng(scenario.seed, STREAM_BALL, 0, i as u64)))
        .collect();
    let dz_mode = cal.dz_mode(scenario)?;

    let mut targets: Vec<Target> = scenario
        .sim
        .designs
        .iter()
        .copied()
        .filter(|t| matches!(t, Target::Robust | Target::PerturbationAware))
        .collect();
    if targets.is_empty() {
        targets = vec![Target::Robust, Target::PerturbationAware];
    }

    let mut out = Evaluation::default();
    let mut feasible_points = 0;
    for &fraction in &scenario.sweep.alpha_fractions {
        let alpha = fraction * cal.nominal.alpha;
        let nominal = cal.nominal.with_alpha(alpha)?;
        let surrogate = match robust_surrogate(&nominal) {
            Ok(s) => s,
            Err(e) => {
                for &t in &targets {
                    out.failures.push(DesignFailure { design: t, message: format!("alpha {alpha}: {e}") });
                }
                continue;
            }
        };
        feasible_points += 1;
        let channels: Vec<Channel> = units
            .iter()
            .map(|u| Channel { values: &nominal.mean + u * C64::new(alpha, 0.0) })
            .collect();
        for &target in &targets {
            let design = match target {
                Target::Robust => design_robust(&nominal),
                _ => design_perturbation_aware(&nominal, &dz_mode),
            };
            let b = match design {
                Ok(b) => b,
                Err(e) => {
                    out.failures.push(DesignFailure { design: target, message: format!("alpha {alpha}: {e}") });
                    continue;
                }
            };
            let fallback = b.fallback_to_robust;
            let proc = Processor::Fixed(b);
            for &direction in &scenario.sim.directions {
                let link_value = match direction {
                    Direction::Return => scenario.sweep.beta,
                    Direction::Forward => scenario.sweep.p_fl,
                };
                let spec = PointSpec {
                    design: target,
                    direction,
                    sweep_param: SweepParam::Alpha,
                    sweep_value: alpha,
                    link_value,
                    alpha_clamped: surrogate.alpha_clamped,
                    fallback_to_robust: fallback,
                    channels: &channels,
                };
                out.records.push(run_point(scenario, &hash, &proc, spec)?);
            }
        }
    }
    if feasible_points == 0 {
        return Err(BeamError::NoFeasibleAlpha);
    }
    out.records.sort_by(|a, b| {
        (a.direction, a.design).cmp(&(b.direction, b.design)).then(a.sweep_value.total_cmp(&b.sweep_value))
    });
    Ok(out)
}

/// One line of the results CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub design: Target,
    pub direction: Direction,
    pub sweep_param: SweepParam,
    pub sweep_value: f64,
    pub mean_throughput: f64,
    pub availability: f64,
    /// Empty when every user is in outage.
    pub dispersion_index: Option<f64>,
    pub shannon_mean: f64,
    pub alpha_clamped: bool,
    pub seed: u64,
}

impl From<&RunRecord> for ResultRow {
    fn from(r: &RunRecord) -> Self {
        Self {
            design: r.design,
            direction: r.direction,
            sweep_param: r.sweep_param,
            sweep_value: r.sweep_value,
            mean_throughput: r.metrics.mean_throughput,
            availability: r.metrics.availability,
            dispersion_index: r.metrics.dispersion_index,
            shannon_mean: r.metrics.shannon_mean,
            alpha_clamped: r.alpha_clamped,
            seed: r.seed,
        }
    }
}

fn csv_err(e: csv::Error) -> BeamError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => BeamError::Io(io),
        other => BeamError::Config(format!("csv: {other:?}")),
    }
}

pub fn write_results_csv(path: &Path, records: &[RunRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in records {
        w.serialize(ResultRow::from(r)).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_results_csv(path: &Path) -> Result<Vec<ResultRow>> {
    let mut rdr = csv::Reader::from_path(path).map_err(csv_err)?;
    rdr.deserialize().map(|row| row.map_err(csv_err)).collect()
}

/// Long-format rows for plotting: one row per design, sweep value and
/// direction, with the x axis in plotting units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotRow {
    pub direction: Direction,
    pub design: Target,
    pub x_axis: String,
    pub x_value: f64,
    pub throughput: f64,
    pub availability_pct: f64,
    pub dispersion_index: Option<f64>,
    pub shannon: f64,
}

pub fn plot_rows(rows: &[ResultRow]) -> Vec<PlotRow> {
    rows.iter()
        .map(|r| {
            let (x_axis, x_value) = match r.sweep_param {
                SweepParam::Beta => ("eirp_db", 10.0 * r.sweep_value.log10()),
                SweepParam::PFl => ("p_fl_db", 10.0 * r.sweep_value.log10()),
                SweepParam::Alpha => ("alpha", r.sweep_value),
            };
            PlotRow {
                direction: r.direction,
                design: r.design,
                x_axis: x_axis.to_string(),
                x_value,
                throughput: r.mean_throughput,
                availability_pct: 100.0 * r.availability,
                dispersion_index: r.dispersion_index,
                shannon: r.shannon_mean,
            }
        })
        .collect()
}

pub fn write_plot_csv(path: &Path, rows: &[PlotRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub scenario_hash: String,
    pub seed: u64,
    pub scenario: Scenario,
}

/// Writes `manifest.json`; call before producing any result file.
pub fn write_manifest(dir: &Path, scenario: &Scenario, command: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        command: command.to_string(),
        scenario_hash: scenario.hash(),
        seed: scenario.seed,
        scenario: scenario.clone(),
    };
    let path = dir.join("manifest.json");
    let mut f = fs::File::create(&path)?;
    f.write_all(serde_json::to_string_pretty(&manifest).expect("manifest serializes").as_bytes())?;
    f.write_all(b"\n")?;
    Ok(path)
}
