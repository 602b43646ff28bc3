//! Scenario files, Monte Carlo orchestration and metric tables.
//!
//! A scenario is a `key = value` text file (`#` starts a comment) with one
//! sweep axis. [`run_scenario`] evaluates every sweep value over a number of
//! UE drops and small-scale fading trials and returns a [`MetricsTable`],
//! which [`emit`] writes as CSV or JSON.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::allocation::{self, ExhaustiveMetric, SinrSource};
use crate::channel::{EstimationModel, PilotConfig};
use crate::combining::{self, LocalProcessing, WeightingStrategy};
use crate::deterministic::{self, Kind, Mode, SwitchPolicy};
use crate::error::{Error, Result};
use crate::linalg;
use crate::parallel::Parallelism;
use crate::rng::{self, Purpose};
use crate::system_model::{
    build_geometry, compute_channel_statistics, select_subarrays, ChannelStatistics, Correlation, LosMode,
    ModelConfig, RicianLaw, SelectionMatrixSet, SelectionStrategy,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    M,
    U,
    Lk,
    TauC,
}

impl Axis {
    pub fn name(&self) -> &'static str {
        match self {
            Axis::M => "M",
            Axis::U => "U",
            Axis::Lk => "L_k",
            Axis::TauC => "tau_c",
        }
    }
}

impl FromStr for Axis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "M" => Ok(Axis::M),
            "U" | "K" => Ok(Axis::U),
            "L_k" | "Lk" => Ok(Axis::Lk),
            "tau_c" => Ok(Axis::TauC),
            _ => Err(Error::Config(format!("unknown sweep axis '{s}' (M, U, L_k, tau_c)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    /// Mean / percentile SE for every selection, weighting and mode.
    MeanSe,
    /// Accuracy of the global SINR approximation and the closed forms.
    Mnae,
    /// Minimum SE of the scheduling algorithms versus the number of UEs.
    Scheduling,
    /// Sequential algorithms against the exhaustive pilot search.
    Exhaustive,
    /// Multiplication counts of the closed forms.
    Complexity,
}

impl FromStr for Experiment {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean-se" => Ok(Experiment::MeanSe),
            "mnae" => Ok(Experiment::Mnae),
            "scheduling" => Ok(Experiment::Scheduling),
            "exhaustive" => Ok(Experiment::Exhaustive),
            "complexity" => Ok(Experiment::Complexity),
            _ => Err(Error::Config(format!("unknown experiment '{s}'"))),
        }
    }
}

/// A count given as a number or relative to the number of UEs `U`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CountRule {
    Fixed(usize),
    U,
    HalfU,
}

impl CountRule {
    pub fn resolve(&self, u: usize) -> usize {
        match *self {
            CountRule::Fixed(n) => n,
            CountRule::U => u,
            CountRule::HalfU => (u / 2).max(1),
        }
    }
}

impl FromStr for CountRule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "U" => Ok(CountRule::U),
            "U/2" => Ok(CountRule::HalfU),
            _ => s
                .parse()
                .map(CountRule::Fixed)
                .map_err(|_| Error::Config(format!("expected a count, 'U' or 'U/2', got '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PilotAssignment {
    /// Random permutation, pilot `j mod tau_p` for the `j`-th UE: every
    /// pilot is used and loads differ by at most one.
    Balanced,
    /// Independent uniform pilot per UE.
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Json,
}

impl FromStr for OutputFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            _ => Err(Error::Config(format!("unknown format '{s}' (csv, json)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub name: String,
    pub experiment: Experiment,
    pub model: ModelConfig,
    pub modes: Vec<Mode>,
    pub selections: Vec<SelectionStrategy>,
    pub weightings: Vec<WeightingStrategy>,
    pub l_k: usize,
    pub tau_p: CountRule,
    pub tau_c: CountRule,
    pub pilot_assignment: PilotAssignment,
    pub gamma_th: f64,
    pub eta_th: f64,
    /// `None` uses the switching table.
    pub u_switch: Option<usize>,
    pub numerical_trials: usize,
    pub sweep_axis: Axis,
    pub sweep_values: Vec<usize>,
    pub trials: usize,
    pub drops: u32,
    pub output: Option<PathBuf>,
    pub format: OutputFormat,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            name: "scenario".into(),
            experiment: Experiment::MeanSe,
            model: ModelConfig::default(),
            modes: vec![Mode::Centralized, Mode::Distributed],
            selections: vec![SelectionStrategy::Lsf],
            weightings: vec![WeightingStrategy::Optimal],
            l_k: 4,
            tau_p: CountRule::HalfU,
            tau_c: CountRule::Fixed(16),
            pilot_assignment: PilotAssignment::Balanced,
            gamma_th: 1.0,
            eta_th: 0.0,
            u_switch: None,
            numerical_trials: 50,
            sweep_axis: Axis::U,
            sweep_values: Vec::new(),
            trials: 500,
            drops: 10,
            output: None,
            format: OutputFormat::Csv,
        }
    }
}

fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("{key}: cannot parse '{v}'")))
}

fn parse_mode(s: &str) -> Result<Mode> {
    match s {
        "centralized" => Ok(Mode::Centralized),
        "distributed" => Ok(Mode::Distributed),
        _ => Err(Error::Config(format!("unknown mode '{s}'"))),
    }
}

fn parse_selection(s: &str) -> Result<SelectionStrategy> {
    match s {
        "random" => Ok(SelectionStrategy::Random),
        "lsf" => Ok(SelectionStrategy::Lsf),
        "sinr" => Ok(SelectionStrategy::Sinr),
        _ => Err(Error::Config(format!("unknown selection strategy '{s}'"))),
    }
}

fn parse_weighting(s: &str) -> Result<WeightingStrategy> {
    match s {
        "optimal" => Ok(WeightingStrategy::Optimal),
        "lsf" => Ok(WeightingStrategy::Lsf),
        "equal" => Ok(WeightingStrategy::Equal),
        _ => Err(Error::Config(format!("unknown weighting strategy '{s}'"))),
    }
}

fn list_with<T>(v: &str, f: fn(&str) -> Result<T>) -> Result<Vec<T>> {
    v.split(',').map(|s| s.trim()).filter(|s| !s.is_empty()).map(f).collect()
}

impl ScenarioConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ScenarioConfig::default();
        let mut sweep_seen = false;
        let mut asd = (15.0f64, 15.0f64);
        let mut correlated = cfg.model.correlation.is_correlated();
        let mut rician_fixed: Option<f64> = None;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", lineno + 1)))?;
            let (key, v) = (key.trim(), value.trim());
            let m = &mut cfg.model;
            match key {
                "name" => cfg.name = v.to_string(),
                "experiment" => cfg.experiment = v.parse()?,
                "L" => m.num_subarrays = num(key, v)?,
                "M" => m.antennas_per_subarray = num(key, v)?,
                "upa_rows" => m.upa_rows = Some(num(key, v)?),
                "K" | "U" => m.num_ues = num(key, v)?,
                "subarray_spacing" => m.subarray_spacing = num(key, v)?,
                "array_height" => m.array_height = num(key, v)?,
                "ue_height" => m.ue_height = num(key, v)?,
                "area_width" => m.area_width = num(key, v)?,
                "area_depth" => m.area_depth = num(key, v)?,
                "carrier_ghz" => m.carrier_frequency = num::<f64>(key, v)? * 1e9,
                "power_dbm" => m.ue_power_dbm = num(key, v)?,
                "noise_dbm" => m.noise_power_dbm = num(key, v)?,
                "correlation" => {
                    correlated = match v {
                        "correlated" | "local" => true,
                        "uncorrelated" => false,
                        _ => return Err(Error::Config(format!("unknown correlation '{v}'"))),
                    }
                }
                "asd_azimuth_deg" => asd.0 = num(key, v)?,
                "asd_elevation_deg" => asd.1 = num(key, v)?,
                "los" => {
                    m.los_mode = match v {
                        "visibility" => LosMode::Visibility,
                        "always" => LosMode::Always,
                        "probabilistic" => LosMode::Probabilistic,
                        "never" => LosMode::Never,
                        _ => return Err(Error::Config(format!("unknown LoS mode '{v}'"))),
                    }
                }
                "visibility_radius" => m.visibility_radius = num(key, v)?,
                "pathloss_intercept_db" => m.pathloss_intercept_db = num(key, v)?,
                "pathloss_slope_db" => m.pathloss_slope_db = num(key, v)?,
                "rician_kappa" => rician_fixed = Some(num(key, v)?),
                "seed" => m.seed = num(key, v)?,
                "modes" | "mode" => cfg.modes = list_with(v, parse_mode)?,
                "selections" | "selection" => cfg.selections = list_with(v, parse_selection)?,
                "weightings" | "weighting" => cfg.weightings = list_with(v, parse_weighting)?,
                "L_k" => cfg.l_k = num(key, v)?,
                "tau_p" => cfg.tau_p = v.parse()?,
                "tau_c" => cfg.tau_c = v.parse()?,
                "pilot_assignment" => {
                    cfg.pilot_assignment = match v {
                        "balanced" => PilotAssignment::Balanced,
                        "uniform" => PilotAssignment::Uniform,
                        _ => return Err(Error::Config(format!("unknown pilot assignment '{v}'"))),
                    }
                }
                "gamma_th" => cfg.gamma_th = num(key, v)?,
                "eta_th" => cfg.eta_th = num(key, v)?,
                "u_switch" => cfg.u_switch = if v == "table" { None } else { Some(num(key, v)?) },
                "numerical_trials" => cfg.numerical_trials = num(key, v)?,
                "sweep" => {
                    if sweep_seen {
                        return Err(Error::Config("exactly one sweep axis is allowed".into()));
                    }
                    sweep_seen = true;
                    let (axis, values) = v
                        .split_once(':')
                        .ok_or_else(|| Error::Config("sweep must look like 'M: 8, 16, 32'".into()))?;
                    cfg.sweep_axis = axis.trim().parse()?;
                    cfg.sweep_values = values
                        .split(',')
                        .map(|s| s.trim())
                        .filter(|s| !s.is_empty())
                        .map(parse_range)
                        .collect::<Result<Vec<_>>>()?
                        .concat();
                }
                "trials" => cfg.trials = num(key, v)?,
                "drops" => cfg.drops = num(key, v)?,
                "output" => cfg.output = Some(PathBuf::from(v)),
                "format" => cfg.format = v.parse()?,
                _ => return Err(Error::Config(format!("line {}: unknown key '{key}'", lineno + 1))),
            }
        }
        if !sweep_seen {
            return Err(Error::Config("missing 'sweep' (exactly one axis required)".into()));
        }
        cfg.model.correlation = if correlated {
            Correlation::LocalScattering { asd_azimuth: asd.0.to_radians(), asd_elevation: asd.1.to_radians() }
        } else {
            Correlation::Uncorrelated
        };
        if cfg.model.upa_rows.is_none() {
            cfg.model.upa_rows = Some(upa_rows_for(cfg.model.antennas_per_subarray));
        }
        if let Some(k) = rician_fixed {
            cfg.model.rician = RicianLaw::Fixed(k);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn preset(name: &str) -> Result<Self> {
        PRESETS
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, text)| Self::parse(text))
            .unwrap_or_else(|| Err(Error::Config(format!("unknown preset '{name}'"))))
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("trials must be >= 1".into()));
        }
        if self.drops == 0 {
            return Err(Error::Config("drops must be >= 1".into()));
        }
        if self.sweep_values.is_empty() {
            return Err(Error::Config("sweep needs at least one value".into()));
        }
        if self.modes.is_empty() || self.selections.is_empty() || self.weightings.is_empty() {
            return Err(Error::Config("modes, selections and weightings must be nonempty".into()));
        }
        if !(self.eta_th >= 0.0) || !(self.gamma_th > 0.0) {
            return Err(Error::Config("need eta_th >= 0 and gamma_th > 0".into()));
        }
        if self.experiment == Experiment::Exhaustive && self.model.num_ues > allocation::EXHAUSTIVE_MAX_UES {
            return Err(Error::Config(format!(
                "exhaustive search supports at most {} UEs",
                allocation::EXHAUSTIVE_MAX_UES
            )));
        }
        let mut m = self.model.clone();
        if self.sweep_axis == Axis::M {
            m.antennas_per_subarray = self.sweep_values[0];
            m.upa_rows = Some(upa_rows_for(self.sweep_values[0]));
        }
        m.validate()
    }

    /// Fully resolved parameters at one sweep value.
    pub fn point(&self, value: usize) -> Result<Point> {
        let mut model = self.model.clone();
        let mut l_k = self.l_k;
        let mut tau_c_override = None;
        match self.sweep_axis {
            Axis::M => {
                model.antennas_per_subarray = value;
                model.upa_rows = Some(upa_rows_for(value));
            }
            Axis::U => model.num_ues = value,
            Axis::Lk => l_k = value,
            Axis::TauC => tau_c_override = Some(value),
        }
        model.validate()?;
        let u = model.num_ues;
        let tau_c = tau_c_override.unwrap_or_else(|| self.tau_c.resolve(u));
        let tau_p = self.tau_p.resolve(u);
        if l_k == 0 || l_k > model.num_subarrays {
            return Err(Error::Config(format!("L_k={l_k} must be in 1..={}", model.num_subarrays)));
        }
        if tau_p == 0 || tau_p > tau_c {
            return Err(Error::Config(format!("need 1 <= tau_p={tau_p} <= tau_c={tau_c}")));
        }
        Ok(Point { model, l_k, tau_p, tau_c })
    }

    fn policy(&self) -> SwitchPolicy {
        match self.u_switch {
            Some(u) => SwitchPolicy::Fixed(u),
            None => SwitchPolicy::Table { correlated: self.model.correlation.is_correlated() },
        }
    }
}

/// `a..b` (inclusive) or a single number.
fn parse_range(s: &str) -> Result<Vec<usize>> {
    if let Some((a, b)) = s.split_once("..") {
        let a: usize = num("sweep", a.trim())?;
        let b: usize = num("sweep", b.trim())?;
        if a > b {
            return Err(Error::Config(format!("empty range '{s}'")));
        }
        Ok((a..=b).collect())
    } else {
        Ok(vec![num("sweep", s)?])
    }
}

/// Rows of the most square UPA with `m` elements.
pub fn upa_rows_for(m: usize) -> usize {
    (1..=m).filter(|d| m.is_multiple_of(*d) && d * d <= m).max().unwrap_or(1)
}

#[derive(Debug, Clone)]
pub struct Point {
    pub model: ModelConfig,
    pub l_k: usize,
    pub tau_p: usize,
    pub tau_c: usize,
}

pub const PRESETS: &[(&str, &str)] = &[
    ("fig1a", include_str!("../presets/fig1a.cfg")),
    ("fig1b", include_str!("../presets/fig1b.cfg")),
    ("fig2", include_str!("../presets/fig2.cfg")),
    ("fig3-dist", include_str!("../presets/fig3-dist.cfg")),
    ("fig3-cent", include_str!("../presets/fig3-cent.cfg")),
    ("fig4", include_str!("../presets/fig4.cfg")),
    ("fig5", include_str!("../presets/fig5.cfg")),
    ("fig6-minSE", include_str!("../presets/fig6-minSE.cfg")),
    ("table3-sweep", include_str!("../presets/table3-sweep.cfg")),
    ("complexity", include_str!("../presets/complexity.cfg")),
];

/// Mean normalized absolute error `mean |xhat - x| / x`. Pairs with
/// `x == 0` are dropped; their number is returned alongside.
pub fn mnae(truth: &[f64], estimate: &[f64]) -> Result<(f64, usize)> {
    if truth.len() != estimate.len() {
        return Err(Error::Metric(format!("series lengths differ: {} vs {}", truth.len(), estimate.len())));
    }
    let terms: Vec<f64> = truth
        .iter()
        .zip(estimate)
        .filter(|(x, _)| **x != 0.0)
        .map(|(x, xh)| (xh - x).abs() / x)
        .collect();
    let dropped = truth.len() - terms.len();
    if terms.is_empty() {
        return Err(Error::Metric("no nonzero truth values".into()));
    }
    Ok((linalg::pairwise_sum(&terms) / terms.len() as f64, dropped))
}

mod nan_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub sweep: f64,
    pub metric: String,
    #[serde(with = "nan_as_null")]
    pub mean: f64,
    #[serde(with = "nan_as_null")]
    pub stderr: f64,
    pub trials: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    pub rows: Vec<MetricRow>,
}

impl MetricsTable {
    pub fn get(&self, sweep: f64, metric: &str) -> Option<&MetricRow> {
        self.rows.iter().find(|r| r.sweep == sweep && r.metric == metric)
    }

    /// `(sweep, mean)` for one metric, in row order.
    pub fn series(&self, metric: &str) -> Vec<(f64, f64)> {
        self.rows.iter().filter(|r| r.metric == metric).map(|r| (r.sweep, r.mean)).collect()
    }

    /// Bitwise equality with NaN matching NaN.
    pub fn same_as(&self, other: &MetricsTable) -> bool {
        self.rows.len() == other.rows.len()
            && self.rows.iter().zip(&other.rows).all(|(a, b)| {
                a.sweep.to_bits() == b.sweep.to_bits()
                    && a.metric == b.metric
                    && a.mean.to_bits() == b.mean.to_bits()
                    && a.stderr.to_bits() == b.stderr.to_bits()
                    && a.trials == b.trials
            })
    }
}

impl fmt::Display for MetricsTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in &self.rows {
            writeln!(f, "{:>8} {:<40} {:>14.6} ± {:<12.3e} (n={})", r.sweep, r.metric, r.mean, r.stderr, r.trials)?;
        }
        Ok(())
    }
}

/// Per-metric samples for one sweep value. Every sample is one independent
/// unit (a trial or a drop).
#[derive(Default)]
struct Samples {
    by_metric: BTreeMap<String, Vec<f64>>,
    /// Explicit standard errors for metrics whose samples are not i.i.d.
    stderr_override: BTreeMap<String, f64>,
}

impl Samples {
    fn push(&mut self, metric: impl Into<String>, v: f64) {
        self.by_metric.entry(metric.into()).or_default().push(v);
    }

    fn into_rows(self, sweep: f64) -> Vec<MetricRow> {
        let mut rows = Vec::new();
        for (metric, xs) in self.by_metric {
            let n = xs.len();
            let mean = linalg::pairwise_sum(&xs) / n as f64;
            let stderr = match self.stderr_override.get(&metric) {
                Some(&s) => s,
                None if n > 1 => {
                    let dev: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
                    (linalg::pairwise_sum(&dev) / (n - 1) as f64 / n as f64).sqrt()
                }
                None => 0.0,
            };
            rows.push(MetricRow { sweep, metric, mean, stderr, trials: n });
        }
        rows
    }
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Random pilot assignment for all `K` UEs of a drop.
pub fn assign_pilots(
    k_count: usize,
    tau_p: usize,
    tau_c: usize,
    rule: PilotAssignment,
    seed: u64,
    drop: u32,
) -> Result<PilotConfig> {
    let mut rng = rng::stream(seed, Purpose::PilotAssignment, drop, 0);
    let a: Vec<(usize, usize)> = match rule {
        PilotAssignment::Balanced => {
            let mut perm: Vec<usize> = (0..k_count).collect();
            perm.shuffle(&mut rng);
            let mut a: Vec<(usize, usize)> = perm.iter().enumerate().map(|(j, &k)| (k, j % tau_p)).collect();
            a.sort_unstable();
            a
        }
        PilotAssignment::Uniform => (0..k_count).map(|k| (k, rng.random_range(0..tau_p))).collect(),
    };
    PilotConfig::new(tau_p, tau_c, k_count, &a)
}

/// Statistics of drop `drop` at one sweep point.
pub fn drop_statistics(point: &Point, drop: u32) -> Result<ChannelStatistics> {
    let geom = build_geometry(&point.model, drop)?;
    compute_channel_statistics(&geom, &point.model, drop)
}

fn selection_for(
    strategy: SelectionStrategy,
    stats: &ChannelStatistics,
    pilots: &PilotConfig,
    point: &Point,
    drop: u32,
    par: Parallelism,
) -> Result<SelectionMatrixSet> {
    let ctx = if strategy == SelectionStrategy::Sinr {
        Some(deterministic::sinr_context(stats, pilots, par)?)
    } else {
        None
    };
    select_subarrays(strategy, stats, point.l_k, ctx.as_ref(), point.model.seed, drop)
}

/// Runs every sweep value of `cfg` and collects the metrics.
pub fn run_scenario(cfg: &ScenarioConfig, par: Parallelism) -> Result<MetricsTable> {
    cfg.validate()?;
    let mut table = MetricsTable::default();
    for &value in &cfg.sweep_values {
        let started = Instant::now();
        let point = match cfg.point(value) {
            Ok(p) => p,
            Err(e) => {
                log::warn!("{} = {value}: skipped ({e})", cfg.sweep_axis.name());
                continue;
            }
        };
        let result = match cfg.experiment {
            Experiment::MeanSe => run_mean_se(cfg, &point, par),
            Experiment::Mnae => run_mnae(cfg, &point, par),
            Experiment::Scheduling => run_scheduling(cfg, &point, par),
            Experiment::Exhaustive => run_exhaustive(cfg, &point, par),
            Experiment::Complexity => run_complexity(cfg, &point),
        };
        match result {
            Ok(samples) => table.rows.extend(samples.into_rows(value as f64)),
            Err(e @ Error::Config(_)) => log::warn!("{} = {value}: skipped ({e})", cfg.sweep_axis.name()),
            Err(e) => return Err(e),
        }
        log::info!(
            "{}: {} = {value} done in {:.2?}",
            cfg.name,
            cfg.sweep_axis.name(),
            started.elapsed()
        );
    }
    Ok(table)
}

fn run_mean_se(cfg: &ScenarioConfig, point: &Point, par: Parallelism) -> Result<Samples> {
    let mut samples = Samples::default();
    let k_count = point.model.num_ues;
    let mut pooled: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for drop in 0..cfg.drops {
        let stats = drop_statistics(point, drop)?;
        let pilots = assign_pilots(k_count, point.tau_p, point.tau_c, cfg.pilot_assignment, point.model.seed, drop)?;
        let model = EstimationModel::new(&stats, &pilots)?;
        let sels: Vec<SelectionMatrixSet> = cfg
            .selections
            .iter()
            .map(|&s| selection_for(s, &stats, &pilots, point, drop, par))
            .collect::<Result<_>>()?;
        let per_trial = par.map(cfg.trials, |n| -> Result<Vec<(String, Vec<f64>)>> {
            let mut rng = rng::stream(point.model.seed, Purpose::Channel, drop, n as u32);
            let (_, est) = combining::draw_estimate(&stats, &model, &mut rng)?;
            let mut out = Vec::new();
            for (sel, strategy) in sels.iter().zip(&cfg.selections) {
                if cfg.modes.contains(&Mode::Centralized) {
                    let se = pilots
                        .scheduled()
                        .iter()
                        .map(|&k| {
                            let g = combining::centralized_sinr(&est, &model, sel, &stats, k)?;
                            combining::se_map(g, pilots.tau_p, pilots.tau_c)
                        })
                        .collect::<Result<Vec<_>>>()?;
                    out.push((format!("centralized/{}", strategy.name()), se));
                }
                if cfg.modes.contains(&Mode::Distributed) {
                    let lp = LocalProcessing::for_selection(&est, &model, &stats, sel)?;
                    let locals: Vec<Vec<f64>> = pilots
                        .scheduled()
                        .iter()
                        .map(|&k| sel.serving(k).iter().map(|&l| lp.sinr(k, l)).collect::<Result<Vec<_>>>())
                        .collect::<Result<_>>()?;
                    for &w in &cfg.weightings {
                        let se = pilots
                            .scheduled()
                            .iter()
                            .zip(&locals)
                            .map(|(&k, local)| {
                                let g = combining::distributed_sinr(&lp, &est, &model, &stats, sel.serving(k), k, w, local)?;
                                combining::se_map(g, pilots.tau_p, pilots.tau_c)
                            })
                            .collect::<Result<Vec<_>>>()?;
                        out.push((format!("distributed/{}/{}", strategy.name(), w.name()), se));
                    }
                }
            }
            Ok(out)
        });
        for trial in per_trial {
            for (label, se) in trial? {
                samples.push(format!("se_mean/{label}"), linalg::pairwise_sum(&se) / se.len() as f64);
                samples.push(format!("se_min/{label}"), se.iter().copied().fold(f64::INFINITY, f64::min));
                pooled.entry(label).or_default().extend(se);
            }
        }
    }
    for (label, mut xs) in pooled {
        xs.sort_by(f64::total_cmp);
        let n = xs.len();
        for (q, name) in [(0.05, "p5"), (0.5, "p50"), (0.95, "p95")] {
            samples.push(format!("se_{name}/{label}"), percentile(&xs, q));
        }
        let _ = n;
    }
    Ok(samples)
}

/// Closed-form SE estimate of UE `k` for `kind`/`mode`, plus clamp count.
/// The pre-log factor cancels in every relative error, so accuracy metrics
/// use `log2(1 + SINR)` directly; this keeps `tau_p = tau_c` meaningful.
fn closed_form_se(
    kind: Kind,
    mode: Mode,
    stats: &ChannelStatistics,
    model: &EstimationModel,
    sel: &SelectionMatrixSet,
    k: usize,
) -> Result<(f64, usize)> {
    let d = deterministic::evaluate(kind, mode, stats, model, sel, k)?;
    let tau = (0, model.pilots.tau_c);
    let se = match mode {
        Mode::Centralized => combining::se_map(d.global(), tau.0, tau.1)?,
        Mode::Distributed => {
            let w = combining::compute_weights(WeightingStrategy::Optimal, Some(&d.values), stats, sel.serving(k), k)?;
            combining::se_map_componentwise(&d.values, &w.on(sel.serving(k)), tau.0, tau.1)?
        }
    };
    Ok((se, d.clamped))
}

fn run_mnae(cfg: &ScenarioConfig, point: &Point, par: Parallelism) -> Result<Samples> {
    let mut samples = Samples::default();
    let k_count = point.model.num_ues;
    let central = cfg.modes.contains(&Mode::Centralized);
    let distributed = cfg.modes.contains(&Mode::Distributed);
    let mut erg_se: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for drop in 0..cfg.drops {
        let stats = drop_statistics(point, drop)?;
        let pilots = assign_pilots(k_count, point.tau_p, point.tau_c, cfg.pilot_assignment, point.model.seed, drop)?;
        let model = EstimationModel::new(&stats, &pilots)?;
        let sel = selection_for(cfg.selections[0], &stats, &pilots, point, drop, par)?;
        let scheduled = pilots.scheduled();
        // Closed forms, once per drop.
        let mut approx: BTreeMap<(Kind, Mode), Vec<f64>> = BTreeMap::new();
        for &mode in &cfg.modes {
            for kind in [Kind::Ergodic, Kind::Asymptotic] {
                let mut v = Vec::with_capacity(scheduled.len());
                let mut clamped = 0;
                for &k in scheduled {
                    let (se, c) = closed_form_se(kind, mode, &stats, &model, &sel, k)?;
                    v.push(se);
                    clamped += c;
                }
                if kind == Kind::Asymptotic {
                    samples.push(format!("clamped/{}", mode.name()), clamped as f64);
                }
                approx.insert((kind, mode), v);
            }
        }
        let per_trial = par.map(cfg.trials, |n| -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
            let mut rng = rng::stream(point.model.seed, Purpose::Channel, drop, n as u32);
            let (_, est) = combining::draw_estimate(&stats, &model, &mut rng)?;
            let mut cent = Vec::new();
            let mut dist = Vec::new();
            let mut ghat = Vec::new();
            if central {
                for &k in scheduled {
                    let g = combining::centralized_sinr(&est, &model, &sel, &stats, k)?;
                    cent.push(combining::se_map(g, 0, pilots.tau_c)?);
                }
            }
            if distributed {
                let lp = LocalProcessing::for_selection(&est, &model, &stats, &sel)?;
                for &k in scheduled {
                    let serving = sel.serving(k);
                    let local: Vec<f64> = serving.iter().map(|&l| lp.sinr(k, l)).collect::<Result<_>>()?;
                    let g = combining::distributed_sinr(&lp, &est, &model, &stats, serving, k, WeightingStrategy::Optimal, &local)?;
                    dist.push(combining::se_map(g, 0, pilots.tau_c)?);
                    let w = combining::compute_weights(WeightingStrategy::Optimal, Some(&local), &stats, serving, k)?;
                    ghat.push(combining::se_map_componentwise(&local, &w.on(serving), 0, pilots.tau_c)?);
                }
            }
            Ok((cent, dist, ghat))
        });
        let per_trial = per_trial.into_iter().collect::<Result<Vec<_>>>()?;
        let mut push_truth = |mode: Mode, truth: Vec<&Vec<f64>>| -> Result<()> {
            let u = scheduled.len();
            for t in &truth {
                samples.push(format!("rate_mean/{}", mode.name()), linalg::pairwise_sum(t) / u as f64);
                if let Ok((v, _)) = mnae(t, &approx[&(Kind::Asymptotic, mode)]) {
                    samples.push(format!("mnae/{}/asymptotic", mode.name()), v);
                }
            }
            let means: Vec<f64> = (0..u)
                .map(|s| linalg::pairwise_sum(&truth.iter().map(|t| t[s]).collect::<Vec<_>>()) / truth.len() as f64)
                .collect();
            let (v, _) = mnae(&means, &approx[&(Kind::Ergodic, mode)])?;
            samples.push(format!("mnae/{}/ergodic", mode.name()), v);
            // Delta-method standard error of the ergodic MNAE through the
            // Monte Carlo error of the truth means.
            let n = truth.len() as f64;
            let mut se_terms = Vec::with_capacity(u);
            for s in 0..u {
                let xs: Vec<f64> = truth.iter().map(|t| (t[s] - means[s]).powi(2)).collect();
                let sd_mean = (linalg::pairwise_sum(&xs) / (n - 1.0).max(1.0) / n).sqrt();
                if means[s] > 0.0 {
                    se_terms.push(approx[&(Kind::Ergodic, mode)][s] / (means[s] * means[s]) * sd_mean);
                }
            }
            erg_se
                .entry(format!("mnae/{}/ergodic", mode.name()))
                .or_default()
                .push(linalg::pairwise_sum(&se_terms) / se_terms.len().max(1) as f64);
            Ok(())
        };
        if central {
            push_truth(Mode::Centralized, per_trial.iter().map(|t| &t.0).collect())?;
        }
        if distributed {
            push_truth(Mode::Distributed, per_trial.iter().map(|t| &t.1).collect())?;
            for (_, dist, ghat) in &per_trial {
                if let Ok((v, _)) = mnae(dist, ghat) {
                    samples.push("mnae/prop1", v);
                }
            }
        }
    }
    for (metric, per_drop) in erg_se {
        let d = per_drop.len() as f64;
        let rms = (per_drop.iter().map(|s| s * s).sum::<f64>() / d).sqrt() / d.sqrt();
        let spread = samples_stderr(samples.by_metric.get(&metric).map(|v| v.as_slice()).unwrap_or(&[]));
        samples.stderr_override.insert(metric, (rms * rms + spread * spread).sqrt());
    }
    Ok(samples)
}

fn samples_stderr(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64 / n as f64).sqrt()
}

/// Pilot configuration holding only the first `u` admitted UEs.
fn prefix(pilots: &PilotConfig, u: usize) -> Result<PilotConfig> {
    let a: Vec<(usize, usize)> =
        pilots.scheduled().iter().take(u).map(|&k| (k, pilots.pilot(k).expect("scheduled"))).collect();
    let tau_p = a.iter().map(|x| x.1 + 1).max().unwrap_or(1);
    PilotConfig::new(tau_p, pilots.tau_c, pilots.num_ues(), &a)
}

/// Minimum SE of every scheduling scheme for the first `u = 1..=K` admitted
/// UEs, and per scheme the largest `u` before the first prefix whose
/// minimum SE falls below `eta_th`.
fn run_scheduling(cfg: &ScenarioConfig, point: &Point, par: Parallelism) -> Result<Samples> {
    let mut samples = Samples::default();
    let k_count = point.model.num_ues;
    let seed = point.model.seed;
    let tau_c = point.tau_c;
    for drop in 0..cfg.drops {
        let stats = drop_statistics(point, drop)?;
        let sel = select_subarrays(SelectionStrategy::Lsf, &stats, point.l_k, None, seed, drop)?;
        for &mode in &cfg.modes {
            let m = mode.name();
            let ana = allocation::schedule_sinr(&stats, &sel, 0.0, tau_c, mode, SinrSource::Analytic(cfg.policy()), par)?;
            let num = allocation::schedule_sinr(
                &stats,
                &sel,
                0.0,
                tau_c,
                mode,
                SinrSource::Numerical { trials: cfg.numerical_trials, seed, drop },
                par,
            )?;
            let orth = allocation::schedule_nmse(&stats, &sel, cfg.gamma_th, tau_c, par)?;
            let eval = |p: &PilotConfig| allocation::min_se_monte_carlo(&stats, &sel, p, mode, cfg.trials, seed, drop, par);
            let schemes: [(&str, Option<&PilotConfig>); 4] =
                [("ana", Some(&ana.pilots)), ("num", Some(&num.pilots)), ("orthogonal", Some(&orth.pilots)), ("random", None)];
            for (name, pilots) in schemes {
                let mut count = None;
                for u in 1..=k_count {
                    let cfg_u = match pilots {
                        Some(p) if u <= p.scheduled().len() => prefix(p, u)?,
                        Some(_) => break,
                        None => {
                            let tau_p = u.div_ceil(2).min(tau_c - 1);
                            let mut rng = rng::stream(seed, Purpose::PilotAssignment, drop, u as u32);
                            allocation::baseline_random(&stats, &sel, u, tau_p, tau_c, &mut rng)?.pilots
                        }
                    };
                    let se = eval(&cfg_u)?;
                    if count.is_none() && se < cfg.eta_th {
                        count = Some(u - 1);
                    }
                    samples.push(format!("min_se/{m}/{name}/U{u:02}"), se);
                }
                let reached = pilots.map_or(k_count, |p| p.scheduled().len().min(k_count));
                samples.push(format!("scheduled/{m}/{name}"), count.unwrap_or(reached) as f64);
            }
        }
    }
    Ok(samples)
}

fn run_exhaustive(cfg: &ScenarioConfig, point: &Point, par: Parallelism) -> Result<Samples> {
    let mut samples = Samples::default();
    let seed = point.model.seed;
    for drop in 0..cfg.drops {
        let stats = drop_statistics(point, drop)?;
        let sel = select_subarrays(SelectionStrategy::Lsf, &stats, point.l_k, None, seed, drop)?;
        for &mode in &cfg.modes {
            let m = mode.name();
            let eval = |p: &PilotConfig| allocation::min_se_monte_carlo(&stats, &sel, p, mode, cfg.trials, seed, drop, par);
            let ana = allocation::schedule_sinr(&stats, &sel, 0.0, point.tau_c, mode, SinrSource::Analytic(cfg.policy()), par)?;
            let num = allocation::schedule_sinr(
                &stats,
                &sel,
                0.0,
                point.tau_c,
                mode,
                SinrSource::Numerical { trials: cfg.numerical_trials, seed, drop },
                par,
            )?;
            let ex = allocation::exhaustive_search(
                &stats,
                &sel,
                point.tau_c,
                mode,
                ExhaustiveMetric::MonteCarlo { trials: cfg.trials, seed, drop },
                par,
            )?;
            samples.push(format!("min_se/{m}/ana"), eval(&ana.pilots)?);
            samples.push(format!("min_se/{m}/num"), eval(&num.pilots)?);
            samples.push(format!("min_se/{m}/exhaustive"), ex.metric);
        }
    }
    Ok(samples)
}

fn run_complexity(cfg: &ScenarioConfig, point: &Point) -> Result<Samples> {
    let mut samples = Samples::default();
    let k_count = point.model.num_ues;
    let stats = drop_statistics(point, 0)?;
    let pilots = assign_pilots(k_count, point.tau_p, point.tau_c, cfg.pilot_assignment, point.model.seed, 0)?;
    let model = EstimationModel::new(&stats, &pilots)?;
    let sel = select_subarrays(SelectionStrategy::Lsf, &stats, point.l_k, None, point.model.seed, 0)?;
    let (m, l_k, u) = (stats.num_antennas() as u64, point.l_k as u64, k_count as u64);
    for &mode in &cfg.modes {
        for kind in [Kind::Ergodic, Kind::Asymptotic] {
            let label = format!(
                "{}/{}",
                if kind == Kind::Ergodic { "ergodic" } else { "asymptotic" },
                mode.name()
            );
            samples.push(format!("mults_formula/{label}"), deterministic::complexity_count(kind, mode, m, l_k, u) as f64);
            let d = deterministic::evaluate(kind, mode, &stats, &model, &sel, pilots.scheduled()[0])?;
            samples.push(format!("mults_counted/{label}"), d.multiplications as f64);
        }
    }
    Ok(samples)
}

/// Writes `table` as CSV with header `sweep,metric,mean,stderr,trials`.
pub fn write_csv<W: Write>(table: &MetricsTable, w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["sweep", "metric", "mean", "stderr", "trials"])?;
    for r in &table.rows {
        wr.write_record([
            r.sweep.to_string(),
            r.metric.clone(),
            r.mean.to_string(),
            r.stderr.to_string(),
            r.trials.to_string(),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(r: R) -> Result<MetricsTable> {
    let mut rd = csv::Reader::from_reader(r);
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        if rec.len() != 5 {
            return Err(Error::Metric(format!("expected 5 columns, got {}", rec.len())));
        }
        let f = |i: usize| -> Result<f64> {
            rec[i].parse().map_err(|_| Error::Metric(format!("bad number '{}'", &rec[i])))
        };
        rows.push(MetricRow {
            sweep: f(0)?,
            metric: rec[1].to_string(),
            mean: f(2)?,
            stderr: f(3)?,
            trials: rec[4].parse().map_err(|_| Error::Metric(format!("bad count '{}'", &rec[4])))?,
        });
    }
    Ok(MetricsTable { rows })
}

pub fn write_json<W: Write>(table: &MetricsTable, mut w: W) -> Result<()> {
    serde_json::to_writer_pretty(&mut w, table)?;
    writeln!(w)?;
    Ok(())
}

pub fn read_json<R: Read>(r: R) -> Result<MetricsTable> {
    Ok(serde_json::from_reader(r)?)
}

/// Writes `table` to `path`, or to standard output when `path` is `None`.
pub fn emit(table: &MetricsTable, format: OutputFormat, path: Option<&Path>) -> Result<()> {
    let write = |w: &mut dyn Write| -> Result<()> {
        match format {
            OutputFormat::Csv => write_csv(table, w),
            OutputFormat::Json => write_json(table, w),
        }
    };
    match path {
        Some(p) => {
            let mut f = std::io::BufWriter::new(std::fs::File::create(p)?);
            write(&mut f)?;
            f.flush()?;
            Ok(())
        }
        None => write(&mut std::io::stdout().lock()),
    }
}
