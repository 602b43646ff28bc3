//! User scheduling and pilot assignment from statistical CSI.
//!
//! The three greedy algorithms share one skeleton: UEs are visited in
//! descending average gain, every pilot already in use plus one fresh pilot
//! is tried for the candidate, the best candidate pilot is kept, and the UE
//! is admitted only if the resulting figure of merit passes the threshold.
//! The first rejection ends the loop.

use std::fmt::Write as _;

use rand::seq::index::sample;
use rand::Rng;

use crate::channel::{EstimationModel, PilotConfig};
use crate::combining::{self, LocalProcessing, WeightVector, WeightingStrategy};
use crate::deterministic::{self, Mode, SwitchPolicy};
use crate::error::{Error, Result};
use crate::linalg;
use crate::parallel::Parallelism;
use crate::rng::{self, Purpose};
use crate::system_model::{top_indices, ChannelStatistics, SelectionMatrixSet};

/// Largest number of UEs the exhaustive search accepts.
pub const EXHAUSTIVE_MAX_UES: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    pub candidate: usize,
    /// Figure of merit for each tried pilot (0-based pilot index = position).
    pub pilot_metrics: Vec<f64>,
    pub chosen_pilot: usize,
    pub metric: f64,
    pub admitted: bool,
}

#[derive(Debug, Clone)]
pub struct AllocationState {
    pub pilots: PilotConfig,
    pub selection: SelectionMatrixSet,
    /// Committed combining weights per UE (distributed operation only).
    pub weights: Option<Vec<WeightVector>>,
    pub trace: Vec<TraceEntry>,
    /// UEs that received a pilot but no serving subarray.
    pub unserved: Vec<usize>,
    /// Figure of merit at the last admission.
    pub metric: f64,
}

impl AllocationState {
    pub fn scheduled(&self) -> &[usize] {
        self.pilots.scheduled()
    }

    pub fn num_scheduled(&self) -> usize {
        self.pilots.scheduled().len()
    }

    /// Plain-text report: one `key: value` line per field, then the trace.
    pub fn report(&self) -> String {
        let mut out = String::new();
        let sched: Vec<String> = self.scheduled().iter().map(|k| k.to_string()).collect();
        let _ = writeln!(out, "scheduled: {}", sched.join(" "));
        let _ = writeln!(out, "tau_p: {}", self.pilots.tau_p);
        let _ = writeln!(out, "tau_c: {}", self.pilots.tau_c);
        let pil: Vec<String> = self
            .scheduled()
            .iter()
            .map(|&k| format!("{}={}", k, self.pilots.pilot(k).unwrap_or(0) + 1))
            .collect();
        let _ = writeln!(out, "pilots: {}", pil.join(" "));
        let unserved: Vec<String> = self.unserved.iter().map(|k| k.to_string()).collect();
        let _ = writeln!(out, "unserved: {}", unserved.join(" "));
        let _ = writeln!(out, "metric: {}", self.metric);
        if let Some(w) = &self.weights {
            let _ = writeln!(out, "weights:");
            for &k in self.scheduled() {
                let entries: Vec<String> = self
                    .selection
                    .serving(k)
                    .iter()
                    .map(|&l| format!("{}={}", l, w[k].mu[l]))
                    .collect();
                let _ = writeln!(out, "  {}: {}", k, entries.join(" "));
            }
        }
        let _ = writeln!(out, "trace:");
        for e in &self.trace {
            let m: Vec<String> = e.pilot_metrics.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(
                out,
                "  ue={} tried=[{}] pilot={} metric={} {}",
                e.candidate,
                m.join(", "),
                e.chosen_pilot + 1,
                e.metric,
                if e.admitted { "admitted" } else { "rejected" }
            );
        }
        out
    }
}

/// Where the SINR-based algorithms get their SINRs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SinrSource {
    /// Closed forms, switched by load.
    Analytic(SwitchPolicy),
    /// Monte Carlo mean of instantaneous SINRs, with the same channel
    /// draws reused for every candidate pilot.
    Numerical { trials: usize, seed: u64, drop: u32 },
}

/// UE indices by descending average gain, ties by index.
pub fn gain_order(stats: &ChannelStatistics) -> Vec<usize> {
    let mut order: Vec<usize> = (0..stats.num_ues()).collect();
    order.sort_by(|&a, &b| stats.beta_bar[b].total_cmp(&stats.beta_bar[a]).then(a.cmp(&b)));
    order
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Objective {
    Minimize,
    Maximize,
}

struct Evaluation {
    metric: f64,
    weights: Option<Vec<WeightVector>>,
}

fn pilot_cap(tau_c: usize) -> Result<usize> {
    if tau_c < 2 {
        return Err(Error::Config(format!("tau_c={tau_c} leaves no room for data")));
    }
    Ok(tau_c - 1)
}

#[allow(clippy::too_many_arguments)]
fn greedy<F>(
    stats: &ChannelStatistics,
    sel: &SelectionMatrixSet,
    tau_c: usize,
    objective: Objective,
    threshold: f64,
    par: Parallelism,
    eval: F,
) -> Result<AllocationState>
where
    F: Fn(&PilotConfig) -> Result<Evaluation> + Sync + Send,
{
    let cap = pilot_cap(tau_c)?;
    let k_count = stats.num_ues();
    let mut assigned: Vec<(usize, usize)> = Vec::new();
    let mut tau_p = 0usize;
    let mut trace = Vec::new();
    let mut weights = None;
    let mut metric = f64::NAN;
    for k in gain_order(stats) {
        let n_cand = if tau_p < cap { tau_p + 1 } else { tau_p };
        let results = par.map(n_cand, |t| -> Result<Evaluation> {
            let mut a = assigned.clone();
            a.push((k, t));
            let cfg = PilotConfig::new(tau_p.max(t + 1), tau_c, k_count, &a)?;
            eval(&cfg)
        });
        let results = results.into_iter().collect::<Result<Vec<_>>>()?;
        let mut best = 0;
        for (t, r) in results.iter().enumerate() {
            let better = match objective {
                Objective::Minimize => r.metric < results[best].metric,
                Objective::Maximize => r.metric > results[best].metric,
            };
            if better {
                best = t;
            }
        }
        let chosen = &results[best];
        let admitted = match objective {
            Objective::Minimize => chosen.metric <= threshold,
            Objective::Maximize => chosen.metric >= threshold,
        };
        trace.push(TraceEntry {
            candidate: k,
            pilot_metrics: results.iter().map(|r| r.metric).collect(),
            chosen_pilot: best,
            metric: chosen.metric,
            admitted,
        });
        if !admitted {
            log::debug!("UE {k} rejected (metric {})", chosen.metric);
            break;
        }
        assigned.push((k, best));
        tau_p = tau_p.max(best + 1);
        metric = chosen.metric;
        if chosen.weights.is_some() {
            weights = chosen.weights.clone();
        }
    }
    Ok(AllocationState {
        pilots: PilotConfig::new(tau_p.max(1), tau_c, k_count, &assigned)?,
        selection: sel.clone(),
        weights,
        trace,
        unserved: Vec::new(),
        metric,
    })
}

/// Largest serving-set-restricted NMSE over the scheduled UEs of `cfg`.
pub fn max_restricted_nmse(stats: &ChannelStatistics, sel: &SelectionMatrixSet, cfg: &PilotConfig) -> Result<f64> {
    let model = EstimationModel::new(stats, cfg)?;
    let mut worst: f64 = 0.0;
    for (s, &i) in model.scheduled().iter().enumerate() {
        let (mut c, mut q) = (0.0, 0.0);
        for &l in sel.serving(i) {
            c += linalg::trace_re(&model.error_cov[s][l]);
            q += linalg::trace_re(&stats.link(i, l).q);
        }
        if q <= 0.0 {
            return Err(Error::Metric(format!("UE {i} has zero gain on its serving set")));
        }
        worst = worst.max(c / q);
    }
    Ok(worst)
}

/// NMSE-driven scheduling: admit while the worst estimation NMSE stays at
/// or below `gamma_th`.
pub fn schedule_nmse(
    stats: &ChannelStatistics,
    sel: &SelectionMatrixSet,
    gamma_th: f64,
    tau_c: usize,
    par: Parallelism,
) -> Result<AllocationState> {
    if !(gamma_th > 0.0) {
        return Err(Error::Config(format!("gamma_th={gamma_th} must be positive")));
    }
    greedy(stats, sel, tau_c, Objective::Minimize, gamma_th, par, |cfg| {
        Ok(Evaluation { metric: max_restricted_nmse(stats, sel, cfg)?, weights: None })
    })
}

/// Per-UE SINRs of `cfg`: one centralized value or one local value per
/// serving subarray, for every scheduled UE in scheduling order.
fn sinr_table(
    stats: &ChannelStatistics,
    sel: &SelectionMatrixSet,
    cfg: &PilotConfig,
    mode: Mode,
    source: SinrSource,
) -> Result<Vec<Vec<f64>>> {
    let model = EstimationModel::new(stats, cfg)?;
    match source {
        SinrSource::Analytic(policy) => model
            .scheduled()
            .iter()
            .map(|&k| deterministic::switched(mode, policy, stats, &model, sel, k).map(|d| d.values))
            .collect(),
        SinrSource::Numerical { trials, seed, drop } => {
            if trials == 0 {
                return Err(Error::Config("numerical SINR source needs trials >= 1".into()));
            }
            let central = mode == Mode::Centralized;
            let mut acc: Vec<Vec<f64>> =
                model.scheduled().iter().map(|&k| vec![0.0; if central { 1 } else { sel.l_k(k) }]).collect();
            for n in 0..trials {
                let mut rng = rng::stream(seed, Purpose::NumericalSinr, drop, n as u32);
                let (_, est) = combining::draw_estimate(stats, &model, &mut rng)?;
                let t = combining::trial_sinrs(&est, &model, sel, stats, central, !central)?;
                for (s, row) in acc.iter_mut().enumerate() {
                    if central {
                        row[0] += t.centralized[s];
                    } else {
                        for (a, v) in row.iter_mut().zip(&t.local[s]) {
                            *a += v;
                        }
                    }
                }
            }
            for row in acc.iter_mut() {
                row.iter_mut().for_each(|v| *v /= trials as f64);
            }
            Ok(acc)
        }
    }
}

fn sinr_evaluation(
    stats: &ChannelStatistics,
    sel: &SelectionMatrixSet,
    cfg: &PilotConfig,
    mode: Mode,
    source: SinrSource,
) -> Result<Evaluation> {
    let table = sinr_table(stats, sel, cfg, mode, source)?;
    let mut min_se = f64::INFINITY;
    for row in &table {
        let g: f64 = row.iter().sum();
        min_se = min_se.min(combining::se_map(g, cfg.tau_p, cfg.tau_c)?);
    }
    let weights = if mode == Mode::Distributed {
        let mut w = vec![WeightVector { mu: vec![0.0; stats.num_subarrays()] }; stats.num_ues()];
        for (row, &k) in table.iter().zip(cfg.scheduled()) {
            w[k] = combining::compute_weights(WeightingStrategy::Optimal, Some(row), stats, sel.serving(k), k)?;
        }
        Some(w)
    } else {
        None
    };
    Ok(Evaluation { metric: min_se, weights })
}

/// Max-min SE scheduling for centralized operation.
pub fn schedule_sinr_centralized(
    stats: &ChannelStatistics,
    sel: &SelectionMatrixSet,
    eta_th: f64,
    tau_c: usize,
    source: SinrSource,
    par: Parallelism,
) -> Result<AllocationState> {
    schedule_sinr(stats, sel, eta_th, tau_c, Mode::Centralized, source, par)
}

/// Max-min SE scheduling for distributed operation; also commits the
/// optimal combining weights of the admitted configuration.
pub fn schedule_sinr_distributed(
    stats: &ChannelStatistics,
    sel: &SelectionMatrixSet,
    eta_th: f64,
    tau_c: usize,
    source: SinrSource,
    par: Parallelism,
) -> Result<AllocationState> {
    schedule_sinr(stats, sel, eta_th, tau_c, Mode::Distributed, source, par)
}

pub fn schedule_sinr(
    stats: &ChannelStatistics,
    sel: &SelectionMatrixSet,
    eta_th: f64,
    tau_c: usize,
    mode: Mode,
    source: SinrSource,
    par: Parallelism,
) -> Result<AllocationState> {
    if !(eta_th >= 0.0) {
        return Err(Error::Config(format!("eta_th={eta_th} must be nonnegative")));
    }
    greedy(stats, sel, tau_c, Objective::Maximize, eta_th, par, |cfg| {
        sinr_evaluation(stats, sel, cfg, mode, source)
    })
}

/// The `count` strongest UEs, each with a uniformly drawn pilot out of
/// `tau_p`.
pub fn baseline_random<R: Rng + ?Sized>(
    stats: &ChannelStatistics,
    sel: &SelectionMatrixSet,
    count: usize,
    tau_p: usize,
    tau_c: usize,
    rng: &mut R,
) -> Result<AllocationState> {
    if tau_p < 1 {
        return Err(Error::Config("random assignment needs tau_p >= 1".into()));
    }
    let order = gain_order(stats);
    let a: Vec<(usize, usize)> = order.into_iter().take(count).map(|k| (k, rng.random_range(0..tau_p))).collect();
    Ok(AllocationState {
        pilots: PilotConfig::new(tau_p, tau_c, stats.num_ues(), &a)?,
        selection: sel.clone(),
        weights: None,
        trace: Vec::new(),
        unserved: Vec::new(),
        metric: f64::NAN,
    })
}

/// Pilot contamination seen by UE `k` on pilot `t`: the summed NLoS gains,
/// at `k`'s strongest subarray, of the UEs already holding `t`.
pub fn book_contamination(stats: &ChannelStatistics, pilot_of: &[Option<usize>], k: usize, t: usize) -> f64 {
    let l_star = strongest_subarray(stats, k);
    pilot_of
        .iter()
        .enumerate()
        .filter(|(_, p)| **p == Some(t))
        .map(|(i, _)| stats.link(i, l_star).beta_nlos)
        .sum()
}

fn strongest_subarray(stats: &ChannelStatistics, k: usize) -> usize {
    let scores: Vec<f64> = (0..stats.num_subarrays()).map(|l| stats.beta(k, l)).collect();
    let mut best = 0;
    for (l, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = l;
        }
    }
    best
}

/// Three-stage greedy baseline: random orthogonal seeds, contamination-
/// minimizing assignment for the rest, then each subarray keeps the
/// strongest UE on every pilot. Serving sets are produced here; UEs kept by
/// no subarray are reported as unserved and left out of the pilot config.
pub fn baseline_greedy_book<R: Rng + ?Sized>(
    stats: &ChannelStatistics,
    tau_p: usize,
    tau_c: usize,
    rng: &mut R,
) -> Result<AllocationState> {
    let k_count = stats.num_ues();
    if tau_p < 1 || tau_p > k_count {
        return Err(Error::Config(format!("tau_p={tau_p} must be in 1..={k_count}")));
    }
    let mut pilot_of = vec![None; k_count];
    let seeds = sample(rng, k_count, tau_p).into_vec();
    for (t, &k) in seeds.iter().enumerate() {
        pilot_of[k] = Some(t);
    }
    let mut trace = Vec::new();
    for k in gain_order(stats) {
        if pilot_of[k].is_some() {
            continue;
        }
        let costs: Vec<f64> = (0..tau_p).map(|t| book_contamination(stats, &pilot_of, k, t)).collect();
        let mut best = 0;
        for (t, &c) in costs.iter().enumerate() {
            if c < costs[best] {
                best = t;
            }
        }
        pilot_of[k] = Some(best);
        trace.push(TraceEntry {
            candidate: k,
            metric: costs[best],
            pilot_metrics: costs,
            chosen_pilot: best,
            admitted: true,
        });
    }
    let l_count = stats.num_subarrays();
    let mut sets = vec![Vec::new(); k_count];
    for l in 0..l_count {
        for t in 0..tau_p {
            let users: Vec<usize> = (0..k_count).filter(|&k| pilot_of[k] == Some(t)).collect();
            let scores: Vec<f64> = users.iter().map(|&k| stats.beta(k, l)).collect();
            if let Some(&j) = top_indices(&scores, 1).first() {
                sets[users[j]].push(l);
            }
        }
    }
    let unserved: Vec<usize> = (0..k_count).filter(|&k| sets[k].is_empty()).collect();
    let assigned: Vec<(usize, usize)> = gain_order(stats)
        .into_iter()
        .filter(|k| !sets[*k].is_empty())
        .map(|k| (k, pilot_of[k].unwrap()))
        .collect();
    Ok(AllocationState {
        pilots: PilotConfig::new(tau_p, tau_c, k_count, &assigned)?,
        selection: SelectionMatrixSet::new(sets, l_count)?,
        weights: None,
        trace,
        unserved,
        metric: f64::NAN,
    })
}

/// Per-UE Monte Carlo mean SE (scheduling order) of an allocation; the
/// distributed SINR is the exact global one under optimal weights.
#[allow(clippy::too_many_arguments)]
pub fn mean_se_monte_carlo(
    stats: &ChannelStatistics,
    sel: &SelectionMatrixSet,
    pilots: &PilotConfig,
    mode: Mode,
    trials: usize,
    seed: u64,
    drop: u32,
    par: Parallelism,
) -> Result<Vec<f64>> {
    if trials == 0 {
        return Err(Error::Config("trials must be >= 1".into()));
    }
    let model = EstimationModel::new(stats, pilots)?;
    let central = mode == Mode::Centralized;
    let per_trial = par.map(trials, |n| -> Result<Vec<f64>> {
        let mut rng = rng::stream(seed, Purpose::Channel, drop, n as u32);
        let (_, est) = combining::draw_estimate(stats, &model, &mut rng)?;
        let t = combining::trial_sinrs(&est, &model, sel, stats, central, !central)?;
        let lp = if central { None } else { Some(LocalProcessing::for_selection(&est, &model, stats, sel)?) };
        model
            .scheduled()
            .iter()
            .enumerate()
            .map(|(s, &k)| {
                let g = match &lp {
                    None => t.centralized[s],
                    Some(lp) => combining::distributed_sinr(
                        lp,
                        &est,
                        &model,
                        stats,
                        sel.serving(k),
                        k,
                        WeightingStrategy::Optimal,
                        &t.local[s],
                    )?,
                };
                combining::se_map(g, pilots.tau_p, pilots.tau_c)
            })
            .collect()
    });
    let per_trial = per_trial.into_iter().collect::<Result<Vec<_>>>()?;
    Ok((0..model.scheduled().len())
        .map(|s| {
            let xs: Vec<f64> = per_trial.iter().map(|r| r[s]).collect();
            linalg::pairwise_sum(&xs) / trials as f64
        })
        .collect())
}

#[allow(clippy::too_many_arguments)]
pub fn min_se_monte_carlo(
    stats: &ChannelStatistics,
    sel: &SelectionMatrixSet,
    pilots: &PilotConfig,
    mode: Mode,
    trials: usize,
    seed: u64,
    drop: u32,
    par: Parallelism,
) -> Result<f64> {
    Ok(mean_se_monte_carlo(stats, sel, pilots, mode, trials, seed, drop, par)?
        .into_iter()
        .fold(f64::INFINITY, f64::min))
}

/// Figure of merit for the exhaustive search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExhaustiveMetric {
    /// Min over UEs of the Monte Carlo mean SE.
    MonteCarlo { trials: usize, seed: u64, drop: u32 },
    /// Min over UEs of the SE of the switched closed form.
    Deterministic(SwitchPolicy),
}

/// All set partitions of `0..n` into at most `max_blocks` blocks, as
/// restricted growth strings (first-occurrence pilot labeling).
pub fn restricted_growth_strings(n: usize, max_blocks: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if n == 0 || max_blocks == 0 {
        return out;
    }
    let mut a = vec![0usize; n];
    fn rec(a: &mut Vec<usize>, i: usize, used: usize, max_blocks: usize, out: &mut Vec<Vec<usize>>) {
        if i == a.len() {
            out.push(a.clone());
            return;
        }
        for v in 0..=used.min(max_blocks - 1) {
            a[i] = v;
            rec(a, i + 1, used.max(v + 1), max_blocks, out);
        }
    }
    a[0] = 0;
    rec(&mut a, 1, 1, max_blocks, &mut out);
    out
}

/// Schedules every UE and searches all pilot partitions with at most
/// `tau_c - 1` pilots for the largest minimum SE.
pub fn exhaustive_search(
    stats: &ChannelStatistics,
    sel: &SelectionMatrixSet,
    tau_c: usize,
    mode: Mode,
    metric: ExhaustiveMetric,
    par: Parallelism,
) -> Result<AllocationState> {
    let k_count = stats.num_ues();
    if k_count > EXHAUSTIVE_MAX_UES {
        return Err(Error::Config(format!(
            "exhaustive search limited to {EXHAUSTIVE_MAX_UES} UEs, got {k_count}"
        )));
    }
    let cap = pilot_cap(tau_c)?;
    let order = gain_order(stats);
    let strings = restricted_growth_strings(k_count, cap);
    let values = par.map(strings.len(), |j| -> Result<f64> {
        let rgs = &strings[j];
        let tau_p = rgs.iter().max().map_or(1, |m| m + 1);
        let a: Vec<(usize, usize)> = order.iter().zip(rgs).map(|(&k, &t)| (k, t)).collect();
        let cfg = PilotConfig::new(tau_p, tau_c, k_count, &a)?;
        match metric {
            ExhaustiveMetric::MonteCarlo { trials, seed, drop } => {
                min_se_monte_carlo(stats, sel, &cfg, mode, trials, seed, drop, Parallelism::Sequential)
            }
            ExhaustiveMetric::Deterministic(policy) => {
                sinr_evaluation(stats, sel, &cfg, mode, SinrSource::Analytic(policy)).map(|e| e.metric)
            }
        }
    });
    let values = values.into_iter().collect::<Result<Vec<_>>>()?;
    let mut best = 0;
    for (j, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = j;
        }
    }
    let rgs = &strings[best];
    let tau_p = rgs.iter().max().map_or(1, |m| m + 1);
    let a: Vec<(usize, usize)> = order.iter().zip(rgs).map(|(&k, &t)| (k, t)).collect();
    Ok(AllocationState {
        pilots: PilotConfig::new(tau_p, tau_c, k_count, &a)?,
        selection: sel.clone(),
        weights: None,
        trace: Vec::new(),
        unserved: Vec::new(),
        metric: values[best],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::CVec;

    /// NLoS-only statistics, `R_kl = beta_kl I`.
    fn stats_from_gains(gains: &[Vec<f64>], m: usize, noise: f64) -> ChannelStatistics {
        let k = gains.len();
        ChannelStatistics::from_parts(
            vec![vec![CVec::zeros(m); gains[0].len()]; k],
            gains
                .iter()
                .map(|row| row.iter().map(|&b| linalg::scaled_identity(m, b)).collect())
                .collect(),
            vec![1.0; k],
            noise,
        )
        .unwrap()
    }

    #[test]
    fn single_ue_gets_first_pilot() {
        let stats = stats_from_gains(&[vec![1.0, 0.5]], 2, 0.1);
        let sel = SelectionMatrixSet::full(1, 2);
        let a = schedule_nmse(&stats, &sel, 0.5, 10, Parallelism::Sequential).unwrap();
        assert_eq!(a.scheduled(), &[0]);
        assert_eq!(a.pilots.pilot(0), Some(0));
        assert_eq!(a.pilots.tau_p, 1);
    }

    #[test]
    fn nmse_threshold_one_schedules_everybody() {
        let gains: Vec<Vec<f64>> = (0..5).map(|k| vec![1.0 / (k + 1) as f64, 0.3]).collect();
        let stats = stats_from_gains(&gains, 2, 0.1);
        let sel = SelectionMatrixSet::full(5, 2);
        let a = schedule_nmse(&stats, &sel, 1.0, usize::MAX, Parallelism::Sequential).unwrap();
        assert_eq!(a.num_scheduled(), 5);
        assert!(schedule_nmse(&stats, &sel, 0.0, 10, Parallelism::Sequential).is_err());
    }

    #[test]
    fn identical_ues_get_distinct_pilots_under_tight_nmse() {
        let stats = stats_from_gains(&[vec![1.0], vec![1.0]], 2, 0.1);
        let sel = SelectionMatrixSet::full(2, 1);
        let shared = max_restricted_nmse(&stats, &sel, &PilotConfig::new(1, 10, 2, &[(0, 0), (1, 0)]).unwrap()).unwrap();
        let apart = max_restricted_nmse(&stats, &sel, &PilotConfig::new(2, 10, 2, &[(0, 0), (1, 1)]).unwrap()).unwrap();
        assert!(apart < shared);
        let a = schedule_nmse(&stats, &sel, (apart + shared) / 2.0, 10, Parallelism::Sequential).unwrap();
        assert_eq!(a.num_scheduled(), 2);
        assert_ne!(a.pilots.pilot(0), a.pilots.pilot(1));
    }

    #[test]
    fn zero_threshold_admits_all_and_pilots_are_dense() {
        let gains: Vec<Vec<f64>> = (0..6).map(|k| vec![1.0 + k as f64, 2.0, 0.5 * k as f64 + 0.1]).collect();
        let stats = stats_from_gains(&gains, 2, 0.2);
        let sel = SelectionMatrixSet::full(6, 3);
        for mode in [Mode::Centralized, Mode::Distributed] {
            let a = schedule_sinr(
                &stats,
                &sel,
                0.0,
                5,
                mode,
                SinrSource::Analytic(SwitchPolicy::Table { correlated: false }),
                Parallelism::Sequential,
            )
            .unwrap();
            assert_eq!(a.num_scheduled(), 6);
            assert!(a.pilots.tau_p <= 4);
            let mut used = vec![false; a.pilots.tau_p];
            for &k in a.scheduled() {
                used[a.pilots.pilot(k).unwrap()] = true;
            }
            assert!(used.iter().all(|&u| u));
            // Admission order is descending average gain.
            assert_eq!(a.scheduled(), gain_order(&stats).as_slice());
        }
    }

    #[test]
    fn disjoint_ues_reuse_a_pilot() {
        // Each UE only sees its own subarray.
        let stats = stats_from_gains(&[vec![1.0, 0.0], vec![0.0, 1.0]], 2, 0.01);
        let sel = SelectionMatrixSet::new(vec![vec![0], vec![1]], 2).unwrap();
        let a = schedule_sinr_centralized(
            &stats,
            &sel,
            0.0,
            10,
            SinrSource::Analytic(SwitchPolicy::Fixed(0)),
            Parallelism::Sequential,
        )
        .unwrap();
        assert_eq!(a.pilots.pilot(0), a.pilots.pilot(1));
        assert_eq!(a.pilots.tau_p, 1);
    }

    #[test]
    fn distributed_singleton_weights_are_one() {
        let gains: Vec<Vec<f64>> = (0..3).map(|k| vec![1.0 + k as f64, 0.5]).collect();
        let stats = stats_from_gains(&gains, 2, 0.2);
        let sel = SelectionMatrixSet::new(vec![vec![0], vec![1], vec![0]], 2).unwrap();
        let a = schedule_sinr_distributed(
            &stats,
            &sel,
            0.0,
            10,
            SinrSource::Analytic(SwitchPolicy::Table { correlated: true }),
            Parallelism::Sequential,
        )
        .unwrap();
        let w = a.weights.clone().unwrap();
        for &k in a.scheduled() {
            assert_eq!(w[k].mu[sel.serving(k)[0]], 1.0);
        }
    }

    #[test]
    fn random_baseline_ranges() {
        let gains: Vec<Vec<f64>> = (0..6).map(|k| vec![1.0 + k as f64]).collect();
        let stats = stats_from_gains(&gains, 1, 0.2);
        let sel = SelectionMatrixSet::full(6, 1);
        let mut rng = rng::stream(3, Purpose::PilotAssignment, 0, 0);
        let a = baseline_random(&stats, &sel, 6, 1, 10, &mut rng).unwrap();
        assert!(a.scheduled().iter().all(|&k| a.pilots.pilot(k) == Some(0)));
        let mut r1 = rng::stream(3, Purpose::PilotAssignment, 0, 0);
        let mut r2 = rng::stream(3, Purpose::PilotAssignment, 0, 0);
        let b1 = baseline_random(&stats, &sel, 4, 3, 10, &mut r1).unwrap();
        let b2 = baseline_random(&stats, &sel, 4, 3, 10, &mut r2).unwrap();
        assert_eq!(b1.pilots, b2.pilots);
        assert!(b1.scheduled().iter().all(|&k| b1.pilots.pilot(k).unwrap() < 3));
        assert!(baseline_random(&stats, &sel, 4, 0, 10, &mut r1).is_err());
    }

    #[test]
    fn greedy_book_stages() {
        let gains: Vec<Vec<f64>> = (0..4).map(|k| vec![1.0 + k as f64, 2.0 - 0.1 * k as f64]).collect();
        let stats = stats_from_gains(&gains, 1, 0.2);
        let mut rng = rng::stream(1, Purpose::GreedyBook, 0, 0);
        let all = baseline_greedy_book(&stats, 4, 10, &mut rng).unwrap();
        assert!(all.unserved.is_empty());
        assert_eq!(all.num_scheduled(), 4);

        // Two UEs on one pilot, same strongest subarray: only the stronger one
        // keeps each subarray.
        let two = stats_from_gains(&[vec![2.0, 1.0], vec![1.0, 0.5]], 1, 0.2);
        let mut rng = rng::stream(1, Purpose::GreedyBook, 0, 0);
        let a = baseline_greedy_book(&two, 1, 10, &mut rng).unwrap();
        assert_eq!(a.selection.serving(0), &[0, 1]);
        assert_eq!(a.unserved, vec![1]);
        assert_eq!(a.scheduled(), &[0]);
        assert!(baseline_greedy_book(&two, 3, 10, &mut rng).is_err());
    }

    #[test]
    fn book_contamination_matches_brute_force() {
        let gains: Vec<Vec<f64>> = (0..6).map(|k| vec![0.3 * k as f64 + 0.1, 1.0, 2.0 - 0.2 * k as f64]).collect();
        let stats = stats_from_gains(&gains, 1, 0.2);
        let mut rng = rng::stream(9, Purpose::Oracle, 0, 0);
        for _ in 0..50 {
            let pilot_of: Vec<Option<usize>> =
                (0..6).map(|_| if rng.random_bool(0.3) { None } else { Some(rng.random_range(0..3)) }).collect();
            for k in 0..6 {
                let l_star = (0..3)
                    .rev()
                    .max_by(|&x, &y| gains[k][x].total_cmp(&gains[k][y]))
                    .unwrap();
                for t in 0..3 {
                    let brute: f64 = (0..6).filter(|&i| pilot_of[i] == Some(t)).map(|i| gains[i][l_star]).sum();
                    assert!((brute - book_contamination(&stats, &pilot_of, k, t)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn partitions_are_canonical() {
        assert_eq!(restricted_growth_strings(1, 3), vec![vec![0]]);
        assert_eq!(restricted_growth_strings(3, 10).len(), 5);
        assert_eq!(restricted_growth_strings(6, 10).len(), 203);
        assert_eq!(restricted_growth_strings(4, 2).len(), 8);
    }

    #[test]
    fn exhaustive_two_ues_matches_hand_enumeration() {
        let stats = stats_from_gains(&[vec![1.0, 0.2], vec![0.2, 1.0]], 2, 0.05);
        let sel = SelectionMatrixSet::full(2, 2);
        let policy = SwitchPolicy::Fixed(0);
        let ex = exhaustive_search(
            &stats,
            &sel,
            20,
            Mode::Centralized,
            ExhaustiveMetric::Deterministic(policy),
            Parallelism::Sequential,
        )
        .unwrap();
        let eval = |cfg: PilotConfig| {
            sinr_evaluation(&stats, &sel, &cfg, Mode::Centralized, SinrSource::Analytic(policy)).unwrap().metric
        };
        let shared = eval(PilotConfig::new(1, 20, 2, &[(0, 0), (1, 0)]).unwrap());
        let apart = eval(PilotConfig::new(2, 20, 2, &[(0, 0), (1, 1)]).unwrap());
        assert_eq!(ex.metric, shared.max(apart));
        let too_many = stats_from_gains(&vec![vec![1.0]; 9], 1, 0.1);
        assert!(exhaustive_search(
            &too_many,
            &SelectionMatrixSet::full(9, 1),
            20,
            Mode::Centralized,
            ExhaustiveMetric::Deterministic(policy),
            Parallelism::Sequential
        )
        .is_err());
    }
}
