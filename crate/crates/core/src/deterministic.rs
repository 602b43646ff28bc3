//! Closed-form SINR approximations from long-term statistics only.
//!
//! Ergodic (deterministic-equivalent) values replace every instantaneous
//! quantity by its second moment; asymptotic values keep only trace terms
//! that survive the large-array limit. Which one to use is decided by the
//! user load against a switching threshold.

use crate::channel::{EstimationModel, PilotConfig};
use crate::error::{Error, Result};
use crate::linalg::{self, CMat, C64};
use crate::parallel::Parallelism;
use crate::system_model::{ChannelStatistics, SelectionMatrixSet, SinrContext};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Kind {
    Ergodic,
    Asymptotic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Mode {
    Centralized,
    Distributed,
}

impl Mode {
    pub fn name(&self) -> &'static str {
        match self {
            Mode::Centralized => "centralized",
            Mode::Distributed => "distributed",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeterministicSinr {
    pub kind: Kind,
    pub mode: Mode,
    /// One value (centralized) or one per serving subarray (distributed).
    pub values: Vec<f64>,
    /// Real multiplications spent on the evaluation.
    pub multiplications: u64,
    /// Asymptotic numerators that came out negative and were set to zero.
    pub clamped: usize,
    /// Interferers skipped because their useful-signal trace vanished.
    pub skipped: usize,
}

impl DeterministicSinr {
    /// Global SINR: the centralized value, or the sum of local values (the
    /// optimum of the harmonic approximation).
    pub fn global(&self) -> f64 {
        self.values.iter().sum()
    }
}

/// Dense restriction of `Q_i` to the serving set `serving`: rank-one LoS
/// cross-blocks plus block-diagonal NLoS covariances.
fn reduced_q(stats: &ChannelStatistics, i: usize, serving: &[usize]) -> CMat {
    let m = stats.num_antennas();
    let n = m * serving.len();
    let mut out = CMat::zeros(n, n);
    for (a, &la) in serving.iter().enumerate() {
        let ha = &stats.link(i, la).hbar;
        for (b, &lb) in serving.iter().enumerate() {
            let hb = &stats.link(i, lb).hbar;
            let mut blk = out.view_mut((a * m, b * m), (m, m));
            blk += ha * hb.adjoint();
            if a == b {
                blk += &stats.link(i, la).r;
            }
        }
    }
    out
}

fn add_block_diag(target: &mut CMat, blocks: &[&CMat], scale: f64) {
    let m = blocks.first().map(|b| b.nrows()).unwrap_or(0);
    for (a, blk) in blocks.iter().enumerate() {
        let mut v = target.view_mut((a * m, a * m), (m, m));
        v += *blk * C64::new(scale, 0.0);
    }
}

fn require_scheduled(model: &EstimationModel, k: usize) -> Result<()> {
    model
        .position(k)
        .map(|_| ())
        .ok_or_else(|| Error::Allocation(format!("UE {k} is not scheduled")))
}

/// `p_k tr(Zbar_k^{-1} X_k)` on the reduced `M L_k` coordinates, with
/// `Zbar_k = sum_{i != k} p_i Q_i + p_k C_k + sigma^2 I` and `X_k = Q_k - C_k`.
pub fn ergodic_sinr_centralized(
    stats: &ChannelStatistics,
    model: &EstimationModel,
    sel: &SelectionMatrixSet,
    k: usize,
) -> Result<DeterministicSinr> {
    require_scheduled(model, k)?;
    let serving = sel.serving(k);
    let n = stats.num_antennas() * serving.len();
    let mut z = linalg::scaled_identity(n, stats.noise_power);
    for &i in model.scheduled() {
        if i != k {
            z += reduced_q(stats, i, serving) * C64::new(stats.power[i], 0.0);
        }
    }
    let ck: Vec<&CMat> = serving.iter().map(|&l| model.c(k, l)).collect();
    add_block_diag(&mut z, &ck, stats.power[k]);
    let mut x = reduced_q(stats, k, serving);
    add_block_diag(&mut x, &ck, -1.0);
    let (tr, cost) = linalg::trace_inv_times_counted(&z, &x)?;
    Ok(DeterministicSinr {
        kind: Kind::Ergodic,
        mode: Mode::Centralized,
        values: vec![(stats.power[k] * tr.re).max(0.0)],
        multiplications: cost.real_multiplications(),
        clamped: 0,
        skipped: 0,
    })
}

/// Per-subarray `p_k tr(Zbar_kl^{-1} X_kl)` for `l` in the serving set.
pub fn ergodic_sinr_distributed(
    stats: &ChannelStatistics,
    model: &EstimationModel,
    sel: &SelectionMatrixSet,
    k: usize,
) -> Result<DeterministicSinr> {
    require_scheduled(model, k)?;
    let mut values = Vec::with_capacity(sel.l_k(k));
    let mut mults = 0;
    for &l in sel.serving(k) {
        let (g, cost) = ergodic_local(stats, model, k, l)?;
        values.push(g);
        mults += cost;
    }
    Ok(DeterministicSinr {
        kind: Kind::Ergodic,
        mode: Mode::Distributed,
        values,
        multiplications: mults,
        clamped: 0,
        skipped: 0,
    })
}

fn ergodic_local(stats: &ChannelStatistics, model: &EstimationModel, k: usize, l: usize) -> Result<(f64, u64)> {
    let m = stats.num_antennas();
    let mut z = linalg::scaled_identity(m, stats.noise_power);
    for &i in model.scheduled() {
        if i != k {
            z += &stats.link(i, l).q * C64::new(stats.power[i], 0.0);
        }
    }
    let c = model.c(k, l);
    z += c * C64::new(stats.power[k], 0.0);
    let x = &stats.link(k, l).q - c;
    let (tr, cost) = linalg::trace_inv_times_counted(&z, &x)?;
    Ok(((stats.power[k] * tr.re).max(0.0), cost.real_multiplications()))
}

struct AsymptoticTerms {
    value: f64,
    mults: u64,
    clamped: bool,
    skipped: usize,
}

/// `p_k [tr X_k - sum_{i != k} tr(X_i X_k) / tr X_i] / [sum_i p_i tr C_i / N + sigma^2]`.
fn asymptotic_core(
    stats: &ChannelStatistics,
    k: usize,
    x: &[CMat],
    traces_c: &[f64],
    scheduled: &[usize],
    n: usize,
) -> AsymptoticTerms {
    let pos_k = scheduled.iter().position(|&i| i == k).expect("k scheduled");
    let xk = &x[pos_k];
    let mut numerator = linalg::trace_re(xk);
    let mut skipped = 0;
    let mut mults = 0u64;
    for (s, &i) in scheduled.iter().enumerate() {
        if i == k {
            continue;
        }
        let tr_i = linalg::trace_re(&x[s]);
        mults += 3 * (n * n) as u64;
        if tr_i <= 0.0 {
            skipped += 1;
            log::debug!("asymptotic SINR of UE {k}: interferer {i} has zero useful trace, skipped");
            continue;
        }
        numerator -= linalg::trace_of_product(&x[s], xk).re / tr_i;
    }
    let clamped = numerator < 0.0;
    if clamped {
        log::debug!("asymptotic SINR of UE {k}: negative numerator {numerator:e} clamped");
        numerator = 0.0;
    }
    let mut denom = stats.noise_power;
    for (s, &i) in scheduled.iter().enumerate() {
        denom += stats.power[i] * traces_c[s] / n as f64;
    }
    AsymptoticTerms { value: stats.power[k] * numerator / denom, mults, clamped, skipped }
}

pub fn asymptotic_sinr_centralized(
    stats: &ChannelStatistics,
    model: &EstimationModel,
    sel: &SelectionMatrixSet,
    k: usize,
) -> Result<DeterministicSinr> {
    require_scheduled(model, k)?;
    let serving = sel.serving(k);
    let n = stats.num_antennas() * serving.len();
    let scheduled = model.scheduled();
    let mut x = Vec::with_capacity(scheduled.len());
    let mut traces_c = Vec::with_capacity(scheduled.len());
    for &i in scheduled {
        let mut xi = reduced_q(stats, i, serving);
        let ci: Vec<&CMat> = serving.iter().map(|&l| model.c(i, l)).collect();
        add_block_diag(&mut xi, &ci, -1.0);
        x.push(xi);
        traces_c.push(ci.iter().map(|c| linalg::trace_re(c)).sum());
    }
    let t = asymptotic_core(stats, k, &x, &traces_c, scheduled, n);
    Ok(DeterministicSinr {
        kind: Kind::Asymptotic,
        mode: Mode::Centralized,
        values: vec![t.value],
        multiplications: t.mults,
        clamped: t.clamped as usize,
        skipped: t.skipped,
    })
}

pub fn asymptotic_sinr_distributed(
    stats: &ChannelStatistics,
    model: &EstimationModel,
    sel: &SelectionMatrixSet,
    k: usize,
) -> Result<DeterministicSinr> {
    require_scheduled(model, k)?;
    let m = stats.num_antennas();
    let scheduled = model.scheduled();
    let mut out = DeterministicSinr {
        kind: Kind::Asymptotic,
        mode: Mode::Distributed,
        values: Vec::with_capacity(sel.l_k(k)),
        multiplications: 0,
        clamped: 0,
        skipped: 0,
    };
    for &l in sel.serving(k) {
        let x: Vec<CMat> = scheduled.iter().map(|&i| &stats.link(i, l).q - model.c(i, l)).collect();
        let traces_c: Vec<f64> = scheduled.iter().map(|&i| linalg::trace_re(model.c(i, l))).collect();
        let t = asymptotic_core(stats, k, &x, &traces_c, scheduled, m);
        out.values.push(t.value);
        out.multiplications += t.mults;
        out.clamped += t.clamped as usize;
        out.skipped += t.skipped;
    }
    Ok(out)
}

/// Dispatches to one of the four closed forms.
pub fn evaluate(
    kind: Kind,
    mode: Mode,
    stats: &ChannelStatistics,
    model: &EstimationModel,
    sel: &SelectionMatrixSet,
    k: usize,
) -> Result<DeterministicSinr> {
    match (kind, mode) {
        (Kind::Ergodic, Mode::Centralized) => ergodic_sinr_centralized(stats, model, sel, k),
        (Kind::Ergodic, Mode::Distributed) => ergodic_sinr_distributed(stats, model, sel, k),
        (Kind::Asymptotic, Mode::Centralized) => asymptotic_sinr_centralized(stats, model, sel, k),
        (Kind::Asymptotic, Mode::Distributed) => asymptotic_sinr_distributed(stats, model, sel, k),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Table,
    Override,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SwitchRule {
    pub u_switch: usize,
    pub provenance: Provenance,
}

impl SwitchRule {
    pub fn fixed(u_switch: usize) -> Self {
        SwitchRule { u_switch, provenance: Provenance::Override }
    }
}

/// How the switching threshold is obtained during allocation: from the table
/// (re-evaluated for every candidate pilot configuration, since reuse may
/// appear or vanish) or as a fixed number.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SwitchPolicy {
    Table { correlated: bool },
    Fixed(usize),
}

impl SwitchPolicy {
    pub fn rule(&self, pilot_reuse: bool, mode: Mode, m: usize, l_k: usize) -> SwitchRule {
        match *self {
            SwitchPolicy::Table { correlated } => u_switch(correlated, pilot_reuse, mode, m, l_k),
            SwitchPolicy::Fixed(u) => SwitchRule::fixed(u),
        }
    }
}

/// Table lookup of the load below which the asymptotic form is used.
pub fn u_switch(correlated: bool, pilot_reuse: bool, mode: Mode, m: usize, l_k: usize) -> SwitchRule {
    let dim = match mode {
        Mode::Centralized => m * l_k,
        Mode::Distributed => m,
    };
    let u_switch = match (correlated, pilot_reuse) {
        (false, false) => dim / 2,
        (false, true) | (true, false) => dim / 4,
        (true, true) => 0,
    };
    SwitchRule { u_switch, provenance: Provenance::Table }
}

/// Asymptotic iff `u <= u_switch`.
pub fn select_approximation(u: usize, rule: SwitchRule) -> Kind {
    if u <= rule.u_switch {
        Kind::Asymptotic
    } else {
        Kind::Ergodic
    }
}

/// Real-multiplication count of one SINR evaluation.
pub fn complexity_count(kind: Kind, mode: Mode, m: u64, l_k: u64, u: u64) -> u64 {
    // 3N^3 + N^2/2 - 3N/2, with N(N - 3) always even.
    let ldl_trace = |n: u64| -> u64 {
        let n = n as i128;
        (3 * n * n * n + n * (n - 3) / 2) as u64
    };
    let others = u.saturating_sub(1);
    match (kind, mode) {
        (Kind::Ergodic, Mode::Centralized) => ldl_trace(m * l_k),
        (Kind::Ergodic, Mode::Distributed) => l_k * ldl_trace(m),
        (Kind::Asymptotic, Mode::Centralized) => 3 * others * m * m * l_k * l_k,
        (Kind::Asymptotic, Mode::Distributed) => 3 * others * m * m * l_k,
    }
}

/// Deterministic value under the load-dependent rule: asymptotic when the
/// number of scheduled UEs is at most the threshold, ergodic otherwise.
pub fn switched(
    mode: Mode,
    policy: SwitchPolicy,
    stats: &ChannelStatistics,
    model: &EstimationModel,
    sel: &SelectionMatrixSet,
    k: usize,
) -> Result<DeterministicSinr> {
    let rule = policy.rule(model.pilots.has_reuse(), mode, stats.num_antennas(), sel.l_k(k));
    let kind = select_approximation(model.scheduled().len(), rule);
    evaluate(kind, mode, stats, model, sel, k)
}

/// Ergodic local SINRs for every (UE, subarray) pair under `pilots`, used
/// to rank subarrays. Unscheduled UEs get zeros.
pub fn sinr_context(stats: &ChannelStatistics, pilots: &PilotConfig, par: Parallelism) -> Result<SinrContext> {
    let model = EstimationModel::new(stats, pilots)?;
    let l_count = stats.num_subarrays();
    let rows = par.map(stats.num_ues(), |k| -> Result<Vec<f64>> {
        if model.position(k).is_none() {
            return Ok(vec![0.0; l_count]);
        }
        (0..l_count).map(|l| ergodic_local(stats, &model, k, l).map(|(g, _)| g)).collect()
    });
    let mut gamma = Vec::with_capacity(stats.num_ues() * l_count);
    for row in rows {
        gamma.extend(row?);
    }
    Ok(SinrContext { num_subarrays: l_count, gamma })
}
