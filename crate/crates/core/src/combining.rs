//! Instantaneous combiners, SINRs and spectral efficiencies.
//!
//! Centralized quantities are computed on the reduced `M L_k` coordinates of
//! the serving set `D_k` (the zero blocks of `D_k` never enter). Distributed
//! quantities factor the per-subarray matrix `W_l` once per realization and
//! reuse it for every UE served there.

use crate::channel::{mmse_estimate, sample_channel, ChannelEstimate, ChannelRealization, EstimationModel};
use crate::error::{Error, Result};
use crate::linalg::{self, CMat, CVec, Ldlh, C64};
use crate::system_model::{ChannelStatistics, SelectionMatrixSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightingStrategy {
    Optimal,
    Lsf,
    Equal,
}

impl WeightingStrategy {
    pub fn name(&self) -> &'static str {
        match self {
            WeightingStrategy::Optimal => "optimal",
            WeightingStrategy::Lsf => "lsf",
            WeightingStrategy::Equal => "equal",
        }
    }
}

/// Combining weights `mu_kl` over all `L` subarrays for one UE.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    pub mu: Vec<f64>,
}

impl WeightVector {
    /// Weights restricted to `serving`, in that order.
    pub fn on(&self, serving: &[usize]) -> Vec<f64> {
        serving.iter().map(|&l| self.mu[l]).collect()
    }
}

/// Stacked estimate `[hhat_kl]_{l in D_k}`.
fn stacked_estimate(est: &ChannelEstimate, s: usize, serving: &[usize], m: usize) -> CVec {
    let mut out = CVec::zeros(m * serving.len());
    for (b, &l) in serving.iter().enumerate() {
        out.rows_mut(b * m, m).copy_from(&est.hhat[s][l]);
    }
    out
}

/// `sum_i p_i C_i` restricted to `D_k`, plus `sigma^2 I`.
fn reduced_error_plus_noise(model: &EstimationModel, stats: &ChannelStatistics, serving: &[usize]) -> CMat {
    let m = stats.num_antennas();
    let n = m * serving.len();
    let mut z = linalg::scaled_identity(n, stats.noise_power);
    for (b, &l) in serving.iter().enumerate() {
        let mut blk = z.view_mut((b * m, b * m), (m, m));
        blk += &model.weighted_error_sum[l];
    }
    z
}

fn position(model: &EstimationModel, k: usize) -> Result<usize> {
    model.position(k).ok_or_else(|| Error::Allocation(format!("UE {k} is not scheduled")))
}

/// Reduced interference-plus-noise matrix `Z_k` (all scheduled UEs except
/// `k`, restricted to `D_k`).
pub fn centralized_z(
    est: &ChannelEstimate,
    model: &EstimationModel,
    stats: &ChannelStatistics,
    serving: &[usize],
    k: usize,
) -> Result<CMat> {
    let m = stats.num_antennas();
    let mut z = reduced_error_plus_noise(model, stats, serving);
    for (s, &i) in model.scheduled().iter().enumerate() {
        if i != k {
            linalg::add_outer(&mut z, &stacked_estimate(est, s, serving, m), stats.power[i]);
        }
    }
    Ok(z)
}

/// `v_k = p_k W^{-1} D_k hhat_k`, returned in full `M L` coordinates.
pub fn centralized_combiner(
    est: &ChannelEstimate,
    model: &EstimationModel,
    sel: &SelectionMatrixSet,
    stats: &ChannelStatistics,
    k: usize,
) -> Result<CVec> {
    let s = position(model, k)?;
    let serving = sel.serving(k);
    let m = stats.num_antennas();
    let mut w = centralized_z(est, model, stats, serving, k)?;
    let hk = stacked_estimate(est, s, serving, m);
    linalg::add_outer(&mut w, &hk, stats.power[k]);
    let v = Ldlh::factor(&w)?.solve_vec(&hk) * C64::new(stats.power[k], 0.0);
    let mut full = CVec::zeros(m * stats.num_subarrays());
    for (b, &l) in serving.iter().enumerate() {
        full.rows_mut(l * m, m).copy_from(&v.rows(b * m, m));
    }
    Ok(full)
}

/// `Gamma_k = p_k hhat^H D Z_k^{-1} D hhat`.
pub fn centralized_sinr(
    est: &ChannelEstimate,
    model: &EstimationModel,
    sel: &SelectionMatrixSet,
    stats: &ChannelStatistics,
    k: usize,
) -> Result<f64> {
    let s = position(model, k)?;
    let serving = sel.serving(k);
    let z = centralized_z(est, model, stats, serving, k)?;
    let hk = stacked_estimate(est, s, serving, stats.num_antennas());
    Ok(stats.power[k] * Ldlh::factor(&z)?.inv_quad_form(&hk))
}

/// SINR of an arbitrary combiner `v` (full `M L` coordinates) for UE `k`:
/// `p_k |v^H D hhat_k|^2 / (v^H D Z_k D v)`.
pub fn centralized_sinr_for(
    v: &CVec,
    est: &ChannelEstimate,
    model: &EstimationModel,
    sel: &SelectionMatrixSet,
    stats: &ChannelStatistics,
    k: usize,
) -> Result<f64> {
    let s_k = position(model, k)?;
    let serving = sel.serving(k);
    let m = stats.num_antennas();
    let mut vr = CVec::zeros(m * serving.len());
    for (b, &l) in serving.iter().enumerate() {
        vr.rows_mut(b * m, m).copy_from(&v.rows(l * m, m));
    }
    let proj = |s: usize| vr.dotc(&stacked_estimate(est, s, serving, m));
    let signal = stats.power[k] * proj(s_k).norm_sqr();
    let mut denom = 0.0;
    for (s, &i) in model.scheduled().iter().enumerate() {
        if i != k {
            denom += stats.power[i] * proj(s).norm_sqr();
        }
    }
    let ez = reduced_error_plus_noise(model, stats, serving);
    denom += vr.dotc(&(&ez * &vr)).re;
    Ok(signal / denom)
}

/// Factored `W_l` for every subarray that serves somebody in this
/// realization.
pub struct LocalProcessing<'a> {
    est: &'a ChannelEstimate,
    model: &'a EstimationModel,
    stats: &'a ChannelStatistics,
    factors: Vec<Option<Ldlh>>,
}

impl<'a> LocalProcessing<'a> {
    /// Factors `W_l` for each `l` with `needed[l]` set.
    pub fn new(
        est: &'a ChannelEstimate,
        model: &'a EstimationModel,
        stats: &'a ChannelStatistics,
        needed: &[bool],
    ) -> Result<Self> {
        let factors = needed
            .iter()
            .enumerate()
            .map(|(l, &need)| {
                if need {
                    Ldlh::factor(&local_w(est, model, stats, l)).map(Some)
                } else {
                    Ok(None)
                }
            })
            .collect::<Result<_>>()?;
        Ok(LocalProcessing { est, model, stats, factors })
    }

    /// Factors every subarray serving a scheduled UE under `sel`.
    pub fn for_selection(
        est: &'a ChannelEstimate,
        model: &'a EstimationModel,
        stats: &'a ChannelStatistics,
        sel: &SelectionMatrixSet,
    ) -> Result<Self> {
        let mut needed = vec![false; stats.num_subarrays()];
        for &k in model.scheduled() {
            for &l in sel.serving(k) {
                needed[l] = true;
            }
        }
        Self::new(est, model, stats, &needed)
    }

    fn factor(&self, l: usize) -> Result<&Ldlh> {
        self.factors
            .get(l)
            .and_then(|f| f.as_ref())
            .ok_or_else(|| Error::Dimension(format!("W_{l} was not factored")))
    }

    /// `v_kl = p_k W_l^{-1} hhat_kl`.
    pub fn combiner(&self, k: usize, l: usize) -> Result<CVec> {
        let s = position(self.model, k)?;
        Ok(self.factor(l)?.solve_vec(&self.est.hhat[s][l]) * C64::new(self.stats.power[k], 0.0))
    }

    /// `Gamma_kl` through the rank-one identity
    /// `p h^H Z^{-1} h = a / (1 - a)` with `a = p h^H W^{-1} h`.
    pub fn sinr(&self, k: usize, l: usize) -> Result<f64> {
        let s = position(self.model, k)?;
        let a = self.stats.power[k] * self.factor(l)?.inv_quad_form(&self.est.hhat[s][l]);
        Ok(if a < 1.0 { a / (1.0 - a) } else { f64::INFINITY })
    }
}

/// `W_l = sum_i p_i (hhat_il hhat_il^H + C_il) + sigma^2 I`.
pub fn local_w(est: &ChannelEstimate, model: &EstimationModel, stats: &ChannelStatistics, l: usize) -> CMat {
    let m = stats.num_antennas();
    let mut w = &model.weighted_error_sum[l] + linalg::scaled_identity(m, stats.noise_power);
    for (s, &i) in model.scheduled().iter().enumerate() {
        linalg::add_outer(&mut w, &est.hhat[s][l], stats.power[i]);
    }
    w
}

pub fn local_combiner(
    est: &ChannelEstimate,
    model: &EstimationModel,
    stats: &ChannelStatistics,
    k: usize,
    l: usize,
) -> Result<CVec> {
    let s = position(model, k)?;
    let w = local_w(est, model, stats, l);
    Ok(Ldlh::factor(&w)?.solve_vec(&est.hhat[s][l]) * C64::new(stats.power[k], 0.0))
}

/// `Gamma_kl = p_k hhat_kl^H Z_kl^{-1} hhat_kl` with `Z_kl` formed and
/// factored explicitly.
pub fn local_sinr(
    est: &ChannelEstimate,
    model: &EstimationModel,
    stats: &ChannelStatistics,
    k: usize,
    l: usize,
) -> Result<f64> {
    let s = position(model, k)?;
    let mut z = local_w(est, model, stats, l);
    linalg::add_outer(&mut z, &est.hhat[s][l], -stats.power[k]);
    Ok(stats.power[k] * Ldlh::factor(&z)?.inv_quad_form(&est.hhat[s][l]))
}

/// Local SINR of an arbitrary combiner `v` at subarray `l`.
pub fn local_sinr_for(
    v: &CVec,
    est: &ChannelEstimate,
    model: &EstimationModel,
    stats: &ChannelStatistics,
    k: usize,
    l: usize,
) -> Result<f64> {
    let s_k = position(model, k)?;
    let signal = stats.power[k] * v.dotc(&est.hhat[s_k][l]).norm_sqr();
    let mut denom = 0.0;
    for (s, &i) in model.scheduled().iter().enumerate() {
        if i != k {
            denom += stats.power[i] * v.dotc(&est.hhat[s][l]).norm_sqr();
        }
    }
    denom += v.dotc(&(&model.weighted_error_sum[l] * v)).re;
    denom += stats.noise_power * v.norm_squared();
    Ok(signal / denom)
}

/// Weights over all `L` subarrays; `local_sinrs` and `betas` are given in
/// the order of `serving`.
pub fn compute_weights(
    strategy: WeightingStrategy,
    local_sinrs: Option<&[f64]>,
    stats: &ChannelStatistics,
    serving: &[usize],
    k: usize,
) -> Result<WeightVector> {
    let l_count = stats.num_subarrays();
    let mut mu = vec![0.0; l_count];
    if serving.is_empty() {
        return Err(Error::Config(format!("UE {k} has an empty serving set")));
    }
    let equal = |mu: &mut Vec<f64>| {
        for &l in serving {
            mu[l] = 1.0 / serving.len() as f64;
        }
    };
    match strategy {
        WeightingStrategy::Equal => equal(&mut mu),
        WeightingStrategy::Lsf => {
            let total: f64 = serving.iter().map(|&l| stats.beta(k, l)).sum();
            if total > 0.0 {
                for &l in serving {
                    mu[l] = stats.beta(k, l) / total;
                }
            } else {
                equal(&mut mu);
            }
        }
        WeightingStrategy::Optimal => {
            let g = local_sinrs.ok_or_else(|| Error::Config("optimal weights need local SINRs".into()))?;
            if g.len() != serving.len() {
                return Err(Error::Dimension("one local SINR per serving subarray".into()));
            }
            let total: f64 = g.iter().filter(|x| x.is_finite() && **x > 0.0).sum();
            if total > 0.0 && total.is_finite() {
                for (&l, &gl) in serving.iter().zip(g) {
                    mu[l] = if gl > 0.0 { gl / total } else { 0.0 };
                }
            } else {
                log::warn!("UE {k}: no usable local SINR, falling back to equal weights");
                equal(&mut mu);
            }
        }
    }
    Ok(WeightVector { mu })
}

/// Global distributed SINR evaluated term by term: coherent signal and
/// interference over the serving set, weighted error and noise terms.
/// `combiners[j]` belongs to `serving[j]`.
pub fn global_sinr_exact(
    est: &ChannelEstimate,
    model: &EstimationModel,
    stats: &ChannelStatistics,
    serving: &[usize],
    weights: &WeightVector,
    combiners: &[CVec],
    k: usize,
) -> Result<f64> {
    if combiners.len() != serving.len() {
        return Err(Error::Dimension("one combiner per serving subarray".into()));
    }
    let s_k = position(model, k)?;
    let coherent = |s: usize| -> C64 {
        serving
            .iter()
            .zip(combiners)
            .map(|(&l, v)| v.dotc(&est.hhat[s][l]) * weights.mu[l])
            .sum()
    };
    let signal = stats.power[k] * coherent(s_k).norm_sqr();
    let mut denom = 0.0;
    for (s, &i) in model.scheduled().iter().enumerate() {
        if i != k {
            denom += stats.power[i] * coherent(s).norm_sqr();
        }
    }
    for (&l, v) in serving.iter().zip(combiners) {
        let mu2 = weights.mu[l] * weights.mu[l];
        denom += mu2 * v.dotc(&(&model.weighted_error_sum[l] * v)).re;
        denom += mu2 * stats.noise_power * v.norm_squared();
    }
    Ok(signal / denom)
}

/// Exact global SINR of UE `k` under `weighting`, given the local SINRs
/// over `serving` from the same realization.
#[allow(clippy::too_many_arguments)]
pub fn distributed_sinr(
    lp: &LocalProcessing<'_>,
    est: &ChannelEstimate,
    model: &EstimationModel,
    stats: &ChannelStatistics,
    serving: &[usize],
    k: usize,
    weighting: WeightingStrategy,
    local_sinrs: &[f64],
) -> Result<f64> {
    let w = compute_weights(weighting, Some(local_sinrs), stats, serving, k)?;
    let combiners: Vec<CVec> = serving.iter().map(|&l| lp.combiner(k, l)).collect::<Result<_>>()?;
    global_sinr_exact(est, model, stats, serving, &w, &combiners, k)
}

/// `(sum_l mu_l^2 / Gamma_l)^{-1}` over entries with nonzero weight.
pub fn global_sinr_approx(local_sinrs: &[f64], weights: &[f64]) -> Result<f64> {
    if local_sinrs.len() != weights.len() {
        return Err(Error::Dimension("one weight per local SINR".into()));
    }
    let mut acc = 0.0;
    for (&g, &mu) in local_sinrs.iter().zip(weights) {
        if mu == 0.0 {
            continue;
        }
        if g <= 0.0 {
            return Ok(0.0);
        }
        acc += mu * mu / g;
    }
    Ok(if acc > 0.0 { 1.0 / acc } else { 0.0 })
}

/// Instantaneous SINRs of one channel realization.
#[derive(Debug, Clone, Default)]
pub struct TrialSinrs {
    /// Centralized `Gamma_k` per scheduled position.
    pub centralized: Vec<f64>,
    /// Local `Gamma_kl` per scheduled position, over `D_k` in order.
    pub local: Vec<Vec<f64>>,
}

/// Draws one channel realization and its estimate for the scheduled UEs.
pub fn draw_estimate<R: rand::Rng + ?Sized>(
    stats: &ChannelStatistics,
    model: &EstimationModel,
    rng: &mut R,
) -> Result<(ChannelRealization, ChannelEstimate)> {
    let real = sample_channel(stats, model.scheduled(), rng)?;
    let est = mmse_estimate(&real, stats, model, rng)?;
    Ok((real, est))
}

/// Centralized and/or local SINRs of every scheduled UE for one estimate.
pub fn trial_sinrs(
    est: &ChannelEstimate,
    model: &EstimationModel,
    sel: &SelectionMatrixSet,
    stats: &ChannelStatistics,
    centralized: bool,
    distributed: bool,
) -> Result<TrialSinrs> {
    let mut out = TrialSinrs::default();
    if centralized {
        out.centralized = model
            .scheduled()
            .iter()
            .map(|&k| centralized_sinr(est, model, sel, stats, k))
            .collect::<Result<_>>()?;
    }
    if distributed {
        let lp = LocalProcessing::for_selection(est, model, stats, sel)?;
        out.local = model
            .scheduled()
            .iter()
            .map(|&k| sel.serving(k).iter().map(|&l| lp.sinr(k, l)).collect::<Result<Vec<_>>>())
            .collect::<Result<_>>()?;
    }
    Ok(out)
}

fn check_pilot_fraction(tau_p: usize, tau_c: usize) -> Result<f64> {
    if tau_c == 0 || tau_p > tau_c {
        return Err(Error::Pilot(format!("tau_p={tau_p} exceeds tau_c={tau_c}")));
    }
    Ok(1.0 - tau_p as f64 / tau_c as f64)
}

/// `g(x) = (1 - tau_p/tau_c) log2(1 + x)`.
pub fn se_map(sinr: f64, tau_p: usize, tau_c: usize) -> Result<f64> {
    Ok(check_pilot_fraction(tau_p, tau_c)? * (1.0 + sinr.max(0.0)).log2())
}

/// Component-wise mapping of local SINRs through the weighted harmonic
/// combination.
pub fn se_map_componentwise(local_sinrs: &[f64], weights: &[f64], tau_p: usize, tau_c: usize) -> Result<f64> {
    let frac = check_pilot_fraction(tau_p, tau_c)?;
    let mut acc = 0.0;
    for (&g, &mu) in local_sinrs.iter().zip(weights) {
        if mu != 0.0 {
            acc += mu * mu * g.recip();
        }
    }
    Ok(frac * (1.0 + acc.recip()).log2())
}
