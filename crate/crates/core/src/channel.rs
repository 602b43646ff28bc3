//! Channel realizations and MMSE estimation under pilot contamination.
//!
//! Pilot observations are formed after despreading with the pilot sequence of
//! length `tau_p`: at subarray `l`, pilot `t` gives
//!
//! ```text
//! y_tl = sum_{i in P_t} sqrt(p_i) tau_p h_il + n_tl,   n_tl ~ CN(0, tau_p sigma^2 I)
//! ```
//!
//! whose covariance is `tau_p Psi_tl`. With this normalization the MMSE
//! estimator `hhat_kl = hbar_kl + sqrt(p_k) R_kl Psi^{-1} (y_tl - E[y_tl])`
//! has error covariance `C_kl = R_kl - p_k tau_p R_kl Psi^{-1} R_kl`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{self, CMat, CVec, Ldlh, C64};
use crate::rng;
use crate::system_model::ChannelStatistics;

/// Scheduled UEs and their pilot indices (0-based internally).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PilotConfig {
    pub tau_p: usize,
    pub tau_c: usize,
    scheduled: Vec<usize>,
    pilot_of: Vec<Option<usize>>,
}

impl PilotConfig {
    /// `assignments` lists `(ue, pilot)` in scheduling order.
    pub fn new(tau_p: usize, tau_c: usize, num_ues: usize, assignments: &[(usize, usize)]) -> Result<Self> {
        if tau_p == 0 || tau_p > tau_c {
            return Err(Error::Pilot(format!("need 1 <= tau_p={tau_p} <= tau_c={tau_c}")));
        }
        let mut pilot_of = vec![None; num_ues];
        let mut scheduled = Vec::with_capacity(assignments.len());
        for &(k, t) in assignments {
            if k >= num_ues {
                return Err(Error::Index { index: k, len: num_ues });
            }
            if t >= tau_p {
                return Err(Error::Pilot(format!("UE {k} pilot {t} outside 0..{tau_p}")));
            }
            if pilot_of[k].replace(t).is_some() {
                return Err(Error::Pilot(format!("UE {k} assigned twice")));
            }
            scheduled.push(k);
        }
        Ok(PilotConfig { tau_p, tau_c, scheduled, pilot_of })
    }

    /// Every UE gets its own pilot, in index order.
    pub fn orthogonal(num_ues: usize, tau_c: usize) -> Result<Self> {
        let a: Vec<_> = (0..num_ues).map(|k| (k, k)).collect();
        PilotConfig::new(num_ues.max(1), tau_c, num_ues, &a)
    }

    pub fn scheduled(&self) -> &[usize] {
        &self.scheduled
    }

    pub fn num_ues(&self) -> usize {
        self.pilot_of.len()
    }

    pub fn pilot(&self, k: usize) -> Option<usize> {
        self.pilot_of.get(k).copied().flatten()
    }

    /// `P_t` in scheduling order.
    pub fn sharers(&self, t: usize) -> Vec<usize> {
        self.scheduled.iter().copied().filter(|&k| self.pilot_of[k] == Some(t)).collect()
    }

    /// Whether any pilot is shared by two or more scheduled UEs.
    pub fn has_reuse(&self) -> bool {
        let mut counts = vec![0usize; self.tau_p];
        for &k in &self.scheduled {
            let t = self.pilot_of[k].expect("scheduled UE has a pilot");
            counts[t] += 1;
            if counts[t] > 1 {
                return true;
            }
        }
        false
    }

    /// `1 - tau_p / tau_c`.
    pub fn data_fraction(&self) -> f64 {
        1.0 - self.tau_p as f64 / self.tau_c as f64
    }

    pub fn with_tau_p(&self, tau_p: usize) -> Result<Self> {
        let a: Vec<_> = self.scheduled.iter().map(|&k| (k, self.pilot_of[k].unwrap())).collect();
        PilotConfig::new(tau_p, self.tau_c, self.num_ues(), &a)
    }
}

/// `Psi_tl = sum_{i in P_t} p_i tau_p R_il + sigma^2 I`, indexed `[t][l]`.
pub fn pilot_matrices(stats: &ChannelStatistics, pilots: &PilotConfig) -> Result<Vec<Vec<CMat>>> {
    if pilots.scheduled().is_empty() {
        return Err(Error::Pilot("empty scheduled set".into()));
    }
    let m = stats.num_antennas();
    let tau = pilots.tau_p as f64;
    Ok((0..pilots.tau_p)
        .map(|t| {
            let sharers = pilots.sharers(t);
            (0..stats.num_subarrays())
                .map(|l| {
                    let mut psi = linalg::scaled_identity(m, stats.noise_power);
                    for &i in &sharers {
                        psi += &stats.link(i, l).r * C64::new(stats.power[i] * tau, 0.0);
                    }
                    psi
                })
                .collect()
        })
        .collect())
}

/// Pilot-dependent second-order quantities shared by every trial.
#[derive(Debug, Clone)]
pub struct EstimationModel {
    pub pilots: PilotConfig,
    /// `Psi[t][l]`.
    pub psi: Vec<Vec<CMat>>,
    /// `C[s][l]` for scheduled position `s`.
    pub error_cov: Vec<Vec<CMat>>,
    /// `sqrt(p_k) R_kl Psi^{-1}` per `[s][l]`.
    gain: Vec<Vec<CMat>>,
    /// `sum_{i in U} p_i C_il` per subarray.
    pub weighted_error_sum: Vec<CMat>,
    /// Scheduled position of each UE.
    position: Vec<Option<usize>>,
}

impl EstimationModel {
    pub fn new(stats: &ChannelStatistics, pilots: &PilotConfig) -> Result<Self> {
        if pilots.num_ues() != stats.num_ues() {
            return Err(Error::Dimension("pilot config and statistics disagree on K".into()));
        }
        let psi = pilot_matrices(stats, pilots)?;
        let tau = pilots.tau_p as f64;
        let l_count = stats.num_subarrays();
        let factors: Vec<Vec<Ldlh>> = psi
            .iter()
            .map(|row| row.iter().map(Ldlh::factor).collect::<Result<Vec<_>>>())
            .collect::<Result<_>>()?;
        let mut error_cov = Vec::with_capacity(pilots.scheduled().len());
        let mut gain = Vec::with_capacity(pilots.scheduled().len());
        let mut position = vec![None; stats.num_ues()];
        for (s, &k) in pilots.scheduled().iter().enumerate() {
            position[k] = Some(s);
            let t = pilots.pilot(k).ok_or_else(|| Error::Pilot(format!("UE {k} has no pilot")))?;
            let p = stats.power[k];
            let mut ck = Vec::with_capacity(l_count);
            let mut gk = Vec::with_capacity(l_count);
            for l in 0..l_count {
                let r = &stats.link(k, l).r;
                // Psi^{-1} R, then R Psi^{-1} = (Psi^{-1} R)^H.
                let psi_inv_r = factors[t][l].solve_mat(r);
                let r_psi_inv = psi_inv_r.adjoint();
                let c = r - (r * &psi_inv_r) * C64::new(p * tau, 0.0);
                ck.push(linalg::hermitian_part(&c));
                gk.push(r_psi_inv * C64::new(p.sqrt(), 0.0));
            }
            error_cov.push(ck);
            gain.push(gk);
        }
        let m = stats.num_antennas();
        let weighted_error_sum = (0..l_count)
            .map(|l| {
                let mut acc = CMat::zeros(m, m);
                for (s, &k) in pilots.scheduled().iter().enumerate() {
                    acc += &error_cov[s][l] * C64::new(stats.power[k], 0.0);
                }
                acc
            })
            .collect();
        Ok(EstimationModel { pilots: pilots.clone(), psi, error_cov, gain, weighted_error_sum, position })
    }

    pub fn position(&self, k: usize) -> Option<usize> {
        self.position.get(k).copied().flatten()
    }

    pub fn scheduled(&self) -> &[usize] {
        self.pilots.scheduled()
    }

    /// `C_kl` for scheduled UE `k`.
    pub fn c(&self, k: usize, l: usize) -> &CMat {
        &self.error_cov[self.position(k).expect("UE is scheduled")][l]
    }

    /// `A_kil = sqrt(p_k p_i) tau_p R_kl Psi^{-1} R_il`, the cross-covariance
    /// of two pilot-sharing estimates.
    pub fn cross_covariance(&self, stats: &ChannelStatistics, k: usize, i: usize, l: usize) -> Result<CMat> {
        let t = self.pilots.pilot(k).ok_or_else(|| Error::Pilot(format!("UE {k} unscheduled")))?;
        if self.pilots.pilot(i) != Some(t) {
            return Ok(CMat::zeros(stats.num_antennas(), stats.num_antennas()));
        }
        let f = Ldlh::factor(&self.psi[t][l])?;
        let x = f.solve_mat(&stats.link(i, l).r);
        let scale = (stats.power[k] * stats.power[i]).sqrt() * self.pilots.tau_p as f64;
        Ok((&stats.link(k, l).r * x) * C64::new(scale, 0.0))
    }
}

/// True channels of the scheduled UEs, `h[s][l]`.
#[derive(Debug, Clone)]
pub struct ChannelRealization {
    pub h: Vec<Vec<CVec>>,
}

/// MMSE estimates of the scheduled UEs, `hhat[s][l]`.
#[derive(Debug, Clone)]
pub struct ChannelEstimate {
    pub hhat: Vec<Vec<CVec>>,
}

/// Draws `h_kl = hbar_kl + R_kl^{1/2} w` independently for every scheduled
/// UE and subarray.
pub fn sample_channel<R: Rng + ?Sized>(
    stats: &ChannelStatistics,
    scheduled: &[usize],
    rng: &mut R,
) -> Result<ChannelRealization> {
    let m = stats.num_antennas();
    let h = scheduled
        .iter()
        .map(|&k| {
            (0..stats.num_subarrays())
                .map(|l| {
                    let link = stats.link(k, l);
                    let w = rng::complex_normal_vec(rng, m);
                    Ok(&link.hbar + link.r_sqrt()? * w)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ChannelRealization { h })
}

/// Despreads the pilot observations for `real` (drawing pilot noise from
/// `rng`) and returns the MMSE estimates.
pub fn mmse_estimate<R: Rng + ?Sized>(
    real: &ChannelRealization,
    stats: &ChannelStatistics,
    model: &EstimationModel,
    rng: &mut R,
) -> Result<ChannelEstimate> {
    let pilots = &model.pilots;
    let scheduled = pilots.scheduled();
    if real.h.len() != scheduled.len() {
        return Err(Error::Dimension("realization does not match scheduled set".into()));
    }
    let m = stats.num_antennas();
    let l_count = stats.num_subarrays();
    let tau = pilots.tau_p as f64;
    let noise_std = (tau * stats.noise_power).sqrt();
    // Centered observation y_tl - E[y_tl] per pilot and subarray.
    let mut centered = vec![vec![CVec::zeros(m); l_count]; pilots.tau_p];
    for (t, row) in centered.iter_mut().enumerate() {
        let sharers = pilots.sharers(t);
        for (l, y) in row.iter_mut().enumerate() {
            for &i in &sharers {
                let s = model.position(i).expect("sharer is scheduled");
                let dev = &real.h[s][l] - &stats.link(i, l).hbar;
                *y += dev * C64::new(stats.power[i].sqrt() * tau, 0.0);
            }
            *y += rng::complex_normal_vec(rng, m) * C64::new(noise_std, 0.0);
        }
    }
    let hhat = scheduled
        .iter()
        .enumerate()
        .map(|(s, &k)| {
            let t = pilots.pilot(k).ok_or_else(|| Error::Pilot(format!("UE {k} has no pilot")))?;
            Ok((0..l_count)
                .map(|l| &stats.link(k, l).hbar + &model.gain[s][l] * &centered[t][l])
                .collect())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ChannelEstimate { hhat })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NmseScope {
    PerSubarray,
    Global,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NmseReport {
    /// `gamma_kl` per scheduled position and subarray (empty for global scope).
    pub per_link: Vec<Vec<f64>>,
    /// `gamma_k` per scheduled position.
    pub per_ue: Vec<f64>,
}

pub fn nmse(model: &EstimationModel, stats: &ChannelStatistics, scope: NmseScope) -> Result<NmseReport> {
    let mut per_link = Vec::new();
    let mut per_ue = Vec::with_capacity(model.scheduled().len());
    for (s, &k) in model.scheduled().iter().enumerate() {
        let mut tc = 0.0;
        let mut tq = 0.0;
        let mut row = Vec::new();
        for l in 0..stats.num_subarrays() {
            let c = linalg::trace_re(&model.error_cov[s][l]);
            let q = linalg::trace_re(&stats.link(k, l).q);
            if scope == NmseScope::PerSubarray {
                if q <= 0.0 {
                    return Err(Error::Metric(format!("tr(Q) = 0 for UE {k}, subarray {l}")));
                }
                row.push(c / q);
            }
            tc += c;
            tq += q;
        }
        if tq <= 0.0 {
            return Err(Error::Metric(format!("UE {k} has zero gain everywhere")));
        }
        per_ue.push(tc / tq);
        if scope == NmseScope::PerSubarray {
            per_link.push(row);
        }
    }
    Ok(NmseReport { per_link, per_ue })
}
