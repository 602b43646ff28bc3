//! Deployment geometry, long-term channel statistics and subarray selection.
//!
//! The array is a row of `L` planar subarrays mounted on the wall `y = 0` at
//! height `array_height`, centred on `x = 0`. Each subarray is a
//! `rows x cols` UPA in the `x-z` plane with half-wavelength spacing. UEs are
//! dropped uniformly in `[-W/2, W/2] x [0, D]` at `ue_height`.

use std::sync::OnceLock;

use rand::seq::index::sample;
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{self, CMat, CVec, C64};
use crate::rng::{self, Purpose};

const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Spatial correlation of the NLoS component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Correlation {
    /// `R = beta_nlos * I`.
    Uncorrelated,
    /// Gaussian local scattering per UPA axis, Kronecker-composed. Angular
    /// standard deviations in radians.
    LocalScattering { asd_azimuth: f64, asd_elevation: f64 },
}

impl Correlation {
    pub fn is_correlated(&self) -> bool {
        matches!(self, Correlation::LocalScattering { .. })
    }
}

/// How the LoS indicator `omega_kl` is decided.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LosMode {
    /// LoS iff the link distance is within the visibility radius.
    Visibility,
    Always,
    /// Bernoulli with a distance-dependent probability (UMi street-canyon law
    /// truncated at the visibility radius).
    Probabilistic,
    Never,
}

/// Rician factor law.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RicianLaw {
    /// `kappa = 10^(intercept - slope * d)`.
    Distance { intercept: f64, slope: f64 },
    /// Constant linear factor.
    Fixed(f64),
}

/// Geometry and statistic-model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub num_subarrays: usize,
    pub antennas_per_subarray: usize,
    /// Rows (along `x`) of each UPA; `None` means a square array.
    pub upa_rows: Option<usize>,
    pub num_ues: usize,
    pub subarray_spacing: f64,
    pub array_height: f64,
    pub ue_height: f64,
    pub area_width: f64,
    pub area_depth: f64,
    pub carrier_frequency: f64,
    pub ue_power_dbm: f64,
    pub noise_power_dbm: f64,
    pub correlation: Correlation,
    pub los_mode: LosMode,
    pub visibility_radius: f64,
    pub pathloss_intercept_db: f64,
    pub pathloss_slope_db: f64,
    pub rician: RicianLaw,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            num_subarrays: 16,
            antennas_per_subarray: 16,
            upa_rows: None,
            num_ues: 16,
            subarray_spacing: 6.0,
            array_height: 3.0,
            ue_height: 1.5,
            area_width: 100.0,
            area_depth: 50.0,
            carrier_frequency: 6e9,
            ue_power_dbm: 20.0,
            noise_power_dbm: -96.0,
            correlation: Correlation::LocalScattering {
                asd_azimuth: 15f64.to_radians(),
                asd_elevation: 15f64.to_radians(),
            },
            los_mode: LosMode::Visibility,
            visibility_radius: 60.0,
            pathloss_intercept_db: -30.5,
            pathloss_slope_db: 36.7,
            rician: RicianLaw::Distance { intercept: 1.3, slope: 0.003 },
            seed: 1,
        }
    }
}

impl ModelConfig {
    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_frequency
    }

    /// UPA shape `(rows, cols)`.
    pub fn upa_shape(&self) -> Result<(usize, usize)> {
        let m = self.antennas_per_subarray;
        match self.upa_rows {
            Some(rows) => {
                if rows == 0 || !m.is_multiple_of(rows) {
                    return Err(Error::Config(format!("upa_rows={rows} does not divide M={m}")));
                }
                Ok((rows, m / rows))
            }
            None => {
                let side = (m as f64).sqrt().round() as usize;
                if side * side != m {
                    return Err(Error::Config(format!(
                        "M={m} is not a perfect square; set upa_rows for a rectangular UPA"
                    )));
                }
                Ok((side, side))
            }
        }
    }

    pub fn ue_power(&self) -> f64 {
        dbm_to_watt(self.ue_power_dbm)
    }

    pub fn noise_power(&self) -> f64 {
        dbm_to_watt(self.noise_power_dbm)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_subarrays == 0 || self.antennas_per_subarray == 0 {
            return Err(Error::Config("L and M must be at least 1".into()));
        }
        if self.num_ues == 0 {
            return Err(Error::Config("K must be at least 1".into()));
        }
        self.upa_shape()?;
        let positive = [
            ("subarray_spacing", self.subarray_spacing),
            ("area_width", self.area_width),
            ("area_depth", self.area_depth),
            ("carrier_frequency", self.carrier_frequency),
            ("visibility_radius", self.visibility_radius),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.array_height < 0.0 || self.ue_height < 0.0 {
            return Err(Error::Config("heights must be nonnegative".into()));
        }
        if let RicianLaw::Fixed(k) = self.rician {
            if k < 0.0 {
                return Err(Error::Config(format!("negative Rician factor {k}")));
            }
        }
        if let Correlation::LocalScattering { asd_azimuth, asd_elevation } = self.correlation {
            if asd_azimuth < 0.0 || asd_elevation < 0.0 {
                return Err(Error::Config("angular spreads must be nonnegative".into()));
            }
        }
        Ok(())
    }
}

pub fn dbm_to_watt(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub type Point = [f64; 3];

#[derive(Debug, Clone, PartialEq)]
pub struct SystemGeometry {
    pub num_subarrays: usize,
    pub antennas_per_subarray: usize,
    pub upa_shape: (usize, usize),
    pub num_ues: usize,
    pub subarray_positions: Vec<Point>,
    /// Per-subarray local antenna offsets, index `row * cols + col`.
    pub antenna_offsets: Vec<Vec<Point>>,
    pub ue_positions: Vec<Point>,
    pub wavelength: f64,
    pub area: (f64, f64),
}

impl SystemGeometry {
    pub fn antenna_position(&self, l: usize, m: usize) -> Point {
        let c = self.subarray_positions[l];
        let o = self.antenna_offsets[l][m];
        [c[0] + o[0], c[1] + o[1], c[2] + o[2]]
    }
}

/// Places the subarrays and drops the UEs for `drop` of the scenario seed.
pub fn build_geometry(config: &ModelConfig, drop: u32) -> Result<SystemGeometry> {
    config.validate()?;
    let (rows, cols) = config.upa_shape()?;
    let l_count = config.num_subarrays;
    let lambda = config.wavelength();
    let half = lambda / 2.0;

    let subarray_positions: Vec<Point> = (0..l_count)
        .map(|l| {
            let x = (l as f64 - (l_count as f64 - 1.0) / 2.0) * config.subarray_spacing;
            [x, 0.0, config.array_height]
        })
        .collect();
    let offsets: Vec<Point> = (0..rows * cols)
        .map(|m| {
            let (r, c) = (m / cols, m % cols);
            [
                (r as f64 - (rows as f64 - 1.0) / 2.0) * half,
                0.0,
                (c as f64 - (cols as f64 - 1.0) / 2.0) * half,
            ]
        })
        .collect();

    let mut rng = rng::stream(config.seed, Purpose::Geometry, drop, 0);
    let (w, d) = (config.area_width, config.area_depth);
    let ue_positions = (0..config.num_ues)
        .map(|_| {
            let x = rng.random::<f64>() * w - w / 2.0;
            let y = rng.random::<f64>() * d;
            [x, y, config.ue_height]
        })
        .collect();

    Ok(SystemGeometry {
        num_subarrays: l_count,
        antennas_per_subarray: rows * cols,
        upa_shape: (rows, cols),
        num_ues: config.num_ues,
        subarray_positions,
        antenna_offsets: vec![offsets; l_count],
        ue_positions,
        wavelength: lambda,
        area: (w, d),
    })
}

/// Statistics of one UE-subarray link.
#[derive(Debug, Clone)]
pub struct LinkStatistics {
    pub hbar: CVec,
    pub r: CMat,
    pub q: CMat,
    pub beta: f64,
    pub beta_nlos: f64,
    pub los: bool,
    r_sqrt: OnceLock<std::result::Result<CMat, (f64, f64)>>,
}

impl LinkStatistics {
    pub fn new(hbar: CVec, r: CMat) -> Self {
        let m = hbar.len() as f64;
        let mut q = r.clone();
        linalg::add_outer(&mut q, &hbar, 1.0);
        let beta = linalg::trace_re(&q) / m;
        let beta_nlos = linalg::trace_re(&r) / m;
        let los = hbar.iter().any(|z| z.norm_sqr() > 0.0);
        LinkStatistics { hbar, r, q, beta, beta_nlos, los, r_sqrt: OnceLock::new() }
    }

    /// Hermitian square root of `R`, computed on first use.
    pub fn r_sqrt(&self) -> Result<&CMat> {
        self.r_sqrt
            .get_or_init(|| match linalg::psd_sqrt(&self.r) {
                Ok(s) => Ok(s),
                Err(Error::Indefinite { min_eig, max_eig }) => Err((min_eig, max_eig)),
                Err(_) => Err((f64::NAN, f64::NAN)),
            })
            .as_ref()
            .map_err(|&(min_eig, max_eig)| Error::Indefinite { min_eig, max_eig })
    }
}

#[derive(Debug, Clone)]
pub struct ChannelStatistics {
    num_antennas: usize,
    num_subarrays: usize,
    num_ues: usize,
    links: Vec<LinkStatistics>,
    pub power: Vec<f64>,
    pub noise_power: f64,
    pub beta_bar: Vec<f64>,
}

impl ChannelStatistics {
    /// Builds statistics from explicit per-link means and NLoS covariances,
    /// indexed `[k][l]`.
    pub fn from_parts(
        hbar: Vec<Vec<CVec>>,
        r: Vec<Vec<CMat>>,
        power: Vec<f64>,
        noise_power: f64,
    ) -> Result<Self> {
        let k_count = hbar.len();
        if k_count == 0 || r.len() != k_count || power.len() != k_count {
            return Err(Error::Dimension("need matching nonempty per-UE inputs".into()));
        }
        let l_count = hbar[0].len();
        let m = hbar[0].first().map(|v| v.len()).unwrap_or(0);
        if l_count == 0 || m == 0 {
            return Err(Error::Dimension("need at least one subarray and antenna".into()));
        }
        let mut links = Vec::with_capacity(k_count * l_count);
        for (hk, rk) in hbar.into_iter().zip(r) {
            if hk.len() != l_count || rk.len() != l_count {
                return Err(Error::Dimension("ragged per-subarray inputs".into()));
            }
            for (h, rr) in hk.into_iter().zip(rk) {
                if h.len() != m || rr.shape() != (m, m) {
                    return Err(Error::Dimension("link of wrong size".into()));
                }
                links.push(LinkStatistics::new(h, rr));
            }
        }
        let beta_bar = (0..k_count)
            .map(|k| links[k * l_count..(k + 1) * l_count].iter().map(|s| s.beta).sum::<f64>() / l_count as f64)
            .collect();
        Ok(ChannelStatistics {
            num_antennas: m,
            num_subarrays: l_count,
            num_ues: k_count,
            links,
            power,
            noise_power,
            beta_bar,
        })
    }

    pub fn num_antennas(&self) -> usize {
        self.num_antennas
    }
    pub fn num_subarrays(&self) -> usize {
        self.num_subarrays
    }
    pub fn num_ues(&self) -> usize {
        self.num_ues
    }

    #[inline]
    pub fn link(&self, k: usize, l: usize) -> &LinkStatistics {
        &self.links[k * self.num_subarrays + l]
    }

    pub fn beta(&self, k: usize, l: usize) -> f64 {
        self.link(k, l).beta
    }

    /// Copy with all transmit powers and the noise power scaled by `c`.
    pub fn with_power_scale(&self, c: f64) -> Self {
        let mut s = self.clone();
        s.power.iter_mut().for_each(|p| *p *= c);
        s.noise_power *= c;
        s
    }
}

/// Long-term statistics for every UE-subarray pair of `geom`.
pub fn compute_channel_statistics(
    geom: &SystemGeometry,
    config: &ModelConfig,
    drop: u32,
) -> Result<ChannelStatistics> {
    config.validate()?;
    let (rows, cols) = geom.upa_shape;
    let lambda = geom.wavelength;
    let mut los_rng = rng::stream(config.seed, Purpose::LosDraw, drop, 0);
    let mut hbar = Vec::with_capacity(geom.num_ues);
    let mut r = Vec::with_capacity(geom.num_ues);
    for (k, ue) in geom.ue_positions.iter().enumerate() {
        let mut hk = Vec::with_capacity(geom.num_subarrays);
        let mut rk = Vec::with_capacity(geom.num_subarrays);
        for (l, sub) in geom.subarray_positions.iter().enumerate() {
            let delta = [ue[0] - sub[0], ue[1] - sub[1], ue[2] - sub[2]];
            let dist = (delta[0].powi(2) + delta[1].powi(2) + delta[2].powi(2)).sqrt();
            if dist < 1e-9 {
                return Err(Error::Coincident { ue: k, subarray: l });
            }
            let u = [delta[0] / dist, delta[1] / dist, delta[2] / dist];
            let beta = 10f64.powf((config.pathloss_intercept_db - config.pathloss_slope_db * dist.log10()) / 10.0);
            // Draw even when unused so the stream layout is mode-independent.
            let coin: f64 = los_rng.random();
            let los = match config.los_mode {
                LosMode::Always => true,
                LosMode::Never => false,
                LosMode::Visibility => dist <= config.visibility_radius,
                LosMode::Probabilistic => {
                    dist <= config.visibility_radius && coin < los_probability(dist)
                }
            };
            let kappa = match config.rician {
                RicianLaw::Distance { intercept, slope } => 10f64.powf(intercept - slope * dist),
                RicianLaw::Fixed(k) => k,
            };
            let (beta_los, beta_nlos) = if los {
                (beta * kappa / (kappa + 1.0), beta / (kappa + 1.0))
            } else {
                (0.0, beta)
            };
            let a_x = steering_axis(rows, u[0]);
            let a_z = steering_axis(cols, u[2]);
            let h = if beta_los > 0.0 {
                let phase = C64::from_polar(beta_los.sqrt(), -2.0 * std::f64::consts::PI * dist / lambda);
                kron_vec(&a_x, &a_z) * phase
            } else {
                CVec::zeros(rows * cols)
            };
            let rr = match config.correlation {
                Correlation::Uncorrelated => linalg::scaled_identity(rows * cols, beta_nlos),
                Correlation::LocalScattering { asd_azimuth, asd_elevation } => {
                    let elevation = u[2].clamp(-1.0, 1.0).asin();
                    let azimuth = u[0].atan2(u[1]);
                    let rx = local_scattering_axis(
                        rows,
                        u[0],
                        asd_azimuth * elevation.cos() * azimuth.cos(),
                    );
                    let rz = local_scattering_axis(cols, u[2], asd_elevation * elevation.cos());
                    linalg::kron(&rx, &rz) * C64::new(beta_nlos, 0.0)
                }
            };
            hk.push(h);
            rk.push(rr);
        }
        hbar.push(hk);
        r.push(rk);
    }
    let power = vec![config.ue_power(); geom.num_ues];
    ChannelStatistics::from_parts(hbar, r, power, config.noise_power())
}

/// UMi street-canyon LoS probability.
fn los_probability(d: f64) -> f64 {
    ((18.0 / d).min(1.0) * (1.0 - (-d / 36.0).exp()) + (-d / 36.0).exp()).min(1.0)
}

fn steering_axis(n: usize, direction_cosine: f64) -> CVec {
    CVec::from_fn(n, |i, _| {
        let idx = i as f64 - (n as f64 - 1.0) / 2.0;
        C64::from_polar(1.0, std::f64::consts::PI * idx * direction_cosine)
    })
}

fn kron_vec(a: &CVec, b: &CVec) -> CVec {
    CVec::from_fn(a.len() * b.len(), |i, _| a[i / b.len()] * b[i % b.len()])
}

/// Unit-diagonal correlation of a half-wavelength line array under Gaussian
/// angular spread: `exp(j pi (a-b) u) exp(-(pi (a-b) spread)^2 / 2)`, where
/// `spread` is the angular standard deviation already projected onto the
/// axis direction cosine.
fn local_scattering_axis(n: usize, direction_cosine: f64, spread: f64) -> CMat {
    CMat::from_fn(n, n, |a, b| {
        let diff = a as f64 - b as f64;
        let phase = std::f64::consts::PI * diff * direction_cosine;
        let decay = (-0.5 * (std::f64::consts::PI * diff * spread).powi(2)).exp();
        C64::from_polar(decay, phase)
    })
}

/// `(1/L) sum_l beta_kl`.
pub fn average_gain(stats: &ChannelStatistics, k: usize) -> Result<f64> {
    if k >= stats.num_ues() {
        return Err(Error::Index { index: k, len: stats.num_ues() });
    }
    Ok(stats.beta_bar[k])
}

/// Serving subarray sets `D_k` for every UE, each sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelectionMatrixSet {
    sets: Vec<Vec<usize>>,
    num_subarrays: usize,
}

impl SelectionMatrixSet {
    pub fn new(mut sets: Vec<Vec<usize>>, num_subarrays: usize) -> Result<Self> {
        for (k, s) in sets.iter_mut().enumerate() {
            s.sort_unstable();
            if s.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::Config(format!("duplicate subarray in D_{k}")));
            }
            if s.iter().any(|&l| l >= num_subarrays) {
                return Err(Error::Config(format!("subarray index out of range in D_{k}")));
            }
        }
        Ok(SelectionMatrixSet { sets, num_subarrays })
    }

    /// Every UE served by every subarray.
    pub fn full(num_ues: usize, num_subarrays: usize) -> Self {
        SelectionMatrixSet { sets: vec![(0..num_subarrays).collect(); num_ues], num_subarrays }
    }

    pub fn serving(&self, k: usize) -> &[usize] {
        &self.sets[k]
    }

    pub fn l_k(&self, k: usize) -> usize {
        self.sets[k].len()
    }

    pub fn contains(&self, k: usize, l: usize) -> bool {
        self.sets[k].binary_search(&l).is_ok()
    }

    pub fn num_ues(&self) -> usize {
        self.sets.len()
    }

    pub fn num_subarrays(&self) -> usize {
        self.num_subarrays
    }

    /// `U_l`: UEs among `ues` served by subarray `l`.
    pub fn served_by(&self, l: usize, ues: &[usize]) -> Vec<usize> {
        ues.iter().copied().filter(|&k| self.contains(k, l)).collect()
    }

    /// The `ML x ML` block-diagonal selection matrix `D_k`.
    pub fn matrix(&self, k: usize, m: usize) -> CMat {
        let n = m * self.num_subarrays;
        let mut d = CMat::zeros(n, n);
        for &l in &self.sets[k] {
            for i in 0..m {
                d[(l * m + i, l * m + i)] = C64::new(1.0, 0.0);
            }
        }
        d
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionStrategy {
    Random,
    Lsf,
    Sinr,
}

impl SelectionStrategy {
    pub fn name(&self) -> &'static str {
        match self {
            SelectionStrategy::Random => "random",
            SelectionStrategy::Lsf => "lsf",
            SelectionStrategy::Sinr => "sinr",
        }
    }
}

/// Per-(UE, subarray) deterministic local SINRs used by SINR-based selection.
#[derive(Debug, Clone)]
pub struct SinrContext {
    pub num_subarrays: usize,
    /// Row-major `[k * L + l]`.
    pub gamma: Vec<f64>,
}

impl SinrContext {
    pub fn get(&self, k: usize, l: usize) -> f64 {
        self.gamma[k * self.num_subarrays + l]
    }
}

/// Indices of the `count` largest scores, ties toward the lower index,
/// returned in ascending index order.
pub fn top_indices(scores: &[f64], count: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(count);
    idx.sort_unstable();
    idx
}

pub fn select_subarrays(
    strategy: SelectionStrategy,
    stats: &ChannelStatistics,
    l_k: usize,
    context: Option<&SinrContext>,
    seed: u64,
    drop: u32,
) -> Result<SelectionMatrixSet> {
    let l_count = stats.num_subarrays();
    if l_k == 0 || l_k > l_count {
        return Err(Error::Config(format!("L_k={l_k} must be in 1..={l_count}")));
    }
    let k_count = stats.num_ues();
    let sets = match strategy {
        SelectionStrategy::Random => {
            let mut rng = rng::stream(seed, Purpose::Selection, drop, 0);
            (0..k_count)
                .map(|_| sample(&mut rng, l_count, l_k).into_vec())
                .collect()
        }
        SelectionStrategy::Lsf => (0..k_count)
            .map(|k| {
                let scores: Vec<f64> = (0..l_count).map(|l| stats.beta(k, l)).collect();
                top_indices(&scores, l_k)
            })
            .collect(),
        SelectionStrategy::Sinr => {
            let ctx = context
                .ok_or_else(|| Error::Config("SINR-based selection needs a SINR context".into()))?;
            if ctx.num_subarrays != l_count || ctx.gamma.len() != k_count * l_count {
                return Err(Error::Dimension("SINR context does not match statistics".into()));
            }
            (0..k_count)
                .map(|k| {
                    let scores: Vec<f64> = (0..l_count).map(|l| ctx.get(k, l)).collect();
                    top_indices(&scores, l_k)
                })
                .collect()
        }
    };
    SelectionMatrixSet::new(sets, l_count)
}
