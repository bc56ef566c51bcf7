//! Performance metrics: communication rate and MSE, radar SCNR and
//! beampattern, detection probability, and power / energy-efficiency
//! accounting.

mod detection;
mod radar;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{hermitian_part, hpd_logdet, CMat};
use crate::model::{ChannelSet, SystemConfig};

pub use detection::{detection_probability, marcum_q1};
pub use radar::{
    beampattern, clutter_noise_covariance, optimal_receive_scnr, scnr_full, scnr_trace_ratio,
    scnr_vectorized, stacked_clutter_covariance, stacked_response, target_covariance,
};

/// Beamforming architecture tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    /// Reconfigurable subarrays (switch network + phase shifters).
    Rs,
    /// Persistently connected fixed subarrays.
    Pc,
    /// Double-phase-shifter partially connected.
    Dpc,
    /// Fully connected analog network.
    Fc,
    /// Fully digital, one RF chain per antenna.
    Fd,
}

impl Architecture {
    pub fn as_str(self) -> &'static str {
        match self {
            Architecture::Rs => "rs",
            Architecture::Pc => "pc",
            Architecture::Dpc => "dpc",
            Architecture::Fc => "fc",
            Architecture::Fd => "fd",
        }
    }

    /// Stable small integer used in seed derivation.
    pub fn tag(self) -> u64 {
        match self {
            Architecture::Rs => 1,
            Architecture::Pc => 2,
            Architecture::Dpc => 3,
            Architecture::Fc => 4,
            Architecture::Fd => 5,
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rs" => Ok(Architecture::Rs),
            "pc" => Ok(Architecture::Pc),
            "dpc" => Ok(Architecture::Dpc),
            "fc" => Ok(Architecture::Fc),
            "fd" => Ok(Architecture::Fd),
            other => Err(Error::domain(format!("unknown architecture '{other}'"))),
        }
    }
}

/// All beamformers of one DFRC design.
///
/// Fully-digital designs use identity analog stages, so every metric below
/// applies uniformly to hybrid and digital solutions.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamformerSet {
    /// Analog transmit beamformer, `M_T x N_RF_t`.
    pub t_rf: CMat,
    /// Digital transmit beamformer `[T_D,1 .. T_D,K]`, `N_RF_t x N_s`.
    pub t_d: CMat,
    /// User combiners, each `M_U x d_s`.
    pub u: Vec<CMat>,
    /// Analog radar receive beamformer, `M_R x N_RF_r`.
    pub w_rf: CMat,
    /// Digital radar receive beamformer, `N_RF_r x N_s`.
    pub w_d: CMat,
    /// Auxiliary fully-digital transmit beamformers `T_k`, each `M_T x d_s`.
    pub t_aux: Vec<CMat>,
    /// Auxiliary fully-digital receive beamformer, `M_R x N_s`.
    pub w_aux: CMat,
    pub streams_per_user: usize,
}

impl BeamformerSet {
    /// Digital block `T_D,k`.
    pub fn t_d_block(&self, k: usize) -> CMat {
        let ds = self.streams_per_user;
        self.t_d.columns(k * ds, ds).into_owned()
    }

    /// `T_RF T_D`, `M_T x N_s`.
    pub fn hybrid_transmit(&self) -> CMat {
        &self.t_rf * &self.t_d
    }

    /// Per-user hybrid precoders `T_RF T_D,k`.
    pub fn hybrid_blocks(&self) -> Vec<CMat> {
        split_blocks(&self.hybrid_transmit(), self.streams_per_user)
    }

    /// `W_RF W_D`, `M_R x N_s`.
    pub fn hybrid_receive(&self) -> CMat {
        &self.w_rf * &self.w_d
    }

    pub fn num_users(&self) -> usize {
        self.u.len()
    }

    /// Dimension and transmit-power checks against `cfg`.
    pub fn check(&self, cfg: &SystemConfig) -> Result<()> {
        let ns = cfg.total_streams();
        let ok = self.t_rf.nrows() == cfg.tx_antennas
            && self.t_d.nrows() == self.t_rf.ncols()
            && self.t_d.ncols() == ns
            && self.w_rf.nrows() == cfg.rx_antennas
            && self.w_d.nrows() == self.w_rf.ncols()
            && self.w_d.ncols() == ns
            && self.u.len() == cfg.users
            && self.u.iter().all(|u| u.shape() == (cfg.user_antennas, cfg.streams_per_user))
            && self.t_aux.len() == cfg.users
            && self.t_aux.iter().all(|t| t.shape() == (cfg.tx_antennas, cfg.streams_per_user))
            && self.w_aux.shape() == (cfg.rx_antennas, ns)
            && self.streams_per_user == cfg.streams_per_user;
        if !ok {
            return Err(Error::config("beamformer dimensions do not match the configuration"));
        }
        Ok(())
    }
}

/// Splits an `M x (K d_s)` matrix into `K` column blocks.
pub fn split_blocks(m: &CMat, width: usize) -> Vec<CMat> {
    (0..m.ncols() / width)
        .map(|k| m.columns(k * width, width).into_owned())
        .collect()
}

/// Concatenates column blocks horizontally.
pub fn join_blocks(blocks: &[CMat]) -> CMat {
    let rows = blocks.first().map_or(0, |b| b.nrows());
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = CMat::zeros(rows, cols);
    let mut c = 0;
    for b in blocks {
        out.columns_mut(c, b.ncols()).copy_from(b);
        c += b.ncols();
    }
    out
}

/// Interference-plus-noise covariance seen by user `k`:
/// `sigma^2 I + sum_{i != k} H_k T_i T_i^H H_k^H`.
fn interference_covariance(h: &CMat, precoders: &[CMat], k: usize, noise: f64) -> CMat {
    let mut r = CMat::identity(h.nrows(), h.nrows()).scale(noise);
    for (i, t) in precoders.iter().enumerate() {
        if i != k {
            let ht = h * t;
            r += &ht * ht.adjoint();
        }
    }
    r
}

/// Sum-rate in bits/s/Hz for explicit precoders and combiners.
pub fn sum_rate_with(
    channels: &ChannelSet,
    precoders: &[CMat],
    combiners: &[CMat],
    noise: f64,
) -> Result<f64> {
    let mut total = 0.0;
    for (k, uk) in combiners.iter().enumerate() {
        let h = channels.h(k);
        let n = interference_covariance(h, precoders, k, noise);
        let r = hermitian_part(&(uk.adjoint() * &n * uk));
        let s = uk.adjoint() * h * &precoders[k];
        let signal = &s * s.adjoint();
        let ld_r = hpd_logdet(&r)
            .map_err(|_| Error::numeric(format!("interference covariance of user {k} is singular")))?;
        let ld_rs = hpd_logdet(&(r + signal))?;
        total += (ld_rs - ld_r) / std::f64::consts::LN_2;
    }
    Ok(total.max(0.0))
}

/// Sum-rate of the hybrid design with the combiners stored in `bf`.
pub fn sum_rate(channels: &ChannelSet, bf: &BeamformerSet, cfg: &SystemConfig) -> Result<f64> {
    sum_rate_with(channels, &bf.hybrid_blocks(), &bf.u, cfg.user_noise)
}

/// Receiver-independent rate `sum_k log2 det(I + H_k T_k T_k^H H_k^H N_k^-1)`;
/// equals [`sum_rate`] when the combiners are MMSE receivers.
pub fn achievable_sum_rate(channels: &ChannelSet, precoders: &[CMat], noise: f64) -> Result<f64> {
    let mut total = 0.0;
    for (k, t) in precoders.iter().enumerate() {
        let h = channels.h(k);
        let n = interference_covariance(h, precoders, k, noise);
        let ht = h * t;
        let ld_n = hpd_logdet(&n)?;
        let ld = hpd_logdet(&(n + &ht * ht.adjoint()))?;
        total += (ld - ld_n) / std::f64::consts::LN_2;
    }
    Ok(total)
}

/// Which transmit beamformers feed the MSE expression.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MseSource {
    /// `T_RF T_D,k`.
    Hybrid,
    /// Auxiliary `T_k`.
    Auxiliary,
}

/// MSE matrix for explicit precoders:
/// `I - U^H H T_k - T_k^H H^H U + sigma^2 U^H U + sum_i U^H H T_i T_i^H H^H U`.
pub fn mse_with(h: &CMat, u: &CMat, precoders: &[CMat], k: usize, noise: f64) -> CMat {
    let ds = u.ncols();
    let uh_h = u.adjoint() * h;
    let cross = &uh_h * &precoders[k];
    let mut e = CMat::identity(ds, ds) - &cross - cross.adjoint() + (u.adjoint() * u).scale(noise);
    for t in precoders {
        let g = &uh_h * t;
        e += &g * g.adjoint();
    }
    hermitian_part(&e)
}

/// MSE matrix `E_k` of user `k`.
pub fn mse_matrix(
    k: usize,
    channels: &ChannelSet,
    bf: &BeamformerSet,
    cfg: &SystemConfig,
    source: MseSource,
) -> Result<CMat> {
    if k >= bf.num_users() || k >= channels.len() {
        return Err(Error::domain(format!("user index {k} out of range")));
    }
    let precoders = match source {
        MseSource::Hybrid => bf.hybrid_blocks(),
        MseSource::Auxiliary => bf.t_aux.clone(),
    };
    Ok(mse_with(channels.h(k), &bf.u[k], &precoders, k, cfg.user_noise))
}

/// Circuit power figures per component, watts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PowerModel {
    pub baseband: f64,
    pub rf_chain: f64,
    pub phase_shifter: f64,
    pub switch: f64,
}

impl Default for PowerModel {
    fn default() -> Self {
        Self {
            baseband: 0.2,
            rf_chain: 0.3,
            phase_shifter: 0.05,
            switch: 0.005,
        }
    }
}

impl PowerModel {
    pub fn validate(&self) -> Result<()> {
        let all = [self.baseband, self.rf_chain, self.phase_shifter, self.switch];
        if all.iter().all(|v| v.is_finite() && *v >= 0.0) {
            Ok(())
        } else {
            Err(Error::config("component powers must be non-negative"))
        }
    }
}

/// Total base-station power consumption for an architecture.
pub fn total_power(arch: Architecture, cfg: &SystemConfig, pm: &PowerModel) -> f64 {
    let chains = (cfg.tx_rf_chains + cfg.rx_rf_chains) as f64;
    let antennas = (cfg.tx_antennas + cfg.rx_antennas) as f64;
    let common = cfg.transmit_power + pm.baseband;
    match arch {
        Architecture::Rs => {
            common + chains * pm.rf_chain + antennas * pm.phase_shifter + antennas * pm.switch
        }
        Architecture::Pc => common + chains * pm.rf_chain + antennas * pm.phase_shifter,
        Architecture::Dpc => common + chains * pm.rf_chain + 2.0 * antennas * pm.phase_shifter,
        Architecture::Fc => {
            let ps = (cfg.tx_antennas * cfg.tx_rf_chains + cfg.rx_antennas * cfg.rx_rf_chains) as f64;
            common + chains * pm.rf_chain + ps * pm.phase_shifter
        }
        Architecture::Fd => common + antennas * pm.rf_chain,
    }
}

/// Average per-user energy efficiency `rate / (K P_tot)`.
pub fn energy_efficiency(rate: f64, arch: Architecture, cfg: &SystemConfig, pm: &PowerModel) -> Result<f64> {
    if !(rate >= 0.0) {
        return Err(Error::domain("rate must be non-negative"));
    }
    Ok(rate / (cfg.users as f64 * total_power(arch, cfg, pm)))
}
