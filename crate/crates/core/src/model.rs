//! Physical model: array geometry, mmWave user channels and the radar scene.
//!
//! All arrays are uniform linear arrays. Angles are radians everywhere in
//! the library; the harness converts from degrees at ingestion.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cis, CMat, CVec, C64};

/// Array sizes, RF-chain counts, powers and noise levels of one DFRC cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    /// Transmit antennas at the base station.
    pub tx_antennas: usize,
    /// Radar receive antennas at the base station.
    pub rx_antennas: usize,
    pub tx_rf_chains: usize,
    pub rx_rf_chains: usize,
    pub users: usize,
    /// Antennas per user terminal.
    pub user_antennas: usize,
    pub streams_per_user: usize,
    /// Total transmit power budget, watts.
    pub transmit_power: f64,
    /// Per-user receiver noise power, watts.
    pub user_noise: f64,
    /// Radar receiver noise power, watts.
    pub radar_noise: f64,
    /// Carrier wavelength, meters.
    pub wavelength: f64,
    /// Inter-element spacing, meters.
    pub spacing: f64,
}

const WAVELENGTH_28GHZ: f64 = 299_792_458.0 / 28e9;

impl SystemConfig {
    /// The full-size simulation setup (64 x 16 antennas, 8 + 8 RF chains, 4 users).
    pub fn reference() -> Self {
        Self {
            tx_antennas: 64,
            rx_antennas: 16,
            tx_rf_chains: 8,
            rx_rf_chains: 8,
            users: 4,
            user_antennas: 2,
            streams_per_user: 2,
            transmit_power: 10.0,
            user_noise: 1e-12,
            radar_noise: 0.5,
            wavelength: WAVELENGTH_28GHZ,
            spacing: WAVELENGTH_28GHZ / 2.0,
        }
    }

    /// Reduced sizes used for desk-scale experiments and the test suite.
    pub fn desk_scale() -> Self {
        Self {
            tx_antennas: 16,
            rx_antennas: 8,
            tx_rf_chains: 4,
            rx_rf_chains: 4,
            users: 2,
            user_antennas: 2,
            streams_per_user: 1,
            ..Self::reference()
        }
    }

    /// Total number of data streams `K * d_s`.
    pub fn total_streams(&self) -> usize {
        self.users * self.streams_per_user
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("tx_antennas", self.tx_antennas),
            ("rx_antennas", self.rx_antennas),
            ("tx_rf_chains", self.tx_rf_chains),
            ("rx_rf_chains", self.rx_rf_chains),
            ("users", self.users),
            ("user_antennas", self.user_antennas),
            ("streams_per_user", self.streams_per_user),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::config(format!("{name} must be at least 1")));
            }
        }
        let ns = self.total_streams();
        if ns > self.tx_rf_chains {
            return Err(Error::config(format!(
                "total streams {ns} exceed transmit RF chains {}",
                self.tx_rf_chains
            )));
        }
        if self.tx_rf_chains > self.tx_antennas {
            return Err(Error::config("transmit RF chains exceed transmit antennas"));
        }
        if self.rx_rf_chains > self.rx_antennas {
            return Err(Error::config("receive RF chains exceed receive antennas"));
        }
        if self.streams_per_user > self.user_antennas {
            return Err(Error::config("streams per user exceed user antennas"));
        }
        let powers = [
            ("transmit_power", self.transmit_power),
            ("user_noise", self.user_noise),
            ("radar_noise", self.radar_noise),
            ("wavelength", self.wavelength),
            ("spacing", self.spacing),
        ];
        for (name, v) in powers {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(format!("{name} must be positive and finite")));
            }
        }
        Ok(())
    }
}

/// Log-distance path loss with log-normal shadowing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathLossModel {
    /// Intercept, dB.
    pub alpha_db: f64,
    /// Path-loss exponent.
    pub beta: f64,
    /// Shadowing standard deviation, dB.
    pub shadowing_std_db: f64,
}

impl Default for PathLossModel {
    fn default() -> Self {
        Self {
            alpha_db: 72.0,
            beta: 2.92,
            shadowing_std_db: 8.7,
        }
    }
}

impl PathLossModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0) {
            return Err(Error::config("path-loss exponent must be positive"));
        }
        if !(self.shadowing_std_db >= 0.0) {
            return Err(Error::config("shadowing deviation must be non-negative"));
        }
        Ok(())
    }
}

/// `alpha + 10 beta log10(d) + xi`, in dB.
pub fn path_loss_db(distance: f64, model: &PathLossModel, shadowing_db: f64) -> Result<f64> {
    if !(distance > 0.0) {
        return Err(Error::domain(format!("distance must be positive, got {distance}")));
    }
    Ok(model.alpha_db + 10.0 * model.beta * distance.log10() + shadowing_db)
}

/// ULA response `(1/sqrt(M)) [1, e^{-j k d sin}, ..., e^{-j k d (M-1) sin}]^T`.
pub fn steering_vector(angle: f64, num_antennas: usize, cfg: &SystemConfig) -> CVec {
    let n = num_antennas.max(1);
    let scale = 1.0 / (n as f64).sqrt();
    let step = -2.0 * PI / cfg.wavelength * cfg.spacing * angle.sin();
    CVec::from_fn(n, |m, _| cis(step * m as f64) * scale)
}

/// Two-way response `A(theta) = a_r(theta) a_t(theta)^T` (plain transpose), `M_R x M_T`.
pub fn response_matrix(theta: f64, cfg: &SystemConfig) -> CMat {
    let ar = steering_vector(theta, cfg.rx_antennas, cfg);
    let at = steering_vector(theta, cfg.tx_antennas, cfg);
    &ar * at.transpose()
}

/// One propagation path of a user channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Path {
    pub gain: C64,
    /// Angle of departure at the base station, radians.
    pub aod: f64,
    /// Angle of arrival at the user, radians.
    pub aoa: f64,
}

/// Downlink channel of one user.
#[derive(Debug, Clone, PartialEq)]
pub struct UserChannel {
    /// `M_U x M_T` channel matrix.
    pub matrix: CMat,
    pub paths: Vec<Path>,
    /// Base-station distance, meters.
    pub distance: f64,
    /// Realized path loss including shadowing, dB.
    pub path_loss_db: f64,
}

impl UserChannel {
    /// Builds `sqrt(M_T M_U / L) sum_l alpha_l a_r(psi_l) a_t(phi_l)^H` from explicit paths.
    pub fn from_paths(cfg: &SystemConfig, paths: Vec<Path>, distance: f64, path_loss_db: f64) -> Self {
        let (mt, mu) = (cfg.tx_antennas, cfg.user_antennas);
        let mut matrix = CMat::zeros(mu, mt);
        let scale = ((mt * mu) as f64 / paths.len().max(1) as f64).sqrt();
        for p in &paths {
            let ar = steering_vector(p.aoa, mu, cfg);
            let at = steering_vector(p.aod, mt, cfg);
            matrix += (&ar * at.adjoint()) * (p.gain * scale);
        }
        Self {
            matrix,
            paths,
            distance,
            path_loss_db,
        }
    }
}

/// The `K` downlink channels.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    pub users: Vec<UserChannel>,
}

impl ChannelSet {
    pub fn new(users: Vec<UserChannel>) -> Self {
        Self { users }
    }

    /// Channel matrix `H_k`.
    pub fn h(&self, k: usize) -> &CMat {
        &self.users[k].matrix
    }

    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }

    pub fn check(&self, cfg: &SystemConfig) -> Result<()> {
        if self.users.len() != cfg.users {
            return Err(Error::config(format!(
                "channel set has {} users, config expects {}",
                self.users.len(),
                cfg.users
            )));
        }
        for (k, u) in self.users.iter().enumerate() {
            if u.matrix.shape() != (cfg.user_antennas, cfg.tx_antennas) {
                return Err(Error::config(format!("channel {k} has wrong dimensions")));
            }
            if u.matrix.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                return Err(Error::numeric(format!("channel {k} has non-finite entries")));
            }
        }
        Ok(())
    }
}

/// SplitMix64 finalizer folded over `parts`; used for every derived seed.
pub fn mix_seed(parts: &[u64]) -> u64 {
    let mut state: u64 = 0x9E37_79B9_7F4A_7C15;
    for &p in parts {
        state ^= p;
        state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        state = z ^ (z >> 31);
    }
    state
}

/// Draws one extended Saleh-Valenzuela realization per user.
///
/// User `k` draws from its own ChaCha stream seeded by `mix_seed([seed, k])`,
/// so adding users never changes the channels of the existing ones.
pub fn generate_channel(
    cfg: &SystemConfig,
    model: &PathLossModel,
    distances: &[f64],
    path_counts: &[usize],
    seed: u64,
) -> Result<ChannelSet> {
    cfg.validate()?;
    model.validate()?;
    if distances.len() != cfg.users || path_counts.len() != cfg.users {
        return Err(Error::config("need one distance and one path count per user"));
    }
    let shadow = Normal::new(0.0, model.shadowing_std_db)
        .map_err(|e| Error::config(format!("shadowing distribution: {e}")))?;
    let mut users = Vec::with_capacity(cfg.users);
    for k in 0..cfg.users {
        if path_counts[k] == 0 {
            return Err(Error::config(format!("user {k} needs at least one path")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, k as u64]));
        let xi = shadow.sample(&mut rng);
        let pl = path_loss_db(distances[k], model, xi)?;
        let half_var = 10f64.powf(-0.1 * pl) / 2.0;
        let sd = half_var.sqrt();
        let paths = (0..path_counts[k])
            .map(|_| {
                let re: f64 = StandardNormal.sample(&mut rng);
                let im: f64 = StandardNormal.sample(&mut rng);
                Path {
                    gain: C64::new(re * sd, im * sd),
                    aod: rng.random_range(-FRAC_PI_2..=FRAC_PI_2),
                    aoa: rng.random_range(-FRAC_PI_2..=FRAC_PI_2),
                }
            })
            .collect();
        users.push(UserChannel::from_paths(cfg, paths, distances[k], pl));
    }
    Ok(ChannelSet { users })
}

/// Target and clutter geometry with reflection statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadarScene {
    /// Target angle, radians.
    pub target_angle: f64,
    /// Clutter angles, radians.
    pub clutter_angles: Vec<f64>,
    /// Target reflection power (linear).
    pub target_power: f64,
    /// Per-clutter reflection power (linear).
    pub clutter_power: f64,
}

impl Default for RadarScene {
    /// Target at broadside, clutter at +-30 deg, 10 dB target and 20 dB clutter power.
    fn default() -> Self {
        Self {
            target_angle: 0.0,
            clutter_angles: vec![(-30f64).to_radians(), 30f64.to_radians()],
            target_power: 10.0,
            clutter_power: 100.0,
        }
    }
}

impl RadarScene {
    pub fn validate(&self) -> Result<()> {
        let inside = |a: f64| a.is_finite() && a > -FRAC_PI_2 && a < FRAC_PI_2;
        if !inside(self.target_angle) || !self.clutter_angles.iter().all(|&a| inside(a)) {
            return Err(Error::config("radar angles must lie strictly inside (-90, 90) degrees"));
        }
        if !(self.target_power > 0.0) {
            return Err(Error::config("target reflection power must be positive"));
        }
        if !(self.clutter_power >= 0.0) {
            return Err(Error::config("clutter reflection power must be non-negative"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::max_abs_diff;

    fn cfg(mt: usize, mr: usize) -> SystemConfig {
        SystemConfig {
            tx_antennas: mt,
            rx_antennas: mr,
            ..SystemConfig::desk_scale()
        }
    }

    #[test]
    fn broadside_steering_is_flat() {
        let a = steering_vector(0.0, 4, &cfg(4, 4));
        for z in a.iter() {
            assert!((z - C64::new(0.5, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn endfire_half_wavelength_alternates_sign() {
        let a = steering_vector(FRAC_PI_2, 2, &cfg(4, 4));
        let s = 1.0 / 2f64.sqrt();
        assert!((a[0] - C64::new(s, 0.0)).norm() < 1e-15);
        assert!((a[1] - C64::new(-s, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn steering_entry_ratio_at_thirty_degrees() {
        let theta = PI / 6.0;
        let a = steering_vector(theta, 8, &cfg(8, 4));
        assert!((a.norm() - 1.0).abs() < 1e-12);
        // independent evaluation: exp(-j pi sin(pi/6)) = exp(-j pi/2) = -j
        let ratio = C64::new(0.0, -1.0);
        for m in 1..8 {
            assert!((a[m] / a[m - 1] - ratio).norm() < 1e-12);
        }
    }

    #[test]
    fn path_loss_values() {
        let m = PathLossModel::default();
        assert!((path_loss_db(1.0, &m, 0.0).unwrap() - 72.0).abs() < 1e-12);
        assert!((path_loss_db(80.0, &m, 0.0).unwrap() - 127.570_227_620_164_76).abs() < 1e-9);
        assert!((path_loss_db(10.0, &m, 3.0).unwrap() - 104.2).abs() < 1e-12);
        assert!(path_loss_db(0.0, &m, 0.0).is_err());
        assert!(path_loss_db(-3.0, &m, 0.0).is_err());
    }

    #[test]
    fn single_broadside_unit_path_gives_all_ones() {
        let c = cfg(4, 4);
        let path = Path {
            gain: C64::new(1.0, 0.0),
            aod: 0.0,
            aoa: 0.0,
        };
        let u = UserChannel::from_paths(&c, vec![path], 80.0, 0.0);
        let ones = CMat::from_element(c.user_antennas, c.tx_antennas, C64::new(1.0, 0.0));
        assert!(max_abs_diff(&u.matrix, &ones) < 1e-12);
    }

    #[test]
    fn channel_rank_bounded_by_paths_and_deterministic() {
        let c = cfg(8, 4);
        let c = SystemConfig { user_antennas: 4, streams_per_user: 1, ..c };
        let pl = PathLossModel::default();
        let a = generate_channel(&c, &pl, &[80.0, 80.0], &[1, 2], 42).unwrap();
        let b = generate_channel(&c, &pl, &[80.0, 80.0], &[1, 2], 42).unwrap();
        assert_eq!(a, b);
        for (k, l) in [(0usize, 1usize), (1, 2)] {
            let h = a.h(k);
            let sv = h.clone().svd(false, false).singular_values;
            let smax = sv[0];
            let rank = sv.iter().filter(|&&s| s > smax * 1e-10).count();
            assert!(rank <= l, "user {k}: rank {rank} > {l}");
        }
    }

    #[test]
    fn adding_users_keeps_existing_channels() {
        let pl = PathLossModel::default();
        let two = SystemConfig { users: 2, ..SystemConfig::desk_scale() };
        let three = SystemConfig { users: 3, tx_rf_chains: 4, ..SystemConfig::desk_scale() };
        let a = generate_channel(&two, &pl, &[80.0; 2], &[3; 2], 7).unwrap();
        let b = generate_channel(&three, &pl, &[80.0; 3], &[3; 3], 7).unwrap();
        assert_eq!(a.users[0], b.users[0]);
        assert_eq!(a.users[1], b.users[1]);
    }

    #[test]
    fn channel_power_scaling() {
        let c = cfg(4, 4);
        let c = SystemConfig { users: 1, ..c };
        let pl = PathLossModel {
            shadowing_std_db: 0.0,
            ..PathLossModel::default()
        };
        let n = 10_000u64;
        let mut acc = 0.0;
        for s in 0..n {
            let ch = generate_channel(&c, &pl, &[80.0], &[3], s).unwrap();
            acc += crate::linalg::frob_sq(ch.h(0));
        }
        let mean = acc / n as f64;
        let expect = (c.tx_antennas * c.user_antennas) as f64
            * 10f64.powf(-0.1 * path_loss_db(80.0, &pl, 0.0).unwrap());
        assert!(((mean - expect) / expect).abs() < 0.05, "mean {mean:e} vs {expect:e}");
    }

    #[test]
    fn response_matrix_properties() {
        let c = cfg(4, 3);
        let a0 = response_matrix(0.0, &c);
        let v = 1.0 / (12f64).sqrt();
        assert!(a0.iter().all(|z| (z - C64::new(v, 0.0)).norm() < 1e-15));
        for &th in &[-1.2, -0.3, 0.4, 1.1] {
            let a = response_matrix(th, &c);
            assert!((crate::linalg::frob_sq(&a) - 1.0).abs() < 1e-12);
            let sv = a.clone().svd(false, false).singular_values;
            assert!(sv.iter().filter(|&&s| s > 1e-10).count() == 1);
        }
    }

    #[test]
    fn response_matrix_uses_plain_transpose() {
        let c = cfg(2, 2);
        let th = PI / 6.0;
        let a = response_matrix(th, &c);
        // element-wise: A(r, t) = (1/2) exp(-j pi sin(th) (r + t))
        for r in 0..2 {
            for t in 0..2 {
                let expect = cis(-PI * th.sin() * (r + t) as f64) * 0.5;
                assert!((a[(r, t)] - expect).norm() < 1e-12);
            }
        }
        let ar = steering_vector(th, 2, &c);
        let at = steering_vector(th, 2, &c);
        let conj_form = &ar * at.adjoint();
        assert!(max_abs_diff(&a, &conj_form) > 0.1);
    }

    #[test]
    fn config_validation() {
        assert!(SystemConfig::reference().validate().is_ok());
        assert!(SystemConfig::desk_scale().validate().is_ok());
        let bad = SystemConfig {
            tx_rf_chains: 1,
            ..SystemConfig::desk_scale()
        };
        assert!(bad.validate().is_err());
        let bad = SystemConfig {
            radar_noise: 0.0,
            ..SystemConfig::desk_scale()
        };
        assert!(bad.validate().is_err());
        let scene = RadarScene {
            target_angle: FRAC_PI_2,
            ..RadarScene::default()
        };
        assert!(scene.validate().is_err());
    }

    proptest::proptest! {
        #[test]
        fn steering_vectors_have_unit_norm(angle in -std::f64::consts::FRAC_PI_2..std::f64::consts::FRAC_PI_2, n in 1usize..70) {
            let a = steering_vector(angle, n, &SystemConfig::desk_scale());
            proptest::prop_assert!((a.norm() - 1.0).abs() < 1e-12);
        }
    }
}
