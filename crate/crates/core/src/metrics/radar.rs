use crate::error::{Error, Result};
use crate::linalg::{frob_sq, hpd_solve, CMat, CVec};
use crate::metrics::BeamformerSet;
use crate::model::{response_matrix, steering_vector, RadarScene, SystemConfig};

/// Target echo covariance `sigma_0^2 A(theta_0) T T^H A^H(theta_0)` for the
/// `M_T x N_s` transmit matrix `tx`.
pub fn target_covariance(tx: &CMat, scene: &RadarScene, cfg: &SystemConfig) -> CMat {
    let at = response_matrix(scene.target_angle, cfg) * tx;
    (&at * at.adjoint()).scale(scene.target_power)
}

/// Clutter-plus-noise covariance
/// `sum_j sigma_C^2 A(theta_j) T T^H A^H(theta_j) + sigma_R^2 I`, `M_R x M_R`.
pub fn clutter_noise_covariance(tx: &CMat, scene: &RadarScene, cfg: &SystemConfig) -> CMat {
    let mut s = CMat::identity(cfg.rx_antennas, cfg.rx_antennas).scale(cfg.radar_noise);
    for &th in &scene.clutter_angles {
        let at = response_matrix(th, cfg) * tx;
        s += (&at * at.adjoint()).scale(scene.clutter_power);
    }
    s
}

/// Trace-ratio SCNR `tr(W^H S_t W) / tr(W^H S_cn W)` for transmit `tx` and receive `rx`.
pub fn scnr_trace_ratio(tx: &CMat, rx: &CMat, scene: &RadarScene, cfg: &SystemConfig) -> Result<f64> {
    if frob_sq(rx) == 0.0 {
        return Err(Error::domain("receive beamformer is zero"));
    }
    let num = (rx.adjoint() * target_covariance(tx, scene, cfg) * rx).trace().re;
    let den = (rx.adjoint() * clutter_noise_covariance(tx, scene, cfg) * rx).trace().re;
    Ok(num / den)
}

/// SCNR of the hybrid transmit `T_RF T_D` and hybrid receive `W_RF W_D`.
pub fn scnr_full(bf: &BeamformerSet, scene: &RadarScene, cfg: &SystemConfig) -> Result<f64> {
    scnr_trace_ratio(&bf.hybrid_transmit(), &bf.hybrid_receive(), scene, cfg)
}

/// `A~(theta) t = vec(A(theta) T)` for the stacked transmit vector `t`.
pub fn stacked_response(theta: f64, t: &CVec, cfg: &SystemConfig) -> CVec {
    let ns = t.len() / cfg.tx_antennas;
    let tm = CMat::from_column_slice(cfg.tx_antennas, ns, t.as_slice());
    let at = response_matrix(theta, cfg) * tm;
    CVec::from_column_slice(at.as_slice())
}

/// Dense stacked clutter-plus-noise covariance
/// `sum_j sigma_C^2 A~_j t t^H A~_j^H + sigma_R^2 I`.
pub fn stacked_clutter_covariance(t: &CVec, scene: &RadarScene, cfg: &SystemConfig) -> CMat {
    let n = cfg.rx_antennas * (t.len() / cfg.tx_antennas);
    let mut s = CMat::identity(n, n).scale(cfg.radar_noise);
    for &th in &scene.clutter_angles {
        let v = stacked_response(th, t, cfg);
        s += (&v * v.adjoint()).scale(scene.clutter_power);
    }
    s
}

fn check_stacked(t: &CVec, w: &CVec, cfg: &SystemConfig) -> Result<usize> {
    if !t.len().is_multiple_of(cfg.tx_antennas) || t.is_empty() {
        return Err(Error::domain("stacked transmit length must be a multiple of M_T"));
    }
    let ns = t.len() / cfg.tx_antennas;
    if w.len() != cfg.rx_antennas * ns {
        return Err(Error::domain("stacked receive length must be M_R * N_s"));
    }
    Ok(ns)
}

/// Stacked-form SCNR `sigma_0^2 |w^H A~(theta_0) t|^2 / (w^H S~_cn w)`.
pub fn scnr_vectorized(t: &CVec, w: &CVec, scene: &RadarScene, cfg: &SystemConfig) -> Result<f64> {
    check_stacked(t, w, cfg)?;
    if w.norm_squared() == 0.0 {
        return Err(Error::domain("receive beamformer is zero"));
    }
    let g = w.dotc(&stacked_response(scene.target_angle, t, cfg));
    let mut den = cfg.radar_noise * w.norm_squared();
    for &th in &scene.clutter_angles {
        den += scene.clutter_power * w.dotc(&stacked_response(th, t, cfg)).norm_sqr();
    }
    Ok(scene.target_power * g.norm_sqr() / den)
}

/// SCNR reached by the best receive beamformer for transmit `tx`:
/// `sum_k tr(T_k^H Phi T_k)` with `Phi = sigma_0^2 A^H(theta_0) S_cn^-1 A(theta_0)`
/// and `S_cn` built from `tx` itself.
pub fn optimal_receive_scnr(tx: &CMat, scene: &RadarScene, cfg: &SystemConfig) -> Result<f64> {
    let s = clutter_noise_covariance(tx, scene, cfg);
    let ar = steering_vector(scene.target_angle, cfg.rx_antennas, cfg);
    let at = steering_vector(scene.target_angle, cfg.tx_antennas, cfg);
    let x = hpd_solve(&s, &CMat::from_column_slice(ar.len(), 1, ar.as_slice()))?;
    let gain = ar.dotc(&x.column(0)).re;
    let beam = (at.transpose() * tx).norm_squared();
    Ok(scene.target_power * gain * beam)
}

/// Spatial beampattern `|w^H A~(theta) t|^2` over `grid`, in dB relative to
/// the grid maximum.
pub fn beampattern(w: &CVec, t: &CVec, grid: &[f64], cfg: &SystemConfig) -> Result<Vec<f64>> {
    if grid.is_empty() {
        return Err(Error::domain("beampattern grid is empty"));
    }
    check_stacked(t, w, cfg)?;
    let raw: Vec<f64> = grid
        .iter()
        .map(|&th| w.dotc(&stacked_response(th, t, cfg)).norm_sqr())
        .collect();
    let peak = raw.iter().cloned().fold(0.0, f64::max);
    if !(peak > 0.0) {
        return Err(Error::domain("beampattern is identically zero"));
    }
    let floor = peak * 1e-30;
    Ok(raw.iter().map(|&p| 10.0 * (p.max(floor) / peak).log10()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{hermitian_eigen, hpd_inverse, vectorize, C64};
    use crate::metrics::{split_blocks, BeamformerSet};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> CMat {
        CMat::from_fn(r, c, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
    }

    fn small_cfg(mr: usize, ns_users: usize) -> SystemConfig {
        SystemConfig {
            tx_antennas: 4,
            rx_antennas: mr,
            tx_rf_chains: 2,
            rx_rf_chains: 2,
            users: ns_users,
            user_antennas: 1,
            streams_per_user: 1,
            ..SystemConfig::desk_scale()
        }
    }

    fn hybrid_set(cfg: &SystemConfig, rng: &mut ChaCha8Rng) -> BeamformerSet {
        let ns = cfg.total_streams();
        let t_rf = random_mat(rng, cfg.tx_antennas, cfg.tx_rf_chains);
        let t_d = random_mat(rng, cfg.tx_rf_chains, ns);
        let w_rf = random_mat(rng, cfg.rx_antennas, cfg.rx_rf_chains);
        let w_d = random_mat(rng, cfg.rx_rf_chains, ns);
        BeamformerSet {
            t_aux: split_blocks(&(&t_rf * &t_d), 1),
            w_aux: &w_rf * &w_d,
            t_rf,
            t_d,
            u: vec![CMat::zeros(1, 1); cfg.users],
            w_rf,
            w_d,
            streams_per_user: 1,
        }
    }

    #[test]
    fn no_clutter_denominator_is_noise_only() {
        let cfg = small_cfg(3, 2);
        let scene = RadarScene {
            clutter_angles: vec![],
            ..RadarScene::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let bf = hybrid_set(&cfg, &mut rng);
        let w = bf.hybrid_receive();
        let num = (w.adjoint() * target_covariance(&bf.hybrid_transmit(), &scene, &cfg) * &w).trace().re;
        let expect = num / (cfg.radar_noise * frob_sq(&w));
        assert!((scnr_full(&bf, &scene, &cfg).unwrap() - expect).abs() < 1e-12 * expect);
    }

    #[test]
    fn scnr_is_scale_invariant_in_receive() {
        let cfg = small_cfg(3, 2);
        let scene = RadarScene::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut bf = hybrid_set(&cfg, &mut rng);
        let a = scnr_full(&bf, &scene, &cfg).unwrap();
        bf.w_d *= C64::new(-3.0, 0.7);
        let b = scnr_full(&bf, &scene, &cfg).unwrap();
        assert!((a - b).abs() < 1e-12 * a);
        bf.w_d *= C64::new(0.0, 0.0);
        assert!(scnr_full(&bf, &scene, &cfg).is_err());
    }

    #[test]
    fn single_stream_trace_and_stacked_forms_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let cfg = small_cfg(2, 1);
        let scene = RadarScene::default();
        for _ in 0..20 {
            let bf = hybrid_set(&cfg, &mut rng);
            let full = scnr_full(&bf, &scene, &cfg).unwrap();
            let t = vectorize(&bf.hybrid_transmit());
            let w = vectorize(&bf.hybrid_receive());
            let vec_form = scnr_vectorized(&t, &w, &scene, &cfg).unwrap();
            assert!((full - vec_form).abs() < 1e-9 * full, "{full} vs {vec_form}");
        }
    }

    #[test]
    fn stacked_maximizer_is_the_whitened_matched_filter() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cfg = small_cfg(3, 2);
        let scene = RadarScene::default();
        let t = vectorize(&random_mat(&mut rng, 4, 2));
        let s = stacked_clutter_covariance(&t, &scene, &cfg);
        let w_opt = hpd_inverse(&s).unwrap() * stacked_response(0.0, &t, &cfg);
        let best = scnr_vectorized(&t, &w_opt, &scene, &cfg).unwrap();
        for _ in 0..100 {
            let w = vectorize(&random_mat(&mut rng, 6, 1));
            assert!(scnr_vectorized(&t, &w, &scene, &cfg).unwrap() <= best * (1.0 + 1e-12));
        }
    }

    #[test]
    fn noise_only_stacked_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let cfg = SystemConfig {
            radar_noise: 1.0,
            ..small_cfg(3, 1)
        };
        let scene = RadarScene {
            clutter_power: 0.0,
            ..RadarScene::default()
        };
        let t = vectorize(&random_mat(&mut rng, 4, 1)).normalize();
        let w = vectorize(&random_mat(&mut rng, 3, 1));
        let g = w.dotc(&stacked_response(0.0, &t, &cfg)).norm_sqr();
        let expect = scene.target_power * g / w.norm_squared();
        let got = scnr_vectorized(&t, &w, &scene, &cfg).unwrap();
        assert!((got - expect).abs() < 1e-12 * expect);
        assert!(scnr_vectorized(&t, &CVec::zeros(3), &scene, &cfg).is_err());
    }

    #[test]
    fn optimal_receive_scnr_is_the_trace_ratio_maximum() {
        // the maximum of tr(W^H S_t W)/tr(W^H S_cn W) is the largest
        // generalized eigenvalue of (S_t, S_cn)
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let cfg = small_cfg(4, 2);
        let scene = RadarScene::default();
        for _ in 0..10 {
            let tx = random_mat(&mut rng, 4, 2);
            let st = target_covariance(&tx, &scene, &cfg);
            let sc = clutter_noise_covariance(&tx, &scene, &cfg);
            let l = crate::linalg::cholesky_factor(&sc).unwrap();
            let li = crate::linalg::inverse(&l).unwrap();
            let (vals, _) = hermitian_eigen(&(&li * st * li.adjoint()));
            let lmax = *vals.last().unwrap();
            let got = optimal_receive_scnr(&tx, &scene, &cfg).unwrap();
            assert!((got - lmax).abs() < 1e-9 * lmax);
        }
    }

    #[test]
    fn matched_filters_peak_at_target() {
        let cfg = SystemConfig {
            tx_antennas: 8,
            rx_antennas: 8,
            ..small_cfg(8, 1)
        };
        let th0 = 0.2;
        let at = steering_vector(th0, 8, &cfg);
        let ar = steering_vector(th0, 8, &cfg);
        let t = at.map(|z| z.conj());
        let w = ar;
        let grid: Vec<f64> = (-180..=180).map(|i| (i as f64 * 0.5).to_radians()).collect();
        let p = beampattern(&w, &t, &grid, &cfg).unwrap();
        let (imax, _) = p
            .iter()
            .enumerate()
            .fold((0, f64::MIN), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
        assert!((grid[imax] - th0).abs() <= 0.5f64.to_radians());
        assert!(p.iter().all(|v| v.is_finite()));
        assert!(beampattern(&w, &t, &[], &cfg).is_err());
    }

    #[test]
    fn random_beampattern_is_finite() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cfg = small_cfg(3, 2);
        let t = vectorize(&CMat::from_element(4, 2, C64::new(1.0, 0.0)));
        let w = vectorize(&random_mat(&mut rng, 3, 2));
        let grid: Vec<f64> = (-180..=180).map(|i| (i as f64 * 0.5).to_radians()).collect();
        let p = beampattern(&w, &t, &grid, &cfg).unwrap();
        assert!(p.iter().all(|v| v.is_finite() && *v <= 0.0));
    }
}
