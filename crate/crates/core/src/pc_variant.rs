//! Persistently-connected (fixed block-diagonal) hybrid architecture.
//!
//! Each RF chain drives a fixed contiguous subarray of `M = M_T / N_RF`
//! antennas. The analog update keeps that wiring and only re-phases; the
//! transmit digital update solves the least-squares fit under an exact
//! power equality by bisection on its multiplier.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cis, frob_sq, hermitian_eigen, pinv, CMat, ZERO};
use crate::metrics::Architecture;
use crate::wpdd::{random_phases, run_hybrid, HybridStage, InitOptions, PddSettings, Problem, Solution, SubarrayMap};

/// Fixed block layout of one side of the array.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PcStructure {
    pub antennas: usize,
    pub rf_chains: usize,
}

impl PcStructure {
    pub fn new(antennas: usize, rf_chains: usize) -> Result<Self> {
        if rf_chains == 0 || !antennas.is_multiple_of(rf_chains) {
            return Err(Error::config(format!(
                "persistently-connected wiring needs {antennas} antennas divisible by {rf_chains} RF chains"
            )));
        }
        Ok(Self { antennas, rf_chains })
    }

    /// Antennas per subarray.
    pub fn block(&self) -> usize {
        self.antennas / self.rf_chains
    }

    /// Chain that antenna `m` is wired to.
    pub fn chain_of(&self, m: usize) -> usize {
        m / self.block()
    }

    pub fn analog_matrix(&self, phases: &[f64]) -> CMat {
        SubarrayMap::contiguous(self.antennas, self.rf_chains).analog_matrix(phases)
    }
}

/// Re-phases the block-diagonal analog matrix: antenna `m` on chain `n`
/// takes `arg(target_m digital_n^H)`, or 0 when that product vanishes.
pub fn pc_update_trf(target: &CMat, digital: &CMat, s: &PcStructure) -> CMat {
    let mut phases = vec![0.0; s.antennas];
    for (m, ph) in phases.iter_mut().enumerate() {
        let n = s.chain_of(m);
        let c = (target.row(m) * digital.row(n).adjoint())[(0, 0)];
        if c != ZERO {
            *ph = c.arg();
        }
    }
    s.analog_matrix(&phases)
}

/// Outcome of the power-constrained digital update.
#[derive(Debug, Clone, PartialEq)]
pub struct PcDigital {
    pub digital: CMat,
    /// Multiplier of the power equality.
    pub lambda: f64,
    /// False when the target was unreachable (zero fit target).
    pub reached: bool,
}

/// `min ||target - analog D||^2` subject to `||D||_F^2 = norm_sq`, solved as
/// `D = (Q + lambda I)^-1 G` with `Q = analog^H analog`, `G = analog^H target`
/// and `lambda > -lambda_min(Q)` found by bisection.
pub fn pc_update_td(analog: &CMat, target: &CMat, norm_sq: f64) -> Result<PcDigital> {
    if !(norm_sq > 0.0) || !norm_sq.is_finite() {
        return Err(Error::domain("digital power target must be positive"));
    }
    let q = analog.adjoint() * analog;
    let g = analog.adjoint() * target;
    let n = q.nrows();
    if frob_sq(&g) == 0.0 {
        return Ok(PcDigital { digital: CMat::zeros(n, target.ncols()), lambda: 0.0, reached: false });
    }
    let (mu, v) = hermitian_eigen(&q);
    let proj = v.adjoint() * &g;
    let weights: Vec<f64> = (0..n).map(|i| proj.row(i).norm_squared()).collect();
    let norm_at = |lambda: f64| -> f64 { (0..n).map(|i| weights[i] / (mu[i] + lambda).powi(2)).sum() };
    let build = |lambda: f64| -> CMat {
        let mut scaled = proj.clone();
        for (i, &m) in mu.iter().enumerate() {
            scaled.row_mut(i).unscale_mut(m + lambda);
        }
        &v * scaled
    };

    let floor = -mu[0];
    let wtol = 1e-14 * weights.iter().cloned().fold(0.0, f64::max);
    // the norm blows up at the floor unless the bottom eigen-directions of
    // Q see no part of G
    let tied: Vec<usize> = (0..n).filter(|&i| mu[i] - mu[0] <= 1e-12 * mu[n - 1].abs().max(1.0)).collect();
    let blows_up = tied.iter().any(|&i| weights[i] > wtol);
    if !blows_up {
        let rest: f64 = (0..n).filter(|i| !tied.contains(i)).map(|i| weights[i] / (mu[i] - mu[0]).powi(2)).sum();
        if rest <= norm_sq {
            // hard case: sit on the floor and make up the norm along the
            // bottom eigenvector
            let mut scaled = proj.clone();
            for i in 0..n {
                if tied.contains(&i) {
                    scaled.row_mut(i).fill(ZERO);
                } else {
                    scaled.row_mut(i).unscale_mut(mu[i] - mu[0]);
                }
            }
            let mut d = &v * scaled;
            let extra = (norm_sq - rest).max(0.0).sqrt();
            for r in 0..n {
                d[(r, 0)] += v[(r, tied[0])] * extra;
            }
            return Ok(PcDigital { digital: d, lambda: floor, reached: true });
        }
    }

    let mut lo = floor;
    let mut hi = floor.max(0.0) + 1.0;
    while norm_at(hi) > norm_sq {
        hi = floor + 2.0 * (hi - floor);
        if !hi.is_finite() {
            return Err(Error::numeric("power bisection bracket diverged"));
        }
    }
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if norm_at(mid) > norm_sq {
            lo = mid;
        } else {
            hi = mid;
        }
        if (hi - lo) <= 1e-15 * (hi.abs() + (mu[0] + hi).abs()) {
            break;
        }
    }
    let lambda = hi;
    let mut d = build(lambda);
    // remove the last rounding of the bisection from the norm
    d *= crate::linalg::real((norm_sq / frob_sq(&d)).sqrt());
    Ok(PcDigital { digital: d, lambda, reached: true })
}

pub(crate) struct Persistent {
    structure: PcStructure,
    /// `Some(norm)` for the power-equality transmit update, `None` for the
    /// plain least-squares receive update.
    digital_norm_sq: Option<f64>,
}

impl HybridStage for Persistent {
    fn initial_analog(&self, antennas: usize, chains: usize, _init: &InitOptions, rng: &mut ChaCha8Rng) -> Result<CMat> {
        debug_assert_eq!((antennas, chains), (self.structure.antennas, self.structure.rf_chains));
        Ok(self.structure.analog_matrix(&random_phases(rng, antennas)))
    }

    fn analog(&self, target: &CMat, digital: &CMat) -> CMat {
        pc_update_trf(target, digital, &self.structure)
    }

    fn digital(&self, analog: &CMat, target: &CMat) -> CMat {
        match self.digital_norm_sq {
            Some(n) => match pc_update_td(analog, target, n) {
                Ok(d) if d.reached => d.digital,
                _ => pinv(analog) * target,
            },
            None => pinv(analog) * target,
        }
    }
}

/// Runs the optimizer with the persistently-connected analog and digital updates.
pub fn pc_solve(p: &Problem, init: &InitOptions, settings: &PddSettings) -> Result<Solution> {
    let cfg = p.cfg;
    let tx = PcStructure::new(cfg.tx_antennas, cfg.tx_rf_chains)?;
    let rx = PcStructure::new(cfg.rx_antennas, cfg.rx_rf_chains)?;
    let power = cfg.transmit_power * (1.0 - settings.margin);
    let tx_stage = Persistent {
        structure: tx,
        digital_norm_sq: Some(power / tx.block() as f64),
    };
    let rx_stage = Persistent { structure: rx, digital_norm_sq: None };
    run_hybrid(p, Architecture::Pc, &tx_stage, &rx_stage, init, settings)
}

/// Unit-modulus block-diagonal matrix from per-antenna phases (test helper
/// and building block for callers assembling their own designs).
pub fn block_diagonal(s: &PcStructure, phases: &[f64]) -> CMat {
    let mut a = CMat::zeros(s.antennas, s.rf_chains);
    for (m, &p) in phases.iter().enumerate() {
        a[(m, s.chain_of(m))] = cis(p);
    }
    a
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{max_abs_diff, C64};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn random_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> CMat {
        CMat::from_fn(r, c, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
    }

    #[test]
    fn structure_requires_divisibility() {
        assert!(PcStructure::new(16, 4).is_ok());
        assert!(PcStructure::new(10, 4).is_err());
        let s = PcStructure::new(8, 2).unwrap();
        assert_eq!((s.chain_of(3), s.chain_of(4)), (0, 1));
        assert_eq!(s.analog_matrix(&[0.0; 8]), block_diagonal(&s, &[0.0; 8]));
    }

    #[test]
    fn exact_phases_are_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let s = PcStructure::new(8, 2).unwrap();
        let phases: Vec<f64> = (0..8).map(|_| rng.random_range(-3.0..3.0)).collect();
        let a = block_diagonal(&s, &phases);
        let d = random_mat(&mut rng, 2, 3);
        let got = pc_update_trf(&(&a * &d), &d, &s);
        assert!(max_abs_diff(&got, &a) < 1e-12);
    }

    #[test]
    fn closed_form_phase_beats_a_fine_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let s = PcStructure::new(6, 3).unwrap();
        let z = random_mat(&mut rng, 6, 2);
        let d = random_mat(&mut rng, 3, 2);
        let a = pc_update_trf(&z, &d, &s);
        for m in 0..6 {
            let n = s.chain_of(m);
            let cost = |p: f64| (z.row(m) - d.row(n) * cis(p)).norm_squared();
            let closed = cost(a[(m, n)].arg());
            let steps = (std::f64::consts::TAU / 1e-4) as usize;
            let grid = (0..steps).map(|i| cost(i as f64 * 1e-4)).fold(f64::INFINITY, f64::min);
            assert!(closed <= grid + 1e-12 && grid - closed <= 1e-6, "{closed} vs {grid}");
        }
    }

    #[test]
    fn zero_digital_row_gives_zero_phase() {
        let s = PcStructure::new(4, 2).unwrap();
        let z = CMat::from_element(4, 1, C64::new(0.3, 0.4));
        let mut d = CMat::from_element(2, 1, C64::new(1.0, 0.0));
        d[(1, 0)] = ZERO;
        let a = pc_update_trf(&z, &d, &s);
        for m in 2..4 {
            assert_eq!(a[(m, 1)], C64::new(1.0, 0.0));
        }
    }

    #[test]
    fn analytic_scaled_identity_case() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        for _ in 0..20 {
            let s = PcStructure::new(8, 4).unwrap();
            let phases: Vec<f64> = (0..8).map(|_| rng.random_range(-3.0..3.0)).collect();
            let a = block_diagonal(&s, &phases);
            let z = random_mat(&mut rng, 8, 2);
            let target = rng.random_range(0.1..5.0);
            let out = pc_update_td(&a, &z, target).unwrap();
            let g = a.adjoint() * &z;
            let m = s.block() as f64;
            let lambda = g.norm() / target.sqrt() - m;
            let expect = g.unscale(m + lambda);
            assert!(max_abs_diff(&out.digital, &expect) <= 1e-8 * expect.norm());
            assert!((out.lambda - lambda).abs() <= 1e-8 * lambda.abs().max(1.0));
        }
    }

    #[test]
    fn unconstrained_optimum_on_the_sphere_has_zero_multiplier() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let a = random_mat(&mut rng, 6, 3);
        let d0 = random_mat(&mut rng, 3, 2);
        let z = &a * &d0;
        let out = pc_update_td(&a, &z, frob_sq(&d0)).unwrap();
        assert!(out.lambda.abs() < 1e-8, "{}", out.lambda);
        assert!(max_abs_diff(&out.digital, &d0) < 1e-8);
    }

    #[test]
    fn negative_multiplier_when_the_fit_is_too_small() {
        let mut rng = ChaCha8Rng::seed_from_u64(45);
        let a = random_mat(&mut rng, 6, 3);
        let z = random_mat(&mut rng, 6, 2).scale(0.01);
        let out = pc_update_td(&a, &z, 4.0).unwrap();
        assert!(out.lambda < 0.0);
        assert!((frob_sq(&out.digital) - 4.0).abs() <= 1e-6 * 4.0);
    }

    #[test]
    fn zero_target_is_flagged() {
        let a = CMat::identity(4, 2);
        let out = pc_update_td(&a, &CMat::zeros(4, 1), 1.0).unwrap();
        assert!(!out.reached);
        assert_eq!(frob_sq(&out.digital), 0.0);
        assert!(pc_update_td(&a, &CMat::zeros(4, 1), 0.0).is_err());
    }

    #[test]
    fn hard_case_still_meets_the_norm() {
        // target orthogonal to the weakest direction of the analog matrix
        let mut a = CMat::zeros(3, 2);
        a[(0, 0)] = C64::new(2.0, 0.0);
        a[(1, 1)] = C64::new(1.0, 0.0);
        let mut z = CMat::zeros(3, 1);
        z[(0, 0)] = C64::new(0.1, 0.0);
        let out = pc_update_td(&a, &z, 9.0).unwrap();
        assert!((frob_sq(&out.digital) - 9.0).abs() < 1e-9);
    }

    #[test]
    fn solve_keeps_the_wiring_and_the_power() {
        use crate::model::{generate_channel, PathLossModel, RadarScene, SystemConfig};
        let cfg = SystemConfig::desk_scale();
        let ch = generate_channel(&cfg, &PathLossModel::default(), &[80.0; 2], &[3; 2], 11).unwrap();
        let scene = RadarScene::default();
        let p = Problem { cfg: &cfg, channels: &ch, scene: &scene, gamma: 10.0 };
        let settings = PddSettings::default();
        let s = pc_solve(&p, &InitOptions::new(11), &settings).unwrap();
        assert!(s.violation < 1e-4 && s.scnr >= 10.0 * (1.0 - 1e-4));
        for (a, st) in [(&s.bf.t_rf, PcStructure::new(16, 4).unwrap()), (&s.bf.w_rf, PcStructure::new(8, 4).unwrap())] {
            for m in 0..a.nrows() {
                for n in 0..a.ncols() {
                    let v = a[(m, n)];
                    if n == st.chain_of(m) {
                        assert!((v.norm() - 1.0).abs() < 1e-12);
                    } else {
                        assert_eq!(v, ZERO);
                    }
                }
            }
        }
        let power = cfg.transmit_power * (1.0 - settings.margin);
        assert!((frob_sq(&s.bf.t_d) - 4.0 * power / 16.0).abs() <= 1e-6 * power);
        assert!((s.transmit_power - power).abs() <= 1e-6 * power);
    }

    proptest! {
        #[test]
        fn power_equality_and_monotone_norm(seed in 0u64..10_000, target in 0.05f64..20.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = PcStructure::new(8, 2).unwrap();
            let phases: Vec<f64> = (0..8).map(|_| rng.random_range(-3.0..3.0)).collect();
            let a = block_diagonal(&s, &phases);
            let z = random_mat(&mut rng, 8, 3);
            let out = pc_update_td(&a, &z, target).unwrap();
            prop_assert!((frob_sq(&out.digital) - target).abs() <= 1e-6 * target);
            let q = a.adjoint() * &a;
            let g = a.adjoint() * &z;
            let mut prev = f64::INFINITY;
            for i in 1..20 {
                let lambda = -(s.block() as f64) + 0.05 * i as f64 * i as f64;
                let d = crate::linalg::inverse(&(&q + CMat::identity(2, 2).scale(lambda))).unwrap() * &g;
                let n = d.norm();
                prop_assert!(n < prev);
                prev = n;
            }
        }
    }
}
