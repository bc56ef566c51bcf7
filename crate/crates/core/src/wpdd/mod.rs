//! Penalty-dual-decomposition optimizer for hybrid DFRC beamforming.
//!
//! The auxiliary fully-digital beamformers `T_k` and `W` are tied to their
//! hybrid factorizations by quadratic penalties with dual variables. The
//! inner loop sweeps eight blocks (radar receiver, transmit SOCP, user
//! combiners, WMMSE weights, both analog stages, both digital stages); the
//! outer loop then either moves the duals or tightens the penalty.
//!
//! [`solve`] covers reconfigurable subarrays and the fully-digital bound;
//! the persistently-connected variant lives in [`crate::pc_variant`] and runs
//! through the same loop.

mod analog;
mod blocks;

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{frob_sq, vectorize, CMat, CVec};
use crate::metrics::{achievable_sum_rate, join_blocks, optimal_receive_scnr, scnr_trace_ratio, split_blocks, Architecture, BeamformerSet};
use crate::model::{ChannelSet, RadarScene, SystemConfig};

pub use analog::{fit_residual, ls_digital, ls_digital_subarray, map_subarrays, SubarrayMap};
pub use blocks::{
    phi_matrix, radar_gain, sca_bound, update_g, update_u, update_w, violation, wmmse_objective, PddState, ScaSettings,
    TransmitOutcome, TransmitPenalty, TransmitStep,
};

/// When the radar matrix `Phi` is rebuilt from the current hybrid transmitter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhiRefresh {
    /// Before every inner sweep.
    PerSweep,
    /// Once at the start of every outer iteration.
    PerOuter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PddSettings {
    pub rho0: f64,
    pub shrink: f64,
    pub eta_decay: f64,
    pub inner_tol: f64,
    pub outer_tol: f64,
    pub max_inner: usize,
    pub max_outer: usize,
    /// Sweep cap of the fully-digital solve, which has no outer loop.
    pub max_digital_sweeps: usize,
    pub sca: ScaSettings,
    /// Relative head-room kept on the SCNR target and the power budget so
    /// the final hybrid design meets both after the residual mismatch.
    pub margin: f64,
    pub phi_refresh: PhiRefresh,
    /// Scale the MVDR receiver along its ray to best fit the hybrid receiver.
    pub fit_receiver_scale: bool,
    /// Record the objective after every block update (diagnostics only).
    pub record_blocks: bool,
}

impl Default for PddSettings {
    fn default() -> Self {
        Self {
            rho0: 1.0,
            shrink: 0.6,
            eta_decay: 0.8,
            inner_tol: 1e-4,
            outer_tol: 1e-4,
            max_inner: 30,
            max_outer: 60,
            max_digital_sweeps: 300,
            sca: ScaSettings::default(),
            margin: 1e-3,
            phi_refresh: PhiRefresh::PerSweep,
            fit_receiver_scale: true,
            record_blocks: false,
        }
    }
}

impl PddSettings {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64, what: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(format!("{what} must be positive")))
            }
        };
        pos(self.rho0, "rho0")?;
        pos(self.inner_tol, "inner_tol")?;
        pos(self.outer_tol, "outer_tol")?;
        pos(self.sca.socp_tol, "socp_tol")?;
        if !(self.shrink > 0.0 && self.shrink < 1.0) || !(self.eta_decay > 0.0 && self.eta_decay < 1.0) {
            return Err(Error::config("shrink and eta_decay must lie in (0, 1)"));
        }
        if self.max_inner == 0 || self.max_outer == 0 || self.max_digital_sweeps == 0 || self.sca.max_rounds == 0 {
            return Err(Error::config("iteration caps must be at least 1"));
        }
        if !(0.0..0.5).contains(&self.margin) {
            return Err(Error::config("margin must lie in [0, 0.5)"));
        }
        Ok(())
    }
}

/// Fixed problem data of one solve.
#[derive(Debug, Clone, Copy)]
pub struct Problem<'a> {
    pub cfg: &'a SystemConfig,
    pub channels: &'a ChannelSet,
    pub scene: &'a RadarScene,
    /// Linear SCNR target.
    pub gamma: f64,
}

impl Problem<'_> {
    pub fn validate(&self) -> Result<()> {
        self.cfg.validate()?;
        self.scene.validate()?;
        self.channels.check(self.cfg)?;
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return Err(Error::config("SCNR target must be finite and nonnegative"));
        }
        Ok(())
    }
}

/// Antenna-to-chain wiring used for the initial analog matrices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitAssignment {
    RoundRobin,
    Contiguous,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InitOptions {
    /// Seed of the random initial analog phases.
    pub seed: u64,
    pub assignment: InitAssignment,
}

impl InitOptions {
    pub fn new(seed: u64) -> Self {
        Self { seed, assignment: InitAssignment::RoundRobin }
    }
}

/// One outer iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuterRecord {
    /// Inner objective after the last sweep.
    pub objective: f64,
    pub violation: f64,
    /// Penalty parameter used by this iteration's inner loop.
    pub rho: f64,
    /// Optimal-receiver SCNR of the hybrid transmitter.
    pub scnr: f64,
    /// Sum-rate of the hybrid transmitter with MMSE combiners, bits/s/Hz.
    pub sum_rate: f64,
    /// Inner objective after each sweep.
    pub sweep_objectives: Vec<f64>,
    /// Inner objective before the first sweep.
    pub start_objective: f64,
    pub dual_step: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Analog updates that left at least one RF chain without antennas.
    pub empty_subarrays: usize,
    pub bootstraps: usize,
    /// Radar-receiver steps that kept the incumbent over the MVDR update.
    pub kept_receivers: usize,
    pub rejected_sca_rounds: usize,
    pub solver_failures: usize,
    /// The final digital stage was scaled down onto the power budget.
    pub power_rescaled: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub outer: Vec<OuterRecord>,
    /// Objective after each of the eight blocks, per sweep, when recorded.
    pub blocks: Vec<[f64; 9]>,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    /// Outer (or sweep) cap reached before the violation fell below tolerance.
    IterationLimit,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub architecture: Architecture,
    pub bf: BeamformerSet,
    pub trace: Trace,
    pub status: SolveStatus,
    pub sum_rate: f64,
    /// Optimal-receiver SCNR of the final transmitter.
    pub scnr: f64,
    /// SCNR with the final hybrid radar receiver.
    pub scnr_receiver: f64,
    pub violation: f64,
    pub transmit_power: f64,
    pub outer_iterations: usize,
    pub wall_time: f64,
}

/// Analog/digital block pair for one side of the array.
pub(crate) trait HybridStage: Sync {
    /// Initial analog matrix for `antennas x chains`.
    fn initial_analog(&self, antennas: usize, chains: usize, init: &InitOptions, rng: &mut ChaCha8Rng) -> Result<CMat>;
    fn analog(&self, target: &CMat, digital: &CMat) -> CMat;
    fn digital(&self, analog: &CMat, target: &CMat) -> CMat;
}

/// Reconfigurable subarrays: exact row-wise mapping and per-subarray least squares.
pub(crate) struct Reconfigurable;

impl HybridStage for Reconfigurable {
    fn initial_analog(&self, antennas: usize, chains: usize, init: &InitOptions, rng: &mut ChaCha8Rng) -> Result<CMat> {
        let map = match init.assignment {
            InitAssignment::RoundRobin => SubarrayMap::round_robin(antennas, chains),
            InitAssignment::Contiguous => SubarrayMap::contiguous(antennas, chains),
        };
        Ok(map.analog_matrix(&random_phases(rng, antennas)))
    }

    fn analog(&self, target: &CMat, digital: &CMat) -> CMat {
        map_subarrays(target, digital).0
    }

    fn digital(&self, analog: &CMat, target: &CMat) -> CMat {
        ls_digital_subarray(analog, &SubarrayMap::from_analog(analog), target)
    }
}

pub(crate) fn random_phases(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-std::f64::consts::PI..std::f64::consts::PI)).collect()
}

/// Matched targets for initialisation: the top `d_s` right singular vectors
/// of each user's channel, equal power per stream.
fn matched_targets(p: &Problem) -> CMat {
    let cfg = p.cfg;
    let mut blocks = Vec::with_capacity(cfg.users);
    for k in 0..cfg.users {
        let h = p.channels.h(k);
        let svd = h.clone().svd(false, true);
        let v_t = svd.v_t.expect("right singular vectors");
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
        let mut t = CMat::zeros(cfg.tx_antennas, cfg.streams_per_user);
        for (s, &i) in order.iter().take(cfg.streams_per_user).enumerate() {
            t.set_column(s, &v_t.row(i).adjoint());
        }
        blocks.push(t);
    }
    let t = join_blocks(&blocks);
    let n = frob_sq(&t).sqrt();
    t.scale(cfg.transmit_power.sqrt() / n)
}

fn count_empty(analog: &CMat) -> usize {
    (0..analog.ncols()).filter(|&n| analog.column(n).iter().all(|z| z.norm_sqr() == 0.0)).count()
}

fn stacked(t: &[CMat]) -> CVec {
    vectorize(&join_blocks(t))
}

struct Iterate {
    t_aux: Vec<CMat>,
    w_aux: CMat,
    t_rf: CMat,
    t_d: CMat,
    w_rf: CMat,
    w_d: CMat,
    u: Vec<CMat>,
    g: Vec<CMat>,
}

impl Iterate {
    fn objective(&self, p: &Problem, st: &PddState) -> Result<f64> {
        let base = wmmse_objective(p.channels, &self.t_aux, &self.u, &self.g, p.cfg.user_noise)?;
        Ok(base + st.penalty(&self.t_aux, &self.t_rf, &self.t_d, &self.w_aux, &self.w_rf, &self.w_d))
    }

    fn violation(&self) -> f64 {
        violation(&self.t_aux, &self.t_rf, &self.t_d, &self.w_aux, &self.w_rf, &self.w_d)
    }

    fn hybrid(&self) -> CMat {
        &self.t_rf * &self.t_d
    }
}

/// Solves for reconfigurable subarrays (`Rs`) or the fully-digital bound (`Fd`).
pub fn solve(p: &Problem, arch: Architecture, init: &InitOptions, settings: &PddSettings) -> Result<Solution> {
    match arch {
        Architecture::Rs => run_hybrid(p, Architecture::Rs, &Reconfigurable, &Reconfigurable, init, settings),
        Architecture::Fd => run_digital(p, init, settings),
        other => Err(Error::domain(format!("solve handles rs and fd, not {other}"))),
    }
}

pub(crate) fn run_hybrid(
    p: &Problem,
    arch: Architecture,
    tx: &dyn HybridStage,
    rx: &dyn HybridStage,
    init: &InitOptions,
    settings: &PddSettings,
) -> Result<Solution> {
    p.validate()?;
    settings.validate()?;
    let started = Instant::now();
    let cfg = p.cfg;
    let ds = cfg.streams_per_user;
    let gamma_eff = p.gamma * (1.0 + settings.margin);
    let power_eff = cfg.transmit_power * (1.0 - settings.margin);
    let mut rng = ChaCha8Rng::seed_from_u64(init.seed);

    let t_rf = tx.initial_analog(cfg.tx_antennas, cfg.tx_rf_chains, init, &mut rng)?;
    let w_rf = rx.initial_analog(cfg.rx_antennas, cfg.rx_rf_chains, init, &mut rng)?;
    let target = matched_targets(p);
    let mut t_d = tx.digital(&t_rf, &target);
    let hp = frob_sq(&(&t_rf * &t_d));
    if hp > 0.0 {
        t_d *= crate::linalg::real((power_eff / hp).sqrt());
    }
    let t_aux = split_blocks(&(&t_rf * &t_d), ds);
    let w = update_w(&stacked(&t_aux), p.scene, cfg)?;
    let w_aux = CMat::from_column_slice(cfg.rx_antennas, cfg.total_streams(), w.as_slice());
    let w_d = rx.digital(&w_rf, &w_aux);
    let u = update_u(p.channels, &t_aux, cfg.user_noise)?;
    let g = update_g(p.channels, &t_aux, &u, cfg.user_noise)?;
    let mut it = Iterate { t_aux, w_aux, t_rf, t_d, w_rf, w_d, u, g };
    let mut st = PddState::new(settings.rho0, settings.shrink, settings.eta_decay, cfg)?;
    let mut trace = Trace::default();
    let mut status = SolveStatus::IterationLimit;
    let mut phi = phi_matrix(&it.hybrid(), p.scene, cfg)?;

    for _outer in 0..settings.max_outer {
        let rho = st.rho;
        if settings.phi_refresh == PhiRefresh::PerOuter {
            phi = phi_matrix(&it.hybrid(), p.scene, cfg)?;
        }
        let start_objective = it.objective(p, &st)?;
        let mut prev = start_objective;
        let mut sweeps = Vec::new();
        for _inner in 0..settings.max_inner {
            let mut rec = [0.0; 9];
            let record = settings.record_blocks;
            if record {
                rec[0] = it.objective(p, &st)?;
            }
            // radar receiver
            let w = update_w(&stacked(&it.t_aux), p.scene, cfg)?;
            let mut w_new = CMat::from_column_slice(cfg.rx_antennas, cfg.total_streams(), w.as_slice());
            let centre = &it.w_rf * &it.w_d - st.dual_rx.scale(st.rho);
            if settings.fit_receiver_scale {
                let n = frob_sq(&w_new);
                if n > 0.0 {
                    let alpha = w_new.dotc(&centre) / n;
                    w_new *= alpha;
                }
            }
            // MVDR ignores the receive penalty; keep the incumbent when it
            // fits better and still meets the SCNR target
            let keep = frob_sq(&(&it.w_aux - &centre)) < frob_sq(&(&w_new - &centre))
                && frob_sq(&it.w_aux) > 0.0
                && scnr_trace_ratio(&join_blocks(&it.t_aux), &it.w_aux, p.scene, cfg)? >= gamma_eff;
            if keep {
                trace.diagnostics.kept_receivers += 1;
            } else {
                it.w_aux = w_new;
            }
            if record {
                rec[1] = it.objective(p, &st)?;
            }
            // auxiliary transmitter
            if settings.phi_refresh == PhiRefresh::PerSweep {
                phi = phi_matrix(&it.hybrid(), p.scene, cfg)?;
            }
            let pen = st.transmit_penalty(&it.t_rf, &it.t_d);
            let step = TransmitStep {
                channels: p.channels,
                u: &it.u,
                g: &it.g,
                phi: &phi,
                gamma: gamma_eff,
                power: power_eff,
                noise: cfg.user_noise,
                penalty: Some(&pen),
            };
            let out = step.solve(&it.t_aux, &settings.sca)?;
            trace.diagnostics.bootstraps += out.bootstraps;
            trace.diagnostics.rejected_sca_rounds += out.rejected;
            trace.diagnostics.solver_failures += out.solver_failures;
            it.t_aux = out.t;
            if record {
                rec[2] = it.objective(p, &st)?;
            }
            it.u = update_u(p.channels, &it.t_aux, cfg.user_noise)?;
            if record {
                rec[3] = it.objective(p, &st)?;
            }
            it.g = update_g(p.channels, &it.t_aux, &it.u, cfg.user_noise)?;
            if record {
                rec[4] = it.objective(p, &st)?;
            }
            let z = st.transmit_target(&it.t_aux);
            it.t_rf = tx.analog(&z, &it.t_d);
            if count_empty(&it.t_rf) > 0 {
                trace.diagnostics.empty_subarrays += 1;
            }
            if record {
                rec[5] = it.objective(p, &st)?;
            }
            let q = st.receive_target(&it.w_aux);
            it.w_rf = rx.analog(&q, &it.w_d);
            if count_empty(&it.w_rf) > 0 {
                trace.diagnostics.empty_subarrays += 1;
            }
            if record {
                rec[6] = it.objective(p, &st)?;
            }
            it.t_d = tx.digital(&it.t_rf, &z);
            if record {
                rec[7] = it.objective(p, &st)?;
            }
            it.w_d = rx.digital(&it.w_rf, &q);
            let obj = it.objective(p, &st)?;
            if record {
                rec[8] = obj;
                trace.blocks.push(rec);
            }
            sweeps.push(obj);
            let done = (prev - obj).abs() <= settings.inner_tol * obj.abs().max(1.0);
            prev = obj;
            if done {
                break;
            }
        }
        let h = it.violation();
        let hyb = it.hybrid();
        let blocks = split_blocks(&hyb, ds);
        trace.outer.push(OuterRecord {
            objective: prev,
            violation: h,
            rho,
            scnr: optimal_receive_scnr(&hyb, p.scene, cfg)?,
            sum_rate: achievable_sum_rate(p.channels, &blocks, cfg.user_noise)?,
            sweep_objectives: sweeps,
            start_objective,
            dual_step: false,
        });
        if h < settings.outer_tol {
            status = SolveStatus::Converged;
            break;
        }
        let moved = st.outer_update(h, &it.t_aux, &it.t_rf, &it.t_d, &it.w_aux, &it.w_rf, &it.w_d);
        if let Some(last) = trace.outer.last_mut() {
            last.dual_step = moved;
        }
    }

    let power = frob_sq(&it.hybrid());
    if power > cfg.transmit_power {
        it.t_d *= crate::linalg::real((cfg.transmit_power / power).sqrt());
        trace.diagnostics.power_rescaled = true;
    }
    let hyb = it.hybrid();
    let blocks = split_blocks(&hyb, ds);
    let u = update_u(p.channels, &blocks, cfg.user_noise)?;
    let bf = BeamformerSet {
        t_rf: it.t_rf.clone(),
        t_d: it.t_d.clone(),
        u,
        w_rf: it.w_rf.clone(),
        w_d: it.w_d.clone(),
        t_aux: it.t_aux.clone(),
        w_aux: it.w_aux.clone(),
        streams_per_user: ds,
    };
    let receiver = bf.hybrid_receive();
    let scnr_receiver = if frob_sq(&receiver) > 0.0 {
        scnr_trace_ratio(&hyb, &receiver, p.scene, cfg)?
    } else {
        0.0
    };
    Ok(Solution {
        architecture: arch,
        sum_rate: achievable_sum_rate(p.channels, &blocks, cfg.user_noise)?,
        scnr: optimal_receive_scnr(&hyb, p.scene, cfg)?,
        scnr_receiver,
        violation: it.violation(),
        transmit_power: frob_sq(&hyb),
        outer_iterations: trace.outer.len(),
        wall_time: started.elapsed().as_secs_f64(),
        bf,
        trace,
        status,
    })
}

/// Fully-digital design: only the radar receiver, transmit, combiner and
/// weight blocks, with no penalties.
fn run_digital(p: &Problem, _init: &InitOptions, settings: &PddSettings) -> Result<Solution> {
    p.validate()?;
    settings.validate()?;
    let started = Instant::now();
    let cfg = p.cfg;
    let ds = cfg.streams_per_user;
    let gamma_eff = p.gamma * (1.0 + settings.margin);
    let power_eff = cfg.transmit_power * (1.0 - settings.margin);
    let mut t = split_blocks(&matched_targets(p).scale((1.0 - settings.margin).sqrt()), ds);
    let mut u = update_u(p.channels, &t, cfg.user_noise)?;
    let mut g = update_g(p.channels, &t, &u, cfg.user_noise)?;
    let mut trace = Trace::default();
    // start the monotone sequence from a point meeting the radar constraint
    let w = update_w(&stacked(&t), p.scene, cfg)?;
    let phi = phi_matrix(&join_blocks(&t), p.scene, cfg)?;
    let step = TransmitStep {
        channels: p.channels,
        u: &u,
        g: &g,
        phi: &phi,
        gamma: gamma_eff,
        power: power_eff,
        noise: cfg.user_noise,
        penalty: None,
    };
    if !step.feasible(&t) {
        let (start, rounds) = step.feasible_point(&t, &settings.sca)?;
        trace.diagnostics.bootstraps += rounds;
        t = start;
        u = update_u(p.channels, &t, cfg.user_noise)?;
        g = update_g(p.channels, &t, &u, cfg.user_noise)?;
    }
    let mut w_aux = CMat::from_column_slice(cfg.rx_antennas, cfg.total_streams(), w.as_slice());
    let start_objective = wmmse_objective(p.channels, &t, &u, &g, cfg.user_noise)?;
    let mut prev = start_objective;
    let mut sweeps = Vec::new();
    let mut status = SolveStatus::IterationLimit;
    for _ in 0..settings.max_digital_sweeps {
        let w = update_w(&stacked(&t), p.scene, cfg)?;
        w_aux = CMat::from_column_slice(cfg.rx_antennas, cfg.total_streams(), w.as_slice());
        let phi = phi_matrix(&join_blocks(&t), p.scene, cfg)?;
        let step = TransmitStep {
            channels: p.channels,
            u: &u,
            g: &g,
            phi: &phi,
            gamma: gamma_eff,
            power: power_eff,
            noise: cfg.user_noise,
            penalty: None,
        };
        let out = step.solve(&t, &settings.sca)?;
        trace.diagnostics.bootstraps += out.bootstraps;
        trace.diagnostics.rejected_sca_rounds += out.rejected;
        trace.diagnostics.solver_failures += out.solver_failures;
        t = out.t;
        u = update_u(p.channels, &t, cfg.user_noise)?;
        g = update_g(p.channels, &t, &u, cfg.user_noise)?;
        let obj = wmmse_objective(p.channels, &t, &u, &g, cfg.user_noise)?;
        sweeps.push(obj);
        let done = (prev - obj).abs() <= settings.inner_tol * obj.abs().max(1.0);
        prev = obj;
        if done {
            status = SolveStatus::Converged;
            break;
        }
    }
    let hyb = join_blocks(&t);
    let scnr = optimal_receive_scnr(&hyb, p.scene, cfg)?;
    let sum_rate = achievable_sum_rate(p.channels, &t, cfg.user_noise)?;
    trace.outer.push(OuterRecord {
        objective: prev,
        violation: 0.0,
        rho: f64::INFINITY,
        scnr,
        sum_rate,
        sweep_objectives: sweeps,
        start_objective,
        dual_step: false,
    });
    let bf = BeamformerSet {
        t_rf: CMat::identity(cfg.tx_antennas, cfg.tx_antennas),
        t_d: hyb.clone(),
        u,
        w_rf: CMat::identity(cfg.rx_antennas, cfg.rx_antennas),
        w_d: w_aux.clone(),
        t_aux: t,
        w_aux: w_aux.clone(),
        streams_per_user: ds,
    };
    Ok(Solution {
        architecture: Architecture::Fd,
        scnr_receiver: scnr_trace_ratio(&hyb, &w_aux, p.scene, cfg)?,
        transmit_power: frob_sq(&hyb),
        sum_rate,
        scnr,
        violation: 0.0,
        outer_iterations: 1,
        wall_time: started.elapsed().as_secs_f64(),
        bf,
        trace,
        status,
    })
}
