//! C ABI for the hybrid beamforming optimizer.
//!
//! Every fallible call returns a [`DfrcStatus`]; on failure the message is
//! available from [`dfrc_last_error_message`] on the same thread until the
//! next failing call. Objects are opaque handles created by `*_new`/`solve`
//! calls and released with the matching `*_free`. Panics never cross the
//! boundary; they surface as `DFRC_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use dfrc_core::harness::{db_to_linear, design_beampattern, run_experiment, write_results, ExperimentSpec};
use dfrc_core::metrics::detection_probability;
use dfrc_core::model::generate_channel;
use dfrc_core::pc_variant::pc_solve;
use dfrc_core::wpdd::{solve, InitOptions, PddSettings, Problem, Solution, SolveStatus};
use dfrc_core::{Architecture, ChannelSet, Error, PathLossModel, RadarScene, SystemConfig};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DfrcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Infeasible = 4,
    Numeric = 5,
    Io = 6,
    Panic = 7,
}

/// Beamforming architecture.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DfrcArchitecture {
    /// Reconfigurable subarrays.
    Rs = 0,
    /// Persistently connected subarrays.
    Pc = 1,
    /// Fully digital.
    Fd = 2,
}

/// System dimensions and powers in linear units (watts, meters).
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DfrcConfig {
    pub tx_antennas: u32,
    pub rx_antennas: u32,
    pub tx_rf_chains: u32,
    pub rx_rf_chains: u32,
    pub users: u32,
    pub user_antennas: u32,
    pub streams_per_user: u32,
    pub transmit_power: f64,
    pub user_noise: f64,
    pub radar_noise: f64,
    pub wavelength: f64,
    pub spacing: f64,
}

impl From<&SystemConfig> for DfrcConfig {
    fn from(c: &SystemConfig) -> Self {
        Self {
            tx_antennas: c.tx_antennas as u32,
            rx_antennas: c.rx_antennas as u32,
            tx_rf_chains: c.tx_rf_chains as u32,
            rx_rf_chains: c.rx_rf_chains as u32,
            users: c.users as u32,
            user_antennas: c.user_antennas as u32,
            streams_per_user: c.streams_per_user as u32,
            transmit_power: c.transmit_power,
            user_noise: c.user_noise,
            radar_noise: c.radar_noise,
            wavelength: c.wavelength,
            spacing: c.spacing,
        }
    }
}

impl From<&DfrcConfig> for SystemConfig {
    fn from(c: &DfrcConfig) -> Self {
        Self {
            tx_antennas: c.tx_antennas as usize,
            rx_antennas: c.rx_antennas as usize,
            tx_rf_chains: c.tx_rf_chains as usize,
            rx_rf_chains: c.rx_rf_chains as usize,
            users: c.users as usize,
            user_antennas: c.user_antennas as usize,
            streams_per_user: c.streams_per_user as usize,
            transmit_power: c.transmit_power,
            user_noise: c.user_noise,
            radar_noise: c.radar_noise,
            wavelength: c.wavelength,
            spacing: c.spacing,
        }
    }
}

/// Scalar outcome of a solve.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DfrcSummary {
    pub sum_rate: f64,
    /// SCNR with the best receiver for the final transmitter, linear.
    pub scnr: f64,
    /// SCNR with the designed hybrid receiver, linear.
    pub scnr_receiver: f64,
    pub violation: f64,
    pub transmit_power: f64,
    pub outer_iterations: u32,
    /// 1 when the outer loop met its tolerance.
    pub converged: u8,
}

/// A channel realization, radar scene and SCNR target.
pub struct DfrcProblem {
    cfg: SystemConfig,
    channels: ChannelSet,
    scene: RadarScene,
    gamma: f64,
}

/// An optimized design.
pub struct DfrcSolution {
    cfg: SystemConfig,
    solution: Solution,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> DfrcStatus {
    match e {
        Error::Config(_) => DfrcStatus::Config,
        Error::Domain(_) => DfrcStatus::InvalidArgument,
        Error::InfeasibleGamma { .. } => DfrcStatus::Infeasible,
        Error::Numeric(_) | Error::Solver(_) => DfrcStatus::Numeric,
        Error::Io { .. } | Error::Format(_) => DfrcStatus::Io,
    }
}

/// Runs `body`, converting errors and panics into status codes.
fn guard(body: impl FnOnce() -> Result<(), (DfrcStatus, String)>) -> DfrcStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => DfrcStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(&format!("internal panic: {msg}"));
            DfrcStatus::Panic
        }
    }
}

fn core_err(e: Error) -> (DfrcStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (DfrcStatus, String) {
    (DfrcStatus::NullPointer, format!("{what} is null"))
}

unsafe fn c_path<'a>(p: *const c_char, what: &str) -> Result<&'a Path, (DfrcStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(Path::new)
        .map_err(|_| (DfrcStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dfrc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failing call on this thread, or NULL if none.
/// The pointer stays valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn dfrc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Clears the last error message of this thread.
#[no_mangle]
pub extern "C" fn dfrc_clear_last_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

/// Fills `out` with the desk-scale system (16 x 8 antennas, 4 + 4 RF chains,
/// two single-stream users).
///
/// # Safety
/// `out` must be NULL or point to writable memory for one `DfrcConfig`.
#[no_mangle]
pub unsafe extern "C" fn dfrc_config_desk_scale(out: *mut DfrcConfig) -> DfrcStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = DfrcConfig::from(&SystemConfig::desk_scale());
        Ok(())
    })
}

/// Draws a channel for `cfg` from `seed` (users at 80 m, three paths each,
/// target at broadside, clutter at +-30 degrees) and stores the problem with
/// an SCNR target of `gamma_db` in `*out`.
///
/// # Safety
/// `cfg` must be NULL or point to a valid `DfrcConfig`; `out` must be NULL or
/// point to writable memory for one pointer.
#[no_mangle]
pub unsafe extern "C" fn dfrc_problem_new(cfg: *const DfrcConfig, gamma_db: f64, seed: u64, out: *mut *mut DfrcProblem) -> DfrcStatus {
    guard(|| {
        let cfg = SystemConfig::from(cfg.as_ref().ok_or_else(|| null("cfg"))?);
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = ptr::null_mut();
        if !gamma_db.is_finite() {
            return Err((DfrcStatus::InvalidArgument, "gamma_db must be finite".into()));
        }
        let channels = generate_channel(&cfg, &PathLossModel::default(), &vec![80.0; cfg.users], &vec![3; cfg.users], seed)
            .map_err(core_err)?;
        let problem = DfrcProblem { cfg, channels, scene: RadarScene::default(), gamma: db_to_linear(gamma_db) };
        *out = Box::into_raw(Box::new(problem));
        Ok(())
    })
}

/// Releases a problem. NULL is ignored.
///
/// # Safety
/// `problem` must be NULL or a pointer from `dfrc_problem_new` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dfrc_problem_free(problem: *mut DfrcProblem) {
    if !problem.is_null() {
        drop(Box::from_raw(problem));
    }
}

/// Optimizes `problem` for `arch` with default solver settings; the
/// optimizer start is drawn from `seed`.
///
/// # Safety
/// `problem` must be NULL or a live problem handle; `out` must be NULL or
/// point to writable memory for one pointer.
#[no_mangle]
pub unsafe extern "C" fn dfrc_solve(problem: *const DfrcProblem, arch: DfrcArchitecture, seed: u64, out: *mut *mut DfrcSolution) -> DfrcStatus {
    guard(|| {
        let pr = problem.as_ref().ok_or_else(|| null("problem"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = ptr::null_mut();
        let p = Problem { cfg: &pr.cfg, channels: &pr.channels, scene: &pr.scene, gamma: pr.gamma };
        let init = InitOptions::new(seed);
        let settings = PddSettings::default();
        let solution = match arch {
            DfrcArchitecture::Rs => solve(&p, Architecture::Rs, &init, &settings),
            DfrcArchitecture::Pc => pc_solve(&p, &init, &settings),
            DfrcArchitecture::Fd => solve(&p, Architecture::Fd, &init, &settings),
        }
        .map_err(core_err)?;
        *out = Box::into_raw(Box::new(DfrcSolution { cfg: pr.cfg.clone(), solution }));
        Ok(())
    })
}

/// Copies the scalar results of `solution` into `out`.
///
/// # Safety
/// `solution` must be NULL or a live solution handle; `out` must be NULL or
/// point to writable memory for one `DfrcSummary`.
#[no_mangle]
pub unsafe extern "C" fn dfrc_solution_summary(solution: *const DfrcSolution, out: *mut DfrcSummary) -> DfrcStatus {
    guard(|| {
        let s = &solution.as_ref().ok_or_else(|| null("solution"))?.solution;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = DfrcSummary {
            sum_rate: s.sum_rate,
            scnr: s.scnr,
            scnr_receiver: s.scnr_receiver,
            violation: s.violation,
            transmit_power: s.transmit_power,
            outer_iterations: s.outer_iterations as u32,
            converged: u8::from(s.status == SolveStatus::Converged),
        };
        Ok(())
    })
}

/// Writes the peak-normalized beampattern (dB) of `solution` at the `len`
/// angles of `grid_deg` (degrees) into `out`.
///
/// # Safety
/// `grid_deg` and `out` must each be NULL or point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn dfrc_solution_beampattern(
    solution: *const DfrcSolution,
    grid_deg: *const f64,
    len: usize,
    out: *mut f64,
) -> DfrcStatus {
    guard(|| {
        let s = solution.as_ref().ok_or_else(|| null("solution"))?;
        if grid_deg.is_null() {
            return Err(null("grid_deg"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        if len == 0 {
            return Err((DfrcStatus::InvalidArgument, "grid is empty".into()));
        }
        let grid = std::slice::from_raw_parts(grid_deg, len);
        let pattern = design_beampattern(&s.solution.bf, &s.cfg, grid).map_err(core_err)?;
        std::slice::from_raw_parts_mut(out, len).copy_from_slice(&pattern);
        Ok(())
    })
}

/// Releases a solution. NULL is ignored.
///
/// # Safety
/// `solution` must be NULL or a pointer from `dfrc_solve` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dfrc_solution_free(solution: *mut DfrcSolution) {
    if !solution.is_null() {
        drop(Box::from_raw(solution));
    }
}

/// Detection probability of a Swerling-0 target at linear `scnr` and
/// false-alarm probability `p_fa`.
///
/// # Safety
/// `out` must be NULL or point to writable memory for one double.
#[no_mangle]
pub unsafe extern "C" fn dfrc_detection_probability(scnr: f64, p_fa: f64, out: *mut f64) -> DfrcStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = detection_probability(scnr, p_fa).map_err(core_err)?;
        Ok(())
    })
}

/// Runs the experiment file at `spec_path` and writes its result files into
/// `out_dir`. `threads` = 0 uses every core. `*infeasible` (if not NULL)
/// receives the number of trials that missed their constraints.
///
/// # Safety
/// `spec_path` and `out_dir` must be NULL or NUL-terminated strings;
/// `infeasible` must be NULL or point to writable memory for one `size_t`.
#[no_mangle]
pub unsafe extern "C" fn dfrc_run_experiment_file(
    spec_path: *const c_char,
    out_dir: *const c_char,
    threads: u32,
    infeasible: *mut usize,
) -> DfrcStatus {
    guard(|| {
        let spec_path = c_path(spec_path, "spec_path")?;
        let out_dir = c_path(out_dir, "out_dir")?;
        let spec = ExperimentSpec::load(spec_path).map_err(core_err)?;
        let threads = (threads > 0).then_some(threads as usize);
        let res = run_experiment(&spec, threads).map_err(core_err)?;
        write_results(&res, out_dir).map_err(core_err)?;
        if let Some(n) = infeasible.as_mut() {
            *n = res.infeasible_trials();
        }
        Ok(())
    })
}
