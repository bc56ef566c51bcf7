use std::ffi::{CStr, CString};
use std::ptr;

use dfrc_ffi::*;

fn last_error() -> String {
    let p = dfrc_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn desk() -> DfrcConfig {
    let mut cfg = std::mem::MaybeUninit::<DfrcConfig>::uninit();
    assert_eq!(unsafe { dfrc_config_desk_scale(cfg.as_mut_ptr()) }, DfrcStatus::Ok);
    unsafe { cfg.assume_init() }
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(dfrc_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn solve_round_trip() {
    let cfg = desk();
    assert_eq!((cfg.tx_antennas, cfg.rx_antennas, cfg.users), (16, 8, 2));
    let mut problem = ptr::null_mut();
    assert_eq!(unsafe { dfrc_problem_new(&cfg, 10.0, 1, &mut problem) }, DfrcStatus::Ok);
    for arch in [DfrcArchitecture::Rs, DfrcArchitecture::Pc, DfrcArchitecture::Fd] {
        let mut sol = ptr::null_mut();
        assert_eq!(unsafe { dfrc_solve(problem, arch, 1, &mut sol) }, DfrcStatus::Ok);
        let mut s = DfrcSummary::default();
        assert_eq!(unsafe { dfrc_solution_summary(sol, &mut s) }, DfrcStatus::Ok);
        assert_eq!(s.converged, 1);
        assert!(s.sum_rate > 0.0);
        assert!(s.scnr >= 10.0 * (1.0 - 1e-4));
        assert!(s.transmit_power <= cfg.transmit_power * (1.0 + 1e-6));
        let grid: Vec<f64> = (-180..=180).map(|i| i as f64 * 0.5).collect();
        let mut pattern = vec![f64::NAN; grid.len()];
        assert_eq!(
            unsafe { dfrc_solution_beampattern(sol, grid.as_ptr(), grid.len(), pattern.as_mut_ptr()) },
            DfrcStatus::Ok
        );
        let peak = pattern.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(peak, 0.0);
        unsafe { dfrc_solution_free(sol) };
    }
    unsafe { dfrc_problem_free(problem) };
}

#[test]
fn errors_set_codes_and_messages() {
    dfrc_clear_last_error();
    assert!(dfrc_last_error_message().is_null());

    let mut out = ptr::null_mut();
    assert_eq!(unsafe { dfrc_problem_new(ptr::null(), 10.0, 0, &mut out) }, DfrcStatus::NullPointer);
    assert!(last_error().contains("cfg"));

    let mut bad = desk();
    bad.tx_rf_chains = 1;
    assert_eq!(unsafe { dfrc_problem_new(&bad, 10.0, 0, &mut out) }, DfrcStatus::Config);
    assert!(out.is_null());
    assert!(last_error().contains("RF chains"));

    let cfg = desk();
    let mut problem = ptr::null_mut();
    assert_eq!(unsafe { dfrc_problem_new(&cfg, 90.0, 0, &mut problem) }, DfrcStatus::Ok);
    let mut sol = ptr::null_mut();
    assert_eq!(unsafe { dfrc_solve(problem, DfrcArchitecture::Fd, 0, &mut sol) }, DfrcStatus::Infeasible);
    assert!(sol.is_null());
    assert!(last_error().contains("infeasible"));
    unsafe { dfrc_problem_free(problem) };

    let mut p = 0.0;
    assert_eq!(unsafe { dfrc_detection_probability(1.0, 1.5, &mut p) }, DfrcStatus::InvalidArgument);
    assert_eq!(unsafe { dfrc_detection_probability(10f64.powf(1.5), 1e-6, &mut p) }, DfrcStatus::Ok);
    assert!((p - 0.9972).abs() < 5e-4);
    assert_eq!(unsafe { dfrc_detection_probability(1.0, 0.1, ptr::null_mut()) }, DfrcStatus::NullPointer);

    let mut s = DfrcSummary::default();
    assert_eq!(unsafe { dfrc_solution_summary(ptr::null(), &mut s) }, DfrcStatus::NullPointer);
    unsafe {
        dfrc_problem_free(ptr::null_mut());
        dfrc_solution_free(ptr::null_mut());
    }
}

#[test]
fn errors_are_per_thread() {
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { dfrc_problem_new(ptr::null(), 10.0, 0, &mut out) }, DfrcStatus::NullPointer);
    std::thread::spawn(|| assert!(dfrc_last_error_message().is_null())).join().unwrap();
    assert!(!dfrc_last_error_message().is_null());
}

#[test]
fn experiment_files_run_through_the_abi() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("e.toml");
    std::fs::write(&spec, "trials = 1\narchitectures = [\"fd\"]\n[sweep]\nvariable = \"gamma_db\"\nvalues = [10.0, 90.0]\n").unwrap();
    let out = dir.path().join("out");
    let spec_c = CString::new(spec.to_str().unwrap()).unwrap();
    let out_c = CString::new(out.to_str().unwrap()).unwrap();
    let mut infeasible = 0usize;
    assert_eq!(unsafe { dfrc_run_experiment_file(spec_c.as_ptr(), out_c.as_ptr(), 1, &mut infeasible) }, DfrcStatus::Ok);
    assert_eq!(infeasible, 1);
    assert!(out.join("results.csv").exists());

    let missing = CString::new("/nonexistent/e.toml").unwrap();
    assert_eq!(unsafe { dfrc_run_experiment_file(missing.as_ptr(), out_c.as_ptr(), 0, ptr::null_mut()) }, DfrcStatus::Io);
    assert!(last_error().contains("/nonexistent/e.toml"));
    assert_eq!(unsafe { dfrc_run_experiment_file(ptr::null(), out_c.as_ptr(), 0, ptr::null_mut()) }, DfrcStatus::NullPointer);
}
