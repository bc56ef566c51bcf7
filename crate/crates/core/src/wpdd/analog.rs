//! Reconfigurable-subarray analog mapping and the least-squares digital
//! updates that sit on either side of it.

use serde::{Deserialize, Serialize};

use crate::linalg::{cis, pinv, CMat, ZERO};

/// Antenna-to-RF-chain assignment: `chains[n]` lists the antennas wired to
/// chain `n`, in increasing order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubarrayMap {
    pub chains: Vec<Vec<usize>>,
}

impl SubarrayMap {
    /// Reads the assignment off an analog matrix with one nonzero per row.
    pub fn from_analog(analog: &CMat) -> Self {
        let mut chains = vec![Vec::new(); analog.ncols()];
        for m in 0..analog.nrows() {
            if let Some(n) = (0..analog.ncols()).find(|&n| analog[(m, n)] != ZERO) {
                chains[n].push(m);
            }
        }
        Self { chains }
    }

    /// `antenna m -> chain m mod N_RF`.
    pub fn round_robin(antennas: usize, rf_chains: usize) -> Self {
        let mut chains = vec![Vec::new(); rf_chains];
        for m in 0..antennas {
            chains[m % rf_chains].push(m);
        }
        Self { chains }
    }

    /// Contiguous equal blocks; the persistently-connected wiring.
    pub fn contiguous(antennas: usize, rf_chains: usize) -> Self {
        let mut chains = vec![Vec::new(); rf_chains];
        for m in 0..antennas {
            chains[m * rf_chains / antennas].push(m);
        }
        Self { chains }
    }

    pub fn num_antennas(&self) -> usize {
        self.chains.iter().map(Vec::len).sum()
    }

    pub fn empty_chains(&self) -> usize {
        self.chains.iter().filter(|c| c.is_empty()).count()
    }

    /// True when every antenna in `0..antennas` appears in exactly one chain.
    pub fn is_partition(&self, antennas: usize) -> bool {
        let mut seen = vec![false; antennas];
        for &m in self.chains.iter().flatten() {
            if m >= antennas || seen[m] {
                return false;
            }
            seen[m] = true;
        }
        seen.into_iter().all(|s| s)
    }

    /// Analog matrix with the given per-antenna phases on the mapped entries.
    pub fn analog_matrix(&self, phases: &[f64]) -> CMat {
        let mut a = CMat::zeros(phases.len(), self.chains.len());
        for (n, chain) in self.chains.iter().enumerate() {
            for &m in chain {
                a[(m, n)] = cis(phases[m]);
            }
        }
        a
    }
}

/// `sum ||target - analog * digital||_F^2`.
pub fn fit_residual(target: &CMat, analog: &CMat, digital: &CMat) -> f64 {
    crate::linalg::frob_sq(&(target - analog * digital))
}

/// Optimal one-nonzero-per-row analog matrix for `min ||target - A digital||_F^2`
/// with unit-modulus nonzeros.
///
/// Row `m` placed on chain `n` with phase `p` costs
/// `||target_m||^2 + ||digital_n||^2 - 2 Re(e^{-jp} target_m digital_n^H)`, so the
/// best phase is `arg(target_m digital_n^H)` and the best chain maximises
/// `2 |target_m digital_n^H| - ||digital_n||^2`. Ties go to the lowest chain
/// index. Antennas whose target row is zero are placed after all others on
/// the smallest tied subarray.
pub fn map_subarrays(target: &CMat, digital: &CMat) -> (CMat, SubarrayMap) {
    let (m_ant, n_rf) = (target.nrows(), digital.nrows());
    assert_eq!(target.ncols(), digital.ncols(), "target and digital widths differ");
    let row_energy: Vec<f64> = (0..n_rf).map(|n| digital.row(n).norm_squared()).collect();
    let corr = target * digital.adjoint();
    let tol = 1e-12 * row_energy.iter().cloned().fold(1e-300, f64::max);

    let mut chains = vec![Vec::new(); n_rf];
    let mut phases = vec![0.0; m_ant];
    let mut deferred = Vec::new();
    for m in 0..m_ant {
        if target.row(m).iter().all(|z| *z == ZERO) {
            deferred.push(m);
            continue;
        }
        let score = |n: usize| 2.0 * corr[(m, n)].norm() - row_energy[n];
        let best = (1..n_rf).fold(0, |b, n| if score(n) > score(b) { n } else { b });
        chains[best].push(m);
        phases[m] = corr[(m, best)].arg();
    }
    for m in deferred {
        let lo = row_energy.iter().cloned().fold(f64::INFINITY, f64::min);
        let pick = (0..n_rf)
            .filter(|&n| row_energy[n] <= lo + tol)
            .min_by_key(|&n| (chains[n].len(), n))
            .unwrap_or(0);
        chains[pick].push(m);
    }
    for c in &mut chains {
        c.sort_unstable();
    }
    let map = SubarrayMap { chains };
    (map.analog_matrix(&phases), map)
}

/// Least-squares digital stage `pinv(analog) * target`.
pub fn ls_digital(analog: &CMat, target: &CMat) -> CMat {
    pinv(analog) * target
}

/// Least-squares digital stage for a one-nonzero-per-row analog matrix:
/// row `n` is the mean over the subarray of `conj(analog) * target` rows,
/// zero for an empty subarray.
pub fn ls_digital_subarray(analog: &CMat, map: &SubarrayMap, target: &CMat) -> CMat {
    let mut d = CMat::zeros(map.chains.len(), target.ncols());
    for (n, chain) in map.chains.iter().enumerate() {
        if chain.is_empty() {
            continue;
        }
        let mut energy = 0.0;
        for &m in chain {
            let a = analog[(m, n)];
            energy += a.norm_sqr();
            for c in 0..target.ncols() {
                d[(n, c)] += a.conj() * target[(m, c)];
            }
        }
        d.row_mut(n).unscale_mut(energy);
    }
    d
}
