//! Individual block updates of the inner loop and the outer dual/penalty step.

use serde::{Deserialize, Serialize};

use crate::conic::{complex_affine, complex_index, real_inner, solve_socp, unlift, AffineExpr, SocConstraint, SocpProblem, SocpStatus};
use crate::error::{Error, Result};
use crate::linalg::{cholesky_factor, frob_sq, hermitian_eigen, hermitian_part, hpd_inverse, hpd_logdet, hpd_solve, vectorize, CMat, CVec};
use crate::metrics::{clutter_noise_covariance, join_blocks, mse_with, split_blocks, stacked_clutter_covariance, stacked_response};
use crate::model::{response_matrix, ChannelSet, RadarScene, SystemConfig};

/// MVDR radar receiver for the stacked transmit vector `t`, normalised so
/// that `w^H A~(theta_0) t = 1`.
pub fn update_w(t: &CVec, scene: &RadarScene, cfg: &SystemConfig) -> Result<CVec> {
    if t.norm_squared() == 0.0 {
        return Err(Error::domain("transmit beamformer is zero"));
    }
    let s = stacked_clutter_covariance(t, scene, cfg);
    let a = stacked_response(scene.target_angle, t, cfg);
    let x = hpd_solve(&s, &CMat::from_column_slice(a.len(), 1, a.as_slice()))?;
    let x = CVec::from_column_slice(x.as_slice());
    let denom = a.dotc(&x).re;
    Ok(x.unscale(denom))
}

/// `Phi = sigma_0^2 A^H(theta_0) S_cn^-1 A(theta_0)`, with `S_cn` built from the
/// `M_T x N_s` transmit matrix `tx`.
pub fn phi_matrix(tx: &CMat, scene: &RadarScene, cfg: &SystemConfig) -> Result<CMat> {
    let a = response_matrix(scene.target_angle, cfg);
    let s = clutter_noise_covariance(tx, scene, cfg);
    let x = hpd_solve(&s, &a)?;
    Ok(hermitian_part(&(a.adjoint() * x)).scale(scene.target_power))
}

/// `sum_k tr(T_k^H Phi T_k)`.
pub fn radar_gain(phi: &CMat, t: &[CMat]) -> f64 {
    t.iter().map(|tk| (tk.adjoint() * phi * tk).trace().re).sum()
}

/// First-order lower bound of [`radar_gain`] around `t_bar`, evaluated at `t`.
pub fn sca_bound(phi: &CMat, t_bar: &[CMat], t: &[CMat]) -> f64 {
    t_bar
        .iter()
        .zip(t)
        .map(|(tb, tk)| {
            let pb = phi * tb;
            2.0 * (pb.adjoint() * tk).trace().re - (tb.adjoint() * &pb).trace().re
        })
        .sum()
}

/// MMSE user combiners `U_k = (sum_i H_k T_i T_i^H H_k^H + sigma^2 I)^-1 H_k T_k`.
pub fn update_u(channels: &ChannelSet, t: &[CMat], noise: f64) -> Result<Vec<CMat>> {
    (0..channels.len())
        .map(|k| {
            let h = channels.h(k);
            let mut r = CMat::identity(h.nrows(), h.nrows()).scale(noise);
            for ti in t {
                let ht = h * ti;
                r += &ht * ht.adjoint();
            }
            hpd_solve(&r, &(h * &t[k]))
        })
        .collect()
}

/// WMMSE weights `G_k = E_k^-1`, which reduces to `(I - U_k^H H_k T_k)^-1` for
/// MMSE combiners.
pub fn update_g(channels: &ChannelSet, t: &[CMat], u: &[CMat], noise: f64) -> Result<Vec<CMat>> {
    (0..channels.len())
        .map(|k| {
            let e = mse_with(channels.h(k), &u[k], t, k, noise);
            hpd_inverse(&e).map_err(|_| Error::numeric(format!("MSE matrix of user {k} is singular")))
        })
        .collect()
}

/// `sum_k tr(G_k E_k) - log det G_k` with `E_k` built from the precoders `t`.
pub fn wmmse_objective(channels: &ChannelSet, t: &[CMat], u: &[CMat], g: &[CMat], noise: f64) -> Result<f64> {
    let mut total = 0.0;
    for k in 0..channels.len() {
        let e = mse_with(channels.h(k), &u[k], t, k, noise);
        total += (&g[k] * e).trace().re - hpd_logdet(&g[k])?;
    }
    Ok(total)
}

/// Penalty weight and centres of the transmit penalty terms
/// `(1/2 rho) ||T_k - centre_k||^2`, with `centre_k = T_RF T_D,k - rho D_k`.
#[derive(Debug, Clone)]
pub struct TransmitPenalty {
    pub rho: f64,
    pub centres: Vec<CMat>,
}

impl TransmitPenalty {
    pub fn value(&self, t: &[CMat]) -> f64 {
        t.iter().zip(&self.centres).map(|(tk, c)| frob_sq(&(tk - c))).sum::<f64>() / (2.0 * self.rho)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScaSettings {
    pub max_rounds: usize,
    pub rel_tol: f64,
    pub bootstrap_rounds: usize,
    pub socp_tol: f64,
}

impl Default for ScaSettings {
    fn default() -> Self {
        Self {
            max_rounds: 10,
            rel_tol: 1e-5,
            bootstrap_rounds: 5,
            socp_tol: crate::conic::DEFAULT_TOL,
        }
    }
}

/// Everything the transmit step holds fixed.
pub struct TransmitStep<'a> {
    pub channels: &'a ChannelSet,
    pub u: &'a [CMat],
    pub g: &'a [CMat],
    pub phi: &'a CMat,
    pub gamma: f64,
    pub power: f64,
    pub noise: f64,
    pub penalty: Option<&'a TransmitPenalty>,
}

#[derive(Debug, Clone)]
pub struct TransmitOutcome {
    pub t: Vec<CMat>,
    pub objective: f64,
    /// Bootstrap rounds spent reaching a feasible expansion point.
    pub bootstraps: usize,
    /// SCA rounds whose result was rejected in favour of the incumbent.
    pub rejected: usize,
    /// Rounds where the backend returned a non-optimal status.
    pub solver_failures: usize,
}

impl TransmitStep<'_> {
    /// `T`-dependent part of the inner objective.
    pub fn objective(&self, t: &[CMat]) -> f64 {
        let mut f = 0.0;
        for k in 0..self.channels.len() {
            let e = mse_with(self.channels.h(k), &self.u[k], t, k, self.noise);
            f += (&self.g[k] * e).trace().re;
        }
        f + self.penalty.map_or(0.0, |p| p.value(t))
    }

    pub fn feasible(&self, t: &[CMat]) -> bool {
        let p: f64 = t.iter().map(frob_sq).sum();
        radar_gain(self.phi, t) >= self.gamma && p <= self.power * (1.0 + 1e-9)
    }

    /// Moves `t` onto the power sphere along `Phi t`, the maximiser of the
    /// linearised radar gain; falls back to the dominant eigenvector of `Phi`.
    fn bootstrap(&self, t: &[CMat]) -> Vec<CMat> {
        let pt: Vec<CMat> = t.iter().map(|tk| self.phi * tk).collect();
        let n: f64 = pt.iter().map(frob_sq).sum::<f64>().sqrt();
        if n > 0.0 && n.is_finite() {
            let s = self.power.sqrt() / n;
            return pt.into_iter().map(|m| m.scale(s)).collect();
        }
        let (_, vecs) = hermitian_eigen(self.phi);
        let top = vecs.column(vecs.ncols() - 1).into_owned();
        let cols: usize = t.iter().map(|m| m.ncols()).sum();
        let s = (self.power / cols as f64).sqrt();
        t.iter()
            .map(|tk| CMat::from_fn(tk.nrows(), tk.ncols(), |i, _| top[i] * s))
            .collect()
    }

    fn socp(&self, t_bar: &[CMat]) -> Result<(SocpProblem, usize)> {
        let k_users = t_bar.len();
        let (mt, ds) = t_bar[0].shape();
        let block = mt * ds;
        let n_t = 2 * k_users * block;
        let off_a = n_t;
        let off_b = off_a + k_users * k_users;
        let n_vars = off_b + if self.penalty.is_some() { k_users } else { 0 };
        let mut p = SocpProblem::new(n_vars);
        let t_off = |k: usize| 2 * k * block;

        for k in 0..k_users {
            let h = self.channels.h(k);
            let uk = &self.u[k];
            let gk = &self.g[k];
            // constant part of tr(G_k E_k)
            p.objective_constant += gk.trace().re + self.noise * (gk * uk.adjoint() * uk).trace().re;
            // -2 Re tr(G U^H H T_k) = -2 Re(c^H t_k), c = vec(H^H U G)
            let c = vectorize(&(h.adjoint() * uk * gk));
            for (j, v) in c.iter().enumerate() {
                let (jr, ji) = complex_index(t_off(k), j);
                p.objective[jr] -= 2.0 * v.re;
                p.objective[ji] -= 2.0 * v.im;
            }
            // a_{k,i} >= ||L^H U^H H T_i||^2 with G = L L^H
            let l = cholesky_factor(gk)?;
            let b = l.adjoint() * uk.adjoint() * h;
            let lifted = kron_identity(&b, ds);
            for i in 0..k_users {
                let a = off_a + k * k_users + i;
                p.objective[a] = 1.0;
                let mut vector = vec![AffineExpr::var(a).scaled(0.5).offset(-0.5)];
                vector.extend(complex_affine(&lifted, t_off(i), &CVec::zeros(lifted.nrows())));
                p.cones.push(SocConstraint {
                    scalar: AffineExpr::var(a).scaled(0.5).offset(0.5),
                    vector,
                });
            }
        }
        if let Some(pen) = self.penalty {
            for k in 0..k_users {
                let b = off_b + k;
                p.objective[b] = 1.0 / (2.0 * pen.rho);
                let centre = vectorize(&pen.centres[k]);
                let mut vector = vec![AffineExpr::var(b).scaled(0.5).offset(-0.5)];
                for j in 0..block {
                    let (jr, ji) = complex_index(t_off(k), j);
                    vector.push(AffineExpr::var(jr).offset(-centre[j].re));
                    vector.push(AffineExpr::var(ji).offset(-centre[j].im));
                }
                p.cones.push(SocConstraint {
                    scalar: AffineExpr::var(b).scaled(0.5).offset(0.5),
                    vector,
                });
            }
        }
        p.cones.push(SocConstraint {
            scalar: AffineExpr::constant(self.power.sqrt()),
            vector: (0..n_t).map(AffineExpr::var).collect(),
        });
        // linearised radar gain >= gamma
        let mut cut = AffineExpr::constant(-self.gamma);
        for (k, tb) in t_bar.iter().enumerate() {
            let pb = self.phi * tb;
            let e = real_inner(&vectorize(&pb), t_off(k)).scaled(2.0);
            cut.terms.extend(e.terms);
            cut.constant -= (tb.adjoint() * &pb).trace().re;
        }
        p.nonnegatives.push(cut);
        Ok((p, block))
    }

    /// Feasible expansion point reached from `start` by bootstrap rounds,
    /// with the number of rounds spent.
    pub fn feasible_point(&self, start: &[CMat], sca: &ScaSettings) -> Result<(Vec<CMat>, usize)> {
        let mut rounds = 0;
        let mut t_bar = start.to_vec();
        while !self.feasible(&t_bar) && rounds < sca.bootstrap_rounds {
            t_bar = self.bootstrap(&t_bar);
            rounds += 1;
        }
        if !self.feasible(&t_bar) {
            let (_, vecs) = hermitian_eigen(self.phi);
            let top = vecs.column(vecs.ncols() - 1).into_owned();
            let cols: usize = t_bar.iter().map(|m| m.ncols()).sum();
            let s = (self.power / cols as f64).sqrt();
            t_bar = t_bar
                .iter()
                .map(|tk| CMat::from_fn(tk.nrows(), tk.ncols(), |i, _| top[i] * s))
                .collect();
            if !self.feasible(&t_bar) {
                return Err(Error::InfeasibleGamma {
                    gamma: self.gamma,
                    achievable: radar_gain(self.phi, &t_bar),
                });
            }
        }
        Ok((t_bar, rounds))
    }

    /// Runs SCA from `incumbent`, bootstrapping to a feasible expansion point
    /// first when needed.
    pub fn solve(&self, incumbent: &[CMat], sca: &ScaSettings) -> Result<TransmitOutcome> {
        let ceiling = hermitian_eigen(self.phi).0.last().copied().unwrap_or(0.0) * self.power;
        if self.gamma > ceiling {
            return Err(Error::InfeasibleGamma { gamma: self.gamma, achievable: ceiling });
        }
        let mut out = TransmitOutcome {
            t: incumbent.to_vec(),
            objective: self.objective(incumbent),
            bootstraps: 0,
            rejected: 0,
            solver_failures: 0,
        };
        let mut incumbent_ok = self.feasible(incumbent);
        let (mut t_bar, bootstraps) = self.feasible_point(incumbent, sca)?;
        out.bootstraps = bootstraps;
        if !incumbent_ok {
            out.t = t_bar.clone();
            out.objective = self.objective(&t_bar);
            incumbent_ok = true;
        }
        let k_users = t_bar.len();
        let (mt, ds) = t_bar[0].shape();
        for _ in 0..sca.max_rounds {
            let (p, block) = self.socp(&t_bar)?;
            let sol = solve_socp(&p, sca.socp_tol)?;
            let usable = match sol.status {
                SocpStatus::Optimal => true,
                SocpStatus::MaxIters | SocpStatus::NumericalFailure => {
                    out.solver_failures += 1;
                    p.max_violation(&sol.x) <= 1e-6
                }
                SocpStatus::Infeasible | SocpStatus::Unbounded => {
                    out.solver_failures += 1;
                    false
                }
            };
            if !usable {
                break;
            }
            let t_new: Vec<CMat> = (0..k_users)
                .map(|k| {
                    let v = unlift(&sol.x, 2 * k * block, block);
                    CMat::from_column_slice(mt, ds, v.as_slice())
                })
                .collect();
            let t_new = clamp_power(t_new, self.power);
            let f_new = self.objective(&t_new);
            if incumbent_ok && f_new > out.objective {
                out.rejected += 1;
                break;
            }
            let change = (out.objective - f_new).abs();
            let scale = out.objective.abs().max(1.0);
            out.objective = f_new;
            out.t = t_new.clone();
            t_bar = t_new;
            if change <= sca.rel_tol * scale {
                break;
            }
        }
        Ok(out)
    }
}

/// Rescales onto the power ball when an interior-point iterate sits a hair
/// outside it.
fn clamp_power(t: Vec<CMat>, power: f64) -> Vec<CMat> {
    let p: f64 = t.iter().map(frob_sq).sum();
    if p <= power {
        return t;
    }
    let s = (power / p).sqrt();
    t.into_iter().map(|m| m.scale(s)).collect()
}

/// `I_reps (x) b`.
fn kron_identity(b: &CMat, reps: usize) -> CMat {
    let (r, c) = b.shape();
    let mut out = CMat::zeros(r * reps, c * reps);
    for i in 0..reps {
        out.view_mut((i * r, i * c), (r, c)).copy_from(b);
    }
    out
}

/// `max(max_k ||T_k - T_RF T_D,k||, ||W - W_RF W_D||)`.
pub fn violation(t_aux: &[CMat], t_rf: &CMat, t_d: &CMat, w_aux: &CMat, w_rf: &CMat, w_d: &CMat) -> f64 {
    let ds = t_aux.first().map_or(1, |m| m.ncols());
    let hyb = split_blocks(&(t_rf * t_d), ds);
    let tx = t_aux
        .iter()
        .zip(&hyb)
        .map(|(a, b)| frob_sq(&(a - b)).sqrt())
        .fold(0.0, f64::max);
    tx.max(frob_sq(&(w_aux - w_rf * w_d)).sqrt())
}

/// Penalty parameter, duals and schedule of the outer loop.
#[derive(Debug, Clone, PartialEq)]
pub struct PddState {
    pub rho: f64,
    pub duals: Vec<CMat>,
    pub dual_rx: CMat,
    pub eta: f64,
    pub shrink: f64,
    pub eta_decay: f64,
}

impl PddState {
    pub fn new(rho: f64, shrink: f64, eta_decay: f64, cfg: &SystemConfig) -> Result<Self> {
        if !(rho > 0.0) {
            return Err(Error::config("penalty parameter must be positive"));
        }
        if !(shrink > 0.0 && shrink < 1.0) {
            return Err(Error::config("penalty shrink factor must lie in (0, 1)"));
        }
        if !(eta_decay > 0.0 && eta_decay < 1.0) {
            return Err(Error::config("threshold decay must lie in (0, 1)"));
        }
        Ok(Self {
            rho,
            duals: vec![CMat::zeros(cfg.tx_antennas, cfg.streams_per_user); cfg.users],
            dual_rx: CMat::zeros(cfg.rx_antennas, cfg.total_streams()),
            eta: f64::INFINITY,
            shrink,
            eta_decay,
        })
    }

    /// Centres `T_RF T_D,k - rho D_k` of the transmit penalty.
    pub fn transmit_penalty(&self, t_rf: &CMat, t_d: &CMat) -> TransmitPenalty {
        let ds = self.duals.first().map_or(1, |d| d.ncols());
        let hyb = split_blocks(&(t_rf * t_d), ds);
        TransmitPenalty {
            rho: self.rho,
            centres: hyb.iter().zip(&self.duals).map(|(h, d)| h - d.scale(self.rho)).collect(),
        }
    }

    /// `Z = [T_k + rho D_k]`.
    pub fn transmit_target(&self, t_aux: &[CMat]) -> CMat {
        let z: Vec<CMat> = t_aux.iter().zip(&self.duals).map(|(t, d)| t + d.scale(self.rho)).collect();
        join_blocks(&z)
    }

    /// `Q = W + rho D~`.
    pub fn receive_target(&self, w_aux: &CMat) -> CMat {
        w_aux + self.dual_rx.scale(self.rho)
    }

    /// Both penalty terms of the inner objective.
    pub fn penalty(&self, t_aux: &[CMat], t_rf: &CMat, t_d: &CMat, w_aux: &CMat, w_rf: &CMat, w_d: &CMat) -> f64 {
        let z = self.transmit_target(t_aux);
        let q = self.receive_target(w_aux);
        (frob_sq(&(z - t_rf * t_d)) + frob_sq(&(q - w_rf * w_d))) / (2.0 * self.rho)
    }

    /// Dual ascent when the violation `h` met the threshold, otherwise a
    /// smaller penalty parameter; the threshold then becomes `eta_decay * h`.
    /// Returns whether the duals moved.
    #[allow(clippy::too_many_arguments)]
    pub fn outer_update(&mut self, h: f64, t_aux: &[CMat], t_rf: &CMat, t_d: &CMat, w_aux: &CMat, w_rf: &CMat, w_d: &CMat) -> bool {
        let dual_step = h <= self.eta;
        if dual_step {
            let ds = t_aux.first().map_or(1, |m| m.ncols());
            let hyb = split_blocks(&(t_rf * t_d), ds);
            let inv = 1.0 / self.rho;
            for ((d, t), hb) in self.duals.iter_mut().zip(t_aux).zip(&hyb) {
                *d += (t - hb).scale(inv);
            }
            self.dual_rx += (w_aux - w_rf * w_d).scale(inv);
        } else {
            self.rho *= self.shrink;
        }
        self.eta = self.eta_decay * h;
        dual_step
    }
}
