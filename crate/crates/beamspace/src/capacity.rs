//! Capacity under radiated-power, current-norm and dual constraints.
//!
//! All capacities are in bits (log2). The dual-constraint water-filling
//! follows the Lagrangian stationarity condition with per-mode powers
//! p_i = max(0, log2(e) / (mu_rad + mu_in / lambda_i) - sigma^2 / s_i)
//! and nested bisection on the two multipliers.

use nalgebra::linalg::SymmetricEigen;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{draw_h_iid, ChannelSpec};
use crate::dataset::CMat;
use crate::error::{Error, Result};
use crate::modal::ModalBasis;

const LOG2_E: f64 = std::f64::consts::LOG2_E;

/// Relative slack below which a constraint is treated as inactive and the
/// problem degrades to single-constraint water-filling.
const SLACK_REL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConstraintMode {
    Radiated,
    Current,
    Dual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Policy {
    Ep,
    Wf,
}

/// Budgets for the capacity problems.
#[derive(Debug, Clone, Copy)]
pub struct ConstraintSpec {
    /// Radiated-power bound, watts.
    pub p_rad: f64,
    /// Current-norm bound, amperes squared.
    pub i_in_sq: f64,
    /// Noise power, watts.
    pub sigma_sq: f64,
    pub mode: ConstraintMode,
}

impl ConstraintSpec {
    pub fn radiated(p_rad: f64, sigma_sq: f64) -> Self {
        ConstraintSpec {
            p_rad,
            i_in_sq: f64::INFINITY,
            sigma_sq,
            mode: ConstraintMode::Radiated,
        }
    }

    pub fn current(i_in_sq: f64, sigma_sq: f64) -> Self {
        ConstraintSpec {
            p_rad: f64::INFINITY,
            i_in_sq,
            sigma_sq,
            mode: ConstraintMode::Current,
        }
    }

    pub fn dual(p_rad: f64, i_in_sq: f64, sigma_sq: f64) -> Self {
        ConstraintSpec {
            p_rad,
            i_in_sq,
            sigma_sq,
            mode: ConstraintMode::Dual,
        }
    }

    /// Conductance ratio epsilon = I_in^2 / P_rad (ohm^-1).
    pub fn epsilon(&self) -> f64 {
        self.i_in_sq / self.p_rad
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_sq > 0.0) {
            return Err(Error::Invalid("sigma_sq must be positive".into()));
        }
        let need_p = matches!(self.mode, ConstraintMode::Radiated | ConstraintMode::Dual);
        let need_i = matches!(self.mode, ConstraintMode::Current | ConstraintMode::Dual);
        if need_p && !(self.p_rad > 0.0 && self.p_rad.is_finite()) {
            return Err(Error::Invalid("p_rad must be positive and finite".into()));
        }
        if need_i && !(self.i_in_sq > 0.0 && self.i_in_sq.is_finite()) {
            return Err(Error::Invalid("i_in_sq must be positive and finite".into()));
        }
        Ok(())
    }
}

/// Descending channel gains of the sub-channels.
#[derive(Debug, Clone)]
pub struct GainSpectrum {
    pub s: Vec<f64>,
}

impl GainSpectrum {
    /// Eigenvalues of H^H H, descending (the per-mode gains of H).
    pub fn from_channel(h: &CMat) -> Self {
        let (s, _) = herm_eig_desc(&(h.adjoint() * h));
        GainSpectrum { s }
    }
}

/// Outcome of one allocation solve.
#[derive(Debug, Clone)]
pub struct AllocationResult {
    /// Per-basis power allocation (R_beta or R_gamma diagonal), >= 0.
    pub diag_power: Vec<f64>,
    pub capacity_bits: f64,
    /// (mu_rad, mu_in), present for the dual water-filling solve.
    pub multipliers: Option<(f64, f64)>,
    pub n_used: usize,
    /// (P_rad - used radiated power, I_in^2 - used current norm). The second
    /// entry is `None` when no current metric is available (plain radiated
    /// solve without a modal basis).
    pub constraint_slack: (f64, Option<f64>),
    pub used_radiated: f64,
    pub used_current: Option<f64>,
    /// Max of stationarity, feasibility and complementary-slackness
    /// residuals at the returned point (dual solves only).
    pub kkt_residual: f64,
}

fn finish(
    diag_power: Vec<f64>,
    capacity_bits: f64,
    used_radiated: f64,
    used_current: Option<f64>,
    p_rad: f64,
    i_in_sq: f64,
    multipliers: Option<(f64, f64)>,
    kkt_residual: f64,
) -> AllocationResult {
    let n_used = diag_power.iter().filter(|&&p| p > 0.0).count();
    AllocationResult {
        n_used,
        constraint_slack: (p_rad - used_radiated, used_current.map(|u| i_in_sq - u)),
        diag_power,
        capacity_bits,
        multipliers,
        used_radiated,
        used_current,
        kkt_residual,
    }
}

/// Hermitian eigendecomposition sorted by descending eigenvalue.
pub fn herm_eig_desc(a: &CMat) -> (Vec<f64>, CMat) {
    let n = a.nrows();
    let eig = SymmetricEigen::new(a.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| {
        eig.eigenvalues[y]
            .partial_cmp(&eig.eigenvalues[x])
            .unwrap()
            .then(x.cmp(&y))
    });
    let vals = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let mut vecs = CMat::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vecs.set_column(dst, &eig.eigenvectors.column(src));
    }
    (vals, vecs)
}

/// Exact single-budget water-filling: maximizes sum log2(1 + g_i p_i / s2)
/// subject to sum p_i <= budget. Zero-gain modes receive nothing.
pub fn water_fill(gains: &[f64], budget: f64, sigma_sq: f64) -> Vec<f64> {
    let mut alloc = vec![0.0; gains.len()];
    let mut idx: Vec<usize> = (0..gains.len()).filter(|&i| gains[i] > 0.0).collect();
    if idx.is_empty() || !(budget > 0.0) {
        return alloc;
    }
    idx.sort_by(|&a, &b| gains[b].partial_cmp(&gains[a]).unwrap());
    let nus: Vec<f64> = idx.iter().map(|&i| sigma_sq / gains[i]).collect();
    let mut prefix = 0.0;
    let mut level = 0.0;
    let mut active = 0;
    for k in 1..=nus.len() {
        prefix += nus[k - 1];
        let mu = (budget + prefix) / k as f64;
        if mu > nus[k - 1] {
            level = mu;
            active = k;
        } else {
            break;
        }
    }
    for j in 0..active {
        alloc[idx[j]] = level - nus[j];
    }
    alloc
}

pub fn capacity_from_alloc(gains: &[f64], alloc: &[f64], sigma_sq: f64) -> f64 {
    gains
        .iter()
        .zip(alloc)
        .map(|(&g, &p)| (1.0 + g * p / sigma_sq).log2())
        .sum()
}

/// Capacity under the radiated-power constraint: identical to ideal M x N
/// MIMO water-filling (or equal power) on the gains of H_iid.
pub fn capacity_radiated(h_iid: &CMat, spec: &ConstraintSpec, policy: Policy) -> Result<AllocationResult> {
    spec.validate()?;
    let n = h_iid.ncols();
    let s = GainSpectrum::from_channel(h_iid).s;
    let alloc = match policy {
        Policy::Wf => water_fill(&s, spec.p_rad, spec.sigma_sq),
        Policy::Ep => vec![spec.p_rad / n as f64; n],
    };
    let cap = capacity_from_alloc(&s, &alloc, spec.sigma_sq);
    let used: f64 = alloc.iter().sum();
    Ok(finish(alloc, cap, used, None, spec.p_rad, spec.i_in_sq, None, 0.0))
}

/// Capacity under the current-norm constraint: allocation on the eigenbasis
/// of Lambda^{1/2} H^H H Lambda^{1/2} with budget I_in^2. The radiated power
/// actually spent is reported but unconstrained.
pub fn capacity_current(
    h_iid: &CMat,
    basis: &ModalBasis,
    spec: &ConstraintSpec,
    policy: Policy,
) -> Result<AllocationResult> {
    spec.validate()?;
    let lambda_rx = vec![1.0; h_iid.nrows()];
    capacity_current_weighted(h_iid, &basis.lambda, &lambda_rx, spec, policy)
}

/// Current-constrained capacity with both transmit and receive modal
/// resistance weightings (receive weights of one recover the ideal-receiver
/// case; mirror receivers pass the receive-side eigenvalues).
pub fn capacity_current_weighted(
    h_iid: &CMat,
    lambda_tx: &[f64],
    lambda_rx: &[f64],
    spec: &ConstraintSpec,
    policy: Policy,
) -> Result<AllocationResult> {
    let n = h_iid.ncols();
    if lambda_tx.len() < n {
        return Err(Error::Dimension {
            field: "lambda_tx",
            expected: n,
            got: lambda_tx.len(),
        });
    }
    if lambda_rx.len() != h_iid.nrows() {
        return Err(Error::Dimension {
            field: "lambda_rx",
            expected: h_iid.nrows(),
            got: lambda_rx.len(),
        });
    }
    // W = sqrt(Lambda_r) H sqrt(Lambda_t); gains of the current-domain channel.
    let mut w = h_iid.clone();
    for r in 0..h_iid.nrows() {
        for c in 0..n {
            w[(r, c)] *= Complex64::from((lambda_rx[r] * lambda_tx[c]).sqrt());
        }
    }
    let gram = w.adjoint() * &w;
    let (t, v) = herm_eig_desc(&gram);
    let alloc = match policy {
        Policy::Wf => water_fill(&t, spec.i_in_sq, spec.sigma_sq),
        Policy::Ep => vec![spec.i_in_sq / n as f64; n],
    };
    let cap = capacity_from_alloc(&t, &alloc, spec.sigma_sq);
    let used_current: f64 = alloc.iter().sum();
    // Radiated power of the rotated allocation: sum c_i v_i^H Lambda v_i.
    let mut used_rad = 0.0;
    for (i, &c) in alloc.iter().enumerate() {
        if c > 0.0 {
            let vi = v.column(i);
            let q: f64 = (0..n).map(|r| lambda_tx[r] * vi[r].norm_sqr()).sum();
            used_rad += c * q;
        }
    }
    Ok(finish(
        alloc,
        cap,
        used_rad,
        Some(used_current),
        spec.p_rad,
        spec.i_in_sq,
        None,
        0.0,
    ))
}

/// Effective aerial degrees of freedom: largest N_eff such that the average
/// of 1/lambda_i over the first N_eff modes stays within epsilon.
pub fn eadof(lambda: &[f64], epsilon: f64) -> usize {
    let mut sum_recip = 0.0;
    let mut n_eff = 0;
    for (i, &l) in lambda.iter().enumerate() {
        if l <= 0.0 {
            break;
        }
        sum_recip += 1.0 / l;
        if sum_recip / (i + 1) as f64 <= epsilon {
            n_eff = i + 1;
        }
    }
    n_eff
}

/// Dual-constraint equal-power bound: P_rad spread over the first N_eff
/// modes, the rest dropped.
pub fn dual_ep(h_iid: &CMat, basis: &ModalBasis, spec: &ConstraintSpec) -> Result<AllocationResult> {
    spec.validate()?;
    let n = h_iid.ncols();
    let lambda = &basis.lambda[..n];
    let n_eff = eadof(lambda, spec.epsilon());
    if n_eff == 0 {
        return Err(Error::Infeasible {
            epsilon: spec.epsilon(),
        });
    }
    let s = GainSpectrum::from_channel(h_iid).s;
    let p = spec.p_rad / n_eff as f64;
    let mut alloc = vec![0.0; n];
    for a in alloc.iter_mut().take(n_eff) {
        *a = p;
    }
    let cap = capacity_from_alloc(&s, &alloc, spec.sigma_sq);
    let used_rad: f64 = alloc.iter().sum();
    let used_cur: f64 = alloc.iter().zip(lambda).map(|(&p, &l)| p / l).sum();
    Ok(finish(
        alloc,
        cap,
        used_rad,
        Some(used_cur),
        spec.p_rad,
        spec.i_in_sq,
        None,
        0.0,
    ))
}

/// Equal power over all selected modes, scaled down until both dual
/// constraints hold. This is the "EP on a P x P system" curve: beyond the
/// EADoF the current constraint forces the common level (and hence the
/// capacity) to drop.
pub fn dual_ep_uniform(
    h_iid: &CMat,
    basis: &ModalBasis,
    spec: &ConstraintSpec,
) -> Result<AllocationResult> {
    spec.validate()?;
    let n = h_iid.ncols();
    let lambda = &basis.lambda[..n];
    let recip_sum: f64 = lambda.iter().map(|&l| 1.0 / l).sum();
    let level = (spec.p_rad / n as f64).min(spec.i_in_sq / recip_sum);
    let s = GainSpectrum::from_channel(h_iid).s;
    let alloc = vec![level; n];
    let cap = capacity_from_alloc(&s, &alloc, spec.sigma_sq);
    let used_rad = level * n as f64;
    let used_cur = level * recip_sum;
    Ok(finish(
        alloc,
        cap,
        used_rad,
        Some(used_cur),
        spec.p_rad,
        spec.i_in_sq,
        None,
        0.0,
    ))
}

fn dual_alloc(mu_rad: f64, mu_in: f64, s: &[f64], lambda: &[f64], sigma_sq: f64) -> Vec<f64> {
    s.iter()
        .zip(lambda)
        .map(|(&si, &li)| {
            if si <= 0.0 {
                0.0
            } else {
                (LOG2_E / (mu_rad + mu_in / li) - sigma_sq / si).max(0.0)
            }
        })
        .collect()
}

/// Dual-constraint water-filling on paired (s_i, lambda_i) sub-channels.
///
/// Solves the diagonal problem max sum log2(1 + s_i p_i / sigma^2) subject to
/// sum p_i <= P_rad and sum p_i / lambda_i <= I_in^2 via nested bisection on
/// the two multipliers; exact for the diagonal allocation set.
pub fn dual_wf_diag(s: &[f64], lambda: &[f64], spec: &ConstraintSpec) -> Result<AllocationResult> {
    spec.validate()?;
    let n = s.len();
    if lambda.len() != n {
        return Err(Error::Dimension {
            field: "lambda",
            expected: n,
            got: lambda.len(),
        });
    }
    let sigma_sq = spec.sigma_sq;
    let usage = |alloc: &[f64]| -> (f64, f64) {
        let p: f64 = alloc.iter().sum();
        let c: f64 = alloc.iter().zip(lambda).map(|(&a, &l)| a / l).sum();
        (p, c)
    };

    // Radiated-only water-filling; mu_rad from the water level.
    let rad_alloc = water_fill(s, spec.p_rad, sigma_sq);
    let (rad_p, rad_c) = usage(&rad_alloc);
    if rad_c <= spec.i_in_sq * (1.0 - SLACK_REL) {
        let level = rad_alloc
            .iter()
            .zip(s)
            .filter(|(&a, _)| a > 0.0)
            .map(|(&a, &g)| a + sigma_sq / g)
            .next()
            .unwrap_or(f64::INFINITY);
        let mu_rad = LOG2_E / level;
        let cap = capacity_from_alloc(s, &rad_alloc, sigma_sq);
        let kkt = (spec.p_rad - rad_p).abs().max(0.0);
        return Ok(finish(
            rad_alloc,
            cap,
            rad_p,
            Some(rad_c),
            spec.p_rad,
            spec.i_in_sq,
            Some((mu_rad, 0.0)),
            kkt,
        ));
    }

    // Current-only water-filling: substitute c_i = p_i / lambda_i, gains
    // s_i * lambda_i, budget I_in^2.
    let cur_gains: Vec<f64> = s.iter().zip(lambda).map(|(&si, &li)| si * li).collect();
    let cur_c = water_fill(&cur_gains, spec.i_in_sq, sigma_sq);
    let cur_alloc: Vec<f64> = cur_c.iter().zip(lambda).map(|(&c, &l)| c * l).collect();
    let (cur_p, cur_cu) = usage(&cur_alloc);
    if cur_p <= spec.p_rad * (1.0 - SLACK_REL) {
        let level = cur_c
            .iter()
            .zip(&cur_gains)
            .filter(|(&c, _)| c > 0.0)
            .map(|(&c, &g)| c + sigma_sq / g)
            .next()
            .unwrap_or(f64::INFINITY);
        let mu_in = LOG2_E / level;
        let cap = capacity_from_alloc(s, &cur_alloc, sigma_sq);
        return Ok(finish(
            cur_alloc,
            cap,
            cur_p,
            Some(cur_cu),
            spec.p_rad,
            spec.i_in_sq,
            Some((0.0, mu_in)),
            (spec.i_in_sq - cur_cu).abs(),
        ));
    }

    // Both constraints bind: outer bisection on mu_rad, inner on mu_in.
    let solve_mu_in = |mu_rad: f64| -> f64 {
        let at = |mu_in: f64| usage(&dual_alloc(mu_rad, mu_in, s, lambda, sigma_sq)).1;
        if at(0.0) <= spec.i_in_sq {
            return 0.0;
        }
        let mut hi = 1e-12;
        while at(hi) > spec.i_in_sq {
            hi *= 4.0;
            if hi > 1e300 {
                return hi;
            }
        }
        let mut lo = 0.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if at(mid) > spec.i_in_sq {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        hi
    };
    let power_at = |mu_rad: f64| -> f64 {
        let mu_in = solve_mu_in(mu_rad);
        usage(&dual_alloc(mu_rad, mu_in, s, lambda, sigma_sq)).0
    };

    // Bracket: at mu_rad = 0 the current-only solve overspends power (ruled
    // in above); grow until power falls under budget.
    let mut hi = {
        let max_level: f64 = s
            .iter()
            .map(|&g| spec.p_rad + if g > 0.0 { sigma_sq / g } else { 0.0 })
            .fold(1.0, f64::max);
        LOG2_E / max_level
    };
    let mut grow_iters = 0;
    while power_at(hi) > spec.p_rad {
        hi *= 2.0;
        grow_iters += 1;
        if grow_iters > 200 {
            break;
        }
    }
    let mut lo = 0.0;
    let max_outer = 200;
    for _ in 0..max_outer {
        let mid = 0.5 * (lo + hi);
        if power_at(mid) > spec.p_rad {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mu_rad = hi;
    let mu_in = solve_mu_in(mu_rad);
    let alloc = dual_alloc(mu_rad, mu_in, s, lambda, sigma_sq);
    let (up, uc) = usage(&alloc);
    let power_res = (up - spec.p_rad).abs() / spec.p_rad.max(1.0);
    let current_res = (uc - spec.i_in_sq).abs() / spec.i_in_sq.max(1.0);
    let comp = (mu_rad * (spec.p_rad - up))
        .abs()
        .max((mu_in * (spec.i_in_sq - uc)).abs());
    let kkt = power_res.max(current_res).max(comp);
    if kkt > 1e-8 {
        return Err(Error::NonConvergence {
            iterations: max_outer,
            power_residual: power_res,
            current_residual: current_res,
            best_capacity_bits: capacity_from_alloc(s, &alloc, sigma_sq),
        });
    }
    let cap = capacity_from_alloc(s, &alloc, sigma_sq);
    Ok(finish(
        alloc,
        cap,
        up,
        Some(uc),
        spec.p_rad,
        spec.i_in_sq,
        Some((mu_rad, mu_in)),
        kkt,
    ))
}

/// Dual-constraint water-filling for a channel draw.
///
/// If the optimum of either single-constraint problem (solved with its full
/// rotated allocation) already satisfies the other constraint, that solution
/// is returned; otherwise both constraints bind and the paired-diagonal
/// multiplier search runs on (s_i, lambda_i).
pub fn dual_wf(h_iid: &CMat, basis: &ModalBasis, spec: &ConstraintSpec) -> Result<AllocationResult> {
    spec.validate()?;
    let n = h_iid.ncols();
    let lambda = &basis.lambda[..n];

    // Radiated-only optimum; its current usage in the rotated basis.
    let gram = h_iid.adjoint() * h_iid;
    let (s, w) = herm_eig_desc(&gram);
    let rad_alloc = water_fill(&s, spec.p_rad, spec.sigma_sq);
    let mut rad_cur = 0.0;
    for (i, &p) in rad_alloc.iter().enumerate() {
        if p > 0.0 {
            let wi = w.column(i);
            let q: f64 = (0..n).map(|r| wi[r].norm_sqr() / lambda[r]).sum();
            rad_cur += p * q;
        }
    }
    if rad_cur <= spec.i_in_sq * (1.0 - SLACK_REL) {
        let cap = capacity_from_alloc(&s, &rad_alloc, spec.sigma_sq);
        let used: f64 = rad_alloc.iter().sum();
        return Ok(finish(
            rad_alloc,
            cap,
            used,
            Some(rad_cur),
            spec.p_rad,
            spec.i_in_sq,
            Some((0.0, 0.0)),
            0.0,
        ));
    }

    // Current-only optimum with rotation; its radiated usage.
    let cur = capacity_current(h_iid, basis, spec, Policy::Wf)?;
    if cur.used_radiated <= spec.p_rad * (1.0 - SLACK_REL) {
        return Ok(cur);
    }

    dual_wf_diag(&s, lambda, spec)
}

// ---------------------------------------------------------------------------
// Monte Carlo curves
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurvePoint {
    pub p: usize,
    pub policy: Policy,
    pub mode: ConstraintMode,
    pub snr_db: f64,
    pub epsilon: f64,
    pub capacity_mean_bits: f64,
    pub capacity_std: f64,
    pub n_eff: usize,
    /// Ideal P x P MIMO reference with the same policy and budget.
    pub ideal_mean_bits: f64,
    pub infeasible: bool,
}

/// Restricts to the top-P modes for each P in `p_list`, draws `trials`
/// channels per point and averages the capacity of the requested policy,
/// alongside an ideal-MIMO reference with unit modal resistances.
pub fn monte_carlo_capacity(
    basis: &ModalBasis,
    cons: &ConstraintSpec,
    policy: Policy,
    p_list: &[usize],
    seed: u64,
    trials: usize,
) -> Result<Vec<CurvePoint>> {
    cons.validate()?;
    let usable = basis.usable_rank();
    for &p in p_list {
        if p == 0 || p > usable {
            return Err(Error::Invalid(format!(
                "P = {p} outside 1..={usable} (usable basis rank)"
            )));
        }
    }
    let snr_db = match cons.mode {
        ConstraintMode::Current => 10.0 * (cons.i_in_sq / cons.sigma_sq).log10(),
        _ => 10.0 * (cons.p_rad / cons.sigma_sq).log10(),
    };
    let mut out = Vec::with_capacity(p_list.len());
    for &p in p_list {
        let restricted = basis.top(p);
        let lambda = restricted.lambda.clone();
        let n_eff = match cons.mode {
            ConstraintMode::Dual => eadof(&lambda, cons.epsilon()),
            _ => p,
        };
        let spec_ch = ChannelSpec::new(p, seed, trials);
        let per_trial: Result<Vec<(f64, f64)>> = (0..trials)
            .into_par_iter()
            .map(|t| {
                let h = draw_h_iid(&spec_ch, &restricted, t)?.h_iid;
                let cap = trial_capacity(&h, &restricted, cons, policy)?;
                let ideal = ideal_reference(&h, cons, policy)?;
                Ok((cap, ideal))
            })
            .collect();
        let per_trial = per_trial?;
        let mean: f64 = per_trial.iter().map(|v| v.0).sum::<f64>() / trials as f64;
        let ideal_mean: f64 = per_trial.iter().map(|v| v.1).sum::<f64>() / trials as f64;
        let var: f64 = per_trial
            .iter()
            .map(|v| (v.0 - mean).powi(2))
            .sum::<f64>()
            / (trials.max(2) - 1) as f64;
        let infeasible = cons.mode == ConstraintMode::Dual && n_eff == 0;
        out.push(CurvePoint {
            p,
            policy,
            mode: cons.mode,
            snr_db,
            epsilon: if cons.mode == ConstraintMode::Dual {
                cons.epsilon()
            } else {
                f64::NAN
            },
            capacity_mean_bits: mean,
            capacity_std: var.sqrt(),
            n_eff,
            ideal_mean_bits: ideal_mean,
            infeasible,
        });
    }
    Ok(out)
}

fn trial_capacity(
    h: &CMat,
    basis: &ModalBasis,
    cons: &ConstraintSpec,
    policy: Policy,
) -> Result<f64> {
    let r = match (cons.mode, policy) {
        (ConstraintMode::Radiated, _) => capacity_radiated(h, cons, policy)?,
        (ConstraintMode::Current, _) => capacity_current(h, basis, cons, policy)?,
        (ConstraintMode::Dual, Policy::Wf) => dual_wf(h, basis, cons)?,
        (ConstraintMode::Dual, Policy::Ep) => dual_ep_uniform(h, basis, cons)?,
    };
    Ok(r.capacity_bits)
}

fn ideal_reference(h: &CMat, cons: &ConstraintSpec, policy: Policy) -> Result<f64> {
    // Ideal P x P MIMO reference: radiated budget only, no current penalty.
    let budget = match cons.mode {
        ConstraintMode::Current => cons.i_in_sq,
        _ => cons.p_rad,
    };
    let spec = ConstraintSpec::radiated(budget, cons.sigma_sq);
    Ok(capacity_radiated(h, &spec, policy)?.capacity_bits)
}
