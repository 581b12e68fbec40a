//! Target propagator construction.
//!
//! The propagator is expanded as a fine-step 4th-order product formula and
//! contracted into an MPO at increasing bond dimensions until the cost
//! between consecutive builds converges. The converged MPO can then be
//! pre-compressed to the training error budget, which shrinks the bond
//! dimension the optimizer has to carry.

use crate::error::{Error, Result};
use crate::hamiltonian::TermList;
use crate::mpo::{
    hst_cost, variational_compress, MpoOperator, DEFAULT_COMPRESS_FID_TOL,
    DEFAULT_COMPRESS_MAX_SWEEPS, DEFAULT_GATE_WEIGHT_TOL,
};
use crate::trotter::{circuit_to_mpo, trotter_circuit_steps};

/// Convergence threshold on the cost between consecutive ladder builds.
pub const DEFAULT_CONV_TOL: f64 = 1e-10;
/// Fine-step count for the 4th-order expansion.
pub const DEFAULT_STEP_COUNT: usize = 10;
/// Bond-dimension cap used by the longest-time parameter sweep.
pub const DEFAULT_CHI_CAP: usize = 128;
/// Discarded weight below this is numerical noise from exact-rank splits.
const EXACT_BUILD_TOL: f64 = 1e-24;

/// Doubling ladder `16, 32, …` capped at `chi_cap` (always containing the
/// cap itself).
pub fn default_chi_ladder(chi_cap: usize) -> Vec<usize> {
    let mut ladder = Vec::new();
    let mut chi = 16usize;
    while chi < chi_cap {
        ladder.push(chi);
        chi *= 2;
    }
    ladder.push(chi_cap);
    ladder.dedup();
    ladder
}

#[derive(Clone, Debug)]
pub struct TargetBuildReport {
    pub chosen_chi: usize,
    /// `(chi, cost between this build and the previous one)` per rung, or
    /// `(chi, cost vs the uncompressed input)` per compression attempt.
    pub history: Vec<(usize, f64)>,
    /// Total discarded weight of the accepted build.
    pub truncation_budget_used: f64,
    /// Final convergence (or compression) cost.
    pub final_cost: f64,
    pub t: f64,
}

/// Contract `U_4th(t/k)^k` into an MPO at each ladder bond dimension until
/// the cost between consecutive MPOs drops below `conv_tol`.
///
/// An exactly-representable build (zero discarded weight) converges
/// immediately. An exhausted ladder is a capacity error carrying the last
/// observed cost: the requested time is too long for the bond budget.
pub fn build_target(
    terms: &TermList,
    t: f64,
    k: usize,
    chi_ladder: &[usize],
    conv_tol: f64,
) -> Result<(MpoOperator, TargetBuildReport)> {
    if chi_ladder.is_empty() {
        return Err(Error::Config("empty bond-dimension ladder".into()));
    }
    if chi_ladder.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("bond-dimension ladder must be ascending".into()));
    }
    if conv_tol <= 0.0 {
        return Err(Error::Config("conv_tol must be positive".into()));
    }
    let circ = trotter_circuit_steps(terms, t, k, 4)?;

    let mut history = Vec::new();
    let mut prev: Option<MpoOperator> = None;
    let mut last_cost = f64::NAN;
    for &chi in chi_ladder {
        let (mpo, discarded) = circuit_to_mpo(&circ, chi, DEFAULT_GATE_WEIGHT_TOL)?;
        if discarded < EXACT_BUILD_TOL {
            // Exact contraction; nothing a larger bond dimension could add.
            return Ok((
                mpo,
                TargetBuildReport {
                    chosen_chi: chi,
                    history,
                    truncation_budget_used: 0.0,
                    final_cost: 0.0,
                    t,
                },
            ));
        }
        if let Some(p) = &prev {
            let cost = hst_cost(p, &mpo)?;
            history.push((chi, cost));
            last_cost = cost;
            if cost < conv_tol {
                return Ok((
                    mpo,
                    TargetBuildReport {
                        chosen_chi: chi,
                        history,
                        truncation_budget_used: discarded,
                        final_cost: cost,
                        t,
                    },
                ));
            }
        }
        prev = Some(mpo);
    }
    Err(Error::Capacity {
        context: format!(
            "bond ladder up to {} exhausted building the t={t} target",
            chi_ladder.last().unwrap()
        ),
        last_cost: if last_cost.is_nan() { 1.0 } else { last_cost },
    })
}

/// Largest grid time whose target build converges with every ladder rung
/// at most `chi_cap`. Feasibility is evaluated in ascending order, so the
/// returned time is monotone: every smaller grid point is feasible too.
pub fn longest_time_sweep(terms: &TermList, time_grid: &[f64], chi_cap: usize) -> Result<f64> {
    if time_grid.is_empty() {
        return Err(Error::Config("empty time grid".into()));
    }
    if time_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("time grid must be ascending".into()));
    }
    let ladder = default_chi_ladder(chi_cap);
    let mut best: Option<f64> = None;
    for &t in time_grid {
        match build_target(terms, t, DEFAULT_STEP_COUNT, &ladder, DEFAULT_CONV_TOL) {
            Ok(_) => best = Some(t),
            Err(Error::Capacity { .. }) => break,
            Err(e) => return Err(e),
        }
    }
    best.ok_or(Error::Capacity {
        context: format!("no grid time converged below chi = {chi_cap}"),
        last_cost: 1.0,
    })
}

/// Compress the target below `error_budget`, retrying at doubled bond
/// dimensions until the cost against the uncompressed MPO satisfies the
/// budget. If no smaller bond dimension reaches the budget the original is
/// returned unchanged.
pub fn precompress_target(
    mpo: &MpoOperator,
    error_budget: f64,
) -> Result<(MpoOperator, TargetBuildReport)> {
    if error_budget <= 0.0 {
        return Err(Error::Config("error budget must be positive".into()));
    }
    let original_chi = mpo.max_bond_dim();
    let mut history = Vec::new();
    let mut chi = 1usize;
    while chi < original_chi {
        let (compressed, _fid) = variational_compress(
            mpo,
            chi,
            DEFAULT_COMPRESS_FID_TOL,
            DEFAULT_COMPRESS_MAX_SWEEPS,
        )?;
        let cost = hst_cost(mpo, &compressed)?;
        history.push((chi, cost));
        if cost < error_budget {
            return Ok((
                compressed.clone(),
                TargetBuildReport {
                    chosen_chi: compressed.max_bond_dim(),
                    history,
                    truncation_budget_used: cost,
                    final_cost: cost,
                    t: f64::NAN,
                },
            ));
        }
        chi *= 2;
    }
    Ok((
        mpo.clone(),
        TargetBuildReport {
            chosen_chi: original_chi,
            history,
            truncation_budget_used: 0.0,
            final_cost: 0.0,
            t: f64::NAN,
        },
    ))
}
