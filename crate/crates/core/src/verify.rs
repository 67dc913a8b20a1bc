//! Independent checks that a poisoned dataset installs the target policy.
//!
//! Everything here is recomputed from the dataset through the primal interval
//! recursion in [`crate::tom`]; nothing is read back from the attack LP.

use rand::Rng as _;
use rayon::prelude::*;
use serde::Serialize;

use crate::attack::AttackConfig;
use crate::dataset::{mle_estimate, Dataset};
use crate::game::{
    enumerate_pure_mpe, minimax_solve, Cell, GameError, JointPolicy, QFunction, WEAK_NE_TOL,
};
use crate::rng::{derive_seed, seeded};
use crate::tom::{q_bounds_at_policy, QInterval};

/// Allowed gap between a sampled stage's minimax value and its target entry.
pub const VALUE_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "player", content = "action", rename_all = "snake_case")]
pub enum Deviation {
    Player1(usize),
    Player2(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MarginFailure {
    pub h: usize,
    pub s: usize,
    pub deviation: Deviation,
    pub slack: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub un_ok: bool,
    /// Smallest `lower - upper - iota` over all deviation constraints.
    pub min_margin: f64,
    pub brute_force_ok: bool,
    pub sampled_trials: usize,
    pub failures: Vec<MarginFailure>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub sample_failures: Vec<SampleFailure>,
}

impl VerifyReport {
    /// Both the margin check and (when run) the sampling check passed.
    pub fn passed(&self) -> bool {
        self.un_ok && (self.sampled_trials == 0 || self.brute_force_ok)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("verify report serializes")
    }
}

/// Margin slacks at every stage of `interval` for target `pi`.
pub fn margin_slacks(interval: &QInterval, pi: &JointPolicy, iota: f64) -> Vec<MarginFailure> {
    let shape = interval.shape();
    let mut out = Vec::new();
    for (h, s) in shape.stages() {
        let (t1, t2) = pi.get(h, s);
        let lo = |a1, a2| *interval.q_lo.get(Cell::new(h, s, a1, a2));
        let hi = |a1, a2| *interval.q_hi.get(Cell::new(h, s, a1, a2));
        for a1 in (0..shape.num_actions_1).filter(|&a| a != t1) {
            out.push(MarginFailure {
                h,
                s,
                deviation: Deviation::Player1(a1),
                slack: lo(t1, t2) - hi(a1, t2) - iota,
            });
        }
        for a2 in (0..shape.num_actions_2).filter(|&a| a != t2) {
            out.push(MarginFailure {
                h,
                s,
                deviation: Deviation::Player2(a2),
                slack: lo(t1, a2) - hi(t1, t2) - iota,
            });
        }
    }
    out
}

/// Recomputes the Q bounds of the poisoned dataset and checks every
/// iota-margin at the target.
pub fn verify_attack(poisoned: &Dataset, cfg: &AttackConfig) -> VerifyReport {
    let est = mle_estimate(poisoned);
    let interval = q_bounds_at_policy(&est, &cfg.radii, &cfg.target);
    report_from_slacks(margin_slacks(&interval, &cfg.target, cfg.iota))
}

/// Recomputed check that the target actions of the selected players dominate
/// every alternative by `iota` against every opponent action.
pub fn verify_dominance(
    poisoned: &Dataset,
    cfg: &AttackConfig,
    player1: bool,
    player2: bool,
) -> VerifyReport {
    let est = mle_estimate(poisoned);
    let iv = q_bounds_at_policy(&est, &cfg.radii, &cfg.target);
    let shape = est.shape();
    let lo = |h, s, a1, a2| *iv.q_lo.get(Cell::new(h, s, a1, a2));
    let hi = |h, s, a1, a2| *iv.q_hi.get(Cell::new(h, s, a1, a2));
    let mut slacks = Vec::new();
    for (h, s) in shape.stages() {
        let (t1, t2) = cfg.target.get(h, s);
        for a1 in 0..shape.num_actions_1 {
            for a2 in 0..shape.num_actions_2 {
                if player1 && a1 != t1 {
                    slacks.push(MarginFailure {
                        h,
                        s,
                        deviation: Deviation::Player1(a1),
                        slack: lo(h, s, t1, a2) - hi(h, s, a1, a2) - cfg.iota,
                    });
                }
                if player2 && a2 != t2 {
                    slacks.push(MarginFailure {
                        h,
                        s,
                        deviation: Deviation::Player2(a2),
                        slack: lo(h, s, a1, a2) - hi(h, s, a1, t2) - cfg.iota,
                    });
                }
            }
        }
    }
    report_from_slacks(slacks)
}

fn report_from_slacks(slacks: Vec<MarginFailure>) -> VerifyReport {
    let min_margin = slacks.iter().map(|m| m.slack).fold(f64::INFINITY, f64::min);
    let failures: Vec<MarginFailure> = slacks.into_iter().filter(|m| !(m.slack >= 0.0)).collect();
    VerifyReport {
        un_ok: failures.is_empty(),
        min_margin,
        brute_force_ok: false,
        sampled_trials: 0,
        failures,
        sample_failures: Vec::new(),
    }
}

/// Why one sampled Q function was rejected.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleFailure {
    pub trial: usize,
    /// Number of deterministic MPEs found (1 and equal to the target when fine).
    pub equilibria: usize,
    /// Largest gap between a stage's minimax value and its target entry.
    pub value_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleReport {
    pub brute_force_ok: bool,
    pub trials: usize,
    pub failures: Vec<SampleFailure>,
}

/// Draws a Q function uniformly from the hypercube `[q_lo, q_hi]`.
pub fn sample_q(interval: &QInterval, rng: &mut crate::rng::Rng) -> QFunction {
    let lo = &interval.q_lo;
    QFunction::from_fn(interval.shape(), |c| {
        let (a, b) = (*lo.get(c), *interval.q_hi.get(c));
        a + rng.gen::<f64>() * (b - a)
    })
}

fn check_sample(q: &QFunction, pi: &JointPolicy) -> Result<Option<(usize, f64)>, GameError> {
    let mpe = enumerate_pure_mpe(q, WEAK_NE_TOL)?;
    let unique = mpe.len() == 1 && mpe[0] == *pi;
    let mut gap: f64 = 0.0;
    for (h, s) in q.shape().stages() {
        let (t1, t2) = pi.get(h, s);
        let sol = minimax_solve(&q.stage(h, s))?;
        gap = gap.max((sol.value - q.at(h, s, t1, t2)).abs());
    }
    if unique && gap <= VALUE_TOL {
        Ok(None)
    } else {
        Ok(Some((mpe.len(), gap)))
    }
}

/// Brute-force check on `trials` uniform samples from `interval`: each must
/// have `pi` as its only deterministic MPE, and every stage's minimax value
/// must equal the target entry.
pub fn sample_and_check_interval(
    interval: &QInterval,
    pi: &JointPolicy,
    trials: usize,
    seed: u64,
) -> Result<SampleReport, GameError> {
    let results: Vec<Result<Option<SampleFailure>, GameError>> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = seeded(derive_seed(seed, &[t as u64]));
            let q = sample_q(interval, &mut rng);
            Ok(
                check_sample(&q, pi)?.map(|(equilibria, value_gap)| SampleFailure {
                    trial: t,
                    equilibria,
                    value_gap,
                }),
            )
        })
        .collect();
    let mut failures = Vec::new();
    for r in results {
        if let Some(f) = r? {
            failures.push(f);
        }
    }
    Ok(SampleReport {
        brute_force_ok: failures.is_empty(),
        trials,
        failures,
    })
}

pub fn sample_and_check(
    poisoned: &Dataset,
    cfg: &AttackConfig,
    trials: usize,
    seed: u64,
) -> Result<SampleReport, GameError> {
    let est = mle_estimate(poisoned);
    let interval = q_bounds_at_policy(&est, &cfg.radii, &cfg.target);
    sample_and_check_interval(&interval, &cfg.target, trials, seed)
}

/// [`verify_attack`] followed by [`sample_and_check`] when `trials > 0`.
pub fn verify_full(
    poisoned: &Dataset,
    cfg: &AttackConfig,
    trials: usize,
    seed: u64,
) -> Result<VerifyReport, GameError> {
    let mut report = verify_attack(poisoned, cfg);
    if trials > 0 {
        let s = sample_and_check(poisoned, cfg, trials, seed)?;
        report.brute_force_ok = s.brute_force_ok;
        report.sampled_trials = s.trials;
        report.sample_failures = s.failures;
    }
    Ok(report)
}
