//! Sets of games a victim may plausibly estimate from a dataset: reward
//! confidence intervals, L1 balls around empirical transition rows, and the
//! per-entry Q intervals they induce.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::ModelEstimate;
use crate::game::{self, CellTable, GameShape, JointPolicy, QFunction, PROB_TOL};
use crate::lp::LpError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TomError {
    #[error("invalid probability vector: {0}")]
    Distribution(String),
    #[error("transition radius {0} outside [0, 2]")]
    Radius(f64),
    #[error("length mismatch: {0} probabilities, {1} values")]
    Length(usize, usize),
}

/// How radii were produced.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum RadiusKind {
    Explicit,
    MleSingleton,
    Bonus { c: f64 },
}

/// Requested radius construction for [`radii_from_mode`].
#[derive(Debug, Clone, PartialEq)]
pub enum RadiusMode {
    /// Victims are maximum-likelihood learners: every radius is zero.
    MleSingleton,
    /// Reward radius `c / sqrt(N)`; uncovered cells get the full Q range `2bH`.
    Bonus {
        c: f64,
    },
    Explicit(Radii),
}

/// Per-cell reward radius and transition L1 radius.
#[derive(Debug, Clone, PartialEq)]
pub struct Radii {
    pub rho_r: CellTable<f64>,
    pub rho_p: CellTable<f64>,
    pub kind: RadiusKind,
}

impl Radii {
    pub fn zero(shape: GameShape) -> Self {
        Self::uniform(shape, 0.0, 0.0)
    }

    pub fn uniform(shape: GameShape, rho_r: f64, rho_p: f64) -> Self {
        Self {
            rho_r: CellTable::filled(shape, rho_r),
            rho_p: CellTable::filled(shape, rho_p),
            kind: RadiusKind::Explicit,
        }
    }

    pub fn shape(&self) -> GameShape {
        self.rho_r.shape()
    }

    pub fn validate(&self) -> Result<(), TomError> {
        for &r in self.rho_r.values() {
            if !(r >= 0.0 && r.is_finite()) {
                return Err(TomError::Radius(r));
            }
        }
        for &r in self.rho_p.values() {
            if !(0.0..=2.0).contains(&r) {
                return Err(TomError::Radius(r));
            }
        }
        Ok(())
    }

    /// Multiplies every radius by `c`, capping transition radii at 2.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            rho_r: self.rho_r.scaled(c),
            rho_p: self.rho_p.map(|&r| (r * c).min(2.0)),
            kind: RadiusKind::Explicit,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.rho_r
            .values()
            .iter()
            .chain(self.rho_p.values())
            .all(|&r| r == 0.0)
    }
}

pub fn radii_from_mode(est: &ModelEstimate, mode: &RadiusMode, reward_bound: f64) -> Radii {
    let shape = est.shape();
    match mode {
        RadiusMode::MleSingleton => Radii {
            kind: RadiusKind::MleSingleton,
            ..Radii::zero(shape)
        },
        RadiusMode::Bonus { c } => {
            let cap = 2.0 * reward_bound * shape.horizon as f64;
            let rho_r = CellTable::from_fn(shape, |cell| match est.count(cell) {
                0 => cap,
                n => c / (n as f64).sqrt(),
            });
            Radii {
                rho_r,
                rho_p: CellTable::filled(shape, 0.0),
                kind: RadiusKind::Bonus { c: *c },
            }
        }
        RadiusMode::Explicit(radii) => radii.clone(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Min,
    Max,
}

/// Exact optimum of `Σ P(s')·values(s')` over transition rows `P` in the
/// simplex with `‖P − p_hat‖₁ ≤ rho` (and `|P − p_hat| ≤ rho` per coordinate,
/// which the L1 budget already implies).
///
/// The optimum moves up to `rho / 2` mass onto the best state, taking it from
/// the worst states first.
pub fn l1_extreme(
    p_hat: &[f64],
    rho: f64,
    values: &[f64],
    direction: Direction,
) -> Result<f64, TomError> {
    if p_hat.len() != values.len() {
        return Err(TomError::Length(p_hat.len(), values.len()));
    }
    game::check_distribution("p_hat", p_hat).map_err(|e| TomError::Distribution(e.to_string()))?;
    if !(0.0..=2.0).contains(&rho) {
        return Err(TomError::Radius(rho));
    }
    let sign = match direction {
        Direction::Min => 1.0,
        Direction::Max => -1.0,
    };
    // Work with costs to minimize.
    let cost: Vec<f64> = values.iter().map(|v| sign * v).collect();
    let best = (0..cost.len())
        .min_by(|&i, &j| cost[i].total_cmp(&cost[j]))
        .expect("non-empty");
    let mut p = p_hat.to_vec();
    let shift = (rho / 2.0).min(1.0 - p[best]).max(0.0);
    p[best] += shift;
    let mut order: Vec<usize> = (0..cost.len()).filter(|&j| j != best).collect();
    order.sort_by(|&i, &j| cost[j].total_cmp(&cost[i]));
    let mut remaining = shift;
    for j in order {
        if remaining <= 0.0 {
            break;
        }
        let take = p[j].min(remaining);
        p[j] -= take;
        remaining -= take;
    }
    debug_assert!(remaining <= PROB_TOL);
    Ok(sign * p.iter().zip(&cost).map(|(a, b)| a * b).sum::<f64>())
}

/// Entrywise Q bounds `[q_lo, q_hi]`; zero beyond the horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct QInterval {
    pub q_lo: QFunction,
    pub q_hi: QFunction,
}

impl QInterval {
    pub fn shape(&self) -> GameShape {
        self.q_lo.shape()
    }

    pub fn max_width(&self) -> f64 {
        self.q_lo
            .values()
            .iter()
            .zip(self.q_hi.values())
            .map(|(lo, hi)| hi - lo)
            .fold(0.0, f64::max)
    }

    pub fn contains(&self, q: &QFunction, tol: f64) -> bool {
        q.values()
            .iter()
            .zip(self.q_lo.values().iter().zip(self.q_hi.values()))
            .all(|(x, (lo, hi))| *x >= lo - tol && *x <= hi + tol)
    }
}

/// Q bounds with continuation along `pi`.
pub fn q_bounds_at_policy(est: &ModelEstimate, radii: &Radii, pi: &JointPolicy) -> QInterval {
    q_bounds_with(est, radii, |q, h, s| {
        let (a1, a2) = pi.get(h, s);
        Ok::<_, LpError>(q.at(h, s, a1, a2))
    })
    .expect("policy continuation cannot fail")
}

/// Q bounds with minimax continuation values, independent of any policy.
pub fn q_bounds_maximin(est: &ModelEstimate, radii: &Radii) -> Result<QInterval, LpError> {
    q_bounds_with(est, radii, |q, h, s| {
        Ok(game::minimax_solve(&q.stage(h, s))?.value)
    })
}

fn q_bounds_with<E>(
    est: &ModelEstimate,
    radii: &Radii,
    mut value: impl FnMut(&QFunction, usize, usize) -> Result<f64, E>,
) -> Result<QInterval, E> {
    let shape = est.shape();
    let ns = shape.num_states;
    let mut q_lo = CellTable::filled(shape, 0.0);
    let mut q_hi = CellTable::filled(shape, 0.0);
    let mut v_lo = vec![0.0; ns];
    let mut v_hi = vec![0.0; ns];
    for h in (0..shape.horizon).rev() {
        let last = h + 1 == shape.horizon;
        for cell in shape.cells().filter(|c| c.h == h) {
            let r = *est.r_hat.get(cell);
            let rho_r = *radii.rho_r.get(cell);
            let (cont_lo, cont_hi) = if last {
                (0.0, 0.0)
            } else {
                let p = est.p_hat.get(cell);
                let rho_p = *radii.rho_p.get(cell);
                (
                    l1_extreme(p, rho_p, &v_lo, Direction::Min).expect("valid estimate row"),
                    l1_extreme(p, rho_p, &v_hi, Direction::Max).expect("valid estimate row"),
                )
            };
            q_lo.set(cell, r - rho_r + cont_lo);
            q_hi.set(cell, r + rho_r + cont_hi);
        }
        for s in 0..ns {
            v_lo[s] = value(&q_lo, h, s)?;
            v_hi[s] = value(&q_hi, h, s)?;
        }
    }
    Ok(QInterval { q_lo, q_hi })
}
