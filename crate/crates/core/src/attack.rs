//! Reward poisoning attacks that install a target policy as the unique
//! Markov perfect equilibrium for every game in a victim's plausible set.
//!
//! [`optimal_attack`] solves the minimum-L1-cost linear program built by
//! [`build_attack_lp`]. Each poisoned reward is written `r + up - down` with
//! `up, down >= 0`, so the cost is `Σ (up + down)`. The Q bounds are LP
//! variables tied to the rewards through the backward recursion. Where a
//! transition radius is positive, the inner worst case over the L1 ball is
//! replaced by its LP dual:
//!
//! ```text
//! min { qᵀP : P ∈ Δ, ‖P − p̂‖₁ ≤ ρ }
//!   = max { w + p̂ᵀy − ρλ : y_j + w ≤ q_j, |y_j| ≤ λ }
//! ```
//!
//! Any dual-feasible point lower-bounds the inner minimum, so the bounds the
//! LP works with are valid, and at the optimum they are tight wherever a
//! margin constraint binds. The upper bound is symmetric.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::dataset::{mle_estimate, Dataset, DatasetError, ModelEstimate};
use crate::game::{Cell, GameError, GameShape, JointPolicy};
use crate::lp::{self, LinExpr, LpError, LpModel, LpStatus, Relation, Sense, SolverOptions, VarId};
use crate::tom::{Radii, TomError};

/// Default extra margin added to every LP margin constraint so that
/// round-off in the solution never shows up as a negative margin on exact
/// recomputation.
pub const DEFAULT_MARGIN_PAD: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum AttackError {
    #[error("invalid attack configuration: {0}")]
    Config(String),
    #[error("coverage precondition violated: no samples at {0}")]
    Coverage(Cell),
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error(transparent)]
    Game(#[from] GameError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Tom(#[from] TomError),
}

/// Attack inputs: the target policy, margin and reward range, and the
/// victims' radii.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackConfig {
    pub target: JointPolicy,
    pub iota: f64,
    pub reward_bound: f64,
    pub radii: Radii,
    pub solver: SolverOptions,
    pub margin_pad: f64,
}

impl AttackConfig {
    pub fn new(
        target: JointPolicy,
        iota: f64,
        reward_bound: f64,
        radii: Radii,
    ) -> Result<Self, AttackError> {
        let cfg = Self {
            target,
            iota,
            reward_bound,
            radii,
            solver: SolverOptions::default(),
            margin_pad: DEFAULT_MARGIN_PAD,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// MLE victims (all radii zero).
    pub fn mle(
        target: JointPolicy,
        shape: GameShape,
        iota: f64,
        reward_bound: f64,
    ) -> Result<Self, AttackError> {
        Self::new(target, iota, reward_bound, Radii::zero(shape))
    }

    pub fn validate(&self) -> Result<(), AttackError> {
        if !(self.iota > 0.0 && self.iota.is_finite()) {
            return Err(AttackError::Config(format!(
                "iota must be positive, got {}",
                self.iota
            )));
        }
        if !(self.reward_bound > 0.0 && self.reward_bound.is_finite()) {
            return Err(AttackError::Config(format!(
                "reward bound must be positive, got {}",
                self.reward_bound
            )));
        }
        if self.iota >= 2.0 * self.reward_bound {
            return Err(AttackError::Config(format!(
                "iota {} must be below 2b = {}",
                self.iota,
                2.0 * self.reward_bound
            )));
        }
        if !(self.margin_pad >= 0.0) {
            return Err(AttackError::Config("margin pad must be nonnegative".into()));
        }
        self.radii.validate()?;
        self.target.check_shape(&self.radii.shape())?;
        Ok(())
    }

    fn check_dataset(&self, d: &Dataset) -> Result<(), AttackError> {
        self.validate()?;
        if self.radii.shape() != d.shape() {
            return Err(AttackError::Config(format!(
                "radii shape {:?} does not match dataset shape {:?}",
                self.radii.shape(),
                d.shape()
            )));
        }
        self.target.check_shape(&d.shape())?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackMethod {
    Optimal,
    Feasible,
    Dse,
    DsePlayer1,
    DsePlayer2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RewardDelta {
    pub episode: usize,
    pub step: usize,
    pub old: f64,
    pub new: f64,
}

/// LP values of the Q bounds at one modelled cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LpCellBounds {
    pub cell: Cell,
    pub q_lo: f64,
    pub q_hi: f64,
}

/// Outcome of an attack. Closed-form attacks report `Optimal` on success.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttackResult {
    pub method: AttackMethod,
    pub status: LpStatus,
    /// L1 cost; NaN (serialized as null) unless the attack succeeded.
    pub cost: f64,
    pub deltas: Vec<RewardDelta>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lp_objective: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lp_iterations: Option<usize>,
    #[serde(skip)]
    pub poisoned: Option<Dataset>,
    #[serde(skip)]
    pub lp_bounds: Vec<LpCellBounds>,
}

impl AttackResult {
    pub fn succeeded(&self) -> bool {
        self.status == LpStatus::Optimal && self.poisoned.is_some()
    }

    fn from_poisoned(method: AttackMethod, original: &Dataset, poisoned: Dataset) -> Self {
        let deltas: Vec<RewardDelta> = original
            .records()
            .zip(poisoned.records())
            .filter(|((_, _, a), (_, _, b))| a.reward != b.reward)
            .map(|((k, h, a), (_, _, b))| RewardDelta {
                episode: k,
                step: h,
                old: a.reward,
                new: b.reward,
            })
            .collect();
        let cost = deltas.iter().map(|d| (d.old - d.new).abs()).sum();
        Self {
            method,
            status: LpStatus::Optimal,
            cost,
            deltas,
            lp_objective: None,
            lp_iterations: None,
            poisoned: Some(poisoned),
            lp_bounds: Vec::new(),
        }
    }

    fn failed(method: AttackMethod, status: LpStatus, iterations: usize) -> Self {
        Self {
            method,
            status,
            cost: f64::NAN,
            deltas: Vec::new(),
            lp_objective: None,
            lp_iterations: Some(iterations),
            poisoned: None,
            lp_bounds: Vec::new(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("attack result serializes")
    }
}

/// Which margin constraints the LP imposes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MarginKind {
    /// The target is an iota-strict equilibrium of every stage (unique MPE).
    UniqueNash,
    /// The target action strictly dominates every other action of the
    /// selected players, against every opponent action.
    Dominance { player1: bool, player2: bool },
}

#[derive(Debug, Clone)]
struct RewardSlot {
    episode: usize,
    step: usize,
    original: f64,
    up: VarId,
    down: VarId,
}

/// An assembled attack LP plus the handles needed to read a solution back.
#[derive(Debug, Clone)]
pub struct AttackLp {
    pub model: LpModel,
    pub kind: MarginKind,
    slots: Vec<RewardSlot>,
    q_lo: BTreeMap<Cell, VarId>,
    q_hi: BTreeMap<Cell, VarId>,
    /// Samples outside the modelled cells, moved only to respect `[-b, b]`.
    clamped: Vec<(usize, usize)>,
    reward_bound: f64,
}

impl AttackLp {
    /// Number of poisoned-reward slots (samples the LP may move).
    pub fn num_reward_slots(&self) -> usize {
        self.slots.len()
    }

    pub fn num_margin_constraints(&self) -> usize {
        self.model.count_constraints_with_prefix("margin")
    }

    pub fn modelled_cells(&self) -> impl Iterator<Item = Cell> + '_ {
        self.q_lo.keys().copied()
    }

    pub fn q_lo_var(&self, cell: Cell) -> Option<VarId> {
        self.q_lo.get(&cell).copied()
    }

    pub fn q_hi_var(&self, cell: Cell) -> Option<VarId> {
        self.q_hi.get(&cell).copied()
    }

    fn poisoned_from(&self, d: &Dataset, values: &[f64]) -> Dataset {
        let b = self.reward_bound;
        let mut moved: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for slot in &self.slots {
            let r = slot.original + values[slot.up.index()] - values[slot.down.index()];
            moved.insert((slot.episode, slot.step), r.clamp(-b, b));
        }
        for &key in &self.clamped {
            moved.insert(key, f64::NAN);
        }
        d.with_rewards(|k, h, r| match moved.get(&(k, h)) {
            Some(v) if v.is_nan() => r.clamp(-b, b),
            Some(&v) => v,
            None => r,
        })
    }
}

fn cell_tag(c: Cell) -> String {
    format!("{}_{}_{}_{}", c.h, c.s, c.a1, c.a2)
}

/// Assembles the unique-equilibrium attack LP.
pub fn build_attack_lp(d: &Dataset, cfg: &AttackConfig) -> Result<AttackLp, AttackError> {
    build_lp(d, cfg, MarginKind::UniqueNash)
}

/// Assembles an attack LP with the given margin constraints.
pub fn build_lp(
    d: &Dataset,
    cfg: &AttackConfig,
    kind: MarginKind,
) -> Result<AttackLp, AttackError> {
    cfg.check_dataset(d)?;
    let shape = d.shape();
    let est = mle_estimate(d);
    let pi = &cfg.target;
    let b = cfg.reward_bound;
    let modelled = |c: Cell| match kind {
        MarginKind::UniqueNash => pi.touches(c),
        MarginKind::Dominance { .. } => true,
    };

    let mut model = LpModel::new();
    let mut objective = LinExpr::new();
    let mut slots = Vec::new();
    let mut clamped = Vec::new();
    let mut moves: BTreeMap<Cell, LinExpr> = BTreeMap::new();
    for (k, h, st) in d.records() {
        let cell = st.cell(h);
        if !modelled(cell) {
            if st.reward.abs() > b {
                clamped.push((k, h));
            }
            continue;
        }
        let r = st.reward;
        let (lo, hi) = (-b - r, b - r);
        let up = model.add_var(format!("up_{k}_{h}"), lo.max(0.0), hi.max(0.0));
        let down = model.add_var(format!("down_{k}_{h}"), (-hi).max(0.0), (-lo).max(0.0));
        objective.add_term(up, 1.0);
        objective.add_term(down, 1.0);
        let e = moves.entry(cell).or_default();
        e.add_term(up, 1.0);
        e.add_term(down, -1.0);
        slots.push(RewardSlot {
            episode: k,
            step: h,
            original: r,
            up,
            down,
        });
    }
    model.set_objective(Sense::Minimize, objective);

    // Mean poisoned reward of a cell as an affine expression.
    let reward_expr = |cell: Cell| -> LinExpr {
        let n = est.count(cell);
        if n == 0 {
            return LinExpr::constant(0.0);
        }
        let mut e = LinExpr::constant(*est.r_hat.get(cell));
        if let Some(m) = moves.get(&cell) {
            e.add_scaled(m, 1.0 / n as f64);
        }
        e
    };

    let mut q_lo = BTreeMap::new();
    let mut q_hi = BTreeMap::new();
    for cell in shape.cells().filter(|&c| modelled(c)) {
        let tag = cell_tag(cell);
        q_lo.insert(
            cell,
            model.add_var(format!("qlo_{tag}"), f64::NEG_INFINITY, f64::INFINITY),
        );
        q_hi.insert(
            cell,
            model.add_var(format!("qhi_{tag}"), f64::NEG_INFINITY, f64::INFINITY),
        );
    }

    for cell in shape.cells().filter(|&c| modelled(c)) {
        let tag = cell_tag(cell);
        let rho_r = *cfg.radii.rho_r.get(cell);
        let (cont_lo, cont_hi) = continuation(&mut model, &est, cfg, cell, &q_lo, &q_hi);
        // q_lo = R - rho_r + cont_lo
        let mut e = LinExpr::term(q_lo[&cell], 1.0);
        e.add_scaled(&reward_expr(cell), -1.0);
        e.add_scaled(&cont_lo, -1.0);
        model.add_constraint(format!("def_qlo_{tag}"), e, Relation::Eq, -rho_r);
        // q_hi = R + rho_r + cont_hi
        let mut e = LinExpr::term(q_hi[&cell], 1.0);
        e.add_scaled(&reward_expr(cell), -1.0);
        e.add_scaled(&cont_hi, -1.0);
        model.add_constraint(format!("def_qhi_{tag}"), e, Relation::Eq, rho_r);
    }

    let margin = cfg.iota + cfg.margin_pad;
    // Adds `q_lo[better] - q_hi[worse] >= margin` (player 1 prefers `better`)
    // or its column counterpart; both read "lo - hi >= margin".
    let add_margin = |model: &mut LpModel, name: String, lo_cell: Cell, hi_cell: Cell| {
        model.add_constraint(
            name,
            LinExpr::term(q_lo[&lo_cell], 1.0).with(q_hi[&hi_cell], -1.0),
            Relation::Ge,
            margin,
        );
    };
    for (h, s) in shape.stages() {
        let (t1, t2) = pi.get(h, s);
        match kind {
            MarginKind::UniqueNash => {
                let target = Cell::new(h, s, t1, t2);
                for a1 in (0..shape.num_actions_1).filter(|&a| a != t1) {
                    add_margin(
                        &mut model,
                        format!("margin_p1_{h}_{s}_{a1}"),
                        target,
                        Cell::new(h, s, a1, t2),
                    );
                }
                for a2 in (0..shape.num_actions_2).filter(|&a| a != t2) {
                    add_margin(
                        &mut model,
                        format!("margin_p2_{h}_{s}_{a2}"),
                        Cell::new(h, s, t1, a2),
                        target,
                    );
                }
            }
            MarginKind::Dominance { player1, player2 } => {
                if player1 {
                    for a2 in 0..shape.num_actions_2 {
                        for a1 in (0..shape.num_actions_1).filter(|&a| a != t1) {
                            add_margin(
                                &mut model,
                                format!("margin_p1_{h}_{s}_{a1}_{a2}"),
                                Cell::new(h, s, t1, a2),
                                Cell::new(h, s, a1, a2),
                            );
                        }
                    }
                }
                if player2 {
                    for a1 in 0..shape.num_actions_1 {
                        for a2 in (0..shape.num_actions_2).filter(|&a| a != t2) {
                            add_margin(
                                &mut model,
                                format!("margin_p2_{h}_{s}_{a1}_{a2}"),
                                Cell::new(h, s, a1, a2),
                                Cell::new(h, s, a1, t2),
                            );
                        }
                    }
                }
            }
        }
    }

    Ok(AttackLp {
        model,
        kind,
        slots,
        q_lo,
        q_hi,
        clamped,
        reward_bound: b,
    })
}

/// Continuation terms of the lower and upper Q bounds at `cell`.
fn continuation(
    model: &mut LpModel,
    est: &ModelEstimate,
    cfg: &AttackConfig,
    cell: Cell,
    q_lo: &BTreeMap<Cell, VarId>,
    q_hi: &BTreeMap<Cell, VarId>,
) -> (LinExpr, LinExpr) {
    let shape = est.shape();
    if cell.h + 1 == shape.horizon {
        return (LinExpr::new(), LinExpr::new());
    }
    let next = |s2: usize| {
        let (a1, a2) = cfg.target.get(cell.h + 1, s2);
        Cell::new(cell.h + 1, s2, a1, a2)
    };
    let p = est.p_hat.get(cell);
    let rho = *cfg.radii.rho_p.get(cell);
    if rho == 0.0 {
        let mut lo = LinExpr::new();
        let mut hi = LinExpr::new();
        for (s2, &ps) in p.iter().enumerate() {
            lo.add_term(q_lo[&next(s2)], ps);
            hi.add_term(q_hi[&next(s2)], ps);
        }
        return (lo, hi);
    }

    let tag = cell_tag(cell);
    let side = |model: &mut LpModel, name: &str, q: &BTreeMap<Cell, VarId>, lower: bool| {
        let w = model.add_var(format!("{name}_w_{tag}"), f64::NEG_INFINITY, f64::INFINITY);
        let lam = model.add_var(format!("{name}_lambda_{tag}"), 0.0, f64::INFINITY);
        let mut cont = LinExpr::term(w, 1.0).with(lam, if lower { -rho } else { rho });
        for (s2, &ps) in p.iter().enumerate() {
            let y = model.add_var(
                format!("{name}_y_{tag}_{s2}"),
                f64::NEG_INFINITY,
                f64::INFINITY,
            );
            cont.add_term(y, ps);
            // lower: y + w <= q_next ; upper: y + w >= q_next
            model.add_constraint(
                format!("{name}_dual_{tag}_{s2}"),
                LinExpr::term(y, 1.0).with(w, 1.0).with(q[&next(s2)], -1.0),
                if lower { Relation::Le } else { Relation::Ge },
                0.0,
            );
            model.add_constraint(
                format!("{name}_ylam_hi_{tag}_{s2}"),
                LinExpr::term(y, 1.0).with(lam, -1.0),
                Relation::Le,
                0.0,
            );
            model.add_constraint(
                format!("{name}_ylam_lo_{tag}_{s2}"),
                LinExpr::term(y, 1.0).with(lam, 1.0),
                Relation::Ge,
                0.0,
            );
        }
        cont
    };
    let lo = side(model, "lo", q_lo, true);
    let hi = side(model, "hi", q_hi, false);
    (lo, hi)
}

fn solve_attack(
    d: &Dataset,
    cfg: &AttackConfig,
    lp_model: &AttackLp,
    method: AttackMethod,
) -> Result<AttackResult, AttackError> {
    let sol = lp::solve(&lp_model.model, &cfg.solver)?;
    if sol.status != LpStatus::Optimal {
        return Ok(AttackResult::failed(method, sol.status, sol.iterations));
    }
    let poisoned = lp_model.poisoned_from(d, &sol.values);
    let mut result = AttackResult::from_poisoned(method, d, poisoned);
    result.lp_objective = Some(sol.objective);
    result.lp_iterations = Some(sol.iterations);
    result.lp_bounds = lp_model
        .q_lo
        .iter()
        .map(|(&cell, &lo)| LpCellBounds {
            cell,
            q_lo: sol.value(lo),
            q_hi: sol.value(lp_model.q_hi[&cell]),
        })
        .collect();
    Ok(result)
}

/// Minimum-cost poisoning installing `cfg.target` as the unique MPE for every
/// game in the victims' Q hypercube. An infeasible LP is reported through
/// `status`, not as an error.
pub fn optimal_attack(d: &Dataset, cfg: &AttackConfig) -> Result<AttackResult, AttackError> {
    let model = build_attack_lp(d, cfg)?;
    solve_attack(d, cfg, &model, AttackMethod::Optimal)
}

/// First cell sharing a target action that has no samples.
pub fn first_uncovered_target_cell(est: &ModelEstimate, target: &JointPolicy) -> Option<Cell> {
    est.shape()
        .cells()
        .find(|&c| target.touches(c) && !est.is_covered(c))
}

/// Closed-form attack: 0 on the target cell, `-b` where player 1 deviates,
/// `+b` where player 2 deviates, other rewards unchanged (clamped to
/// `[-b, b]`).
pub fn feasible_attack(d: &Dataset, cfg: &AttackConfig) -> Result<AttackResult, AttackError> {
    cfg.check_dataset(d)?;
    let est = mle_estimate(d);
    if let Some(cell) = first_uncovered_target_cell(&est, &cfg.target) {
        return Err(AttackError::Coverage(cell));
    }
    let b = cfg.reward_bound;
    let shape = d.shape();
    let records: Vec<_> = d.records().map(|(_, h, st)| st.cell(h)).collect();
    let mut idx = 0usize;
    let poisoned = d.with_rewards(|_, _, r| {
        let cell = records[idx];
        idx += 1;
        debug_assert!(shape.contains(cell));
        let (t1, t2) = cfg.target.get(cell.h, cell.s);
        match (cell.a1 == t1, cell.a2 == t2) {
            (true, true) => 0.0,
            (false, true) => -b,
            (true, false) => b,
            (false, false) => r.clamp(-b, b),
        }
    });
    Ok(AttackResult::from_poisoned(
        AttackMethod::Feasible,
        d,
        poisoned,
    ))
}

/// Sufficient-condition report for the existence of a successful attack.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeasibilityReport {
    /// True when success is guaranteed; false means "not guaranteed".
    pub guaranteed: bool,
    /// The reward-radius bound `(b - iota) / (4H)`.
    pub bound: f64,
    pub uncovered: Option<Cell>,
    /// Cells whose reward radius exceeds the bound, with that radius.
    pub violations: Vec<(Cell, f64)>,
}

pub fn feasibility_check(est: &ModelEstimate, cfg: &AttackConfig) -> FeasibilityReport {
    let shape = est.shape();
    let bound = (cfg.reward_bound - cfg.iota) / (4.0 * shape.horizon as f64);
    let uncovered = first_uncovered_target_cell(est, &cfg.target);
    let violations: Vec<(Cell, f64)> = cfg
        .radii
        .rho_r
        .iter()
        .filter(|(_, &r)| r > bound)
        .map(|(c, &r)| (c, r))
        .collect();
    FeasibilityReport {
        guaranteed: uncovered.is_none() && violations.is_empty(),
        bound,
        uncovered,
        violations,
    }
}

fn require_full_coverage(d: &Dataset) -> Result<(), AttackError> {
    let est = mle_estimate(d);
    match d.shape().cells().find(|&c| !est.is_covered(c)) {
        Some(c) => Err(AttackError::Coverage(c)),
        None => Ok(()),
    }
}

/// Dominant-strategy baseline on one shared reward: both players' target
/// actions must dominate by `iota` in every stage.
pub fn dse_attack(d: &Dataset, cfg: &AttackConfig) -> Result<AttackResult, AttackError> {
    cfg.check_dataset(d)?;
    require_full_coverage(d)?;
    let model = build_lp(
        d,
        cfg,
        MarginKind::Dominance {
            player1: true,
            player2: true,
        },
    )?;
    solve_attack(d, cfg, &model, AttackMethod::Dse)
}

/// Dominant-strategy baseline where each player learns from its own copy of
/// the rewards (player 2's copy in player-1 sign convention) and each copy is
/// poisoned separately.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeparateDseResult {
    pub status: LpStatus,
    /// Sum of both copies' costs; NaN unless both succeeded.
    pub cost: f64,
    pub player1: AttackResult,
    pub player2: AttackResult,
}

pub fn dse_attack_separate(
    d: &Dataset,
    cfg: &AttackConfig,
) -> Result<SeparateDseResult, AttackError> {
    cfg.check_dataset(d)?;
    require_full_coverage(d)?;
    let p1 = build_lp(
        d,
        cfg,
        MarginKind::Dominance {
            player1: true,
            player2: false,
        },
    )?;
    let p2 = build_lp(
        d,
        cfg,
        MarginKind::Dominance {
            player1: false,
            player2: true,
        },
    )?;
    let player1 = solve_attack(d, cfg, &p1, AttackMethod::DsePlayer1)?;
    let player2 = solve_attack(d, cfg, &p2, AttackMethod::DsePlayer2)?;
    let ok = player1.succeeded() && player2.succeeded();
    Ok(SeparateDseResult {
        status: if ok {
            LpStatus::Optimal
        } else if player1.status != LpStatus::Optimal {
            player1.status
        } else {
            player2.status
        },
        cost: if ok {
            player1.cost + player2.cost
        } else {
            f64::NAN
        },
        player1,
        player2,
    })
}
