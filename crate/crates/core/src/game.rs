//! Tabular finite-horizon zero-sum Markov games.
//!
//! Player 1 maximizes the reward and player 2 minimizes it. A pure action pair
//! `(t1, t2)` is a Nash equilibrium of a stage matrix `q` when no row deviation
//! raises `q` and no column deviation lowers it:
//! `q[t1][t2] >= q[a1][t2]` and `q[t1][t2] <= q[t1][a2]`.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lp::{self, LinExpr, LpError, LpModel, Relation, Sense, SolverOptions};

/// Tolerance used when summing probability vectors.
pub const PROB_TOL: f64 = 1e-9;

/// Default slack for weak (non-strict) stage equilibrium tests.
pub const WEAK_NE_TOL: f64 = 1e-9;

/// Largest number of pure MPEs [`enumerate_pure_mpe`] will materialize.
pub const ENUMERATION_LIMIT: u128 = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GameError {
    #[error("invalid shape: {0}")]
    Shape(String),
    #[error("table size {got} does not match shape (expected {expected})")]
    TableSize { expected: usize, got: usize },
    #[error("{what} is not a probability vector: {detail}")]
    Distribution { what: String, detail: String },
    #[error("reward {value} at {cell} exceeds the bound {bound}")]
    RewardBound { cell: Cell, value: f64, bound: f64 },
    #[error("policy action ({a1}, {a2}) at h={h}, s={s} is out of range")]
    PolicyAction {
        h: usize,
        s: usize,
        a1: usize,
        a2: usize,
    },
    #[error("pure MPE enumeration would produce {count} policies (limit {limit})")]
    EnumerationLimit { count: u128, limit: u128 },
    #[error(transparent)]
    Lp(#[from] LpError),
}

/// Dimensions of a game: states, per-player actions and horizon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GameShape {
    pub num_states: usize,
    pub num_actions_1: usize,
    pub num_actions_2: usize,
    pub horizon: usize,
}

impl GameShape {
    pub fn new(
        num_states: usize,
        num_actions_1: usize,
        num_actions_2: usize,
        horizon: usize,
    ) -> Result<Self, GameError> {
        let shape = Self {
            num_states,
            num_actions_1,
            num_actions_2,
            horizon,
        };
        shape.validate()?;
        Ok(shape)
    }

    /// A one-shot matrix game (`H = 1`, one state).
    pub fn normal_form(num_actions_1: usize, num_actions_2: usize) -> Result<Self, GameError> {
        Self::new(1, num_actions_1, num_actions_2, 1)
    }

    pub fn validate(&self) -> Result<(), GameError> {
        if self.num_states == 0
            || self.num_actions_1 == 0
            || self.num_actions_2 == 0
            || self.horizon == 0
        {
            return Err(GameError::Shape(format!(
                "all dimensions must be positive, got {self:?}"
            )));
        }
        Ok(())
    }

    pub fn joint_actions(&self) -> usize {
        self.num_actions_1 * self.num_actions_2
    }

    pub fn num_cells(&self) -> usize {
        self.horizon * self.num_states * self.joint_actions()
    }

    pub fn num_stages(&self) -> usize {
        self.horizon * self.num_states
    }

    pub fn cell_index(&self, cell: Cell) -> usize {
        debug_assert!(self.contains(cell), "{cell} outside {self:?}");
        ((cell.h * self.num_states + cell.s) * self.num_actions_1 + cell.a1) * self.num_actions_2
            + cell.a2
    }

    pub fn contains(&self, cell: Cell) -> bool {
        cell.h < self.horizon
            && cell.s < self.num_states
            && cell.a1 < self.num_actions_1
            && cell.a2 < self.num_actions_2
    }

    /// All cells in `(h, s, a1, a2)` row-major order.
    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        let shape = *self;
        (0..shape.horizon).flat_map(move |h| {
            (0..shape.num_states).flat_map(move |s| {
                (0..shape.num_actions_1).flat_map(move |a1| {
                    (0..shape.num_actions_2).map(move |a2| Cell { h, s, a1, a2 })
                })
            })
        })
    }

    pub fn stages(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let shape = *self;
        (0..shape.horizon).flat_map(move |h| (0..shape.num_states).map(move |s| (h, s)))
    }
}

/// One `(period, state, action1, action2)` entry, all zero-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub h: usize,
    pub s: usize,
    pub a1: usize,
    pub a2: usize,
}

impl Cell {
    pub fn new(h: usize, s: usize, a1: usize, a2: usize) -> Self {
        Self { h, s, a1, a2 }
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "(h={}, s={}, a=({}, {}))",
            self.h, self.s, self.a1, self.a2
        )
    }
}

/// Dense table indexed by [`Cell`].
#[derive(Debug, Clone, PartialEq)]
pub struct CellTable<T> {
    shape: GameShape,
    data: Vec<T>,
}

impl<T: Clone> CellTable<T> {
    pub fn filled(shape: GameShape, value: T) -> Self {
        Self {
            shape,
            data: vec![value; shape.num_cells()],
        }
    }
}

impl<T> CellTable<T> {
    pub fn from_fn(shape: GameShape, mut f: impl FnMut(Cell) -> T) -> Self {
        let data = shape.cells().map(&mut f).collect();
        Self { shape, data }
    }

    pub fn from_vec(shape: GameShape, data: Vec<T>) -> Result<Self, GameError> {
        if data.len() != shape.num_cells() {
            return Err(GameError::TableSize {
                expected: shape.num_cells(),
                got: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn shape(&self) -> GameShape {
        self.shape
    }

    pub fn get(&self, cell: Cell) -> &T {
        &self.data[self.shape.cell_index(cell)]
    }

    pub fn get_mut(&mut self, cell: Cell) -> &mut T {
        let i = self.shape.cell_index(cell);
        &mut self.data[i]
    }

    pub fn set(&mut self, cell: Cell, value: T) {
        *self.get_mut(cell) = value;
    }

    pub fn values(&self) -> &[T] {
        &self.data
    }

    pub fn iter(&self) -> impl Iterator<Item = (Cell, &T)> + '_ {
        self.shape.cells().zip(self.data.iter())
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> CellTable<U> {
        CellTable {
            shape: self.shape,
            data: self.data.iter().map(f).collect(),
        }
    }
}

impl CellTable<f64> {
    pub fn at(&self, h: usize, s: usize, a1: usize, a2: usize) -> f64 {
        *self.get(Cell { h, s, a1, a2 })
    }

    /// The `|A1| x |A2|` stage matrix at `(h, s)`.
    pub fn stage(&self, h: usize, s: usize) -> Matrix {
        let a1n = self.shape.num_actions_1;
        let a2n = self.shape.num_actions_2;
        let start = self.shape.cell_index(Cell { h, s, a1: 0, a2: 0 });
        Matrix {
            rows: a1n,
            cols: a2n,
            data: self.data[start..start + a1n * a2n].to_vec(),
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        self.map(|x| x * c)
    }

    /// Largest entrywise absolute difference.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Q function of a game; the `H + 1` layer is implicitly zero.
pub type QFunction = CellTable<f64>;

/// Dense row-major payoff matrix (rows: player 1, columns: player 2).
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        assert!(rows > 0 && cols > 0, "matrix must be non-empty");
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        assert!(rows.iter().all(|r| r.len() == cols), "ragged matrix");
        Self::new(
            rows.len(),
            cols,
            rows.iter().flat_map(|r| r.iter().copied()).collect(),
        )
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.cols + j] = value;
    }

    /// `p1ᵀ · M · p2`.
    pub fn expected(&self, p1: &[f64], p2: &[f64]) -> f64 {
        let mut total = 0.0;
        for (i, &x) in p1.iter().enumerate() {
            for (j, &y) in p2.iter().enumerate() {
                total += x * y * self.get(i, j);
            }
        }
        total
    }
}

/// Deterministic Markov policy: one action pair per `(h, s)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct JointPolicy {
    horizon: usize,
    num_states: usize,
    actions: Vec<(usize, usize)>,
}

impl JointPolicy {
    /// `actions[h * num_states + s]` is the pair played at `(h, s)`.
    pub fn new(shape: &GameShape, actions: Vec<(usize, usize)>) -> Result<Self, GameError> {
        if actions.len() != shape.num_stages() {
            return Err(GameError::TableSize {
                expected: shape.num_stages(),
                got: actions.len(),
            });
        }
        for (i, &(a1, a2)) in actions.iter().enumerate() {
            if a1 >= shape.num_actions_1 || a2 >= shape.num_actions_2 {
                return Err(GameError::PolicyAction {
                    h: i / shape.num_states,
                    s: i % shape.num_states,
                    a1,
                    a2,
                });
            }
        }
        Ok(Self {
            horizon: shape.horizon,
            num_states: shape.num_states,
            actions,
        })
    }

    /// The same action pair in every period and state.
    pub fn constant(shape: &GameShape, a1: usize, a2: usize) -> Result<Self, GameError> {
        Self::new(shape, vec![(a1, a2); shape.num_stages()])
    }

    pub fn get(&self, h: usize, s: usize) -> (usize, usize) {
        self.actions[h * self.num_states + s]
    }

    pub fn actions(&self) -> &[(usize, usize)] {
        &self.actions
    }

    /// Checks that the policy fits `shape`.
    pub fn check_shape(&self, shape: &GameShape) -> Result<(), GameError> {
        if self.horizon != shape.horizon || self.num_states != shape.num_states {
            return Err(GameError::Shape(format!(
                "policy covers H={} |S|={}, game has H={} |S|={}",
                self.horizon, self.num_states, shape.horizon, shape.num_states
            )));
        }
        Self::new(shape, self.actions.clone()).map(|_| ())
    }

    /// Whether `cell` shares at least one action with the policy at its stage.
    pub fn touches(&self, cell: Cell) -> bool {
        let (t1, t2) = self.get(cell.h, cell.s);
        cell.a1 == t1 || cell.a2 == t2
    }

    pub fn is_target(&self, cell: Cell) -> bool {
        self.get(cell.h, cell.s) == (cell.a1, cell.a2)
    }
}

/// Checks a probability vector: finite, nonnegative, sums to one.
pub fn check_distribution(what: &str, p: &[f64]) -> Result<(), GameError> {
    if p.is_empty() {
        return Err(GameError::Distribution {
            what: what.into(),
            detail: "empty".into(),
        });
    }
    if let Some(x) = p.iter().find(|x| !x.is_finite() || **x < 0.0) {
        return Err(GameError::Distribution {
            what: what.into(),
            detail: format!("entry {x}"),
        });
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > PROB_TOL {
        return Err(GameError::Distribution {
            what: what.into(),
            detail: format!("sums to {sum}"),
        });
    }
    Ok(())
}

/// A tabular finite-horizon zero-sum Markov game.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovGame {
    shape: GameShape,
    rewards: CellTable<f64>,
    transitions: CellTable<Vec<f64>>,
    initial: Vec<f64>,
    reward_bound: f64,
}

impl MarkovGame {
    pub fn new(
        rewards: CellTable<f64>,
        transitions: CellTable<Vec<f64>>,
        initial: Vec<f64>,
        reward_bound: f64,
    ) -> Result<Self, GameError> {
        let shape = rewards.shape();
        shape.validate()?;
        if transitions.shape() != shape {
            return Err(GameError::Shape(
                "reward and transition tables differ in shape".into(),
            ));
        }
        if !(reward_bound > 0.0 && reward_bound.is_finite()) {
            return Err(GameError::Shape(format!(
                "reward bound {reward_bound} must be positive"
            )));
        }
        for (cell, &r) in rewards.iter() {
            if !r.is_finite() || r.abs() > reward_bound {
                return Err(GameError::RewardBound {
                    cell,
                    value: r,
                    bound: reward_bound,
                });
            }
        }
        for (cell, p) in transitions.iter() {
            if p.len() != shape.num_states {
                return Err(GameError::Distribution {
                    what: format!("transition row at {cell}"),
                    detail: format!("length {} != |S| = {}", p.len(), shape.num_states),
                });
            }
            check_distribution(&format!("transition row at {cell}"), p)?;
        }
        if initial.len() != shape.num_states {
            return Err(GameError::Distribution {
                what: "initial distribution".into(),
                detail: format!("length {} != |S|", initial.len()),
            });
        }
        check_distribution("initial distribution", &initial)?;
        Ok(Self {
            shape,
            rewards,
            transitions,
            initial,
            reward_bound,
        })
    }

    /// A normal-form game: `H = 1`, one state, rewards from `payoff`.
    pub fn normal_form(payoff: &Matrix, reward_bound: f64) -> Result<Self, GameError> {
        let shape = GameShape::normal_form(payoff.rows(), payoff.cols())?;
        let rewards = CellTable::from_fn(shape, |c| payoff.get(c.a1, c.a2));
        let transitions = CellTable::filled(shape, vec![1.0]);
        Self::new(rewards, transitions, vec![1.0], reward_bound)
    }

    pub fn shape(&self) -> GameShape {
        self.shape
    }

    pub fn rewards(&self) -> &CellTable<f64> {
        &self.rewards
    }

    pub fn transitions(&self) -> &CellTable<Vec<f64>> {
        &self.transitions
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    pub fn reward_bound(&self) -> f64 {
        self.reward_bound
    }
}

/// A pair of mixed strategies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedProfile {
    pub p1: Vec<f64>,
    pub p2: Vec<f64>,
}

impl MixedProfile {
    /// The pure pair this profile puts (numerically) all mass on, if any.
    pub fn as_pure(&self, tol: f64) -> Option<(usize, usize)> {
        let pick = |p: &[f64]| p.iter().position(|&x| (x - 1.0).abs() <= tol);
        Some((pick(&self.p1)?, pick(&self.p2)?))
    }
}

/// Result of [`minimax_solve`].
#[derive(Debug, Clone, PartialEq)]
pub struct MinimaxSolution {
    /// Game value (from the maximin LP of player 1).
    pub value: f64,
    /// `max_p1 min_a2` value.
    pub maximin: f64,
    /// `min_p2 max_a1` value.
    pub minimax: f64,
    pub profile: MixedProfile,
}

/// Solves the matrix game `payoff` with two one-sided LPs.
///
/// Which optimal mixed profile is returned when several exist is up to the
/// solver; only the value is unique.
pub fn minimax_solve(payoff: &Matrix) -> Result<MinimaxSolution, LpError> {
    let opts = SolverOptions::default();
    let (m, n) = (payoff.rows(), payoff.cols());

    let mut row_lp = LpModel::new();
    let p: Vec<_> = (0..m)
        .map(|i| row_lp.add_var(format!("p{i}"), 0.0, 1.0))
        .collect();
    let v = row_lp.add_var("v", f64::NEG_INFINITY, f64::INFINITY);
    for j in 0..n {
        let mut e = LinExpr::term(v, -1.0);
        for (i, &pi) in p.iter().enumerate() {
            e.add_term(pi, payoff.get(i, j));
        }
        row_lp.add_constraint(format!("col{j}"), e, Relation::Ge, 0.0);
    }
    let simplex = p.iter().fold(LinExpr::new(), |e, &pi| e.with(pi, 1.0));
    row_lp.add_constraint("simplex", simplex, Relation::Eq, 1.0);
    row_lp.set_objective(Sense::Maximize, v.into());
    let row_sol = lp::solve(&row_lp, &opts)?;

    let mut col_lp = LpModel::new();
    let q: Vec<_> = (0..n)
        .map(|j| col_lp.add_var(format!("q{j}"), 0.0, 1.0))
        .collect();
    let u = col_lp.add_var("u", f64::NEG_INFINITY, f64::INFINITY);
    for i in 0..m {
        let mut e = LinExpr::term(u, -1.0);
        for (j, &qj) in q.iter().enumerate() {
            e.add_term(qj, payoff.get(i, j));
        }
        col_lp.add_constraint(format!("row{i}"), e, Relation::Le, 0.0);
    }
    let simplex = q.iter().fold(LinExpr::new(), |e, &qj| e.with(qj, 1.0));
    col_lp.add_constraint("simplex", simplex, Relation::Eq, 1.0);
    col_lp.set_objective(Sense::Minimize, u.into());
    let col_sol = lp::solve(&col_lp, &opts)?;

    if !row_sol.is_optimal() || !col_sol.is_optimal() {
        return Err(LpError::Numerical {
            iterations: row_sol.iterations + col_sol.iterations,
            detail: format!(
                "matrix game LPs returned {} / {}",
                row_sol.status, col_sol.status
            ),
        });
    }
    let normalize = |x: Vec<f64>| {
        let x: Vec<f64> = x.into_iter().map(|v| v.max(0.0)).collect();
        let s: f64 = x.iter().sum();
        x.into_iter().map(|v| v / s).collect::<Vec<_>>()
    };
    Ok(MinimaxSolution {
        value: row_sol.value(v),
        maximin: row_sol.value(v),
        minimax: col_sol.value(u),
        profile: MixedProfile {
            p1: normalize(p.iter().map(|&x| row_sol.value(x)).collect()),
            p2: normalize(q.iter().map(|&x| col_sol.value(x)).collect()),
        },
    })
}

/// Backward induction with minimax continuation values.
pub fn q_from_model(game: &MarkovGame) -> Result<QFunction, LpError> {
    let shape = game.shape();
    let mut q = CellTable::filled(shape, 0.0);
    let mut next_value = vec![0.0; shape.num_states];
    for h in (0..shape.horizon).rev() {
        for cell in shape.cells().filter(|c| c.h == h) {
            let p = game.transitions().get(cell);
            let cont: f64 = p.iter().zip(&next_value).map(|(a, b)| a * b).sum();
            q.set(cell, game.rewards().get(cell) + cont);
        }
        for (s, v) in next_value.iter_mut().enumerate() {
            *v = minimax_solve(&q.stage(h, s))?.value;
        }
    }
    Ok(q)
}

/// Q function of the fixed policy `pi` (continuation follows `pi`).
pub fn q_on_policy(game: &MarkovGame, pi: &JointPolicy) -> QFunction {
    let shape = game.shape();
    let mut q = CellTable::filled(shape, 0.0);
    let mut next_value = vec![0.0; shape.num_states];
    for h in (0..shape.horizon).rev() {
        for cell in shape.cells().filter(|c| c.h == h) {
            let p = game.transitions().get(cell);
            let cont: f64 = p.iter().zip(&next_value).map(|(a, b)| a * b).sum();
            q.set(cell, game.rewards().get(cell) + cont);
        }
        for (s, v) in next_value.iter_mut().enumerate() {
            let (a1, a2) = pi.get(h, s);
            *v = q.at(h, s, a1, a2);
        }
    }
    q
}

/// Smallest deviation slack at `target`: `q(t) - q(a1, t2)` over row deviations
/// and `q(t1, a2) - q(t)` over column deviations. Positive iff `target` is a
/// strict equilibrium; `+inf` when neither player can deviate.
pub fn iota_strict_margin(q: &Matrix, target: (usize, usize)) -> f64 {
    let (t1, t2) = target;
    let at = q.get(t1, t2);
    let rows = (0..q.rows())
        .filter(|&a1| a1 != t1)
        .map(|a1| at - q.get(a1, t2));
    let cols = (0..q.cols())
        .filter(|&a2| a2 != t2)
        .map(|a2| q.get(t1, a2) - at);
    rows.chain(cols).fold(f64::INFINITY, f64::min)
}

/// Whether `pi` is an `iota`-strict equilibrium of every stage of `q`
/// (strictly positive margin when `iota == 0`).
pub fn un_membership(q: &QFunction, pi: &JointPolicy, iota: f64) -> bool {
    q.shape().stages().all(|(h, s)| {
        let m = iota_strict_margin(&q.stage(h, s), pi.get(h, s));
        if iota == 0.0 {
            m > 0.0
        } else {
            m >= iota
        }
    })
}

/// Pure (weak) Nash equilibria of a stage matrix, row-major order.
pub fn pure_nash(q: &Matrix, tol: f64) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for i in 0..q.rows() {
        for j in 0..q.cols() {
            let v = q.get(i, j);
            let row_best = (0..q.rows()).all(|k| v >= q.get(k, j) - tol);
            let col_best = (0..q.cols()).all(|l| v <= q.get(i, l) + tol);
            if row_best && col_best {
                out.push((i, j));
            }
        }
    }
    out
}

/// Every deterministic MPE of `q`: the product of per-stage pure equilibria.
pub fn enumerate_pure_mpe(q: &QFunction, tol: f64) -> Result<Vec<JointPolicy>, GameError> {
    let shape = q.shape();
    let per_stage: Vec<Vec<(usize, usize)>> = shape
        .stages()
        .map(|(h, s)| pure_nash(&q.stage(h, s), tol))
        .collect();
    let mut count: u128 = 1;
    for stage in &per_stage {
        count = count.saturating_mul(stage.len() as u128);
        if count == 0 {
            return Ok(Vec::new());
        }
    }
    if count > ENUMERATION_LIMIT {
        return Err(GameError::EnumerationLimit {
            count,
            limit: ENUMERATION_LIMIT,
        });
    }
    let mut out = Vec::with_capacity(count as usize);
    let mut idx = vec![0usize; per_stage.len()];
    loop {
        let actions = idx.iter().zip(&per_stage).map(|(&i, st)| st[i]).collect();
        out.push(JointPolicy {
            horizon: shape.horizon,
            num_states: shape.num_states,
            actions,
        });
        // odometer increment, last stage fastest
        let mut k = per_stage.len();
        loop {
            if k == 0 {
                return Ok(out);
            }
            k -= 1;
            idx[k] += 1;
            if idx[k] < per_stage[k].len() {
                break;
            }
            idx[k] = 0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rps() -> Matrix {
        Matrix::from_rows(&[&[0.0, -1.0, 1.0], &[1.0, 0.0, -1.0], &[-1.0, 1.0, 0.0]])
    }

    #[test]
    fn matching_pennies_value_and_profile() {
        let m = Matrix::from_rows(&[&[1.0, -1.0], &[-1.0, 1.0]]);
        let sol = minimax_solve(&m).unwrap();
        assert!(sol.value.abs() < 1e-9);
        for p in sol.profile.p1.iter().chain(&sol.profile.p2) {
            assert!((p - 0.5).abs() < 1e-9);
        }
    }

    #[test]
    fn rps_is_uniform() {
        let sol = minimax_solve(&rps()).unwrap();
        assert!(sol.value.abs() < 1e-9);
        for p in sol.profile.p1.iter().chain(&sol.profile.p2) {
            assert!((p - 1.0 / 3.0).abs() < 1e-9);
        }
    }

    #[test]
    fn strict_margin_cases() {
        let poisoned =
            Matrix::from_rows(&[&[0.0, 0.01, 1.0], &[-0.01, 0.0, 0.0], &[-1.0, 0.0, 0.0]]);
        assert!((iota_strict_margin(&poisoned, (0, 0)) - 0.01).abs() < 1e-15);
        assert_eq!(iota_strict_margin(&rps(), (0, 0)), -1.0);
        assert_eq!(
            iota_strict_margin(&Matrix::from_rows(&[&[3.0]]), (0, 0)),
            f64::INFINITY
        );
    }

    #[test]
    fn zero_q_has_no_strict_equilibrium_but_every_weak_one() {
        let shape = GameShape::new(2, 2, 3, 2).unwrap();
        let q = CellTable::filled(shape, 0.0);
        let pi = JointPolicy::constant(&shape, 1, 2).unwrap();
        assert!(!un_membership(&q, &pi, 0.0));
        assert!(!un_membership(&q, &pi, 0.3));
        let all = enumerate_pure_mpe(&q, WEAK_NE_TOL).unwrap();
        assert_eq!(all.len(), 6usize.pow(4));
    }

    #[test]
    fn matching_pennies_has_no_pure_mpe() {
        let shape = GameShape::normal_form(2, 2).unwrap();
        let q = CellTable::from_vec(shape, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        assert!(enumerate_pure_mpe(&q, WEAK_NE_TOL).unwrap().is_empty());
    }

    #[test]
    fn enumeration_guard() {
        let shape = GameShape::new(4, 3, 3, 2).unwrap();
        let q = CellTable::filled(shape, 0.0);
        assert!(matches!(
            enumerate_pure_mpe(&q, WEAK_NE_TOL),
            Err(GameError::EnumerationLimit { .. })
        ));
    }

    #[test]
    fn one_step_q_equals_rewards() {
        let g = MarkovGame::normal_form(&rps(), 1.0).unwrap();
        let q = q_from_model(&g).unwrap();
        assert_eq!(q.values(), g.rewards().values());
        let pi = JointPolicy::constant(&g.shape(), 2, 1).unwrap();
        assert_eq!(q_on_policy(&g, &pi).values(), g.rewards().values());
    }

    #[test]
    fn policy_validation() {
        let shape = GameShape::new(1, 2, 2, 1).unwrap();
        assert!(JointPolicy::constant(&shape, 2, 0).is_err());
        assert!(JointPolicy::new(&shape, vec![]).is_err());
        assert!(GameShape::new(0, 1, 1, 1).is_err());
    }

    #[test]
    fn invalid_transition_row_rejected() {
        let shape = GameShape::new(2, 1, 1, 1).unwrap();
        let r = CellTable::filled(shape, 0.0);
        let bad = CellTable::filled(shape, vec![0.7, 0.7]);
        assert!(MarkovGame::new(r.clone(), bad, vec![0.5, 0.5], 1.0).is_err());
        let ok = CellTable::filled(shape, vec![0.3, 0.7]);
        assert!(MarkovGame::new(r, ok, vec![0.5, 0.5], 1.0).is_ok());
    }
}
