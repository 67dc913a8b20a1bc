//! Linear programs: a small modelling layer and a dense bounded-variable
//! primal simplex.
//!
//! Models are built from [`VarId`] handles and [`LinExpr`] expressions and
//! solved with [`solve`]. The solver runs a two-phase method on a dense
//! tableau. Variable bounds are handled natively (nonbasic variables sit at
//! either bound), so boxed variables cost no extra rows. Pricing is Dantzig's
//! rule; after a streak of degenerate pivots the solver switches to Bland's
//! rule until progress resumes, which rules out cycling.

use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Handle to a variable of an [`LpModel`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VarId(usize);

impl VarId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Affine expression `Σ coef·var + constant`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinExpr {
    terms: Vec<(VarId, f64)>,
    constant: f64,
}

impl LinExpr {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn constant(value: f64) -> Self {
        Self {
            terms: Vec::new(),
            constant: value,
        }
    }

    pub fn term(var: VarId, coef: f64) -> Self {
        Self {
            terms: vec![(var, coef)],
            constant: 0.0,
        }
    }

    /// Builder form of [`LinExpr::add_term`].
    pub fn with(mut self, var: VarId, coef: f64) -> Self {
        self.add_term(var, coef);
        self
    }

    pub fn add_term(&mut self, var: VarId, coef: f64) {
        if coef != 0.0 {
            self.terms.push((var, coef));
        }
    }

    pub fn add_constant(&mut self, value: f64) {
        self.constant += value;
    }

    /// Adds `scale * other` to `self`.
    pub fn add_scaled(&mut self, other: &LinExpr, scale: f64) {
        if scale == 0.0 {
            return;
        }
        for &(v, c) in &other.terms {
            self.add_term(v, c * scale);
        }
        self.constant += other.constant * scale;
    }

    pub fn terms(&self) -> &[(VarId, f64)] {
        &self.terms
    }

    pub fn constant_term(&self) -> f64 {
        self.constant
    }

    pub fn eval(&self, values: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|&(v, c)| c * values[v.0])
            .sum::<f64>()
            + self.constant
    }
}

impl From<VarId> for LinExpr {
    fn from(var: VarId) -> Self {
        LinExpr::term(var, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    Minimize,
    Maximize,
}

#[derive(Debug, Clone)]
struct Variable {
    name: String,
    lower: f64,
    upper: f64,
}

#[derive(Debug, Clone)]
struct Constraint {
    name: String,
    expr: LinExpr,
    relation: Relation,
    rhs: f64,
}

/// A linear program: bounded variables, linear constraints and a linear
/// objective.
#[derive(Debug, Clone)]
pub struct LpModel {
    vars: Vec<Variable>,
    constraints: Vec<Constraint>,
    sense: Sense,
    objective: LinExpr,
}

impl Default for LpModel {
    fn default() -> Self {
        Self::new()
    }
}

impl LpModel {
    pub fn new() -> Self {
        Self {
            vars: Vec::new(),
            constraints: Vec::new(),
            sense: Sense::Minimize,
            objective: LinExpr::new(),
        }
    }

    /// Adds a variable with bounds `lower ..= upper`; infinite bounds are
    /// allowed.
    ///
    /// # Panics
    ///
    /// If `lower > upper` or either bound is NaN.
    pub fn add_var(&mut self, name: impl Into<String>, lower: f64, upper: f64) -> VarId {
        assert!(
            lower <= upper,
            "variable bounds must satisfy lower <= upper (got {lower} > {upper})"
        );
        self.vars.push(Variable {
            name: name.into(),
            lower,
            upper,
        });
        VarId(self.vars.len() - 1)
    }

    /// Adds `expr (relation) rhs` and returns the constraint index.
    pub fn add_constraint(
        &mut self,
        name: impl Into<String>,
        expr: LinExpr,
        relation: Relation,
        rhs: f64,
    ) -> usize {
        debug_assert!(expr.terms.iter().all(|(v, _)| v.0 < self.vars.len()));
        self.constraints.push(Constraint {
            name: name.into(),
            expr,
            relation,
            rhs,
        });
        self.constraints.len() - 1
    }

    pub fn set_objective(&mut self, sense: Sense, expr: LinExpr) {
        self.objective = expr;
        self.sense = sense;
    }

    pub fn objective(&self) -> (&Sense, &LinExpr) {
        (&self.sense, &self.objective)
    }

    /// Adds `d >= 0` with `d >= x - center` and `d >= center - x`. When `d`
    /// appears with a positive weight in a minimized objective, `d = |x - center|`
    /// at every optimum.
    pub fn add_abs_penalty(&mut self, x: VarId, center: f64) -> VarId {
        let name = format!("abs_{}", self.vars[x.0].name);
        let d = self.add_var(name.clone(), 0.0, f64::INFINITY);
        self.add_constraint(
            format!("{name}_hi"),
            LinExpr::term(d, 1.0).with(x, -1.0),
            Relation::Ge,
            -center,
        );
        self.add_constraint(
            format!("{name}_lo"),
            LinExpr::term(d, 1.0).with(x, 1.0),
            Relation::Ge,
            center,
        );
        d
    }

    pub fn num_vars(&self) -> usize {
        self.vars.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.constraints.len()
    }

    pub fn var_name(&self, v: VarId) -> &str {
        &self.vars[v.0].name
    }

    pub fn var_bounds(&self, v: VarId) -> (f64, f64) {
        (self.vars[v.0].lower, self.vars[v.0].upper)
    }

    /// Number of constraints whose name starts with `prefix`.
    pub fn count_constraints_with_prefix(&self, prefix: &str) -> usize {
        self.constraints
            .iter()
            .filter(|c| c.name.starts_with(prefix))
            .count()
    }

    /// Number of variables whose name starts with `prefix`.
    pub fn count_vars_with_prefix(&self, prefix: &str) -> usize {
        self.vars
            .iter()
            .filter(|v| v.name.starts_with(prefix))
            .count()
    }

    /// Largest violation of any constraint or bound at `values`.
    pub fn max_violation(&self, values: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for (v, x) in self.vars.iter().zip(values) {
            worst = worst.max(v.lower - x).max(x - v.upper);
        }
        for c in &self.constraints {
            let lhs = c.expr.eval(values);
            let viol = match c.relation {
                Relation::Le => lhs - c.rhs,
                Relation::Ge => c.rhs - lhs,
                Relation::Eq => (lhs - c.rhs).abs(),
            };
            worst = worst.max(viol);
        }
        worst
    }

    /// Renders the model in CPLEX LP text format.
    pub fn to_lp_string(&self) -> String {
        let name = |i: usize| sanitize(&self.vars[i].name, i);
        let mut out = String::new();
        out.push_str(match self.sense {
            Sense::Minimize => "Minimize\n",
            Sense::Maximize => "Maximize\n",
        });
        out.push_str(" obj:");
        write_expr(&mut out, &self.objective, &name);
        if self.objective.constant != 0.0 {
            // LP format has no objective constant; keep it as a comment.
            let _ = write!(
                out,
                "\n\\ objective constant {:.17e}",
                self.objective.constant
            );
        }
        out.push_str("\nSubject To\n");
        for (i, c) in self.constraints.iter().enumerate() {
            let _ = write!(out, " {}:", sanitize(&c.name, i));
            write_expr(&mut out, &c.expr, &name);
            let op = match c.relation {
                Relation::Le => "<=",
                Relation::Eq => "=",
                Relation::Ge => ">=",
            };
            let _ = writeln!(out, " {op} {:.17e}", c.rhs - c.expr.constant);
        }
        out.push_str("Bounds\n");
        for (i, v) in self.vars.iter().enumerate() {
            let n = name(i);
            match (v.lower.is_finite(), v.upper.is_finite()) {
                (false, false) => {
                    let _ = writeln!(out, " {n} free");
                }
                (true, true) => {
                    let _ = writeln!(out, " {:.17e} <= {n} <= {:.17e}", v.lower, v.upper);
                }
                (true, false) => {
                    let _ = writeln!(out, " {n} >= {:.17e}", v.lower);
                }
                (false, true) => {
                    let _ = writeln!(out, " -inf <= {n} <= {:.17e}", v.upper);
                }
            }
        }
        out.push_str("End\n");
        out
    }
}

fn sanitize(name: &str, index: usize) -> String {
    let cleaned: String = name
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect();
    if cleaned.is_empty() || cleaned.starts_with(|c: char| c.is_ascii_digit()) {
        format!("v{index}_{cleaned}")
    } else {
        cleaned
    }
}

fn write_expr(out: &mut String, expr: &LinExpr, name: &dyn Fn(usize) -> String) {
    if expr.terms.is_empty() {
        out.push_str(" 0");
        return;
    }
    for &(v, c) in &expr.terms {
        let sign = if c < 0.0 { '-' } else { '+' };
        let _ = write!(out, " {sign} {:.17e} {}", c.abs(), name(v.0));
    }
}

/// Solver tolerances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Primal feasibility tolerance.
    pub feas_tol: f64,
    /// Reduced-cost tolerance for optimality.
    pub opt_tol: f64,
    /// Smallest pivot magnitude accepted in the ratio test.
    pub pivot_tol: f64,
    /// Hard cap on simplex iterations; `None` picks one from the model size.
    pub max_iterations: Option<usize>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            feas_tol: 1e-9,
            opt_tol: 1e-9,
            pivot_tol: 1e-10,
            max_iterations: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

impl fmt::Display for LpStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LpStatus::Optimal => "optimal",
            LpStatus::Infeasible => "infeasible",
            LpStatus::Unbounded => "unbounded",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    /// Objective value; meaningful only when `status` is optimal.
    pub objective: f64,
    /// Values indexed by [`VarId::index`]; empty unless optimal.
    pub values: Vec<f64>,
    pub iterations: usize,
}

impl LpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }

    pub fn value(&self, v: VarId) -> f64 {
        self.values[v.0]
    }

    pub fn eval(&self, expr: &LinExpr) -> f64 {
        expr.eval(&self.values)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpError {
    #[error("numerical failure after {iterations} simplex iterations: {detail}")]
    Numerical { iterations: usize, detail: String },
    #[error("non-finite coefficient in {location}")]
    NonFinite { location: String },
}

/// How a model variable maps onto nonnegative solver columns.
#[derive(Debug, Clone, Copy)]
enum ColumnMap {
    /// `x = offset + y`
    Shift { col: usize, offset: f64 },
    /// `x = offset - y`
    Mirror { col: usize, offset: f64 },
    /// `x = y_pos - y_neg`
    Split { pos: usize, neg: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Bound {
    Lower,
    Upper,
}

/// Standard computational form: `A y = b`, `0 <= y <= upper`, `b >= 0`.
struct StandardForm {
    rows: usize,
    cols: usize,
    a: Vec<f64>,
    b: Vec<f64>,
    upper: Vec<f64>,
    cost: Vec<f64>,
    maps: Vec<ColumnMap>,
}

impl StandardForm {
    fn build(model: &LpModel) -> Result<Self, LpError> {
        let mut maps = Vec::with_capacity(model.vars.len());
        let mut upper = Vec::new();
        for (i, v) in model.vars.iter().enumerate() {
            if v.lower.is_nan() || v.upper.is_nan() {
                return Err(LpError::NonFinite {
                    location: format!("bounds of variable {i}"),
                });
            }
            let map = if v.lower.is_finite() {
                upper.push(v.upper - v.lower);
                ColumnMap::Shift {
                    col: upper.len() - 1,
                    offset: v.lower,
                }
            } else if v.upper.is_finite() {
                upper.push(f64::INFINITY);
                ColumnMap::Mirror {
                    col: upper.len() - 1,
                    offset: v.upper,
                }
            } else {
                upper.push(f64::INFINITY);
                upper.push(f64::INFINITY);
                ColumnMap::Split {
                    pos: upper.len() - 2,
                    neg: upper.len() - 1,
                }
            };
            maps.push(map);
        }
        let structural = upper.len();
        let slack_count = model
            .constraints
            .iter()
            .filter(|c| c.relation != Relation::Eq)
            .count();
        let rows = model.constraints.len();
        let cols = structural + slack_count;
        upper.extend(std::iter::repeat_n(f64::INFINITY, slack_count));

        let mut a = vec![0.0; rows * cols];
        let mut b = vec![0.0; rows];
        let mut slack = structural;
        for (r, c) in model.constraints.iter().enumerate() {
            if !c.rhs.is_finite() || !c.expr.constant.is_finite() {
                return Err(LpError::NonFinite {
                    location: format!("constraint {}", c.name),
                });
            }
            let row = &mut a[r * cols..(r + 1) * cols];
            let mut rhs = c.rhs - c.expr.constant;
            for &(v, coef) in &c.expr.terms {
                if !coef.is_finite() {
                    return Err(LpError::NonFinite {
                        location: format!("constraint {}", c.name),
                    });
                }
                match maps[v.0] {
                    ColumnMap::Shift { col, offset } => {
                        row[col] += coef;
                        rhs -= coef * offset;
                    }
                    ColumnMap::Mirror { col, offset } => {
                        row[col] -= coef;
                        rhs -= coef * offset;
                    }
                    ColumnMap::Split { pos, neg } => {
                        row[pos] += coef;
                        row[neg] -= coef;
                    }
                }
            }
            match c.relation {
                Relation::Le => {
                    row[slack] = 1.0;
                    slack += 1;
                }
                Relation::Ge => {
                    row[slack] = -1.0;
                    slack += 1;
                }
                Relation::Eq => {}
            }
            if rhs < 0.0 {
                row.iter_mut().for_each(|x| *x = -*x);
                rhs = -rhs;
            }
            b[r] = rhs;
        }

        let sign = match model.sense {
            Sense::Minimize => 1.0,
            Sense::Maximize => -1.0,
        };
        let mut cost = vec![0.0; cols];
        for &(v, coef) in &model.objective.terms {
            if !coef.is_finite() {
                return Err(LpError::NonFinite {
                    location: "objective".into(),
                });
            }
            let coef = sign * coef;
            match maps[v.0] {
                ColumnMap::Shift { col, .. } => cost[col] += coef,
                ColumnMap::Mirror { col, .. } => cost[col] -= coef,
                ColumnMap::Split { pos, neg } => {
                    cost[pos] += coef;
                    cost[neg] -= coef;
                }
            }
        }
        Ok(Self {
            rows,
            cols,
            a,
            b,
            upper,
            cost,
            maps,
        })
    }

    fn model_values(&self, y: &[f64]) -> Vec<f64> {
        self.maps
            .iter()
            .map(|m| match *m {
                ColumnMap::Shift { col, offset } => offset + y[col],
                ColumnMap::Mirror { col, offset } => offset - y[col],
                ColumnMap::Split { pos, neg } => y[pos] - y[neg],
            })
            .collect()
    }
}

enum PhaseOutcome {
    Optimal,
    Unbounded,
}

/// Dense tableau over the standard form plus one artificial per row.
struct Tableau<'a> {
    sf: &'a StandardForm,
    opts: SolverOptions,
    width: usize,
    t: Vec<f64>,
    beta: Vec<f64>,
    basis: Vec<usize>,
    is_basic: Vec<bool>,
    at: Vec<Bound>,
    upper: Vec<f64>,
    reduced: Vec<f64>,
    iterations: usize,
    max_iterations: usize,
}

impl<'a> Tableau<'a> {
    fn new(sf: &'a StandardForm, opts: SolverOptions) -> Self {
        let m = sf.rows;
        let width = sf.cols + m;
        let mut t = vec![0.0; m * width];
        for r in 0..m {
            t[r * width..r * width + sf.cols]
                .copy_from_slice(&sf.a[r * sf.cols..(r + 1) * sf.cols]);
            t[r * width + sf.cols + r] = 1.0;
        }
        let mut upper = sf.upper.clone();
        upper.extend(std::iter::repeat_n(f64::INFINITY, m));
        let basis: Vec<usize> = (sf.cols..width).collect();
        let mut is_basic = vec![false; width];
        for &j in &basis {
            is_basic[j] = true;
        }
        let max_iterations = opts.max_iterations.unwrap_or(50_000 + 50 * (width + m));
        Self {
            sf,
            opts,
            width,
            t,
            beta: sf.b.clone(),
            basis,
            is_basic,
            at: vec![Bound::Lower; width],
            upper,
            reduced: vec![0.0; width],
            iterations: 0,
            max_iterations,
        }
    }

    fn is_artificial(&self, j: usize) -> bool {
        j >= self.sf.cols
    }

    fn set_costs(&mut self, cost: &[f64]) {
        let m = self.sf.rows;
        self.reduced.copy_from_slice(cost);
        for r in 0..m {
            let cb = cost[self.basis[r]];
            if cb != 0.0 {
                let row = &self.t[r * self.width..(r + 1) * self.width];
                for (d, &x) in self.reduced.iter_mut().zip(row) {
                    *d -= cb * x;
                }
            }
        }
    }

    fn pivot(&mut self, r: usize, q: usize) {
        let w = self.width;
        let m = self.sf.rows;
        let p = self.t[r * w + q];
        {
            let row = &mut self.t[r * w..(r + 1) * w];
            for x in row.iter_mut() {
                *x /= p;
            }
            row[q] = 1.0;
        }
        let (before, rest) = self.t.split_at_mut(r * w);
        let (prow, after) = rest.split_at_mut(w);
        let eliminate = |row: &mut [f64]| {
            let f = row[q];
            if f != 0.0 {
                for (x, &y) in row.iter_mut().zip(prow.iter()) {
                    *x -= f * y;
                }
                row[q] = 0.0;
            }
        };
        before.chunks_exact_mut(w).for_each(eliminate);
        after.chunks_exact_mut(w).for_each(eliminate);
        let f = self.reduced[q];
        if f != 0.0 {
            for (x, &y) in self.reduced.iter_mut().zip(prow.iter()) {
                *x -= f * y;
            }
            self.reduced[q] = 0.0;
        }
        debug_assert_eq!(before.len() / w + 1 + after.len() / w, m);
        let leaving = self.basis[r];
        self.is_basic[leaving] = false;
        self.is_basic[q] = true;
        self.basis[r] = q;
    }

    fn run(&mut self, allow_artificial: bool) -> Result<PhaseOutcome, LpError> {
        let m = self.sf.rows;
        let w = self.width;
        let tol = self.opts.opt_tol;
        let mut degenerate_streak = 0usize;
        let mut bland = false;
        loop {
            if self.iterations >= self.max_iterations {
                return Err(LpError::Numerical {
                    iterations: self.iterations,
                    detail: "iteration limit reached".into(),
                });
            }
            // Pricing.
            let mut entering: Option<(usize, f64)> = None;
            for j in 0..w {
                if self.is_basic[j] || (!allow_artificial && self.is_artificial(j)) {
                    continue;
                }
                let d = self.reduced[j];
                let eligible = match self.at[j] {
                    Bound::Lower => d < -tol && self.upper[j] > 0.0,
                    Bound::Upper => d > tol,
                };
                if !eligible {
                    continue;
                }
                if bland {
                    entering = Some((j, d));
                    break;
                }
                if entering.is_none_or(|(_, best)| d.abs() > best.abs()) {
                    entering = Some((j, d));
                }
            }
            let Some((q, _)) = entering else {
                return Ok(PhaseOutcome::Optimal);
            };
            self.iterations += 1;
            let dir = if self.at[q] == Bound::Lower {
                1.0
            } else {
                -1.0
            };

            // Ratio test.
            let mut step = self.upper[q];
            let mut leave: Option<(usize, Bound, f64)> = None;
            for r in 0..m {
                let alpha = dir * self.t[r * w + q];
                let b = self.basis[r];
                let (ratio, bound) = if alpha > self.opts.pivot_tol {
                    (self.beta[r].max(0.0) / alpha, Bound::Lower)
                } else if alpha < -self.opts.pivot_tol && self.upper[b].is_finite() {
                    (
                        (self.upper[b] - self.beta[r]).max(0.0) / -alpha,
                        Bound::Upper,
                    )
                } else {
                    continue;
                };
                let better = if ratio < step - 1e-12 {
                    true
                } else if ratio <= step + 1e-12 {
                    // Ties: a pure bound flip wins; otherwise Bland picks the
                    // smallest basic index and Dantzig mode the largest pivot.
                    match leave {
                        None => false,
                        Some((lr, _, _)) if bland => b < self.basis[lr],
                        Some((_, _, la)) => alpha.abs() > la.abs(),
                    }
                } else {
                    false
                };
                if better {
                    step = step.min(ratio);
                    leave = Some((r, bound, alpha));
                }
            }
            if !step.is_finite() {
                return Ok(PhaseOutcome::Unbounded);
            }

            for r in 0..m {
                let a = self.t[r * w + q];
                if a != 0.0 {
                    self.beta[r] -= dir * step * a;
                }
            }
            if step <= 1e-12 {
                degenerate_streak += 1;
                if degenerate_streak > 50 {
                    bland = true;
                }
            } else {
                degenerate_streak = 0;
                bland = false;
            }
            match leave {
                None => {
                    // Bound flip.
                    self.at[q] = if dir > 0.0 {
                        Bound::Upper
                    } else {
                        Bound::Lower
                    };
                }
                Some((r, bound, _)) => {
                    let entering_value = if dir > 0.0 {
                        step
                    } else {
                        self.upper[q] - step
                    };
                    let leaving = self.basis[r];
                    self.at[leaving] = bound;
                    self.pivot(r, q);
                    self.beta[r] = entering_value;
                }
            }
        }
    }

    fn column_values(&self) -> Vec<f64> {
        let mut y = vec![0.0; self.width];
        for j in 0..self.width {
            if !self.is_basic[j] && self.at[j] == Bound::Upper {
                y[j] = self.upper[j];
            }
        }
        for (r, &b) in self.basis.iter().enumerate() {
            y[b] = self.beta[r];
        }
        y
    }

    /// Re-solves `B y_B = b - N y_N` from the original data to shed
    /// accumulated round-off in `beta`.
    fn refine(&mut self) -> bool {
        let m = self.sf.rows;
        if m == 0 {
            return true;
        }
        let n = self.sf.cols;
        let mut rhs = self.sf.b.clone();
        for j in 0..n {
            if !self.is_basic[j] && self.at[j] == Bound::Upper {
                let u = self.upper[j];
                for r in 0..m {
                    rhs[r] -= self.sf.a[r * n + j] * u;
                }
            }
        }
        let mut mat = vec![0.0; m * m];
        for (k, &b) in self.basis.iter().enumerate() {
            for r in 0..m {
                mat[r * m + k] = if b < n {
                    self.sf.a[r * n + b]
                } else if b - n == r {
                    1.0
                } else {
                    0.0
                };
            }
        }
        match gauss_solve(&mut mat, &mut rhs, m) {
            Some(sol) => {
                self.beta = sol;
                true
            }
            None => false,
        }
    }
}

fn gauss_solve(mat: &mut [f64], rhs: &mut [f64], m: usize) -> Option<Vec<f64>> {
    let mut perm: Vec<usize> = (0..m).collect();
    for k in 0..m {
        let (p, best) = (k..m)
            .map(|r| (r, mat[perm[r] * m + k].abs()))
            .fold((k, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        if best < 1e-13 {
            return None;
        }
        perm.swap(k, p);
        let pk = perm[k];
        let piv = mat[pk * m + k];
        for &ri in &perm[k + 1..] {
            let f = mat[ri * m + k] / piv;
            if f != 0.0 {
                for c in k..m {
                    mat[ri * m + c] -= f * mat[pk * m + c];
                }
                rhs[ri] -= f * rhs[pk];
            }
        }
    }
    let mut x = vec![0.0; m];
    for k in (0..m).rev() {
        let pk = perm[k];
        let mut s = rhs[pk];
        for c in k + 1..m {
            s -= mat[pk * m + c] * x[c];
        }
        x[k] = s / mat[pk * m + k];
    }
    Some(x)
}

/// Solves `model` to optimality, or reports infeasibility/unboundedness.
pub fn solve(model: &LpModel, opts: &SolverOptions) -> Result<LpSolution, LpError> {
    let sf = StandardForm::build(model)?;
    let m = sf.rows;
    let mut tab = Tableau::new(&sf, *opts);

    // Phase I: minimize the sum of artificials.
    let mut phase1 = vec![0.0; tab.width];
    phase1[sf.cols..].iter_mut().for_each(|c| *c = 1.0);
    tab.set_costs(&phase1);
    if let PhaseOutcome::Unbounded = tab.run(true)? {
        return Err(LpError::Numerical {
            iterations: tab.iterations,
            detail: "phase one reported unbounded".into(),
        });
    }
    let scale = 1.0 + sf.b.iter().fold(0.0f64, |a, &x| a.max(x.abs()));
    let infeasibility: f64 = tab
        .basis
        .iter()
        .zip(&tab.beta)
        .filter(|(&b, _)| b >= sf.cols)
        .map(|(_, &v)| v.max(0.0))
        .sum();
    if infeasibility > opts.feas_tol * scale {
        return Ok(LpSolution {
            status: LpStatus::Infeasible,
            objective: f64::NAN,
            values: Vec::new(),
            iterations: tab.iterations,
        });
    }

    // Drive remaining artificials out of the basis where possible.
    for r in 0..m {
        if tab.basis[r] < sf.cols {
            continue;
        }
        let w = tab.width;
        let candidate = (0..sf.cols).filter(|&j| !tab.is_basic[j]).max_by(|&i, &j| {
            tab.t[r * w + i]
                .abs()
                .partial_cmp(&tab.t[r * w + j].abs())
                .unwrap()
        });
        if let Some(j) = candidate {
            if tab.t[r * w + j].abs() > 1e-9 {
                let value = if tab.at[j] == Bound::Upper {
                    tab.upper[j]
                } else {
                    0.0
                };
                let art = tab.basis[r];
                tab.at[art] = Bound::Lower;
                tab.pivot(r, j);
                tab.beta[r] = value;
            }
        }
    }
    for j in sf.cols..tab.width {
        tab.upper[j] = 0.0;
    }

    // Phase II.
    let mut cost = sf.cost.clone();
    cost.resize(tab.width, 0.0);
    tab.set_costs(&cost);
    let outcome = tab.run(false)?;
    if let PhaseOutcome::Unbounded = outcome {
        return Ok(LpSolution {
            status: LpStatus::Unbounded,
            objective: match model.sense {
                Sense::Minimize => f64::NEG_INFINITY,
                Sense::Maximize => f64::INFINITY,
            },
            values: Vec::new(),
            iterations: tab.iterations,
        });
    }

    let mut values = sf.model_values(&tab.column_values());
    let tol_for = |vals: &[f64]| {
        let mag = vals.iter().fold(1.0f64, |a, &x| a.max(x.abs()));
        opts.feas_tol * mag
    };
    if model.max_violation(&values) > tol_for(&values) {
        if tab.refine() {
            values = sf.model_values(&tab.column_values());
        }
        let viol = model.max_violation(&values);
        if viol > tol_for(&values) {
            return Err(LpError::Numerical {
                iterations: tab.iterations,
                detail: format!("final point violates constraints by {viol:e}"),
            });
        }
    }
    // Snap values that drifted past their bounds by round-off.
    for (x, v) in values.iter_mut().zip(&model.vars) {
        *x = x.clamp(v.lower, v.upper);
    }
    let objective = model.objective.eval(&values);
    Ok(LpSolution {
        status: LpStatus::Optimal,
        objective,
        values,
        iterations: tab.iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts() -> SolverOptions {
        SolverOptions::default()
    }

    #[test]
    fn single_bounded_variable() {
        let mut m = LpModel::new();
        let x = m.add_var("x", 0.0, 10.0);
        m.add_constraint("c", x.into(), Relation::Ge, 3.0);
        m.set_objective(Sense::Minimize, x.into());
        let s = solve(&m, &opts()).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.objective - 3.0).abs() < 1e-12);
    }

    #[test]
    fn contradictory_bounds_are_infeasible() {
        let mut m = LpModel::new();
        let x = m.add_var("x", f64::NEG_INFINITY, f64::INFINITY);
        m.add_constraint("lo", x.into(), Relation::Ge, 1.0);
        m.add_constraint("hi", x.into(), Relation::Le, 0.0);
        m.set_objective(Sense::Minimize, x.into());
        assert_eq!(solve(&m, &opts()).unwrap().status, LpStatus::Infeasible);
    }

    #[test]
    fn unbounded_detected() {
        let mut m = LpModel::new();
        let x = m.add_var("x", 0.0, f64::INFINITY);
        let y = m.add_var("y", 0.0, f64::INFINITY);
        m.add_constraint("c", LinExpr::term(x, 1.0).with(y, -1.0), Relation::Le, 1.0);
        m.set_objective(Sense::Maximize, x.into());
        assert_eq!(solve(&m, &opts()).unwrap().status, LpStatus::Unbounded);
    }

    #[test]
    fn maximize_with_upper_bounded_and_mirrored_vars() {
        // max x + y, x <= 2 (upper bound only), y in [-1, 3], x + y <= 4
        let mut m = LpModel::new();
        let x = m.add_var("x", f64::NEG_INFINITY, 2.0);
        let y = m.add_var("y", -1.0, 3.0);
        m.add_constraint("c", LinExpr::term(x, 1.0).with(y, 1.0), Relation::Le, 4.0);
        m.set_objective(Sense::Maximize, LinExpr::term(x, 1.0).with(y, 1.0));
        let s = solve(&m, &opts()).unwrap();
        assert!((s.objective - 4.0).abs() < 1e-12);
        assert!(m.max_violation(&s.values) < 1e-12);
    }

    #[test]
    fn abs_penalty_at_fixed_points() {
        for (fixed, center, expected) in [(-2.0, 0.0, 2.0), (5.0, 5.0, 0.0), (1.5, -0.25, 1.75)] {
            let mut m = LpModel::new();
            let x = m.add_var("x", fixed, fixed);
            let d = m.add_abs_penalty(x, center);
            m.set_objective(Sense::Minimize, d.into());
            let s = solve(&m, &opts()).unwrap();
            assert!((s.value(d) - expected).abs() < 1e-9, "{fixed} {center}");
        }
    }

    #[test]
    fn redundant_equalities_are_tolerated() {
        let mut m = LpModel::new();
        let x = m.add_var("x", 0.0, f64::INFINITY);
        let y = m.add_var("y", 0.0, f64::INFINITY);
        let e = LinExpr::term(x, 1.0).with(y, 1.0);
        m.add_constraint("a", e.clone(), Relation::Eq, 1.0);
        m.add_constraint("b", e.clone(), Relation::Eq, 1.0);
        m.add_constraint("c", LinExpr::term(x, 2.0).with(y, 2.0), Relation::Eq, 2.0);
        m.set_objective(Sense::Minimize, LinExpr::term(x, 1.0).with(y, 2.0));
        let s = solve(&m, &opts()).unwrap();
        assert!((s.objective - 1.0).abs() < 1e-12);
    }

    #[test]
    fn lp_dump_lists_every_row_and_bound() {
        let mut m = LpModel::new();
        let x = m.add_var("x[0]", 0.0, 1.0);
        let y = m.add_var("y", f64::NEG_INFINITY, f64::INFINITY);
        m.add_constraint(
            "row one",
            LinExpr::term(x, 1.0).with(y, -2.0),
            Relation::Le,
            3.0,
        );
        m.set_objective(Sense::Minimize, LinExpr::term(y, 1.0));
        let text = m.to_lp_string();
        assert!(text.starts_with("Minimize\n"));
        assert!(text.contains("row_one:"));
        assert!(text.contains("x_0_"));
        assert!(text.contains(" y free"));
        assert!(text.ends_with("End\n"));
    }
}
