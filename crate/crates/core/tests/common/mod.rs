//! Random instance builders shared by the integration tests.
#![allow(dead_code)]

use mgpoison::dataset::{Dataset, Episode, Step};
use mgpoison::game::{GameShape, JointPolicy};
use mgpoison::rng::{seeded, Rng};
use rand::Rng as _;

pub fn rng(seed: u64) -> Rng {
    seeded(seed)
}

pub fn uniform(rng: &mut Rng, lo: f64, hi: f64) -> f64 {
    lo + rng.gen::<f64>() * (hi - lo)
}

/// H, |S| in 1..=3 and 2..=3 actions per player.
pub fn random_shape(rng: &mut Rng) -> GameShape {
    GameShape::new(
        rng.gen_range(1..=3),
        rng.gen_range(2..=3),
        rng.gen_range(2..=3),
        rng.gen_range(1..=3),
    )
    .unwrap()
}

pub fn random_policy(rng: &mut Rng, shape: &GameShape) -> JointPolicy {
    let actions = (0..shape.num_stages())
        .map(|_| {
            (
                rng.gen_range(0..shape.num_actions_1),
                rng.gen_range(0..shape.num_actions_2),
            )
        })
        .collect();
    JointPolicy::new(shape, actions).unwrap()
}

fn random_step(rng: &mut Rng, shape: &GameShape, scale: f64) -> Step {
    Step::new(
        rng.gen_range(0..shape.num_states),
        rng.gen_range(0..shape.num_actions_1),
        rng.gen_range(0..shape.num_actions_2),
        uniform(rng, -scale, scale),
    )
}

/// `k` uniformly random episodes with rewards in `[-scale, scale]`.
pub fn random_dataset(rng: &mut Rng, shape: GameShape, k: usize, scale: f64, b: f64) -> Dataset {
    let episodes = (0..k)
        .map(|_| {
            Episode::new(
                (0..shape.horizon)
                    .map(|_| random_step(rng, &shape, scale))
                    .collect(),
            )
        })
        .collect();
    Dataset::new(shape, episodes, b).unwrap()
}

/// Visits every cell at least once, plus `extra` random episodes.
pub fn covered_dataset(
    rng: &mut Rng,
    shape: GameShape,
    extra: usize,
    scale: f64,
    b: f64,
) -> Dataset {
    let mut episodes = Vec::new();
    for cell in shape.cells() {
        let steps = (0..shape.horizon)
            .map(|h| {
                let mut st = random_step(rng, &shape, scale);
                if h == cell.h {
                    st.state = cell.s;
                    st.a1 = cell.a1;
                    st.a2 = cell.a2;
                }
                st
            })
            .collect();
        episodes.push(Episode::new(steps));
    }
    let more = random_dataset(rng, shape, extra, scale, b);
    episodes.extend(more.episodes().iter().cloned());
    Dataset::new(shape, episodes, b).unwrap()
}

/// Random point of the probability simplex.
pub fn random_simplex(rng: &mut Rng, n: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
    let s: f64 = w.iter().sum();
    w.iter().map(|x| x / s).collect()
}

pub fn random_game(rng: &mut Rng, shape: GameShape, b: f64) -> mgpoison::game::MarkovGame {
    use mgpoison::game::{CellTable, MarkovGame};
    let rewards = CellTable::from_fn(shape, |_| uniform(rng, -b, b));
    let transitions = CellTable::from_fn(shape, |_| random_simplex(rng, shape.num_states));
    let initial = random_simplex(rng, shape.num_states);
    MarkovGame::new(rewards, transitions, initial, b).unwrap()
}

/// Q function whose every stage has `pi` as an `iota`-strict equilibrium,
/// with deviation gaps in `[iota, iota + 1]`.
pub fn strict_q(
    rng: &mut Rng,
    shape: GameShape,
    pi: &JointPolicy,
    iota: f64,
) -> mgpoison::game::QFunction {
    use mgpoison::game::QFunction;
    let mut q = QFunction::from_fn(shape, |_| uniform(rng, -3.0, 3.0));
    for (h, s) in shape.stages() {
        let (t1, t2) = pi.get(h, s);
        let v = uniform(rng, -2.0, 2.0);
        q.set(mgpoison::game::Cell::new(h, s, t1, t2), v);
        for a1 in (0..shape.num_actions_1).filter(|&a| a != t1) {
            q.set(
                mgpoison::game::Cell::new(h, s, a1, t2),
                v - iota - rng.gen::<f64>(),
            );
        }
        for a2 in (0..shape.num_actions_2).filter(|&a| a != t2) {
            q.set(
                mgpoison::game::Cell::new(h, s, t1, a2),
                v + iota + rng.gen::<f64>(),
            );
        }
    }
    q
}

/// Checks an attack result end to end: data shape, reward box, cost
/// bookkeeping, recomputed margins, and `trials` brute-force samples.
pub fn check_attack(
    d: &Dataset,
    cfg: &mgpoison::attack::AttackConfig,
    res: &mgpoison::attack::AttackResult,
    trials: usize,
    seed: u64,
) -> Result<(), String> {
    use mgpoison::verify::{sample_and_check, verify_attack};
    let p = res.poisoned.as_ref().ok_or("no poisoned dataset")?;
    if p.shape() != d.shape() || p.len() != d.len() {
        return Err("poisoned dataset changed shape".into());
    }
    let mut cost = 0.0;
    for ((_, _, a), (_, _, b)) in d.records().zip(p.records()) {
        if (a.state, a.a1, a.a2) != (b.state, b.a1, b.a2) {
            return Err("poisoned dataset changed a non-reward field".into());
        }
        if b.reward.abs() > cfg.reward_bound {
            return Err(format!("reward {} outside [-b, b]", b.reward));
        }
        cost += (a.reward - b.reward).abs();
    }
    if (cost - res.cost).abs() > 1e-7 {
        return Err(format!(
            "reported cost {} but deltas sum to {cost}",
            res.cost
        ));
    }
    let rep = verify_attack(p, cfg);
    if !rep.un_ok {
        return Err(format!("margin check failed: {:?}", rep.failures));
    }
    if trials > 0 {
        let s = sample_and_check(p, cfg, trials, seed).map_err(|e| e.to_string())?;
        if !s.brute_force_ok {
            return Err(format!(
                "sampling check failed: {:?}",
                &s.failures[..s.failures.len().min(3)]
            ));
        }
    }
    Ok(())
}

/// Compares the LP's Q bounds with the primal recursion on the poisoned
/// dataset: the LP bounds must be conservative everywhere, and equal (within
/// `tol`) on both cells of every margin constraint that is active after
/// recomputation. Returns the number of active constraints.
pub fn check_lp_duality(
    cfg: &mgpoison::attack::AttackConfig,
    res: &mgpoison::attack::AttackResult,
    tol: f64,
) -> Result<usize, String> {
    use mgpoison::dataset::mle_estimate;
    use mgpoison::game::Cell;
    use mgpoison::tom::q_bounds_at_policy;
    use mgpoison::verify::{margin_slacks, Deviation};
    let p = res.poisoned.as_ref().ok_or("no poisoned dataset")?;
    let iv = q_bounds_at_policy(&mle_estimate(p), &cfg.radii, &cfg.target);
    let lp: std::collections::BTreeMap<Cell, (f64, f64)> = res
        .lp_bounds
        .iter()
        .map(|b| (b.cell, (b.q_lo, b.q_hi)))
        .collect();
    for (cell, &(lo, hi)) in &lp {
        if lo > iv.q_lo.get(*cell) + tol || hi < iv.q_hi.get(*cell) - tol {
            return Err(format!("LP bound at {cell} is not conservative"));
        }
    }
    let mut active = 0;
    for m in margin_slacks(&iv, &cfg.target, cfg.iota) {
        if m.slack > cfg.margin_pad + 1e-7 {
            continue;
        }
        active += 1;
        let (t1, t2) = cfg.target.get(m.h, m.s);
        let (lo_cell, hi_cell) = match m.deviation {
            Deviation::Player1(a1) => (Cell::new(m.h, m.s, t1, t2), Cell::new(m.h, m.s, a1, t2)),
            Deviation::Player2(a2) => (Cell::new(m.h, m.s, t1, a2), Cell::new(m.h, m.s, t1, t2)),
        };
        let lo = lp.get(&lo_cell).ok_or("missing LP cell")?.0;
        let hi = lp.get(&hi_cell).ok_or("missing LP cell")?.1;
        if (lo - iv.q_lo.get(lo_cell)).abs() > tol || (hi - iv.q_hi.get(hi_cell)).abs() > tol {
            return Err(format!(
                "active constraint at {lo_cell}/{hi_cell}: LP ({lo}, {hi}) vs primal ({}, {})",
                iv.q_lo.get(lo_cell),
                iv.q_hi.get(hi_cell)
            ));
        }
    }
    Ok(active)
}

/// Radii with `rho_r` uniform in `[0, max_r]` and `rho_p` in `[0, max_p]`.
pub fn random_radii(
    rng: &mut Rng,
    shape: GameShape,
    max_r: f64,
    max_p: f64,
) -> mgpoison::tom::Radii {
    use mgpoison::game::CellTable;
    mgpoison::tom::Radii {
        rho_r: CellTable::from_fn(shape, |_| uniform(rng, 0.0, max_r)),
        rho_p: CellTable::from_fn(shape, |_| uniform(rng, 0.0, max_p)),
        kind: mgpoison::tom::RadiusKind::Explicit,
    }
}

/// Direct LP over the transition row: simplex, total L1 budget and the
/// per-coordinate box.
pub fn l1_extreme_lp(
    p_hat: &[f64],
    rho: f64,
    values: &[f64],
    dir: mgpoison::tom::Direction,
) -> f64 {
    use mgpoison::lp::{solve, LinExpr, LpModel, Relation, Sense, SolverOptions};
    let mut m = LpModel::new();
    let mut total = LinExpr::new();
    let mut budget = LinExpr::new();
    let mut obj = LinExpr::new();
    for (j, (&p, &v)) in p_hat.iter().zip(values).enumerate() {
        let x = m.add_var(format!("p{j}"), (p - rho).max(0.0), (p + rho).min(1.0));
        let d = m.add_abs_penalty(x, p);
        total.add_term(x, 1.0);
        budget.add_term(d, 1.0);
        obj.add_term(x, v);
    }
    m.add_constraint("simplex", total, Relation::Eq, 1.0);
    m.add_constraint("budget", budget, Relation::Le, rho);
    m.set_objective(
        match dir {
            mgpoison::tom::Direction::Min => Sense::Minimize,
            mgpoison::tom::Direction::Max => Sense::Maximize,
        },
        obj,
    );
    let sol = solve(&m, &SolverOptions::default()).unwrap();
    assert!(sol.is_optimal());
    sol.objective
}
