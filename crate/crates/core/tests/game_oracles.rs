mod common;

use common::{random_game, random_policy, random_shape, rng, strict_q, uniform};
use mgpoison::game::{
    enumerate_pure_mpe, iota_strict_margin, minimax_solve, q_from_model, q_on_policy,
    un_membership, Cell, CellTable, GameShape, JointPolicy, MarkovGame, Matrix, QFunction,
};
use proptest::prelude::*;
use rand::Rng as _;

fn random_matrix(r: &mut mgpoison::rng::Rng, rows: usize, cols: usize) -> Matrix {
    let data = (0..rows * cols).map(|_| uniform(r, -1.0, 1.0)).collect();
    Matrix::new(rows, cols, data)
}

#[test]
fn minimax_duality_on_random_matrices() {
    let mut r = rng(21);
    for case in 0..200 {
        let (m, n) = (r.gen_range(1..=5), r.gen_range(1..=5));
        let q = random_matrix(&mut r, m, n);
        let sol = minimax_solve(&q).unwrap();
        assert!((sol.maximin - sol.minimax).abs() <= 1e-7, "case {case}");
        assert!(sol.maximin <= sol.minimax + 1e-9, "case {case}");
        // the returned profile certifies the value from both sides
        let p = &sol.profile;
        let worst_col = (0..n)
            .map(|j| (0..m).map(|i| p.p1[i] * q.get(i, j)).sum::<f64>())
            .fold(f64::INFINITY, f64::min);
        let best_row = (0..m)
            .map(|i| (0..n).map(|j| q.get(i, j) * p.p2[j]).sum::<f64>())
            .fold(f64::NEG_INFINITY, f64::max);
        assert!((worst_col - sol.value).abs() <= 1e-7, "case {case}");
        assert!((best_row - sol.value).abs() <= 1e-7, "case {case}");
    }
}

#[test]
fn symmetric_games_have_uniform_solutions() {
    let pennies = Matrix::from_rows(&[&[1.0, -1.0], &[-1.0, 1.0]]);
    let sol = minimax_solve(&pennies).unwrap();
    assert!(sol.value.abs() <= 1e-9);
    for x in sol.profile.p1.iter().chain(&sol.profile.p2) {
        assert!((x - 0.5).abs() <= 1e-9);
    }
    let rps = Matrix::from_rows(&[&[0.0, -1.0, 1.0], &[1.0, 0.0, -1.0], &[-1.0, 1.0, 0.0]]);
    let sol = minimax_solve(&rps).unwrap();
    assert!(sol.value.abs() <= 1e-9);
    for x in sol.profile.p1.iter().chain(&sol.profile.p2) {
        assert!((x - 1.0 / 3.0).abs() <= 1e-9);
    }
}

fn nonempty_subsets(n: usize) -> Vec<Vec<usize>> {
    (1..1u32 << n)
        .map(|mask| (0..n).filter(|&i| mask & (1 << i) != 0).collect())
        .collect()
}

/// Solves `[A 1; 1ᵀ 0] [x; -v] = [0; 1]`-style indifference systems by
/// Gaussian elimination; `None` when singular.
fn solve_linear(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))?;
        if a[p][c].abs() < 1e-12 {
            return None;
        }
        a.swap(c, p);
        b.swap(c, p);
        for i in 0..n {
            if i != c {
                let f = a[i][c] / a[c][c];
                for k in c..n {
                    a[i][k] -= f * a[c][k];
                }
                b[i] -= f * b[c];
            }
        }
    }
    Some((0..n).map(|i| b[i] / a[i][i]).collect())
}

/// Every equilibrium found by equal-size support enumeration, as
/// `(p1, p2, value)`.
fn support_enumeration(q: &Matrix) -> Vec<(Vec<f64>, Vec<f64>, f64)> {
    let (m, n) = (q.rows(), q.cols());
    let mut out = Vec::new();
    for rows in nonempty_subsets(m) {
        for cols in nonempty_subsets(n) {
            if rows.len() != cols.len() {
                continue;
            }
            let k = rows.len();
            // player 1 mixes over `rows` so every column in `cols` pays v
            let mut a = vec![vec![0.0; k + 1]; k + 1];
            let mut b = vec![0.0; k + 1];
            for (eq, &j) in cols.iter().enumerate() {
                for (var, &i) in rows.iter().enumerate() {
                    a[eq][var] = q.get(i, j);
                }
                a[eq][k] = -1.0;
            }
            for var in 0..k {
                a[k][var] = 1.0;
            }
            b[k] = 1.0;
            let Some(x) = solve_linear(a, b) else {
                continue;
            };
            let mut a2 = vec![vec![0.0; k + 1]; k + 1];
            let mut b2 = vec![0.0; k + 1];
            for (eq, &i) in rows.iter().enumerate() {
                for (var, &j) in cols.iter().enumerate() {
                    a2[eq][var] = q.get(i, j);
                }
                a2[eq][k] = -1.0;
            }
            for var in 0..k {
                a2[k][var] = 1.0;
            }
            b2[k] = 1.0;
            let Some(y) = solve_linear(a2, b2) else {
                continue;
            };
            if x[..k].iter().chain(&y[..k]).any(|&p| p < -1e-12) {
                continue;
            }
            let mut p1 = vec![0.0; m];
            let mut p2 = vec![0.0; n];
            for (var, &i) in rows.iter().enumerate() {
                p1[i] = x[var];
            }
            for (var, &j) in cols.iter().enumerate() {
                p2[j] = y[var];
            }
            let v = q.expected(&p1, &p2);
            let rows_ok =
                (0..m).all(|i| (0..n).map(|j| q.get(i, j) * p2[j]).sum::<f64>() <= v + 1e-12);
            let cols_ok =
                (0..n).all(|j| (0..m).map(|i| p1[i] * q.get(i, j)).sum::<f64>() >= v - 1e-12);
            if rows_ok && cols_ok {
                out.push((p1, p2, v));
            }
        }
    }
    out
}

#[test]
fn poisoned_rps_has_pure_saddle_at_rock() {
    let q = Matrix::from_rows(&[&[0.0, 0.01, 1.0], &[-0.01, 0.0, 0.0], &[-1.0, 0.0, 0.0]]);
    let eqs = support_enumeration(&q);
    assert!(!eqs.is_empty());
    for (_, _, v) in &eqs {
        assert!(v.abs() <= 1e-12, "{v}");
    }
    assert!(eqs.iter().any(|(p1, p2, _)| p1[0] == 1.0 && p2[0] == 1.0));

    let sol = minimax_solve(&q).unwrap();
    assert!(sol.value.abs() <= 1e-9);
    assert_eq!(sol.profile.as_pure(1e-9), Some((0, 0)));
    assert!((iota_strict_margin(&q, (0, 0)) - 0.01).abs() <= 1e-15);
}

#[test]
fn support_enumeration_agrees_with_lp_value() {
    let mut r = rng(22);
    for _ in 0..50 {
        let k = r.gen_range(2..=3);
        let q = random_matrix(&mut r, k, k);
        let eqs = support_enumeration(&q);
        let sol = minimax_solve(&q).unwrap();
        assert!(!eqs.is_empty());
        for (_, _, v) in eqs {
            assert!((v - sol.value).abs() <= 1e-7);
        }
    }
}

#[test]
fn margins_of_reference_matrices() {
    let rps = Matrix::from_rows(&[&[0.0, -1.0, 1.0], &[1.0, 0.0, -1.0], &[-1.0, 1.0, 0.0]]);
    assert_eq!(iota_strict_margin(&rps, (0, 0)), -1.0);
    let single = Matrix::from_rows(&[&[0.3]]);
    assert_eq!(iota_strict_margin(&single, (0, 0)), f64::INFINITY);
}

/// Value of a 2x2 zero-sum game in closed form.
fn value_2x2(q: &Matrix) -> f64 {
    let (a, b, c, d) = (q.get(0, 0), q.get(0, 1), q.get(1, 0), q.get(1, 1));
    let lower = a.min(b).max(c.min(d));
    let upper = a.max(c).min(b.max(d));
    if (lower - upper).abs() <= 1e-15 {
        return lower;
    }
    // no saddle point: both players mix
    (a * d - b * c) / (a + d - b - c)
}

fn backward_induction(game: &MarkovGame) -> QFunction {
    let shape = game.shape();
    let mut q = QFunction::filled(shape, 0.0);
    for h in (0..shape.horizon).rev() {
        let next_values: Vec<f64> = if h + 1 < shape.horizon {
            (0..shape.num_states)
                .map(|s| value_2x2(&q.stage(h + 1, s)))
                .collect()
        } else {
            vec![0.0; shape.num_states]
        };
        for s in 0..shape.num_states {
            for a1 in 0..2 {
                for a2 in 0..2 {
                    let cell = Cell::new(h, s, a1, a2);
                    let cont: f64 = game
                        .transitions()
                        .get(cell)
                        .iter()
                        .zip(&next_values)
                        .map(|(p, v)| p * v)
                        .sum();
                    q.set(cell, game.rewards().get(cell) + cont);
                }
            }
        }
    }
    q
}

#[test]
fn q_from_model_matches_closed_form_backward_induction() {
    let mut r = rng(23);
    let shape = GameShape::new(2, 2, 2, 2).unwrap();
    for _ in 0..100 {
        let game = random_game(&mut r, shape, 1.0);
        let got = q_from_model(&game).unwrap();
        let want = backward_induction(&game);
        assert!(got.max_abs_diff(&want) <= 1e-7);
    }
}

#[test]
fn trivial_q_identities() {
    let mut r = rng(24);
    let one = GameShape::new(2, 3, 2, 1).unwrap();
    let game = random_game(&mut r, one, 1.0);
    assert_eq!(q_from_model(&game).unwrap(), *game.rewards());
    let pi = random_policy(&mut r, &one);
    assert_eq!(q_on_policy(&game, &pi), *game.rewards());

    let shape = GameShape::new(3, 3, 3, 3).unwrap();
    let base = random_game(&mut r, shape, 1.0);
    let zero = MarkovGame::new(
        CellTable::filled(shape, 0.0),
        base.transitions().clone(),
        base.initial().to_vec(),
        1.0,
    )
    .unwrap();
    assert_eq!(
        q_from_model(&zero)
            .unwrap()
            .max_abs_diff(&QFunction::filled(shape, 0.0)),
        0.0
    );

    // zero on-policy rewards give zero on-policy Q
    let pi = random_policy(&mut r, &shape);
    let rewards = CellTable::from_fn(shape, |c| {
        if pi.is_target(c) {
            0.0
        } else {
            *base.rewards().get(c)
        }
    });
    let g = MarkovGame::new(
        rewards,
        base.transitions().clone(),
        base.initial().to_vec(),
        1.0,
    )
    .unwrap();
    let q = q_on_policy(&g, &pi);
    for (h, s) in shape.stages() {
        let (a1, a2) = pi.get(h, s);
        assert_eq!(q.at(h, s, a1, a2), 0.0);
    }
}

#[test]
fn q_on_policy_equals_q_from_model_at_a_strict_mpe() {
    let mut r = rng(25);
    let mut checked = 0;
    while checked < 50 {
        let shape = random_shape(&mut r);
        // additive rewards plus small noise make pure saddle points typical
        let rows: Vec<f64> = (0..shape.num_actions_1)
            .map(|_| uniform(&mut r, -0.5, 0.5))
            .collect();
        let cols: Vec<f64> = (0..shape.num_actions_2)
            .map(|_| uniform(&mut r, -0.5, 0.5))
            .collect();
        let noise = uniform(&mut r, 0.0, 0.05);
        let base = random_game(&mut r, shape, 1.0);
        let rewards = CellTable::from_fn(shape, |c| {
            rows[c.a1] + cols[c.a2] + uniform(&mut r, -noise, noise)
        });
        let game = MarkovGame::new(
            rewards,
            base.transitions().clone(),
            base.initial().to_vec(),
            2.0,
        )
        .unwrap();
        let q = q_from_model(&game).unwrap();
        let mpe = enumerate_pure_mpe(&q, 1e-9).unwrap();
        if mpe.len() != 1 || !un_membership(&q, &mpe[0], 0.0) {
            continue;
        }
        let on = q_on_policy(&game, &mpe[0]);
        assert!(on.max_abs_diff(&q) <= 1e-7);
        checked += 1;
    }
}

#[test]
fn enumeration_edge_cases() {
    let shape = GameShape::new(2, 2, 2, 2).unwrap();
    let all = enumerate_pure_mpe(&QFunction::filled(shape, 0.0), 1e-9).unwrap();
    assert_eq!(all.len(), 4usize.pow(4));
    let pi = JointPolicy::constant(&shape, 1, 0).unwrap();
    assert!(!un_membership(&QFunction::filled(shape, 0.0), &pi, 0.0));
    assert!(!un_membership(&QFunction::filled(shape, 0.0), &pi, 0.1));

    let nf = GameShape::normal_form(2, 2).unwrap();
    let q = QFunction::from_vec(nf, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
    assert!(enumerate_pure_mpe(&q, 1e-9).unwrap().is_empty());

    let big = GameShape::new(3, 3, 3, 3).unwrap();
    assert!(enumerate_pure_mpe(&QFunction::filled(big, 0.0), 1e-9).is_err());
}

#[test]
fn strict_instances_have_a_unique_mpe() {
    let mut r = rng(26);
    for _ in 0..200 {
        let shape = random_shape(&mut r);
        let pi = random_policy(&mut r, &shape);
        let iota = uniform(&mut r, 0.001, 0.5);
        let mut q = strict_q(&mut r, shape, &pi, iota);
        assert!(un_membership(&q, &pi, iota));
        assert_eq!(enumerate_pure_mpe(&q, 1e-9).unwrap(), vec![pi.clone()]);
        for (h, s) in shape.stages() {
            let sol = minimax_solve(&q.stage(h, s)).unwrap();
            let (t1, t2) = pi.get(h, s);
            assert!((sol.value - q.at(h, s, t1, t2)).abs() <= 1e-7);
            assert_eq!(sol.profile.as_pure(1e-7), Some((t1, t2)));
        }
        // with one gap at 1.5 iota, pushing the target down by 2 iota breaks membership
        let (h, s) = (
            r.gen_range(0..shape.horizon),
            r.gen_range(0..shape.num_states),
        );
        let (t1, t2) = pi.get(h, s);
        let c = Cell::new(h, s, t1, t2);
        let v = *q.get(c);
        q.set(
            Cell::new(h, s, (t1 + 1) % shape.num_actions_1, t2),
            v - 1.5 * iota,
        );
        assert!(un_membership(&q, &pi, iota));
        q.set(c, v - 2.0 * iota);
        assert!(!un_membership(&q, &pi, iota));
    }
}

proptest! {
    #[test]
    fn membership_is_scale_invariant(seed in any::<u64>(), exp in -4i32..5, iota in 0.0f64..0.6) {
        let mut r = rng(seed);
        let shape = random_shape(&mut r);
        let pi = random_policy(&mut r, &shape);
        let q = strict_q(&mut r, shape, &pi, 0.3);
        let c = 2f64.powi(exp);
        prop_assert_eq!(un_membership(&q.scaled(c), &pi, c * iota), un_membership(&q, &pi, iota));
    }
}
