//! Experiment harness: the rock-paper-scissors example and the replicated
//! matching-penny cost comparison, with CSV and JSON reports.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::attack::{
    dse_attack, dse_attack_separate, feasible_attack, optimal_attack, AttackConfig, AttackError,
    AttackResult,
};
use crate::dataset::{gen_matching_penny, gen_rps, mle_estimate, Dataset};
use crate::game::{GameShape, JointPolicy};
use crate::rng::derive_seed;
use crate::verify::{verify_attack, verify_dominance, VerifyReport};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid experiment configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error("report output failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv output failed: {0}")]
    Csv(#[from] csv::Error),
    #[error("thread pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
}

/// Per-cell mean rewards of one stage as a dense table (rows: player 1).
fn mean_table(d: &Dataset) -> Vec<Vec<f64>> {
    let est = mle_estimate(d);
    let shape = d.shape();
    (0..shape.num_actions_1)
        .map(|a1| {
            (0..shape.num_actions_2)
                .map(|a2| est.r_hat.at(0, 0, a1, a2))
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct RpsReport {
    pub iota: f64,
    pub reward_bound: f64,
    pub original: Vec<Vec<f64>>,
    pub optimal: AttackResult,
    pub optimal_table: Vec<Vec<f64>>,
    pub optimal_verify: VerifyReport,
    pub feasible: AttackResult,
    pub feasible_table: Vec<Vec<f64>>,
    pub feasible_verify: VerifyReport,
}

impl RpsReport {
    pub fn verified(&self) -> bool {
        self.optimal_verify.un_ok && self.feasible_verify.un_ok
    }
}

/// Optimal and feasible attacks on the rock-paper-scissors dataset with
/// target (R, R) and b = 1.
pub fn run_rps(iota: f64) -> Result<RpsReport, ExperimentError> {
    let d = gen_rps();
    let shape = d.shape();
    let cfg = AttackConfig::mle(JointPolicy::constant(&shape, 0, 0)?, shape, iota, 1.0)?;
    let optimal = optimal_attack(&d, &cfg)?;
    let feasible = feasible_attack(&d, &cfg)?;
    let (Some(op), Some(fp)) = (optimal.poisoned.as_ref(), feasible.poisoned.as_ref()) else {
        return Err(ExperimentError::Config(format!(
            "attack did not succeed (status {})",
            optimal.status
        )));
    };
    Ok(RpsReport {
        iota,
        reward_bound: 1.0,
        original: mean_table(&d),
        optimal_table: mean_table(op),
        optimal_verify: verify_attack(op, &cfg),
        feasible_table: mean_table(fp),
        feasible_verify: verify_attack(fp, &cfg),
        optimal,
        feasible,
    })
}

impl From<crate::game::GameError> for ExperimentError {
    fn from(e: crate::game::GameError) -> Self {
        Self::Attack(e.into())
    }
}

pub const ATTACKS: [&str; 4] = ["optimal", "feasible", "dse", "dse_shared"];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PennyConfig {
    pub ns: Vec<usize>,
    pub reps: usize,
    pub seed: u64,
    pub iota: f64,
    /// Reward bound of the optimal and DSE attacks.
    pub reward_bound: f64,
    /// Reward bound of the closed-form feasible attack.
    pub feasible_bound: f64,
    /// Worker threads; `None` uses the global pool.
    #[serde(skip)]
    pub jobs: Option<usize>,
    /// The `n` whose designated replication feeds the box statistics.
    pub box_n: usize,
}

impl Default for PennyConfig {
    fn default() -> Self {
        Self {
            ns: vec![1, 10, 100],
            reps: 100,
            seed: 0,
            iota: 0.01,
            reward_bound: 10.0,
            feasible_bound: 1.0,
            jobs: None,
            box_n: 100,
        }
    }
}

impl PennyConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.ns.is_empty() || self.ns.contains(&0) {
            return Err(ExperimentError::Config(
                "ns must be nonempty and positive".into(),
            ));
        }
        if self.reps == 0 {
            return Err(ExperimentError::Config("reps must be at least 1".into()));
        }
        if self.jobs == Some(0) {
            return Err(ExperimentError::Config("jobs must be at least 1".into()));
        }
        Ok(())
    }

    pub fn replication_seed(&self, n: usize, rep: usize) -> u64 {
        derive_seed(self.seed, &[n as u64, rep as u64])
    }
}

/// One attack on one replication.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRecord {
    pub attack: String,
    pub n: usize,
    pub rep: usize,
    pub seed: u64,
    pub status: String,
    pub cost: Option<f64>,
    pub verified: bool,
    pub min_margin: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CostStat {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
    /// Runs that failed or did not verify.
    pub excluded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostTable {
    pub rows: BTreeMap<String, BTreeMap<usize, CostStat>>,
    pub config: PennyConfig,
    pub radii: String,
}

impl CostTable {
    pub fn get(&self, attack: &str, n: usize) -> Option<&CostStat> {
        self.rows.get(attack)?.get(&n)
    }

    pub fn from_runs(runs: &[RunRecord], config: &PennyConfig) -> Self {
        let mut rows = BTreeMap::new();
        for attack in ATTACKS {
            let mut per_n = BTreeMap::new();
            for &n in &config.ns {
                let sel: Vec<&RunRecord> = runs
                    .iter()
                    .filter(|r| r.attack == attack && r.n == n)
                    .collect();
                let costs: Vec<f64> = sel
                    .iter()
                    .filter(|r| r.verified)
                    .filter_map(|r| r.cost)
                    .collect();
                per_n.insert(
                    n,
                    CostStat {
                        mean: mean(&costs),
                        std: sample_std(&costs),
                        count: costs.len(),
                        excluded: sel.len() - costs.len(),
                    },
                );
            }
            rows.insert(attack.to_string(), per_n);
        }
        Self {
            rows,
            config: config.clone(),
            radii: "zero".into(),
        }
    }
}

fn mean(x: &[f64]) -> f64 {
    if x.is_empty() {
        return f64::NAN;
    }
    x.iter().sum::<f64>() / x.len() as f64
}

fn sample_std(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let m = mean(x);
    (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64).sqrt()
}

/// Box-plot summary of one sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoxSummary {
    pub lw: f64,
    pub lq: f64,
    pub med: f64,
    pub uq: f64,
    pub uw: f64,
}

/// Linear-interpolation quantile of sorted data (`(n - 1) p` rule).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty sample");
    let pos = (sorted.len() - 1) as f64 * p;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Quartiles plus whiskers at 1.5 IQR, clipped to the data range.
pub fn box_summary(values: &[f64]) -> BoxSummary {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let lq = quantile_sorted(&v, 0.25);
    let uq = quantile_sorted(&v, 0.75);
    let iqr = uq - lq;
    BoxSummary {
        lw: v[0].max(lq - 1.5 * iqr),
        lq,
        med: quantile_sorted(&v, 0.5),
        uq,
        uw: v[v.len() - 1].min(uq + 1.5 * iqr),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoxRow {
    pub cell: String,
    pub lw: f64,
    pub lq: f64,
    pub med: f64,
    pub uq: f64,
    pub uw: f64,
    pub phase: String,
}

const PENNY_LABELS: [&str; 2] = ["H", "T"];

/// Per joint action box statistics of single-stage rewards.
pub fn box_rows(d: &Dataset, phase: &str) -> Vec<BoxRow> {
    let shape = d.shape();
    let mut out = Vec::new();
    for cell in shape.cells() {
        let rewards = d.rewards_in(cell);
        if rewards.is_empty() {
            continue;
        }
        let b = box_summary(&rewards);
        let label = |a: usize| {
            PENNY_LABELS
                .get(a)
                .map(|s| s.to_string())
                .unwrap_or_else(|| (a + 1).to_string())
        };
        out.push(BoxRow {
            cell: format!("{}{}", label(cell.a1), label(cell.a2)),
            lw: b.lw,
            lq: b.lq,
            med: b.med,
            uq: b.uq,
            uw: b.uw,
            phase: phase.to_string(),
        });
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct PennyReport {
    pub table: CostTable,
    pub runs: Vec<RunRecord>,
    pub boxes: Vec<BoxRow>,
}

fn record(
    attack: &str,
    n: usize,
    rep: usize,
    seed: u64,
    outcome: Result<(AttackResult, VerifyReport), AttackError>,
) -> RunRecord {
    let mut r = RunRecord {
        attack: attack.into(),
        n,
        rep,
        seed,
        status: "error".into(),
        cost: None,
        verified: false,
        min_margin: None,
        error: None,
    };
    match outcome {
        Ok((res, rep)) => {
            r.status = res.status.to_string();
            if res.succeeded() {
                r.cost = Some(res.cost);
                r.verified = rep.un_ok;
                r.min_margin = Some(rep.min_margin);
            }
        }
        Err(e) => r.error = Some(e.to_string()),
    }
    r
}

/// Runs every attack on one replication; returns the records plus the
/// optimal attack's poisoned dataset.
fn run_replication(
    cfg: &PennyConfig,
    n: usize,
    rep: usize,
) -> (Vec<RunRecord>, Dataset, Option<Dataset>) {
    let seed = cfg.replication_seed(n, rep);
    let d = gen_matching_penny(n, seed);
    let shape: GameShape = d.shape();
    let pi = JointPolicy::constant(&shape, 0, 0).expect("penny target fits");
    let main = AttackConfig::mle(pi.clone(), shape, cfg.iota, cfg.reward_bound);
    let feas = AttackConfig::mle(pi, shape, cfg.iota, cfg.feasible_bound);

    let mut poisoned = None;
    let optimal = main.as_ref().map_err(clone_err).and_then(|c| {
        let res = optimal_attack(&d, c)?;
        let v = res.poisoned.as_ref().map(|p| verify_attack(p, c));
        poisoned = res.poisoned.clone();
        Ok((res, v.unwrap_or_else(empty_report)))
    });
    let feasible = feas.as_ref().map_err(clone_err).and_then(|c| {
        let res = feasible_attack(&d, c)?;
        let v = res.poisoned.as_ref().map(|p| verify_attack(p, c));
        Ok((res, v.unwrap_or_else(empty_report)))
    });
    let dse_sep = main.as_ref().map_err(clone_err).and_then(|c| {
        let res = dse_attack_separate(&d, c)?;
        let v1 = res
            .player1
            .poisoned
            .as_ref()
            .map(|p| verify_dominance(p, c, true, false));
        let v2 = res
            .player2
            .poisoned
            .as_ref()
            .map(|p| verify_dominance(p, c, false, true));
        let mut combined = res.player1.clone();
        combined.status = res.status;
        combined.cost = res.cost;
        combined.poisoned = res
            .player1
            .poisoned
            .clone()
            .filter(|_| res.player2.poisoned.is_some());
        let v = match (v1, v2) {
            (Some(a), Some(b)) => {
                let mut a = a;
                a.un_ok &= b.un_ok;
                a.min_margin = a.min_margin.min(b.min_margin);
                a.failures.extend(b.failures);
                a
            }
            _ => empty_report(),
        };
        Ok((combined, v))
    });
    let dse_shared = main.as_ref().map_err(clone_err).and_then(|c| {
        let res = dse_attack(&d, c)?;
        let v = res.poisoned.as_ref().map(|p| verify_attack(p, c));
        Ok((res, v.unwrap_or_else(empty_report)))
    });

    let records = vec![
        record("optimal", n, rep, seed, optimal),
        record("feasible", n, rep, seed, feasible),
        record("dse", n, rep, seed, dse_sep),
        record("dse_shared", n, rep, seed, dse_shared),
    ];
    (records, d, poisoned)
}

fn clone_err(e: &AttackError) -> AttackError {
    AttackError::Config(e.to_string())
}

fn empty_report() -> VerifyReport {
    VerifyReport {
        un_ok: false,
        min_margin: f64::NAN,
        brute_force_ok: false,
        sampled_trials: 0,
        failures: Vec::new(),
        sample_failures: Vec::new(),
    }
}

/// Replicated matching-penny comparison of the optimal, feasible and DSE
/// attacks with target (H, H). Attack failures are recorded, not fatal.
pub fn run_penny(cfg: &PennyConfig) -> Result<PennyReport, ExperimentError> {
    cfg.validate()?;
    let tasks: Vec<(usize, usize)> = cfg
        .ns
        .iter()
        .flat_map(|&n| (0..cfg.reps).map(move |rep| (n, rep)))
        .collect();
    let run = || -> Vec<_> {
        tasks
            .par_iter()
            .map(|&(n, rep)| run_replication(cfg, n, rep))
            .collect()
    };
    let results = match cfg.jobs {
        Some(j) => rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build()?
            .install(run),
        None => run(),
    };

    let mut runs = Vec::new();
    let mut boxes = Vec::new();
    for ((n, rep), (records, original, poisoned)) in tasks.iter().zip(results) {
        runs.extend(records);
        if *n == cfg.box_n && *rep == 0 {
            boxes.extend(box_rows(&original, "before"));
            if let Some(p) = poisoned {
                boxes.extend(box_rows(&p, "after"));
            }
        }
    }
    Ok(PennyReport {
        table: CostTable::from_runs(&runs, cfg),
        runs,
        boxes,
    })
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

impl PennyReport {
    /// Writes `runs.csv`, `box_stats.csv` and `summary.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), ExperimentError> {
        fs::create_dir_all(dir)?;
        write_csv(&dir.join("runs.csv"), &self.runs)?;
        write_csv(&dir.join("box_stats.csv"), &self.boxes)?;
        let json = serde_json::to_string_pretty(&self.table).expect("cost table serializes");
        fs::write(dir.join("summary.json"), json + "\n")?;
        Ok(())
    }
}

impl RpsReport {
    /// Writes `rps.json` and the poisoned datasets into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), ExperimentError> {
        fs::create_dir_all(dir)?;
        let json = serde_json::to_string_pretty(self).expect("rps report serializes");
        fs::write(dir.join("rps.json"), json + "\n")?;
        for (name, res) in [
            ("rps_optimal.jsonl", &self.optimal),
            ("rps_feasible.jsonl", &self.feasible),
        ] {
            if let Some(p) = &res.poisoned {
                p.save(dir.join(name))
                    .map_err(|e| ExperimentError::Attack(e.into()))?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles_interpolate() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&v, 0.25), 1.75);
        assert_eq!(quantile_sorted(&v, 0.5), 2.5);
        assert_eq!(quantile_sorted(&v, 1.0), 4.0);
    }

    #[test]
    fn whiskers_clip_to_data() {
        let b = box_summary(&[0.0, 1.0, 2.0, 3.0, 100.0]);
        assert_eq!((b.lq, b.med, b.uq), (1.0, 2.0, 3.0));
        assert_eq!(b.lw, 0.0);
        assert_eq!(b.uw, 6.0);
    }

    #[test]
    fn rps_runs() {
        let r = run_rps(0.01).unwrap();
        assert!(r.verified());
        assert!((r.optimal.cost - 2.02).abs() < 1e-6);
        assert_eq!(r.feasible.cost, 4.0);
    }

    #[test]
    fn small_penny_is_deterministic() {
        let cfg = PennyConfig {
            ns: vec![1, 3],
            reps: 3,
            box_n: 3,
            ..PennyConfig::default()
        };
        let a = run_penny(&cfg).unwrap();
        let b = run_penny(&PennyConfig {
            jobs: Some(2),
            ..cfg.clone()
        })
        .unwrap();
        assert_eq!(a.table.rows, b.table.rows);
        assert_eq!(a.runs, b.runs);
        assert_eq!(a.runs.len(), 2 * 3 * ATTACKS.len());
        assert_eq!(a.boxes.len(), 8);
    }
}
