use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use mgpoison::attack::{
    build_attack_lp, dse_attack, dse_attack_separate, feasibility_check, feasible_attack,
    optimal_attack, AttackConfig, AttackError, AttackResult,
};
use mgpoison::dataset::{gen_matching_penny, gen_rps, mle_estimate, Dataset, DatasetError};
use mgpoison::experiments::{run_penny, run_rps, ExperimentError, PennyConfig, ATTACKS};
use mgpoison::game::{GameError, GameShape, JointPolicy};
use mgpoison::lp::{LpError, LpStatus, SolverOptions};
use mgpoison::tom::{radii_from_mode, Radii, RadiusMode};
use mgpoison::verify::verify_full;

const EXIT_INFEASIBLE: u8 = 2;
const EXIT_VERIFY: u8 = 3;
const EXIT_INPUT: u8 = 4;
const EXIT_NUMERICAL: u8 = 5;

#[derive(Parser)]
#[command(
    name = "mgpoison",
    version,
    about = "Reward poisoning attacks on offline zero-sum Markov game datasets"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset.
    Gen {
        #[arg(value_enum)]
        which: GenKind,
        #[arg(short, long)]
        output: PathBuf,
        /// Samples per action profile (penny only).
        #[arg(long, default_value_t = 10)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Poison a dataset so the target becomes the unique equilibrium.
    Attack {
        #[arg(value_enum)]
        method: Method,
        #[command(flatten)]
        common: Common,
        /// Poisoned dataset output.
        #[arg(short, long)]
        output: PathBuf,
        /// Attack result JSON output (default: standard output).
        #[arg(long)]
        report: Option<PathBuf>,
        /// Write the attack LP in CPLEX LP format (optimal only).
        #[arg(long)]
        dump_lp: Option<PathBuf>,
        /// DSE only: poison separate reward copies for the two players,
        /// written next to the output with `.p1`/`.p2` suffixes.
        #[arg(long)]
        separate: bool,
    },
    /// Check that a poisoned dataset installs the target.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Uniform Q samples for the brute-force check.
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Report JSON output (default: standard output).
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Report whether a successful attack is guaranteed to exist.
    CheckFeasibility {
        #[command(flatten)]
        common: Common,
    },
    /// Run a reproducible experiment and write its reports.
    Experiment {
        #[arg(value_enum)]
        which: GenKind,
        #[arg(long, default_value = "results")]
        out_dir: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = vec![1usize, 10, 100])]
        ns: Vec<usize>,
        #[arg(long, default_value_t = 100)]
        reps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.01)]
        iota: f64,
        /// Reward bound of the optimal and DSE attacks.
        #[arg(long, default_value_t = 10.0)]
        b: f64,
        /// Reward bound of the feasible attack.
        #[arg(long, default_value_t = 1.0)]
        feasible_b: f64,
        #[arg(long)]
        jobs: Option<usize>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum GenKind {
    Rps,
    Penny,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Method {
    Optimal,
    Feasible,
    Dse,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum RadiusKindArg {
    Mle,
    Bonus,
    Uniform,
}

#[derive(Args)]
struct Common {
    #[arg(short, long)]
    dataset: PathBuf,
    /// Target as `h:a1,a2[;h:a1,a2...]`, 1-based, single-state games only.
    #[arg(
        long,
        conflicts_with = "target_file",
        required_unless_present = "target_file"
    )]
    target: Option<String>,
    /// JSON target: per period, per state, a 1-based `[a1, a2]` pair.
    #[arg(long)]
    target_file: Option<PathBuf>,
    #[arg(long, default_value_t = 0.01)]
    iota: f64,
    /// Reward bound (default: the dataset's bound).
    #[arg(long)]
    b: Option<f64>,
    #[arg(long, value_enum, default_value = "mle")]
    radius_mode: RadiusKindArg,
    /// Bonus constant c of the reward radius c / sqrt(N).
    #[arg(long, default_value_t = 0.0)]
    bonus_c: f64,
    #[arg(long, default_value_t = 0.0)]
    rho_r: f64,
    #[arg(long, default_value_t = 0.0)]
    rho_p: f64,
    /// Simplex feasibility tolerance.
    #[arg(long, env = "MGPOISON_FEAS_TOL", default_value_t = 1e-9)]
    feas_tol: f64,
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn input(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_INPUT,
            message: message.into(),
        }
    }
}

impl From<DatasetError> for Failure {
    fn from(e: DatasetError) -> Self {
        Self::input(e.to_string())
    }
}

impl From<GameError> for Failure {
    fn from(e: GameError) -> Self {
        match e {
            GameError::Lp(e) => e.into(),
            e => Self::input(e.to_string()),
        }
    }
}

impl From<LpError> for Failure {
    fn from(e: LpError) -> Self {
        Self {
            code: EXIT_NUMERICAL,
            message: e.to_string(),
        }
    }
}

impl From<AttackError> for Failure {
    fn from(e: AttackError) -> Self {
        match e {
            AttackError::Lp(e) => e.into(),
            AttackError::Game(e) => e.into(),
            e => Self::input(e.to_string()),
        }
    }
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Attack(e) => e.into(),
            e => Self::input(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self::input(e.to_string())
    }
}

/// Parses the inline target syntax into zero-based actions.
fn parse_target(text: &str, shape: &GameShape) -> Result<JointPolicy, Failure> {
    if shape.num_states != 1 {
        return Err(Failure::input(
            "--target: inline targets need a single-state game; use --target-file",
        ));
    }
    let mut actions: Vec<Option<(usize, usize)>> = vec![None; shape.horizon];
    for part in text.split(';').map(str::trim).filter(|p| !p.is_empty()) {
        let bad = || Failure::input(format!("--target: cannot parse `{part}`, expected h:a1,a2"));
        let (h, pair) = part.split_once(':').ok_or_else(bad)?;
        let (a1, a2) = pair.split_once(',').ok_or_else(bad)?;
        let num = |s: &str| s.trim().parse::<usize>().map_err(|_| bad());
        let (h, a1, a2) = (num(h)?, num(a1)?, num(a2)?);
        if h == 0 || h > shape.horizon {
            return Err(Failure::input(format!(
                "--target: period {h} outside 1..={}",
                shape.horizon
            )));
        }
        let pair = one_based_pair("--target", a1, a2, shape)?;
        if actions[h - 1].replace(pair).is_some() {
            return Err(Failure::input(format!("--target: period {h} given twice")));
        }
    }
    let actions: Option<Vec<_>> = actions.into_iter().collect();
    let actions =
        actions.ok_or_else(|| Failure::input("--target: every period needs an action pair"))?;
    Ok(JointPolicy::new(shape, actions)?)
}

fn one_based_pair(
    flag: &str,
    a1: usize,
    a2: usize,
    shape: &GameShape,
) -> Result<(usize, usize), Failure> {
    if a1 == 0 || a1 > shape.num_actions_1 {
        return Err(Failure::input(format!(
            "{flag}: player 1 action {a1} outside 1..={}",
            shape.num_actions_1
        )));
    }
    if a2 == 0 || a2 > shape.num_actions_2 {
        return Err(Failure::input(format!(
            "{flag}: player 2 action {a2} outside 1..={}",
            shape.num_actions_2
        )));
    }
    Ok((a1 - 1, a2 - 1))
}

fn read_target_file(path: &Path, shape: &GameShape) -> Result<JointPolicy, Failure> {
    let text = fs::read_to_string(path)?;
    let table: Vec<Vec<[usize; 2]>> = serde_json::from_str(&text)
        .map_err(|e| Failure::input(format!("--target-file {}: {e}", path.display())))?;
    if table.len() != shape.horizon || table.iter().any(|row| row.len() != shape.num_states) {
        return Err(Failure::input(format!(
            "--target-file: expected {} periods of {} states",
            shape.horizon, shape.num_states
        )));
    }
    let mut actions = Vec::new();
    for row in &table {
        for &[a1, a2] in row {
            actions.push(one_based_pair("--target-file", a1, a2, shape)?);
        }
    }
    Ok(JointPolicy::new(shape, actions)?)
}

impl Common {
    fn load(&self) -> Result<(Dataset, AttackConfig), Failure> {
        let d = Dataset::load(&self.dataset)
            .map_err(|e| Failure::input(format!("{}: {e}", self.dataset.display())))?;
        let shape = d.shape();
        let target = match (&self.target, &self.target_file) {
            (Some(t), _) => parse_target(t, &shape)?,
            (None, Some(p)) => read_target_file(p, &shape)?,
            (None, None) => return Err(Failure::input("--target or --target-file is required")),
        };
        let b = self.b.unwrap_or(d.reward_bound());
        let est = mle_estimate(&d);
        let radii = match self.radius_mode {
            RadiusKindArg::Mle => radii_from_mode(&est, &RadiusMode::MleSingleton, b),
            RadiusKindArg::Bonus => {
                radii_from_mode(&est, &RadiusMode::Bonus { c: self.bonus_c }, b)
            }
            RadiusKindArg::Uniform => Radii::uniform(shape, self.rho_r, self.rho_p),
        };
        let mut cfg = AttackConfig::new(target, self.iota, b, radii)?;
        cfg.solver = SolverOptions {
            feas_tol: self.feas_tol,
            ..SolverOptions::default()
        };
        Ok((d, cfg))
    }
}

fn same_file(a: &Path, b: &Path) -> bool {
    match (fs::canonicalize(a), fs::canonicalize(b)) {
        (Ok(x), Ok(y)) => x == y,
        _ => false,
    }
}

fn emit(json: &str, path: Option<&Path>) -> Result<(), Failure> {
    match path {
        Some(p) => fs::write(p, format!("{json}\n"))?,
        None => {
            let _ = writeln!(io::stdout(), "{json}");
        }
    }
    Ok(())
}

fn suffixed(path: &Path, tag: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}.{tag}.{}", ext.to_string_lossy()),
        None => format!("{stem}.{tag}"),
    };
    path.with_file_name(name)
}

fn attack_outcome(res: &AttackResult) -> Result<(), Failure> {
    match res.status {
        LpStatus::Optimal => Ok(()),
        status => Err(Failure {
            code: EXIT_INFEASIBLE,
            message: format!("attack LP is {status}; no poisoned dataset written"),
        }),
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Gen {
            which,
            output,
            n,
            seed,
        } => {
            let d = match which {
                GenKind::Rps => gen_rps(),
                GenKind::Penny if n == 0 => return Err(Failure::input("--n must be positive")),
                GenKind::Penny => gen_matching_penny(n, seed),
            };
            d.save(&output)?;
        }
        Command::Attack {
            method,
            common,
            output,
            report,
            dump_lp,
            separate,
        } => {
            if same_file(&common.dataset, &output) {
                return Err(Failure::input(
                    "-o: refusing to overwrite the input dataset",
                ));
            }
            let (d, cfg) = common.load()?;
            if let Some(path) = &dump_lp {
                fs::write(path, build_attack_lp(&d, &cfg)?.model.to_lp_string())?;
            }
            match method {
                Method::Dse if separate => {
                    let res = dse_attack_separate(&d, &cfg)?;
                    let json = serde_json::to_string_pretty(&res).expect("result serializes");
                    emit(&json, report.as_deref())?;
                    attack_outcome(&res.player1)?;
                    attack_outcome(&res.player2)?;
                    for (tag, part) in [("p1", &res.player1), ("p2", &res.player2)] {
                        let path = suffixed(&output, tag);
                        if same_file(&common.dataset, &path) {
                            return Err(Failure::input(
                                "-o: refusing to overwrite the input dataset",
                            ));
                        }
                        part.poisoned
                            .as_ref()
                            .expect("optimal result has data")
                            .save(&path)?;
                    }
                }
                _ => {
                    let res = match method {
                        Method::Optimal => optimal_attack(&d, &cfg)?,
                        Method::Feasible => feasible_attack(&d, &cfg)?,
                        Method::Dse => dse_attack(&d, &cfg)?,
                    };
                    emit(&res.to_json(), report.as_deref())?;
                    attack_outcome(&res)?;
                    res.poisoned
                        .as_ref()
                        .expect("optimal result has data")
                        .save(&output)?;
                }
            }
        }
        Command::Verify {
            common,
            trials,
            seed,
            output,
        } => {
            let (d, cfg) = common.load()?;
            let rep = verify_full(&d, &cfg, trials, seed)?;
            emit(&rep.to_json(), output.as_deref())?;
            if !rep.passed() {
                return Err(Failure {
                    code: EXIT_VERIFY,
                    message: format!("verification failed (min margin {:e})", rep.min_margin),
                });
            }
        }
        Command::CheckFeasibility { common } => {
            let (d, cfg) = common.load()?;
            let rep = feasibility_check(&mle_estimate(&d), &cfg);
            emit(
                &serde_json::to_string_pretty(&rep).expect("report serializes"),
                None,
            )?;
            if !rep.guaranteed {
                return Err(Failure {
                    code: EXIT_INFEASIBLE,
                    message: "success is not guaranteed by the sufficient condition".into(),
                });
            }
        }
        Command::Experiment {
            which,
            out_dir,
            ns,
            reps,
            seed,
            iota,
            b,
            feasible_b,
            jobs,
        } => match which {
            GenKind::Rps => {
                let rep = run_rps(iota)?;
                rep.write(&out_dir)?;
                let _ = writeln!(
                    io::stdout(),
                    "optimal cost {:.6}  feasible cost {:.6}",
                    rep.optimal.cost,
                    rep.feasible.cost
                );
                if !rep.verified() {
                    return Err(Failure {
                        code: EXIT_VERIFY,
                        message: "an rps attack failed verification".into(),
                    });
                }
            }
            GenKind::Penny => {
                let box_n = ns.iter().copied().max().unwrap_or(0);
                let cfg = PennyConfig {
                    ns,
                    reps,
                    seed,
                    iota,
                    reward_bound: b,
                    feasible_bound: feasible_b,
                    jobs,
                    box_n,
                };
                let rep = run_penny(&cfg)?;
                rep.write(&out_dir)?;
                for attack in ATTACKS {
                    let cells: Vec<String> = cfg
                        .ns
                        .iter()
                        .map(|&n| {
                            let s = rep.table.get(attack, n).expect("table has every cell");
                            format!("n={n}: {:.3} ± {:.3} ({} runs)", s.mean, s.std, s.count)
                        })
                        .collect();
                    let _ = writeln!(io::stdout(), "{attack:<11} {}", cells.join("  "));
                }
            }
        },
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // usage errors share the input-error code instead of clap's 2
            return if e.use_stderr() {
                ExitCode::from(EXIT_INPUT)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("mgpoison: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
