//! Offline datasets of episodes, maximum-likelihood model estimates, the
//! experiment generators, and the JSON-Lines file format.
//!
//! File layout: a header line `{"shape":{...},"b":<bound>}` followed by one
//! line per episode, `{"steps":[[s,a1,a2,r],...]}`. Indices are zero-based and
//! rewards are written with 17 significant digits so they round-trip exactly.

use std::fmt::Write as _;
use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;

use rand::Rng;
use serde::Deserialize;
use thiserror::Error;

use crate::game::{Cell, CellTable, GameError, GameShape, MarkovGame};
use crate::rng;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("episode {episode}: {message}")]
    Validation { episode: usize, message: String },
    #[error(transparent)]
    Game(#[from] GameError),
}

/// One `(state, action1, action2, reward)` record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub state: usize,
    pub a1: usize,
    pub a2: usize,
    pub reward: f64,
}

impl Step {
    pub fn new(state: usize, a1: usize, a2: usize, reward: f64) -> Self {
        Self {
            state,
            a1,
            a2,
            reward,
        }
    }

    pub fn cell(&self, h: usize) -> Cell {
        Cell::new(h, self.state, self.a1, self.a2)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub steps: Vec<Step>,
}

impl Episode {
    pub fn new(steps: Vec<Step>) -> Self {
        Self { steps }
    }
}

/// `K` episodes of length `H` over a common shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    shape: GameShape,
    episodes: Vec<Episode>,
    reward_bound: f64,
}

impl Dataset {
    pub fn new(
        shape: GameShape,
        episodes: Vec<Episode>,
        reward_bound: f64,
    ) -> Result<Self, DatasetError> {
        shape.validate()?;
        if !(reward_bound > 0.0 && reward_bound.is_finite()) {
            return Err(DatasetError::Validation {
                episode: 0,
                message: format!("reward bound {reward_bound} must be positive and finite"),
            });
        }
        for (k, ep) in episodes.iter().enumerate() {
            validate_episode(&shape, k, ep)?;
        }
        Ok(Self {
            shape,
            episodes,
            reward_bound,
        })
    }

    pub fn shape(&self) -> GameShape {
        self.shape
    }

    pub fn episodes(&self) -> &[Episode] {
        &self.episodes
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn reward_bound(&self) -> f64 {
        self.reward_bound
    }

    /// A copy with every reward replaced by `f(episode, step, reward)`.
    pub fn with_rewards(&self, mut f: impl FnMut(usize, usize, f64) -> f64) -> Self {
        let episodes = self
            .episodes
            .iter()
            .enumerate()
            .map(|(k, ep)| Episode {
                steps: ep
                    .steps
                    .iter()
                    .enumerate()
                    .map(|(h, st)| Step {
                        reward: f(k, h, st.reward),
                        ..*st
                    })
                    .collect(),
            })
            .collect();
        Self {
            shape: self.shape,
            episodes,
            reward_bound: self.reward_bound,
        }
    }

    /// Every `(episode, step, record)` in order.
    pub fn records(&self) -> impl Iterator<Item = (usize, usize, &Step)> + '_ {
        self.episodes
            .iter()
            .enumerate()
            .flat_map(|(k, ep)| ep.steps.iter().enumerate().map(move |(h, st)| (k, h, st)))
    }

    /// Rewards of all samples landing in `cell`.
    pub fn rewards_in(&self, cell: Cell) -> Vec<f64> {
        self.records()
            .filter(|(_, h, st)| st.cell(*h) == cell)
            .map(|(_, _, st)| st.reward)
            .collect()
    }

    /// L1 distance between the reward sequences of two datasets that differ
    /// only in rewards.
    pub fn l1_reward_distance(&self, other: &Dataset) -> f64 {
        self.records()
            .zip(other.records())
            .map(|((_, _, a), (_, _, b))| (a.reward - b.reward).abs())
            .sum()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DatasetError> {
        let file = fs::File::create(path)?;
        let mut w = io::BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<(), DatasetError> {
        let s = self.shape;
        writeln!(
            w,
            "{{\"shape\":{{\"num_states\":{},\"num_actions_1\":{},\"num_actions_2\":{},\"horizon\":{}}},\"b\":{}}}",
            s.num_states,
            s.num_actions_1,
            s.num_actions_2,
            s.horizon,
            fmt_f64(self.reward_bound)
        )?;
        let mut line = String::new();
        for ep in &self.episodes {
            line.clear();
            line.push_str("{\"steps\":[");
            for (i, st) in ep.steps.iter().enumerate() {
                if i > 0 {
                    line.push(',');
                }
                let _ = write!(
                    line,
                    "[{},{},{},{}]",
                    st.state,
                    st.a1,
                    st.a2,
                    fmt_f64(st.reward)
                );
            }
            line.push_str("]}");
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DatasetError> {
        let file = fs::File::open(path)?;
        Self::read_from(BufReader::new(file))
    }

    pub fn read_from(r: impl BufRead) -> Result<Self, DatasetError> {
        #[derive(Deserialize)]
        struct Header {
            shape: GameShape,
            b: f64,
        }
        #[derive(Deserialize)]
        struct EpisodeLine {
            steps: Vec<(usize, usize, usize, f64)>,
        }

        let mut lines = r.lines().enumerate();
        let header: Header = loop {
            match lines.next() {
                None => {
                    return Err(DatasetError::Format {
                        line: 1,
                        message: "missing header line".into(),
                    })
                }
                Some((i, line)) => {
                    let line = line?;
                    if line.trim().is_empty() {
                        continue;
                    }
                    break serde_json::from_str(&line).map_err(|e| DatasetError::Format {
                        line: i + 1,
                        message: format!("bad header: {e}"),
                    })?;
                }
            }
        };
        header.shape.validate()?;
        let mut episodes = Vec::new();
        for (i, line) in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let k = episodes.len();
            let parsed: EpisodeLine =
                serde_json::from_str(&line).map_err(|e| DatasetError::Format {
                    line: i + 1,
                    message: format!("episode {k}: {e}"),
                })?;
            if parsed.steps.len() != header.shape.horizon {
                return Err(DatasetError::Format {
                    line: i + 1,
                    message: format!(
                        "episode {k} has {} steps, expected horizon {}",
                        parsed.steps.len(),
                        header.shape.horizon
                    ),
                });
            }
            episodes.push(Episode {
                steps: parsed
                    .steps
                    .into_iter()
                    .map(|(s, a1, a2, r)| Step::new(s, a1, a2, r))
                    .collect(),
            });
        }
        Dataset::new(header.shape, episodes, header.b)
    }
}

fn validate_episode(shape: &GameShape, k: usize, ep: &Episode) -> Result<(), DatasetError> {
    if ep.steps.len() != shape.horizon {
        return Err(DatasetError::Validation {
            episode: k,
            message: format!(
                "has {} steps, expected horizon {}",
                ep.steps.len(),
                shape.horizon
            ),
        });
    }
    for (h, st) in ep.steps.iter().enumerate() {
        if st.state >= shape.num_states {
            return Err(DatasetError::Validation {
                episode: k,
                message: format!("step {h}: state {} out of range", st.state),
            });
        }
        if st.a1 >= shape.num_actions_1 || st.a2 >= shape.num_actions_2 {
            return Err(DatasetError::Validation {
                episode: k,
                message: format!("step {h}: action ({}, {}) out of range", st.a1, st.a2),
            });
        }
        if !st.reward.is_finite() {
            return Err(DatasetError::Validation {
                episode: k,
                message: format!("step {h}: reward {} is not finite", st.reward),
            });
        }
    }
    Ok(())
}

/// 17 significant digits, valid as a JSON number.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Maximum-likelihood model of a dataset.
///
/// Uncovered cells get reward 0 and a uniform transition row. The last period
/// has no observed successor, so its rows are uniform too; they never enter
/// any recursion.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelEstimate {
    pub r_hat: CellTable<f64>,
    pub p_hat: CellTable<Vec<f64>>,
    pub p0_hat: Vec<f64>,
    pub counts: CellTable<usize>,
}

impl ModelEstimate {
    pub fn shape(&self) -> GameShape {
        self.r_hat.shape()
    }

    pub fn count(&self, cell: Cell) -> usize {
        *self.counts.get(cell)
    }

    pub fn is_covered(&self, cell: Cell) -> bool {
        self.count(cell) > 0
    }

    /// The estimated game, with `reward_bound` as its reward range.
    pub fn to_game(&self, reward_bound: f64) -> Result<MarkovGame, GameError> {
        MarkovGame::new(
            self.r_hat.clone(),
            self.p_hat.clone(),
            self.p0_hat.clone(),
            reward_bound,
        )
    }
}

pub fn mle_estimate(d: &Dataset) -> ModelEstimate {
    let shape = d.shape();
    let ns = shape.num_states;
    let mut sums = CellTable::filled(shape, 0.0);
    let mut counts = CellTable::filled(shape, 0usize);
    let mut next = CellTable::filled(shape, vec![0usize; ns]);
    let mut first = vec![0usize; ns];
    for ep in d.episodes() {
        if let Some(st) = ep.steps.first() {
            first[st.state] += 1;
        }
        for (h, st) in ep.steps.iter().enumerate() {
            let cell = st.cell(h);
            *sums.get_mut(cell) += st.reward;
            *counts.get_mut(cell) += 1;
            if let Some(succ) = ep.steps.get(h + 1) {
                next.get_mut(cell)[succ.state] += 1;
            }
        }
    }
    let uniform = vec![1.0 / ns as f64; ns];
    let r_hat = CellTable::from_fn(shape, |c| {
        let n = *counts.get(c);
        if n == 0 {
            0.0
        } else {
            sums.get(c) / n as f64
        }
    });
    let p_hat = CellTable::from_fn(shape, |c| {
        let row = next.get(c);
        let total: usize = row.iter().sum();
        if total == 0 {
            uniform.clone()
        } else {
            row.iter().map(|&x| x as f64 / total as f64).collect()
        }
    });
    let k = d.len();
    let p0_hat = if k == 0 {
        uniform
    } else {
        first.iter().map(|&x| x as f64 / k as f64).collect()
    };
    ModelEstimate {
        r_hat,
        p_hat,
        p0_hat,
        counts,
    }
}

/// The five-sample rock-paper-scissors dataset (actions R=0, P=1, S=2).
pub fn gen_rps() -> Dataset {
    let shape = GameShape::normal_form(3, 3).expect("static shape");
    let samples = [
        (0, 0, 0.0),
        (0, 1, -1.0),
        (0, 2, 1.0),
        (1, 0, 1.0),
        (2, 0, -1.0),
    ];
    let episodes = samples
        .iter()
        .map(|&(a1, a2, r)| Episode::new(vec![Step::new(0, a1, a2, r)]))
        .collect();
    Dataset::new(shape, episodes, 1.0).expect("static dataset")
}

/// Stochastic matching pennies (actions H=0, T=1): `n` one-step episodes per
/// joint action in order HH, HT, TH, TT, with rewards HH, TT ~ U[0, 1] and
/// HT, TH ~ U[-1, 0]. The reward bound is 10.
pub fn gen_matching_penny(n: usize, seed: u64) -> Dataset {
    assert!(n >= 1, "matching penny needs n >= 1");
    let shape = GameShape::normal_form(2, 2).expect("static shape");
    let mut rng = rng::seeded(seed);
    let mut episodes = Vec::with_capacity(4 * n);
    for (a1, a2, sign) in [(0, 0, 1.0), (0, 1, -1.0), (1, 0, -1.0), (1, 1, 1.0)] {
        for _ in 0..n {
            let u: f64 = rng.gen();
            episodes.push(Episode::new(vec![Step::new(0, a1, a2, sign * u)]));
        }
    }
    Dataset::new(shape, episodes, 10.0).expect("generated dataset")
}
