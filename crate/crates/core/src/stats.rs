//! Leaderboard aggregation: winrates, bootstrap intervals, Bradley-Terry Elo,
//! and the Friedman / Nemenyi rank tests.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::special::chi2_sf;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("empty input")]
    EmptyInput,
    #[error("shape error: {0}")]
    Shape(String),
    #[error("no tabulated Nemenyi critical value for m={m}")]
    UnsupportedM { m: usize },
    #[error("no tabulated Nemenyi critical value for alpha={alpha}")]
    UnsupportedAlpha { alpha: f64 },
}

/// One metric for every (experiment, method), oriented so that higher is better.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    pub methods: Vec<String>,
    pub experiments: Vec<String>,
    /// Grouping key per experiment (the dataset name).
    pub groups: Vec<String>,
    /// E × m.
    pub values: Array2<f64>,
}

impl ScoreTable {
    pub fn new(
        methods: Vec<String>,
        experiments: Vec<String>,
        groups: Vec<String>,
        values: Array2<f64>,
    ) -> Result<Self, StatsError> {
        if methods.len() < 2 {
            return Err(StatsError::Shape(format!("need at least two methods, got {}", methods.len())));
        }
        if experiments.is_empty() {
            return Err(StatsError::EmptyInput);
        }
        if values.dim() != (experiments.len(), methods.len()) || groups.len() != experiments.len() {
            return Err(StatsError::Shape(format!(
                "values {:?} do not match {} experiments × {} methods",
                values.dim(),
                experiments.len(),
                methods.len()
            )));
        }
        if values.iter().any(|v| v.is_nan()) {
            return Err(StatsError::Shape("missing (NaN) score cells".into()));
        }
        Ok(Self { methods, experiments, groups, values })
    }

    pub fn n_methods(&self) -> usize {
        self.methods.len()
    }

    pub fn n_experiments(&self) -> usize {
        self.experiments.len()
    }

    /// Experiment indices per group, in first-appearance order.
    pub fn group_indices(&self, by: GroupBy) -> Vec<Vec<usize>> {
        match by {
            GroupBy::Experiment => (0..self.n_experiments()).map(|i| vec![i]).collect(),
            GroupBy::Dataset => {
                let mut keys: Vec<&str> = Vec::new();
                let mut out: Vec<Vec<usize>> = Vec::new();
                for (i, g) in self.groups.iter().enumerate() {
                    match keys.iter().position(|k| *k == g) {
                        Some(j) => out[j].push(i),
                        None => {
                            keys.push(g);
                            out.push(vec![i]);
                        }
                    }
                }
                out
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupBy {
    Dataset,
    Experiment,
}

impl fmt::Display for GroupBy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GroupBy::Dataset => "dataset",
            GroupBy::Experiment => "experiment",
        })
    }
}

impl FromStr for GroupBy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dataset" => Ok(GroupBy::Dataset),
            "experiment" => Ok(GroupBy::Experiment),
            _ => Err(format!("unknown grouping `{s}` (expected dataset or experiment)")),
        }
    }
}

/// Fraction of the other methods each method strictly beats; ties count for neither.
pub fn winrates_row(scores: &[f64]) -> Vec<f64> {
    let m = scores.len();
    let denom = (m - 1) as f64;
    scores
        .iter()
        .map(|&s| scores.iter().filter(|&&o| s > o).count() as f64 / denom)
        .collect()
}

/// E × m winrate matrix.
pub fn winrates(t: &ScoreTable) -> Array2<f64> {
    let mut out = Array2::zeros(t.values.dim());
    for (row, mut o) in t.values.rows().into_iter().zip(out.rows_mut()) {
        let w = winrates_row(row.as_slice().expect("standard layout"));
        o.assign(&ndarray::Array1::from(w));
    }
    out
}

pub const BOOTSTRAP_REPLICATES: usize = 1000;
pub const CONFIDENCE_LEVEL: f64 = 0.95;

/// Mean of group means.
fn grouped_mean(groups: &[Vec<f64>], picks: &[usize]) -> f64 {
    picks
        .iter()
        .map(|&g| groups[g].iter().sum::<f64>() / groups[g].len() as f64)
        .sum::<f64>()
        / picks.len() as f64
}

/// Group indices drawn with replacement for replicate `r`, seeded by `seed + r`.
pub fn resample(n_groups: usize, seed: u64, replicate: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(replicate as u64));
    (0..n_groups).map(|_| rng.random_range(0..n_groups)).collect()
}

/// Linear-interpolation percentile of sorted data, `q ∈ [0, 1]`.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Percentile interval of a bootstrap statistic computed from resampled group indices.
pub fn bootstrap_interval<F>(
    n_groups: usize,
    replicates: usize,
    level: f64,
    seed: u64,
    statistic: F,
) -> Result<(f64, f64), StatsError>
where
    F: Fn(&[usize]) -> f64 + Sync,
{
    if n_groups == 0 || replicates == 0 {
        return Err(StatsError::EmptyInput);
    }
    let mut stats: Vec<f64> = (0..replicates)
        .into_par_iter()
        .map(|r| statistic(&resample(n_groups, seed, r)))
        .collect();
    stats.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    Ok((percentile(&stats, tail), percentile(&stats, 1.0 - tail)))
}

/// Percentile bootstrap interval of the mean of group means. In experiment mode every
/// value is its own group, so the statistic is the plain mean.
pub fn bootstrap_ci(
    values: &[f64],
    groups: &[String],
    by: GroupBy,
    replicates: usize,
    level: f64,
    seed: u64,
) -> Result<(f64, f64), StatsError> {
    if values.is_empty() {
        return Err(StatsError::EmptyInput);
    }
    if values.len() != groups.len() {
        return Err(StatsError::Shape("one group key per value required".into()));
    }
    let grouped: Vec<Vec<f64>> = match by {
        GroupBy::Experiment => values.iter().map(|&v| vec![v]).collect(),
        GroupBy::Dataset => {
            let mut keys: Vec<&String> = Vec::new();
            let mut out: Vec<Vec<f64>> = Vec::new();
            for (v, g) in values.iter().zip(groups) {
                match keys.iter().position(|k| *k == g) {
                    Some(j) => out[j].push(*v),
                    None => {
                        keys.push(g);
                        out.push(vec![*v]);
                    }
                }
            }
            out
        }
    };
    bootstrap_interval(grouped.len(), replicates, level, seed, |picks| grouped_mean(&grouped, picks))
}

const BT_TOL: f64 = 1e-10;
const BT_MAX_ITER: usize = 100_000;
pub const ELO_MEAN: f64 = 1000.0;
pub const ELO_SCALE: f64 = 400.0;

/// Bradley-Terry ratings on the Elo scale from pairwise win counts `wins[i][j]`
/// (times `i` beat `j`). One virtual tie per pair keeps the likelihood bounded.
pub fn bradley_terry_elo(wins: &Array2<f64>) -> Result<Vec<f64>, StatsError> {
    bradley_terry_elo_with_ties(wins, 1.0)
}

/// Bradley-Terry ratings with `virtual_ties` draws added to every pair (each worth half a
/// win to both sides). With zero virtual ties the win graph must be strongly connected.
pub fn bradley_terry_elo_with_ties(wins: &Array2<f64>, virtual_ties: f64) -> Result<Vec<f64>, StatsError> {
    let m = wins.nrows();
    if m < 2 || wins.ncols() != m {
        return Err(StatsError::Shape(format!("need a square m×m win matrix with m ≥ 2, got {:?}", wins.dim())));
    }
    let prior = 0.5 * virtual_ties;
    let w = Array2::from_shape_fn((m, m), |(i, j)| if i == j { 0.0 } else { wins[[i, j]] + prior });
    let total_wins: Vec<f64> = (0..m).map(|i| w.row(i).sum()).collect();
    let mut s = vec![1.0; m];
    for _ in 0..BT_MAX_ITER {
        let mut next: Vec<f64> = (0..m)
            .map(|i| {
                let denom: f64 = (0..m)
                    .filter(|&j| j != i)
                    .map(|j| (w[[i, j]] + w[[j, i]]) / (s[i] + s[j]))
                    .sum();
                total_wins[i] / denom
            })
            .collect();
        let log_mean = next.iter().map(|v| v.ln()).sum::<f64>() / m as f64;
        next.iter_mut().for_each(|v| *v /= log_mean.exp());
        let change = next.iter().zip(&s).map(|(a, b)| ((a - b) / b).abs()).fold(0.0, f64::max);
        s = next;
        if change <= BT_TOL {
            break;
        }
    }
    let ratings: Vec<f64> = s.iter().map(|v| ELO_SCALE * v.log10()).collect();
    let mean = ratings.iter().sum::<f64>() / m as f64;
    Ok(ratings.iter().map(|r| r - mean + ELO_MEAN).collect())
}

/// Pairwise win counts over the selected experiments; a tie gives each side half a win.
pub fn pairwise_wins(t: &ScoreTable, experiments: impl IntoIterator<Item = usize>) -> Array2<f64> {
    let m = t.n_methods();
    let mut wins = Array2::zeros((m, m));
    for e in experiments {
        let row = t.values.row(e);
        for i in 0..m {
            for j in 0..m {
                if i != j {
                    if row[i] > row[j] {
                        wins[[i, j]] += 1.0;
                    } else if row[i] == row[j] {
                        wins[[i, j]] += 0.5;
                    }
                }
            }
        }
    }
    wins
}

/// Average ranks (1 = best) with ties sharing the mean of their positions.
pub fn rank_row(scores: &[f64]) -> Vec<f64> {
    let m = scores.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut ranks = vec![0.0; m];
    let mut i = 0;
    while i < m {
        let mut j = i;
        while j + 1 < m && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = avg;
        }
        i = j + 1;
    }
    ranks
}

#[derive(Debug, Clone, PartialEq)]
pub struct FriedmanResult {
    pub statistic: f64,
    pub p_value: f64,
    pub avg_ranks: Vec<f64>,
}

/// Friedman rank test with the chi-square approximation on `m − 1` degrees of freedom.
pub fn friedman_test(t: &ScoreTable) -> Result<FriedmanResult, StatsError> {
    let (e, m) = t.values.dim();
    if e < 2 {
        return Err(StatsError::Shape(format!("need at least two experiments, got {e}")));
    }
    let mut avg_ranks = vec![0.0; m];
    for row in t.values.rows() {
        for (a, r) in avg_ranks.iter_mut().zip(rank_row(row.as_slice().expect("standard layout"))) {
            *a += r;
        }
    }
    avg_ranks.iter_mut().for_each(|r| *r /= e as f64);
    let center = (m as f64 + 1.0) / 2.0;
    let spread: f64 = avg_ranks.iter().map(|r| (r - center).powi(2)).sum();
    let statistic = 12.0 * e as f64 / (m as f64 * (m as f64 + 1.0)) * spread;
    let p_value = chi2_sf(statistic, (m - 1) as f64).clamp(0.0, 1.0);
    Ok(FriedmanResult { statistic, p_value, avg_ranks })
}

/// Two-tailed Nemenyi critical values `q_α` (Studentized range divided by √2) for m = 2…20.
const NEMENYI_Q_05: [f64; 19] = [
    1.960, 2.343, 2.569, 2.728, 2.850, 2.949, 3.031, 3.102, 3.164, 3.219, 3.268, 3.313, 3.354, 3.391,
    3.426, 3.458, 3.489, 3.517, 3.544,
];
const NEMENYI_Q_10: [f64; 19] = [
    1.645, 2.052, 2.291, 2.459, 2.589, 2.693, 2.780, 2.855, 2.920, 2.978, 3.030, 3.077, 3.120, 3.159,
    3.196, 3.230, 3.262, 3.291, 3.319,
];

pub fn nemenyi_q(m: usize, alpha: f64) -> Result<f64, StatsError> {
    let table = if (alpha - 0.05).abs() < 1e-12 {
        &NEMENYI_Q_05
    } else if (alpha - 0.10).abs() < 1e-12 {
        &NEMENYI_Q_10
    } else {
        return Err(StatsError::UnsupportedAlpha { alpha });
    };
    if !(2..=20).contains(&m) {
        return Err(StatsError::UnsupportedM { m });
    }
    Ok(table[m - 2])
}

#[derive(Debug, Clone, PartialEq)]
pub struct NemenyiResult {
    pub critical_difference: f64,
    /// `significant[i][j]` iff `|R_i − R_j| > CD`.
    pub significant: Vec<Vec<bool>>,
    /// Maximal runs of methods, in rank order, whose extreme ranks differ by at most CD.
    pub groups: Vec<Vec<usize>>,
}

pub fn nemenyi(avg_ranks: &[f64], n_experiments: usize, alpha: f64) -> Result<NemenyiResult, StatsError> {
    let m = avg_ranks.len();
    let q = nemenyi_q(m, alpha)?;
    if n_experiments == 0 {
        return Err(StatsError::EmptyInput);
    }
    let cd = q * (m as f64 * (m as f64 + 1.0) / (6.0 * n_experiments as f64)).sqrt();
    let significant = (0..m)
        .map(|i| (0..m).map(|j| (avg_ranks[i] - avg_ranks[j]).abs() > cd).collect())
        .collect();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| avg_ranks[a].total_cmp(&avg_ranks[b]).then(a.cmp(&b)));
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut last_end = 0;
    for start in 0..m {
        let mut end = start;
        while end + 1 < m && avg_ranks[order[end + 1]] - avg_ranks[order[start]] <= cd {
            end += 1;
        }
        if end > start && (groups.is_empty() || end > last_end) {
            groups.push(order[start..=end].to_vec());
            last_end = end;
        }
    }
    Ok(NemenyiResult { critical_difference: cd, significant, groups })
}

/// Mean with the normal-approximation interval `mean ± 1.96·sd/√n`.
pub fn mean_with_normal_ci(values: &[f64]) -> (f64, f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, mean, mean);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let half = 1.96 * var.sqrt() / n.sqrt();
    (mean, mean - half, mean + half)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeaderboardRow {
    pub method: String,
    pub mean_winrate: f64,
    pub winrate_ci: (f64, f64),
    pub elo: f64,
    pub elo_ci: (f64, f64),
    pub avg_rank: f64,
    /// `(metric, mean Φ, lower, upper)` per secondary table.
    pub mean_phi: Vec<(String, f64, f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Leaderboard {
    pub rows: Vec<LeaderboardRow>,
    pub friedman: Option<FriedmanResult>,
    pub nemenyi: Option<NemenyiResult>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeaderboardConfig {
    pub group_by: GroupBy,
    pub replicates: usize,
    pub level: f64,
    pub seed: u64,
    pub alpha: f64,
}

impl Default for LeaderboardConfig {
    fn default() -> Self {
        Self {
            group_by: GroupBy::Experiment,
            replicates: BOOTSTRAP_REPLICATES,
            level: CONFIDENCE_LEVEL,
            seed: 0,
            alpha: 0.05,
        }
    }
}

/// Ranks methods on `primary`, reporting mean Φ for every table in `phi_tables`
/// (which must share the primary's methods and experiments). Rows keep method order.
pub fn leaderboard(
    primary: &ScoreTable,
    phi_tables: &[(String, ScoreTable)],
    cfg: &LeaderboardConfig,
) -> Result<Leaderboard, StatsError> {
    let m = primary.n_methods();
    let groups = primary.group_indices(cfg.group_by);
    let wr = winrates(primary);
    let group_means = |col: &Array2<f64>, j: usize| -> Vec<f64> {
        groups
            .iter()
            .map(|g| g.iter().map(|&e| col[[e, j]]).sum::<f64>() / g.len() as f64)
            .collect()
    };
    let elo = bradley_terry_elo(&pairwise_wins(primary, 0..primary.n_experiments()))?;
    let elo_reps: Vec<Vec<f64>> = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| {
            let picks = resample(groups.len(), cfg.seed, r);
            let exps = picks.iter().flat_map(|&g| groups[g].iter().copied());
            bradley_terry_elo(&pairwise_wins(primary, exps)).expect("m ≥ 2 checked by ScoreTable")
        })
        .collect();
    let tail = (1.0 - cfg.level) / 2.0;
    let friedman = friedman_test(primary).ok();
    let nemenyi = friedman
        .as_ref()
        .and_then(|f| nemenyi(&f.avg_ranks, primary.n_experiments(), cfg.alpha).ok());
    let avg_ranks: Vec<f64> = match &friedman {
        Some(f) => f.avg_ranks.clone(),
        None => rank_row(primary.values.row(0).as_slice().expect("standard layout")),
    };
    let mut rows = Vec::with_capacity(m);
    for j in 0..m {
        let gm = group_means(&wr, j);
        let mean_winrate = gm.iter().sum::<f64>() / gm.len() as f64;
        let winrate_ci = bootstrap_interval(gm.len(), cfg.replicates, cfg.level, cfg.seed, |picks| {
            picks.iter().map(|&g| gm[g]).sum::<f64>() / picks.len() as f64
        })?;
        let mut reps: Vec<f64> = elo_reps.iter().map(|r| r[j]).collect();
        reps.sort_by(f64::total_cmp);
        let elo_ci = (percentile(&reps, tail), percentile(&reps, 1.0 - tail));
        let mean_phi = phi_tables
            .iter()
            .map(|(name, table)| {
                let (mean, lo, hi) = mean_with_normal_ci(&group_means(&table.values, j));
                (name.clone(), mean, lo, hi)
            })
            .collect();
        rows.push(LeaderboardRow {
            method: primary.methods[j].clone(),
            mean_winrate,
            winrate_ci,
            elo: elo[j],
            elo_ci,
            avg_rank: avg_ranks[j],
            mean_phi,
        });
    }
    Ok(Leaderboard { rows, friedman, nemenyi })
}
