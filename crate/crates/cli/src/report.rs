//! Leaderboard, critical-difference data and a winrate bar chart from a results CSV.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use calbench::io::{format_g17, load_manifest, read_results, ResultRow};
use calbench::metrics::MetricId;
use calbench::stats::{leaderboard, GroupBy, Leaderboard, LeaderboardConfig, ScoreTable};
use ndarray::Array2;

use crate::CliError;

pub const LEADERBOARD_FILE: &str = "leaderboard.csv";
pub const FRIEDMAN_FILE: &str = "friedman.csv";
pub const CD_FILE: &str = "cd.csv";
pub const CHART_FILE: &str = "winrates.svg";

#[derive(Debug, Clone)]
pub struct ReportConfig {
    pub results: PathBuf,
    /// Manifest used to map experiments to datasets; without it each experiment is its own group.
    pub manifest: Option<PathBuf>,
    /// Output directory.
    pub out: PathBuf,
    /// Defaults to dataset when the manifest names more than one dataset.
    pub group_by: Option<GroupBy>,
    /// Metric whose Φ ranks the methods.
    pub metric: MetricId,
    pub seed: u64,
    pub replicates: usize,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportOutputs {
    pub leaderboard: PathBuf,
    pub friedman: PathBuf,
    pub cd: PathBuf,
    pub chart: PathBuf,
    pub group_by: GroupBy,
}

/// Grids of Φ per metric, in the fixed metric order.
struct PhiGrids {
    methods: Vec<String>,
    experiments: Vec<String>,
    grids: Vec<(MetricId, Array2<f64>)>,
}

fn collect(rows: &[ResultRow]) -> Result<PhiGrids, CliError> {
    let methods: Vec<String> = rows.iter().map(|r| r.calibrator.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    let experiments: Vec<String> =
        rows.iter().map(|r| r.experiment_id.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    let m_index: BTreeMap<&str, usize> = methods.iter().enumerate().map(|(i, m)| (m.as_str(), i)).collect();
    let e_index: BTreeMap<&str, usize> = experiments.iter().enumerate().map(|(i, e)| (e.as_str(), i)).collect();
    let mut grids: BTreeMap<MetricId, Array2<f64>> = BTreeMap::new();
    for r in rows {
        let metric: MetricId = r.metric.parse().map_err(CliError::Data)?;
        let grid = grids.entry(metric).or_insert_with(|| Array2::from_elem((experiments.len(), methods.len()), f64::NAN));
        grid[[e_index[r.experiment_id.as_str()], m_index[r.calibrator.as_str()]]] = r.phi;
    }
    Ok(PhiGrids { methods, experiments, grids: grids.into_iter().collect() })
}

fn is_complete(grid: &Array2<f64>) -> bool {
    grid.iter().all(|v| v.is_finite())
}

fn dataset_map(manifest: Option<&Path>) -> Result<BTreeMap<String, String>, CliError> {
    match manifest {
        None => Ok(BTreeMap::new()),
        Some(path) => Ok(load_manifest(path, false)?
            .into_iter()
            .map(|r| (r.experiment_id, r.dataset))
            .collect()),
    }
}

fn table(p: &PhiGrids, groups: &[String], grid: &Array2<f64>) -> Result<ScoreTable, CliError> {
    ScoreTable::new(p.methods.clone(), p.experiments.clone(), groups.to_vec(), grid.clone())
        .map_err(|e| CliError::Data(e.to_string()))
}

/// Computes the leaderboard from results rows; rows are sorted by mean winrate, best first.
pub fn build_leaderboard(
    rows: &[ResultRow],
    datasets: &BTreeMap<String, String>,
    cfg: &ReportConfig,
) -> Result<(Leaderboard, GroupBy), CliError> {
    if rows.is_empty() {
        return Err(CliError::IncompleteResults("results file has no rows".into()));
    }
    let p = collect(rows)?;
    if p.methods.len() < 2 {
        return Err(CliError::IncompleteResults(format!("need at least two calibrators, found {}", p.methods.len())));
    }
    let primary = p
        .grids
        .iter()
        .find(|(m, _)| *m == cfg.metric)
        .map(|(_, g)| g)
        .ok_or_else(|| CliError::IncompleteResults(format!("no `{}` rows", cfg.metric)))?;
    if !is_complete(primary) {
        return Err(CliError::IncompleteResults(format!(
            "`{}` is missing for some calibrator × experiment pairs",
            cfg.metric
        )));
    }
    let mut groups = Vec::with_capacity(p.experiments.len());
    for e in &p.experiments {
        groups.push(match datasets.get(e) {
            Some(d) => d.clone(),
            None if datasets.is_empty() => e.clone(),
            None => return Err(CliError::Data(format!("experiment `{e}` is not in the manifest"))),
        });
    }
    let distinct = groups.iter().collect::<BTreeSet<_>>().len();
    let group_by = cfg.group_by.unwrap_or(if !datasets.is_empty() && distinct > 1 {
        GroupBy::Dataset
    } else {
        GroupBy::Experiment
    });
    if group_by == GroupBy::Dataset && datasets.is_empty() {
        return Err(CliError::Usage("grouping by dataset needs the benchmark manifest".into()));
    }
    let primary = table(&p, &groups, primary)?;
    let phi_tables = p
        .grids
        .iter()
        .filter(|(_, g)| is_complete(g))
        .map(|(m, g)| Ok((m.name().to_string(), table(&p, &groups, g)?)))
        .collect::<Result<Vec<_>, CliError>>()?;
    let lb_cfg = LeaderboardConfig {
        group_by,
        replicates: cfg.replicates,
        level: calbench::stats::CONFIDENCE_LEVEL,
        seed: cfg.seed,
        alpha: cfg.alpha,
    };
    let mut lb = leaderboard(&primary, &phi_tables, &lb_cfg).map_err(|e| CliError::Data(e.to_string()))?;
    lb.rows.sort_by(|a, b| b.mean_winrate.total_cmp(&a.mean_winrate).then_with(|| a.method.cmp(&b.method)));
    Ok((lb, group_by))
}

fn write_leaderboard(lb: &Leaderboard, path: &Path) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = [
        "method", "mean_winrate", "winrate_lo", "winrate_hi", "elo", "elo_lo", "elo_hi", "avg_rank",
    ]
    .map(String::from)
    .to_vec();
    if let Some(first) = lb.rows.first() {
        for (name, ..) in &first.mean_phi {
            header.extend([format!("phi_{name}"), format!("phi_{name}_lo"), format!("phi_{name}_hi")]);
        }
    }
    w.write_record(&header)?;
    for r in &lb.rows {
        let mut rec = vec![
            r.method.clone(),
            format_g17(r.mean_winrate),
            format_g17(r.winrate_ci.0),
            format_g17(r.winrate_ci.1),
            format_g17(r.elo),
            format_g17(r.elo_ci.0),
            format_g17(r.elo_ci.1),
            format_g17(r.avg_rank),
        ];
        for (_, mean, lo, hi) in &r.mean_phi {
            rec.extend([format_g17(*mean), format_g17(*lo), format_g17(*hi)]);
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn write_friedman(lb: &Leaderboard, n_methods: usize, alpha: f64, path: &Path) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["n_methods", "statistic", "p_value", "alpha", "critical_difference"])?;
    let f = lb.friedman.as_ref();
    w.write_record([
        n_methods.to_string(),
        format_g17(f.map_or(f64::NAN, |f| f.statistic)),
        format_g17(f.map_or(f64::NAN, |f| f.p_value)),
        format_g17(alpha),
        format_g17(lb.nemenyi.as_ref().map_or(f64::NAN, |n| n.critical_difference)),
    ])?;
    w.flush()?;
    Ok(())
}

/// Pairwise Nemenyi comparisons in leaderboard order.
fn write_cd(lb: &Leaderboard, methods: &[String], path: &Path) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["method_a", "method_b", "avg_rank_a", "avg_rank_b", "rank_difference", "significant"])?;
    let index = |name: &str| methods.iter().position(|m| m == name).expect("leaderboard method");
    for (i, a) in lb.rows.iter().enumerate() {
        for b in &lb.rows[i + 1..] {
            let significant = lb
                .nemenyi
                .as_ref()
                .map_or("", |n| if n.significant[index(&a.method)][index(&b.method)] { "true" } else { "false" });
            w.write_record([
                a.method.clone(),
                b.method.clone(),
                format_g17(a.avg_rank),
                format_g17(b.avg_rank),
                format_g17((a.avg_rank - b.avg_rank).abs()),
                significant.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Horizontal winrate bars with bootstrap whiskers, in leaderboard order.
pub fn winrate_svg(lb: &Leaderboard, title: &str) -> String {
    const LABEL_W: f64 = 150.0;
    const PLOT_W: f64 = 400.0;
    const BAR_H: f64 = 18.0;
    const GAP: f64 = 6.0;
    const TOP: f64 = 40.0;
    let n = lb.rows.len() as f64;
    let width = LABEL_W + PLOT_W + 40.0;
    let height = TOP + n * (BAR_H + GAP) + 30.0;
    let x = |v: f64| LABEL_W + PLOT_W * v.clamp(0.0, 1.0);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{:.1}" y="20" text-anchor="middle" font-size="14">{}</text>"#, width / 2.0, escape(title));
    for tick in 0..=4 {
        let v = f64::from(tick) / 4.0;
        let _ = writeln!(
            s,
            r##"<line x1="{0:.2}" y1="{1:.2}" x2="{0:.2}" y2="{2:.2}" stroke="#dddddd"/><text x="{0:.2}" y="{3:.2}" text-anchor="middle">{4:.2}</text>"##,
            x(v),
            TOP - 4.0,
            TOP + n * (BAR_H + GAP),
            TOP + n * (BAR_H + GAP) + 16.0,
            v
        );
    }
    for (i, r) in lb.rows.iter().enumerate() {
        let y = TOP + i as f64 * (BAR_H + GAP);
        let mid = y + BAR_H / 2.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end" dominant-baseline="middle">{}</text>"#,
            LABEL_W - 8.0,
            mid,
            escape(&r.method)
        );
        let _ = writeln!(
            s,
            r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#4c72b0"/>"##,
            LABEL_W,
            y,
            x(r.mean_winrate) - LABEL_W,
            BAR_H
        );
        let (lo, hi) = (x(r.winrate_ci.0), x(r.winrate_ci.1));
        let _ = writeln!(
            s,
            r#"<path d="M{lo:.2} {:.2}V{:.2}M{lo:.2} {mid:.2}H{hi:.2}M{hi:.2} {:.2}V{:.2}" stroke="black" fill="none"/>"#,
            mid - 4.0,
            mid + 4.0,
            mid - 4.0,
            mid + 4.0
        );
    }
    s.push_str("</svg>\n");
    s
}

pub fn cmd_report(cfg: &ReportConfig) -> Result<ReportOutputs, CliError> {
    let rows = read_results(&cfg.results)?;
    let datasets = dataset_map(cfg.manifest.as_deref())?;
    let (lb, group_by) = build_leaderboard(&rows, &datasets, cfg)?;
    std::fs::create_dir_all(&cfg.out)?;
    let methods: Vec<String> =
        rows.iter().map(|r| r.calibrator.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    let out = ReportOutputs {
        leaderboard: cfg.out.join(LEADERBOARD_FILE),
        friedman: cfg.out.join(FRIEDMAN_FILE),
        cd: cfg.out.join(CD_FILE),
        chart: cfg.out.join(CHART_FILE),
        group_by,
    };
    write_leaderboard(&lb, &out.leaderboard)?;
    write_friedman(&lb, methods.len(), cfg.alpha, &out.friedman)?;
    write_cd(&lb, &methods, &out.cd)?;
    let benchmark = rows.first().map_or("", |r| r.benchmark.as_str());
    let title = format!("{benchmark}: winrate on {} improvement", cfg.metric);
    std::fs::write(&out.chart, winrate_svg(&lb, &title))?;
    Ok(out)
}
