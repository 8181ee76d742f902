use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{generate, DomainKind, InstanceSpec};
use crate::advisor::{Advisor, HeuristicAdvisor, RemoteAdvisor, ScriptedAdvisor};
use crate::hybrid::{PlannerConfig, Search};
use crate::pddl::parse_domain;
use crate::robot::RobotModel;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum AdvisorSpec {
    Heuristic,
    Scripted(PathBuf),
    Remote(String),
}

impl AdvisorSpec {
    pub fn name(&self) -> &'static str {
        match self {
            AdvisorSpec::Heuristic => "heuristic",
            AdvisorSpec::Scripted(_) => "scripted",
            AdvisorSpec::Remote(_) => "remote",
        }
    }

    pub fn build(&self, log_dir: Option<&Path>) -> Result<Box<dyn Advisor>, String> {
        match self {
            AdvisorSpec::Heuristic => Ok(Box::new(HeuristicAdvisor)),
            AdvisorSpec::Scripted(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
                Ok(Box::new(ScriptedAdvisor::from_json(&text).map_err(|e| format!("{}: {e}", path.display()))?))
            }
            AdvisorSpec::Remote(url) => {
                let mut a = RemoteAdvisor::http(url);
                a.log_dir = log_dir.map(Path::to_path_buf);
                Ok(Box::new(a))
            }
        }
    }
}

impl FromStr for AdvisorSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "heuristic" {
            Ok(AdvisorSpec::Heuristic)
        } else if let Some(f) = s.strip_prefix("scripted:") {
            Ok(AdvisorSpec::Scripted(PathBuf::from(f)))
        } else if let Some(u) = s.strip_prefix("remote:") {
            Ok(AdvisorSpec::Remote(u.to_string()))
        } else {
            Err(format!("unknown advisor `{s}`; expected heuristic, scripted:FILE or remote:URL"))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub instance: InstanceSpec,
    pub advisor: String,
    pub success: bool,
    /// Seconds.
    pub planning_time: f64,
    pub expansions: usize,
    pub backtracks: usize,
    pub retries: usize,
}

#[derive(Debug, Clone)]
pub struct SuiteConfig {
    pub domains: Vec<DomainKind>,
    pub n_min: usize,
    pub n_max: usize,
    pub instances: usize,
    /// Instance seeds are `first_seed..first_seed + instances`.
    pub first_seed: u64,
    pub advisors: Vec<AdvisorSpec>,
    /// The seed is replaced by each instance's seed.
    pub planner: PlannerConfig,
    pub jobs: usize,
    /// Per-run plan files and logs go below this directory when set.
    pub out_dir: Option<PathBuf>,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            domains: vec![DomainKind::Blocksworld, DomainKind::Kitchen],
            n_min: 3,
            n_max: 3,
            instances: 10,
            first_seed: 0,
            advisors: vec![AdvisorSpec::Heuristic],
            planner: PlannerConfig::default(),
            jobs: 1,
            out_dir: None,
        }
    }
}

fn run_name(spec: &InstanceSpec, advisor: &str) -> String {
    format!("{}_n{}_s{}_{advisor}", spec.domain, spec.n, spec.seed)
}

fn failed(spec: InstanceSpec, advisor: &str, time: f64) -> RunRecord {
    RunRecord { instance: spec, advisor: advisor.to_string(), success: false, planning_time: time, expansions: 0, backtracks: 0, retries: 0 }
}

/// Plans one generated instance. Errors and panics count as failures. With
/// `run_dir`, the plan file of a successful run is written there.
pub fn run_instance(spec: InstanceSpec, advisor: &AdvisorSpec, planner: &PlannerConfig, run_dir: Option<&Path>) -> RunRecord {
    let name = advisor.name();
    let started = std::time::Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(|| -> Result<RunRecord, String> {
        let inst = generate(spec).map_err(|e| e.to_string())?;
        let domain = parse_domain(spec.domain.domain_text()).map_err(|e| e.to_string())?;
        let robot = RobotModel::default();
        let config = PlannerConfig { seed: spec.seed, ..planner.clone() };
        let mut adv = advisor.build(run_dir)?;
        let mut search = Search::new(&domain, &inst.problem, &robot, &inst.scene, config).map_err(|e| e.to_string())?;
        search.run_dir = run_dir.map(Path::to_path_buf);
        let result = search.run(adv.as_mut());
        if let Some(dir) = run_dir {
            std::fs::create_dir_all(dir).map_err(|e| e.to_string())?;
            if result.success {
                std::fs::write(dir.join("plan.json"), search.plan_file(&result).to_json()).map_err(|e| e.to_string())?;
            }
            let summary = serde_json::json!({
                "success": result.success,
                "reason": result.reason,
                "planning_time": result.planning_time,
                "stats": result.stats,
                "tree_size": result.tree_size,
            });
            std::fs::write(dir.join("result.json"), serde_json::to_string_pretty(&summary).unwrap_or_default()).map_err(|e| e.to_string())?;
        }
        Ok(RunRecord {
            instance: spec,
            advisor: name.to_string(),
            success: result.success,
            planning_time: result.planning_time,
            expansions: result.stats.expansions,
            backtracks: result.stats.backtracks,
            retries: result.stats.retries,
        })
    }));
    let time = started.elapsed().as_secs_f64();
    match outcome {
        Ok(Ok(r)) => r,
        Ok(Err(e)) => {
            log::warn!("{}: {e}", run_name(&spec, name));
            failed(spec, name, time)
        }
        Err(_) => {
            log::warn!("{}: planner panicked", run_name(&spec, name));
            failed(spec, name, time)
        }
    }
}

/// Every (instance, advisor) pair, in a fixed order, on `jobs` threads.
pub fn run_suite(cfg: &SuiteConfig) -> Vec<RunRecord> {
    let mut work = Vec::new();
    for &domain in &cfg.domains {
        for n in cfg.n_min..=cfg.n_max {
            for i in 0..cfg.instances as u64 {
                for adv in &cfg.advisors {
                    work.push((InstanceSpec { domain, n, seed: cfg.first_seed + i }, adv.clone()));
                }
            }
        }
    }
    let run = |(spec, adv): &(InstanceSpec, AdvisorSpec)| {
        let dir = cfg.out_dir.as_ref().map(|d| d.join(run_name(spec, adv.name())));
        let r = run_instance(*spec, adv, &cfg.planner, dir.as_deref());
        log::info!("{}: success={} time={:.1}s", run_name(spec, adv.name()), r.success, r.planning_time);
        r
    };
    match rayon::ThreadPoolBuilder::new().num_threads(cfg.jobs.max(1)).build() {
        Ok(pool) => pool.install(|| work.par_iter().map(run).collect()),
        Err(_) => work.iter().map(run).collect(),
    }
}

#[derive(Serialize)]
struct RunRow<'a> {
    domain: &'a str,
    n: usize,
    seed: u64,
    advisor: &'a str,
    success: bool,
    expansions: usize,
    backtracks: usize,
    retries: usize,
}

#[derive(Serialize)]
struct TimingRow<'a> {
    domain: &'a str,
    n: usize,
    seed: u64,
    advisor: &'a str,
    planning_time: f64,
}

/// Deterministic per-run columns.
pub fn write_runs<W: io::Write>(out: W, records: &[RunRecord]) -> csv::Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(["domain", "n", "seed", "advisor", "success", "expansions", "backtracks", "retries"])?;
    for r in records {
        w.serialize(RunRow {
            domain: r.instance.domain.name(),
            n: r.instance.n,
            seed: r.instance.seed,
            advisor: &r.advisor,
            success: r.success,
            expansions: r.expansions,
            backtracks: r.backtracks,
            retries: r.retries,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Wall-clock planning times, kept apart from the deterministic columns.
pub fn write_timings<W: io::Write>(out: W, records: &[RunRecord]) -> csv::Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(["domain", "n", "seed", "advisor", "planning_time"])?;
    for r in records {
        w.serialize(TimingRow {
            domain: r.instance.domain.name(),
            n: r.instance.n,
            seed: r.instance.seed,
            advisor: &r.advisor,
            planning_time: r.planning_time,
        })?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub domain: DomainKind,
    pub n: usize,
    pub advisor: String,
    pub runs: usize,
    pub successes: usize,
    pub success_rate: f64,
    /// Mean over successful runs only.
    pub mean_time: Option<f64>,
}

/// Success rate and mean planning time of successes per (domain, n, advisor).
pub fn summarize(records: &[RunRecord]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(DomainKind, usize, String), Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        groups.entry((r.instance.domain, r.instance.n, r.advisor.clone())).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((domain, n, advisor), rs)| {
            let ok: Vec<f64> = rs.iter().filter(|r| r.success).map(|r| r.planning_time).collect();
            SummaryRow {
                domain,
                n,
                advisor,
                runs: rs.len(),
                successes: ok.len(),
                success_rate: 100.0 * ok.len() as f64 / rs.len() as f64,
                mean_time: (!ok.is_empty()).then(|| ok.iter().sum::<f64>() / ok.len() as f64),
            }
        })
        .collect()
}

/// One line per (domain, advisor), one column per n: success rate and mean
/// planning time of successes.
pub fn format_summary(rows: &[SummaryRow]) -> String {
    let mut ns: Vec<usize> = rows.iter().map(|r| r.n).collect();
    ns.sort_unstable();
    ns.dedup();
    let mut lines: BTreeMap<(DomainKind, String), BTreeMap<usize, String>> = BTreeMap::new();
    for r in rows {
        let t = r.mean_time.map_or("-".to_string(), |t| format!("{t:.1}s"));
        lines.entry((r.domain, r.advisor.clone())).or_default().insert(r.n, format!("{:.0}% / {t}", r.success_rate));
    }
    let mut table: Vec<Vec<String>> = vec![std::iter::once("domain".to_string())
        .chain(std::iter::once("advisor".to_string()))
        .chain(ns.iter().map(|n| format!("n={n}")))
        .collect()];
    for ((d, a), cells) in &lines {
        let mut row = vec![d.to_string(), a.clone()];
        row.extend(ns.iter().map(|n| cells.get(n).cloned().unwrap_or_else(|| "-".into())));
        table.push(row);
    }
    let widths: Vec<usize> = (0..table[0].len()).map(|c| table.iter().map(|r| r[c].len()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for row in &table {
        let cells: Vec<String> = row.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        let _ = writeln!(out, "{}", cells.join("  ").trim_end());
    }
    out
}
