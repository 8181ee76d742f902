use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use kdtamp_core::bench::{self, AdvisorSpec, DomainKind, InstanceSpec, SuiteConfig};
use kdtamp_core::hybrid::{replay, PlanFile, PlannerConfig, Search};
use kdtamp_core::pddl::{parse_domain, parse_problem};
use kdtamp_core::render::render_all;
use kdtamp_core::robot::RobotModel;
use kdtamp_core::sim::{SceneFile, WorldState};

#[derive(Parser)]
#[command(name = "kdtamp", version, about = "Kinodynamic task and motion planner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Plan one problem and write the plan, result, search tree and images.
    Plan(PlanArgs),
    /// Re-execute a plan file and check the goal.
    Replay {
        file: PathBuf,
    },
    /// Run the benchmark suite and write runs.csv and timings.csv.
    Bench(BenchArgs),
    /// Write a generated benchmark instance as domain, problem and scene files.
    Generate {
        #[arg(long)]
        domain: DomainKind,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct Planner {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Seconds.
    #[arg(long, default_value_t = 600.0)]
    timeout: f64,
    #[arg(long, default_value_t = 30)]
    k: usize,
    #[arg(long, default_value_t = 5)]
    retries: usize,
    /// `heuristic`, `scripted:FILE` or `remote:URL`.
    #[arg(long, default_value = "heuristic")]
    advisor: AdvisorSpec,
}

impl Planner {
    fn config(&self) -> PlannerConfig {
        PlannerConfig { seed: self.seed, timeout: self.timeout, k: self.k, retries: self.retries, ..PlannerConfig::default() }
    }
}

#[derive(Args)]
struct PlanArgs {
    #[arg(long)]
    domain: PathBuf,
    #[arg(long)]
    problem: PathBuf,
    /// JSON scene with an optional robot.
    #[arg(long)]
    scene: PathBuf,
    #[command(flatten)]
    planner: Planner,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    /// Repeat for several domains; all of them when omitted.
    #[arg(long)]
    domain: Vec<DomainKind>,
    #[arg(long, default_value_t = 3)]
    n_min: usize,
    #[arg(long, default_value_t = 3)]
    n_max: usize,
    #[arg(long, default_value_t = 10)]
    instances: usize,
    #[arg(long, default_value_t = 0)]
    first_seed: u64,
    /// Repeat to compare advisors.
    #[arg(long, default_value = "heuristic")]
    advisor: Vec<AdvisorSpec>,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long, default_value_t = 600.0)]
    timeout: f64,
    #[arg(long, default_value_t = 30)]
    k: usize,
    #[arg(long, default_value_t = 5)]
    retries: usize,
    #[arg(long, default_value = "bench")]
    out: PathBuf,
    /// Also keep plan files, images and advisor logs per run.
    #[arg(long)]
    keep_runs: bool,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn save_views(world: &WorldState, robot: &RobotModel, dir: &Path, prefix: &str) -> Result<()> {
    for (view, img) in render_all(world, Some(robot)) {
        let path = dir.join(format!("{prefix}_{}.png", view.name()));
        img.save_png(&path).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn plan(args: &PlanArgs) -> Result<bool> {
    let domain = parse_domain(&read(&args.domain)?).context("parsing the domain")?;
    let problem = parse_problem(&read(&args.problem)?, &domain).context("parsing the problem")?;
    let scene: SceneFile = serde_json::from_str(&read(&args.scene)?).context("parsing the scene")?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let mut advisor = args.planner.advisor.build(Some(&args.out)).map_err(anyhow::Error::msg)?;
    let mut search = Search::new(&domain, &problem, &scene.robot, &scene.scene, args.planner.config())?;
    if advisor.wants_images() {
        search.run_dir = Some(args.out.join("nodes"));
    }
    let result = search.run(advisor.as_mut());

    write(&args.out.join("tree.json"), search.tree.to_json())?;
    write(&args.out.join("result.json"), serde_json::to_string_pretty(&result)?)?;
    save_views(&result.root_world, &scene.robot, &args.out, "root")?;
    if result.success {
        write(&args.out.join("plan.json"), search.plan_file(&result).to_json())?;
        save_views(&result.final_world, &scene.robot, &args.out, "final")?;
        println!("solved in {:.2}s with {} steps:", result.planning_time, result.steps.len());
        for s in &result.steps {
            println!("  {}", s.action);
        }
    } else {
        println!("failed after {:.2}s: {}", result.planning_time, result.reason.as_deref().unwrap_or("unknown"));
    }
    let st = &result.stats;
    println!("expansions {} backtracks {} retries {} fallbacks {}; tree size {}", st.expansions, st.backtracks, st.retries, st.fallbacks, result.tree_size);
    Ok(result.success)
}

fn replay_file(file: &Path) -> Result<bool> {
    let plan: PlanFile = serde_json::from_str(&read(file)?).context("parsing the plan file")?;
    let report = replay(&plan)?;
    println!("executed {} steps", report.executed);
    for (i, v) in &report.violations {
        println!("  step {i} ({}): {v}", plan.steps[*i].action);
    }
    println!("goal satisfied: {}", report.goal_satisfied);
    Ok(report.ok())
}

fn bench(args: &BenchArgs) -> Result<()> {
    if args.n_min > args.n_max {
        bail!("--n-min is larger than --n-max");
    }
    let domains = if args.domain.is_empty() { vec![DomainKind::Blocksworld, DomainKind::Kitchen] } else { args.domain.clone() };
    for d in &domains {
        let r = d.n_range();
        if !r.contains(&args.n_min) || !r.contains(&args.n_max) {
            bail!("{d} needs n in {}..={}", r.start(), r.end());
        }
    }
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let cfg = SuiteConfig {
        domains,
        n_min: args.n_min,
        n_max: args.n_max,
        instances: args.instances,
        first_seed: args.first_seed,
        advisors: args.advisor.clone(),
        planner: PlannerConfig { timeout: args.timeout, k: args.k, retries: args.retries, ..PlannerConfig::default() },
        jobs: args.jobs,
        out_dir: args.keep_runs.then(|| args.out.join("runs")),
    };
    let records = bench::run_suite(&cfg);
    let runs = args.out.join("runs.csv");
    bench::write_runs(fs::File::create(&runs).with_context(|| format!("creating {}", runs.display()))?, &records)?;
    let timings = args.out.join("timings.csv");
    bench::write_timings(fs::File::create(&timings).with_context(|| format!("creating {}", timings.display()))?, &records)?;
    print!("{}", bench::format_summary(&bench::summarize(&records)));
    Ok(())
}

fn generate(domain: DomainKind, n: usize, seed: u64, out: &Path) -> Result<()> {
    let inst = bench::generate(InstanceSpec { domain, n, seed })?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write(&out.join("domain.pddl"), domain.domain_text())?;
    write(&out.join("problem.pddl"), &inst.problem_text)?;
    let scene = SceneFile { scene: inst.scene, robot: RobotModel::default() };
    write(&out.join("scene.json"), serde_json::to_string_pretty(&scene)?)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Plan(args) => plan(args),
        Command::Replay { file } => replay_file(file),
        Command::Bench(args) => bench(args).map(|_| true),
        Command::Generate { domain, n, seed, out } => generate(*domain, *n, *seed, out).map(|_| true),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
