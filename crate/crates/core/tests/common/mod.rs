//! Checks shared by the integration tests and the acceptance runner. Each
//! returns a one-line summary or the reason it failed.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use kdtamp_core::advisor::{
    heuristic_select_backtrack, Advisor, AdvisorError, AdvisorQuery, Cassette, CassetteTransport, HeuristicAdvisor, QueryKind, RemoteAdvisor,
    RemoteConfig, Script, ScriptStep, ScriptedAdvisor,
};
use kdtamp_core::bench::{gen_blocksworld, gen_kitchen, run_instance, write_runs, AdvisorSpec, DomainKind, InstanceSpec};
use kdtamp_core::domains;
use kdtamp_core::geom::{Aabb, BoxObject, Pose, Scene, Vec3, MOTION_MARGIN};
use kdtamp_core::hybrid::{home_config, plan, replay, Expansion, Fault, FaultSite, Faults, PlanFile, PlannerConfig, Refiner, Search, Stage};
use kdtamp_core::motion::{plan_rrt_connect, validate_trajectory, CollisionChecker, MotionRequest, DEFAULT_MAX_ITERS};
use kdtamp_core::pddl::{applicable, apply, ground, parse_problem, DomainDef, ProblemDef};
use kdtamp_core::render::{render_all, View};
use kdtamp_core::robot::{Config, RobotModel};
use kdtamp_core::sim::{evaluate_predicates, Category, SceneFile, Simulator, WorldState};
use kdtamp_core::topk::solve_topk;

pub type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($arg:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($arg)+));
        }
    };
}

pub fn manifest_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

pub fn kitchen_egg_problem() -> ProblemDef {
    parse_problem(
        "(define (problem egg) (:domain kitchen)
           (:objects radish egg bacon chicken celery apple - food sink - sink stove - stove table - region)
           (:init (arm-empty) (on radish table) (on egg table) (on bacon table) (on chicken table) (on celery table) (on apple table))
           (:goal (cooked egg)))",
        &domains::kitchen(),
    )
    .expect("kitchen problem parses")
}

fn labels_at(s: &Search, node: usize) -> Vec<String> {
    s.graph.admissible_actions(&s.tree.nodes[node].symbolic).map(|v| v.iter().map(|a| a.label()).collect()).unwrap_or_default()
}

fn child(e: Expansion) -> Result<usize, String> {
    match e {
        Expansion::Child(c) => Ok(c),
        Expansion::AllFailed(f) => Err(format!("expansion failed with {} violations", f.len())),
    }
}

/// Expands along the advisor's choices until the egg has been cleaned.
fn drive_to_cleaned_egg(s: &mut Search, advisor: &mut dyn Advisor) -> Result<usize, String> {
    let mut cur = 0;
    for _ in 0..3 {
        cur = child(s.expand(cur, advisor))?;
    }
    let last = s.tree.nodes[cur].incoming.as_ref().map(|b| b.action.label()).unwrap_or_default();
    ensure!(last == "(clean egg sink)", "expected to have cleaned the egg, last action was {last}");
    Ok(cur)
}

// ---------------------------------------------------------------------------
// Top-k against exhaustive enumeration.

/// Every cycle-free path from the initial state to a goal state with at most
/// `bound` actions; goal states end a path.
pub fn brute_force_plans(domain: &DomainDef, problem: &ProblemDef, bound: usize) -> Vec<(usize, Vec<String>)> {
    let actions = ground(domain, problem);
    let mut out = Vec::new();
    let mut stack = vec![(problem.init.clone(), Vec::<String>::new(), vec![problem.init.clone()])];
    while let Some((s, path, seen)) = stack.pop() {
        if problem.goal_satisfied_by(&s) {
            out.push((path.len(), path));
            continue;
        }
        if path.len() == bound {
            continue;
        }
        for a in actions.iter().filter(|a| applicable(&s, a)) {
            let next = apply(&s, a).expect("applicable");
            if seen.contains(&next) {
                continue;
            }
            let mut p = path.clone();
            p.push(a.label());
            let mut v = seen.clone();
            v.push(next.clone());
            stack.push((next, p, v));
        }
    }
    out.sort();
    out
}

pub fn topk_matches_brute_force() -> Check {
    let d = domains::blocksworld();
    let mut instances = 0;
    let mut compared = 0;
    let mut slowest = 0.0f64;
    for n in [2, 3] {
        for seed in 0..5 {
            let inst = gen_blocksworld(n, seed).map_err(|e| e.to_string())?;
            let t = Instant::now();
            let r = solve_topk(&d, &inst.problem, 10, 200_000).map_err(|e| format!("n={n} seed={seed}: {e}"))?;
            let secs = t.elapsed().as_secs_f64();
            slowest = slowest.max(secs);
            ensure!(secs < 5.0, "n={n} seed={seed}: top-k took {secs:.2}s");
            let bound = r.plans.iter().map(|p| p.cost as usize).max().unwrap_or(0);
            let got: Vec<(usize, Vec<String>)> = r.plans.iter().map(|p| (p.cost as usize, p.labels())).collect();
            let all = brute_force_plans(&d, &inst.problem, if r.exhausted { usize::MAX / 2 } else { bound });
            ensure!(all.len() >= got.len(), "n={n} seed={seed}: brute force found fewer plans");
            let mut want: Vec<_> = all.clone();
            want.truncate(10);
            let got_set: BTreeSet<_> = got.iter().cloned().collect();
            let want_set: BTreeSet<_> = want.iter().cloned().collect();
            ensure!(got_set == want_set, "n={n} seed={seed}: plan sets differ\n got {got:?}\n want {want:?}");
            instances += 1;
            compared += got.len();
        }
    }
    Ok(format!("{instances} instances, {compared} plans equal to brute force, slowest {slowest:.3}s"))
}

// ---------------------------------------------------------------------------
// Predicate evaluation against the symbolic interpreter.

fn random_walks(domain: &DomainDef, kind: DomainKind, target: usize) -> Result<usize, String> {
    let robot = RobotModel::default();
    let config = PlannerConfig::default();
    let refiner = Refiner { robot: &robot, domain, config: &config };
    let sim = Simulator { robot: &robot, domain };
    let mut executed = 0;
    let mut seed = 0;
    while executed < target {
        ensure!(seed < 200, "{kind}: only {executed} executions after {seed} walks");
        let inst = match kind {
            DomainKind::Blocksworld => gen_blocksworld(4, seed),
            DomainKind::Kitchen => gen_kitchen(1, seed),
        }
        .map_err(|e| e.to_string())?;
        let actions = ground(domain, &inst.problem);
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let mut world = WorldState::new(inst.scene.clone(), home_config());
        let mut s = evaluate_predicates(&world, domain);
        ensure!(s == inst.problem.init, "{kind} seed {seed}: initial world disagrees with the problem");
        for _ in 0..12 {
            let options: Vec<_> = actions.iter().filter(|a| applicable(&s, a)).collect();
            let mut moved = false;
            for _ in 0..4 {
                let a = options[rng.random_range(0..options.len())];
                let Ok(b) = refiner.refine_action(a, &world, &mut rng, FaultSite::none()) else { continue };
                let out = sim.execute(&world, &b);
                if !out.violations.is_empty() {
                    continue;
                }
                let expected = apply(&s, a).map_err(|e| e.to_string())?;
                let got = evaluate_predicates(&out.next, domain);
                ensure!(got == expected, "{kind} seed {seed}: after {} the world gives {got} but the interpreter gives {expected}", a.label());
                s = expected;
                world = out.next;
                executed += 1;
                moved = true;
                break;
            }
            if !moved {
                break;
            }
        }
        seed += 1;
    }
    Ok(executed)
}

pub fn predicates_match_interpreter() -> Check {
    let bw = random_walks(&domains::blocksworld(), DomainKind::Blocksworld, 250)?;
    let k = random_walks(&domains::kitchen(), DomainKind::Kitchen, 250)?;
    Ok(format!("{} executions ({bw} blocksworld, {k} kitchen), all exact", bw + k))
}

// ---------------------------------------------------------------------------
// Motion planning.

fn open_scene() -> Scene {
    Scene::new(Aabb { min: Vec3::new(-1.5, -1.5, 0.0), max: Vec3::new(1.5, 1.5, 1.5) })
}

fn cluttered(rng: &mut ChaCha8Rng) -> Scene {
    let mut s = open_scene();
    for i in 0..6 {
        let half = Vec3::new(rng.random_range(0.02..0.08), rng.random_range(0.02..0.08), rng.random_range(0.02..0.15));
        let p = Pose::new(rng.random_range(-0.5..0.5), rng.random_range(-0.2..0.6), rng.random_range(0.0..0.7), rng.random_range(-1.0..1.0));
        s.insert(BoxObject::new(&format!("box{i}"), half, p, [90, 90, 90]).fixed());
    }
    s
}

fn free_config(req: &MotionRequest, rng: &mut ChaCha8Rng) -> Config {
    loop {
        let q = req.robot.random_config(rng);
        if req.checker().is_free(&q) {
            return q;
        }
    }
}

/// Validates every stored trajectory of a plan against the world it starts in.
pub fn plan_trajectories_valid(file: &PlanFile) -> Result<usize, String> {
    let sim = Simulator { robot: &file.robot, domain: &kdtamp_core::pddl::parse_domain(&file.domain).map_err(|e| e.to_string())? };
    let mut world = file.root.clone();
    for (i, step) in file.steps.iter().enumerate() {
        let checker = CollisionChecker::new(&file.robot, &world.scene, world.attachment.as_ref(), MOTION_MARGIN);
        validate_trajectory(&step.binding.trajectory, &checker).map_err(|e| format!("step {i} ({}): {e:?}", step.action))?;
        world = sim.execute(&world, &step.binding).next;
    }
    Ok(file.steps.len())
}

pub fn motion_is_sound() -> Check {
    let robot = RobotModel::default();
    let empty = open_scene();
    let mut solved = 0;
    let mut checked = 0;
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut req = MotionRequest { robot: &robot, scene: &empty, start: Config::zeros(), goal: Config::zeros(), attached: None, margin: MOTION_MARGIN };
        req.start = free_config(&req, &mut rng);
        req.goal = free_config(&req, &mut rng);
        let t = plan_rrt_connect(&req, &mut rng, DEFAULT_MAX_ITERS).map_err(|e| format!("empty scene seed {seed}: {e:?}"))?;
        validate_trajectory(&t, &req.checker()).map_err(|e| format!("empty scene seed {seed}: {e:?}"))?;
        solved += 1;
        checked += 1;
    }
    for seed in 0..60 {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
        let scene = cluttered(&mut rng);
        let mut req = MotionRequest { robot: &robot, scene: &scene, start: Config::zeros(), goal: Config::zeros(), attached: None, margin: MOTION_MARGIN };
        req.start = free_config(&req, &mut rng);
        req.goal = free_config(&req, &mut rng);
        if let Ok(t) = plan_rrt_connect(&req, &mut rng, DEFAULT_MAX_ITERS) {
            validate_trajectory(&t, &req.checker()).map_err(|e| format!("clutter seed {seed}: {e:?}"))?;
            checked += 1;
        }
    }
    let mut steps = 0;
    for (domain, n) in [(DomainKind::Blocksworld, 3), (DomainKind::Kitchen, 2)] {
        for seed in 0..3 {
            let (ok, file) = plan_instance(InstanceSpec { domain, n, seed }, &mut HeuristicAdvisor)?;
            if ok {
                steps += plan_trajectories_valid(&file)?;
            }
        }
    }
    Ok(format!("empty scene {solved}/100, {checked} planner trajectories and {steps} plan steps valid"))
}

// ---------------------------------------------------------------------------
// Replanning under injected faults.

pub fn transient_faults_recover() -> Check {
    let d = domains::kitchen();
    let p = kitchen_egg_problem();
    let robot = RobotModel::default();
    let scene = gen_kitchen(1, 0).map_err(|e| e.to_string())?.scene;
    let mut s = Search::new(&d, &p, &robot, &scene, PlannerConfig::default()).map_err(|e| e.to_string())?;
    let labels = labels_at(&s, 0);
    let faults = Faults(labels.iter().map(|l| Fault { action: l.clone(), stage: Stage::Motion, node: Some(0), attempts: Some(3) }).collect());
    s.faults = Some(&faults);
    let mut adv = ScriptedAdvisor::default();
    let r = s.run(&mut adv);
    ensure!(r.success, "run failed: {:?}", r.reason);
    ensure!(s.tree.nodes[0].retry_count == 3, "root retried {} times", s.tree.nodes[0].retry_count);
    ensure!(r.stats.retries == 3 && r.stats.backtracks == 0, "retries {} backtracks {}", r.stats.retries, r.stats.backtracks);
    ensure!(adv.queries(QueryKind::SelectBacktrack).count() == 0, "a backtrack query was sent");
    Ok(format!("recovered after {} retries with no backtrack", r.stats.retries))
}

pub fn persistent_faults_backtrack_once() -> Check {
    let d = domains::kitchen();
    let p = kitchen_egg_problem();
    let robot = RobotModel::default();
    let scene = gen_kitchen(1, 0).map_err(|e| e.to_string())?.scene;
    let mut s = Search::new(&d, &p, &robot, &scene, PlannerConfig::default()).map_err(|e| e.to_string())?;
    let mut adv = ScriptedAdvisor::new(Script { successor: vec![], backtrack: vec![ScriptStep::Choice(0)] });
    let node = drive_to_cleaned_egg(&mut s, &mut adv)?;
    let labels = labels_at(&s, node);
    ensure!(labels.len() >= 4, "only {} actions at the faulted node", labels.len());
    let stages = [Stage::Goal, Stage::Ik, Stage::Motion, Stage::Execution];
    let faults = Faults(labels.iter().enumerate().map(|(i, l)| Fault { action: l.clone(), stage: stages[i % 4], node: Some(node), attempts: None }).collect());
    s.faults = Some(&faults);
    let r = s.run_from(node, &mut adv);
    ensure!(r.success, "run failed after backtracking: {:?}", r.reason);
    let queries: Vec<&AdvisorQuery> = adv.queries(QueryKind::SelectBacktrack).collect();
    ensure!(queries.len() == 1, "{} backtrack queries", queries.len());
    let q = queries[0];
    ensure!(q.current_node == node, "query names node {}", q.current_node);
    ensure!(q.feedback.len() == labels.len(), "{} feedback entries for {} actions", q.feedback.len(), labels.len());
    for (i, f) in q.feedback.iter().enumerate() {
        ensure!(f.action == labels[i], "feedback {i} is for {}", f.action);
        ensure!(f.violation.category == stages[i % 4].category(), "{} classified as {}", f.action, f.violation);
    }
    let cats: BTreeSet<Category> = q.feedback.iter().map(|f| f.violation.category).collect();
    ensure!(cats.len() == 4, "categories {cats:?}");
    ensure!(r.stats.backtracks == 1, "{} backtracks", r.stats.backtracks);
    ensure!(r.stats.retries == 5, "{} retries", r.stats.retries);
    Ok(format!("one backtrack query with {} violations in 4 categories", q.feedback.len()))
}

pub fn invalid_replies_fall_back() -> Check {
    let d = domains::kitchen();
    let p = kitchen_egg_problem();
    let robot = RobotModel::default();
    let scene = gen_kitchen(1, 0).map_err(|e| e.to_string())?.scene;
    let mut s = Search::new(&d, &p, &robot, &scene, PlannerConfig::default()).map_err(|e| e.to_string())?;
    let mut adv = ScriptedAdvisor::new(Script { successor: vec![ScriptStep::Choice(77)], backtrack: vec![ScriptStep::Choice(9999)] });
    let node = drive_to_cleaned_egg(&mut s, &mut adv)?;
    ensure!(s.stats.fallbacks == 1, "{} fallbacks after a bad successor id", s.stats.fallbacks);
    let labels = labels_at(&s, node);
    let faults = Faults(labels.iter().map(|l| Fault { action: l.clone(), stage: Stage::Goal, node: Some(node), attempts: None }).collect());
    s.faults = Some(&faults);
    let r = s.run_from(node, &mut adv);
    ensure!(r.success, "run failed: {:?}", r.reason);
    ensure!(r.stats.fallbacks == 2, "{} fallbacks", r.stats.fallbacks);
    ensure!(s.tree.well_formed(), "tree is malformed");
    Ok("bad successor and backtrack ids fell back; run succeeded".into())
}

// ---------------------------------------------------------------------------
// End to end.

pub fn plan_instance(spec: InstanceSpec, advisor: &mut dyn Advisor) -> Result<(bool, PlanFile), String> {
    plan_instance_with(spec, advisor, PlannerConfig { seed: spec.seed, timeout: 120.0, ..PlannerConfig::default() })
}

pub fn plan_instance_with(spec: InstanceSpec, advisor: &mut dyn Advisor, config: PlannerConfig) -> Result<(bool, PlanFile), String> {
    let inst = kdtamp_core::bench::generate(spec).map_err(|e| e.to_string())?;
    let scene = SceneFile { scene: inst.scene, robot: RobotModel::default() };
    let (r, f) = plan(spec.domain.domain_text(), &inst.problem_text, &scene, config, advisor).map_err(|e| format!("{spec:?}: {e}"))?;
    Ok((r.success, f))
}

pub struct Suite {
    pub rates: BTreeMap<DomainKind, (usize, usize)>,
    pub plans: Vec<(InstanceSpec, PlanFile)>,
    pub seconds: f64,
}

pub fn desk_suite() -> Result<Suite, String> {
    let t = Instant::now();
    let mut rates = BTreeMap::new();
    let mut plans = Vec::new();
    for domain in [DomainKind::Blocksworld, DomainKind::Kitchen] {
        for seed in 0..10 {
            let spec = InstanceSpec { domain, n: 3, seed };
            let (ok, file) = plan_instance(spec, &mut HeuristicAdvisor)?;
            let e = rates.entry(domain).or_insert((0, 0));
            e.1 += 1;
            if ok {
                e.0 += 1;
                plans.push((spec, file));
            }
        }
    }
    Ok(Suite { rates, plans, seconds: t.elapsed().as_secs_f64() })
}

pub fn suite_success(s: &Suite) -> Check {
    let (bw, bn) = s.rates[&DomainKind::Blocksworld];
    let (k, kn) = s.rates[&DomainKind::Kitchen];
    let summary = format!("blocksworld {bw}/{bn}, kitchen {k}/{kn}, {:.1}s", s.seconds);
    ensure!(bw * 10 >= bn * 8, "{summary}: blocksworld below 80%");
    ensure!(k * 10 >= kn * 6, "{summary}: kitchen below 60%");
    ensure!(s.seconds < 1800.0, "{summary}: over 30 minutes");
    Ok(summary)
}

pub fn successes_replay(s: &Suite) -> Check {
    ensure!(!s.plans.is_empty(), "no successful runs to replay");
    for (spec, file) in &s.plans {
        let report = replay(file).map_err(|e| format!("{spec:?}: {e}"))?;
        ensure!(report.ok(), "{spec:?}: {} violations, goal satisfied {}", report.violations.len(), report.goal_satisfied);
        let reread: PlanFile = serde_json::from_str(&file.to_json()).map_err(|e| e.to_string())?;
        ensure!(replay(&reread).map_err(|e| e.to_string())?.ok(), "{spec:?}: plan file does not survive a round trip");
    }
    Ok(format!("{}/{} successful plans replay and satisfy the goal", s.plans.len(), s.plans.len()))
}

const DETERMINISM_SCRIPT: &str = r#"{"successor": [1, "heuristic", 0], "backtrack": ["heuristic"]}"#;

fn csv_rows(spec: InstanceSpec, script: &Path, dir: &Path) -> Result<(Vec<u8>, Vec<u8>), String> {
    let planner = PlannerConfig { timeout: 120.0, ..PlannerConfig::default() };
    let r = run_instance(spec, &AdvisorSpec::Scripted(script.to_path_buf()), &planner, Some(dir));
    let mut csv = Vec::new();
    write_runs(&mut csv, &[r]).map_err(|e| e.to_string())?;
    let plan = std::fs::read(dir.join("plan.json")).map_err(|e| format!("{spec:?}: {e}"))?;
    Ok((plan, csv))
}

pub fn runs_are_deterministic() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let script = tmp.path().join("script.json");
    std::fs::write(&script, DETERMINISM_SCRIPT).map_err(|e| e.to_string())?;
    let mut bytes = 0;
    for spec in [InstanceSpec { domain: DomainKind::Blocksworld, n: 4, seed: 1 }, InstanceSpec { domain: DomainKind::Kitchen, n: 2, seed: 4 }] {
        let a = csv_rows(spec, &script, &tmp.path().join(format!("{}-a", spec.domain)))?;
        let b = csv_rows(spec, &script, &tmp.path().join(format!("{}-b", spec.domain)))?;
        ensure!(a.0 == b.0, "{spec:?}: plan files differ");
        ensure!(a.1 == b.1, "{spec:?}: CSV rows differ");
        bytes += a.0.len();
    }
    Ok(format!("plan files ({bytes} bytes) and CSV rows identical across runs"))
}

// ---------------------------------------------------------------------------
// Rendering.

pub fn fixture_world() -> WorldState {
    let scene = gen_kitchen(2, 0).expect("valid size").scene;
    let mut w = WorldState::new(scene, home_config());
    w.set_config(&RobotModel::default(), home_config());
    w
}

pub fn golden_path(view: View) -> PathBuf {
    manifest_dir().join("tests/golden").join(format!("kitchen_{}.png", view.name()))
}

/// Compares the four views with the stored images; `UPDATE_GOLDEN=1`
/// rewrites them instead.
pub fn golden_images_match() -> Check {
    let world = fixture_world();
    let robot = RobotModel::default();
    let update = std::env::var_os("UPDATE_GOLDEN").is_some();
    for (view, img) in render_all(&world, Some(&robot)) {
        let png = img.to_png();
        let path = golden_path(view);
        if update {
            std::fs::create_dir_all(path.parent().expect("has parent")).map_err(|e| e.to_string())?;
            std::fs::write(&path, &png).map_err(|e| e.to_string())?;
        }
        let want = std::fs::read(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        ensure!(want == png, "{} view differs from {}", view.name(), path.display());
        let again = kdtamp_core::render::render_view(&world, Some(&robot), &kdtamp_core::render::ViewSpec::new(view)).to_png();
        ensure!(again == png, "{} view is not stable between renders", view.name());
    }
    Ok("4 views byte-identical to the golden images".into())
}

// ---------------------------------------------------------------------------
// Remote advisor protocol over a recorded cassette.

pub fn cassette() -> Result<Cassette, String> {
    let path = manifest_dir().join("tests/fixtures/advisor_cassette.json");
    let text = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| e.to_string())
}

fn user_parts(body: &Value) -> (Vec<String>, Vec<String>) {
    let mut texts = Vec::new();
    let mut images = Vec::new();
    for part in body.pointer("/messages/1/content").and_then(Value::as_array).into_iter().flatten() {
        match part["type"].as_str() {
            Some("text") => texts.push(part["text"].as_str().unwrap_or_default().to_string()),
            Some("image_url") => images.push(part.pointer("/image_url/url").and_then(Value::as_str).unwrap_or_default().to_string()),
            _ => {}
        }
    }
    (texts, images)
}

fn check_images(images: &[String], expected: usize) -> Result<(), String> {
    use base64::Engine as _;
    ensure!(images.len() == expected, "{} images, expected {expected}", images.len());
    for url in images {
        let data = url.strip_prefix("data:image/png;base64,").ok_or("image is not a PNG data URI")?;
        let png = base64::engine::general_purpose::STANDARD.decode(data).map_err(|e| e.to_string())?;
        ensure!(png.starts_with(b"\x89PNG\r\n\x1a\n"), "image data is not a PNG");
    }
    Ok(())
}

pub fn successor_prompt_path() -> PathBuf {
    manifest_dir().join("tests/golden/successor_prompt.txt")
}

pub fn cassette_protocol() -> Check {
    let transport = Arc::new(CassetteTransport::replay(cassette()?));
    let config = RemoteConfig { model: "gpt-4o".into(), ..RemoteConfig::new("http://advisor.invalid/v1/chat/completions") };
    let mut remote = RemoteAdvisor::new(config, Box::new(transport.clone()));
    let log = tempfile::tempdir().map_err(|e| e.to_string())?;
    remote.log_dir = Some(log.path().to_path_buf());

    let d = domains::kitchen();
    let p = kitchen_egg_problem();
    let robot = RobotModel::default();
    let scene = gen_kitchen(1, 0).map_err(|e| e.to_string())?.scene;
    let mut s = Search::new(&d, &p, &robot, &scene, PlannerConfig::default()).map_err(|e| e.to_string())?;

    // Successor choice at the root.
    let first = child(s.expand(0, &mut remote))?;
    let action = s.tree.nodes[first].incoming.as_ref().map(|b| b.action.label()).unwrap_or_default();
    ensure!(action == "(pickup egg table)", "reply chose candidate 4 but the planner took {action}");
    let reqs = transport.requests();
    ensure!(reqs.len() == 1, "{} requests after one query", reqs.len());
    let body = &reqs[0];
    ensure!(body["model"] == "gpt-4o" && body["temperature"] == 0.0, "model or temperature missing");
    ensure!(body.pointer("/metadata/prompt_version").and_then(Value::as_str) == Some("kdtamp-advisor/1"), "prompt version missing");
    let system = body.pointer("/messages/0/content").and_then(Value::as_str).unwrap_or_default();
    ensure!(system.contains("(domain kitchen)") && system.contains("(cooked ?f - food)"), "system prompt lacks the domain");
    let (texts, images) = user_parts(body);
    let candidates = labels_at(&s, 0).len();
    check_images(&images, 4 * (1 + candidates))?;
    ensure!(texts[0].contains("Goal: (cooked egg)"), "goal slot missing");
    ensure!(texts[0].contains("- 4: (pickup egg table)"), "candidate list missing");
    ensure!(texts[0].contains("CHOICE: <candidate index>"), "reply format missing");
    let prompt = format!("{system}\n\n---\n\n{}", texts[0]);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(successor_prompt_path(), &prompt).map_err(|e| e.to_string())?;
    }
    let golden = std::fs::read_to_string(successor_prompt_path()).map_err(|e| e.to_string())?;
    ensure!(golden == prompt, "successor prompt differs from the golden text");

    // Backtrack query whose reply is malformed.
    let mut heuristic = HeuristicAdvisor;
    let node = {
        let a = child(s.expand(first, &mut heuristic))?;
        child(s.expand(a, &mut heuristic))?
    };
    let labels = labels_at(&s, node);
    let stages = [Stage::Goal, Stage::Ik, Stage::Motion, Stage::Execution];
    let faults = Faults(labels.iter().enumerate().map(|(i, l)| Fault { action: l.clone(), stage: stages[i % 4], node: Some(node), attempts: None }).collect());
    s.faults = Some(&faults);
    let Expansion::AllFailed(fb) = s.expand(node, &mut remote) else {
        return Err("faulted node expanded".into());
    };
    let resume = s.replan(node, &mut remote, fb).ok_or("no node to resume from")?;
    ensure!(s.stats.fallbacks == 1, "malformed reply did not fall back ({} fallbacks)", s.stats.fallbacks);
    let reqs = transport.requests();
    ensure!(reqs.len() == 2, "{} requests after the backtrack query", reqs.len());
    let (texts, images) = user_parts(&reqs[1]);
    check_images(&images, 4)?;
    let text = &texts[0];
    ensure!(text.contains("Goal: (cooked egg)") && text.contains(&format!("Failed node: {node}")), "goal or node slot missing");
    for cat in ["goal-collision", "ik-failure", "motion-failure", "execution-inconsistency"] {
        ensure!(text.contains(cat), "feedback lacks {cat}");
    }
    let tree = text.split("```json\n").nth(1).and_then(|t| t.split("\n```").next()).ok_or("tree JSON slot missing")?;
    let tree: Value = serde_json::from_str(tree).map_err(|e| format!("tree JSON: {e}"))?;
    ensure!(tree["nodes"].as_array().map(Vec::len) == Some(s.tree.nodes.len()), "tree JSON has the wrong node count");
    let mut q = AdvisorQuery {
        kind: QueryKind::SelectBacktrack,
        description: String::new(),
        goal_description: "(cooked egg)".into(),
        current_node: node,
        images: Vec::new(),
        candidates: Vec::new(),
        tree_json: Some(s.tree.to_json()),
        feedback: Vec::new(),
        options: s.tree.nodes.iter().filter(|n| n.id != node).map(|n| n.id).collect(),
    };
    let expected = heuristic_select_backtrack(&q).map_err(|e| e.to_string())?.choice;
    ensure!(resume == expected, "fell back to {resume}, heuristic picks {expected}");

    // Remaining replies exercise the strict parser directly.
    q.tree_json = Some("{}".into());
    ensure!(matches!(remote.advise(&q), Err(AdvisorError::Malformed(_))), "two choice lines accepted");
    ensure!(matches!(remote.advise(&q), Err(AdvisorError::Malformed(_))), "non-JSON body accepted");
    let r = remote.advise(&q).map_err(|e| e.to_string())?;
    ensure!(r.choice == 0 && r.rationale == "Clear space from the root first.", "valid reply misparsed: {r:?}");
    ensure!(matches!(remote.advise(&q), Err(AdvisorError::Transport(_))), "exhausted cassette did not error");
    for f in ["001_request.json", "001_reply.txt", "002_error.txt", "005_reply.txt", "006_error.txt"] {
        ensure!(log.path().join("advisor").join(f).exists(), "advisor log {f} missing");
    }
    Ok(format!("{} requests assembled and replies parsed strictly with fallback", transport.requests().len()))
}
