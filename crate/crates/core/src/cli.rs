//! The `coordlab` command line. Exit codes: 0 success, 1 usage error,
//! 2 runtime failure.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::approximator::PolicyParams;
use crate::checkpoint::load_policy;
use crate::config::{annotated_default, default_output_root, RunConfig};
use crate::evalkit::{self, emit_report, load_reports, EvalReport, PartnerRecord, SubgoalMatrix};
use crate::holdout::{build_holdouts, Group, HoldoutSet, Partner, PartnerActor};
use crate::pipeline::{self, coord_shape, eval_pool, RunDir, GT_COORD, SOLO, STAGE1, STAGE2};
use crate::population::Algo;
use crate::ppo::{play_episode, Actor, ActorRef};
use crate::approximator::SampleMode;
use crate::seeds::{derive_seed, derived_rng, tag};
use crate::world::planner::ScriptKind;
use crate::world::replay::{parse_replay_line, render_ascii, replay_header};
use crate::world::{create_env, Cell, Task};
use crate::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "coordlab", version, about = "Zero-shot coordination gridworld laboratory")]
pub struct Cli {
    /// Cap on rollout worker threads.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train stage 1 and stage 2 (or GT Coord / solo) into a run directory.
    Train(TrainArgs),
    /// Evaluate a run's coordination agent against holdout partners.
    EvalZsc(EvalZscArgs),
    /// Evaluate a run's coordination agent against its training partners.
    EvalTrainpop(EvalRunArgs),
    /// Sub-goal probability matrix of a coordination agent over holdouts.
    AnalyzeSubgoals(EvalZscArgs),
    /// Render a replay log; with --run, first record one from a run.
    Replay(ReplayArgs),
    /// Merge the evaluations of several runs into one report.
    Report(ReportArgs),
    /// Train the learned holdouts (GT Coord seeds) and write the registry.
    BuildHoldouts(BuildHoldoutsArgs),
    /// Print the annotated default configuration, or validate a file.
    Config(ConfigArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub algo: Option<String>,
    #[arg(long)]
    pub task: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Run directory; defaults to `$COORDLAB_OUT/<algo>_<task>_seed<seed>`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub deterministic: bool,
    /// Continue from the latest checkpoints in an existing run directory.
    #[arg(long)]
    pub resume: bool,
    /// Override one config key, e.g. `--set stage1.updates=10`.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Args)]
pub struct EvalRunArgs {
    /// Run directory holding the coordination agent.
    #[arg(long)]
    pub coord: PathBuf,
    #[arg(long)]
    pub episodes: Option<usize>,
    /// Output directory; defaults to a subdirectory of the run.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalZscArgs {
    #[arg(long)]
    pub coord: PathBuf,
    /// Holdout registry written by `build-holdouts`.
    #[arg(long)]
    pub holdouts: PathBuf,
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub episode_log: PathBuf,
    /// Record the log first: coordination agent of this run with its
    /// first training partner on evaluation layout `--episode`.
    #[arg(long)]
    pub run: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub episode: usize,
    /// Config used to rebuild the layout; defaults to the run's snapshot or
    /// the built-in defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Print only the summary line.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Run directories with `eval_trainpop/` and/or `eval_zsc/` results.
    #[arg(long, num_args = 1.., required = true)]
    pub runs: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BuildHoldoutsArgs {
    #[arg(long)]
    pub task: Option<String>,
    /// Comma-separated GT Coord seeds.
    #[arg(long, value_delimiter = ',', default_values_t = [9001u64, 9002, 9003, 9004])]
    pub seeds: Vec<u64>,
    /// Seeds of runs that will be evaluated; must not overlap `--seeds`.
    #[arg(long, value_delimiter = ',')]
    pub exclude: Vec<u64>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    #[arg(long)]
    pub check: Option<PathBuf>,
}

/// Parses `argv` (including the program name) and runs the command.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    if let Some(n) = cli.threads {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e @ (Error::UnknownName { .. } | Error::InvalidConfig(_) | Error::ConfigParse(_))) => {
            eprintln!("error: {e}");
            1
        }
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

/// Applies `section.key=value` overrides; values are parsed as TOML and
/// fall back to strings.
pub fn apply_overrides(cfg: &RunConfig, overrides: &[String]) -> Result<RunConfig> {
    if overrides.is_empty() {
        return Ok(cfg.clone());
    }
    let mut doc: toml::Table = toml::from_str(&cfg.to_toml()).map_err(|e| Error::ConfigParse(e.to_string()))?;
    for o in overrides {
        let (key, raw) = o.split_once('=').ok_or_else(|| Error::InvalidConfig(format!("override `{o}` is not KEY=VALUE")))?;
        let (section, field) =
            key.trim().split_once('.').ok_or_else(|| Error::InvalidConfig(format!("override key `{key}` is not SECTION.KEY")))?;
        let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
        doc.entry(section.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()))
            .as_table_mut()
            .ok_or_else(|| Error::InvalidConfig(format!("`{section}` is not a section")))?
            .insert(field.to_string(), value);
    }
    RunConfig::parse(&toml::to_string(&doc).map_err(|e| Error::ConfigParse(e.to_string()))?)
}

fn base_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Train(a) => train(a),
        Command::EvalTrainpop(a) => eval_trainpop(a),
        Command::EvalZsc(a) => eval_zsc(a, false),
        Command::AnalyzeSubgoals(a) => eval_zsc(a, true),
        Command::Replay(a) => replay(a),
        Command::Report(a) => report(a),
        Command::BuildHoldouts(a) => holdouts(a),
        Command::Config(a) => {
            match a.check {
                Some(p) => {
                    RunConfig::load(&p)?;
                    println!("{}: ok", p.display());
                }
                None => print!("{}", annotated_default()),
            }
            Ok(())
        }
    }
}

fn train(a: TrainArgs) -> Result<()> {
    let mut cfg = base_config(a.config.as_deref())?;
    if let Some(v) = a.algo {
        cfg.run.algo = v;
    }
    if let Some(v) = a.task {
        cfg.run.task = v;
    }
    if let Some(v) = a.seed {
        cfg.run.seed = v;
    }
    if a.deterministic {
        cfg.run.deterministic = true;
    }
    let cfg = apply_overrides(&cfg, &a.overrides)?;
    cfg.validate()?;
    let out = a
        .out
        .unwrap_or_else(|| default_output_root().join(format!("{}_{}_seed{}", cfg.run.algo, cfg.run.task, cfg.run.seed)));
    let summary = pipeline::run_training(&cfg, &out, a.resume)?;
    for s in &summary.stages {
        println!(
            "{}: {} updates, {} ticks{}",
            s.stage,
            s.updates,
            s.ticks,
            if s.stopped_early { " (stopped early)" } else { "" }
        );
    }
    println!("run directory: {}", out.display());
    Ok(())
}

/// A finished run: its config and the policy evaluated as coordination agent.
struct CoordRun {
    cfg: RunConfig,
    dir: PathBuf,
    coord: PolicyParams,
}

fn coord_stage(algo: Algo) -> &'static str {
    match algo {
        Algo::GtCoord | Algo::GtCoordState => GT_COORD,
        Algo::Solo => SOLO,
        _ => STAGE2,
    }
}

fn load_coord(dir: &Path) -> Result<CoordRun> {
    let cfg = RunConfig::load(&dir.join("config.toml"))
        .map_err(|e| Error::MissingArtifact(format!("run config in {}: {e}", dir.display())))?;
    let pool = eval_pool(&cfg)?;
    let stage = coord_stage(cfg.algo()?);
    let path = dir.join("checkpoints").join(stage).join("policy0_final.ckpt");
    if !path.exists() {
        return Err(Error::MissingArtifact(path.display().to_string()));
    }
    let coord = load_policy(&path, Some(&coord_shape(pool[0].obs_dim())))?;
    Ok(CoordRun { cfg, dir: dir.to_path_buf(), coord })
}

/// The partners the coordination agent trained with.
fn train_partners(run: &CoordRun, lock: &RunDir) -> Result<Vec<Partner>> {
    let algo = run.cfg.algo()?;
    let pool = eval_pool(&run.cfg)?;
    let obs = pool[0].obs_dim();
    match algo {
        Algo::GtCoord | Algo::GtCoordState => {
            let p = run.dir.join("checkpoints").join(GT_COORD).join("policy1_final.ckpt");
            let params = load_policy(&p, Some(&coord_shape(obs)))?;
            Ok(vec![Partner { id: "gtcoord_partner".into(), group: Group::TrainPop, actor: PartnerActor::Policy { params, latent: None, member: 0 } }])
        }
        Algo::Solo => Ok(vec![Partner { id: "noop".into(), group: Group::TrainPop, actor: PartnerActor::Scripted(ScriptKind::Noop) }]),
        _ => {
            let (_, shapes, disc) = pipeline::stage1_shapes(&run.cfg, obs)?;
            let s1 = pipeline::load_stage(lock, STAGE1, &shapes, disc)?;
            let (frozen, actors) = pipeline::stage2_partners(&run.cfg, lock, &s1)?;
            Ok(actors
                .into_iter()
                .enumerate()
                .map(|(i, a)| {
                    let Actor::Frozen { index, latent, member } = a else { unreachable!("stage-2 partners are frozen") };
                    Partner {
                        id: format!("member{i}"),
                        group: Group::TrainPop,
                        actor: PartnerActor::Policy { params: frozen[index].clone(), latent, member },
                    }
                })
                .collect())
        }
    }
}

fn episodes(run: &CoordRun, arg: Option<usize>) -> usize {
    arg.unwrap_or(run.cfg.eval.episodes)
}

fn eval_trainpop(a: EvalRunArgs) -> Result<()> {
    let run = load_coord(&a.coord)?;
    let lock = RunDir::open(&run.dir)?;
    let partners = train_partners(&run, &lock)?;
    let n = episodes(&run, a.episodes);
    let pool = eval_pool(&run.cfg)?;
    let recs = evalkit::evaluate_partners(&run.coord, &partners, &pool, n, run.cfg.eval.seed)?;
    let report = EvalReport::new(&run.cfg.run.algo, &run.cfg.run.task, run.cfg.run.seed, n, recs, Vec::new());
    let out = a.out.unwrap_or_else(|| run.dir.join("eval_trainpop"));
    print_records(&report.train_pop);
    emit_report(&[report], &out)?;
    lock.write_manifest()?;
    println!("wrote {}", out.display());
    Ok(())
}

fn eval_zsc(a: EvalZscArgs, subgoals_only: bool) -> Result<()> {
    let run = load_coord(&a.coord)?;
    let lock = RunDir::open(&run.dir)?;
    let set = HoldoutSet::load(&a.holdouts)?;
    if set.task != run.cfg.run.task {
        return Err(Error::Incompatible(format!("holdouts are for {}, run is {}", set.task, run.cfg.run.task)));
    }
    if set.seeds().contains(&run.cfg.run.seed) {
        return Err(Error::Incompatible(format!("run seed {} is also a holdout seed", run.cfg.run.seed)));
    }
    let partners = set.partners(&run.coord.shape)?;
    let n = episodes(&run, a.episodes);
    let pool = eval_pool(&run.cfg)?;
    let recs = evalkit::evaluate_partners(&run.coord, &partners, &pool, n, run.cfg.eval.seed)?;
    if subgoals_only {
        let m = SubgoalMatrix::from_records(&recs);
        let out = a.out.unwrap_or_else(|| run.dir.join("subgoals"));
        fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
        let json = out.join("subgoals.json");
        fs::write(&json, serde_json::to_string_pretty(&m).expect("matrix serializes") + "\n").map_err(|e| Error::io(&json, e))?;
        let svg = out.join("subgoals.svg");
        let title = format!("{} / {}: p(event by coordination agent | partner)", run.cfg.run.algo, run.cfg.run.task);
        fs::write(&svg, evalkit::render_heatmap_svg(&title, &m)).map_err(|e| Error::io(&svg, e))?;
        for (i, row) in m.rows.iter().enumerate() {
            let cells: Vec<String> = m.cells[i].iter().map(|v| format!("{v:.2}")).collect();
            println!("{row:>8} {}", cells.join(" "));
        }
        lock.write_manifest()?;
        println!("wrote {}", out.display());
        return Ok(());
    }
    let report = EvalReport::new(&run.cfg.run.algo, &run.cfg.run.task, run.cfg.run.seed, n, Vec::new(), recs);
    print_records(&report.zsc);
    let out = a.out.unwrap_or_else(|| run.dir.join("eval_zsc"));
    emit_report(&[report], &out)?;
    lock.write_manifest()?;
    println!("wrote {}", out.display());
    Ok(())
}

fn print_records(recs: &[PartnerRecord]) {
    for r in recs {
        let gain = r.efficiency_gain.map_or_else(|| "missing".to_string(), |g| format!("{g:+.1}%"));
        println!(
            "{:<24} success {:.3}  collisions {:.3}  efficiency {}",
            r.partner, r.success_rate, r.collision_rate, gain
        );
    }
}

fn report(a: ReportArgs) -> Result<()> {
    let mut merged = Vec::new();
    for dir in &a.runs {
        let mut parts = Vec::new();
        for sub in ["eval_trainpop", "eval_zsc"] {
            let p = dir.join(sub).join("report.json");
            if p.exists() {
                parts.extend(load_reports(&p)?);
            }
        }
        let Some(first) = parts.first() else {
            return Err(Error::MissingArtifact(format!("no evaluation results in {}", dir.display())));
        };
        let (method, task, seed) = (first.method.clone(), first.task.clone(), first.seed);
        let episodes = first.episodes_per_partner;
        let train_pop: Vec<_> = parts.iter().flat_map(|r| r.train_pop.clone()).collect();
        let zsc: Vec<_> = parts.iter().flat_map(|r| r.zsc.clone()).collect();
        merged.push(EvalReport::new(&method, &task, seed, episodes, train_pop, zsc));
    }
    emit_report(&merged, &a.out)?;
    print!("{}", fs::read_to_string(a.out.join("summary.csv")).map_err(|e| Error::io(&a.out, e))?);
    Ok(())
}

fn holdouts(a: BuildHoldoutsArgs) -> Result<()> {
    let mut cfg = base_config(a.config.as_deref())?;
    if let Some(t) = a.task {
        cfg.run.task = t;
    }
    let cfg = apply_overrides(&cfg, &a.overrides)?;
    cfg.validate()?;
    let out = a.out.unwrap_or_else(|| default_output_root().join(format!("holdouts_{}", cfg.run.task)));
    let (set, path) = build_holdouts(&cfg, &a.seeds, &a.exclude, &out)?;
    for agent in &set.agents {
        println!("{}", agent.id());
    }
    println!("registry: {}", path.display());
    Ok(())
}

fn replay(a: ReplayArgs) -> Result<()> {
    let cfg = match (&a.config, &a.run) {
        (Some(p), _) => RunConfig::load(p)?,
        (None, Some(run)) => RunConfig::load(&run.join("config.toml"))?,
        (None, None) => RunConfig::default(),
    };
    if let Some(dir) = &a.run {
        record_replay(dir, a.episode, &a.episode_log)?;
    }
    let text = fs::read_to_string(&a.episode_log).map_err(|e| Error::io(&a.episode_log, e))?;
    let header = text.lines().next().unwrap_or_default();
    let field = |name: &str| -> Option<String> {
        header.split_whitespace().find_map(|kv| kv.strip_prefix(&format!("{name}=")).map(str::to_string))
    };
    let (Some(task), Some(layout), Some(episode)) = (field("task"), field("layout_seed"), field("episode_seed")) else {
        return Err(Error::ConfigParse(format!("{}: missing replay header", a.episode_log.display())));
    };
    let parse_u64 = |s: String| s.parse::<u64>().map_err(|e| Error::ConfigParse(format!("replay header: {e}")));
    let task: Task = task.parse()?;
    let env = create_env(task, parse_u64(layout)?, &cfg.world_config())?;
    let (mut state, _) = env.reset(parse_u64(episode)?);
    let (mut total, mut ticks, mut events) = (0.0, 0u32, Vec::new());
    for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.starts_with('#') && !l.trim().is_empty()) {
        let rec = parse_replay_line(line)
            .ok_or_else(|| Error::ConfigParse(format!("{}:{}: malformed replay line", a.episode_log.display(), n + 1)))?;
        total += rec.reward;
        ticks = rec.tick;
        events.extend(rec.events.iter().cloned());
        for (agent, (x, y)) in rec.positions.iter().enumerate() {
            state.agents[agent].pos = Cell::new(*x, *y);
        }
        state.tick = rec.tick;
        if !a.quiet {
            println!("actions {:?}  reward {}  events {}", rec.actions, rec.reward, rec.events.join(";"));
            print!("{}", render_ascii(&state));
        }
    }
    println!("ticks {ticks}  return {total:.4}  events [{}]", events.join(", "));
    Ok(())
}

fn record_replay(dir: &Path, episode: usize, out: &Path) -> Result<()> {
    let run = load_coord(dir)?;
    let lock = RunDir::open(&run.dir)?;
    let partners = train_partners(&run, &lock)?;
    let partner = partners.first().ok_or(Error::Empty("training partners"))?;
    let pool = eval_pool(&run.cfg)?;
    let env = &pool[episode % pool.len()];
    let partner_ref = match &partner.actor {
        PartnerActor::Scripted(k) => ActorRef::Scripted(*k),
        PartnerActor::Policy { params, latent, member } => ActorRef::Policy { params, latent: *latent, member: *member },
    };
    let coord = ActorRef::Policy { params: &run.coord, latent: None, member: 0 };
    let seed = derive_seed(run.cfg.eval.seed, &[tag::EPISODE, episode as u64]);
    let mut rng = derived_rng(run.cfg.eval.seed, &[tag::EVAL, episode as u64]);
    let ep = play_episode(env, seed, [coord, partner_ref], SampleMode::Argmax, &mut rng, true)?;
    let mut text = replay_header(&run.cfg.run.task, env.layout_seed, seed);
    text.extend(ep.replay);
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(out, text).map_err(|e| Error::io(out, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run_command(["coordlab", "eval-zsc", "--holdouts", "x.json"]), 1);
        assert_eq!(run_command(["coordlab", "frobnicate"]), 1);
        assert_eq!(run_command(["coordlab", "train", "--algo", "nope", "--out", "/nonexistent/x"]), 1);
    }

    #[test]
    fn help_exits_zero() {
        assert_eq!(run_command(["coordlab", "--help"]), 0);
    }

    #[test]
    fn overrides_apply_and_validate() {
        let c = apply_overrides(&RunConfig::default(), &["stage1.updates=3".into(), "run.task=set_table".into()]).unwrap();
        assert_eq!(c.stage1.updates, 3);
        assert_eq!(c.run.task, "set_table");
        assert!(apply_overrides(&RunConfig::default(), &["stage1.bogus=3".into()]).is_err());
        assert!(apply_overrides(&RunConfig::default(), &["noequals".into()]).is_err());
    }

    #[test]
    fn missing_run_is_a_runtime_failure() {
        let tmp = tempfile::tempdir().unwrap();
        let reg = tmp.path().join("h.json");
        let code = run_command([
            "coordlab".into(),
            "eval-zsc".into(),
            "--coord".into(),
            tmp.path().join("missing").into_os_string(),
            "--holdouts".into(),
            reg.into_os_string(),
        ]);
        assert_eq!(code, 2);
    }
}
