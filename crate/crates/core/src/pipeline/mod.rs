//! Training orchestration: stage-1 population or behavior-policy training,
//! stage-2 coordination-agent training against the frozen stage-1 output,
//! and the GT Coord and solo reference trainers.

mod rundir;
mod trainer;

pub use rundir::{CsvLog, RunDir};

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::approximator::{Adam, AdamConfig, PolicyParams, PolicyShape, SampleMode};
use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::diversity::{in_warmup, DiscBuffer, DiscShape, Discriminator};
use crate::population::{fcp_checkpoint_set, wiring, Algo, Milestone, PairingSchedule, Wiring};
use crate::ppo::{play_episode, Actor, ActorRef, Seat, TrajediContext};
use crate::seeds::{derive_seed, derived_rng, tag};
use crate::world::planner::ScriptKind;
use crate::world::{create_env, Environment, NUM_ACTIONS};
use crate::{Error, Result};
use trainer::{run_loop, DiscState, LoopResult, LoopSetup};

/// Everything a finished stage leaves behind.
#[derive(Debug, Clone)]
pub struct StageArtifacts {
    pub stage: String,
    pub dir: PathBuf,
    /// `milestone/slot` (and `final/disc`) to file.
    pub checkpoints: BTreeMap<String, PathBuf>,
    pub training_csv: PathBuf,
    pub disc_csv: Option<PathBuf>,
    /// Final parameter sets, by slot.
    pub policies: Vec<PolicyParams>,
    pub disc: Option<Discriminator>,
    pub updates: u64,
    pub ticks: u64,
    pub heldout_disc_accuracy: Option<f64>,
    pub stopped_early: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct StageMarker {
    updates: u64,
    ticks: u64,
    stopped_early: bool,
    heldout_disc_accuracy: Option<f64>,
}

pub const STAGE1: &str = "stage1";
pub const STAGE2: &str = "stage2";
pub const GT_COORD: &str = "gtcoord";
pub const SOLO: &str = "solo";

pub fn build_pool(cfg: &RunConfig, seeds: &[u64]) -> Result<Arc<Vec<Environment>>> {
    let task = cfg.task()?;
    let world = cfg.world_config();
    let envs = seeds.iter().map(|&s| create_env(task, s, &world)).collect::<Result<Vec<_>>>()?;
    Ok(Arc::new(envs))
}

pub fn train_pool(cfg: &RunConfig) -> Result<Arc<Vec<Environment>>> {
    build_pool(cfg, &cfg.train_layout_seeds())
}

pub fn eval_pool(cfg: &RunConfig) -> Result<Arc<Vec<Environment>>> {
    build_pool(cfg, &cfg.eval_layout_seeds())
}

fn obs_dim(pool: &[Environment]) -> usize {
    pool[0].obs_dim()
}

fn marker_path(run: &RunDir, stage: &str) -> Result<PathBuf> {
    Ok(run.stage_dir(stage)?.join("complete.json"))
}

fn finish(run: &RunDir, stage: &str, r: LoopResult) -> Result<StageArtifacts> {
    let marker = StageMarker {
        updates: r.updates,
        ticks: r.ticks,
        stopped_early: r.stopped_early,
        heldout_disc_accuracy: r.last_heldout_accuracy,
    };
    let path = marker_path(run, stage)?;
    fs::write(&path, serde_json::to_string_pretty(&marker).expect("marker serializes"))
        .map_err(|e| Error::io(&path, e))?;
    Ok(StageArtifacts {
        stage: stage.to_string(),
        dir: run.stage_dir(stage)?,
        checkpoints: r.checkpoints,
        training_csv: r.training_csv,
        disc_csv: r.disc_csv,
        policies: r.learners,
        disc: r.disc,
        updates: r.updates,
        ticks: r.ticks,
        heldout_disc_accuracy: r.last_heldout_accuracy,
        stopped_early: r.stopped_early,
    })
}

/// Reloads a completed stage from its checkpoint directory.
pub fn load_stage(run: &RunDir, stage: &str, shapes: &[PolicyShape], disc: Option<DiscShape>) -> Result<StageArtifacts> {
    let dir = run.root().join("checkpoints").join(stage);
    let marker_file = dir.join("complete.json");
    let text = fs::read_to_string(&marker_file)
        .map_err(|_| Error::MissingArtifact(format!("{stage} has not completed ({})", marker_file.display())))?;
    let marker: StageMarker = serde_json::from_str(&text).map_err(|e| Error::ConfigParse(e.to_string()))?;
    let mut checkpoints = BTreeMap::new();
    let mut policies = Vec::new();
    for (slot, shape) in shapes.iter().enumerate() {
        for label in ["start", "middle", "end", "final"] {
            let p = dir.join(format!("policy{slot}_{label}.ckpt"));
            if p.exists() {
                checkpoints.insert(format!("{label}/{slot}"), p);
            }
        }
        let path = dir.join(format!("policy{slot}_final.ckpt"));
        if !path.exists() {
            return Err(Error::MissingArtifact(path.display().to_string()));
        }
        policies.push(Checkpoint::load(&path)?.to_policy(Some(shape))?);
    }
    let disc = match disc {
        Some(shape) => {
            let p = dir.join("disc_final.ckpt");
            let d = Checkpoint::load(&p)
                .map_err(|_| Error::MissingArtifact(p.display().to_string()))?
                .to_discriminator(Some(&shape))?;
            checkpoints.insert("final/disc".into(), p);
            Some(d)
        }
        None => None,
    };
    let disc_csv = run.path(format!("logs/{stage}_disc.csv"));
    Ok(StageArtifacts {
        stage: stage.to_string(),
        dir,
        checkpoints,
        training_csv: run.path(format!("logs/{stage}.csv")),
        disc_csv: disc_csv.exists().then_some(disc_csv),
        policies,
        disc,
        updates: marker.updates,
        ticks: marker.ticks,
        heldout_disc_accuracy: marker.heldout_disc_accuracy,
        stopped_early: marker.stopped_early,
    })
}

fn init_policies(cfg: &RunConfig, shape: PolicyShape, count: usize, stream: u64) -> Vec<PolicyParams> {
    (0..count)
        .map(|i| PolicyParams::init(shape, &mut derived_rng(cfg.run.seed, &[tag::INIT, stream, i as u64])))
        .collect()
}

fn disc_state(cfg: &RunConfig, classes: usize, alpha: f64) -> DiscState {
    let shape = DiscShape { hidden: cfg.discriminator.hidden, ..DiscShape::new(classes) };
    let disc = Discriminator::init(shape, &mut derived_rng(cfg.run.seed, &[tag::INIT, tag::DISC]));
    let adam = Adam::new(
        disc.data.len(),
        AdamConfig { lr: cfg.discriminator.lr, max_grad_norm: None, ..AdamConfig::default() },
    );
    DiscState {
        disc,
        adam,
        buffer: DiscBuffer::new(cfg.discriminator.buffer_capacity),
        rng: derived_rng(cfg.run.seed, &[tag::DISC]),
        alpha,
    }
}

fn learner_seat(w: &Wiring, member: usize) -> Seat {
    let m = w.member(member);
    Seat {
        actor: Actor::Learner { slot: m.slot, latent: m.latent, member: m.head },
        div_id: w.uses_discriminator().then_some(member),
    }
}

fn policy_ref<'a>(policies: &'a [PolicyParams], w: &Wiring, member: usize) -> ActorRef<'a> {
    let m = w.member(member);
    ActorRef::Policy { params: &policies[m.slot], latent: m.latent, member: m.head }
}

/// Discriminator accuracy on windows from freshly played episodes with
/// uniformly drawn member pairs. Only windows past the warm-up period count.
pub fn heldout_disc_accuracy(
    policies: &[PolicyParams],
    w: &Wiring,
    disc: &Discriminator,
    pool: &[Environment],
    episodes: usize,
    seed: u64,
) -> Result<f64> {
    let mut samples = Vec::new();
    for e in 0..episodes {
        let mut rng = derived_rng(seed, &[tag::HELDOUT, e as u64]);
        let pair = [rng.random_range(0..w.members), rng.random_range(0..w.members)];
        let env = &pool[e % pool.len()];
        let actors = [policy_ref(policies, w, pair[0]), policy_ref(policies, w, pair[1])];
        let ep = play_episode(env, rng.random(), actors, SampleMode::Sample, &mut rng, false)?;
        for (seat, windows) in ep.windows.into_iter().enumerate() {
            for (tick, win) in windows {
                if !in_warmup(tick, env.config.horizon) {
                    samples.push((win, pair[seat]));
                }
            }
        }
    }
    if samples.is_empty() {
        return Ok(0.0);
    }
    disc.accuracy(&samples)
}

pub fn stage1_wiring(cfg: &RunConfig) -> Result<Wiring> {
    wiring(&cfg.population_spec()?)
}

pub fn stage1_shapes(cfg: &RunConfig, obs_dim: usize) -> Result<(Wiring, Vec<PolicyShape>, Option<DiscShape>)> {
    let w = stage1_wiring(cfg)?;
    let shapes = vec![w.shape(obs_dim); w.param_sets];
    let disc =
        w.uses_discriminator().then(|| DiscShape { hidden: cfg.discriminator.hidden, ..DiscShape::new(w.members) });
    Ok((w, shapes, disc))
}

/// Stage 1: trains the population (or the latent-conditioned behavior
/// policy) with the algorithm's pairing schedule and diversity rewards.
pub fn train_stage1(cfg: &RunConfig, run: &RunDir, resume: bool) -> Result<StageArtifacts> {
    let pool = train_pool(cfg)?;
    let (w, shapes, disc_shape) = stage1_shapes(cfg, obs_dim(&pool))?;
    if resume && marker_path(run, STAGE1)?.exists() {
        return load_stage(run, STAGE1, &shapes, disc_shape);
    }
    let spec = cfg.population_spec()?;
    let mut schedule = PairingSchedule::new(spec);
    let learners = init_policies(cfg, shapes[0], w.param_sets, 1);
    let disc = w.uses_discriminator().then(|| disc_state(cfg, w.members, w.alpha));
    let trajedi = w.trajedi_alpha.map(|alpha| TrajediContext { members: w.members, alpha });
    let probe_pool = pool.clone();
    let probe_cfg = cfg.clone();
    let setup = LoopSetup {
        stage: STAGE1,
        section: cfg.stage1.clone(),
        stream: 1,
        learners,
        frozen: Vec::new(),
        disc,
        trajedi,
        assign: Box::new(move |update, envs, rng| {
            schedule
                .for_update(update, envs, rng)
                .iter()
                .map(|d| [learner_seat(&w, d.left), learner_seat(&w, d.right)])
                .collect()
        }),
        probe: Some(Box::new(move |learners, disc, update| {
            heldout_disc_accuracy(
                learners,
                &w,
                disc,
                &probe_pool,
                probe_cfg.discriminator.eval_episodes,
                derive_seed(probe_cfg.run.seed, &[tag::HELDOUT, update]),
            )
        })),
        resume,
    };
    let r = run_loop(cfg, run, pool, setup)?;
    finish(run, STAGE1, r)
}

/// Frozen partner pool for stage 2 and the actors that index into it.
pub fn stage2_partners(cfg: &RunConfig, run: &RunDir, stage1: &StageArtifacts) -> Result<(Vec<PolicyParams>, Vec<Actor>)> {
    let w = stage1_wiring(cfg)?;
    if cfg.algo()? == Algo::Fcp {
        let mut history = Vec::new();
        for m in Milestone::ALL {
            let mut members = Vec::new();
            for (slot, shape) in stage1.policies.iter().map(|p| p.shape).enumerate() {
                let path = stage1.dir.join(format!("policy{slot}_{}.ckpt", m.name()));
                if !path.exists() {
                    return Err(Error::MissingArtifact(format!("fcp checkpoint at {}%", m.percent())));
                }
                members.push(Checkpoint::load(&path)?.to_policy(Some(&shape))?);
            }
            history.push((m, members));
        }
        let pool = fcp_checkpoint_set(&history)?;
        let actors = (0..pool.len()).map(|index| Actor::Frozen { index, latent: None, member: 0 }).collect();
        let _ = run;
        return Ok((pool, actors));
    }
    let actors = (0..w.members)
        .map(|m| {
            let r = w.member(m);
            Actor::Frozen { index: r.slot, latent: r.latent, member: r.head }
        })
        .collect();
    Ok((stage1.policies.clone(), actors))
}

pub fn coord_shape(obs_dim: usize) -> PolicyShape {
    PolicyShape::new(obs_dim, 0, NUM_ACTIONS)
}

/// Stage 2: a fresh coordination agent trained on task reward against the
/// frozen stage-1 partners. The agent alternates seats across environments.
pub fn train_stage2(cfg: &RunConfig, run: &RunDir, stage1: &StageArtifacts, resume: bool) -> Result<StageArtifacts> {
    let pool = train_pool(cfg)?;
    let shape = coord_shape(obs_dim(&pool));
    if resume && marker_path(run, STAGE2)?.exists() {
        return load_stage(run, STAGE2, &[shape], None);
    }
    let (frozen, partners) = stage2_partners(cfg, run, stage1)?;
    if partners.is_empty() {
        return Err(Error::MissingArtifact("stage-1 partner pool is empty".into()));
    }
    let algo = cfg.algo()?;
    let period = if algo.is_bdp() { cfg.population.latent_resample_period } else { 1 };
    let mut current: Vec<Actor> = Vec::new();
    let setup = LoopSetup {
        stage: STAGE2,
        section: cfg.stage2.clone(),
        stream: tag::STAGE2,
        learners: init_policies(cfg, shape, 1, tag::STAGE2),
        frozen,
        disc: None,
        trajedi: None,
        assign: Box::new(move |update, envs, rng| {
            if update % period == 0 || current.len() != envs {
                current = (0..envs).map(|_| partners[rng.random_range(0..partners.len())]).collect();
            }
            let coord = Seat::new(Actor::Learner { slot: 0, latent: None, member: 0 });
            current
                .iter()
                .enumerate()
                .map(|(e, &p)| if e % 2 == 0 { [coord, Seat::new(p)] } else { [Seat::new(p), coord] })
                .collect()
        }),
        probe: None,
        resume,
    };
    let r = run_loop(cfg, run, pool, setup)?;
    finish(run, STAGE2, r)
}

/// Two separately parameterized policies trained together on the shared
/// reward; seat 0 is always policy 0.
pub fn train_gt_coord(cfg: &RunConfig, run: &RunDir, resume: bool) -> Result<StageArtifacts> {
    let pool = train_pool(cfg)?;
    let shape = coord_shape(obs_dim(&pool));
    if resume && marker_path(run, GT_COORD)?.exists() {
        return load_stage(run, GT_COORD, &[shape, shape], None);
    }
    let seats = [
        Seat::new(Actor::Learner { slot: 0, latent: None, member: 0 }),
        Seat::new(Actor::Learner { slot: 1, latent: None, member: 0 }),
    ];
    let setup = LoopSetup {
        stage: GT_COORD,
        section: cfg.stage1.clone(),
        stream: 3,
        learners: init_policies(cfg, shape, 2, 3),
        frozen: Vec::new(),
        disc: None,
        trajedi: None,
        assign: Box::new(move |_, envs, _| vec![seats; envs]),
        probe: None,
        resume,
    };
    let r = run_loop(cfg, run, pool, setup)?;
    finish(run, GT_COORD, r)
}

/// One policy trained with an idle partner.
pub fn train_solo(cfg: &RunConfig, run: &RunDir, resume: bool) -> Result<StageArtifacts> {
    let pool = train_pool(cfg)?;
    let shape = coord_shape(obs_dim(&pool));
    if resume && marker_path(run, SOLO)?.exists() {
        return load_stage(run, SOLO, &[shape], None);
    }
    let seats = [
        Seat::new(Actor::Learner { slot: 0, latent: None, member: 0 }),
        Seat::new(Actor::Scripted(ScriptKind::Noop)),
    ];
    let setup = LoopSetup {
        stage: SOLO,
        section: cfg.stage1.clone(),
        stream: 4,
        learners: init_policies(cfg, shape, 1, 4),
        frozen: Vec::new(),
        disc: None,
        trajedi: None,
        assign: Box::new(move |_, envs, _| vec![seats; envs]),
        probe: None,
        resume,
    };
    let r = run_loop(cfg, run, pool, setup)?;
    finish(run, SOLO, r)
}

/// What `run_training` produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub algo: String,
    pub task: String,
    pub seed: u64,
    pub stages: Vec<StageSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub stage: String,
    pub updates: u64,
    pub ticks: u64,
    pub stopped_early: bool,
    pub heldout_disc_accuracy: Option<f64>,
    pub final_checkpoints: Vec<String>,
}

impl StageSummary {
    fn from(a: &StageArtifacts, root: &Path) -> Self {
        let final_checkpoints = a
            .checkpoints
            .iter()
            .filter(|(k, _)| k.starts_with("final/"))
            .map(|(_, p)| p.strip_prefix(root).unwrap_or(p).to_string_lossy().into_owned())
            .collect();
        Self {
            stage: a.stage.clone(),
            updates: a.updates,
            ticks: a.ticks,
            stopped_early: a.stopped_early,
            heldout_disc_accuracy: a.heldout_disc_accuracy,
            final_checkpoints,
        }
    }
}

/// Runs every stage the configured algorithm needs in `out`, writing a
/// config snapshot, `train.json` and the manifest.
pub fn run_training(cfg: &RunConfig, out: &Path, resume: bool) -> Result<TrainSummary> {
    cfg.validate()?;
    let run = RunDir::open(out)?;
    let snapshot = run.path("config.toml");
    if resume && snapshot.exists() {
        let previous = RunConfig::load(&snapshot)?;
        if previous != *cfg {
            return Err(Error::InvalidConfig(format!(
                "{} was created with a different configuration",
                out.display()
            )));
        }
    } else {
        run.write("config.toml", cfg.to_toml())?;
    }
    let algo = cfg.algo()?;
    let mut stages = Vec::new();
    match algo {
        Algo::GtCoord | Algo::GtCoordState => stages.push(train_gt_coord(cfg, &run, resume)?),
        Algo::Solo => stages.push(train_solo(cfg, &run, resume)?),
        _ => {
            let s1 = train_stage1(cfg, &run, resume)?;
            let s2 = if cfg.stage2.updates > 0 { Some(train_stage2(cfg, &run, &s1, resume)?) } else { None };
            stages.push(s1);
            stages.extend(s2);
        }
    }
    let summary = TrainSummary {
        algo: algo.name().into(),
        task: cfg.run.task.clone(),
        seed: cfg.run.seed,
        stages: stages.iter().map(|s| StageSummary::from(s, run.root())).collect(),
    };
    run.write("train.json", serde_json::to_string_pretty(&summary).expect("summary serializes"))?;
    run.write_manifest()?;
    Ok(summary)
}
