//! Unseen evaluation partners: three non-reactive scripted agents and the
//! eight policies of four independently seeded GT Coord runs.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::approximator::{PolicyParams, PolicyShape};
use crate::checkpoint::{load_policy, params_digest};
use crate::config::RunConfig;
use crate::pipeline::{self, GT_COORD};
use crate::world::planner::{ScriptKind, ScriptedPlan};
use crate::world::{ActionId, Task, WorldState};
use crate::{Error, Result};

pub const REGISTRY_VERSION: u32 = 1;
pub const LEARNED_PER_RUN: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HoldoutSpec {
    Scripted { id: String, plan: ScriptKind },
    Learned { id: String, seed: u64, slot: usize, checkpoint: PathBuf, digest: String },
}

impl HoldoutSpec {
    pub fn id(&self) -> &str {
        match self {
            HoldoutSpec::Scripted { id, .. } | HoldoutSpec::Learned { id, .. } => id,
        }
    }

    pub fn is_scripted(&self) -> bool {
        matches!(self, HoldoutSpec::Scripted { .. })
    }
}

/// The registry file consumed by evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoldoutSet {
    pub version: u32,
    pub task: String,
    /// Whether learned members consume oracle predicate observations.
    pub oracle_state: bool,
    pub agents: Vec<HoldoutSpec>,
}

impl HoldoutSet {
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let text = serde_json::to_string_pretty(self).expect("registry serializes");
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let set: HoldoutSet = serde_json::from_str(&text).map_err(|e| Error::ConfigParse(format!("{}: {e}", path.display())))?;
        if set.version != REGISTRY_VERSION {
            return Err(Error::Incompatible(format!("holdout registry version {} (expected {REGISTRY_VERSION})", set.version)));
        }
        Ok(set)
    }

    pub fn seeds(&self) -> Vec<u64> {
        let mut s: Vec<u64> = self
            .agents
            .iter()
            .filter_map(|a| match a {
                HoldoutSpec::Learned { seed, .. } => Some(*seed),
                _ => None,
            })
            .collect();
        s.dedup();
        s
    }

    /// Loads every member; learned checkpoints are checked against `shape`
    /// and their recorded digest.
    pub fn partners(&self, shape: &PolicyShape) -> Result<Vec<Partner>> {
        self.agents
            .iter()
            .map(|a| {
                let actor = match a {
                    HoldoutSpec::Scripted { plan, .. } => PartnerActor::Scripted(*plan),
                    HoldoutSpec::Learned { checkpoint, digest, .. } => {
                        let p = load_policy(checkpoint, Some(shape))?;
                        if params_digest(&p.data) != *digest {
                            return Err(Error::Incompatible(format!("{} changed since registration", checkpoint.display())));
                        }
                        PartnerActor::Policy { params: p, latent: None, member: 0 }
                    }
                };
                Ok(Partner { id: a.id().to_string(), group: if a.is_scripted() { Group::Scripted } else { Group::Learned }, actor })
            })
            .collect()
    }
}

/// Which aggregate a partner's episodes count toward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    TrainPop,
    Scripted,
    Learned,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PartnerActor {
    Scripted(ScriptKind),
    Policy { params: PolicyParams, latent: Option<usize>, member: usize },
}

/// A frozen evaluation partner.
#[derive(Debug, Clone, PartialEq)]
pub struct Partner {
    pub id: String,
    pub group: Group,
    pub actor: PartnerActor,
}

pub fn build_scripted_holdouts(task: Task) -> Vec<HoldoutSpec> {
    let _ = task;
    [ScriptKind::Noop, ScriptKind::Object(0), ScriptKind::Object(1)]
        .into_iter()
        .map(|plan| HoldoutSpec::Scripted { id: format!("scripted_{}", plan.name()), plan })
        .collect()
}

/// Next action of a scripted agent: the current plan macro, skipping steps
/// that are done or can no longer succeed. Never reacts to the partner.
pub fn scripted_step(plan: &mut ScriptedPlan, state: &WorldState, agent: usize) -> ActionId {
    plan.next_action(state, agent)
}

/// Both policies of every completed GT Coord run, frozen. `runs` pairs each
/// seed with its run directory.
pub fn build_learned_holdouts(task: Task, runs: &[(u64, PathBuf)]) -> Result<Vec<HoldoutSpec>> {
    let mut out = Vec::new();
    for (seed, dir) in runs {
        let snapshot = RunConfig::load(&dir.join("config.toml"))
            .map_err(|_| Error::MissingArtifact(format!("GT Coord run for seed {seed} at {}", dir.display())))?;
        if snapshot.task()? != task || !matches!(snapshot.run.algo.as_str(), "gtcoord" | "gtcoord_state") {
            return Err(Error::Incompatible(format!("{} is not a GT Coord run on {}", dir.display(), task.name())));
        }
        for slot in 0..LEARNED_PER_RUN {
            let checkpoint = dir.join("checkpoints").join(GT_COORD).join(format!("policy{slot}_final.ckpt"));
            if !checkpoint.exists() {
                return Err(Error::MissingArtifact(checkpoint.display().to_string()));
            }
            let p = load_policy(&checkpoint, None)?;
            out.push(HoldoutSpec::Learned {
                id: format!("learned_s{seed}_p{slot}"),
                seed: *seed,
                slot,
                checkpoint,
                digest: params_digest(&p.data),
            });
        }
    }
    Ok(out)
}

/// Trains (or resumes) one GT Coord run per seed under `out_root` and
/// registers the scripted and learned holdouts in `out_root/holdouts.json`.
/// Seeds must differ from `exclude`, the seeds of runs being evaluated.
pub fn build_holdouts(base: &RunConfig, seeds: &[u64], exclude: &[u64], out_root: &Path) -> Result<(HoldoutSet, PathBuf)> {
    if let Some(s) = seeds.iter().find(|s| exclude.contains(s)) {
        return Err(Error::InvalidConfig(format!("holdout seed {s} is also a training seed")));
    }
    let mut sorted = seeds.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != seeds.len() {
        return Err(Error::InvalidConfig("holdout seeds must be distinct".into()));
    }
    let task = base.task()?;
    let mut runs = Vec::new();
    for &seed in seeds {
        let mut cfg = base.clone();
        cfg.run.seed = seed;
        if !matches!(cfg.run.algo.as_str(), "gtcoord" | "gtcoord_state") {
            cfg.run.algo = "gtcoord".into();
        }
        let dir = out_root.join(format!("gtcoord_{}_seed{seed}", task.name()));
        pipeline::run_training(&cfg, &dir, true)?;
        runs.push((seed, dir));
    }
    let mut agents = build_scripted_holdouts(task);
    agents.extend(build_learned_holdouts(task, &runs)?);
    let set = HoldoutSet { version: REGISTRY_VERSION, task: task.name().into(), oracle_state: base.world_config().oracle_state, agents };
    let path = out_root.join("holdouts.json");
    set.save(&path)?;
    Ok((set, path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{create_env, Action, Entity, WorldConfig};

    #[test]
    fn three_scripted_agents() {
        let s = build_scripted_holdouts(Task::SetTable);
        let ids: Vec<_> = s.iter().map(|a| a.id().to_string()).collect();
        assert_eq!(ids, ["scripted_noop", "scripted_object0", "scripted_object1"]);
    }

    #[test]
    fn noop_agent_only_noops() {
        let env = create_env(Task::TidyHouse, 3, &WorldConfig::small()).unwrap();
        let (state, _) = env.reset(1);
        let mut plan = ScriptKind::Noop.build(&env);
        for _ in 0..5 {
            assert_eq!(scripted_step(&mut plan, &state, 0), ActionId::NOOP);
        }
    }

    #[test]
    fn object_plan_opens_before_pick_and_stays_on_its_object() {
        let env = create_env(Task::SetTable, 5, &WorldConfig::small()).unwrap();
        let plan = ScriptKind::Object(0).build(&env);
        let decoded: Vec<Action> = plan.steps.iter().map(|a| a.decode()).collect();
        let open = decoded.iter().position(|a| matches!(a, Action::Open(_))).expect("open step");
        let pick = decoded.iter().position(|a| matches!(a, Action::Pick(0))).expect("pick step");
        assert!(open < pick);
        assert!(!decoded.iter().any(|a| matches!(a, Action::Pick(1) | Action::Place(1))));
        assert!(!decoded.iter().any(|a| matches!(a, Action::Navigate(Entity::Object(1)))));
    }

    #[test]
    fn registry_round_trips_and_rejects_versions() {
        let tmp = tempfile::tempdir().unwrap();
        let set = HoldoutSet {
            version: REGISTRY_VERSION,
            task: "tidy_house".into(),
            oracle_state: false,
            agents: build_scripted_holdouts(Task::TidyHouse),
        };
        let p = tmp.path().join("h.json");
        set.save(&p).unwrap();
        assert_eq!(HoldoutSet::load(&p).unwrap(), set);
        let bumped = fs::read_to_string(&p).unwrap().replace("\"version\": 1", "\"version\": 9");
        fs::write(&p, bumped).unwrap();
        assert!(matches!(HoldoutSet::load(&p), Err(Error::Incompatible(_))));
    }

    #[test]
    fn missing_learned_run_is_an_error() {
        let tmp = tempfile::tempdir().unwrap();
        let r = build_learned_holdouts(Task::TidyHouse, &[(11, tmp.path().join("nope"))]);
        assert!(matches!(r, Err(Error::MissingArtifact(_))));
    }

    #[test]
    fn holdout_seeds_must_not_overlap_training() {
        let tmp = tempfile::tempdir().unwrap();
        let r = build_holdouts(&RunConfig::default(), &[1, 2], &[2], tmp.path());
        assert!(matches!(r, Err(Error::InvalidConfig(_))));
    }
}
