//! Run configuration: a TOML file with one section per subsystem. Every key
//! is optional; missing keys take the defaults below.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::population::{Algo, PopulationSpec};
use crate::ppo::PpoConfig;
use crate::seeds::{derive_seed, tag};
use crate::world::{Task, WorldConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub task: String,
    pub algo: String,
    pub seed: u64,
    /// Sequential environment stepping (results are identical either way;
    /// this only rules out thread-pool effects).
    pub deterministic: bool,
}

impl Default for RunSection {
    fn default() -> Self {
        Self { task: "tidy_house".into(), algo: "bdp".into(), seed: 0, deterministic: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldSection {
    pub width: i32,
    pub height: i32,
    pub horizon: u32,
    pub receptacles: usize,
    pub local_patch: bool,
    pub oracle_state: bool,
    /// Number of distinct training layouts episodes are drawn from.
    pub train_layouts: usize,
}

impl Default for WorldSection {
    fn default() -> Self {
        let w = WorldConfig::default();
        Self {
            width: w.width,
            height: w.height,
            horizon: w.horizon,
            receptacles: w.num_receptacles,
            local_patch: w.local_patch,
            oracle_state: w.oracle_state,
            train_layouts: 32,
        }
    }
}

impl WorldSection {
    pub fn world_config(&self) -> WorldConfig {
        WorldConfig {
            width: self.width,
            height: self.height,
            horizon: self.horizon,
            num_receptacles: self.receptacles,
            local_patch: self.local_patch,
            oracle_state: self.oracle_state,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PopulationSection {
    pub size: usize,
    pub alpha: f64,
    pub trajedi_alpha: f64,
    pub latent_resample_period: u64,
}

impl Default for PopulationSection {
    fn default() -> Self {
        Self { size: 4, alpha: 0.01, trajedi_alpha: 0.01, latent_resample_period: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscriminatorSection {
    pub hidden: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub steps_per_update: usize,
    pub buffer_capacity: usize,
    /// Updates between held-out accuracy measurements.
    pub eval_every: u64,
    pub eval_episodes: usize,
}

impl Default for DiscriminatorSection {
    fn default() -> Self {
        Self {
            hidden: 128,
            lr: 3e-4,
            batch_size: 256,
            steps_per_update: 4,
            buffer_capacity: crate::diversity::BUFFER_CAPACITY,
            eval_every: 50,
            eval_episodes: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageSection {
    /// PPO updates; each consumes `envs_per_update * ticks_per_update` ticks.
    pub updates: u64,
    /// Updates between resumable "latest" checkpoints.
    pub checkpoint_every: u64,
    /// Stop early once the success rate over the last `stop_window`
    /// training episodes reaches this value; 0 disables.
    pub stop_at_success: f64,
    pub stop_window: usize,
}

impl Default for StageSection {
    fn default() -> Self {
        Self { updates: 977, checkpoint_every: 50, stop_at_success: 0.0, stop_window: 200 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub episodes: usize,
    pub seed: u64,
    /// Number of held-out layouts evaluation episodes cycle through.
    pub layouts: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { episodes: 100, seed: 1_000_003, layouts: 20 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub world: WorldSection,
    pub ppo: PpoConfig,
    pub population: PopulationSection,
    pub discriminator: DiscriminatorSection,
    pub stage1: StageSection,
    pub stage2: StageSection,
    pub eval: EvalSection,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::ConfigParse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn task(&self) -> Result<Task> {
        self.run.task.parse()
    }

    pub fn algo(&self) -> Result<Algo> {
        self.run.algo.parse()
    }

    /// World settings, with oracle observations forced on for `gtcoord_state`.
    pub fn world_config(&self) -> WorldConfig {
        let mut w = self.world.world_config();
        if self.run.algo == Algo::GtCoordState.name() {
            w.oracle_state = true;
        }
        w
    }

    pub fn population_spec(&self) -> Result<PopulationSpec> {
        let p = &self.population;
        let spec = PopulationSpec {
            algo: self.algo()?,
            size: p.size,
            alpha: p.alpha,
            trajedi_alpha: p.trajedi_alpha,
            latent_resample_period: p.latent_resample_period,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        self.task()?;
        self.algo()?;
        self.world_config().validate()?;
        self.ppo.validate()?;
        if self.world.train_layouts == 0 || self.eval.layouts == 0 {
            return Err(Error::InvalidConfig("layout pools must be non-empty".into()));
        }
        if self.population.size == 0 {
            return Err(Error::InvalidConfig("population size must be positive".into()));
        }
        let d = &self.discriminator;
        if d.hidden == 0 || d.batch_size == 0 || d.buffer_capacity == 0 || d.eval_every == 0 || !(d.lr > 0.0) {
            return Err(Error::InvalidConfig("discriminator settings must be positive".into()));
        }
        for (name, s) in [("stage1", &self.stage1), ("stage2", &self.stage2)] {
            if s.checkpoint_every == 0 || !(0.0..=1.0).contains(&s.stop_at_success) || s.stop_window == 0 {
                return Err(Error::InvalidConfig(format!("{name}: invalid checkpoint or stopping settings")));
            }
        }
        Ok(())
    }

    /// Layout seeds episodes are trained on.
    pub fn train_layout_seeds(&self) -> Vec<u64> {
        (0..self.world.train_layouts as u64).map(|i| derive_seed(self.run.seed, &[tag::LAYOUT, i])).collect()
    }

    /// Layout seeds reserved for evaluation; disjoint from training seeds of
    /// any run (a different tag path).
    pub fn eval_layout_seeds(&self) -> Vec<u64> {
        (0..self.eval.layouts as u64).map(|i| derive_seed(self.eval.seed, &[tag::HELDOUT, i])).collect()
    }
}

/// Root directory for run outputs: `COORDLAB_OUT`, else `./runs`.
pub fn default_output_root() -> PathBuf {
    std::env::var_os("COORDLAB_OUT").map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"))
}

/// A documented configuration listing every key with its default.
pub fn annotated_default() -> String {
    let c = RunConfig::default();
    let p = &c.ppo;
    format!(
        "\
[run]
task = \"{task}\"            # set_table | tidy_house | prepare_groceries
algo = \"{algo}\"                  # sp pbt fcp trajedi bdp bdp_no_discrim bdp_no_latent
                               # bdp_latent_shared_enc bdp_latent_sep_enc gtcoord gtcoord_state solo
seed = 0
deterministic = false

[world]
width = {w}
height = {h}
horizon = {hz}
receptacles = {rc}
local_patch = false
oracle_state = false
train_layouts = {tl}

[ppo]
lr = {lr}                    # reference value 3e-4
epochs = {ep}                    # reference value 2
minibatches = {mb}               # reference value 2
clip = {clip}                    # reference value 0.2
entropy_coef = {ent}           # reference value 0.001
value_coef = {vc}
gamma = {gamma}                  # reference value 0.99
gae_lambda = {lam}             # reference value 0.95
grad_clip = {gc}
envs_per_update = {envs}
ticks_per_update = {ticks}

[population]
size = {size}                       # reference value 8
alpha = {alpha}                  # discriminator reward weight, reference value 0.01
trajedi_alpha = {ta}
latent_resample_period = {lrp}     # reference value 10

[discriminator]
hidden = {dh}
lr = {dlr}
batch_size = {db}
steps_per_update = {ds}
buffer_capacity = {cap}       # reference value 100000
eval_every = {dee}
eval_episodes = {dep}

[stage1]
updates = {u1}
checkpoint_every = {ce}
stop_at_success = 0.0
stop_window = {sw}

[stage2]
updates = {u2}
checkpoint_every = {ce}
stop_at_success = 0.0
stop_window = {sw}

[eval]
episodes = {ee}                  # reference value 100
seed = {es}
layouts = {el}
",
        task = c.run.task,
        algo = c.run.algo,
        w = c.world.width,
        h = c.world.height,
        hz = c.world.horizon,
        rc = c.world.receptacles,
        tl = c.world.train_layouts,
        lr = p.lr,
        ep = p.epochs,
        mb = p.minibatches,
        clip = p.clip,
        ent = p.entropy_coef,
        vc = p.value_coef,
        gamma = p.gamma,
        lam = p.gae_lambda,
        gc = p.grad_clip,
        envs = p.envs_per_update,
        ticks = p.ticks_per_update,
        size = c.population.size,
        alpha = c.population.alpha,
        ta = c.population.trajedi_alpha,
        lrp = c.population.latent_resample_period,
        dh = c.discriminator.hidden,
        dlr = c.discriminator.lr,
        db = c.discriminator.batch_size,
        ds = c.discriminator.steps_per_update,
        cap = c.discriminator.buffer_capacity,
        dee = c.discriminator.eval_every,
        dep = c.discriminator.eval_episodes,
        u1 = c.stage1.updates,
        u2 = c.stage2.updates,
        ce = c.stage1.checkpoint_every,
        sw = c.stage1.stop_window,
        ee = c.eval.episodes,
        es = c.eval.seed,
        el = c.eval.layouts,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn annotated_default_parses_to_default() {
        assert_eq!(RunConfig::parse(&annotated_default()).unwrap(), RunConfig::default());
    }

    #[test]
    fn snapshot_round_trips() {
        let mut c = RunConfig::default();
        c.run.algo = "pbt".into();
        c.ppo.envs_per_update = 3;
        c.stage1.stop_at_success = 0.8;
        assert_eq!(RunConfig::parse(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn partial_files_and_errors() {
        let c = RunConfig::parse("[run]\nalgo = \"sp\"\n[world]\nwidth = 7\nheight = 7\n").unwrap();
        assert_eq!(c.world.width, 7);
        assert_eq!(c.ppo, PpoConfig::default());
        assert!(matches!(RunConfig::parse("[ppo]\nlearning_rate = 1.0\n"), Err(Error::ConfigParse(_))));
        assert!(matches!(RunConfig::parse("[run]\nalgo = \"dqn\"\n"), Err(Error::UnknownName { .. })));
        assert!(RunConfig::parse("[ppo]\nclip = 1.5\n").is_err());
    }

    #[test]
    fn default_budget_is_about_two_million_ticks() {
        let c = RunConfig::default();
        let ticks = c.stage1.updates * c.ppo.ticks_per_batch();
        assert!((1_990_000..2_010_000).contains(&ticks), "{ticks}");
    }

    #[test]
    fn oracle_variant_and_layout_disjointness() {
        let mut c = RunConfig::default();
        c.run.algo = "gtcoord_state".into();
        assert!(c.world_config().oracle_state);
        let train = c.train_layout_seeds();
        assert!(c.eval_layout_seeds().iter().all(|s| !train.contains(s)));
    }
}
