use std::collections::{BTreeMap, VecDeque};
use std::path::PathBuf;
use std::sync::Arc;

use rand_chacha::ChaCha8Rng;

use super::rundir::{CsvLog, RunDir};
use crate::approximator::{Adam, PolicyParams, SampleMode};
use crate::checkpoint::{Checkpoint, RngState};
use crate::config::{RunConfig, StageSection};
use crate::diversity::{disc_update, DiscBuffer, Discriminator};
use crate::population::Milestone;
use crate::ppo::{
    build_samples, collect_rollouts, ppo_update, DiversityContext, EnvWorker, RolloutContext, Seat, TrajediContext,
    UpdateStats,
};
use crate::seeds::{derived_rng, tag};
use crate::world::{Environment, NUM_AGENTS};
use crate::{Error, Result};

pub(crate) struct DiscState {
    pub disc: Discriminator,
    pub adam: Adam,
    pub buffer: DiscBuffer,
    pub rng: ChaCha8Rng,
    pub alpha: f64,
}

pub(crate) type AssignFn<'a> = dyn FnMut(u64, usize, &mut ChaCha8Rng) -> Vec<[Seat; NUM_AGENTS]> + 'a;
pub(crate) type ProbeFn<'a> = dyn Fn(&[PolicyParams], &Discriminator, u64) -> Result<f64> + 'a;

pub(crate) struct LoopSetup<'a> {
    pub stage: &'static str,
    pub section: StageSection,
    /// Distinguishes this loop's random streams from other stages.
    pub stream: u64,
    pub learners: Vec<PolicyParams>,
    pub frozen: Vec<PolicyParams>,
    pub disc: Option<DiscState>,
    pub trajedi: Option<TrajediContext>,
    pub assign: Box<AssignFn<'a>>,
    /// Held-out discriminator accuracy, measured every `eval_every` updates.
    pub probe: Option<Box<ProbeFn<'a>>>,
    pub resume: bool,
}

pub(crate) struct LoopResult {
    pub learners: Vec<PolicyParams>,
    pub disc: Option<Discriminator>,
    pub updates: u64,
    pub ticks: u64,
    pub checkpoints: BTreeMap<String, PathBuf>,
    pub training_csv: PathBuf,
    pub disc_csv: Option<PathBuf>,
    pub last_heldout_accuracy: Option<f64>,
    pub stopped_early: bool,
}

pub(crate) const DISC_CSV_HEADER: &str = "update,buffer_len,disc_ce,disc_acc,heldout_acc";

fn policy_file(slot: usize, label: &str) -> String {
    format!("policy{slot}_{label}.ckpt")
}

pub(crate) fn run_loop(cfg: &RunConfig, run: &RunDir, pool: Arc<Vec<Environment>>, mut s: LoopSetup) -> Result<LoopResult> {
    let dir = run.stage_dir(s.stage)?;
    let total = s.section.updates;
    let mut checkpoints = BTreeMap::new();
    let mut update_rng = derived_rng(cfg.run.seed, &[tag::UPDATE, s.stream]);
    let mut assign_rng = derived_rng(cfg.run.seed, &[tag::PAIRING, s.stream]);
    let mut adams: Vec<Adam> = s.learners.iter().map(|p| Adam::new(p.data.len(), cfg.ppo.adam())).collect();

    let mut start_update = 0;
    if s.resume && dir.join(policy_file(0, "latest")).exists() {
        for (slot, p) in s.learners.iter_mut().enumerate() {
            let ck = Checkpoint::load(&dir.join(policy_file(slot, "latest")))?;
            *p = ck.to_policy(Some(&p.shape))?;
            start_update = ck.updates;
            if let Some(r) = &ck.rng {
                update_rng = r.restore();
            }
        }
        if let Some(d) = s.disc.as_mut() {
            let ck = Checkpoint::load(&dir.join("disc_latest.ckpt"))?;
            d.disc = ck.to_discriminator(Some(&d.disc.shape))?;
        }
        // Pairing streams are replayed up to the resume point.
        for u in 0..start_update {
            (s.assign)(u, cfg.ppo.envs_per_update, &mut assign_rng);
        }
    }

    let save = |learners: &[PolicyParams], label: &str, updates: u64, rng: Option<RngState>| -> Result<Vec<PathBuf>> {
        let mut out = Vec::new();
        for (slot, p) in learners.iter().enumerate() {
            let path = dir.join(policy_file(slot, label));
            Checkpoint::from_policy(p, rng.clone(), updates).save(&path)?;
            out.push(path);
        }
        Ok(out)
    };
    if start_update == 0 {
        for (slot, p) in save(&s.learners, Milestone::Start.name(), 0, None)?.into_iter().enumerate() {
            checkpoints.insert(format!("{}/{}", Milestone::Start.name(), slot), p);
        }
    }

    let training_csv = run.path(format!("logs/{}.csv", s.stage));
    let mut log = CsvLog::open(&training_csv, UpdateStats::CSV_HEADER)?;
    let disc_csv = s.disc.as_ref().map(|_| run.path(format!("logs/{}_disc.csv", s.stage)));
    let mut disc_log = disc_csv.as_ref().map(|p| CsvLog::open(p, DISC_CSV_HEADER)).transpose()?;

    let mut workers: Vec<EnvWorker> = Vec::new();
    let envs = cfg.ppo.envs_per_update;
    let mut recent: VecDeque<bool> = VecDeque::new();
    let mut ticks = start_update * cfg.ppo.ticks_per_batch();
    let mut last_heldout = None;
    let mut stopped_early = false;
    let mut update = start_update;

    while update < total {
        let seats = (s.assign)(update, envs, &mut assign_rng);
        if workers.is_empty() {
            let seed = crate::seeds::derive_seed(cfg.run.seed, &[s.stream, update]);
            workers = (0..envs).map(|i| EnvWorker::new(i, pool.clone(), seed, seats[i])).collect();
        }
        for (w, st) in workers.iter_mut().zip(&seats) {
            w.assign(*st);
        }

        let batch = {
            let ctx = RolloutContext {
                learners: &s.learners,
                frozen: &s.frozen,
                diversity: s.disc.as_ref().map(|d| DiversityContext { disc: &d.disc, alpha: d.alpha }),
                trajedi: s.trajedi,
                ticks: cfg.ppo.ticks_per_update,
                mode: SampleMode::Sample,
                parallel: !cfg.run.deterministic,
            };
            collect_rollouts(&mut workers, &ctx)?
        };
        ticks += batch.ticks;

        let mut stats = UpdateStats { update: update + 1, ticks, ..UpdateStats::default() };
        let mut weight = 0.0;
        for slot in 0..s.learners.len() {
            let samples = build_samples(batch.for_slot(slot), &cfg.ppo);
            if samples.is_empty() {
                continue;
            }
            let n = samples.len() as f64;
            let parts = match ppo_update(&mut s.learners[slot], &mut adams[slot], samples, &cfg.ppo, &mut update_rng) {
                Ok(p) => p,
                Err(e) => {
                    let dump = format!(
                        "stage = {}\nupdate = {}\nslot = {}\nerror = {}\nparams_finite = {}\n",
                        s.stage,
                        update + 1,
                        slot,
                        e,
                        s.learners[slot].is_finite()
                    );
                    run.write(format!("diagnostic_{}.txt", s.stage), dump)?;
                    return Err(e);
                }
            };
            stats.policy_loss += n * parts.policy_loss;
            stats.value_loss += n * parts.value_loss;
            stats.entropy += n * parts.entropy;
            stats.clip_frac += n * parts.clip_frac;
            weight += n;
        }
        if weight > 0.0 {
            stats.policy_loss /= weight;
            stats.value_loss /= weight;
            stats.entropy /= weight;
            stats.clip_frac /= weight;
        }
        stats.episodes = batch.episodes.len();
        if !batch.episodes.is_empty() {
            let n = batch.episodes.len() as f64;
            stats.mean_return = batch.episodes.iter().map(|e| e.task_return).sum::<f64>() / n;
            stats.success_rate = batch.episodes.iter().filter(|e| e.success).count() as f64 / n;
        }
        if !batch.div_rewards.is_empty() {
            stats.div_reward_mean = batch.div_rewards.iter().sum::<f64>() / batch.div_rewards.len() as f64;
        }

        if let Some(d) = s.disc.as_mut() {
            // Evenly strided over the whole rollout so every environment's
            // pairing is represented.
            let stride = batch.disc_samples.len().div_ceil(256).max(1);
            let probe: Vec<(Vec<f64>, usize)> = batch.disc_samples.iter().step_by(stride).cloned().collect();
            let acc = if probe.is_empty() { f64::NAN } else { d.disc.accuracy(&probe)? };
            for (w, z) in &batch.disc_samples {
                d.buffer.push(w, *z);
            }
            let mut ce = 0.0;
            let steps = cfg.discriminator.steps_per_update;
            if !d.buffer.is_empty() {
                for _ in 0..steps {
                    ce += disc_update(&mut d.disc, &mut d.adam, &d.buffer, cfg.discriminator.batch_size, &mut d.rng)?;
                }
                ce /= steps.max(1) as f64;
            }
            let mut heldout = String::new();
            if (update + 1) % cfg.discriminator.eval_every == 0 || update + 1 == total {
                if let Some(probe) = &s.probe {
                    let a = probe(&s.learners, &d.disc, update + 1)?;
                    last_heldout = Some(a);
                    heldout = format!("{a:.6}");
                }
            }
            if let Some(l) = disc_log.as_mut() {
                l.row(&format!("{},{},{:.6},{:.6},{}", update + 1, d.buffer.len(), ce, acc, heldout))?;
            }
        }

        log.row(&stats.csv_row())?;
        update += 1;

        if update == Milestone::Middle.update(total) && update != total {
            for (slot, p) in save(&s.learners, Milestone::Middle.name(), update, None)?.into_iter().enumerate() {
                checkpoints.insert(format!("{}/{}", Milestone::Middle.name(), slot), p);
            }
        }
        if update % s.section.checkpoint_every == 0 && update != total {
            save(&s.learners, "latest", update, Some(RngState::capture(&update_rng)))?;
            if let Some(d) = &s.disc {
                Checkpoint::from_discriminator(&d.disc, update).save(&dir.join("disc_latest.ckpt"))?;
            }
        }

        for e in &batch.episodes {
            recent.push_back(e.success);
            if recent.len() > s.section.stop_window {
                recent.pop_front();
            }
        }
        if s.section.stop_at_success > 0.0 && recent.len() == s.section.stop_window {
            let rate = recent.iter().filter(|&&x| x).count() as f64 / recent.len() as f64;
            if rate >= s.section.stop_at_success {
                stopped_early = true;
                break;
            }
        }
    }

    if update == total || stopped_early {
        if !checkpoints.keys().any(|k| k.starts_with(Milestone::Middle.name())) && !dir.join(policy_file(0, "middle")).exists() {
            // Very short or early-stopped runs: the midpoint coincides with the end.
            for (slot, p) in save(&s.learners, Milestone::Middle.name(), update, None)?.into_iter().enumerate() {
                checkpoints.insert(format!("{}/{}", Milestone::Middle.name(), slot), p);
            }
        }
        for (slot, p) in save(&s.learners, Milestone::End.name(), update, None)?.into_iter().enumerate() {
            checkpoints.insert(format!("{}/{}", Milestone::End.name(), slot), p);
        }
        let rng = Some(RngState::capture(&update_rng));
        for (slot, p) in save(&s.learners, "final", update, rng)?.into_iter().enumerate() {
            checkpoints.insert(format!("final/{slot}"), p);
        }
        if let Some(d) = &s.disc {
            let p = dir.join("disc_final.ckpt");
            Checkpoint::from_discriminator(&d.disc, update).save(&p)?;
            checkpoints.insert("final/disc".into(), p);
        }
    } else {
        return Err(Error::InvalidState(format!("{} stopped at update {update} of {total}", s.stage)));
    }

    Ok(LoopResult {
        learners: s.learners,
        disc: s.disc.map(|d| d.disc),
        updates: update,
        ticks,
        checkpoints,
        training_csv,
        disc_csv,
        last_heldout_accuracy: last_heldout,
        stopped_early,
    })
}
