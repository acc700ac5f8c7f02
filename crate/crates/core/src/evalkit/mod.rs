//! Evaluation: per-partner success and timing, cooperation efficiency gain,
//! sub-goal probability matrices, latent behavior profiles and report files.

mod report;

pub use report::{emit_report, load_reports, render_heatmap_svg, SUMMARY_HEADER};

use serde::{Deserialize, Serialize};

use crate::approximator::{PolicyParams, SampleMode};
use crate::holdout::{Group, Partner, PartnerActor};
use crate::ppo::{play_episode, ActorRef, PlayedEpisode};
use crate::seeds::{derive_seed, derived_rng, tag};
use crate::world::planner::ScriptKind;
use crate::world::{Environment, EventKind, NUM_AGENTS};
use crate::{Error, Result};

pub const REPORT_VERSION: u32 = 1;
pub const NUM_EVENT_KINDS: usize = EventKind::ALL.len();

/// Results of one coordination-agent/partner pairing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartnerRecord {
    pub partner: String,
    pub group: Group,
    pub episodes: usize,
    pub successes: usize,
    pub success_rate: f64,
    /// Mean episode ticks over successful episodes.
    pub mean_steps_success: Option<f64>,
    pub collision_rate: f64,
    /// Fraction of episodes in which the coordination agent itself
    /// completed each event, in `EventKind::ALL` order.
    pub coord_event_rates: Vec<f64>,
    pub partner_event_rates: Vec<f64>,
    /// Partner alone (next to an idle agent): mean ticks over successes.
    pub solo_mean_steps: Option<f64>,
    pub efficiency_gain: Option<f64>,
}

fn actor_ref(actor: &PartnerActor) -> ActorRef<'_> {
    match actor {
        PartnerActor::Scripted(k) => ActorRef::Scripted(*k),
        PartnerActor::Policy { params, latent, member } => ActorRef::Policy { params, latent: *latent, member: *member },
    }
}

/// Per-episode outcome with events split by seat role.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeSummary {
    pub success: bool,
    pub collision: bool,
    pub ticks: u32,
    /// Events completed by the agent in role 0 (coordination agent) and 1.
    pub events: [[bool; NUM_EVENT_KINDS]; 2],
}

fn summarize(ep: &PlayedEpisode, seat_of_role: [usize; 2]) -> EpisodeSummary {
    let mut events = [[false; NUM_EVENT_KINDS]; 2];
    for e in &ep.events {
        let role = if e.agent == seat_of_role[0] { 0 } else { 1 };
        events[role][e.kind.index()] = true;
    }
    EpisodeSummary { success: ep.success, collision: ep.collision, ticks: ep.ticks, events }
}

/// Plays `n` greedy episodes of `roles[0]` with `roles[1]`. Layouts cycle
/// through `pool`; role 0 takes seat 0 in even episodes and seat 1 in odd ones.
pub fn play_pairing(roles: [ActorRef; 2], pool: &[Environment], n: usize, seed: u64) -> Result<Vec<EpisodeSummary>> {
    if pool.is_empty() {
        return Err(Error::Empty("evaluation layouts"));
    }
    (0..n)
        .map(|e| {
            let env = &pool[e % pool.len()];
            let swap = e % NUM_AGENTS == 1;
            let actors = if swap { [roles[1], roles[0]] } else { roles };
            let seat_of_role = if swap { [1, 0] } else { [0, 1] };
            let mut rng = derived_rng(seed, &[tag::EVAL, e as u64]);
            let ep = play_episode(env, derive_seed(seed, &[tag::EPISODE, e as u64]), actors, SampleMode::Argmax, &mut rng, false)?;
            Ok(summarize(&ep, seat_of_role))
        })
        .collect()
}

fn mean_success_ticks(eps: &[EpisodeSummary]) -> Option<f64> {
    let t: Vec<f64> = eps.iter().filter(|e| e.success).map(|e| e.ticks as f64).collect();
    (!t.is_empty()).then(|| t.iter().sum::<f64>() / t.len() as f64)
}

fn event_rates(eps: &[EpisodeSummary], role: usize) -> Vec<f64> {
    let n = eps.len().max(1) as f64;
    (0..NUM_EVENT_KINDS).map(|k| eps.iter().filter(|e| e.events[role][k]).count() as f64 / n).collect()
}

/// Evaluates the coordination agent with one partner over `n` episodes, and
/// times the partner working alone for the efficiency gain.
pub fn evaluate_pairing(
    coord: &PolicyParams,
    partner: &Partner,
    pool: &[Environment],
    n: usize,
    seed: u64,
) -> Result<PartnerRecord> {
    if n == 0 {
        return Err(Error::Empty("evaluation episodes"));
    }
    let coord_ref = ActorRef::Policy { params: coord, latent: None, member: 0 };
    let eps = play_pairing([coord_ref, actor_ref(&partner.actor)], pool, n, seed)?;
    let solo = play_pairing([ActorRef::Scripted(ScriptKind::Noop), actor_ref(&partner.actor)], pool, n, seed)?;
    let successes = eps.iter().filter(|e| e.success).count();
    let mean_steps_success = mean_success_ticks(&eps);
    let solo_mean_steps = mean_success_ticks(&solo);
    let efficiency_gain = match (solo_mean_steps, mean_steps_success) {
        (Some(s), Some(p)) => efficiency_gain(s, p),
        _ => None,
    };
    Ok(PartnerRecord {
        partner: partner.id.clone(),
        group: partner.group,
        episodes: n,
        successes,
        success_rate: successes as f64 / n as f64,
        mean_steps_success,
        collision_rate: eps.iter().filter(|e| e.collision).count() as f64 / n as f64,
        coord_event_rates: event_rates(&eps, 0),
        partner_event_rates: event_rates(&eps, 1),
        solo_mean_steps,
        efficiency_gain,
    })
}

pub fn evaluate_partners(
    coord: &PolicyParams,
    partners: &[Partner],
    pool: &[Environment],
    n: usize,
    seed: u64,
) -> Result<Vec<PartnerRecord>> {
    if partners.is_empty() {
        return Err(Error::Empty("partner list"));
    }
    partners.iter().map(|p| evaluate_pairing(coord, p, pool, n, seed)).collect()
}

/// Percentage of the solo completion time saved by working as a pair:
/// `100 · (t_solo − t_pair) / t_solo`. Undefined unless `t_solo > 0` and both
/// means are finite.
pub fn efficiency_gain(t_solo: f64, t_pair: f64) -> Option<f64> {
    (t_solo > 0.0 && t_solo.is_finite() && t_pair.is_finite()).then(|| 100.0 * (t_solo - t_pair) / t_solo)
}

/// Successes over episodes across `records`, i.e. the episode-weighted mean
/// of per-partner success rates. `None` when no episodes were played.
pub fn weighted_success<'a>(records: impl IntoIterator<Item = &'a PartnerRecord>) -> Option<f64> {
    let (s, n) = records.into_iter().fold((0usize, 0usize), |(s, n), r| (s + r.successes, n + r.episodes));
    (n > 0).then(|| s as f64 / n as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub train_pop_success: Option<f64>,
    pub zsc_success: Option<f64>,
    pub zsc_scripted_success: Option<f64>,
    pub zsc_learned_success: Option<f64>,
    /// Mean of the defined per-partner gains over ZSC partners.
    pub efficiency_gain: Option<f64>,
}

pub fn aggregate(train_pop: &[PartnerRecord], zsc: &[PartnerRecord]) -> Aggregates {
    let gains: Vec<f64> = zsc.iter().filter_map(|r| r.efficiency_gain).collect();
    Aggregates {
        train_pop_success: weighted_success(train_pop),
        zsc_success: weighted_success(zsc),
        zsc_scripted_success: weighted_success(zsc.iter().filter(|r| r.group == Group::Scripted)),
        zsc_learned_success: weighted_success(zsc.iter().filter(|r| r.group == Group::Learned)),
        efficiency_gain: (!gains.is_empty()).then(|| gains.iter().sum::<f64>() / gains.len() as f64),
    }
}

/// Rows are event kinds, columns partners; a cell is the probability that
/// the coordination agent itself completed the event with that partner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgoalMatrix {
    pub rows: Vec<String>,
    pub cols: Vec<String>,
    pub cells: Vec<Vec<f64>>,
}

impl SubgoalMatrix {
    pub fn from_records(records: &[PartnerRecord]) -> Self {
        let rows = EventKind::ALL.iter().map(|k| k.label()).collect();
        let cols = records.iter().map(|r| r.partner.clone()).collect();
        let cells = (0..NUM_EVENT_KINDS).map(|k| records.iter().map(|r| r.coord_event_rates[k]).collect()).collect();
        Self { rows, cols, cells }
    }
}

pub fn subgoal_matrix(
    coord: &PolicyParams,
    partners: &[Partner],
    pool: &[Environment],
    n: usize,
    seed: u64,
) -> Result<SubgoalMatrix> {
    Ok(SubgoalMatrix::from_records(&evaluate_partners(coord, partners, pool, n, seed)?))
}

/// One evaluation of one method on one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub task: String,
    pub seed: u64,
    pub episodes_per_partner: usize,
    pub train_pop: Vec<PartnerRecord>,
    pub zsc: Vec<PartnerRecord>,
    pub aggregates: Aggregates,
    pub subgoals: Option<SubgoalMatrix>,
}

impl EvalReport {
    pub fn new(method: &str, task: &str, seed: u64, episodes: usize, train_pop: Vec<PartnerRecord>, zsc: Vec<PartnerRecord>) -> Self {
        let aggregates = aggregate(&train_pop, &zsc);
        let subgoals = (!zsc.is_empty()).then(|| SubgoalMatrix::from_records(&zsc));
        Self {
            method: method.into(),
            task: task.into(),
            seed,
            episodes_per_partner: episodes,
            train_pop,
            zsc,
            aggregates,
            subgoals,
        }
    }
}

/// Per-agent sub-goal profile of a behavior: counts of each event kind plus
/// the number of episodes in which the agent completed none.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventProfile {
    pub episodes: usize,
    pub counts: Vec<usize>,
    pub idle_episodes: usize,
}

impl EventProfile {
    /// Normalized over event kinds plus the idle outcome, so an agent that
    /// never acts is a point mass rather than undefined.
    pub fn distribution(&self) -> Vec<f64> {
        let total = self.counts.iter().sum::<usize>() + self.idle_episodes;
        let mut v: Vec<usize> = self.counts.clone();
        v.push(self.idle_episodes);
        if total == 0 {
            return vec![0.0; v.len()];
        }
        v.into_iter().map(|c| c as f64 / total as f64).collect()
    }

    pub fn rates(&self) -> Vec<f64> {
        let n = self.episodes.max(1) as f64;
        self.counts.iter().map(|&c| c as f64 / n).collect()
    }
}

pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Largest total-variation distance between any two profiles' distributions.
pub fn max_pairwise_tv(profiles: &[EventProfile]) -> f64 {
    let d: Vec<Vec<f64>> = profiles.iter().map(EventProfile::distribution).collect();
    let mut best = 0.0f64;
    for i in 0..d.len() {
        for j in i + 1..d.len() {
            best = best.max(total_variation(&d[i], &d[j]));
        }
    }
    best
}

/// Sub-goal profile of each behavior `members[i]` when paired with a
/// uniformly drawn member, sampling actions as during training.
pub fn member_event_profiles(members: &[ActorRef], pool: &[Environment], episodes: usize, seed: u64) -> Result<Vec<EventProfile>> {
    if members.is_empty() || pool.is_empty() {
        return Err(Error::Empty("members"));
    }
    let mut out = Vec::with_capacity(members.len());
    for (i, me) in members.iter().enumerate() {
        let mut prof = EventProfile { episodes, counts: vec![0; NUM_EVENT_KINDS], idle_episodes: 0 };
        for e in 0..episodes {
            let mut rng = derived_rng(seed, &[tag::EVAL, i as u64, e as u64]);
            let other = members[rand::Rng::random_range(&mut rng, 0..members.len())];
            let seat = e % NUM_AGENTS;
            let actors = if seat == 0 { [*me, other] } else { [other, *me] };
            let env = &pool[e % pool.len()];
            let ep = play_episode(env, derive_seed(seed, &[tag::EPISODE, i as u64, e as u64]), actors, SampleMode::Sample, &mut rng, false)?;
            let mine: Vec<_> = ep.events.iter().filter(|ev| ev.agent == seat).collect();
            if mine.is_empty() {
                prof.idle_episodes += 1;
            }
            for ev in mine {
                prof.counts[ev.kind.index()] += 1;
            }
        }
        out.push(prof);
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
