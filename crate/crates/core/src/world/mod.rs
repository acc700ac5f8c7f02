//! Two-agent cooperative rearrangement gridworld.
//!
//! Agents pick up two target objects and place them at their goal
//! receptacles. The high-level action space mixes macro skills (navigate,
//! pick, place, open) that run for one or more ticks with four primitives
//! that always resolve within the tick. Reward is shared:
//!
//! ```text
//! r = 10 * [success this tick] + 0.5 * (#subgoal events this tick) - 0.01
//! ```
//!
//! Agents that end a tick on the same cell, or swap cells, collide and the
//! episode ends in failure.

mod action;
mod layout;
mod nav;
mod obs;
pub mod planner;
pub mod replay;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::seeds::{derived_rng, tag};
use crate::{Error, Result};

pub use action::{Action, ActionId, Entity, NUM_ACTIONS, NUM_ENTITIES};
pub use layout::{GridLayout, Receptacle};
pub use nav::{shortest_path, NoPath};
pub use obs::{observation, observation_dim, oracle_dim, oracle_state};

pub const NUM_AGENTS: usize = 2;
pub const NUM_OBJECTS: usize = 2;
/// Receptacles that may be openable; only these have an `Open` action.
pub const NUM_OPENABLE: usize = 2;

pub const SUCCESS_REWARD: f64 = 10.0;
pub const SUBGOAL_REWARD: f64 = 0.5;
pub const TICK_PENALTY: f64 = 0.01;

/// Minimum Manhattan distance between the two spawn cells.
pub const MIN_SPAWN_DISTANCE: i32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub x: i32,
    pub y: i32,
}

impl Cell {
    pub const fn new(x: i32, y: i32) -> Self {
        Self { x, y }
    }

    pub fn manhattan(self, other: Cell) -> i32 {
        (self.x - other.x).abs() + (self.y - other.y).abs()
    }

    pub fn chebyshev(self, other: Cell) -> i32 {
        (self.x - other.x).abs().max((self.y - other.y).abs())
    }

    pub fn step(self, heading: Heading) -> Cell {
        let (dx, dy) = heading.delta();
        Cell::new(self.x + dx, self.y + dy)
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.x, self.y)
    }
}

/// Compass heading; `y` grows southwards.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Heading {
    N,
    E,
    S,
    W,
}

impl Heading {
    /// Scan order used by the navigation module for tie-breaking.
    pub const ALL: [Heading; 4] = [Heading::N, Heading::E, Heading::S, Heading::W];

    pub fn delta(self) -> (i32, i32) {
        match self {
            Heading::N => (0, -1),
            Heading::E => (1, 0),
            Heading::S => (0, 1),
            Heading::W => (-1, 0),
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn left(self) -> Heading {
        Heading::ALL[(self.index() + 3) % 4]
    }

    pub fn right(self) -> Heading {
        Heading::ALL[(self.index() + 1) % 4]
    }

    fn between(from: Cell, to: Cell) -> Option<Heading> {
        Heading::ALL
            .into_iter()
            .find(|h| from.step(*h) == to)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Task {
    SetTable,
    TidyHouse,
    PrepareGroceries,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::SetTable, Task::TidyHouse, Task::PrepareGroceries];

    pub fn name(self) -> &'static str {
        match self {
            Task::SetTable => "set_table",
            Task::TidyHouse => "tidy_house",
            Task::PrepareGroceries => "prepare_groceries",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Task::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::UnknownName {
                what: "task",
                got: s.to_string(),
                valid: Task::ALL.iter().map(|t| t.name()).collect::<Vec<_>>().join(", "),
            })
    }
}

/// Settings that shape the world; all of them are run-config keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    pub width: i32,
    pub height: i32,
    pub horizon: u32,
    pub num_receptacles: usize,
    /// Append a 5x5 occupancy patch around the agent to the observation.
    pub local_patch: bool,
    /// Append the ground-truth predicate vector to the observation.
    pub oracle_state: bool,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            width: 11,
            height: 11,
            horizon: 200,
            num_receptacles: 6,
            local_patch: false,
            oracle_state: false,
        }
    }
}

impl WorldConfig {
    pub fn small() -> Self {
        Self { width: 7, height: 7, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon < 20 {
            return Err(Error::InvalidConfig(format!("horizon {} < 20", self.horizon)));
        }
        if self.width < 7 || self.height < 7 {
            return Err(Error::InvalidConfig(format!(
                "grid {}x{} smaller than 7x7",
                self.width, self.height
            )));
        }
        if !(4..=6).contains(&self.num_receptacles) {
            return Err(Error::InvalidConfig(format!(
                "num_receptacles {} outside 4..=6",
                self.num_receptacles
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ObjectLocation {
    OnReceptacle(usize),
    HeldBy(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectState {
    pub id: usize,
    pub location: ObjectLocation,
    /// Goal receptacle.
    pub goal: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MacroProgress {
    pub action: ActionId,
    pub ticks: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentState {
    pub pos: Cell,
    pub heading: Heading,
    pub holding: Option<usize>,
    pub active_macro: Option<MacroProgress>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventKind {
    PickedObject(usize),
    PlacedObject(usize),
    OpenedReceptacle(usize),
}

impl EventKind {
    /// Every event kind, in the row order used by sub-goal matrices.
    pub const ALL: [EventKind; 6] = [
        EventKind::PickedObject(0),
        EventKind::PickedObject(1),
        EventKind::PlacedObject(0),
        EventKind::PlacedObject(1),
        EventKind::OpenedReceptacle(0),
        EventKind::OpenedReceptacle(1),
    ];

    pub fn index(self) -> usize {
        match self {
            EventKind::PickedObject(i) => i,
            EventKind::PlacedObject(i) => 2 + i,
            EventKind::OpenedReceptacle(j) => 4 + j,
        }
    }

    pub fn label(self) -> String {
        match self {
            EventKind::PickedObject(i) => format!("pick:{i}"),
            EventKind::PlacedObject(i) => format!("place:{i}"),
            EventKind::OpenedReceptacle(j) => format!("open:{j}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubgoalEvent {
    pub kind: EventKind,
    pub agent: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub layout: Arc<GridLayout>,
    pub receptacle_open: Vec<bool>,
    pub agents: [AgentState; NUM_AGENTS],
    pub objects: [ObjectState; NUM_OBJECTS],
    pub tick: u32,
    pub horizon: u32,
    pub done: bool,
    pub success: bool,
    pub collided: bool,
    fired: u8,
}

impl WorldState {
    pub fn is_open(&self, receptacle: usize) -> bool {
        self.receptacle_open[receptacle]
    }

    pub fn object_cell(&self, object: usize) -> Cell {
        match self.objects[object].location {
            ObjectLocation::OnReceptacle(r) => self.layout.receptacles[r].cell,
            ObjectLocation::HeldBy(a) => self.agents[a].pos,
        }
    }

    pub fn goal_cell(&self, object: usize) -> Cell {
        self.layout.receptacles[self.objects[object].goal].cell
    }

    pub fn object_at_goal(&self, object: usize) -> bool {
        self.objects[object].location == ObjectLocation::OnReceptacle(self.objects[object].goal)
    }

    /// Cell of a navigation entity, `None` for receptacles absent from the layout.
    pub fn entity_cell(&self, entity: Entity) -> Option<Cell> {
        match entity {
            Entity::Object(i) => Some(self.object_cell(i)),
            Entity::Goal(i) => Some(self.goal_cell(i)),
            Entity::Receptacle(j) => self.layout.receptacles.get(j).map(|r| r.cell),
        }
    }

    pub fn event_fired(&self, kind: EventKind) -> bool {
        self.fired & (1 << kind.index()) != 0
    }

    pub fn events_fired(&self) -> usize {
        self.fired.count_ones() as usize
    }

    /// Static obstacles: walls and closed receptacles.
    pub fn blocked(&self, cell: Cell) -> bool {
        if self.layout.is_wall(cell) {
            return true;
        }
        match self.layout.receptacle_at(cell) {
            Some(r) => !self.receptacle_open[r],
            None => false,
        }
    }

    fn is_success(&self) -> bool {
        (0..NUM_OBJECTS).all(|i| self.object_at_goal(i))
    }

    /// Swaps the two agents, relabelling holders and nothing else.
    pub fn swapped_agents(&self) -> WorldState {
        let mut s = self.clone();
        s.agents.swap(0, 1);
        for o in s.objects.iter_mut() {
            if let ObjectLocation::HeldBy(a) = o.location {
                o.location = ObjectLocation::HeldBy(1 - a);
            }
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub obs: [Vec<f64>; NUM_AGENTS],
    pub reward: f64,
    pub done: bool,
    pub success: bool,
    pub collision: bool,
    pub events: Vec<SubgoalEvent>,
    /// True for an agent whose macro finished this tick, i.e. it decides next tick.
    pub decision_flags: [bool; NUM_AGENTS],
    /// Action id each agent executed this tick (its active macro, or the
    /// degraded no-op).
    pub executed: [ActionId; NUM_AGENTS],
}

/// A generated task instance: a fixed layout plus object starts and goals.
/// Episodes differ only in agent spawns.
#[derive(Debug, Clone)]
pub struct Environment {
    pub task: Task,
    pub config: WorldConfig,
    pub layout_seed: u64,
    layout: Arc<GridLayout>,
    object_starts: [usize; NUM_OBJECTS],
    goals: [usize; NUM_OBJECTS],
}

/// Generation retries before giving up on a layout seed.
pub const MAX_LAYOUT_ATTEMPTS: u64 = 100;

/// Builds a task instance. Layouts that fail validation are regenerated from
/// a derived sub-seed; 100 consecutive failures are an error.
pub fn create_env(task: Task, layout_seed: u64, config: &WorldConfig) -> Result<Environment> {
    config.validate()?;
    for attempt in 0..MAX_LAYOUT_ATTEMPTS {
        let mut rng = derived_rng(layout_seed, &[tag::LAYOUT, attempt]);
        let Some((layout, starts, goals)) = layout::generate(task, config, &mut rng) else {
            continue;
        };
        let env = Environment {
            task,
            config: config.clone(),
            layout_seed,
            layout: Arc::new(layout),
            object_starts: starts,
            goals,
        };
        if env.find_spawn(&mut rng, 400).is_some() {
            return Ok(env);
        }
    }
    Err(Error::LayoutGeneration { task, seed: layout_seed, attempts: MAX_LAYOUT_ATTEMPTS })
}

impl Environment {
    pub fn layout(&self) -> &GridLayout {
        &self.layout
    }

    pub fn object_start(&self, object: usize) -> usize {
        self.object_starts[object]
    }

    pub fn goal(&self, object: usize) -> usize {
        self.goals[object]
    }

    pub fn obs_dim(&self) -> usize {
        observation_dim(&self.config)
    }

    fn initial_state(&self, spawns: [Cell; 2], headings: [Heading; 2]) -> WorldState {
        let agent = |i: usize| AgentState {
            pos: spawns[i],
            heading: headings[i],
            holding: None,
            active_macro: None,
        };
        let object = |i: usize| ObjectState {
            id: i,
            location: ObjectLocation::OnReceptacle(self.object_starts[i]),
            goal: self.goals[i],
        };
        WorldState {
            layout: self.layout.clone(),
            receptacle_open: self.layout.receptacles.iter().map(|r| r.open).collect(),
            agents: [agent(0), agent(1)],
            objects: [object(0), object(1)],
            tick: 0,
            horizon: self.config.horizon,
            done: false,
            success: false,
            collided: false,
            fired: 0,
        }
    }

    /// Draws spawn pairs until one passes the spacing rule and the solo
    /// completability check for both agents.
    fn find_spawn<R: Rng>(&self, rng: &mut R, tries: usize) -> Option<WorldState> {
        let cells = &self.layout.spawn_region;
        if cells.len() < 2 {
            return None;
        }
        for _ in 0..tries {
            let a = cells[rng.random_range(0..cells.len())];
            let b = cells[rng.random_range(0..cells.len())];
            let ha = Heading::ALL[rng.random_range(0..4)];
            let hb = Heading::ALL[rng.random_range(0..4)];
            if a.manhattan(b) < MIN_SPAWN_DISTANCE {
                continue;
            }
            let state = self.initial_state([a, b], [ha, hb]);
            if planner::solo_completable(self, &state, 0) && planner::solo_completable(self, &state, 1)
            {
                return Some(state);
            }
        }
        None
    }

    /// Starts a new episode. Spawns are a deterministic function of
    /// `(layout_seed, episode_seed)`.
    pub fn reset(&self, episode_seed: u64) -> (WorldState, [Vec<f64>; NUM_AGENTS]) {
        let mut rng = derived_rng(self.layout_seed, &[tag::EPISODE, episode_seed]);
        let state = self
            .find_spawn(&mut rng, 10_000)
            .or_else(|| self.enumerate_spawn())
            .expect("layout admitted a spawn at generation time");
        let obs = self.observe(&state);
        (state, obs)
    }

    fn enumerate_spawn(&self) -> Option<WorldState> {
        let cells = &self.layout.spawn_region;
        for &a in cells {
            for &b in cells {
                if a.manhattan(b) < MIN_SPAWN_DISTANCE {
                    continue;
                }
                let state = self.initial_state([a, b], [Heading::N, Heading::N]);
                if planner::solo_completable(self, &state, 0)
                    && planner::solo_completable(self, &state, 1)
                {
                    return Some(state);
                }
            }
        }
        None
    }

    /// Builds a state with explicit spawns; used by tests and replays.
    pub fn state_with_spawns(&self, spawns: [Cell; 2], headings: [Heading; 2]) -> Result<WorldState> {
        for c in spawns {
            if !self.layout.spawn_region.contains(&c) {
                return Err(Error::InvalidState(format!("spawn {c} is not navigable")));
            }
        }
        Ok(self.initial_state(spawns, headings))
    }

    pub fn observe(&self, state: &WorldState) -> [Vec<f64>; NUM_AGENTS] {
        [observation(&self.config, state, 0), observation(&self.config, state, 1)]
    }

    /// Precondition table for starting `action` this tick.
    pub fn check_preconditions(&self, state: &WorldState, agent: usize, action: ActionId) -> bool {
        let me = &state.agents[agent];
        match action.decode() {
            Action::Navigate(e) => match state.entity_cell(e) {
                Some(target) => shortest_path(state, me.pos, target).is_ok(),
                None => false,
            },
            Action::Pick(i) => {
                me.holding.is_none()
                    && match state.objects[i].location {
                        ObjectLocation::OnReceptacle(r) => {
                            state.is_open(r) && me.pos.chebyshev(state.layout.receptacles[r].cell) <= 1
                        }
                        ObjectLocation::HeldBy(_) => false,
                    }
            }
            Action::Place(i) => me.holding == Some(i) && me.pos.chebyshev(state.goal_cell(i)) <= 1,
            Action::Open(j) => match state.layout.receptacles.get(j) {
                Some(r) => r.openable && !state.is_open(j) && me.pos.chebyshev(r.cell) <= 1,
                None => false,
            },
            Action::MoveForward => {
                let next = me.pos.step(me.heading);
                !state.blocked(next) && next != state.agents[1 - agent].pos
            }
            Action::NoOp | Action::TurnLeft | Action::TurnRight => true,
        }
    }

    /// Advances the world by one tick.
    ///
    /// `actions[i]` is read only for agents without an active macro; an agent
    /// mid-macro keeps executing it.
    pub fn step_joint(&self, state: &mut WorldState, actions: [ActionId; NUM_AGENTS]) -> Result<StepOutcome> {
        if state.done {
            return Err(Error::EpisodeDone);
        }
        for a in actions {
            if a.0 as usize >= NUM_ACTIONS {
                return Err(Error::InvalidAction(a.0 as usize));
            }
        }

        // Phase 1: start macros for deciding agents. Infeasible starts degrade to NoOp.
        let mut executing = [ActionId::NOOP; NUM_AGENTS];
        for i in 0..NUM_AGENTS {
            executing[i] = match state.agents[i].active_macro {
                Some(m) => m.action,
                None => {
                    let a = actions[i];
                    if self.check_preconditions(state, i, a) {
                        a
                    } else {
                        ActionId::NOOP
                    }
                }
            };
        }

        // Phase 2: per-agent intent for this tick.
        let old_pos = [state.agents[0].pos, state.agents[1].pos];
        let mut new_pos = old_pos;
        let mut finished = [false; NUM_AGENTS];
        let mut manip: [Option<Action>; NUM_AGENTS] = [None, None];
        let nav_cap = 2 * (self.config.width + self.config.height) as u32;
        for i in 0..NUM_AGENTS {
            let id = executing[i];
            let agent = &state.agents[i];
            match id.decode() {
                Action::NoOp => finished[i] = true,
                Action::TurnLeft => {
                    state.agents[i].heading = agent.heading.left();
                    finished[i] = true;
                }
                Action::TurnRight => {
                    state.agents[i].heading = agent.heading.right();
                    finished[i] = true;
                }
                Action::MoveForward => {
                    // Feasibility was checked against the partner's position at tick start.
                    if agent.active_macro.is_none() {
                        new_pos[i] = agent.pos.step(agent.heading);
                    }
                    finished[i] = true;
                }
                Action::Navigate(e) => {
                    let ticks = agent.active_macro.map_or(0, |m| m.ticks);
                    let path = state
                        .entity_cell(e)
                        .ok_or(NoPath)
                        .and_then(|target| shortest_path(state, agent.pos, target));
                    match path {
                        Ok(path) if !path.is_empty() && ticks < nav_cap => {
                            new_pos[i] = path[0];
                            if let Some(h) = Heading::between(agent.pos, path[0]) {
                                state.agents[i].heading = h;
                            }
                            finished[i] = path.len() == 1;
                        }
                        _ => finished[i] = true,
                    }
                    if !finished[i] {
                        state.agents[i].active_macro = Some(MacroProgress { action: id, ticks: ticks + 1 });
                    }
                }
                a @ (Action::Pick(_) | Action::Place(_) | Action::Open(_)) => {
                    manip[i] = Some(a);
                    finished[i] = true;
                }
            }
        }

        // Phase 3: manipulation postconditions. Two agents contending for the
        // same object or receptacle in one tick both fail.
        let contended = match (manip[0], manip[1]) {
            (Some(Action::Pick(a)), Some(Action::Pick(b))) => a == b,
            (Some(Action::Open(a)), Some(Action::Open(b))) => a == b,
            _ => false,
        };
        let mut events = Vec::new();
        for i in 0..NUM_AGENTS {
            let Some(a) = manip[i] else { continue };
            if contended || !self.check_preconditions(state, i, executing[i]) {
                executing[i] = ActionId::NOOP;
                continue;
            }
            let kind = apply_postconditions(state, i, a);
            if !state.event_fired(kind) {
                state.fired |= 1 << kind.index();
                events.push(SubgoalEvent { kind, agent: i });
            }
        }

        // Phase 4: movement and collision.
        for i in 0..NUM_AGENTS {
            state.agents[i].pos = new_pos[i];
            if finished[i] {
                state.agents[i].active_macro = None;
            }
        }
        let collision = new_pos[0] == new_pos[1] || (new_pos[0] == old_pos[1] && new_pos[1] == old_pos[0]);

        state.tick += 1;
        let success = !collision && state.is_success();
        state.collided = collision;
        state.success = success;
        state.done = collision || success || state.tick >= state.horizon;

        let reward = if success { SUCCESS_REWARD } else { 0.0 } + SUBGOAL_REWARD * events.len() as f64
            - TICK_PENALTY;
        Ok(StepOutcome {
            obs: self.observe(state),
            reward,
            done: state.done,
            success,
            collision,
            events,
            decision_flags: finished,
            executed: executing,
        })
    }
}

/// Applies the postcondition of a manipulation skill whose preconditions hold.
fn apply_postconditions(state: &mut WorldState, agent: usize, action: Action) -> EventKind {
    match action {
        Action::Pick(i) => {
            state.objects[i].location = ObjectLocation::HeldBy(agent);
            state.agents[agent].holding = Some(i);
            EventKind::PickedObject(i)
        }
        Action::Place(i) => {
            state.objects[i].location = ObjectLocation::OnReceptacle(state.objects[i].goal);
            state.agents[agent].holding = None;
            EventKind::PlacedObject(i)
        }
        Action::Open(j) => {
            state.receptacle_open[j] = true;
            EventKind::OpenedReceptacle(j)
        }
        other => unreachable!("{other:?} has no postcondition"),
    }
}
