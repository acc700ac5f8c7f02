//! Fixed task plans executed step by step, without reacting to the partner.
//!
//! A plan step is skipped once its postcondition already holds (whoever
//! achieved it) or once it can no longer succeed, e.g. the partner is holding
//! the object this plan wanted to pick.

use serde::{Deserialize, Serialize};

use super::{Action, ActionId, Entity, Environment, ObjectLocation, WorldState, NUM_AGENTS, NUM_OBJECTS};

/// Which fixed plan a scripted agent follows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScriptKind {
    Noop,
    Object(usize),
    FullTask,
}

impl ScriptKind {
    pub fn build(self, env: &Environment) -> ScriptedPlan {
        match self {
            ScriptKind::Noop => ScriptedPlan::noop(),
            ScriptKind::Object(i) => ScriptedPlan::for_object(env, i),
            ScriptKind::FullTask => ScriptedPlan::full_task(env),
        }
    }

    pub fn name(self) -> String {
        match self {
            ScriptKind::Noop => "noop".into(),
            ScriptKind::Object(i) => format!("object{i}"),
            ScriptKind::FullTask => "full_task".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptedPlan {
    pub steps: Vec<ActionId>,
    pub index: usize,
}

impl ScriptedPlan {
    pub fn new(steps: Vec<ActionId>) -> Self {
        Self { steps, index: 0 }
    }

    pub fn noop() -> Self {
        Self::new(Vec::new())
    }

    /// Rearranges one object: navigate, open its receptacle when openable,
    /// pick, carry, place.
    pub fn for_object(env: &Environment, object: usize) -> Self {
        Self::new(object_steps(env, object))
    }

    /// Both objects in order; a single agent can finish the task with it.
    pub fn full_task(env: &Environment) -> Self {
        Self::new((0..NUM_OBJECTS).flat_map(|i| object_steps(env, i)).collect())
    }

    pub fn restart(&mut self) {
        self.index = 0;
    }

    pub fn is_exhausted(&self) -> bool {
        self.index >= self.steps.len()
    }

    /// Chooses the action for a decision step of `agent`.
    pub fn next_action(&mut self, state: &WorldState, agent: usize) -> ActionId {
        while let Some(&step) = self.steps.get(self.index) {
            match step_status(state, agent, step) {
                StepStatus::Pending => return step,
                StepStatus::Done | StepStatus::Unreachable => self.index += 1,
            }
        }
        ActionId::NOOP
    }
}

fn object_steps(env: &Environment, object: usize) -> Vec<ActionId> {
    let start = env.object_start(object);
    let mut steps = vec![Action::Navigate(Entity::Object(object)).id()];
    if env.layout().receptacles[start].openable {
        steps.push(Action::Open(start).id());
    }
    steps.extend([
        Action::Pick(object).id(),
        Action::Navigate(Entity::Goal(object)).id(),
        Action::Place(object).id(),
    ]);
    steps
}

enum StepStatus {
    Pending,
    Done,
    Unreachable,
}

fn step_status(state: &WorldState, agent: usize, step: ActionId) -> StepStatus {
    let me = &state.agents[agent];
    let partner_holds = |i: usize| state.objects[i].location == ObjectLocation::HeldBy(1 - agent);
    let gone = |i: usize| partner_holds(i) || (state.object_at_goal(i) && me.holding != Some(i));
    match step.decode() {
        Action::Navigate(Entity::Object(i)) => {
            if gone(i) {
                StepStatus::Unreachable
            } else if state.object_cell(i).manhattan(me.pos) <= 1 {
                StepStatus::Done
            } else {
                StepStatus::Pending
            }
        }
        Action::Navigate(Entity::Goal(i)) => {
            if me.holding != Some(i) {
                StepStatus::Unreachable
            } else if state.goal_cell(i).manhattan(me.pos) <= 1 {
                StepStatus::Done
            } else {
                StepStatus::Pending
            }
        }
        Action::Navigate(e) => match state.entity_cell(e) {
            Some(c) if c.manhattan(me.pos) <= 1 => StepStatus::Done,
            Some(_) => StepStatus::Pending,
            None => StepStatus::Unreachable,
        },
        Action::Open(j) => {
            if state.is_open(j) {
                StepStatus::Done
            } else {
                StepStatus::Pending
            }
        }
        Action::Pick(i) => {
            if me.holding == Some(i) {
                StepStatus::Done
            } else if gone(i) {
                StepStatus::Unreachable
            } else {
                StepStatus::Pending
            }
        }
        Action::Place(i) => {
            if state.object_at_goal(i) {
                StepStatus::Done
            } else if me.holding != Some(i) {
                StepStatus::Unreachable
            } else {
                StepStatus::Pending
            }
        }
        _ => StepStatus::Pending,
    }
}

/// Runs the full-task plan for `agent` against an idle partner on a copy of
/// `state`, returning whether the task succeeds before the horizon.
pub fn solo_completable(env: &Environment, state: &WorldState, agent: usize) -> bool {
    let mut s = state.clone();
    let mut plan = ScriptedPlan::full_task(env);
    let mut deciding = [true; NUM_AGENTS];
    while !s.done {
        let mut actions = [ActionId::NOOP; NUM_AGENTS];
        if deciding[agent] {
            actions[agent] = plan.next_action(&s, agent);
        }
        let Ok(out) = env.step_joint(&mut s, actions) else { return false };
        deciding = out.decision_flags;
    }
    s.success
}
