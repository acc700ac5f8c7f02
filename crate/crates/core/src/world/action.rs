use serde::{Deserialize, Serialize};

use super::{NUM_OBJECTS, NUM_OPENABLE};

/// Navigation targets: two objects, two goals, up to six receptacles.
pub const NUM_ENTITIES: usize = 2 * NUM_OBJECTS + 6;
const PICK_BASE: usize = NUM_ENTITIES;
const PLACE_BASE: usize = PICK_BASE + NUM_OBJECTS;
const OPEN_BASE: usize = PLACE_BASE + NUM_OBJECTS;
const PRIM_BASE: usize = OPEN_BASE + NUM_OPENABLE;
pub const NUM_ACTIONS: usize = PRIM_BASE + 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Entity {
    Object(usize),
    Goal(usize),
    Receptacle(usize),
}

impl Entity {
    pub fn index(self) -> usize {
        match self {
            Entity::Object(i) => i,
            Entity::Goal(i) => NUM_OBJECTS + i,
            Entity::Receptacle(j) => 2 * NUM_OBJECTS + j,
        }
    }

    pub fn from_index(idx: usize) -> Entity {
        match idx {
            i if i < NUM_OBJECTS => Entity::Object(i),
            i if i < 2 * NUM_OBJECTS => Entity::Goal(i - NUM_OBJECTS),
            i => Entity::Receptacle(i - 2 * NUM_OBJECTS),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Navigate(Entity),
    Pick(usize),
    Place(usize),
    Open(usize),
    NoOp,
    MoveForward,
    TurnLeft,
    TurnRight,
}

/// Index into the fixed action table shared by every task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ActionId(pub u8);

impl ActionId {
    pub const NOOP: ActionId = ActionId(PRIM_BASE as u8);

    pub fn decode(self) -> Action {
        let i = self.0 as usize;
        match i {
            i if i < PICK_BASE => Action::Navigate(Entity::from_index(i)),
            i if i < PLACE_BASE => Action::Pick(i - PICK_BASE),
            i if i < OPEN_BASE => Action::Place(i - PLACE_BASE),
            i if i < PRIM_BASE => Action::Open(i - OPEN_BASE),
            i if i == PRIM_BASE => Action::NoOp,
            i if i == PRIM_BASE + 1 => Action::MoveForward,
            i if i == PRIM_BASE + 2 => Action::TurnLeft,
            _ => Action::TurnRight,
        }
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn is_primitive(self) -> bool {
        self.0 as usize >= PRIM_BASE
    }
}

impl Action {
    pub fn id(self) -> ActionId {
        let i = match self {
            Action::Navigate(e) => e.index(),
            Action::Pick(i) => PICK_BASE + i,
            Action::Place(i) => PLACE_BASE + i,
            Action::Open(j) => OPEN_BASE + j,
            Action::NoOp => PRIM_BASE,
            Action::MoveForward => PRIM_BASE + 1,
            Action::TurnLeft => PRIM_BASE + 2,
            Action::TurnRight => PRIM_BASE + 3,
        };
        ActionId(i as u8)
    }
}
