//! Per-agent observation vectors and the ground-truth predicate encoding.
//!
//! Layout of the base vector (21 values):
//!
//! | slice   | content                                          |
//! |---------|--------------------------------------------------|
//! | 0..2    | own position, normalized to [-1, 1]              |
//! | 2..6    | heading one-hot (N, E, S, W)                     |
//! | 6..9    | holding one-hot (nothing, object 0, object 1)    |
//! | 9..13   | (dx, dy) to object 0 and object 1                |
//! | 13..17  | (dx, dy) to goal 0 and goal 1                    |
//! | 17..19  | (dx, dy) to the partner                          |
//! | 19..21  | open flags of receptacles 0 and 1                |
//!
//! Optional tails: a 5x5 occupancy patch, then the predicate vector.

use super::{Cell, Entity, ObjectLocation, WorldConfig, WorldState, NUM_AGENTS, NUM_ENTITIES, NUM_OBJECTS, NUM_OPENABLE};

const BASE_DIM: usize = 21;
const PATCH: i32 = 5;
/// Receptacle slots in the predicate encoding; absent receptacles read 0.
const RECEPTACLE_SLOTS: usize = 6;

pub fn oracle_dim() -> usize {
    NUM_AGENTS * NUM_ENTITIES + NUM_AGENTS + NUM_OBJECTS * (RECEPTACLE_SLOTS + NUM_OBJECTS)
}

pub fn observation_dim(config: &WorldConfig) -> usize {
    BASE_DIM
        + if config.local_patch { (PATCH * PATCH) as usize } else { 0 }
        + if config.oracle_state { oracle_dim() } else { 0 }
}

pub fn observation(config: &WorldConfig, state: &WorldState, agent: usize) -> Vec<f64> {
    let layout = &state.layout;
    let sx = (layout.width - 1) as f64;
    let sy = (layout.height - 1) as f64;
    let me = &state.agents[agent];
    let mut v = Vec::with_capacity(observation_dim(config));

    v.push(me.pos.x as f64 / sx * 2.0 - 1.0);
    v.push(me.pos.y as f64 / sy * 2.0 - 1.0);
    let mut heading = [0.0; 4];
    heading[me.heading.index()] = 1.0;
    v.extend_from_slice(&heading);
    let mut holding = [0.0; 3];
    holding[me.holding.map_or(0, |i| i + 1)] = 1.0;
    v.extend_from_slice(&holding);

    let mut rel = |c: Cell| {
        v.push((c.x - me.pos.x) as f64 / sx);
        v.push((c.y - me.pos.y) as f64 / sy);
    };
    for i in 0..NUM_OBJECTS {
        rel(state.object_cell(i));
    }
    for i in 0..NUM_OBJECTS {
        rel(state.goal_cell(i));
    }
    rel(state.agents[1 - agent].pos);
    for j in 0..NUM_OPENABLE {
        v.push(if state.receptacle_open.get(j).copied().unwrap_or(true) { 1.0 } else { 0.0 });
    }

    if config.local_patch {
        let r = PATCH / 2;
        let partner = state.agents[1 - agent].pos;
        for dy in -r..=r {
            for dx in -r..=r {
                let c = Cell::new(me.pos.x + dx, me.pos.y + dy);
                v.push(if c == partner {
                    -1.0
                } else if layout.is_wall(c) || layout.receptacle_at(c).is_some() {
                    1.0
                } else {
                    0.0
                });
            }
        }
    }
    if config.oracle_state {
        v.extend(oracle_state(state));
    }
    v
}

/// Binary predicates over the full state, identical for both agents:
/// `robot_at(agent, entity)` for every agent/entity pair (within one cell),
/// `is_holding(agent)`, and `object_at(object, place)` where places are the
/// receptacle slots followed by the two goals.
pub fn oracle_state(state: &WorldState) -> Vec<f64> {
    let bit = |b: bool| if b { 1.0 } else { 0.0 };
    let mut v = Vec::with_capacity(oracle_dim());
    for a in 0..NUM_AGENTS {
        let pos = state.agents[a].pos;
        for e in 0..NUM_ENTITIES {
            let near = state
                .entity_cell(Entity::from_index(e))
                .is_some_and(|c| c.chebyshev(pos) <= 1);
            v.push(bit(near));
        }
    }
    for a in 0..NUM_AGENTS {
        v.push(bit(state.agents[a].holding.is_some()));
    }
    for o in 0..NUM_OBJECTS {
        let loc = state.objects[o].location;
        for r in 0..RECEPTACLE_SLOTS {
            v.push(bit(loc == ObjectLocation::OnReceptacle(r)));
        }
        for g in 0..NUM_OBJECTS {
            v.push(bit(loc == ObjectLocation::OnReceptacle(state.objects[g].goal)));
        }
    }
    v
}
