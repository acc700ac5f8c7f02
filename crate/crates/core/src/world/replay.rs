//! Text replay log and ASCII rendering.
//!
//! Replay format, one line per tick, tab separated:
//!
//! ```text
//! <tick>  <x0>,<y0>  <x1>,<y1>  <action0>,<action1>  <reward>  <events>
//! ```
//!
//! `tick` counts from 1 (the state after the step), positions are the agent
//! cells after the step, actions are the executed action ids, `reward` uses
//! Rust's shortest round-trip float formatting, and `events` is a
//! `;`-separated list of `kind:index@agent` (`pick:0@1`) or `-` when empty.
//! Lines starting with `#` are comments; the header line records task and
//! seeds.

use std::fmt::Write as _;

use super::{StepOutcome, WorldState};

pub fn replay_header(task: &str, layout_seed: u64, episode_seed: u64) -> String {
    format!("# replay task={task} layout_seed={layout_seed} episode_seed={episode_seed}\n")
}

pub fn replay_line(state: &WorldState, out: &StepOutcome) -> String {
    let [a, b] = [&state.agents[0], &state.agents[1]];
    let events = if out.events.is_empty() {
        "-".to_string()
    } else {
        out.events
            .iter()
            .map(|e| format!("{}@{}", e.kind.label(), e.agent))
            .collect::<Vec<_>>()
            .join(";")
    };
    format!(
        "{}\t{},{}\t{},{}\t{},{}\t{}\t{}\n",
        state.tick,
        a.pos.x,
        a.pos.y,
        b.pos.x,
        b.pos.y,
        out.executed[0].0,
        out.executed[1].0,
        out.reward,
        events
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayRecord {
    pub tick: u32,
    pub positions: [(i32, i32); 2],
    pub actions: [u8; 2],
    pub reward: f64,
    pub events: Vec<String>,
}

pub fn parse_replay_line(line: &str) -> Option<ReplayRecord> {
    let f: Vec<&str> = line.trim_end().split('\t').collect();
    if f.len() != 6 {
        return None;
    }
    let pair = |s: &str| -> Option<(i32, i32)> {
        let (x, y) = s.split_once(',')?;
        Some((x.parse().ok()?, y.parse().ok()?))
    };
    let (a0, a1) = f[3].split_once(',')?;
    Some(ReplayRecord {
        tick: f[0].parse().ok()?,
        positions: [pair(f[1])?, pair(f[2])?],
        actions: [a0.parse().ok()?, a1.parse().ok()?],
        reward: f[4].parse().ok()?,
        events: if f[5] == "-" { Vec::new() } else { f[5].split(';').map(str::to_string).collect() },
    })
}

/// Grid picture: `#` wall, receptacle ids as digits (closed ones bracketed
/// by the legend), `A`/`B` agents, `a`/`b` for an agent holding an object.
pub fn render_ascii(state: &WorldState) -> String {
    let layout = &state.layout;
    let mut s = String::new();
    for y in 0..layout.height {
        for x in 0..layout.width {
            let c = super::Cell::new(x, y);
            let ch = if let Some(i) = state.agents.iter().position(|a| a.pos == c) {
                let held = state.agents[i].holding.is_some();
                match (i, held) {
                    (0, false) => 'A',
                    (0, true) => 'a',
                    (_, false) => 'B',
                    (_, true) => 'b',
                }
            } else if layout.is_wall(c) {
                '#'
            } else if let Some(r) = layout.receptacle_at(c) {
                char::from_digit(r as u32, 10).unwrap_or('R')
            } else {
                '.'
            };
            s.push(ch);
        }
        s.push('\n');
    }
    let _ = write!(s, "tick {}", state.tick);
    for (j, open) in state.receptacle_open.iter().enumerate() {
        if !open {
            let _ = write!(s, " [{j} closed]");
        }
    }
    for (i, o) in state.objects.iter().enumerate() {
        let _ = write!(s, " obj{i}:{:?}->{}", o.location, o.goal);
    }
    s.push('\n');
    s
}
