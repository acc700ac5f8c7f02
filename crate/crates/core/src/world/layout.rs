use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Cell, Heading, Task, WorldConfig, NUM_OBJECTS};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Receptacle {
    pub id: usize,
    pub cell: Cell,
    pub openable: bool,
    /// Open flag at episode start; closed receptacles must be opened before picking.
    pub open: bool,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridLayout {
    pub width: i32,
    pub height: i32,
    walls: Vec<bool>,
    pub receptacles: Vec<Receptacle>,
    /// Navigable cells that are not receptacles; agents spawn here.
    pub spawn_region: Vec<Cell>,
}

impl GridLayout {
    /// Open rectangular room with border walls and the given receptacles.
    pub fn open_room(width: i32, height: i32, receptacles: Vec<Receptacle>) -> GridLayout {
        let mut layout = GridLayout {
            width,
            height,
            walls: vec![false; (width * height) as usize],
            receptacles,
            spawn_region: Vec::new(),
        };
        for y in 0..height {
            for x in 0..width {
                if x == 0 || y == 0 || x == width - 1 || y == height - 1 {
                    layout.set_wall(Cell::new(x, y));
                }
            }
        }
        layout.refresh_spawn_region();
        layout
    }

    pub fn in_bounds(&self, c: Cell) -> bool {
        c.x >= 0 && c.y >= 0 && c.x < self.width && c.y < self.height
    }

    pub fn is_wall(&self, c: Cell) -> bool {
        !self.in_bounds(c) || self.walls[(c.y * self.width + c.x) as usize]
    }

    pub fn set_wall(&mut self, c: Cell) {
        self.walls[(c.y * self.width + c.x) as usize] = true;
    }

    pub fn receptacle_at(&self, c: Cell) -> Option<usize> {
        self.receptacles.iter().position(|r| r.cell == c)
    }

    pub fn refresh_spawn_region(&mut self) {
        self.spawn_region = (0..self.height)
            .flat_map(|y| (0..self.width).map(move |x| Cell::new(x, y)))
            .filter(|&c| !self.is_wall(c) && self.receptacle_at(c).is_none())
            .collect();
    }

    fn neighbors(&self, c: Cell) -> impl Iterator<Item = Cell> + '_ {
        Heading::ALL.into_iter().map(move |h| c.step(h))
    }

    /// Checks the structural invariants: full border, wall-free receptacles,
    /// a connected floor, and floor access to every receptacle.
    pub fn validate(&self) -> bool {
        if self.width < 5 || self.height < 5 {
            return false;
        }
        for x in 0..self.width {
            if !self.is_wall(Cell::new(x, 0)) || !self.is_wall(Cell::new(x, self.height - 1)) {
                return false;
            }
        }
        for y in 0..self.height {
            if !self.is_wall(Cell::new(0, y)) || !self.is_wall(Cell::new(self.width - 1, y)) {
                return false;
            }
        }
        if self.receptacles.iter().any(|r| self.is_wall(r.cell) || (!r.openable && !r.open)) {
            return false;
        }
        let floor = &self.spawn_region;
        let Some(&start) = floor.first() else { return false };
        let mut seen = vec![false; (self.width * self.height) as usize];
        let idx = |c: Cell| (c.y * self.width + c.x) as usize;
        let mut queue = VecDeque::from([start]);
        seen[idx(start)] = true;
        let mut count = 1;
        while let Some(c) = queue.pop_front() {
            for n in self.neighbors(c) {
                if !self.is_wall(n) && self.receptacle_at(n).is_none() && !seen[idx(n)] {
                    seen[idx(n)] = true;
                    count += 1;
                    queue.push_back(n);
                }
            }
        }
        count == floor.len()
            && self
                .receptacles
                .iter()
                .all(|r| self.neighbors(r.cell).any(|n| floor.contains(&n)))
    }
}

/// Generates a candidate layout plus per-object start and goal receptacles.
/// Returns `None` when the draw violates an invariant; the caller retries.
pub(super) fn generate<R: Rng>(
    task: Task,
    config: &WorldConfig,
    rng: &mut R,
) -> Option<(GridLayout, [usize; NUM_OBJECTS], [usize; NUM_OBJECTS])> {
    let (w, h) = (config.width, config.height);
    let mut layout = GridLayout::open_room(w, h, Vec::new());

    // Interior clutter only on larger grids.
    if w >= 9 && h >= 9 {
        let count = ((w - 2) * (h - 2) / 12) as usize;
        for _ in 0..count {
            let c = Cell::new(rng.random_range(2..w - 2), rng.random_range(2..h - 2));
            layout.set_wall(c);
        }
    }

    // Furniture stands against walls.
    let mut candidates: Vec<Cell> = (1..h - 1)
        .flat_map(|y| (1..w - 1).map(move |x| Cell::new(x, y)))
        .filter(|&c| !layout.is_wall(c) && Heading::ALL.iter().any(|&hd| layout.is_wall(c.step(hd))))
        .collect();
    candidates.shuffle(rng);
    let n = config.num_receptacles;
    if candidates.len() < n + 2 {
        return None;
    }

    let mut cells: Vec<Cell> = Vec::with_capacity(n);
    match task {
        // Drawer and fridge sit next to each other.
        Task::SetTable => {
            let first = candidates[0];
            let second = *candidates[1..].iter().find(|c| c.chebyshev(first) == 1)?;
            cells.push(first);
            cells.push(second);
        }
        // Counter close to the fridge.
        Task::PrepareGroceries => {
            let first = candidates[0];
            let second = *candidates[1..]
                .iter()
                .find(|c| (1..=2).contains(&c.chebyshev(first)))?;
            cells.push(first);
            cells.push(second);
        }
        Task::TidyHouse => {}
    }
    for &c in &candidates {
        if cells.len() == n {
            break;
        }
        if !cells.contains(&c) {
            cells.push(c);
        }
    }
    if cells.len() < n {
        return None;
    }

    let label = |task: Task, j: usize| -> &'static str {
        match (task, j) {
            (Task::SetTable, 0) => "drawer",
            (Task::SetTable, 1) => "fridge",
            (Task::SetTable, 2 | 3) => "table",
            (Task::PrepareGroceries, 0) => "fridge",
            (Task::PrepareGroceries, 1) => "counter",
            (Task::PrepareGroceries, 2) => "table",
            _ => "shelf",
        }
    };
    layout.receptacles = cells
        .iter()
        .enumerate()
        .map(|(j, &cell)| {
            let openable = match task {
                Task::SetTable => j < 2,
                Task::PrepareGroceries => j == 0,
                Task::TidyHouse => false,
            };
            Receptacle {
                id: j,
                cell,
                openable,
                open: !(task == Task::SetTable && j < 2),
                label: label(task, j).to_string(),
            }
        })
        .collect();
    layout.refresh_spawn_region();
    if !layout.validate() {
        return None;
    }

    let (starts, goals) = match task {
        Task::SetTable => ([0, 1], [2, 3]),
        Task::PrepareGroceries => ([0, 2], [1, 0]),
        Task::TidyHouse => {
            let mut ids: Vec<usize> = (0..n).collect();
            ids.shuffle(rng);
            ([ids[0], ids[1]], [ids[2], ids[3]])
        }
    };
    Some((layout, starts, goals))
}
