//! Breadth-first navigation over static obstacles. The partner agent is
//! deliberately not an obstacle here; avoiding it is the policy's job.

use std::collections::VecDeque;

use super::{Cell, Heading, WorldState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("no path to target")]
pub struct NoPath;

/// Shortest path from `from` to any cell 4-adjacent to `target`, excluding
/// `from` itself. Neighbours are expanded in N, E, S, W order so ties resolve
/// deterministically.
pub fn shortest_path(state: &WorldState, from: Cell, target: Cell) -> Result<Vec<Cell>, NoPath> {
    let layout = &state.layout;
    path_over(layout.width, layout.height, |c| state.blocked(c), from, target)
}

pub(crate) fn path_over(
    width: i32,
    height: i32,
    blocked: impl Fn(Cell) -> bool,
    from: Cell,
    target: Cell,
) -> Result<Vec<Cell>, NoPath> {
    if from.manhattan(target) == 1 {
        return Ok(Vec::new());
    }
    let idx = |c: Cell| (c.y * width + c.x) as usize;
    let inside = |c: Cell| c.x >= 0 && c.y >= 0 && c.x < width && c.y < height;
    let mut parent: Vec<Option<Cell>> = vec![None; (width * height) as usize];
    let mut seen = vec![false; (width * height) as usize];
    seen[idx(from)] = true;
    let mut queue = VecDeque::from([from]);
    while let Some(c) = queue.pop_front() {
        for h in Heading::ALL {
            let n = c.step(h);
            if !inside(n) || seen[idx(n)] || blocked(n) {
                continue;
            }
            seen[idx(n)] = true;
            parent[idx(n)] = Some(c);
            if n.manhattan(target) == 1 {
                let mut path = vec![n];
                let mut cur = n;
                while let Some(p) = parent[idx(cur)] {
                    if p == from {
                        break;
                    }
                    path.push(p);
                    cur = p;
                }
                path.reverse();
                return Ok(path);
            }
            queue.push_back(n);
        }
    }
    Err(NoPath)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn open_5x5_blocked(c: Cell) -> bool {
        c.x == 0 || c.y == 0 || c.x == 4 || c.y == 4
    }

    #[test]
    fn adjacent_start_gives_empty_path() {
        let p = path_over(5, 5, open_5x5_blocked, Cell::new(2, 2), Cell::new(2, 3)).unwrap();
        assert!(p.is_empty());
    }

    #[test]
    fn open_grid_corner_to_corner_is_three_moves() {
        let p = path_over(5, 5, open_5x5_blocked, Cell::new(1, 1), Cell::new(3, 3)).unwrap();
        assert_eq!(p.len(), 3);
        assert_eq!(p.last().unwrap().manhattan(Cell::new(3, 3)), 1);
        // Tie-break: east is scanned before south, so the path leaves eastwards.
        assert_eq!(p[0], Cell::new(2, 1));
    }

    #[test]
    fn enclosed_target_has_no_path() {
        let target = Cell::new(5, 5);
        let blocked = |c: Cell| {
            c.x == 0 || c.y == 0 || c.x == 8 || c.y == 8 || (c.chebyshev(target) == 1)
        };
        assert_eq!(path_over(9, 9, blocked, Cell::new(1, 1), target), Err(NoPath));
    }
}
