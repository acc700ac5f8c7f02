use std::collections::VecDeque;

/// Ticks of history the discriminator sees.
pub const WINDOW_LEN: usize = 40;

/// Sliding window of per-tick `(x, y, action)` features for one agent.
/// Positions are normalized to [-1, 1], actions to `index / |A|`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryWindow {
    len: usize,
    ticks: VecDeque<[f64; 3]>,
}

impl Default for TrajectoryWindow {
    fn default() -> Self {
        Self::new(WINDOW_LEN)
    }
}

impl TrajectoryWindow {
    pub fn new(len: usize) -> Self {
        Self { len, ticks: VecDeque::with_capacity(len) }
    }

    pub fn clear(&mut self) {
        self.ticks.clear();
    }

    pub fn push(&mut self, x: i32, y: i32, width: i32, height: i32, action: usize, num_actions: usize) {
        if self.ticks.len() == self.len {
            self.ticks.pop_front();
        }
        self.ticks.push_back([
            x as f64 / (width - 1) as f64 * 2.0 - 1.0,
            y as f64 / (height - 1) as f64 * 2.0 - 1.0,
            action as f64 / num_actions as f64,
        ]);
    }

    /// Flat `3 * len` vector, oldest first, zero-padded at the front.
    pub fn flat(&self) -> Vec<f64> {
        let mut v = vec![0.0; 3 * (self.len - self.ticks.len())];
        for t in &self.ticks {
            v.extend_from_slice(t);
        }
        v
    }
}
