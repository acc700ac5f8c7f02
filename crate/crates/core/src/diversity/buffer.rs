use std::collections::VecDeque;

/// FIFO store of `(window, latent)` samples for discriminator training.
#[derive(Debug, Clone)]
pub struct DiscBuffer {
    capacity: usize,
    items: VecDeque<(Box<[f32]>, u16)>,
    inserted: u64,
}

impl DiscBuffer {
    pub fn new(capacity: usize) -> Self {
        Self { capacity, items: VecDeque::new(), inserted: 0 }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Total insertions since creation, evicted ones included.
    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    pub fn push(&mut self, window: &[f64], z: usize) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back((window.iter().map(|&x| x as f32).collect(), z as u16));
        self.inserted += 1;
    }

    pub fn get(&self, i: usize) -> (Vec<f64>, usize) {
        let (w, z) = &self.items[i];
        (w.iter().map(|&x| x as f64).collect(), *z as usize)
    }

    pub fn oldest(&self) -> Option<(Vec<f64>, usize)> {
        (!self.is_empty()).then(|| self.get(0))
    }
}
