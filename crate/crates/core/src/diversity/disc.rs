use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::DiscBuffer;
use crate::approximator::{build_layers, log_softmax, round_to_f32, Adam, Layer};
use crate::{Error, Result};

/// Two-hidden-layer tanh MLP: `input -> hidden -> hidden -> classes`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscShape {
    pub input: usize,
    pub hidden: usize,
    pub classes: usize,
}

impl DiscShape {
    pub fn new(classes: usize) -> Self {
        Self { input: 3 * super::WINDOW_LEN, hidden: 128, classes }
    }

    pub fn layers(&self) -> Vec<Layer> {
        build_layers(&[
            ("l1.w".into(), self.hidden, self.input),
            ("l1.b".into(), self.hidden, 1),
            ("l2.w".into(), self.hidden, self.hidden),
            ("l2.b".into(), self.hidden, 1),
            ("out.w".into(), self.classes, self.hidden),
            ("out.b".into(), self.classes, 1),
        ])
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(Layer::len).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    pub shape: DiscShape,
    pub layers: Vec<Layer>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct DiscCache {
    x: Vec<f64>,
    h1: Vec<f64>,
    h2: Vec<f64>,
}

impl Discriminator {
    pub fn zeros(shape: DiscShape) -> Self {
        Self { layers: shape.layers(), data: vec![0.0; shape.param_count()], shape }
    }

    pub fn init<R: Rng>(shape: DiscShape, rng: &mut R) -> Self {
        let mut d = Self::zeros(shape);
        for layer in d.layers.clone() {
            if layer.cols == 1 {
                continue;
            }
            let scale = 1.0 / (layer.cols as f64).sqrt();
            for x in &mut d.data[layer.range()] {
                let s: f64 = StandardNormal.sample(rng);
                *x = s * scale;
            }
        }
        round_to_f32(&mut d.data);
        d
    }

    pub fn from_data(shape: DiscShape, data: Vec<f64>) -> Self {
        Self { layers: shape.layers(), data, shape }
    }

    fn dense(&self, w: usize, b: usize, rows: usize, cols: usize, x: &[f64], act: bool) -> Vec<f64> {
        let d = &self.data;
        (0..rows)
            .map(|i| {
                let row = &d[self.layers[w].offset + i * cols..self.layers[w].offset + (i + 1) * cols];
                let s = d[self.layers[b].offset + i] + crate::approximator::dot(row, x);
                if act {
                    s.tanh()
                } else {
                    s
                }
            })
            .collect()
    }

    pub fn forward(&self, window: &[f64]) -> Result<Vec<f64>> {
        self.forward_cached(window).map(|(l, _)| l)
    }

    pub fn forward_cached(&self, window: &[f64]) -> Result<(Vec<f64>, DiscCache)> {
        let s = &self.shape;
        if window.len() != s.input {
            return Err(Error::InputLength { expected: s.input, got: window.len() });
        }
        let h1 = self.dense(0, 1, s.hidden, s.input, window, true);
        let h2 = self.dense(2, 3, s.hidden, s.hidden, &h1, true);
        let logits = self.dense(4, 5, s.classes, s.hidden, &h2, false);
        Ok((logits, DiscCache { x: window.to_vec(), h1, h2 }))
    }

    pub fn backward(&self, cache: &DiscCache, dlogits: &[f64], grad: &mut [f64]) {
        let s = &self.shape;
        let back = |grad: &mut [f64], w: usize, b: usize, cols: usize, dout: &[f64], x: &[f64]| -> Vec<f64> {
            let (wo, bo) = (self.layers[w].offset, self.layers[b].offset);
            let mut dx = vec![0.0; cols];
            for (i, &di) in dout.iter().enumerate() {
                if di == 0.0 {
                    continue;
                }
                grad[bo + i] += di;
                let row = wo + i * cols;
                for j in 0..cols {
                    grad[row + j] += di * x[j];
                    dx[j] += di * self.data[row + j];
                }
            }
            dx
        };
        let dh2 = back(grad, 4, 5, s.hidden, dlogits, &cache.h2);
        let dz2: Vec<f64> = dh2.iter().zip(&cache.h2).map(|(d, h)| d * (1.0 - h * h)).collect();
        let dh1 = back(grad, 2, 3, s.hidden, &dz2, &cache.h1);
        let dz1: Vec<f64> = dh1.iter().zip(&cache.h1).map(|(d, h)| d * (1.0 - h * h)).collect();
        back(grad, 0, 1, s.input, &dz1, &cache.x);
    }

    /// Mean cross-entropy of `q(z | window)` over a batch and its gradient.
    pub fn cross_entropy(&self, batch: &[(&[f64], usize)]) -> Result<(f64, Vec<f64>)> {
        let mut grad = vec![0.0; self.data.len()];
        let mut total = 0.0;
        let scale = 1.0 / batch.len() as f64;
        for &(w, z) in batch {
            let (logits, cache) = self.forward_cached(w)?;
            let lp = log_softmax(&logits);
            total -= lp[z];
            let dlogits: Vec<f64> = lp
                .iter()
                .enumerate()
                .map(|(k, l)| scale * (l.exp() - if k == z { 1.0 } else { 0.0 }))
                .collect();
            self.backward(&cache, &dlogits, &mut grad);
        }
        Ok((total * scale, grad))
    }

    pub fn predict(&self, window: &[f64]) -> Result<usize> {
        let logits = self.forward(window)?;
        let mut best = 0;
        for (i, &l) in logits.iter().enumerate() {
            if l > logits[best] {
                best = i;
            }
        }
        Ok(best)
    }

    pub fn accuracy(&self, samples: &[(Vec<f64>, usize)]) -> Result<f64> {
        if samples.is_empty() {
            return Err(Error::Empty("accuracy sample set"));
        }
        let mut hits = 0;
        for (w, z) in samples {
            if self.predict(w)? == *z {
                hits += 1;
            }
        }
        Ok(hits as f64 / samples.len() as f64)
    }
}

/// One gradient step on a uniformly drawn batch; returns the batch
/// cross-entropy before the step.
pub fn disc_update<R: Rng>(
    disc: &mut Discriminator,
    adam: &mut Adam,
    buffer: &DiscBuffer,
    batch_size: usize,
    rng: &mut R,
) -> Result<f64> {
    if buffer.is_empty() {
        return Err(Error::Empty("discriminator buffer"));
    }
    let picks: Vec<(Vec<f64>, usize)> = (0..batch_size)
        .map(|_| {
            let (w, z) = buffer.get(rng.random_range(0..buffer.len()));
            (w, z)
        })
        .collect();
    let batch: Vec<(&[f64], usize)> = picks.iter().map(|(w, z)| (w.as_slice(), *z)).collect();
    let (ce, mut grad) = disc.cross_entropy(&batch)?;
    let layers = disc.layers.clone();
    adam.step(&mut disc.data, &mut grad, &layers)?;
    Ok(ce)
}
