//! Behavior-diversity machinery: the trajectory discriminator whose
//! log-likelihood of the acting latent is the diversity reward, its sample
//! buffer, and the Jensen-Shannon bonus used by the TrajeDi baseline.

mod buffer;
mod disc;
mod jsd;
mod window;

pub use buffer::DiscBuffer;
pub use disc::{disc_update, DiscCache, DiscShape, Discriminator};
pub use jsd::trajedi_jsd;
pub use window::{TrajectoryWindow, WINDOW_LEN};

use crate::approximator::log_softmax;

/// Fraction of the horizon during which no diversity reward is paid.
pub const WARMUP_FRACTION: f64 = 0.1;
/// Weight of the diversity reward when added to the task reward.
pub const DEFAULT_ALPHA: f64 = 0.01;
pub const BUFFER_CAPACITY: usize = 100_000;

pub fn in_warmup(tick: u32, horizon: u32) -> bool {
    (tick as f64) < WARMUP_FRACTION * horizon as f64
}

/// Unscaled diversity reward `log q(z | window)`, or 0 during warm-up.
pub fn diversity_reward(disc: &Discriminator, window: &[f64], z: usize, tick: u32, horizon: u32) -> crate::Result<f64> {
    if in_warmup(tick, horizon) {
        return Ok(0.0);
    }
    let logits = disc.forward(window)?;
    if z >= logits.len() {
        return Err(crate::Error::LatentOutOfRange { z, k: logits.len() });
    }
    Ok(log_softmax(&logits)[z])
}
