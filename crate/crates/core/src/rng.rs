//! Counter-based random streams.
//!
//! Every trial owns a ChaCha8 stream selected by `(master_seed, trial,
//! purpose)`, so results do not depend on scheduling or thread count.
//! [`KeyedDraws`] goes one step further and derives each draw from the
//! interaction id, so the same interaction sees the same direction no matter
//! where it lands in an ordering.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::collapse::Direction;

/// Independent stream families within one trial.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum Purpose {
    Shifts = 0,
    Ordering = 1,
    Sampling = 2,
}

fn stream_id(trial: u64, purpose: Purpose) -> u64 {
    (trial << 8) | purpose as u64
}

/// Uniform in `[0, 1)` from the top 53 bits.
#[inline]
pub fn unit_f64(bits: u64) -> f64 {
    (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Random inputs consumed by a walk.
pub trait Draws {
    /// Fair ±1 draw for the shift caused by `interaction`.
    fn direction(&mut self, interaction: u64) -> Direction;

    /// Uniform `[0, 1)` draw attached to `interaction`; `slot` distinguishes
    /// several draws for the same interaction (1..=3).
    fn unit(&mut self, interaction: u64, slot: u32) -> f64;
}

/// Sequential per-trial stream. Ignores interaction ids.
#[derive(Clone, Debug)]
pub struct TrialRng {
    rng: ChaCha8Rng,
    bits: u64,
    remaining: u32,
}

impl TrialRng {
    pub fn new(master_seed: u64, trial: u64, purpose: Purpose) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
        rng.set_stream(stream_id(trial, purpose));
        TrialRng { rng, bits: 0, remaining: 0 }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    pub fn next_unit(&mut self) -> f64 {
        unit_f64(self.rng.next_u64())
    }

    /// One fair bit, drawn 64 at a time.
    #[inline]
    pub fn next_bit(&mut self) -> bool {
        if self.remaining == 0 {
            self.bits = self.rng.next_u64();
            self.remaining = 64;
        }
        let b = self.bits & 1 == 1;
        self.bits >>= 1;
        self.remaining -= 1;
        b
    }
}

impl Draws for TrialRng {
    #[inline]
    fn direction(&mut self, _interaction: u64) -> Direction {
        if self.next_bit() {
            Direction::Increase
        } else {
            Direction::Decrease
        }
    }

    fn unit(&mut self, _interaction: u64, _slot: u32) -> f64 {
        self.next_unit()
    }
}

/// Draws addressed by interaction id: direction and step draws for
/// interaction `i` of a trial are fixed regardless of the order in which
/// interactions are processed.
#[derive(Clone, Debug)]
pub struct KeyedDraws {
    rng: ChaCha8Rng,
}

impl KeyedDraws {
    pub fn new(master_seed: u64, trial: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
        rng.set_stream(stream_id(trial, Purpose::Shifts));
        KeyedDraws { rng }
    }

    fn word(&mut self, interaction: u64, slot: u32) -> u64 {
        // four 64-bit words per interaction
        self.rng.set_word_pos((interaction as u128) * 8 + (slot as u128 & 3) * 2);
        self.rng.next_u64()
    }
}

impl Draws for KeyedDraws {
    fn direction(&mut self, interaction: u64) -> Direction {
        if self.word(interaction, 0) & 1 == 1 {
            Direction::Increase
        } else {
            Direction::Decrease
        }
    }

    fn unit(&mut self, interaction: u64, slot: u32) -> f64 {
        unit_f64(self.word(interaction, slot))
    }
}
