//! Counter-based random streams.
//!
//! Every random draw in a run comes from a ChaCha8 generator keyed by the
//! scenario seed and positioned on a 64-bit stream id:
//!
//! ```text
//! stream = purpose << 56 | (drop & 0xff_ffff) << 32 | index
//! ```
//!
//! so the sample consumed by trial `i` of drop `d` never depends on which
//! thread evaluates it or in which order.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::linalg::{CVec, C64};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Purpose {
    Geometry = 1,
    LosDraw = 2,
    PilotAssignment = 3,
    Channel = 4,
    Selection = 5,
    GreedyBook = 6,
    NumericalSinr = 7,
    Oracle = 8,
}

pub fn stream_id(purpose: Purpose, drop: u32, index: u32) -> u64 {
    ((purpose as u64) << 56) | (((drop as u64) & 0x00ff_ffff) << 32) | index as u64
}

pub fn stream(seed: u64, purpose: Purpose, drop: u32, index: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id(purpose, drop, index));
    rng
}

/// One `CN(0, 1)` sample.
#[inline]
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

pub fn complex_normal_vec<R: Rng + ?Sized>(rng: &mut R, n: usize) -> CVec {
    CVec::from_fn(n, |_, _| complex_normal(rng))
}
