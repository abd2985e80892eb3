//! Seeded random streams. Every consumer of randomness gets its own ChaCha
//! stream keyed by (seed, purpose, index), so results do not depend on the
//! order in which members are processed or on the number of workers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Truth = 1,
    ObservationNoise = 2,
    Ensemble = 3,
    Oracle = 4,
    Sensitivity = 5,
}

pub fn stream(seed: u64, purpose: Purpose, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((purpose as u64) << 48) | (index & 0xFFFF_FFFF_FFFF));
    rng
}
