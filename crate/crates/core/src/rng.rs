//! Random streams. One root seed; replicate `i` reads ChaCha stream `i`, so
//! replicates are independent and reproducible regardless of scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

pub fn root_stream(seed: u64) -> SimRng {
    replicate_stream(seed, 0)
}

pub fn replicate_stream(seed: u64, index: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}
