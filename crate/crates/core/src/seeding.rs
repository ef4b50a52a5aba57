//! Independent random streams derived from one master seed.
//!
//! Every consumer gets its own ChaCha stream keyed by `(master, stream id)`, so
//! drawing more numbers in one component never shifts another's sequence.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Stream {
    Env = 1,
    EvalEnv = 2,
    PolicyInit = 3,
    CriticInit = 4,
    Buffer = 5,
    ActionNoise = 6,
    UpdateNoise = 7,
}

#[derive(Debug, Clone, Copy)]
pub struct SeedStreams {
    master: u64,
}

impl SeedStreams {
    pub fn new(master: u64) -> Self {
        Self { master }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    pub fn rng(&self, stream: Stream) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master);
        rng.set_stream(stream as u64);
        rng
    }
}
