use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Resumable position of a ChaCha8 generator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    /// 128-bit word position, as a decimal string in JSON
    #[serde(with = "u128_string")]
    pub word_pos: u128,
}

mod u128_string {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &u128, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&v.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u128, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

/// Endless index stream over `0..len`: each pass is a fresh seeded shuffle.
#[derive(Clone, Debug)]
pub struct Cycler {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
    /// number of batches handed out
    pub draws: u64,
}

impl Cycler {
    pub fn new(len: usize, seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self {
            order: (0..len).collect(),
            pos: len,
            rng,
            draws: 0,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Next `count` indices, reshuffling whenever a pass is exhausted.
    pub fn next_batch(&mut self, count: usize) -> Vec<usize> {
        assert!(!self.order.is_empty(), "cannot draw from an empty pool");
        self.draws += 1;
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            if self.pos == self.order.len() {
                self.order.sort_unstable();
                self.order.shuffle(&mut self.rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }

    pub fn rng_state(&self) -> RngState {
        RngState::capture(&self.rng)
    }

    pub fn snapshot(&self) -> CyclerState {
        CyclerState {
            order: self.order.clone(),
            pos: self.pos,
            draws: self.draws,
            rng: self.rng_state(),
        }
    }

    pub fn from_snapshot(s: &CyclerState) -> Self {
        Self {
            order: s.order.clone(),
            pos: s.pos.min(s.order.len()),
            rng: s.rng.restore(),
            draws: s.draws,
        }
    }
}

/// Serializable position of a [`Cycler`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CyclerState {
    pub order: Vec<usize>,
    pub pos: usize,
    pub draws: u64,
    pub rng: RngState,
}
