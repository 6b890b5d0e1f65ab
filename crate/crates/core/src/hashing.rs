//! Portable 64-bit string hashing.
//!
//! The algorithm is fixed so that bucket assignments and per-document random
//! streams are identical across runs, processes and platforms:
//!
//! 1. `state = 0xcbf29ce484222325 XOR seed`
//! 2. for every input byte `b`: `state = (state XOR b) * 0x100000001b3` (wrapping)
//! 3. finalize with the SplitMix64 mixer:
//!    `x ^= x >> 30; x *= 0xbf58476d1ce4e5b9; x ^= x >> 27; x *= 0x94d049bb133111eb; x ^= x >> 31`
//!
//! Steps 1-2 are FNV-1a with a seeded offset basis. The finalizer spreads
//! entropy into the low bits before the caller reduces modulo a bucket count.

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// Incremental form of [`hash64`]; feeding the bytes of `"a b"` in pieces
/// produces the same value as hashing the joined string.
#[derive(Clone, Copy, Debug)]
pub struct StableHasher {
    state: u64,
}

impl StableHasher {
    pub fn new(seed: u64) -> Self {
        Self {
            state: FNV_OFFSET ^ seed,
        }
    }

    #[inline]
    pub fn write(&mut self, bytes: &[u8]) {
        let mut state = self.state;
        for &b in bytes {
            state ^= u64::from(b);
            state = state.wrapping_mul(FNV_PRIME);
        }
        self.state = state;
    }

    #[inline]
    pub fn finish(&self) -> u64 {
        mix64(self.state)
    }
}

#[inline]
pub fn mix64(mut x: u64) -> u64 {
    x ^= x >> 30;
    x = x.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x ^= x >> 27;
    x = x.wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

pub fn hash64(seed: u64, bytes: &[u8]) -> u64 {
    let mut h = StableHasher::new(seed);
    h.write(bytes);
    h.finish()
}

/// Hash of a document id used to key its random stream.
pub fn id_hash(id: &str) -> u64 {
    hash64(0, id.as_bytes())
}
