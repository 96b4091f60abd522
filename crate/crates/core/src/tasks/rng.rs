use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Named random streams derived from one root seed.
///
/// Every consumer draws from its own stream, so e.g. changing the number of
/// evaluation repeats never perturbs training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Init,
    AttenuatorInit,
    TaskSampling,
    EvalCurves,
    EvalPoints,
    Diagnostics,
}

impl Stream {
    fn tag(self) -> u64 {
        match self {
            Stream::Init => 0x1001,
            Stream::AttenuatorInit => 0x1002,
            Stream::TaskSampling => 0x2001,
            Stream::EvalCurves => 0x3001,
            Stream::EvalPoints => 0x3002,
            Stream::Diagnostics => 0x4001,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// ChaCha8 generator keyed by a SplitMix64 hash of `(seed, stream, indices)`.
///
/// A sample is a pure function of these inputs, which makes every stream
/// reproducible and safe to draw from in any order.
pub fn stream_rng(seed: u64, stream: Stream, indices: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, stream, indices))
}

/// The key behind [`stream_rng`], usable as the root seed of a sub-sampler.
pub fn derive_seed(seed: u64, stream: Stream, indices: &[u64]) -> u64 {
    let mut h = splitmix64(seed ^ splitmix64(stream.tag()));
    for &i in indices {
        h = splitmix64(h ^ splitmix64(i.wrapping_add(0x5851_F42D_4C95_7F2D)));
    }
    h
}
