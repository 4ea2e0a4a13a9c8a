//! Splittable seed derivation. Every random stream in a run is keyed by the run
//! seed plus a label, so adding a stream or a sweep point never shifts others.

/// SplitMix64 finalizer.
#[inline]
pub fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Child seed of `parent` under `key`.
#[inline]
pub fn derive(parent: u64, key: u64) -> u64 {
    splitmix(parent ^ splitmix(key))
}

/// Named sub-streams of one simulation run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Variability = 1,
    Imprint = 2,
    RandomWeights = 3,
    Offsets = 4,
    TrainNoise = 5,
    TestNoise = 6,
}

#[inline]
pub fn stream(parent: u64, s: Stream) -> u64 {
    derive(parent, s as u64)
}
