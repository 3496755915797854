//! Seed derivation so every stream (training days, evaluation days, network
//! initialization, exploration) is a pure function of one base seed.

/// Mixes `base` with a stream tag and an index (splitmix64 finalizer).
pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    let mut z = base
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub const STREAM_TRAIN_DAYS: u64 = 1;
pub const STREAM_EVAL_DAYS: u64 = 2;
pub const STREAM_INIT: u64 = 3;
pub const STREAM_NOISE: u64 = 4;
pub const STREAM_SAMPLING: u64 = 5;
pub const STREAM_BEHAVIOR: u64 = 6;
pub const STREAM_CCP_DAYS: u64 = 7;
pub const STREAM_CALIBRATION: u64 = 8;
pub const STREAM_VALIDATION_DAYS: u64 = 9;
