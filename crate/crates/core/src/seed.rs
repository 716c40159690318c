//! Sub-seed derivation.
//!
//! Every random stream in a run is derived from the master seed by
//! [`derive`], which applies a SplitMix64 finalizer to `master` combined with
//! a stream tag and an index. Tags in use:
//!
//! | stream | tag |
//! |---|---|
//! | synthetic data | [`DATA`] |
//! | Dirichlet partition | [`PARTITION`] |
//! | ETF basis | [`BASIS`] |
//! | model init | [`MODEL_INIT`] |
//! | train/test split | [`SPLIT`] |
//! | client `k` (shuffles, replay) | [`CLIENT`] with index `k` |

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const DATA: u64 = 1;
pub const PARTITION: u64 = 2;
pub const BASIS: u64 = 3;
pub const MODEL_INIT: u64 = 4;
pub const SPLIT: u64 = 5;
pub const CLIENT: u64 = 16;

pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive an independent seed for stream `tag`, element `index`.
pub fn derive(master: u64, tag: u64, index: u64) -> u64 {
    let a = splitmix64(master ^ splitmix64(tag));
    splitmix64(a ^ splitmix64(index.wrapping_add(0x5851_F42D_4C95_7F2D)))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
