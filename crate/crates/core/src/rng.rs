use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Portable generator for `seed`, on a stream selected by `scope`.
///
/// Distinct scopes (a subreddit, a label, a wave id) get independent streams,
/// so adding one scope never perturbs the draws of another.
pub fn scoped(seed: u64, scope: &str) -> ChaCha8Rng {
    let digest = Sha256::digest(scope.as_bytes());
    let mut stream = [0u8; 8];
    stream.copy_from_slice(&digest[..8]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::from_le_bytes(stream));
    rng
}
