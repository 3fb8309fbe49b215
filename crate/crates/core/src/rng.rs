//! Per-replica random streams.
//!
//! Each replica gets ChaCha8 keyed by the experiment seed with the replica
//! index as the stream number, so streams never overlap and a replica's
//! draws do not depend on how many other replicas exist.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type ReplicaRng = ChaCha8Rng;

/// The stream for replica `replica_id` under `base_seed`.
pub fn seed_for_replica(base_seed: u64, replica_id: u64) -> ReplicaRng {
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
    rng.set_stream(replica_id);
    rng
}
