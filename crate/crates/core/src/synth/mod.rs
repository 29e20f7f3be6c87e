//! Seeded synthetic fixtures with planted structure: embedding datasets with a
//! sex-flipped subgroup and neck images with a planted vertical framing shift.
//! Every generator is a pure function of its spec; record `k` draws from its
//! own ChaCha stream.

mod embeddings;
mod images;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use embeddings::{
    generate_clusters, generate_embeddings, write_ground_truth_csv, ClusterSpec, GroundTruth, SubjectTruth,
    SynthEmbeddingSpec, SynthEmbeddings,
};
pub use images::{generate_neck_images, NeckImageSpec};

fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
