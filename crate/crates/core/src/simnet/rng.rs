use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Seeded loss generator. One draw per link traversal, taken whether or not
/// the link is lossy, so the draw sequence depends only on the probe layout.
pub(crate) struct LossDraws(ChaCha8Rng);

impl LossDraws {
    pub(crate) fn new(seed: u64) -> Self {
        Self(ChaCha8Rng::seed_from_u64(seed))
    }

    pub(crate) fn drops(&mut self, loss: f64) -> bool {
        let u: f64 = self.0.gen();
        u < loss
    }
}
