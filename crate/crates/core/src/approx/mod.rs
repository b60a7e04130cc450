//! Diffusion-perturbed approximation game: the exogenous noise driving the
//! order flow, the stacked Markovian system, and a regression Monte Carlo
//! Picard solver for it.

mod concise;
mod lsmc;
mod noise;

pub use concise::{assemble_concise, ApproxParams, ConciseSystem, Controls};
pub use lsmc::{solve_regression_picard, LsmcOptions, RegressionField, RegressionRun};
pub use noise::{simulate_noise, NoiseEnsemble, NoiseSdeSpec};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator for one path: a fixed seed with the path index as stream, so any
/// subset of paths can be regenerated independently.
pub(crate) fn path_rng(seed: u64, path: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path as u64);
    rng
}
