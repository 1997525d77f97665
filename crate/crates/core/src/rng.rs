//! Deterministic randomness plumbing.
//!
//! Every random decision in a run is drawn from a ChaCha8 stream derived
//! statelessly from (run seed, client id, iteration, purpose tag). Client
//! work can then be scheduled on any number of threads, regenerated lazily,
//! or re-run in isolation without changing a single draw. The distribution
//! samplers are written out here (Box-Muller, inverse CDF) so byte-level
//! reproducibility does not depend on another crate's sampling internals.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tags for derived streams. Per-search streams combine a tag with
/// the search index so each simulated search consumes an independent stream
/// no matter how many draws its neighbors used.
pub mod stream {
    /// History generation for a client.
    pub const HISTORY: u64 = 1;
    /// Per-search simulation during training rounds.
    const SEARCH_TRAIN: u64 = 2;
    /// Per-search simulation during evaluation rounds.
    const SEARCH_EVAL: u64 = 3;
    /// Subsample draws in the update-stability study.
    pub const STABILITY: u64 = 4;
    /// Per-(client, iteration) round metadata (e.g. how many searches).
    pub const ROUND_TRAIN: u64 = 5;
    pub const ROUND_EVAL: u64 = 6;

    pub fn search_train(search_idx: u64) -> u64 {
        (SEARCH_TRAIN << 32) | search_idx
    }

    pub fn search_eval(search_idx: u64) -> u64 {
        (SEARCH_EVAL << 32) | search_idx
    }
}

/// The server's client-sampling RNG. Its position is persisted in snapshots
/// so a resumed run continues the exact sampling sequence.
pub fn master(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stateless per-(client, iteration, purpose) stream.
pub fn derive_stream(seed: u64, client_id: u64, iteration: u64, tag: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&client_id.to_le_bytes());
    key[16..24].copy_from_slice(&iteration.to_le_bytes());
    key[24..32].copy_from_slice(&tag.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// Normal draw via Box-Muller; consumes exactly two uniforms.
pub fn sample_normal(rng: &mut ChaCha8Rng, mean: f64, std_dev: f64) -> f64 {
    let u1: f64 = 1.0 - rng.random::<f64>(); // (0, 1], keeps ln finite
    let u2: f64 = rng.random();
    let z = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
    mean + std_dev * z
}

/// Exponential draw with the given mean via inverse CDF; one uniform.
pub fn sample_exp(rng: &mut ChaCha8Rng, mean: f64) -> f64 {
    let u: f64 = rng.random();
    -mean * (1.0 - u).ln()
}

/// Exponential truncated to [0, cap] via the inverse CDF of the truncated
/// distribution; one uniform, no rejection loop.
pub fn sample_exp_truncated(rng: &mut ChaCha8Rng, mean: f64, cap: f64) -> f64 {
    let u: f64 = rng.random();
    let mass = 1.0 - (-cap / mean).exp();
    -mean * (1.0 - u * mass).ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_streams_are_deterministic_and_distinct() {
        let mut a = derive_stream(7, 42, 3, stream::HISTORY);
        let mut b = derive_stream(7, 42, 3, stream::HISTORY);
        let draws_a: Vec<u64> = (0..8).map(|_| a.random()).collect();
        let draws_b: Vec<u64> = (0..8).map(|_| b.random()).collect();
        assert_eq!(draws_a, draws_b);

        let mut c = derive_stream(7, 42, 3, stream::search_train(0));
        let draws_c: Vec<u64> = (0..8).map(|_| c.random()).collect();
        assert_ne!(draws_a, draws_c);

        let mut d = derive_stream(7, 42, 4, stream::HISTORY);
        let draws_d: Vec<u64> = (0..8).map(|_| d.random()).collect();
        assert_ne!(draws_a, draws_d);

        assert_ne!(stream::search_train(5), stream::search_eval(5));
    }

    #[test]
    fn normal_moments() {
        let mut rng = derive_stream(1, 0, 0, 99);
        let n = 200_000;
        let draws: Vec<f64> = (0..n).map(|_| sample_normal(&mut rng, 2.0, 3.0)).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!((mean - 2.0).abs() < 0.03, "mean {mean}");
        assert!((var - 9.0).abs() < 0.15, "var {var}");
    }

    #[test]
    fn exponential_moments() {
        let mut rng = derive_stream(2, 0, 0, 99);
        let n = 200_000;
        let draws: Vec<f64> = (0..n).map(|_| sample_exp(&mut rng, 7.0)).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        assert!((mean - 7.0).abs() < 0.1, "mean {mean}");
        assert!(draws.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn truncated_exponential_respects_cap() {
        let mut rng = derive_stream(3, 0, 0, 99);
        let n = 100_000;
        let cap = 365.0;
        let draws: Vec<f64> = (0..n).map(|_| sample_exp_truncated(&mut rng, 20.0, cap)).collect();
        assert!(draws.iter().all(|&x| (0.0..=cap).contains(&x)));
        let mean = draws.iter().sum::<f64>() / n as f64;
        // Truncation barely moves the mean when cap >> mean.
        assert!((mean - 20.0).abs() < 0.3, "mean {mean}");
    }
}
