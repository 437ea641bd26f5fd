//! Deterministic RNG plumbing.
//!
//! Every stochastic component derives its own stream from the run seed and a
//! string label, so adding or reordering components never shifts the draws of
//! the others.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Mixes a 64-bit state into a well-distributed output (splitmix64 finalizer).
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from a run seed, a component label, and an index.
///
/// The label is hashed byte-by-byte through the mixer, so distinct labels give
/// independent streams even for equal indices.
pub fn derive_seed(seed: u64, label: &str, index: u64) -> u64 {
    let mut state = mix64(seed ^ 0x5851_f42d_4c95_7f2d);
    for &b in label.as_bytes() {
        state = mix64(state ^ u64::from(b));
    }
    mix64(state ^ index)
}

/// Seeded stream cipher RNG: fast, portable, identical on every platform.
pub fn rng_from(seed: u64, label: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, label, index))
}

/// Draws one standard normal variate via Box-Muller.
///
/// Both uniforms are drawn unconditionally so consumption per call is fixed.
pub fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Fills a vector with standard normal variates.
pub fn normal_vec<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| standard_normal(rng)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_seeds_differ_across_labels_and_indices() {
        let a = derive_seed(7, "noise", 0);
        let b = derive_seed(7, "noise", 1);
        let c = derive_seed(7, "init", 0);
        let d = derive_seed(8, "noise", 0);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
        assert_ne!(b, c);
    }

    #[test]
    fn same_inputs_same_stream() {
        let x = normal_vec(&mut rng_from(42, "t", 3), 8);
        let y = normal_vec(&mut rng_from(42, "t", 3), 8);
        assert_eq!(x, y);
    }

    #[test]
    fn normal_moments_are_plausible() {
        let mut rng = rng_from(1, "moments", 0);
        let n = 200_000;
        let xs = normal_vec(&mut rng, n);
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
        assert!(xs.iter().all(|x| x.is_finite()));
    }
}
