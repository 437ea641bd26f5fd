//! Ensemble decomposition with adaptive noise.
//!
//! Each stage perturbs the current residue with a scaled EMD mode of cached
//! white noise, averages the local means over all realizations, and takes the
//! difference as the next mode. The recurrence telescopes, so the modes plus
//! the final residue reproduce the input to rounding error, with no noise
//! left behind.

use crate::emd::{emd, find_extrema, local_mean, Decomposition, SiftParams};
use crate::error::{Error, Result};
use crate::parallel::ordered_map;
use crate::rng::{normal_vec, rng_from};
use crate::series::std_dev;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IceemdanParams {
    /// Ensemble size J.
    pub realizations: usize,
    /// Sift budget per mode.
    pub max_sift_iters: usize,
    /// Added-noise standard deviation ratio (applied against the std of the
    /// current residue at every stage).
    pub noise_ratio: f64,
    /// Output is padded or folded to exactly this many modes.
    pub max_imfs: usize,
    pub seed: u64,
    pub sift_tolerance: f64,
}

impl Default for IceemdanParams {
    fn default() -> Self {
        IceemdanParams {
            realizations: 90,
            max_sift_iters: 1000,
            noise_ratio: 0.3,
            max_imfs: 10,
            seed: 0,
            sift_tolerance: 1e-8,
        }
    }
}

impl IceemdanParams {
    pub fn validate(&self) -> Result<()> {
        if self.realizations == 0 {
            return Err(Error::InvalidParameter("realizations must be >= 1".into()));
        }
        if self.max_imfs == 0 {
            return Err(Error::InvalidParameter("max_imfs must be >= 1".into()));
        }
        if !(self.noise_ratio > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "noise_ratio must be > 0, got {}",
                self.noise_ratio
            )));
        }
        if !(self.sift_tolerance > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "sift_tolerance must be > 0, got {}",
                self.sift_tolerance
            )));
        }
        Ok(())
    }

    pub fn sift_params(&self) -> SiftParams {
        SiftParams {
            max_iters: self.max_sift_iters,
            tolerance: self.sift_tolerance,
        }
    }
}

/// Per-realization white noise and its precomputed EMD modes.
///
/// The modes are reused at every stage, so one EMD per realization covers the
/// whole run.
pub struct NoiseBank {
    noises: Vec<Vec<f64>>,
    modes: Vec<Vec<Vec<f64>>>,
}

impl NoiseBank {
    /// Draws J standardized noise series of the given length and decomposes
    /// each one. Realizations use independent derived seeds, so the bank is
    /// identical no matter how the EMD work is scheduled.
    pub fn build(length: usize, params: &IceemdanParams) -> NoiseBank {
        let noises: Vec<Vec<f64>> = (0..params.realizations)
            .map(|r| {
                let mut z = normal_vec(&mut rng_from(params.seed, "iceemdan-noise", r as u64), length);
                // Standardize exactly: zero mean, unit population std.
                let m = z.iter().sum::<f64>() / length as f64;
                let sd = std_dev(&z);
                if sd > 0.0 {
                    for v in &mut z {
                        *v = (*v - m) / sd;
                    }
                }
                z
            })
            .collect();
        let sift = params.sift_params();
        let max_imfs = params.max_imfs;
        let modes = ordered_map(params.realizations, |r| {
            emd(&noises[r], max_imfs, &sift).imfs
        });
        NoiseBank { noises, modes }
    }

    pub fn noise(&self, r: usize) -> &[f64] {
        &self.noises[r]
    }

    /// EMD mode `k` (1-based) of realization `r`, if the noise produced one.
    pub fn mode(&self, r: usize, k: usize) -> Option<&[f64]> {
        self.modes[r].get(k - 1).map(|m| m.as_slice())
    }

    pub fn realizations(&self) -> usize {
        self.noises.len()
    }
}

/// Ensemble decomposition of `signal` into exactly `max_imfs` modes plus a
/// residue.
///
/// Stage k perturbs the residue with the k-th noise mode scaled by
/// noise_ratio times the residue's std, averages `local_mean` over all
/// realizations into the next residue, and emits the residue difference as
/// mode k. Extraction stops early when the residue runs out of extrema;
/// missing modes are zero-padded so the output shape only depends on params.
pub fn iceemdan(signal: &[f64], params: &IceemdanParams) -> Result<Decomposition> {
    params.validate()?;
    if signal.len() < 4 {
        return Err(Error::SeriesTooShort {
            len: signal.len(),
            min: 4,
        });
    }
    if let Some(row) = signal.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteValue { row });
    }

    let bank = NoiseBank::build(signal.len(), params);
    iceemdan_with_bank(signal, params, &bank)
}

/// [`iceemdan`] against a caller-provided noise bank (reused across sweeps).
pub fn iceemdan_with_bank(
    signal: &[f64],
    params: &IceemdanParams,
    bank: &NoiseBank,
) -> Result<Decomposition> {
    params.validate()?;
    let n = signal.len();
    let j = params.realizations;
    let mut residue = signal.to_vec();
    let mut imfs: Vec<Vec<f64>> = Vec::with_capacity(params.max_imfs);

    for k in 1..=params.max_imfs {
        let (maxima, minima) = find_extrema(&residue);
        if maxima.len() < 2 || minima.len() < 2 {
            break;
        }
        let alpha = params.noise_ratio * std_dev(&residue);
        let means = ordered_map(j, |r| {
            let perturbed: Vec<f64> = match bank.mode(r, k) {
                Some(mode) if alpha > 0.0 => residue
                    .iter()
                    .zip(mode)
                    .map(|(x, z)| x + alpha * z)
                    .collect(),
                _ => residue.clone(),
            };
            local_mean(&perturbed)
        });
        // Serial reduction in realization order keeps the average identical
        // across thread counts.
        let mut phi = vec![0.0f64; n];
        for mean in &means {
            for (p, m) in phi.iter_mut().zip(mean) {
                *p += m;
            }
        }
        for p in &mut phi {
            *p /= j as f64;
        }
        let imf: Vec<f64> = residue.iter().zip(&phi).map(|(r, p)| r - p).collect();
        imfs.push(imf);
        residue = phi;
    }

    while imfs.len() < params.max_imfs {
        imfs.push(vec![0.0; n]);
    }

    Ok(Decomposition {
        imfs,
        residue,
        input_length: n,
    })
}
