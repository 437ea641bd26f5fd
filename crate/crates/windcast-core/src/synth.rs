//! Synthetic series generation: sums of sinusoids, a linear trend, and
//! seeded Gaussian noise. Stands in for field data in tests and benchmarks.

use crate::error::{Error, Result};
use crate::rng::{rng_from, standard_normal};
use crate::series::TimeSeries;

/// One sinusoidal component: amplitude, frequency in cycles per sample, phase
/// in radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Component {
    pub amplitude: f64,
    pub frequency: f64,
    pub phase: f64,
}

/// Recipe for a deterministic synthetic series.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub components: Vec<Component>,
    pub trend_slope: f64,
    pub offset: f64,
    pub noise_std: f64,
    pub length: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            components: vec![
                Component { amplitude: 1.0, frequency: 0.05, phase: 0.0 },
                Component { amplitude: 1.0, frequency: 0.005, phase: 0.0 },
            ],
            trend_slope: 0.0,
            offset: 0.0,
            noise_std: 0.0,
            length: 2000,
            seed: 0,
        }
    }
}

/// Generates `values[t] = offset + Σ_k a_k sin(2π f_k t + φ_k) + slope·t + N(0, σ²)`.
///
/// Identical spec (seed included) gives bit-identical output.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<TimeSeries> {
    if spec.length == 0 {
        return Err(Error::EmptySeries);
    }
    if spec.noise_std < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "noise_std must be >= 0, got {}",
            spec.noise_std
        )));
    }
    let mut rng = rng_from(spec.seed, "synth", 0);
    let mut values = Vec::with_capacity(spec.length);
    for t in 0..spec.length {
        let tf = t as f64;
        let mut v = spec.offset + spec.trend_slope * tf;
        for c in &spec.components {
            v += c.amplitude * (std::f64::consts::TAU * c.frequency * tf + c.phase).sin();
        }
        if spec.noise_std > 0.0 {
            v += spec.noise_std * standard_normal(&mut rng);
        }
        values.push(v);
    }
    TimeSeries::from_values(values, "synthetic")
}

/// The noisy two-tone benchmark series used across tests and the bundled CLI
/// fixture: fast tone at 0.05 cycles/sample, slow tone at 0.005, offset 10
/// keeps it strictly positive so MAPE is defined.
pub fn two_tone_benchmark(length: usize, noise_std: f64, seed: u64) -> TimeSeries {
    generate_synthetic(&SyntheticSpec {
        components: vec![
            Component { amplitude: 1.0, frequency: 0.05, phase: 0.0 },
            Component { amplitude: 1.0, frequency: 0.005, phase: 0.0 },
        ],
        trend_slope: 0.0,
        offset: 10.0,
        noise_std,
        length,
        seed,
    })
    .expect("two-tone benchmark spec is valid")
}
