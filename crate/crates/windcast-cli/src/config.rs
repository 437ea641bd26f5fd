//! Flat key-value run configuration.
//!
//! The format is one `key = value` pair per line with dotted section
//! prefixes, full-line `#` comments, and no quoting. Every key is optional
//! and defaults to the bundled benchmark setup; unknown and duplicate keys
//! are rejected so typos cannot silently fall back to defaults.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use windcast_core::pipeline::SplitSpec;
use windcast_core::rng::derive_seed;
use windcast_core::transformer::LayerNormMode;
use windcast_core::{Component, PipelineConfig, SyntheticSpec};

/// Everything a command can pick up from the config file.
#[derive(Debug, Clone, PartialEq)]
pub struct CliConfig {
    /// Value column name in input and output CSVs.
    pub data_column: String,
    pub pipeline: PipelineConfig,
    /// Mode counts the sweep command runs.
    pub sweep_counts: Vec<usize>,
    /// Generator behind the synth command.
    pub synth: SyntheticSpec,
    /// Archive the trained per-mode transformers under `<out>/models/`.
    pub save_models: bool,
}

impl Default for CliConfig {
    fn default() -> Self {
        CliConfig {
            data_column: "wind_speed".to_string(),
            pipeline: PipelineConfig::default(),
            sweep_counts: (5..=12).collect(),
            synth: benchmark_spec(),
            save_models: false,
        }
    }
}

/// Generator for the bundled noisy two-tone benchmark fixture.
pub fn benchmark_spec() -> SyntheticSpec {
    SyntheticSpec {
        components: vec![
            Component { amplitude: 1.0, frequency: 0.05, phase: 0.0 },
            Component { amplitude: 1.0, frequency: 0.005, phase: 0.0 },
        ],
        trend_slope: 0.0,
        offset: 10.0,
        noise_std: 0.05,
        length: 1200,
        seed: 42,
    }
}

impl CliConfig {
    /// Parses the config text over the defaults.
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut cfg = CliConfig::default();
        let mut seen = BTreeSet::new();
        let mut split_keys = 0;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected `key = value`", lineno + 1))?;
            let key = key.trim();
            let value = value.trim();
            if !seen.insert(key.to_string()) {
                return Err(format!("duplicate config key `{key}`"));
            }
            if key.starts_with("split.") {
                split_keys += 1;
                if split_keys > 1 {
                    return Err("set only one of split.fraction and split.index".to_string());
                }
            }
            cfg.set(key, value)?;
        }
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let p = &mut self.pipeline;
        match key {
            "data.column" => self.data_column = value.to_string(),
            "strict_causal" => p.strict_causal = parse(key, value)?,
            "split.fraction" => p.split = SplitSpec::Fraction(parse(key, value)?),
            "split.index" => p.split = SplitSpec::Index(parse(key, value)?),
            "calibration.fraction" => p.calibration_fraction = parse(key, value)?,
            "iceemdan.realizations" => p.iceemdan.realizations = parse(key, value)?,
            "iceemdan.max_sift_iters" => p.iceemdan.max_sift_iters = parse(key, value)?,
            "iceemdan.noise_ratio" => p.iceemdan.noise_ratio = parse(key, value)?,
            "iceemdan.max_imfs" => p.iceemdan.max_imfs = parse(key, value)?,
            "iceemdan.sift_tolerance" => p.iceemdan.sift_tolerance = parse(key, value)?,
            "iceemdan.seed" => p.iceemdan.seed = parse(key, value)?,
            "transformer.embed_dim" => p.transformer.embed_dim = parse(key, value)?,
            "transformer.heads" => p.transformer.heads = parse(key, value)?,
            "transformer.stacks" => p.transformer.stacks = parse(key, value)?,
            "transformer.ff_dim" => p.transformer.ff_dim = parse(key, value)?,
            "transformer.dropout" => p.transformer.dropout = parse(key, value)?,
            "transformer.learning_rate" => p.transformer.learning_rate = parse(key, value)?,
            "transformer.iterations" => p.transformer.iterations = parse(key, value)?,
            "transformer.batch_size" => p.transformer.batch_size = parse(key, value)?,
            "transformer.max_grad_norm" => p.transformer.max_grad_norm = parse(key, value)?,
            "transformer.encoder_len" => p.transformer.encoder_len = parse(key, value)?,
            "transformer.decoder_len" => p.transformer.decoder_len = parse(key, value)?,
            "transformer.layer_norm" => {
                p.transformer.layernorm_mode = match value {
                    "paper_global" => LayerNormMode::PaperGlobal,
                    "per_position" => LayerNormMode::PerPosition,
                    other => {
                        return Err(format!(
                            "transformer.layer_norm must be `paper_global` or \
                             `per_position`, got `{other}`"
                        ))
                    }
                }
            }
            "transformer.seed" => p.transformer.seed = parse(key, value)?,
            "mlp.lags" => p.mlp_lags = parse(key, value)?,
            "mlp.max_iters" => p.lm.max_iters = parse(key, value)?,
            "mlp.initial_damping" => p.lm.initial_damping = parse(key, value)?,
            "mlp.damping_up" => p.lm.damping_up = parse(key, value)?,
            "mlp.damping_down" => p.lm.damping_down = parse(key, value)?,
            "mlp.tolerance" => p.lm.tolerance = parse(key, value)?,
            "mlp.seed" => p.lm.seed = parse(key, value)?,
            "horizons.very_short" => p.horizons.very_short = parse(key, value)?,
            "horizons.short" => p.horizons.short = parse(key, value)?,
            "horizons.medium" => p.horizons.medium = parse(key, value)?,
            "horizons.long" => p.horizons.long = parse(key, value)?,
            "sweep.counts" => {
                self.sweep_counts = value
                    .split(',')
                    .map(|v| {
                        v.trim()
                            .parse::<usize>()
                            .map_err(|_| format!("sweep.counts: `{v}` is not a count"))
                    })
                    .collect::<Result<_, _>>()?
            }
            "synth.length" => self.synth.length = parse(key, value)?,
            "synth.noise_std" => self.synth.noise_std = parse(key, value)?,
            "synth.offset" => self.synth.offset = parse(key, value)?,
            "synth.trend_slope" => self.synth.trend_slope = parse(key, value)?,
            "synth.seed" => self.synth.seed = parse(key, value)?,
            "synth.components" => {
                self.synth.components = value
                    .split(',')
                    .map(parse_component)
                    .collect::<Result<_, _>>()?
            }
            "artifacts.save_models" => self.save_models = parse(key, value)?,
            other => return Err(format!("unknown config key `{other}`")),
        }
        Ok(())
    }

    /// One seed to derive every stage seed from, so a single flag
    /// re-randomizes the whole run reproducibly.
    pub fn apply_seed(&mut self, seed: u64) {
        self.pipeline.iceemdan.seed = derive_seed(seed, "iceemdan", 0);
        self.pipeline.transformer.seed = derive_seed(seed, "transformer", 0);
        self.pipeline.lm.seed = derive_seed(seed, "mlp", 0);
        self.synth.seed = derive_seed(seed, "synth", 0);
    }

    /// Renders the full resolved configuration in the parsed format.
    ///
    /// `parse(render(c)) == c`, so a manifest body reloads as a config.
    pub fn render(&self) -> String {
        let p = &self.pipeline;
        let mut s = String::new();
        let kv = |s: &mut String, k: &str, v: &dyn std::fmt::Display| {
            writeln!(s, "{k} = {v}").expect("string write");
        };
        kv(&mut s, "data.column", &self.data_column);
        kv(&mut s, "strict_causal", &p.strict_causal);
        match p.split {
            SplitSpec::Fraction(f) => kv(&mut s, "split.fraction", &f),
            SplitSpec::Index(i) => kv(&mut s, "split.index", &i),
        }
        kv(&mut s, "calibration.fraction", &p.calibration_fraction);
        s.push('\n');
        kv(&mut s, "iceemdan.realizations", &p.iceemdan.realizations);
        kv(&mut s, "iceemdan.max_sift_iters", &p.iceemdan.max_sift_iters);
        kv(&mut s, "iceemdan.noise_ratio", &p.iceemdan.noise_ratio);
        kv(&mut s, "iceemdan.max_imfs", &p.iceemdan.max_imfs);
        kv(&mut s, "iceemdan.sift_tolerance", &p.iceemdan.sift_tolerance);
        kv(&mut s, "iceemdan.seed", &p.iceemdan.seed);
        s.push('\n');
        kv(&mut s, "transformer.embed_dim", &p.transformer.embed_dim);
        kv(&mut s, "transformer.heads", &p.transformer.heads);
        kv(&mut s, "transformer.stacks", &p.transformer.stacks);
        kv(&mut s, "transformer.ff_dim", &p.transformer.ff_dim);
        kv(&mut s, "transformer.dropout", &p.transformer.dropout);
        kv(&mut s, "transformer.learning_rate", &p.transformer.learning_rate);
        kv(&mut s, "transformer.iterations", &p.transformer.iterations);
        kv(&mut s, "transformer.batch_size", &p.transformer.batch_size);
        kv(&mut s, "transformer.max_grad_norm", &p.transformer.max_grad_norm);
        kv(&mut s, "transformer.encoder_len", &p.transformer.encoder_len);
        kv(&mut s, "transformer.decoder_len", &p.transformer.decoder_len);
        let mode = match p.transformer.layernorm_mode {
            LayerNormMode::PaperGlobal => "paper_global",
            LayerNormMode::PerPosition => "per_position",
        };
        kv(&mut s, "transformer.layer_norm", &mode);
        kv(&mut s, "transformer.seed", &p.transformer.seed);
        s.push('\n');
        kv(&mut s, "mlp.lags", &p.mlp_lags);
        kv(&mut s, "mlp.max_iters", &p.lm.max_iters);
        kv(&mut s, "mlp.initial_damping", &p.lm.initial_damping);
        kv(&mut s, "mlp.damping_up", &p.lm.damping_up);
        kv(&mut s, "mlp.damping_down", &p.lm.damping_down);
        kv(&mut s, "mlp.tolerance", &p.lm.tolerance);
        kv(&mut s, "mlp.seed", &p.lm.seed);
        s.push('\n');
        kv(&mut s, "horizons.very_short", &p.horizons.very_short);
        kv(&mut s, "horizons.short", &p.horizons.short);
        kv(&mut s, "horizons.medium", &p.horizons.medium);
        kv(&mut s, "horizons.long", &p.horizons.long);
        s.push('\n');
        let counts: Vec<String> = self.sweep_counts.iter().map(usize::to_string).collect();
        kv(&mut s, "sweep.counts", &counts.join(","));
        s.push('\n');
        kv(&mut s, "synth.length", &self.synth.length);
        kv(&mut s, "synth.noise_std", &self.synth.noise_std);
        kv(&mut s, "synth.offset", &self.synth.offset);
        kv(&mut s, "synth.trend_slope", &self.synth.trend_slope);
        kv(&mut s, "synth.seed", &self.synth.seed);
        let comps: Vec<String> = self
            .synth
            .components
            .iter()
            .map(|c| format!("{}:{}:{}", c.amplitude, c.frequency, c.phase))
            .collect();
        kv(&mut s, "synth.components", &comps.join(","));
        s.push('\n');
        kv(&mut s, "artifacts.save_models", &self.save_models);
        s
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, String> {
    value
        .parse::<T>()
        .map_err(|_| format!("{key}: cannot parse `{value}`"))
}

fn parse_component(s: &str) -> Result<Component, String> {
    let parts: Vec<&str> = s.trim().split(':').collect();
    if parts.len() != 3 {
        return Err(format!(
            "synth.components: `{s}` is not `amplitude:frequency:phase`"
        ));
    }
    Ok(Component {
        amplitude: parse("synth.components amplitude", parts[0])?,
        frequency: parse("synth.components frequency", parts[1])?,
        phase: parse("synth.components phase", parts[2])?,
    })
}
