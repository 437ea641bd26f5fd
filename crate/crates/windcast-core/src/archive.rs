//! Model persistence: a line-oriented, self-describing tensor archive.
//!
//! Layout: a version header, a type tag, configuration fields, then named
//! tensors with shape headers. Every floating-point value is stored as the
//! 16-hex-digit bit pattern of its f64 (with a readable approximation as a
//! trailing comment), so save/load round-trips are bit-exact, including
//! signed zeros and subnormals.
//!
//! ```text
//! windcast-archive 1
//! type transformer_model
//! u embed_dim 8
//! f dropout 3fc999999999999a ~0.2
//! s layernorm_mode paper_global
//! tensor embed_w 1 8
//! bfe19b2c... (rows*cols hex words on one line)
//! end
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::io_err;
use crate::mlp::{ResidualMlp, HIDDEN_UNITS};
use crate::transformer::{LayerNormMode, TransformerConfig, TransformerModel};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "windcast-archive";

pub const TRANSFORMER_TAG: &str = "transformer_model";
pub const MLP_TAG: &str = "residual_mlp";

fn bad(msg: impl Into<String>) -> Error {
    Error::Archive(msg.into())
}

fn hex(v: f64) -> String {
    format!("{:016x}", v.to_bits())
}

fn unhex(word: &str) -> Result<f64> {
    let bits = u64::from_str_radix(word, 16)
        .map_err(|_| bad(format!("malformed value word {word:?}")))?;
    Ok(f64::from_bits(bits))
}

/// Parsed archive contents, independent of model type.
struct Archive {
    kind: String,
    counts: BTreeMap<String, u64>,
    reals: BTreeMap<String, f64>,
    texts: BTreeMap<String, String>,
    tensors: Vec<(String, usize, usize, Vec<f64>)>,
}

impl Archive {
    fn new(kind: &str) -> Self {
        Self {
            kind: kind.to_string(),
            counts: BTreeMap::new(),
            reals: BTreeMap::new(),
            texts: BTreeMap::new(),
            tensors: Vec::new(),
        }
    }

    fn count(&self, key: &str) -> Result<u64> {
        self.counts
            .get(key)
            .copied()
            .ok_or_else(|| bad(format!("missing count field {key:?}")))
    }

    fn real(&self, key: &str) -> Result<f64> {
        self.reals
            .get(key)
            .copied()
            .ok_or_else(|| bad(format!("missing real field {key:?}")))
    }

    fn text(&self, key: &str) -> Result<&str> {
        self.texts
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| bad(format!("missing text field {key:?}")))
    }

    fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{MAGIC} {FORMAT_VERSION}");
        let _ = writeln!(out, "type {}", self.kind);
        for (k, v) in &self.counts {
            let _ = writeln!(out, "u {k} {v}");
        }
        for (k, v) in &self.reals {
            let _ = writeln!(out, "f {k} {} ~{v:e}", hex(*v));
        }
        for (k, v) in &self.texts {
            let _ = writeln!(out, "s {k} {v}");
        }
        for (name, rows, cols, data) in &self.tensors {
            let _ = writeln!(out, "tensor {name} {rows} {cols}");
            let mut line = String::with_capacity(data.len() * 17);
            for (i, v) in data.iter().enumerate() {
                if i > 0 {
                    line.push(' ');
                }
                line.push_str(&hex(*v));
            }
            out.push_str(&line);
            out.push('\n');
        }
        out.push_str("end\n");
        out
    }

    fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.render()).map_err(|e| io_err(path, e))
    }

    fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        Self::parse(&text)
    }

    fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad("empty archive"))?;
        let mut hp = header.split_whitespace();
        if hp.next() != Some(MAGIC) {
            return Err(bad("not a windcast archive (bad magic)"));
        }
        let version: u32 = hp
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| bad("missing format version"))?;
        if version != FORMAT_VERSION {
            return Err(bad(format!(
                "unsupported format version {version}, this build reads {FORMAT_VERSION}"
            )));
        }

        let mut archive = Archive::new("");
        let mut saw_end = false;
        while let Some(line) = lines.next() {
            let mut parts = line.split_whitespace();
            let Some(keyword) = parts.next() else { continue };
            match keyword {
                "type" => {
                    archive.kind = parts
                        .next()
                        .ok_or_else(|| bad("type line without a tag"))?
                        .to_string();
                }
                "u" => {
                    let key = parts.next().ok_or_else(|| bad("count line without a key"))?;
                    let value: u64 = parts
                        .next()
                        .and_then(|v| v.parse().ok())
                        .ok_or_else(|| bad(format!("malformed count for {key:?}")))?;
                    archive.counts.insert(key.to_string(), value);
                }
                "f" => {
                    let key = parts.next().ok_or_else(|| bad("real line without a key"))?;
                    let word = parts
                        .next()
                        .ok_or_else(|| bad(format!("real field {key:?} without a value")))?;
                    archive.reals.insert(key.to_string(), unhex(word)?);
                }
                "s" => {
                    let key = parts.next().ok_or_else(|| bad("text line without a key"))?;
                    let value = parts
                        .next()
                        .ok_or_else(|| bad(format!("text field {key:?} without a value")))?;
                    archive.texts.insert(key.to_string(), value.to_string());
                }
                "tensor" => {
                    let name = parts
                        .next()
                        .ok_or_else(|| bad("tensor line without a name"))?
                        .to_string();
                    let rows: usize = parts
                        .next()
                        .and_then(|v| v.parse().ok())
                        .ok_or_else(|| bad(format!("tensor {name:?}: bad row count")))?;
                    let cols: usize = parts
                        .next()
                        .and_then(|v| v.parse().ok())
                        .ok_or_else(|| bad(format!("tensor {name:?}: bad column count")))?;
                    let data_line = lines
                        .next()
                        .ok_or_else(|| bad(format!("tensor {name:?}: missing data line")))?;
                    let data: Vec<f64> = data_line
                        .split_whitespace()
                        .map(unhex)
                        .collect::<Result<_>>()?;
                    if data.len() != rows * cols {
                        return Err(bad(format!(
                            "tensor {name:?}: expected {} values, found {}",
                            rows * cols,
                            data.len()
                        )));
                    }
                    archive.tensors.push((name, rows, cols, data));
                }
                "end" => {
                    saw_end = true;
                    break;
                }
                other => return Err(bad(format!("unknown keyword {other:?}"))),
            }
        }
        if !saw_end {
            return Err(bad("archive truncated: no end marker"));
        }
        if archive.kind.is_empty() {
            return Err(bad("archive has no type tag"));
        }
        Ok(archive)
    }
}

/// Tensor names and shapes of a transformer, aligned one-to-one with the
/// model's flat parameter traversal order.
fn transformer_layout(config: &TransformerConfig) -> Vec<(String, usize, usize)> {
    let l = config.embed_dim;
    let dh = config.head_dim();
    let ff = config.ff_dim;
    let mut names = vec![
        ("embed_w".to_string(), 1, l),
        ("embed_b".to_string(), 1, l),
    ];
    let attn = |names: &mut Vec<(String, usize, usize)>, prefix: &str| {
        for kind in ["wq", "wk", "wv"] {
            for h in 0..config.heads {
                names.push((format!("{prefix}.{kind}.{h}"), dh, l));
            }
        }
        names.push((format!("{prefix}.wo"), l, l));
    };
    let norm = |names: &mut Vec<(String, usize, usize)>, prefix: &str| {
        names.push((format!("{prefix}.gain"), 1, l));
        names.push((format!("{prefix}.bias"), 1, l));
    };
    let ffw = |names: &mut Vec<(String, usize, usize)>, prefix: &str| {
        names.push((format!("{prefix}.w1"), ff, l));
        names.push((format!("{prefix}.b1"), 1, ff));
        names.push((format!("{prefix}.w2"), l, ff));
        names.push((format!("{prefix}.b2"), 1, l));
    };
    for i in 0..config.stacks {
        attn(&mut names, &format!("enc.{i}.attn"));
        norm(&mut names, &format!("enc.{i}.norm1"));
        ffw(&mut names, &format!("enc.{i}.ff"));
        norm(&mut names, &format!("enc.{i}.norm2"));
    }
    for i in 0..config.stacks {
        attn(&mut names, &format!("dec.{i}.self_attn"));
        norm(&mut names, &format!("dec.{i}.norm1"));
        attn(&mut names, &format!("dec.{i}.cross_attn"));
        norm(&mut names, &format!("dec.{i}.norm2"));
        ffw(&mut names, &format!("dec.{i}.ff"));
        norm(&mut names, &format!("dec.{i}.norm3"));
    }
    names.push(("out_w".to_string(), 1, l));
    names.push(("out_b".to_string(), 1, 1));
    names
}

fn mode_name(mode: LayerNormMode) -> &'static str {
    match mode {
        LayerNormMode::PaperGlobal => "paper_global",
        LayerNormMode::PerPosition => "per_position",
    }
}

fn mode_from_name(name: &str) -> Result<LayerNormMode> {
    match name {
        "paper_global" => Ok(LayerNormMode::PaperGlobal),
        "per_position" => Ok(LayerNormMode::PerPosition),
        other => Err(bad(format!("unknown layernorm_mode {other:?}"))),
    }
}

pub fn save_transformer(model: &TransformerModel, path: impl AsRef<Path>) -> Result<()> {
    let c = &model.config;
    let mut archive = Archive::new(TRANSFORMER_TAG);
    for (key, value) in [
        ("embed_dim", c.embed_dim as u64),
        ("heads", c.heads as u64),
        ("stacks", c.stacks as u64),
        ("ff_dim", c.ff_dim as u64),
        ("iterations", c.iterations as u64),
        ("batch_size", c.batch_size as u64),
        ("encoder_len", c.encoder_len as u64),
        ("decoder_len", c.decoder_len as u64),
        ("seed", c.seed),
    ] {
        archive.counts.insert(key.to_string(), value);
    }
    for (key, value) in [
        ("dropout", c.dropout),
        ("learning_rate", c.learning_rate),
        ("max_grad_norm", c.max_grad_norm),
    ] {
        archive.reals.insert(key.to_string(), value);
    }
    archive
        .texts
        .insert("layernorm_mode".to_string(), mode_name(c.layernorm_mode).to_string());

    let layout = transformer_layout(c);
    let slices = model.param_slices();
    debug_assert_eq!(layout.len(), slices.len());
    for ((name, rows, cols), slice) in layout.into_iter().zip(slices) {
        debug_assert_eq!(rows * cols, slice.len(), "layout mismatch for {name}");
        archive.tensors.push((name, rows, cols, slice.to_vec()));
    }
    archive.save(path.as_ref())
}

pub fn load_transformer(path: impl AsRef<Path>) -> Result<TransformerModel> {
    let archive = Archive::load(path.as_ref())?;
    if archive.kind != TRANSFORMER_TAG {
        return Err(bad(format!(
            "expected a {TRANSFORMER_TAG} archive, found {:?}",
            archive.kind
        )));
    }
    let config = TransformerConfig {
        embed_dim: archive.count("embed_dim")? as usize,
        heads: archive.count("heads")? as usize,
        stacks: archive.count("stacks")? as usize,
        ff_dim: archive.count("ff_dim")? as usize,
        dropout: archive.real("dropout")?,
        learning_rate: archive.real("learning_rate")?,
        iterations: archive.count("iterations")? as usize,
        batch_size: archive.count("batch_size")? as usize,
        max_grad_norm: archive.real("max_grad_norm")?,
        encoder_len: archive.count("encoder_len")? as usize,
        decoder_len: archive.count("decoder_len")? as usize,
        seed: archive.count("seed")?,
        layernorm_mode: mode_from_name(archive.text("layernorm_mode")?)?,
    };
    let mut model = TransformerModel::new(config.clone())?;

    let layout = transformer_layout(&config);
    if archive.tensors.len() != layout.len() {
        return Err(bad(format!(
            "expected {} tensors, archive holds {}",
            layout.len(),
            archive.tensors.len()
        )));
    }
    let slices = model.param_slices_mut();
    for (((name, rows, cols), slice), (got_name, got_rows, got_cols, data)) in
        layout.iter().zip(slices).zip(&archive.tensors)
    {
        if name != got_name || rows != got_rows || cols != got_cols {
            return Err(bad(format!(
                "tensor mismatch: expected {name} {rows}x{cols}, found {got_name} {got_rows}x{got_cols}"
            )));
        }
        slice.copy_from_slice(data);
    }
    Ok(model)
}

pub fn save_mlp(net: &ResidualMlp, path: impl AsRef<Path>) -> Result<()> {
    let mut archive = Archive::new(MLP_TAG);
    archive.counts.insert("lags".to_string(), net.lags as u64);
    let input: Vec<f64> = net.input_weights.iter().flatten().copied().collect();
    archive
        .tensors
        .push(("input_weights".to_string(), net.lags, HIDDEN_UNITS, input));
    archive.tensors.push((
        "hidden_bias".to_string(),
        1,
        HIDDEN_UNITS,
        net.hidden_bias.to_vec(),
    ));
    archive.tensors.push((
        "output_weights".to_string(),
        1,
        HIDDEN_UNITS,
        net.output_weights.to_vec(),
    ));
    archive
        .tensors
        .push(("output_bias".to_string(), 1, 1, vec![net.output_bias]));
    archive.save(path.as_ref())
}

pub fn load_mlp(path: impl AsRef<Path>) -> Result<ResidualMlp> {
    let archive = Archive::load(path.as_ref())?;
    if archive.kind != MLP_TAG {
        return Err(bad(format!(
            "expected a {MLP_TAG} archive, found {:?}",
            archive.kind
        )));
    }
    let lags = archive.count("lags")? as usize;
    let mut net = ResidualMlp::zeroed(lags)?;
    let expect: [(&str, usize, usize); 4] = [
        ("input_weights", lags, HIDDEN_UNITS),
        ("hidden_bias", 1, HIDDEN_UNITS),
        ("output_weights", 1, HIDDEN_UNITS),
        ("output_bias", 1, 1),
    ];
    if archive.tensors.len() != expect.len() {
        return Err(bad(format!(
            "expected {} tensors, archive holds {}",
            expect.len(),
            archive.tensors.len()
        )));
    }
    for ((name, rows, cols), (got_name, got_rows, got_cols, data)) in
        expect.iter().zip(&archive.tensors)
    {
        if *name != got_name.as_str() || rows != got_rows || cols != got_cols {
            return Err(bad(format!(
                "tensor mismatch: expected {name} {rows}x{cols}, found {got_name} {got_rows}x{got_cols}"
            )));
        }
        match *name {
            "input_weights" => {
                for (i, chunk) in data.chunks(HIDDEN_UNITS).enumerate() {
                    net.input_weights[i] = [chunk[0], chunk[1]];
                }
            }
            "hidden_bias" => net.hidden_bias = [data[0], data[1]],
            "output_weights" => net.output_weights = [data[0], data[1]],
            "output_bias" => net.output_bias = data[0],
            _ => unreachable!(),
        }
    }
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transformer::forward;

    fn tiny_model(seed: u64) -> TransformerModel {
        TransformerModel::new(TransformerConfig {
            embed_dim: 8,
            heads: 2,
            stacks: 2,
            ff_dim: 12,
            encoder_len: 6,
            decoder_len: 3,
            seed,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn transformer_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.wta");
        let mut model = tiny_model(77);
        // Values that defeat any decimal round-trip.
        model.embed_b[0] = -0.0;
        model.embed_b[1] = f64::MIN_POSITIVE / 8.0; // subnormal
        model.out_w[2] = 0.1 + 0.2;
        save_transformer(&model, &path).unwrap();
        let loaded = load_transformer(&path).unwrap();

        assert_eq!(loaded.config, model.config);
        let a = model.flatten_params();
        let b = loaded.flatten_params();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.to_bits(), y.to_bits());
        }

        let enc: Vec<f64> = (0..6).map(|i| i as f64 * 0.1).collect();
        let dec: Vec<f64> = (0..3).map(|i| i as f64 * 0.2).collect();
        let (p, _) = forward(&model, &enc, &dec, false).unwrap();
        let (q, _) = forward(&loaded, &enc, &dec, false).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn mlp_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.wta");
        let mut net = ResidualMlp::new(5, 13).unwrap();
        net.output_bias = -0.0;
        net.input_weights[3][1] = 1e-310; // subnormal
        save_mlp(&net, &path).unwrap();
        let loaded = load_mlp(&path).unwrap();
        assert_eq!(loaded.lags, net.lags);
        for (a, b) in net
            .flatten_params()
            .iter()
            .zip(loaded.flatten_params().iter())
        {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn type_tags_are_enforced() {
        let dir = tempfile::tempdir().unwrap();
        let t_path = dir.path().join("model.wta");
        let m_path = dir.path().join("net.wta");
        save_transformer(&tiny_model(1), &t_path).unwrap();
        save_mlp(&ResidualMlp::new(3, 1).unwrap(), &m_path).unwrap();
        assert!(matches!(load_transformer(&m_path), Err(Error::Archive(_))));
        assert!(matches!(load_mlp(&t_path), Err(Error::Archive(_))));
    }

    #[test]
    fn rejects_corrupted_archives() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.wta");
        save_transformer(&tiny_model(2), &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();

        // Unsupported version.
        let versioned = text.replacen("windcast-archive 1", "windcast-archive 99", 1);
        std::fs::write(&path, versioned).unwrap();
        assert!(matches!(load_transformer(&path), Err(Error::Archive(_))));

        // Truncation: drop the end marker and the last tensor.
        let cut = text.rfind("tensor out_b").unwrap();
        std::fs::write(&path, &text[..cut]).unwrap();
        assert!(matches!(load_transformer(&path), Err(Error::Archive(_))));

        // Wrong magic.
        std::fs::write(&path, "something-else 1\nend\n").unwrap();
        assert!(matches!(load_transformer(&path), Err(Error::Archive(_))));

        // Mangled hex word.
        let mangled = text.replacen("tensor embed_w 1 8\n", "tensor embed_w 1 8\nZZ", 1);
        std::fs::write(&path, mangled).unwrap();
        assert!(matches!(load_transformer(&path), Err(Error::Archive(_))));

        assert!(load_transformer(dir.path().join("missing.wta")).is_err());
    }

    #[test]
    fn archive_is_self_describing_text() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.wta");
        save_transformer(&tiny_model(3), &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("windcast-archive 1\n"));
        assert!(text.contains("type transformer_model"));
        assert!(text.contains("u embed_dim 8"));
        assert!(text.contains("s layernorm_mode paper_global"));
        assert!(text.contains("tensor enc.1.ff.w1 12 8"));
        assert!(text.trim_end().ends_with("end"));
    }

    #[test]
    fn hex_words_cover_edge_patterns() {
        for v in [
            0.0,
            -0.0,
            f64::MIN_POSITIVE,
            1e-310,
            f64::MAX,
            f64::INFINITY,
            f64::NEG_INFINITY,
            0.1 + 0.2,
        ] {
            let w = hex(v);
            assert_eq!(w.len(), 16);
            assert_eq!(unhex(&w).unwrap().to_bits(), v.to_bits());
        }
        assert!(unhex("nothex").is_err());
    }
}
