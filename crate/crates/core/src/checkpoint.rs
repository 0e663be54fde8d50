//! Binary checkpoints: a text header describing the model and every tensor,
//! followed by raw little-endian f32 data in header order.
//!
//! ```text
//! depref-checkpoint v1
//! config kind=rngtr num_layers=2 ...
//! tensor emb.word 120x64 0
//! ...
//! end
//! <data>
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use depref_tensor::{ParamStore, Tensor};

use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};

const MAGIC: &str = "depref-checkpoint v1";

/// Vocabulary file stored next to a checkpoint.
pub fn vocab_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_file_name("vocab.tsv")
}

pub fn to_bytes(model: &Model) -> Vec<u8> {
    let mut header = format!("{MAGIC}\nconfig {}\n", model.config);
    let mut offset = 0usize;
    for (_, p) in model.params.iter() {
        let dims: Vec<String> = p.value.shape().iter().map(usize::to_string).collect();
        header.push_str(&format!("tensor {} {} {offset}\n", p.name, dims.join("x")));
        offset += p.value.numel();
    }
    header.push_str("end\n");
    let mut bytes = header.into_bytes();
    bytes.reserve(offset * 4);
    for (_, p) in model.params.iter() {
        for x in p.value.data() {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
    }
    bytes
}

pub fn save_checkpoint(path: impl AsRef<Path>, model: &Model) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_bytes(model)).map_err(|e| Error::io(path, e))
}

struct Entry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

fn read_line<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a str> {
    let rest = &bytes[*pos..];
    let end = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Checkpoint("header ends before the `end` line".into()))?;
    *pos += end + 1;
    std::str::from_utf8(&rest[..end]).map_err(|_| Error::Checkpoint("header is not UTF-8".into()))
}

fn parse_config(line: &str) -> Result<ModelConfig> {
    let body = line
        .strip_prefix("config ")
        .ok_or_else(|| Error::Checkpoint(format!("expected a config line, found {line:?}")))?;
    let mut pairs = BTreeMap::new();
    for item in body.split_whitespace() {
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| Error::Checkpoint(format!("malformed config item {item:?}")))?;
        pairs.insert(k.to_string(), v.to_string());
    }
    ModelConfig::from_pairs(&pairs).map_err(|e| Error::Checkpoint(format!("header config: {e}")))
}

fn parse_entry(line: &str) -> Result<Entry> {
    let bad = || Error::Checkpoint(format!("malformed tensor line {line:?}"));
    let fields: Vec<&str> = line.split(' ').collect();
    if fields.len() != 4 || fields[0] != "tensor" {
        return Err(bad());
    }
    let shape = fields[2]
        .split('x')
        .map(|d| d.parse::<usize>().map_err(|_| bad()))
        .collect::<Result<Vec<_>>>()?;
    let offset = fields[3].parse().map_err(|_| bad())?;
    Ok(Entry {
        name: fields[1].to_string(),
        shape,
        offset,
    })
}

/// Differences between two configurations, one `key: a vs b` per line.
pub fn config_diff(expected: &ModelConfig, found: &ModelConfig) -> Vec<String> {
    expected
        .to_pairs()
        .into_iter()
        .zip(found.to_pairs())
        .filter(|((_, a), (_, b))| a != b)
        .map(|((k, a), (_, b))| format!("{k}: expected {a}, checkpoint has {b}"))
        .collect()
}

/// Decode a checkpoint. With `expected`, a header whose configuration differs
/// is refused with the list of differing settings.
pub fn from_bytes(bytes: &[u8], expected: Option<&ModelConfig>) -> Result<Model> {
    let mut pos = 0;
    let magic = read_line(bytes, &mut pos)?;
    if magic != MAGIC {
        return Err(Error::Checkpoint(format!("not a checkpoint (first line {magic:?})")));
    }
    let config = parse_config(read_line(bytes, &mut pos)?)?;
    if let Some(expected) = expected {
        let diff = config_diff(expected, &config);
        if !diff.is_empty() {
            return Err(Error::Checkpoint(format!(
                "configuration mismatch:\n  {}",
                diff.join("\n  ")
            )));
        }
    }
    let mut entries = Vec::new();
    loop {
        let line = read_line(bytes, &mut pos)?;
        if line == "end" {
            break;
        }
        entries.push(parse_entry(line)?);
    }

    let reference = Model::<f32>::new(config.clone(), 0)?;
    let data = &bytes[pos..];
    let mut store = ParamStore::new();
    for entry in &entries {
        let id = reference
            .params
            .id(&entry.name)
            .ok_or_else(|| Error::Checkpoint(format!("unexpected tensor {}", entry.name)))?;
        let want = reference.params.get(id).shape();
        if want != entry.shape.as_slice() {
            return Err(Error::Checkpoint(format!(
                "tensor {} has shape {:?} in the header, the configuration needs {want:?}",
                entry.name, entry.shape
            )));
        }
        let numel: usize = entry.shape.iter().product();
        let (start, end) = (entry.offset * 4, (entry.offset + numel) * 4);
        if end > data.len() {
            return Err(Error::Checkpoint(format!(
                "file is truncated inside tensor {} (needs {} data bytes, found {})",
                entry.name,
                end,
                data.len()
            )));
        }
        let values = data[start..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let decay = reference.params.param(id).decay;
        store.add(entry.name.clone(), Tensor::new(entry.shape.clone(), values)?, decay);
    }
    Model::from_params(config, store)
}

pub fn load_checkpoint(path: impl AsRef<Path>, expected: Option<&ModelConfig>) -> Result<Model> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes, expected).map_err(|e| match e {
        Error::Checkpoint(msg) => Error::Checkpoint(format!("{}: {msg}", path.display())),
        other => other,
    })
}
