use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::model::{decays, shape_tree, ModelParams};
use crate::numerics::{Element, Rng, Tensor};
use crate::optim::AdamWState;

use super::{TrainConfig, TrainError};

pub const MAGIC: &[u8; 4] = b"CMAE";
pub const VERSION: u32 = 1;
const PREAMBLE: usize = 12;

/// Where the sample streams resume: generator id plus word position.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: u64,
    pub stream: u64,
    pub position: u128,
}

impl RngState {
    pub fn of(rng: &Rng) -> Self {
        Self {
            seed: rng.seed(),
            stream: rng.stream(),
            position: rng.position(),
        }
    }

    pub fn restore(&self) -> Rng {
        let mut rng = Rng::new(self.seed, self.stream);
        rng.set_position(self.position);
        rng
    }
}

#[derive(Clone, Debug)]
pub struct Checkpoint<T> {
    pub config: TrainConfig,
    pub params: ModelParams<T>,
    pub optim: AdamWState<T>,
    pub step: u64,
    pub rng: RngState,
}

fn format_err(offset: usize, msg: impl Into<String>) -> TrainError {
    TrainError::Format {
        offset,
        msg: msg.into(),
    }
}

/// Serializes a checkpoint: magic, u32 version, u32 header length, the text
/// header, then every tensor's little-endian payload in header order.
pub fn encode_checkpoint<T: Element>(ck: &Checkpoint<T>) -> Vec<u8> {
    let mut header = String::new();
    header.push_str("[config]\n");
    header.push_str(&ck.config.to_text());
    let _ = write!(
        header,
        "[state]\nstep = {}\nadam_t = {}\nrng_algorithm = {}\nrng_seed = {}\nrng_stream = {}\nrng_position = {}\n",
        ck.step,
        ck.optim.t,
        Rng::ALGORITHM,
        ck.rng.seed,
        ck.rng.stream,
        ck.rng.position
    );
    header.push_str("[tensors]\n");
    let mut payload = Vec::new();
    let groups = [("param", &ck.params.weights), ("adam_m", &ck.optim.m), ("adam_v", &ck.optim.v)];
    let mut no_decay = Vec::new();
    for (prefix, tree) in groups {
        for (name, t) in tree.named() {
            let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
            let _ = writeln!(header, "{prefix}/{name}:{}:{}:{}", T::DTYPE, dims.join("x"), payload.len());
            for &v in t.data() {
                v.write_le(&mut payload);
            }
            if prefix == "param" && !decays(&name) {
                no_decay.push(name);
            }
        }
    }
    header.push_str("[no_decay]\n");
    for name in no_decay {
        header.push_str(&name);
        header.push('\n');
    }
    let mut out = Vec::with_capacity(PREAMBLE + header.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(&payload);
    out
}

struct Entry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    /// Byte position of the header line, for error messages.
    at: usize,
}

/// Parses a checkpoint. Nothing is returned unless every section and every
/// payload range validates.
pub fn decode_checkpoint<T: Element>(bytes: &[u8]) -> Result<Checkpoint<T>, TrainError> {
    if bytes.len() < PREAMBLE {
        return Err(format_err(bytes.len(), format!("file ends inside the {PREAMBLE}-byte preamble")));
    }
    if &bytes[0..4] != MAGIC {
        return Err(format_err(0, "bad magic, expected \"CMAE\""));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(TrainError::Version {
            found: version,
            expected: VERSION,
        });
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let payload_start = PREAMBLE + header_len;
    if bytes.len() < payload_start {
        return Err(format_err(
            8,
            format!("header length {header_len} runs past end of file ({} bytes)", bytes.len()),
        ));
    }
    let header = std::str::from_utf8(&bytes[PREAMBLE..payload_start])
        .map_err(|e| format_err(PREAMBLE + e.valid_up_to(), "header is not UTF-8"))?;

    let mut section = "";
    let mut config_text = String::new();
    let mut state = std::collections::BTreeMap::new();
    let mut entries = Vec::new();
    let mut no_decay = Vec::new();
    let mut pos = PREAMBLE;
    for line in header.split_inclusive('\n') {
        let at = pos;
        pos += line.len();
        let line = line.trim_end_matches('\n');
        if line.starts_with('[') {
            section = line;
            continue;
        }
        if line.is_empty() {
            continue;
        }
        match section {
            "[config]" => {
                config_text.push_str(line);
                config_text.push('\n');
            }
            "[state]" => {
                let (k, v) = line.split_once(" = ").ok_or_else(|| format_err(at, "malformed state line"))?;
                state.insert(k.to_string(), v.to_string());
            }
            "[tensors]" => {
                let parts: Vec<&str> = line.split(':').collect();
                let [name, dtype, shape, offset] = parts.as_slice() else {
                    return Err(format_err(at, "tensor line must be name:dtype:shape:offset"));
                };
                if *dtype != T::DTYPE {
                    return Err(format_err(at, format!("dtype {dtype} but {} requested", T::DTYPE)));
                }
                let shape = shape
                    .split('x')
                    .map(|d| d.parse::<usize>())
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|_| format_err(at, format!("bad shape {shape:?}")))?;
                let offset = offset.parse().map_err(|_| format_err(at, format!("bad offset {offset:?}")))?;
                entries.push(Entry {
                    name: name.to_string(),
                    shape,
                    offset,
                    at,
                });
            }
            "[no_decay]" => no_decay.push(line.to_string()),
            _ => return Err(format_err(at, format!("line outside a known section: {line:?}"))),
        }
    }

    let config = TrainConfig::from_text(&config_text)?;
    let num = |key: &str| -> Result<&String, TrainError> {
        state
            .get(key)
            .ok_or_else(|| format_err(PREAMBLE, format!("[state] lacks {key}")))
    };
    let parse_u = |key: &str| -> Result<u128, TrainError> {
        num(key)?
            .parse::<u128>()
            .map_err(|_| format_err(PREAMBLE, format!("[state] {key} is not an integer")))
    };
    if num("rng_algorithm")? != Rng::ALGORITHM {
        return Err(format_err(PREAMBLE, format!("unsupported rng {}", num("rng_algorithm")?)));
    }
    let step = parse_u("step")? as u64;
    let adam_t = parse_u("adam_t")? as u64;
    let rng = RngState {
        seed: parse_u("rng_seed")? as u64,
        stream: parse_u("rng_stream")? as u64,
        position: parse_u("rng_position")?,
    };

    let payload = &bytes[payload_start..];
    let mut expected_end = 0usize;
    let mut tensors = Vec::with_capacity(entries.len());
    for e in &entries {
        let n: usize = e.shape.iter().product();
        let len = n * T::BYTES;
        if e.offset != expected_end {
            return Err(format_err(e.at, format!("{} starts at {} instead of {expected_end}", e.name, e.offset)));
        }
        let end = e.offset + len;
        if end > payload.len() {
            return Err(format_err(
                payload_start + payload.len(),
                format!("truncated payload: {} needs bytes up to {}", e.name, payload_start + end),
            ));
        }
        let data = payload[e.offset..end].chunks_exact(T::BYTES).map(T::read_le).collect();
        tensors.push((e.name.as_str(), Tensor::new(&e.shape, data).map_err(|err| format_err(e.at, err.to_string()))?));
        expected_end = end;
    }
    if expected_end != payload.len() {
        return Err(format_err(payload_start + expected_end, "trailing bytes after the last tensor"));
    }

    let names = shape_tree(&config.model).names();
    let group = |prefix: &str| -> Result<Vec<Tensor<T>>, TrainError> {
        let found: Vec<_> = tensors.iter().filter(|(n, _)| n.starts_with(prefix)).collect();
        if found.len() != names.len() {
            return Err(format_err(
                PREAMBLE,
                format!("{} tensors under {prefix} but the config has {}", found.len(), names.len()),
            ));
        }
        found
            .into_iter()
            .zip(&names)
            .map(|((n, t), want)| {
                if &n[prefix.len()..] == want {
                    Ok(t.clone())
                } else {
                    Err(format_err(PREAMBLE, format!("expected {prefix}{want}, found {n}")))
                }
            })
            .collect()
    };
    let (p, m, v) = (group("param/")?, group("adam_m/")?, group("adam_v/")?);
    let template = shape_tree(&config.model);
    let weights = template.rebuild(p)?;
    let params = ModelParams::from_weights(config.model, weights)?;
    let optim = AdamWState {
        m: template.rebuild(m)?,
        v: template.rebuild(v)?,
        t: adam_t,
    };
    let expected_no_decay: Vec<String> = names.iter().filter(|n| !decays(n)).cloned().collect();
    if no_decay != expected_no_decay {
        return Err(format_err(PREAMBLE, "[no_decay] list disagrees with the parameter names"));
    }
    Ok(Checkpoint {
        config,
        params,
        optim,
        step,
        rng,
    })
}

/// Writes to a temporary sibling first, then renames into place.
pub fn save_checkpoint<T: Element>(path: &Path, ck: &Checkpoint<T>) -> Result<(), TrainError> {
    let tmp = path.with_extension("cmae.tmp");
    fs::write(&tmp, encode_checkpoint(ck))?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint<T: Element>(path: &Path) -> Result<Checkpoint<T>, TrainError> {
    decode_checkpoint(&fs::read(path)?)
}
