//! Checkpoint files: a line-oriented text header followed by the raw
//! little-endian f32 parameter vector.
//!
//! ```text
//! coordlab-checkpoint
//! version = 1
//! kind = policy
//! shape = obs_dim=21 latent_dim=4 hidden=64 recurrent=64 actions=20 heads=1 shared_recurrent=1
//! layer = trunk.w 64 25
//! ...
//! rng = <64 hex seed> <stream> <word_pos>
//! updates = 977
//! params = 31573
//! end
//! <4 * params bytes>
//! ```

use std::fs;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use sha2::{Digest, Sha256};

use crate::approximator::{Layer, PolicyParams, PolicyShape};
use crate::diversity::{DiscShape, Discriminator};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "coordlab-checkpoint";

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("corrupt checkpoint header: {0}")]
    CorruptHeader(String),
    #[error("unsupported checkpoint version {0} (supported: {FORMAT_VERSION})")]
    UnsupportedVersion(u32),
    #[error("shape mismatch at layer {layer}")]
    ShapeMismatch { layer: String },
    #[error("truncated payload: expected {expected} bytes, found {got}")]
    Truncated { expected: usize, got: usize },
    #[error("checkpoint kind `{got}` where `{expected}` was expected")]
    WrongKind { expected: String, got: String },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// Serializable position of a ChaCha8 stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self { seed: rng.get_seed(), stream: rng.get_stream(), word_pos: rng.get_word_pos() }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    /// `key=value` fields describing the network shape.
    pub shape: Vec<(String, usize)>,
    pub layers: Vec<Layer>,
    pub rng: Option<RngState>,
    pub updates: u64,
    pub params: Vec<f64>,
}

impl Checkpoint {
    pub fn encode(&self) -> Vec<u8> {
        let mut head = String::new();
        head.push_str(MAGIC);
        head.push('\n');
        head.push_str(&format!("version = {FORMAT_VERSION}\n"));
        head.push_str(&format!("kind = {}\n", self.kind));
        let shape: Vec<String> = self.shape.iter().map(|(k, v)| format!("{k}={v}")).collect();
        head.push_str(&format!("shape = {}\n", shape.join(" ")));
        for l in &self.layers {
            head.push_str(&format!("layer = {} {} {}\n", l.name, l.rows, l.cols));
        }
        match &self.rng {
            Some(r) => head.push_str(&format!("rng = {} {} {}\n", hex::encode(r.seed), r.stream, r.word_pos)),
            None => head.push_str("rng = none\n"),
        }
        head.push_str(&format!("updates = {}\n", self.updates));
        head.push_str(&format!("params = {}\n", self.params.len()));
        head.push_str("end\n");
        let mut bytes = head.into_bytes();
        for &x in &self.params {
            bytes.extend_from_slice(&(x as f32).to_le_bytes());
        }
        bytes
    }

    pub fn decode(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
        let corrupt = |m: &str| CheckpointError::CorruptHeader(m.to_string());
        let end = find_header_end(bytes).ok_or_else(|| corrupt("missing `end` line"))?;
        let header = std::str::from_utf8(&bytes[..end]).map_err(|_| corrupt("header is not UTF-8"))?;
        let mut lines = header.lines();
        if lines.next() != Some(MAGIC) {
            return Err(corrupt("bad magic line"));
        }
        let mut kind = None;
        let mut shape = Vec::new();
        let mut layer_specs = Vec::new();
        let mut rng = None;
        let mut updates = None;
        let mut count = None;
        for line in lines {
            if line == "end" {
                break;
            }
            let (key, value) = line.split_once(" = ").ok_or_else(|| corrupt(line))?;
            match key {
                "version" => {
                    let v: u32 = value.parse().map_err(|_| corrupt("version"))?;
                    if v != FORMAT_VERSION {
                        return Err(CheckpointError::UnsupportedVersion(v));
                    }
                }
                "kind" => kind = Some(value.to_string()),
                "shape" => {
                    for field in value.split_whitespace() {
                        let (k, v) = field.split_once('=').ok_or_else(|| corrupt("shape field"))?;
                        shape.push((k.to_string(), v.parse().map_err(|_| corrupt("shape value"))?));
                    }
                }
                "layer" => {
                    let parts: Vec<&str> = value.split_whitespace().collect();
                    if parts.len() != 3 {
                        return Err(corrupt("layer line"));
                    }
                    let rows: usize = parts[1].parse().map_err(|_| corrupt("layer rows"))?;
                    let cols: usize = parts[2].parse().map_err(|_| corrupt("layer cols"))?;
                    layer_specs.push((parts[0].to_string(), rows, cols));
                }
                "rng" => {
                    if value != "none" {
                        let parts: Vec<&str> = value.split_whitespace().collect();
                        if parts.len() != 3 {
                            return Err(corrupt("rng line"));
                        }
                        let seed_bytes = hex::decode(parts[0]).map_err(|_| corrupt("rng seed"))?;
                        let seed: [u8; 32] = seed_bytes.try_into().map_err(|_| corrupt("rng seed length"))?;
                        rng = Some(RngState {
                            seed,
                            stream: parts[1].parse().map_err(|_| corrupt("rng stream"))?,
                            word_pos: parts[2].parse().map_err(|_| corrupt("rng word_pos"))?,
                        });
                    }
                }
                "updates" => updates = Some(value.parse().map_err(|_| corrupt("updates"))?),
                "params" => count = Some(value.parse::<usize>().map_err(|_| corrupt("params"))?),
                _ => return Err(corrupt(&format!("unknown key `{key}`"))),
            }
        }
        let kind = kind.ok_or_else(|| corrupt("missing kind"))?;
        let count = count.ok_or_else(|| corrupt("missing params"))?;
        let layers = crate::approximator::build_layers(&layer_specs);
        let table_len: usize = layers.iter().map(Layer::len).sum();
        if table_len != count {
            return Err(corrupt("layer table does not add up to the parameter count"));
        }
        let payload = &bytes[end + "end\n".len()..];
        if payload.len() != 4 * count {
            return Err(CheckpointError::Truncated { expected: 4 * count, got: payload.len() });
        }
        let params = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        Ok(Checkpoint {
            kind,
            shape,
            layers,
            rng,
            updates: updates.ok_or_else(|| corrupt("missing updates"))?,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| io_err(path, e))?;
        }
        fs::write(path, self.encode()).map_err(|e| io_err(path, e))
    }

    pub fn load(path: &Path) -> Result<Checkpoint, CheckpointError> {
        let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
        Checkpoint::decode(&bytes)
    }

    fn shape_field(&self, key: &str) -> Result<usize, CheckpointError> {
        self.shape
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| *v)
            .ok_or_else(|| CheckpointError::CorruptHeader(format!("missing shape field {key}")))
    }

    fn expect_kind(&self, kind: &str) -> Result<(), CheckpointError> {
        if self.kind != kind {
            return Err(CheckpointError::WrongKind { expected: kind.into(), got: self.kind.clone() });
        }
        Ok(())
    }

    pub fn from_policy(p: &PolicyParams, rng: Option<RngState>, updates: u64) -> Self {
        let s = &p.shape;
        Checkpoint {
            kind: "policy".into(),
            shape: vec![
                ("obs_dim".into(), s.obs_dim),
                ("latent_dim".into(), s.latent_dim),
                ("hidden".into(), s.hidden),
                ("recurrent".into(), s.recurrent),
                ("actions".into(), s.actions),
                ("heads".into(), s.heads),
                ("shared_recurrent".into(), s.shared_recurrent as usize),
            ],
            layers: p.layers.clone(),
            rng,
            updates,
            params: p.data.clone(),
        }
    }

    /// Rebuilds a policy, checking the stored layer table against the shape
    /// line and, when given, against the shape the caller expects.
    pub fn to_policy(&self, expected: Option<&PolicyShape>) -> Result<PolicyParams, CheckpointError> {
        self.expect_kind("policy")?;
        let shape = PolicyShape {
            obs_dim: self.shape_field("obs_dim")?,
            latent_dim: self.shape_field("latent_dim")?,
            hidden: self.shape_field("hidden")?,
            recurrent: self.shape_field("recurrent")?,
            actions: self.shape_field("actions")?,
            heads: self.shape_field("heads")?,
            shared_recurrent: self.shape_field("shared_recurrent")? != 0,
        };
        compare_layers(&self.layers, &shape.layers())?;
        if let Some(exp) = expected {
            compare_layers(&exp.layers(), &self.layers)?;
        }
        PolicyParams::from_data(shape, self.params.clone())
            .map_err(|e| CheckpointError::CorruptHeader(e.to_string()))
    }

    pub fn from_discriminator(d: &Discriminator, updates: u64) -> Self {
        let s = &d.shape;
        Checkpoint {
            kind: "discriminator".into(),
            shape: vec![("input".into(), s.input), ("hidden".into(), s.hidden), ("classes".into(), s.classes)],
            layers: d.layers.clone(),
            rng: None,
            updates,
            params: d.data.clone(),
        }
    }

    pub fn to_discriminator(&self, expected: Option<&DiscShape>) -> Result<Discriminator, CheckpointError> {
        self.expect_kind("discriminator")?;
        let shape = DiscShape {
            input: self.shape_field("input")?,
            hidden: self.shape_field("hidden")?,
            classes: self.shape_field("classes")?,
        };
        compare_layers(&self.layers, &shape.layers())?;
        if let Some(exp) = expected {
            compare_layers(&exp.layers(), &self.layers)?;
        }
        Ok(Discriminator::from_data(shape, self.params.clone()))
    }

    /// SHA-256 of the encoded file, hex.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.encode()))
    }
}

/// SHA-256 over the f32 image of a parameter vector.
pub fn params_digest(data: &[f64]) -> String {
    let mut h = Sha256::new();
    for &x in data {
        h.update((x as f32).to_le_bytes());
    }
    hex::encode(h.finalize())
}

pub fn save_policy(path: &Path, p: &PolicyParams, rng: Option<RngState>, updates: u64) -> Result<(), CheckpointError> {
    Checkpoint::from_policy(p, rng, updates).save(path)
}

pub fn load_policy(path: &Path, expected: Option<&PolicyShape>) -> Result<PolicyParams, CheckpointError> {
    Checkpoint::load(path)?.to_policy(expected)
}

fn compare_layers(expected: &[Layer], got: &[Layer]) -> Result<(), CheckpointError> {
    for (i, e) in expected.iter().enumerate() {
        match got.get(i) {
            Some(g) if g.name == e.name && g.rows == e.rows && g.cols == e.cols => {}
            _ => return Err(CheckpointError::ShapeMismatch { layer: e.name.clone() }),
        }
    }
    if got.len() > expected.len() {
        return Err(CheckpointError::ShapeMismatch { layer: got[expected.len()].name.clone() });
    }
    Ok(())
}

fn find_header_end(bytes: &[u8]) -> Option<usize> {
    let needle = b"\nend\n";
    bytes.windows(needle.len()).position(|w| w == needle).map(|p| p + 1)
}

fn io_err(path: &Path, e: std::io::Error) -> CheckpointError {
    CheckpointError::Io { path: path.display().to_string(), source: e }
}
