//! Checkpoint directory: `manifest.txt`, `tensors.bin`, `config.json`.
//!
//! ```text
//! format_version 1
//! step 640
//! config_hash 3f1c...
//! tensor encoder.ground.stage1.weight f32 16x3x3x3 tensors.bin 0
//! ...
//! ```
//!
//! Tensor data is raw little-endian `f32`, row-major. The whole manifest is
//! checked against the configured layout before any tensor is read.

use std::fmt::Write as _;
use std::path::Path;

use clnet_core::{Model, Params};

use crate::config::RunConfig;
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.txt";
pub const TENSORS: &str = "tensors.bin";
pub const CONFIG: &str = "config.json";
/// Extra tensor holding the (possibly learned) log-temperature.
pub const LOG_TAU: &str = "objective.log_tau";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub step: u64,
    pub params: Params<f32>,
    pub log_tau: f32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorEntry {
    pub name: String,
    pub dtype: String,
    pub shape: Vec<usize>,
    pub file: String,
    pub offset: u64,
}

impl TensorEntry {
    pub fn num_bytes(&self) -> u64 {
        4 * self.shape.iter().product::<usize>() as u64
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub step: u64,
    pub config_hash: String,
    pub tensors: Vec<TensorEntry>,
}

fn shape_str(shape: &[usize]) -> String {
    shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x")
}

impl CheckpointManifest {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "format_version {}", self.format_version).unwrap();
        writeln!(s, "step {}", self.step).unwrap();
        writeln!(s, "config_hash {}", self.config_hash).unwrap();
        for t in &self.tensors {
            writeln!(
                s,
                "tensor {} {} {} {} {}",
                t.name,
                t.dtype,
                shape_str(&t.shape),
                t.file,
                t.offset
            )
            .unwrap();
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = |line: usize, msg: &str| Error::Checkpoint(format!("{MANIFEST} line {line}: {msg}"));
        let (mut version, mut step, mut hash) = (None, None, None);
        let mut tensors = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let n = i + 1;
            let fields: Vec<&str> = line.split_whitespace().collect();
            match fields.as_slice() {
                [] => {}
                ["format_version", v] => version = Some(v.parse().map_err(|_| bad(n, "bad format_version"))?),
                ["step", v] => step = Some(v.parse().map_err(|_| bad(n, "bad step"))?),
                ["config_hash", v] => hash = Some(v.to_string()),
                ["tensor", name, dtype, shape, file, offset] => {
                    let shape = shape
                        .split('x')
                        .map(|d| d.parse::<usize>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|_| bad(n, &format!("bad shape of tensor `{name}`")))?;
                    tensors.push(TensorEntry {
                        name: name.to_string(),
                        dtype: dtype.to_string(),
                        shape,
                        file: file.to_string(),
                        offset: offset
                            .parse()
                            .map_err(|_| bad(n, &format!("bad offset of tensor `{name}`")))?,
                    });
                }
                _ => return Err(bad(n, "unrecognized line")),
            }
        }
        let format_version = version.ok_or_else(|| Error::Checkpoint("manifest lacks format_version".into()))?;
        if format_version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "format version {format_version} is not supported (expected {FORMAT_VERSION})"
            )));
        }
        Ok(CheckpointManifest {
            format_version,
            step: step.ok_or_else(|| Error::Checkpoint("manifest lacks step".into()))?,
            config_hash: hash.ok_or_else(|| Error::Checkpoint("manifest lacks config_hash".into()))?,
            tensors,
        })
    }
}

impl Checkpoint {
    pub fn new(config: RunConfig, step: u64, model: &Model<f32>, log_tau: f32) -> Self {
        Checkpoint {
            config,
            step,
            params: model.params.clone(),
            log_tau,
        }
    }

    pub fn model(&self) -> Result<Model<f32>> {
        Ok(Model::from_parts(self.config.model_config(), self.params.clone())?)
    }

    pub fn manifest(&self) -> CheckpointManifest {
        let mut tensors = Vec::new();
        let mut offset = 0u64;
        let mut push = |name: String, shape: Vec<usize>| {
            let e = TensorEntry {
                name,
                dtype: "f32".into(),
                shape,
                file: TENSORS.into(),
                offset,
            };
            offset += e.num_bytes();
            tensors.push(e);
        };
        for t in self.params.tensors() {
            push(t.name, t.shape);
        }
        push(LOG_TAU.into(), vec![1]);
        CheckpointManifest {
            format_version: FORMAT_VERSION,
            step: self.step,
            config_hash: self.config.hash(),
            tensors,
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut bytes = Vec::with_capacity(4 * (self.params.num_scalars() + 1));
        for t in self.params.tensors() {
            for v in t.data {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        bytes.extend_from_slice(&self.log_tau.to_le_bytes());
        let write = |name: &str, data: &[u8]| {
            let p = dir.join(name);
            std::fs::write(&p, data).map_err(|e| Error::io(&p, e))
        };
        write(TENSORS, &bytes)?;
        write(CONFIG, self.config.to_json().as_bytes())?;
        write(MANIFEST, self.manifest().to_text().as_bytes())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let read = |name: &str| {
            let p = dir.join(name);
            std::fs::read(&p).map_err(|e| Error::io(&p, e))
        };
        let text =
            String::from_utf8(read(MANIFEST)?).map_err(|_| Error::Checkpoint(format!("{MANIFEST} is not UTF-8")))?;
        let manifest = CheckpointManifest::parse(&text)?;
        let config_text =
            String::from_utf8(read(CONFIG)?).map_err(|_| Error::Checkpoint(format!("{CONFIG} is not UTF-8")))?;
        let config = RunConfig::from_json(&config_text)?;
        if config.hash() != manifest.config_hash {
            return Err(Error::Checkpoint(format!(
                "config hash {} does not match the manifest's {}",
                config.hash(),
                manifest.config_hash
            )));
        }

        let mut params = Params::<f32>::init(&config.model_config(), 0)?;
        let expected: Vec<(String, Vec<usize>)> = params
            .tensors()
            .into_iter()
            .map(|t| (t.name, t.shape))
            .chain([(LOG_TAU.to_string(), vec![1])])
            .collect();
        for (name, _) in &expected {
            let count = manifest.tensors.iter().filter(|t| &t.name == name).count();
            match count {
                0 => return Err(Error::Checkpoint(format!("tensor `{name}` is missing"))),
                1 => {}
                _ => return Err(Error::Checkpoint(format!("tensor `{name}` is listed {count} times"))),
            }
        }
        if let Some(t) = manifest
            .tensors
            .iter()
            .find(|t| !expected.iter().any(|(n, _)| n == &t.name))
        {
            return Err(Error::Checkpoint(format!("unexpected tensor `{}`", t.name)));
        }
        let entry = |name: &str| manifest.tensors.iter().find(|t| t.name == name).expect("checked above");
        for (name, shape) in &expected {
            let e = entry(name);
            if e.dtype != "f32" {
                return Err(Error::Checkpoint(format!(
                    "tensor `{name}` has dtype {}, expected f32",
                    e.dtype
                )));
            }
            if &e.shape != shape {
                return Err(Error::Checkpoint(format!(
                    "tensor `{name}` has shape {}, expected {}",
                    shape_str(&e.shape),
                    shape_str(shape)
                )));
            }
            if e.file.contains(['/', '\\']) || e.file.starts_with('.') {
                return Err(Error::Checkpoint(format!(
                    "tensor `{name}` names an invalid file `{}`",
                    e.file
                )));
            }
        }
        let mut ranges: Vec<(u64, u64, &str)> = manifest
            .tensors
            .iter()
            .map(|t| (t.offset, t.offset + t.num_bytes(), t.name.as_str()))
            .collect();
        let files: std::collections::BTreeSet<&str> = manifest.tensors.iter().map(|t| t.file.as_str()).collect();
        let mut blobs = std::collections::BTreeMap::new();
        for f in files {
            blobs.insert(f, read(f)?);
        }
        for file in blobs.keys() {
            ranges.clear();
            ranges.extend(
                manifest
                    .tensors
                    .iter()
                    .filter(|t| t.file == *file)
                    .map(|t| (t.offset, t.offset + t.num_bytes(), t.name.as_str())),
            );
            ranges.sort();
            for w in ranges.windows(2) {
                if w[1].0 < w[0].1 {
                    return Err(Error::Checkpoint(format!(
                        "tensors `{}` and `{}` overlap",
                        w[0].2, w[1].2
                    )));
                }
            }
            let len = blobs[file].len() as u64;
            for &(start, end, name) in &ranges {
                if end > len {
                    return Err(Error::Checkpoint(format!(
                        "tensor `{name}` needs bytes {start}..{end} of {file}, which has {len}"
                    )));
                }
            }
        }

        let decode = |e: &TensorEntry, out: &mut [f32]| {
            let bytes = &blobs[e.file.as_str()][e.offset as usize..(e.offset + e.num_bytes()) as usize];
            for (v, b) in out.iter_mut().zip(bytes.chunks_exact(4)) {
                *v = f32::from_le_bytes(b.try_into().expect("4 bytes"));
            }
        };
        for t in params.tensors_mut() {
            decode(entry(&t.name), t.data);
        }
        let mut log_tau = [0f32];
        decode(entry(LOG_TAU), &mut log_tau);
        Ok(Checkpoint {
            config,
            step: manifest.step,
            params,
            log_tau: log_tau[0],
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let config = RunConfig::default();
        let model = Model::<f32>::init(config.model_config(), 3).unwrap();
        Checkpoint::new(config, 17, &model, 0.07f32.ln())
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let ck = sample();
        ck.save(dir.path()).unwrap();
        let back = Checkpoint::load(dir.path()).unwrap();
        assert_eq!(back.step, 17);
        assert_eq!(back.log_tau.to_bits(), ck.log_tau.to_bits());
        for (a, b) in ck.params.tensors().iter().zip(back.params.tensors()) {
            assert_eq!(a.name, b.name);
            assert!(a.data.iter().zip(b.data).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn truncated_blob_names_the_tensor() {
        let dir = tempfile::tempdir().unwrap();
        sample().save(dir.path()).unwrap();
        let p = dir.path().join(TENSORS);
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 4]).unwrap();
        let err = Checkpoint::load(dir.path()).unwrap_err().to_string();
        assert!(err.contains(LOG_TAU), "{err}");
    }

    #[test]
    fn wrong_shape_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        sample().save(dir.path()).unwrap();
        let p = dir.path().join(MANIFEST);
        let text = std::fs::read_to_string(&p).unwrap();
        let edited = text.replacen("maps.ground.level1 f32 16x64x16", "maps.ground.level1 f32 16x64x17", 1);
        assert_ne!(edited, text);
        std::fs::write(&p, edited).unwrap();
        let err = Checkpoint::load(dir.path()).unwrap_err().to_string();
        assert!(err.contains("maps.ground.level1") && err.contains("shape"), "{err}");
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        sample().save(dir.path()).unwrap();
        let p = dir.path().join(MANIFEST);
        let text = std::fs::read_to_string(&p)
            .unwrap()
            .replacen("format_version 1", "format_version 2", 1);
        std::fs::write(&p, text).unwrap();
        assert!(Checkpoint::load(dir.path())
            .unwrap_err()
            .to_string()
            .contains("format version 2"));
    }
}
