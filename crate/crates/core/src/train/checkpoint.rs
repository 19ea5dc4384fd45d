use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::ParamStore;
use crate::tensor::{DType, Scalar, Tensor};

const MAGIC: &[u8; 4] = b"MCDN";
const VERSION: u32 = 1;

/// One serialized tensor: payload bytes are raw little-endian IEEE-754.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointTensor {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub bytes: Vec<u8>,
    pub learnable: bool,
}

/// Named-tensor container with training metadata. The on-disk format is
/// the `MCDN` magic, a structured text index (one line per tensor with
/// name, dtype, shape, byte offset, byte length), then the concatenated
/// payloads; loading validates every shape and offset against the index.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub tensors: Vec<CheckpointTensor>,
    pub epoch: usize,
    pub best_val_miou: f64,
    /// Single-line config snapshot captured at save time.
    pub config_line: String,
}

impl Checkpoint {
    pub fn from_store<S: Scalar>(
        store: &ParamStore<S>,
        epoch: usize,
        best_val_miou: f64,
        config_line: &str,
    ) -> Checkpoint {
        let tensors = store
            .iter()
            .map(|e| {
                let mut bytes = Vec::with_capacity(e.tensor.numel() * S::DTYPE.byte_width());
                for v in e.tensor.data() {
                    v.to_le_bytes(&mut bytes);
                }
                CheckpointTensor {
                    name: e.name.clone(),
                    dtype: S::DTYPE,
                    shape: e.tensor.shape().to_vec(),
                    bytes,
                    learnable: e.learnable,
                }
            })
            .collect();
        Checkpoint {
            tensors,
            epoch,
            best_val_miou,
            config_line: config_line.replace('\n', " "),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut header = String::new();
        let _ = writeln!(header, "version {VERSION}");
        let _ = writeln!(header, "epoch {}", self.epoch);
        let _ = writeln!(header, "best_val_miou {}", self.best_val_miou);
        let _ = writeln!(header, "config {}", self.config_line);
        let _ = writeln!(header, "tensors {}", self.tensors.len());
        let mut offset = 0usize;
        let mut payload = Vec::new();
        for t in &self.tensors {
            let dims: Vec<String> = t.shape.iter().map(|d| d.to_string()).collect();
            let _ = writeln!(
                header,
                "{} {} {} {} {} {}",
                t.name,
                t.dtype.name(),
                dims.join("x"),
                offset,
                t.bytes.len(),
                if t.learnable { "param" } else { "buffer" },
            );
            offset += t.bytes.len();
            payload.extend_from_slice(&t.bytes);
        }
        let _ = writeln!(header, "payload {}", payload.len());
        let mut out = Vec::with_capacity(4 + header.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(header.as_bytes());
        out.extend_from_slice(&payload);
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let raw = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let bad = |msg: &str| Error::Checkpoint(format!("{}: {msg}", path.display()));
        if raw.len() < 4 || &raw[..4] != MAGIC {
            return Err(bad("bad magic bytes"));
        }
        let mut cursor = 4usize;
        let mut next_line = || -> Result<String> {
            let rest = &raw[cursor..];
            let end = rest.iter().position(|b| *b == b'\n').ok_or_else(|| {
                Error::Checkpoint(format!("{}: truncated header", path.display()))
            })?;
            let line = String::from_utf8_lossy(&rest[..end]).into_owned();
            cursor += end + 1;
            Ok(line)
        };

        let version_line = next_line()?;
        let version: u32 =
            parse_field(&version_line, "version").ok_or_else(|| bad("missing version"))?;
        if version != VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let epoch: usize =
            parse_field(&next_line()?, "epoch").ok_or_else(|| bad("missing epoch"))?;
        let miou_line = next_line()?;
        let best_val_miou: f64 =
            parse_field(&miou_line, "best_val_miou").ok_or_else(|| bad("missing best_val_miou"))?;
        let config_line = next_line()?
            .strip_prefix("config ")
            .map(str::to_string)
            .ok_or_else(|| bad("missing config"))?;
        let count: usize =
            parse_field(&next_line()?, "tensors").ok_or_else(|| bad("missing tensor count"))?;

        let mut index = Vec::with_capacity(count);
        let mut expected_offset = 0usize;
        for _ in 0..count {
            let line = next_line()?;
            let fields: Vec<&str> = line.split(' ').collect();
            if fields.len() != 6 {
                return Err(bad(&format!("malformed index line '{line}'")));
            }
            let dtype = DType::parse(fields[1])
                .ok_or_else(|| bad(&format!("unknown dtype '{}'", fields[1])))?;
            let shape: Vec<usize> = fields[2]
                .split('x')
                .map(|d| {
                    d.parse()
                        .map_err(|_| bad(&format!("bad shape '{}'", fields[2])))
                })
                .collect::<Result<_>>()?;
            let offset: usize = fields[3]
                .parse()
                .map_err(|_| bad(&format!("bad offset '{}'", fields[3])))?;
            let len: usize = fields[4]
                .parse()
                .map_err(|_| bad(&format!("bad length '{}'", fields[4])))?;
            let learnable = match fields[5] {
                "param" => true,
                "buffer" => false,
                other => return Err(bad(&format!("unknown tensor kind '{other}'"))),
            };
            let numel: usize = shape.iter().product();
            if numel * dtype.byte_width() != len {
                return Err(bad(&format!(
                    "tensor '{}': shape {:?} wants {} bytes, index says {len}",
                    fields[0],
                    shape,
                    numel * dtype.byte_width()
                )));
            }
            if offset != expected_offset {
                return Err(bad(&format!(
                    "tensor '{}': offset {offset} breaks contiguity (expected {expected_offset})",
                    fields[0]
                )));
            }
            expected_offset += len;
            index.push((fields[0].to_string(), dtype, shape, offset, len, learnable));
        }
        let payload_len: usize =
            parse_field(&next_line()?, "payload").ok_or_else(|| bad("missing payload size"))?;
        if payload_len != expected_offset {
            return Err(bad("payload size disagrees with index"));
        }
        let payload = &raw[cursor..];
        if payload.len() != payload_len {
            return Err(bad(&format!(
                "truncated payload: {} bytes on disk, index wants {payload_len}",
                payload.len()
            )));
        }
        let tensors = index
            .into_iter()
            .map(
                |(name, dtype, shape, offset, len, learnable)| CheckpointTensor {
                    name,
                    dtype,
                    shape,
                    bytes: payload[offset..offset + len].to_vec(),
                    learnable,
                },
            )
            .collect();
        Ok(Checkpoint {
            tensors,
            epoch,
            best_val_miou,
            config_line,
        })
    }

    /// Decode one tensor's payload through f64.
    pub fn tensor_values(t: &CheckpointTensor) -> Vec<f64> {
        match t.dtype {
            DType::F32 => t
                .bytes
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
                .collect(),
            DType::F64 => t
                .bytes
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes([b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7]]))
                .collect(),
        }
    }

    /// Copy every tensor into a model's parameter store. The registries
    /// must agree exactly; mismatches fail with the offending names.
    pub fn apply_to<S: Scalar>(&self, store: &mut ParamStore<S>) -> Result<()> {
        let mut missing = Vec::new();
        let mut mismatched = Vec::new();
        for entry in store.iter() {
            match self.tensors.iter().find(|t| t.name == entry.name) {
                None => missing.push(entry.name.clone()),
                Some(t) if t.shape != entry.tensor.shape() => mismatched.push(format!(
                    "{} (checkpoint {:?}, model {:?})",
                    entry.name,
                    t.shape,
                    entry.tensor.shape()
                )),
                Some(_) => {}
            }
        }
        let store_names: Vec<&str> = store.iter().map(|e| e.name.as_str()).collect();
        let unexpected: Vec<String> = self
            .tensors
            .iter()
            .map(|t| t.name.clone())
            .filter(|n| !store_names.contains(&n.as_str()))
            .collect();
        if !missing.is_empty() || !unexpected.is_empty() || !mismatched.is_empty() {
            return Err(Error::Checkpoint(format!(
                "registry mismatch: missing from checkpoint [{}]; unexpected in checkpoint [{}]; shape mismatches [{}]",
                missing.join(", "),
                unexpected.join(", "),
                mismatched.join(", ")
            )));
        }
        for t in &self.tensors {
            let values = Self::tensor_values(t);
            let dst = store.get_mut(&t.name).expect("name checked above");
            let converted: Vec<S> = values.iter().map(|v| S::from_f64(*v)).collect();
            *dst = Tensor::new(&t.shape, converted)?;
        }
        Ok(())
    }
}

fn parse_field<T: std::str::FromStr>(line: &str, key: &str) -> Option<T> {
    line.strip_prefix(key)?.trim().parse().ok()
}
