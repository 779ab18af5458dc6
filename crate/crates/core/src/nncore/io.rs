//! Weight files: a raw little-endian `f64` blob plus a JSON manifest
//! (`<blob>.json`) naming each tensor, its shape and its offset.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::{Error, Result};

const FORMAT: &str = "cardioview-weights";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the blob, in values (not bytes).
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightManifest {
    pub format: String,
    pub tensors: Vec<TensorEntry>,
    /// Total number of values in the blob.
    pub values: usize,
}

/// Named tensors in a fixed order.
pub type NamedTensors = Vec<(String, Tensor)>;

pub fn manifest_path(blob: &Path) -> PathBuf {
    let mut s = blob.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn encode_weights(tensors: &[(String, Tensor)]) -> (WeightManifest, Vec<u8>) {
    let mut entries = Vec::with_capacity(tensors.len());
    let mut bytes = Vec::new();
    let mut offset = 0;
    for (name, t) in tensors {
        entries.push(TensorEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            offset,
        });
        offset += t.len();
        for v in t.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    (
        WeightManifest {
            format: FORMAT.into(),
            tensors: entries,
            values: offset,
        },
        bytes,
    )
}

pub fn decode_weights(manifest: &WeightManifest, bytes: &[u8]) -> Result<NamedTensors> {
    if manifest.format != FORMAT {
        return Err(Error::format(format!(
            "unknown weight format {:?}",
            manifest.format
        )));
    }
    if bytes.len() != manifest.values * 8 {
        return Err(Error::format(format!(
            "weight blob has {} bytes, manifest expects {}",
            bytes.len(),
            manifest.values * 8
        )));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let mut out = Vec::with_capacity(manifest.tensors.len());
    for e in &manifest.tensors {
        let n: usize = e.shape.iter().product();
        let end = e.offset.checked_add(n).filter(|&end| end <= values.len());
        let Some(end) = end else {
            return Err(Error::format(format!(
                "tensor {} overruns the blob",
                e.name
            )));
        };
        let t = Tensor::new(&e.shape, values[e.offset..end].to_vec())
            .map_err(|err| Error::format(format!("tensor {}: {err}", e.name)))?;
        out.push((e.name.clone(), t));
    }
    Ok(out)
}

pub fn save_weights(blob: &Path, tensors: &[(String, Tensor)]) -> Result<()> {
    let (manifest, bytes) = encode_weights(tensors);
    fs::write(blob, bytes)?;
    fs::write(
        manifest_path(blob),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(())
}

pub fn load_weights(blob: &Path) -> Result<NamedTensors> {
    let text = fs::read_to_string(manifest_path(blob))?;
    let manifest: WeightManifest =
        serde_json::from_str(&text).map_err(|e| Error::format(format!("weight manifest: {e}")))?;
    decode_weights(&manifest, &fs::read(blob)?)
}

/// Pulls the tensor called `name` with the expected shape out of a loaded set.
pub fn take_tensor(set: &mut NamedTensors, name: &str, shape: &[usize]) -> Result<Tensor> {
    let pos = set
        .iter()
        .position(|(n, _)| n == name)
        .ok_or_else(|| Error::format(format!("weights are missing tensor {name}")))?;
    let (_, t) = set.remove(pos);
    if t.shape() != shape {
        return Err(Error::format(format!(
            "tensor {name} has shape {:?}, expected {shape:?}",
            t.shape()
        )));
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn roundtrip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let set = vec![
            ("a".to_string(), Tensor::uniform(&[3, 4], 1.0, &mut rng)),
            (
                "b".to_string(),
                Tensor::new(&[2], vec![f64::MIN_POSITIVE, -0.0]).unwrap(),
            ),
            ("empty".to_string(), Tensor::zeros(&[0, 5])),
        ];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.bin");
        save_weights(&p, &set).unwrap();
        let back = load_weights(&p).unwrap();
        assert_eq!(back.len(), 3);
        for ((n1, t1), (n2, t2)) in set.iter().zip(&back) {
            assert_eq!(n1, n2);
            assert_eq!(t1.shape(), t2.shape());
            let b1: Vec<u64> = t1.data().iter().map(|v| v.to_bits()).collect();
            let b2: Vec<u64> = t2.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(b1, b2);
        }
    }

    #[test]
    fn truncated_blob_is_a_format_error() {
        let set = vec![("a".to_string(), Tensor::zeros(&[4]))];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.bin");
        save_weights(&p, &set).unwrap();
        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..bytes.len() - 8]).unwrap();
        assert!(matches!(load_weights(&p), Err(Error::Format(_))));
    }

    #[test]
    fn take_tensor_checks_shape() {
        let mut set = vec![("w".to_string(), Tensor::zeros(&[2, 2]))];
        assert!(matches!(
            take_tensor(&mut set.clone(), "w", &[4]),
            Err(Error::Format(_))
        ));
        assert!(take_tensor(&mut set, "w", &[2, 2]).is_ok());
        assert!(matches!(
            take_tensor(&mut set, "w", &[2, 2]),
            Err(Error::Format(_))
        ));
    }
}
