use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{EntityLabel, LabeledVolume};
use crate::error::{Error, Result};
use crate::imaging::ProbePose;

/// JSON header of a volume file. Labels are stored in a sibling raw file
/// of uint8, row-major, x fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VolumeHeader {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub label_names: Vec<String>,
    pub standard_pose: ProbePose,
}

/// `dir/name.json` → `dir/name.raw`.
pub fn raw_path_for(header: &Path) -> PathBuf {
    header.with_extension("raw")
}

pub fn save_volume(volume: &LabeledVolume, path: &Path) -> Result<()> {
    let header = VolumeHeader {
        dims: volume.dims(),
        spacing: volume.spacing(),
        label_names: EntityLabel::label_names(),
        standard_pose: volume.standard_pose().clone(),
    };
    fs::write(path, serde_json::to_vec_pretty(&header)?)?;
    fs::write(raw_path_for(path), volume.to_bytes())?;
    Ok(())
}

pub fn load_volume(path: &Path) -> Result<LabeledVolume> {
    let header: VolumeHeader = serde_json::from_slice(&fs::read(path)?)
        .map_err(|e| Error::format(format!("{}: {e}", path.display())))?;
    if header.label_names != EntityLabel::label_names() {
        return Err(Error::format(format!(
            "label names {:?} do not match the entity set",
            header.label_names
        )));
    }
    let raw = fs::read(raw_path_for(path))?;
    let expected = header.dims.iter().product::<usize>();
    if raw.len() != expected {
        return Err(Error::format(format!(
            "raw file has {} bytes but dims {:?} need {expected}",
            raw.len(),
            header.dims
        )));
    }
    let labels = raw
        .iter()
        .map(|&b| {
            EntityLabel::from_u8(b).ok_or_else(|| Error::format(format!("unknown label byte {b}")))
        })
        .collect::<Result<Vec<_>>>()?;
    LabeledVolume::new_unchecked_chambers(header.dims, header.spacing, labels, header.standard_pose)
        .map_err(|e| Error::format(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_header(dir: &Path, dims: [usize; 3]) -> PathBuf {
        let p = dir.join("v.json");
        let h = VolumeHeader {
            dims,
            spacing: [1.0; 3],
            label_names: EntityLabel::label_names(),
            standard_pose: ProbePose::identity(),
        };
        fs::write(&p, serde_json::to_vec(&h).unwrap()).unwrap();
        p
    }

    #[test]
    fn zero_raw_is_all_background() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_header(dir.path(), [2, 2, 2]);
        fs::write(raw_path_for(&p), [0u8; 8]).unwrap();
        let v = load_volume(&p).unwrap();
        assert_eq!(v.dims(), [2, 2, 2]);
        assert!(v.labels().iter().all(|&l| l == EntityLabel::Background));
    }

    #[test]
    fn size_mismatch_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_header(dir.path(), [2, 2, 2]);
        fs::write(raw_path_for(&p), [0u8; 7]).unwrap();
        assert!(matches!(load_volume(&p), Err(Error::Format(_))));
    }

    #[test]
    fn unknown_label_byte_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_header(dir.path(), [2, 2, 2]);
        fs::write(raw_path_for(&p), [0, 0, 0, 9, 0, 0, 0, 0]).unwrap();
        assert!(matches!(load_volume(&p), Err(Error::Format(_))));
    }

    #[test]
    fn unknown_header_key_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.json");
        fs::write(
            &p,
            r#"{"dims":[1,1,1],"spacing":[1,1,1],"label_names":[],"standard_pose":{"position":[0,0,0],"orientation":[1,0,0,0]},"extra":1}"#,
        )
        .unwrap();
        assert!(matches!(load_volume(&p), Err(Error::Format(_))));
    }
}
