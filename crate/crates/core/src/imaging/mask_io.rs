use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::slice::MaskImage;
use crate::error::{Error, Result};
use crate::phantom::{raw_path_for, EntityLabel};

/// JSON header of a mask file; labels live in a sibling `.raw` file
/// (uint8, row-major).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskHeader {
    pub width: usize,
    pub height: usize,
    pub depth_px: f64,
    pub half_angle: f64,
    pub label_names: Vec<String>,
}

pub fn save_mask(mask: &MaskImage, path: &Path) -> Result<()> {
    let header = MaskHeader {
        width: mask.width(),
        height: mask.height(),
        depth_px: mask.depth_px(),
        half_angle: mask.half_angle(),
        label_names: EntityLabel::label_names(),
    };
    fs::write(path, serde_json::to_vec_pretty(&header)?)?;
    let bytes: Vec<u8> = mask.labels().iter().map(|&l| l as u8).collect();
    fs::write(raw_path_for(path), bytes)?;
    Ok(())
}

pub fn load_mask(path: &Path) -> Result<MaskImage> {
    let header: MaskHeader = serde_json::from_slice(&fs::read(path)?)
        .map_err(|e| Error::format(format!("{}: {e}", path.display())))?;
    if header.label_names != EntityLabel::label_names() {
        return Err(Error::format(
            "mask label names do not match the entity set",
        ));
    }
    let raw = fs::read(raw_path_for(path))?;
    let n = header.width * header.height;
    if raw.len() != n {
        return Err(Error::format(format!(
            "mask raw has {} bytes, expected {n}",
            raw.len()
        )));
    }
    let labels = raw
        .iter()
        .map(|&b| {
            EntityLabel::from_u8(b).ok_or_else(|| Error::format(format!("unknown label byte {b}")))
        })
        .collect::<Result<Vec<_>>>()?;
    MaskImage::new(
        header.width,
        header.height,
        header.depth_px,
        header.half_angle,
        labels,
    )
    .map_err(|e| Error::format(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::ImageConfig;

    #[test]
    fn mask_round_trip() {
        let cfg = ImageConfig {
            width: 32,
            height: 32,
            half_angle_deg: 45.0,
            depth_mm: 30.0,
        };
        let mut labels = vec![EntityLabel::Background; 32 * 32];
        labels[10 * 32 + 16] = EntityLabel::RA;
        let m = MaskImage::new(32, 32, cfg.depth_px(), cfg.half_angle(), labels).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("view.json");
        save_mask(&m, &p).unwrap();
        assert_eq!(load_mask(&p).unwrap(), m);
    }
}
