use std::fs;
use std::path::Path;

use super::slice::MaskImage;
use crate::error::Result;
use crate::phantom::EntityLabel;

const GRAY: [u8; EntityLabel::COUNT] = [0, 220, 150, 180, 110, 250, 235, 70];

/// Fixed, injective label → gray map used for PGM output.
pub fn gray_level(label: EntityLabel) -> u8 {
    GRAY[label.index()]
}

/// Encodes the mask as a binary PGM (P5).
pub fn write_pgm(mask: &MaskImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", mask.width(), mask.height()).into_bytes();
    out.extend(mask.labels().iter().map(|&l| gray_level(l)));
    out
}

pub fn render_pgm(mask: &MaskImage, path: &Path) -> Result<()> {
    fs::write(path, write_pgm(mask))?;
    Ok(())
}
