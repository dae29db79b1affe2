use std::fs;
use std::path::{Path, PathBuf};

use super::mss::FeatureBank;
use crate::error::{Error, Result};

/// Linear rescale so the minimum maps to 0 and the maximum to 255; a
/// constant map becomes uniform mid-gray.
pub fn to_gray(map: &[f64]) -> Vec<u8> {
    let lo = map.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = map.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![128; map.len()];
    }
    map.iter()
        .map(|v| ((v - lo) / (hi - lo) * 255.0).round() as u8)
        .collect()
}

/// Binary (P5) PGM with maxval 255.
pub fn write_pgm(path: impl AsRef<Path>, w: usize, h: usize, pixels: &[u8]) -> Result<()> {
    let path = path.as_ref();
    if pixels.len() != w * h {
        return Err(Error::dim("write_pgm", &[h, w], &[pixels.len()]));
    }
    let mut bytes = format!("P5\n{w} {h}\n255\n").into_bytes();
    bytes.extend_from_slice(pixels);
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes every map of `bank` as `layer{layer}_ch{c}.pgm` under `dir`.
pub fn export_feature_maps(bank: &FeatureBank, layer: usize, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    (0..bank.len())
        .map(|c| {
            let path = dir.join(format!("layer{layer}_ch{c}.pgm"));
            write_pgm(&path, bank.w, bank.h, &to_gray(bank.map(c)))?;
            Ok(path)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gray_scaling() {
        assert_eq!(to_gray(&[-1.0, 0.0, 1.0]), vec![0, 128, 255]);
        assert_eq!(to_gray(&[3.0; 3]), vec![128; 3]);
    }

    #[test]
    fn pgm_files() {
        let dir = tempfile::tempdir().unwrap();
        let bank = FeatureBank::new(2, 2, 3, (0..12).map(f64::from).collect()).unwrap();
        let paths = export_feature_maps(&bank, 1, dir.path()).unwrap();
        assert_eq!(paths[1].file_name().unwrap(), "layer1_ch1.pgm");
        let bytes = fs::read(&paths[0]).unwrap();
        assert!(bytes.starts_with(b"P5\n3 2\n255\n"));
        assert_eq!(&bytes[bytes.len() - 6..], &[0, 51, 102, 153, 204, 255]);
    }
}
