//! IDX binary files (big-endian header, unsigned-byte payload), optionally
//! gzip-compressed.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::{Compression, GzBuilder};

use super::{Dataset, Split};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;

/// Raw contents of an unsigned-byte IDX file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

impl IdxArray {
    pub fn magic(&self) -> u32 {
        0x0800 | self.dims.len() as u32
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

/// Reads an IDX file and checks its magic number against `expected`.
pub fn read_idx(path: impl AsRef<Path>, expected_magic: u32) -> Result<IdxArray> {
    let path = path.as_ref();
    let bytes = read_bytes(path)?;
    let header = |i: usize| -> Result<u32> {
        bytes
            .get(4 * i..4 * i + 4)
            .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
            .ok_or_else(|| Error::Truncated {
                path: path.to_path_buf(),
                expected: 4 * i + 4,
                found: bytes.len(),
            })
    };
    let magic = header(0)?;
    if magic != expected_magic {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: expected_magic,
            actual: magic,
        });
    }
    let rank = (magic & 0xff) as usize;
    let dims = (1..=rank)
        .map(|i| header(i).map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let offset = 4 * (rank + 1);
    let expected = offset + dims.iter().product::<usize>();
    if bytes.len() < expected {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected,
            found: bytes.len(),
        });
    }
    Ok(IdxArray {
        dims,
        data: bytes[offset..expected].to_vec(),
    })
}

/// Writes `array`; gzip-compressed (with a zero timestamp) when `gzip`.
pub fn write_idx(path: impl AsRef<Path>, array: &IdxArray, gzip: bool) -> Result<()> {
    let path = path.as_ref();
    if array.dims.iter().product::<usize>() != array.data.len() || array.dims.len() > 255 {
        return Err(Error::dim("write_idx", &array.dims, &[array.data.len()]));
    }
    let mut bytes = Vec::with_capacity(4 * (array.dims.len() + 1) + array.data.len());
    bytes.extend_from_slice(&array.magic().to_be_bytes());
    for &d in &array.dims {
        let d = u32::try_from(d).map_err(|_| Error::Config(format!("IDX dimension {d} exceeds u32")))?;
        bytes.extend_from_slice(&d.to_be_bytes());
    }
    bytes.extend_from_slice(&array.data);
    let io = |e| Error::io(path, e);
    if gzip {
        let file = fs::File::create(path).map_err(io)?;
        let mut enc: GzEncoder<fs::File> = GzBuilder::new().mtime(0).write(file, Compression::default());
        enc.write_all(&bytes).map_err(io)?;
        enc.finish().map_err(io)?;
        Ok(())
    } else {
        fs::write(path, bytes).map_err(io)
    }
}

/// Loads an image/label pair as a 10-class dataset; pixels are scaled to
/// `[0, 1]`.
pub fn parse_idx(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<Dataset> {
    let img = read_idx(images, IDX_IMAGES_MAGIC)?;
    if img.dims.len() != 3 {
        return Err(Error::dim("IDX images", &img.dims, &[0, 28, 28]));
    }
    let lab = read_idx(labels, IDX_LABELS_MAGIC)?;
    let (n, h, w) = (img.dims[0], img.dims[1], img.dims[2]);
    if n != lab.dims[0] {
        return Err(Error::CountMismatch {
            images: n,
            labels: lab.dims[0],
        });
    }
    let pixels = img.data.iter().map(|&b| f64::from(b) / 255.0).collect();
    let labels = lab.data.iter().map(|&b| usize::from(b)).collect();
    Dataset::new(Tensor::new(vec![n, 1, h, w], pixels)?, labels, 10)
}

fn find(dir: &Path, stem: &str) -> Result<PathBuf> {
    let plain = dir.join(stem);
    let gz = dir.join(format!("{stem}.gz"));
    if plain.exists() {
        Ok(plain)
    } else if gz.exists() {
        Ok(gz)
    } else {
        Err(Error::io(
            plain,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no such file (also tried .gz)"),
        ))
    }
}

/// Loads `(train, test)` from a directory holding the four standard MNIST
/// IDX files, compressed or not.
pub fn load_mnist_dir(dir: impl AsRef<Path>) -> Result<(Dataset, Dataset)> {
    let dir = dir.as_ref();
    let train = parse_idx(
        find(dir, "train-images-idx3-ubyte")?,
        find(dir, "train-labels-idx1-ubyte")?,
    )?;
    let test = parse_idx(
        find(dir, "t10k-images-idx3-ubyte")?,
        find(dir, "t10k-labels-idx1-ubyte")?,
    )?;
    Ok((train, test.with_split(Split::Test)))
}
