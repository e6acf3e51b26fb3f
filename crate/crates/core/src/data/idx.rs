//! IDX files, the distribution format of MNIST and Fashion-MNIST.
//!
//! Layout: a big-endian `u32` magic (`0x00000803` for rank-3 `u8` images,
//! `0x00000801` for rank-1 `u8` labels), one big-endian `u32` per dimension,
//! then the raw bytes.

use std::fs;
use std::path::Path;

use crate::data::dataset::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]])
}

/// Parses an IDX buffer, returning its dimensions and payload.
fn parse<'a>(path: &Path, bytes: &'a [u8], magic: u32, rank: usize) -> Result<(Vec<usize>, &'a [u8])> {
    let header = 4 + 4 * rank;
    if bytes.len() < 4 {
        return Err(Error::IdxTruncated {
            path: path.to_path_buf(),
            actual: bytes.len(),
            expected: header,
        });
    }
    let found = read_u32(bytes, 0);
    if found != magic {
        return Err(Error::IdxMagic {
            path: path.to_path_buf(),
            found,
            expected: magic,
        });
    }
    if bytes.len() < header {
        return Err(Error::IdxTruncated {
            path: path.to_path_buf(),
            actual: bytes.len(),
            expected: header,
        });
    }
    let dims: Vec<usize> = (0..rank).map(|i| read_u32(bytes, 4 + 4 * i) as usize).collect();
    let expected = header + dims.iter().product::<usize>();
    if bytes.len() < expected {
        return Err(Error::IdxTruncated {
            path: path.to_path_buf(),
            actual: bytes.len(),
            expected,
        });
    }
    Ok((dims, &bytes[header..expected]))
}

/// Loads an image/label IDX pair. Pixels are scaled by 1/255; the class
/// count is `max(label) + 1`, at least 2.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    let ibytes = fs::read(ip).map_err(|e| Error::io(ip, e))?;
    let lbytes = fs::read(lp).map_err(|e| Error::io(lp, e))?;
    let (idims, pixels) = parse(ip, &ibytes, IMAGES_MAGIC, 3)?;
    let (ldims, labels) = parse(lp, &lbytes, LABELS_MAGIC, 1)?;
    if idims[0] != ldims[0] {
        return Err(Error::IdxCountMismatch {
            images: idims[0],
            labels: ldims[0],
        });
    }
    let images = Tensor::new(
        vec![idims[0], idims[1], idims[2], 1],
        pixels.iter().map(|&p| f64::from(p) / 255.0).collect(),
    )?;
    let labels: Vec<usize> = labels.iter().map(|&l| usize::from(l)).collect();
    let classes = labels.iter().max().map_or(2, |m| (m + 1).max(2));
    let name = ip
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let split = if name.contains("t10k") || name.contains("test") {
        "test"
    } else {
        "train"
    };
    Dataset::new(images, labels, classes, name, split)
}

/// Serializes `u8` images `[N, rows, cols]` in IDX form.
pub fn encode_images(rows: usize, cols: usize, pixels: &[u8]) -> Vec<u8> {
    let n = pixels.len() / (rows * cols).max(1);
    let mut out = Vec::with_capacity(16 + pixels.len());
    out.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    for d in [n, rows, cols] {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

pub fn encode_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_pair(dir: &Path, pixels: &[u8], labels: &[u8]) -> (std::path::PathBuf, std::path::PathBuf) {
        let ip = dir.join("imgs-idx3-ubyte");
        let lp = dir.join("labels-idx1-ubyte");
        fs::write(&ip, encode_images(2, 3, pixels)).unwrap();
        fs::write(&lp, encode_labels(labels)).unwrap();
        (ip, lp)
    }

    #[test]
    fn two_image_fixture_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let pixels: Vec<u8> = vec![0, 255, 51, 102, 1, 2, 10, 20, 30, 40, 50, 60];
        let (ip, lp) = write_pair(dir.path(), &pixels, &[7, 3]);
        let bytes = fs::read(&ip).unwrap();
        assert_eq!(&bytes[..4], &[0, 0, 8, 3]);
        assert_eq!(bytes.len(), 16 + 12);
        let ds = load_idx(&ip, &lp).unwrap();
        assert_eq!(ds.images.shape(), &[2, 2, 3, 1]);
        assert_eq!(ds.labels, vec![7, 3]);
        assert_eq!(ds.num_classes, 8);
        for (v, &p) in ds.images.data().iter().zip(&pixels) {
            assert_eq!(*v, f64::from(p) / 255.0);
        }
    }

    #[test]
    fn distinct_errors() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = write_pair(dir.path(), &[0; 12], &[1, 2, 3]);
        assert!(matches!(
            load_idx(&ip, &lp),
            Err(Error::IdxCountMismatch { images: 2, labels: 3 })
        ));

        // Swapped files: magic mismatch.
        assert!(matches!(load_idx(&lp, &ip), Err(Error::IdxMagic { .. })));

        let truncated = &encode_images(2, 3, &[0; 12])[..20];
        fs::write(&ip, truncated).unwrap();
        let (_, lp) = write_pair(dir.path(), &[0; 12], &[1, 2]);
        let ip2 = dir.path().join("short");
        fs::write(&ip2, truncated).unwrap();
        assert!(matches!(load_idx(&ip2, &lp), Err(Error::IdxTruncated { .. })));

        let missing = load_idx(dir.path().join("nope"), &lp).unwrap_err();
        assert!(missing.to_string().contains("nope"));
    }
}
