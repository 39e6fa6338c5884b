//! IDX reader for MNIST-format image and label files (raw or gzip).

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use flate2::read::GzDecoder;

use super::{FlError, LabeledDataset};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;
pub const MNIST_CLASSES: usize = 10;

fn read_all(path: &Path) -> Result<Vec<u8>, FlError> {
    let io = |e: std::io::Error| FlError::Io(format!("{}: {e}", path.display()));
    let mut raw = Vec::new();
    BufReader::new(File::open(path).map_err(io)?)
        .read_to_end(&mut raw)
        .map_err(io)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..]).read_to_end(&mut out).map_err(io)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], at: usize) -> Result<u32, FlError> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| FlError::Format("truncated IDX header".into()))
}

/// Parsed image file: `(count, rows * cols, pixels scaled to [0, 1])`.
pub fn parse_images(bytes: &[u8]) -> Result<(usize, usize, Vec<f64>), FlError> {
    let magic = be_u32(bytes, 0)?;
    if magic != IMAGE_MAGIC {
        return Err(FlError::Format(format!(
            "image magic {magic:#010x}, expected {IMAGE_MAGIC:#010x}"
        )));
    }
    let count = be_u32(bytes, 4)? as usize;
    let dim = be_u32(bytes, 8)? as usize * be_u32(bytes, 12)? as usize;
    let body = &bytes[16..];
    if body.len() < count * dim {
        return Err(FlError::Format(format!(
            "image body has {} bytes, header promises {}",
            body.len(),
            count * dim
        )));
    }
    let pixels = body[..count * dim].iter().map(|&p| p as f64 / 255.0).collect();
    Ok((count, dim, pixels))
}

pub fn parse_labels(bytes: &[u8]) -> Result<Vec<usize>, FlError> {
    let magic = be_u32(bytes, 0)?;
    if magic != LABEL_MAGIC {
        return Err(FlError::Format(format!(
            "label magic {magic:#010x}, expected {LABEL_MAGIC:#010x}"
        )));
    }
    let count = be_u32(bytes, 4)? as usize;
    let body = &bytes[8..];
    if body.len() < count {
        return Err(FlError::Format("label body shorter than header count".into()));
    }
    Ok(body[..count].iter().map(|&l| l as usize).collect())
}

/// Loads an image/label IDX pair, keeping at most `limit` samples.
pub fn load_idx_pair(images: &Path, labels: &Path, limit: Option<usize>) -> Result<LabeledDataset, FlError> {
    let (count, dim, mut pixels) = parse_images(&read_all(images)?)?;
    let mut labels = parse_labels(&read_all(labels)?)?;
    if labels.len() != count {
        return Err(FlError::Format(format!("{count} images but {} labels", labels.len())));
    }
    if let Some(limit) = limit.filter(|&l| l < count) {
        pixels.truncate(limit * dim);
        labels.truncate(limit);
    }
    LabeledDataset::new(dim, MNIST_CLASSES, pixels, labels)
}

/// Finds the image and label files inside `dir`.
///
/// Accepts the canonical MNIST names (`train-images-idx3-ubyte[.gz]`) as well
/// as any `*images-idx3-ubyte*` / `*labels-idx1-ubyte*` pair.
pub fn locate_idx_pair(dir: &Path) -> Result<(std::path::PathBuf, std::path::PathBuf), FlError> {
    let entries = std::fs::read_dir(dir).map_err(|e| FlError::Io(format!("{}: {e}", dir.display())))?;
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for entry in entries.flatten() {
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.contains("images-idx3-ubyte") {
            images.push(entry.path());
        } else if name.contains("labels-idx1-ubyte") {
            labels.push(entry.path());
        }
    }
    images.sort();
    labels.sort();
    // prefer the training file when a full MNIST directory is given
    let pick = |v: &[std::path::PathBuf]| {
        v.iter()
            .find(|p| p.to_string_lossy().contains("train"))
            .or_else(|| v.first())
            .cloned()
    };
    match (pick(&images), pick(&labels)) {
        (Some(i), Some(l)) => Ok((i, l)),
        _ => Err(FlError::Io(format!("no IDX image/label pair in {}", dir.display()))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image_file(count: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
        let mut out = Vec::new();
        for v in [IMAGE_MAGIC, count, rows, cols] {
            out.extend_from_slice(&v.to_be_bytes());
        }
        out.extend_from_slice(pixels);
        out
    }

    #[test]
    fn parses_scaled_pixels() {
        let bytes = image_file(2, 1, 2, &[0, 255, 51, 102]);
        let (count, dim, px) = parse_images(&bytes).unwrap();
        assert_eq!((count, dim), (2, 2));
        assert_eq!(px, vec![0.0, 1.0, 0.2, 0.4]);
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let mut bytes = image_file(1, 1, 1, &[0]);
        bytes[3] = 0x01;
        assert!(matches!(parse_images(&bytes), Err(FlError::Format(_))));
        let mut labels = Vec::new();
        labels.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
        labels.extend_from_slice(&1u32.to_be_bytes());
        labels.push(3);
        assert!(parse_labels(&labels).is_err());
    }

    #[test]
    fn truncated_body_is_rejected() {
        let bytes = image_file(3, 2, 2, &[0; 5]);
        assert!(parse_images(&bytes).is_err());
    }

    #[test]
    fn reads_gzip_and_raw_files() {
        use flate2::write::GzEncoder;
        use std::io::Write;
        let dir = tempfile::tempdir().unwrap();
        let img = image_file(2, 1, 1, &[0, 255]);
        let mut labels = Vec::new();
        labels.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
        labels.extend_from_slice(&2u32.to_be_bytes());
        labels.extend_from_slice(&[3, 7]);
        let img_path = dir.path().join("t-images-idx3-ubyte.gz");
        let mut enc = GzEncoder::new(File::create(&img_path).unwrap(), flate2::Compression::default());
        enc.write_all(&img).unwrap();
        enc.finish().unwrap();
        let lbl_path = dir.path().join("t-labels-idx1-ubyte");
        std::fs::write(&lbl_path, &labels).unwrap();

        let (i, l) = locate_idx_pair(dir.path()).unwrap();
        let data = load_idx_pair(&i, &l, None).unwrap();
        assert_eq!(data.labels(), &[3, 7]);
        assert_eq!(data.features(1), &[1.0]);
        assert_eq!(load_idx_pair(&i, &l, Some(1)).unwrap().len(), 1);
    }
}
