use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use ndarray::Array2;

use super::{LabeledDataset, Split};
use crate::{Error, Result};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

struct IdxReader {
    path: std::path::PathBuf,
    inner: BufReader<File>,
    offset: u64,
    file_len: u64,
}

impl IdxReader {
    fn open(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let file_len = file.metadata().map_err(|e| Error::io(path, e))?.len();
        Ok(Self {
            path: path.to_path_buf(),
            inner: BufReader::new(file),
            offset: 0,
            file_len,
        })
    }

    fn fail(&self, offset: u64, reason: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.clone(),
            offset,
            reason: reason.into(),
        }
    }

    fn read_exact(&mut self, buf: &mut [u8]) -> Result<()> {
        self.inner
            .read_exact(buf)
            .map_err(|_| self.fail(self.offset, format!("truncated file: expected {} more bytes", buf.len())))?;
        self.offset += buf.len() as u64;
        Ok(())
    }

    fn read_u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.read_exact(&mut b)?;
        Ok(u32::from_be_bytes(b))
    }

    fn expect_magic(&mut self, magic: u32) -> Result<()> {
        let found = self.read_u32()?;
        if found != magic {
            return Err(self.fail(0, format!("bad magic {found:#010x}, expected {magic:#010x}")));
        }
        Ok(())
    }

    /// Fails before any payload allocation when the file is too short.
    fn require_payload(&self, bytes: u64) -> Result<()> {
        let need = self.offset + bytes;
        if self.file_len < need {
            return Err(self.fail(
                self.file_len,
                format!("truncated file: header promises {need} bytes, file has {}", self.file_len),
            ));
        }
        Ok(())
    }
}

/// Read an IDX image/label file pair (MNIST layout). Pixels are scaled to
/// `[0, 1]`; images are flattened row-major. `limit` keeps the first samples
/// in file order.
pub fn load_idx(images_path: &Path, labels_path: &Path, limit: Option<usize>) -> Result<LabeledDataset> {
    let mut images = IdxReader::open(images_path)?;
    images.expect_magic(IMAGES_MAGIC)?;
    let n_images = images.read_u32()? as usize;
    let rows = images.read_u32()? as usize;
    let cols = images.read_u32()? as usize;

    let mut labels = IdxReader::open(labels_path)?;
    labels.expect_magic(LABELS_MAGIC)?;
    let n_labels = labels.read_u32()? as usize;
    if n_images != n_labels {
        return Err(labels.fail(4, format!("{n_labels} labels for {n_images} images")));
    }

    let dim = rows * cols;
    let n = limit.map_or(n_images, |l| l.min(n_images));
    images.require_payload((n_images * dim) as u64)?;
    labels.require_payload(n_labels as u64)?;

    let mut raw_labels = vec![0u8; n];
    labels.read_exact(&mut raw_labels)?;
    let mut features = Array2::<f64>::zeros((n, dim));
    let mut row = vec![0u8; dim];
    for mut out in features.rows_mut() {
        images.read_exact(&mut row)?;
        for (o, &p) in out.iter_mut().zip(&row) {
            *o = f64::from(p) / 255.0;
        }
    }
    let labels: Vec<usize> = raw_labels.iter().map(|&l| l as usize).collect();
    let num_classes = labels.iter().max().map_or(1, |&m| m + 1).max(10);
    LabeledDataset::new(features, labels, num_classes, Split::Train)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_pair(dir: &Path, n: u32, truncate_images: usize, image_magic: u32) -> (std::path::PathBuf, std::path::PathBuf) {
        let img = dir.join("images.idx");
        let lab = dir.join("labels.idx");
        let mut f = File::create(&img).unwrap();
        f.write_all(&image_magic.to_be_bytes()).unwrap();
        for v in [n, 2, 3] {
            f.write_all(&v.to_be_bytes()).unwrap();
        }
        let pixels: Vec<u8> = (0..n * 6).map(|i| (i * 40 % 256) as u8).collect();
        f.write_all(&pixels[..pixels.len() - truncate_images]).unwrap();
        let mut f = File::create(&lab).unwrap();
        f.write_all(&LABELS_MAGIC.to_be_bytes()).unwrap();
        f.write_all(&n.to_be_bytes()).unwrap();
        f.write_all(&(0..n).map(|i| (i % 10) as u8).collect::<Vec<_>>()).unwrap();
        (img, lab)
    }

    #[test]
    fn reads_scaled_pixels_and_prefix() {
        let dir = tempfile::tempdir().unwrap();
        let (img, lab) = write_pair(dir.path(), 4, 0, IMAGES_MAGIC);
        let ds = load_idx(&img, &lab, None).unwrap();
        assert_eq!((ds.len(), ds.dim()), (4, 6));
        assert_eq!(ds.features()[[0, 1]], 40.0 / 255.0);
        assert_eq!(ds.labels(), &[0, 1, 2, 3]);
        let head = load_idx(&img, &lab, Some(2)).unwrap();
        assert_eq!(head, ds.head(2));
        assert!(ds.features().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn corrupted_magic_fails_closed() {
        let dir = tempfile::tempdir().unwrap();
        let (img, lab) = write_pair(dir.path(), 4, 0, 0x0000_0802);
        match load_idx(&img, &lab, None) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn truncated_payload_reports_offset() {
        let dir = tempfile::tempdir().unwrap();
        let (img, lab) = write_pair(dir.path(), 4, 5, IMAGES_MAGIC);
        match load_idx(&img, &lab, Some(1)) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 16 + 24 - 5),
            other => panic!("expected parse error, got {other:?}"),
        }
    }
}
