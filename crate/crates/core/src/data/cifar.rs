//! CIFAR-10 binary-format ingestion: 3073-byte records, one label byte
//! followed by 3072 RGB pixels, channel-planar.

use std::path::Path;

use ndarray::Array2;

use crate::batch::SampleBatch;
use crate::error::{Error, Result};

const RECORD_LEN: usize = 3073;
const PIXELS: usize = 3072;

/// Load one or more CIFAR-10 batch files, scaled to `[0, 1]`, shape `3x32x32`.
pub fn load_cifar10_bin<P: AsRef<Path>>(paths: &[P]) -> Result<SampleBatch> {
    if paths.is_empty() {
        return Err(Error::Data("no CIFAR files given".into()));
    }
    let mut labels = Vec::new();
    let mut rows: Vec<f32> = Vec::new();
    for p in paths {
        let bytes = std::fs::read(p.as_ref())?;
        if bytes.is_empty() || bytes.len() % RECORD_LEN != 0 {
            return Err(Error::Data(format!(
                "{}: length {} is not a positive multiple of {RECORD_LEN}",
                p.as_ref().display(),
                bytes.len()
            )));
        }
        for rec in bytes.chunks_exact(RECORD_LEN) {
            labels.push(rec[0] as u16);
            rows.extend(rec[1..].iter().map(|&b| b as f32 / 255.0));
        }
    }
    let count = labels.len();
    let data = Array2::from_shape_vec((count, PIXELS), rows)
        .map_err(|e| Error::Data(format!("cifar reshape: {e}")))?;
    SampleBatch::new(data, vec![3, 32, 32], Some(labels), None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn loads_records_and_rejects_bad_lengths() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("batch.bin");
        // two records
        let mut bytes = Vec::new();
        for label in [4u8, 9] {
            bytes.push(label);
            bytes.extend((0..PIXELS).map(|i| (i % 256) as u8));
        }
        std::fs::write(&path, &bytes).unwrap();
        let batch = load_cifar10_bin(&[&path]).unwrap();
        assert_eq!(batch.count(), 2);
        assert_eq!(batch.shape(), &[3, 32, 32]);
        assert_eq!(batch.labels(), Some(&[4, 9][..]));
        assert!(batch.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert_eq!(batch.data()[[0, 255]], 1.0);

        let bad = dir.path().join("bad.bin");
        std::fs::write(&bad, &bytes[..100]).unwrap();
        assert!(load_cifar10_bin(&[&bad]).is_err());
    }

    #[test]
    fn record_count_follows_file_size() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("ten.bin");
        let n = 10;
        let mut bytes = vec![0u8; n * RECORD_LEN];
        for i in 0..n {
            bytes[i * RECORD_LEN] = (i % 10) as u8;
        }
        std::fs::write(&path, &bytes).unwrap();
        let batch = load_cifar10_bin(&[&path]).unwrap();
        assert_eq!(batch.count(), bytes.len() / RECORD_LEN);
    }
}
