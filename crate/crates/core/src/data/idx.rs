//! IDX-format ingestion (the MNIST container format).

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::batch::SampleBatch;
use crate::error::{Error, Result};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

fn read_u32_be(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_be_bytes(buf))
}

/// Parse an IDX image/label file pair into a batch with pixels scaled to
/// `[0, 1]` and shape `1 x rows x cols`.
pub fn load_mnist_idx(images_path: &Path, labels_path: &Path) -> Result<SampleBatch> {
    let mut img = std::io::BufReader::new(std::fs::File::open(images_path)?);
    let magic = read_u32_be(&mut img)?;
    if magic != IMAGES_MAGIC {
        return Err(Error::Data(format!("bad image magic {magic:#010x}, expected {IMAGES_MAGIC:#010x}")));
    }
    let count = read_u32_be(&mut img)? as usize;
    let rows = read_u32_be(&mut img)? as usize;
    let cols = read_u32_be(&mut img)? as usize;
    if count == 0 || rows == 0 || cols == 0 {
        return Err(Error::Data("image file declares empty dimensions".into()));
    }
    let mut pixels = vec![0u8; count * rows * cols];
    img.read_exact(&mut pixels).map_err(|_| Error::Data("truncated image payload".into()))?;
    let mut trailing = [0u8; 1];
    if img.read(&mut trailing)? != 0 {
        return Err(Error::Data("trailing bytes after image payload".into()));
    }

    let mut lab = std::io::BufReader::new(std::fs::File::open(labels_path)?);
    let magic = read_u32_be(&mut lab)?;
    if magic != LABELS_MAGIC {
        return Err(Error::Data(format!("bad label magic {magic:#010x}, expected {LABELS_MAGIC:#010x}")));
    }
    let label_count = read_u32_be(&mut lab)? as usize;
    if label_count != count {
        return Err(Error::Data(format!("{label_count} labels for {count} images")));
    }
    let mut labels = vec![0u8; label_count];
    lab.read_exact(&mut labels).map_err(|_| Error::Data("truncated label payload".into()))?;

    let dim = rows * cols;
    let data = Array2::from_shape_fn((count, dim), |(i, j)| pixels[i * dim + j] as f32 / 255.0);
    SampleBatch::new(data, vec![1, rows, cols], Some(labels.iter().map(|&l| l as u16).collect()), None)
}

/// Write a batch back out as an IDX image/label file pair (u8 pixels,
/// values scaled from `[0, 1]`). Labels must fit in a byte.
pub fn write_mnist_idx(batch: &SampleBatch, images_path: &Path, labels_path: &Path) -> Result<()> {
    let labels = batch
        .labels()
        .ok_or_else(|| Error::Data("batch has no labels to write".into()))?;
    if labels.iter().any(|&l| l > 255) {
        return Err(Error::Data("labels exceed the IDX byte range".into()));
    }
    let (rows, cols) = match batch.shape() {
        [1, r, c] => (*r, *c),
        [r, c] => (*r, *c),
        other => return Err(Error::Data(format!("cannot write shape {other:?} as IDX images"))),
    };

    let mut img = std::io::BufWriter::new(std::fs::File::create(images_path)?);
    img.write_all(&IMAGES_MAGIC.to_be_bytes())?;
    img.write_all(&(batch.count() as u32).to_be_bytes())?;
    img.write_all(&(rows as u32).to_be_bytes())?;
    img.write_all(&(cols as u32).to_be_bytes())?;
    for &v in batch.data().iter() {
        img.write_all(&[(v.clamp(0.0, 1.0) * 255.0).round() as u8])?;
    }
    img.flush()?;

    let mut lab = std::io::BufWriter::new(std::fs::File::create(labels_path)?);
    lab.write_all(&LABELS_MAGIC.to_be_bytes())?;
    lab.write_all(&(labels.len() as u32).to_be_bytes())?;
    for &l in labels {
        lab.write_all(&[l as u8])?;
    }
    lab.flush()?;
    Ok(())
}
