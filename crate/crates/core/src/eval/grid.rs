//! PNG emission: class-by-sample grids and per-sample trajectory strips.

use std::path::Path;

use image::GrayImage;

use crate::batch::SampleBatch;
use crate::error::{Error, Result};

fn image_dims(batch: &SampleBatch) -> Result<(usize, usize)> {
    match batch.shape() {
        [1, r, c] => Ok((*r, *c)),
        [r, c] => Ok((*r, *c)),
        other => Err(Error::Data(format!("cannot render shape {other:?} as grayscale"))),
    }
}

fn put_sample(img: &mut GrayImage, batch: &SampleBatch, index: usize, x0: usize, y0: usize, h: usize, w: usize) {
    for r in 0..h {
        for c in 0..w {
            let v = batch.data()[[index, r * w + c]].clamp(0.0, 1.0);
            img.put_pixel((x0 + c) as u32, (y0 + r) as u32, image::Luma([(v * 255.0).round() as u8]));
        }
    }
}

/// One row per class (ascending label order), `per_class` columns.
/// Unlabeled batches render as a single row of samples.
pub fn save_grid_png(path: &Path, batch: &SampleBatch, per_class: usize) -> Result<()> {
    let (h, w) = image_dims(batch)?;
    let pad = 2usize;
    let rows: Vec<(Option<u16>, Vec<usize>)> = match batch.labels() {
        Some(labels) => {
            let mut classes: Vec<u16> = labels.to_vec();
            classes.sort_unstable();
            classes.dedup();
            classes
                .into_iter()
                .map(|cls| {
                    let idx: Vec<usize> = labels
                        .iter()
                        .enumerate()
                        .filter(|(_, &l)| l == cls)
                        .map(|(i, _)| i)
                        .take(per_class)
                        .collect();
                    (Some(cls), idx)
                })
                .collect()
        }
        None => vec![(None, (0..batch.count().min(per_class)).collect())],
    };
    let ncols = rows.iter().map(|(_, v)| v.len()).max().unwrap_or(0);
    if ncols == 0 {
        return Err(Error::Data("nothing to render".into()));
    }
    let width = ncols * (w + pad) + pad;
    let height = rows.len() * (h + pad) + pad;
    let mut img = GrayImage::new(width as u32, height as u32);
    for (ri, (_, indices)) in rows.iter().enumerate() {
        for (ci, &si) in indices.iter().enumerate() {
            put_sample(&mut img, batch, si, pad + ci * (w + pad), pad + ri * (h + pad), h, w);
        }
    }
    img.save(path).map_err(|e| Error::Data(format!("png save: {e}")))?;
    Ok(())
}

/// Horizontal strip of the same sample across trajectory snapshots
/// (left: earliest snapshot, right: final).
pub fn save_trajectory_png(path: &Path, snapshots: &[SampleBatch], sample_index: usize) -> Result<()> {
    let first = snapshots.first().ok_or_else(|| Error::Data("empty trajectory".into()))?;
    let (h, w) = image_dims(first)?;
    let pad = 2usize;
    let width = snapshots.len() * (w + pad) + pad;
    let height = h + 2 * pad;
    let mut img = GrayImage::new(width as u32, height as u32);
    for (si, snap) in snapshots.iter().enumerate() {
        if sample_index >= snap.count() {
            return Err(Error::Data(format!("sample {sample_index} out of range")));
        }
        put_sample(&mut img, snap, sample_index, pad + si * (w + pad), pad, h, w);
    }
    img.save(path).map_err(|e| Error::Data(format!("png save: {e}")))?;
    Ok(())
}
