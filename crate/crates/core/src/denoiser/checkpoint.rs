//! Versioned binary checkpoint for trainable denoisers.
//!
//! Layout: magic `PFDC`, version u16, meta length u32 + meta (JSON-free
//! key=value lines), then length-prefixed tensor records. Each record is
//! name length u16 + name bytes, rank u8, dims as u32, then little-endian
//! 32-bit floats.

use ndarray::Array2;

use crate::denoiser::{MlpDenoiser, TimeEmbedKind, TrainingConfig};
use crate::error::{Error, Result};
use crate::nn::Linear;

const MAGIC: &[u8; 4] = b"PFDC";
const VERSION: u16 = 1;

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn tensor(&mut self, name: &str, dims: &[usize], values: impl Iterator<Item = f64>) {
        self.buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        self.buf.extend_from_slice(name.as_bytes());
        self.buf.push(dims.len() as u8);
        for &d in dims {
            self.buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in values {
            self.buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(Error::Protocol("checkpoint truncated".into()));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn tensor(&mut self, expect_name: &str) -> Result<(Vec<usize>, Vec<f64>)> {
        let name_len = self.u16()? as usize;
        let name = std::str::from_utf8(self.take(name_len)?)
            .map_err(|_| Error::Protocol("bad tensor name".into()))?;
        if name != expect_name {
            return Err(Error::Protocol(format!("expected tensor {expect_name}, found {name}")));
        }
        let rank = self.take(1)?[0] as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(self.u32()? as usize);
        }
        let count: usize = dims.iter().product();
        let mut values = Vec::with_capacity(count);
        for _ in 0..count {
            let raw = self.take(4)?;
            values.push(f32::from_le_bytes(raw.try_into().unwrap()) as f64);
        }
        Ok((dims, values))
    }
}

/// Serialize an [`MlpDenoiser`] to the checkpoint blob.
pub fn write_checkpoint(d: &MlpDenoiser) -> Vec<u8> {
    let mut meta = String::new();
    meta.push_str("kind=mlp\n");
    meta.push_str(&format!("input_dim={}\n", d.input_dim));
    meta.push_str(&format!(
        "shape={}\n",
        d.sample_shape.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("x")
    ));
    meta.push_str(&format!("t_max={}\n", d.t_max));
    meta.push_str(&format!("time_embed_dim={}\n", d.time_embed_dim));
    meta.push_str(&format!(
        "time_embed={}\n",
        match d.time_embed {
            TimeEmbedKind::Sinusoidal => "sinusoidal",
            TimeEmbedKind::Learned => "learned",
        }
    ));
    meta.push_str(&format!(
        "hidden={}\n",
        d.hidden.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
    ));
    if let Some(n) = d.num_labels {
        meta.push_str(&format!("num_labels={n}\n"));
    }

    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    buf.extend_from_slice(meta.as_bytes());

    let mut w = Writer { buf };
    for (i, layer) in d.layers.iter().enumerate() {
        let (o, inp) = layer.w.dim();
        w.tensor(&format!("layer{i}.w"), &[o, inp], layer.w.iter().copied());
        w.tensor(&format!("layer{i}.b"), &[o], layer.b.iter().copied());
    }
    if let Some(t) = &d.label_table {
        let (r, c) = t.dim();
        w.tensor("label_table", &[r, c], t.iter().copied());
    }
    if let Some(t) = &d.time_table {
        let (r, c) = t.dim();
        w.tensor("time_table", &[r, c], t.iter().copied());
    }
    w.buf
}

/// Reconstruct an [`MlpDenoiser`] from checkpoint bytes.
pub fn read_checkpoint(bytes: &[u8]) -> Result<MlpDenoiser> {
    let mut r = Reader { data: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Protocol("not a denoiser checkpoint".into()));
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(Error::Protocol(format!("unsupported checkpoint version {version}")));
    }
    let meta_len = r.u32()? as usize;
    let meta = std::str::from_utf8(r.take(meta_len)?)
        .map_err(|_| Error::Protocol("bad checkpoint meta".into()))?;
    let mut fields = std::collections::HashMap::new();
    for line in meta.lines() {
        if let Some((k, v)) = line.split_once('=') {
            fields.insert(k.to_string(), v.to_string());
        }
    }
    let get = |k: &str| -> Result<&String> {
        fields.get(k).ok_or_else(|| Error::Protocol(format!("checkpoint meta missing {k}")))
    };
    if get("kind")? != "mlp" {
        return Err(Error::Protocol("unsupported denoiser kind".into()));
    }
    let parse_usize = |s: &str| -> Result<usize> {
        s.parse().map_err(|_| Error::Protocol(format!("bad meta value {s}")))
    };
    let input_dim = parse_usize(get("input_dim")?)?;
    let shape: Vec<usize> = get("shape")?
        .split('x')
        .map(parse_usize)
        .collect::<Result<_>>()?;
    let t_max = parse_usize(get("t_max")?)?;
    let time_embed_dim = parse_usize(get("time_embed_dim")?)?;
    let time_embed = match get("time_embed")?.as_str() {
        "sinusoidal" => TimeEmbedKind::Sinusoidal,
        "learned" => TimeEmbedKind::Learned,
        other => return Err(Error::Protocol(format!("unknown time embed {other}"))),
    };
    let hidden: Vec<usize> = get("hidden")?
        .split(',')
        .map(parse_usize)
        .collect::<Result<_>>()?;
    let num_labels: Option<u16> = match fields.get("num_labels") {
        Some(v) => Some(v.parse().map_err(|_| Error::Protocol("bad num_labels".into()))?),
        None => None,
    };

    let config = TrainingConfig {
        hidden: hidden.clone(),
        time_embed_dim,
        time_embed,
        label_conditioning: num_labels.is_some(),
        ..TrainingConfig::default()
    };
    let mut d = MlpDenoiser::with_shape(&config, shape, t_max, num_labels)?;
    if d.input_dim != input_dim {
        return Err(Error::Protocol("checkpoint shape/input_dim mismatch".into()));
    }

    for i in 0..d.layers.len() {
        let (dims_w, vals_w) = r.tensor(&format!("layer{i}.w"))?;
        let (dims_b, vals_b) = r.tensor(&format!("layer{i}.b"))?;
        if dims_w.len() != 2 || dims_b.len() != 1 {
            return Err(Error::Protocol("bad tensor rank".into()));
        }
        let w = Array2::from_shape_vec((dims_w[0], dims_w[1]), vals_w)
            .map_err(|e| Error::Protocol(format!("layer{i}.w: {e}")))?;
        if w.dim() != d.layers[i].w.dim() {
            return Err(Error::Protocol(format!("layer{i} dimension mismatch")));
        }
        d.layers[i] = Linear { w, b: ndarray::Array1::from_vec(vals_b) };
    }
    if d.label_table.is_some() {
        let (dims, vals) = r.tensor("label_table")?;
        d.label_table = Some(
            Array2::from_shape_vec((dims[0], dims[1]), vals)
                .map_err(|e| Error::Protocol(format!("label_table: {e}")))?,
        );
    }
    if d.time_table.is_some() {
        let (dims, vals) = r.tensor("time_table")?;
        d.time_table = Some(
            Array2::from_shape_vec((dims[0], dims[1]), vals)
                .map_err(|e| Error::Protocol(format!("time_table: {e}")))?,
        );
    }
    if r.pos != bytes.len() {
        return Err(Error::Protocol("trailing bytes in checkpoint".into()));
    }
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::{build_trainable_denoiser, Denoiser};
    use crate::rng::{standard_normal, stream};

    #[test]
    fn round_trip_preserves_predictions_at_f32() {
        let cfg = TrainingConfig {
            hidden: vec![9, 6],
            time_embed_dim: 6,
            time_embed: TimeEmbedKind::Learned,
            label_conditioning: true,
            seed: 4,
            ..TrainingConfig::default()
        };
        let d = build_trainable_denoiser(&cfg, &[2, 3], 25, Some(5)).unwrap();
        let blob = write_checkpoint(&d);
        let d2 = read_checkpoint(&blob).unwrap();
        assert_eq!(d2.sample_shape(), vec![2, 3]);

        let mut r = stream(10, "ckpt");
        let x = standard_normal(&mut r, 3, 6);
        let a = d.predict(&x, &[1, 12, 25], Some(&[0, 2, 4]));
        let b = d2.predict(&x, &[1, 12, 25], Some(&[0, 2, 4]));
        for (u, v) in a.iter().zip(b.iter()) {
            assert!((u - v).abs() < 1e-5, "{u} vs {v}");
        }
        // serialization is deterministic
        assert_eq!(blob, write_checkpoint(&read_checkpoint(&blob).unwrap()));
    }

    #[test]
    fn rejects_corrupted_blobs() {
        let cfg = TrainingConfig { hidden: vec![4], time_embed_dim: 2, ..TrainingConfig::default() };
        let d = build_trainable_denoiser(&cfg, &[2], 10, None).unwrap();
        let blob = write_checkpoint(&d);
        assert!(read_checkpoint(&blob[..blob.len() - 3]).is_err());
        let mut bad = blob.clone();
        bad[0] = b'X';
        assert!(read_checkpoint(&bad).is_err());
    }
}
