//! The one payload allowed to cross the client boundary, with a bit-exact
//! wire format.
//!
//! Layout (integers and floats little-endian):
//! magic `PFDM` | version u16 | client_id u32 | t0 u32 | N u32 |
//! flat_dim u32 | schedule fingerprint 32 bytes | label flag u8 |
//! N x flat_dim f32 samples | N x u16 labels when flagged.

use ndarray::Array2;

use crate::batch::SampleBatch;
use crate::error::{Error, Result};

pub const MESSAGE_MAGIC: &[u8; 4] = b"PFDM";
pub const MESSAGE_VERSION: u16 = 1;

/// Forward-diffused samples released by a client, plus public labels.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisyDatasetMessage {
    pub client_id: u32,
    pub t0: u32,
    pub samples: Array2<f32>,
    pub labels: Option<Vec<u16>>,
    pub schedule_fingerprint: [u8; 32],
}

impl NoisyDatasetMessage {
    pub fn sample_count(&self) -> usize {
        self.samples.nrows()
    }

    pub fn flat_dim(&self) -> usize {
        self.samples.ncols()
    }

    /// Deterministic byte encoding; the stream is a pure function of the
    /// message fields.
    pub fn encode(&self) -> Vec<u8> {
        let (n, dim) = self.samples.dim();
        let mut out = Vec::with_capacity(4 + 2 + 4 * 4 + 32 + 1 + n * dim * 4);
        out.extend_from_slice(MESSAGE_MAGIC);
        out.extend_from_slice(&MESSAGE_VERSION.to_le_bytes());
        out.extend_from_slice(&self.client_id.to_le_bytes());
        out.extend_from_slice(&self.t0.to_le_bytes());
        out.extend_from_slice(&(n as u32).to_le_bytes());
        out.extend_from_slice(&(dim as u32).to_le_bytes());
        out.extend_from_slice(&self.schedule_fingerprint);
        out.push(self.labels.is_some() as u8);
        for &v in self.samples.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        if let Some(labels) = &self.labels {
            debug_assert_eq!(labels.len(), n);
            for &l in labels {
                out.extend_from_slice(&l.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0usize;
        let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
            if *pos + n > bytes.len() {
                return Err(Error::Protocol("message truncated".into()));
            }
            let s = &bytes[*pos..*pos + n];
            *pos += n;
            Ok(s)
        };
        if take(&mut pos, 4)? != MESSAGE_MAGIC {
            return Err(Error::Protocol("bad message magic".into()));
        }
        let version = u16::from_le_bytes(take(&mut pos, 2)?.try_into().unwrap());
        if version != MESSAGE_VERSION {
            return Err(Error::Protocol(format!("unsupported message version {version}")));
        }
        let client_id = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
        let t0 = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
        let n = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let dim = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        if n == 0 || dim == 0 {
            return Err(Error::Protocol("message declares empty payload".into()));
        }
        let mut fingerprint = [0u8; 32];
        fingerprint.copy_from_slice(take(&mut pos, 32)?);
        let has_labels = match take(&mut pos, 1)?[0] {
            0 => false,
            1 => true,
            other => return Err(Error::Protocol(format!("bad label flag {other}"))),
        };
        let mut values = Vec::with_capacity(n * dim);
        for _ in 0..n * dim {
            let raw = take(&mut pos, 4)?;
            let v = f32::from_le_bytes(raw.try_into().unwrap());
            if !v.is_finite() {
                return Err(Error::Protocol("non-finite sample value".into()));
            }
            values.push(v);
        }
        let samples = Array2::from_shape_vec((n, dim), values)
            .map_err(|e| Error::Protocol(format!("payload reshape: {e}")))?;
        let labels = if has_labels {
            let mut l = Vec::with_capacity(n);
            for _ in 0..n {
                l.push(u16::from_le_bytes(take(&mut pos, 2)?.try_into().unwrap()));
            }
            Some(l)
        } else {
            None
        };
        if pos != bytes.len() {
            return Err(Error::Protocol("trailing bytes after message".into()));
        }
        Ok(Self { client_id, t0, samples, labels, schedule_fingerprint: fingerprint })
    }

    /// View the payload as a batch with the given per-sample shape.
    pub fn to_batch(&self, shape: &[usize]) -> Result<SampleBatch> {
        SampleBatch::new(self.samples.clone(), shape.to_vec(), self.labels.clone(), Some(self.client_id))
    }
}

/// Write one length-prefixed message (u64 little-endian frame length).
pub fn write_framed<W: std::io::Write>(w: &mut W, msg: &NoisyDatasetMessage) -> Result<()> {
    let bytes = msg.encode();
    w.write_all(&(bytes.len() as u64).to_le_bytes())?;
    w.write_all(&bytes)?;
    Ok(())
}

/// Read one length-prefixed message; `None` at clean end of stream.
pub fn read_framed<R: std::io::Read>(r: &mut R) -> Result<Option<NoisyDatasetMessage>> {
    let mut len_buf = [0u8; 8];
    match r.read_exact(&mut len_buf) {
        Ok(()) => {}
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    let len = u64::from_le_bytes(len_buf) as usize;
    let mut bytes = vec![0u8; len];
    r.read_exact(&mut bytes)?;
    Ok(Some(NoisyDatasetMessage::decode(&bytes)?))
}
