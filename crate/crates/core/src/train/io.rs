//! Metrics CSV and the binary checkpoint format.
//!
//! A checkpoint is little-endian throughout:
//!
//! ```text
//! magic     4 bytes   "PCNN"
//! version   u32       1
//! spec_len  u32       byte length of the architecture text
//! spec      spec_len  UTF-8 architecture text (see `ArchitectureSpec`)
//! count     u32       number of tensors that follow
//! per tensor, in layer order with weight before bias:
//!   rank    u32
//!   extents rank x u32
//!   values  product(extents) x f32
//! ```

use std::fs;
use std::path::Path;

use super::History;
use crate::error::{Error, Result};
use crate::nn::{ArchitectureSpec, LayerParams, Parameters};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PCNN";
pub const CHECKPOINT_VERSION: u32 = 1;

pub const CSV_HEADER: &str = "epoch,train_loss,train_acc,val_loss,val_acc,seconds";

/// The CSV text for `history`: a header row, then one row per epoch.
pub fn metrics_csv(history: &History) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in &history.records {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.epoch, r.train_loss, r.train_acc, r.val_loss, r.val_acc, r.seconds
        ));
    }
    out
}

pub fn write_metrics_csv(history: &History, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, metrics_csv(history)).map_err(|e| Error::io(path, e))
}

fn put_u32(buf: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::param(format!("{v} does not fit a u32 field")))?;
    buf.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

/// Serialises `spec` and `params` to checkpoint bytes.
pub fn checkpoint_bytes(spec: &ArchitectureSpec, params: &Parameters<f32>) -> Result<Vec<u8>> {
    params.check_against(spec)?;
    let text = spec.to_text();
    let mut buf = Vec::with_capacity(16 + text.len() + 4 * params.count() + 64 * params.len());
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    put_u32(&mut buf, CHECKPOINT_VERSION as usize)?;
    put_u32(&mut buf, text.len())?;
    buf.extend_from_slice(text.as_bytes());
    put_u32(&mut buf, params.tensors().count())?;
    for t in params.tensors() {
        put_u32(&mut buf, t.ndim())?;
        for &e in t.shape() {
            put_u32(&mut buf, e)?;
        }
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(buf)
}

pub fn save_checkpoint(spec: &ArchitectureSpec, params: &Parameters<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = checkpoint_bytes(spec, params)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        match self.bytes.get(self.pos..self.pos.saturating_add(n)) {
            Some(s) => {
                self.pos += n;
                Ok(s)
            }
            None => Err(Error::Truncated {
                path: self.path.to_path_buf(),
                offset: self.bytes.len() as u64,
                reason: format!("{what} needs {n} bytes at offset {}", self.pos),
            }),
        }
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

/// Parses checkpoint bytes; `path` is used only in error messages.
pub fn parse_checkpoint(bytes: &[u8], path: &Path) -> Result<(ArchitectureSpec, Parameters<f32>)> {
    let format = |reason: String| Error::Format {
        path: path.to_path_buf(),
        reason,
    };
    let consistency = |reason: String| Error::Consistency {
        path: path.to_path_buf(),
        reason,
    };
    let mut r = Reader { bytes, pos: 0, path };
    let magic = r.take(4, "magic")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(format(format!("bad magic {:?}, expected \"PCNN\"", String::from_utf8_lossy(magic))));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION as usize {
        return Err(format(format!("unsupported version {version}, expected {CHECKPOINT_VERSION}")));
    }
    let len = r.u32("spec length")?;
    let text = std::str::from_utf8(r.take(len, "spec text")?)
        .map_err(|_| format("architecture text is not UTF-8".into()))?;
    let spec: ArchitectureSpec = text
        .parse()
        .map_err(|e| format(format!("architecture text: {e}")))?;
    let shapes = spec.parameter_shapes();
    let count = r.u32("tensor count")?;
    if count != 2 * shapes.len() {
        return Err(consistency(format!(
            "{count} tensors, architecture needs {}",
            2 * shapes.len()
        )));
    }
    let mut read_tensor = |want: &[usize]| -> Result<Tensor<f32>> {
        let rank = r.u32("tensor rank")?;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("tensor extent")?);
        }
        if shape != want {
            return Err(consistency(format!("tensor shape {shape:?}, architecture needs {want:?}")));
        }
        let n: usize = shape.iter().product();
        let raw = r.take(4 * n, "tensor values")?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        Tensor::from_vec(&shape, data).map_err(|e| format(e.to_string()))
    };
    let mut layers: Vec<Option<LayerParams<f32>>> = vec![None; spec.layers().len()];
    for (i, w, b) in &shapes {
        let weight = read_tensor(w)?;
        let bias = read_tensor(b)?;
        layers[*i] = Some(LayerParams { weight, bias });
    }
    if r.pos != bytes.len() {
        return Err(format(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let params = Parameters::from_layers(&spec, layers)?;
    Ok((spec, params))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(ArchitectureSpec, Parameters<f32>)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_checkpoint(&bytes, path)
}
