//! Binary network format.
//!
//! ```text
//! magic      8 bytes  "EVORMLP\0"      (file form only)
//! version    u32 LE   1                (file form only)
//! dtype      u8       4 = f32, 8 = f64
//! activation u8       0 = gelu, 1 = relu
//! input      u32 LE
//! output     u32 LE
//! n_hidden   u32 LE
//! hidden     n_hidden x (u32 LE width, u8 layer-norm flag)
//! payload    every tensor of `Mlp::tensors()` in order, row-major, LE
//! ```

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};

use super::{Activation, LayerNorm, Mlp, MlpSpec, Real};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"EVORMLP\0";
const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    fn width(self) -> u8 {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

/// Serialise one network block (no file magic).
pub fn write_mlp<F: Real>(mlp: &Mlp<F>, out: &mut Vec<u8>) {
    let spec = mlp.spec();
    out.push(F::DTYPE.width());
    out.push(spec.activation.tag());
    out.extend_from_slice(&(spec.input as u32).to_le_bytes());
    out.extend_from_slice(&(spec.output as u32).to_le_bytes());
    out.extend_from_slice(&(spec.hidden.len() as u32).to_le_bytes());
    for (&w, &ln) in spec.hidden.iter().zip(&spec.layer_norm) {
        out.extend_from_slice(&(w as u32).to_le_bytes());
        out.push(ln as u8);
    }
    for t in mlp.tensors() {
        for &v in t.iter() {
            v.to_le(out);
        }
    }
}

/// Bounds-checked little-endian reader.
pub(crate) struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Cursor<'a> {
    pub(crate) fn new(buf: &'a [u8], what: &'static str) -> Self {
        Cursor { buf, pos: 0, what }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::format(self.what, "unexpected end of data"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn position(&self) -> usize {
        self.pos
    }

    pub(crate) fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

/// Parse one network block written by [`write_mlp`].
pub fn read_mlp<F: Real>(buf: &[u8]) -> Result<(Mlp<F>, usize)> {
    let mut cur = Cursor::new(buf, "checkpoint");
    let mlp = read_block(&mut cur)?;
    Ok((mlp, cur.position()))
}

pub(crate) fn read_block<F: Real>(cur: &mut Cursor<'_>) -> Result<Mlp<F>> {
    let width = cur.u8()?;
    if width != F::DTYPE.width() {
        return Err(Error::format(
            "checkpoint",
            format!("stored element width {width}, expected {}", F::DTYPE.width()),
        ));
    }
    let activation = Activation::from_tag(cur.u8()?)
        .ok_or_else(|| Error::format("checkpoint", "unknown activation tag"))?;
    let input = cur.u32()? as usize;
    let output = cur.u32()? as usize;
    let n_hidden = cur.u32()? as usize;
    if n_hidden > 1024 {
        return Err(Error::format("checkpoint", format!("{n_hidden} hidden layers")));
    }
    let mut hidden = Vec::with_capacity(n_hidden);
    let mut layer_norm = Vec::with_capacity(n_hidden);
    for _ in 0..n_hidden {
        hidden.push(cur.u32()? as usize);
        layer_norm.push(cur.u8()? != 0);
    }
    let spec = MlpSpec {
        input,
        hidden,
        output,
        activation,
        layer_norm,
    };
    let w = width as usize;
    let mut read_vec = |n: usize| -> Result<Vec<F>> {
        let bytes = cur.take(n * w)?;
        Ok(bytes.chunks_exact(w).map(F::from_le).collect())
    };
    let mut widths = vec![spec.input];
    widths.extend_from_slice(&spec.hidden);
    widths.push(spec.output);
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    let mut norms = Vec::new();
    for (i, pair) in widths.windows(2).enumerate() {
        let (fi, fo) = (pair[0], pair[1]);
        weights.push(Array2::from_shape_vec((fi, fo), read_vec(fi * fo)?).expect("sized"));
        biases.push(Array1::from_vec(read_vec(fo)?));
        if i < spec.hidden.len() {
            norms.push(if spec.layer_norm[i] {
                Some(LayerNorm {
                    gain: Array1::from_vec(read_vec(fo)?),
                    bias: Array1::from_vec(read_vec(fo)?),
                })
            } else {
                None
            });
        }
    }
    Mlp::from_layers(spec, weights, biases, norms)
}

pub fn write_mlp_file<F: Real>(mlp: &Mlp<F>, path: &Path) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    write_mlp(mlp, &mut out);
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

pub fn read_mlp_file<F: Real>(path: &Path) -> Result<Mlp<F>> {
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    let mut cur = Cursor::new(&buf, "checkpoint");
    if cur.take(8)? != MAGIC {
        return Err(Error::format("checkpoint", "bad magic"));
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(Error::format("checkpoint", format!("unsupported version {version}")));
    }
    let mlp = read_block(&mut cur)?;
    if cur.remaining() != 0 {
        return Err(Error::format("checkpoint", "trailing bytes"));
    }
    Ok(mlp)
}
