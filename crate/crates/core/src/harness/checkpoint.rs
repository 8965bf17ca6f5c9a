//! Binary model checkpoints.
//!
//! Layout (all integers little-endian): magic, `version: u32`, `seed: u64`,
//! the symbol table (`count: u32`, then `len: u32` + UTF-8 bytes each), then
//! every parameter as `name`, `rows: u32`, `cols: u32` and raw `f64` values.
//! Vectors are stored with one row. Loading reproduces every bit.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::lattice::Vocab;
use crate::model::ToyModel;
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"MCTCCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

fn put_u32<W: Write>(w: &mut W, x: usize) -> Result<()> {
    let x = u32::try_from(x).map_err(|_| Error::InvalidInput("value exceeds u32".into()))?;
    w.write_all(&x.to_le_bytes())?;
    Ok(())
}

fn put_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    put_u32(w, s.len())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn put_matrix<W: Write>(
    w: &mut W,
    name: &str,
    rows: usize,
    cols: usize,
    data: impl Iterator<Item = f64>,
) -> Result<()> {
    put_str(w, name)?;
    put_u32(w, rows)?;
    put_u32(w, cols)?;
    for x in data {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

pub fn write_checkpoint<W: Write>(mut w: W, model: &ToyModel) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&model.seed.to_le_bytes())?;
    let size = model.vocab.size();
    put_u32(&mut w, size)?;
    for id in 0..size {
        put_str(&mut w, model.vocab.symbol(id as u32).expect("ordinary id"))?;
    }
    let mats: [(&str, &Array2<f64>); 4] = [
        ("embed", &model.embed),
        ("enc_w", &model.enc_w),
        ("dec_w", &model.dec_w),
        ("pool_w", &model.pool_w),
    ];
    for (name, m) in mats {
        put_matrix(&mut w, name, m.nrows(), m.ncols(), m.iter().copied())?;
    }
    for (name, v) in [("enc_b", &model.enc_b), ("dec_b", &model.dec_b)] {
        put_matrix(&mut w, name, 1, v.len(), v.iter().copied())?;
    }
    Ok(())
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.inner
            .read_exact(&mut buf)
            .map_err(|_| Error::Parse("truncated checkpoint".into()))?;
        Ok(buf)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.bytes(n)?).map_err(|e| Error::Parse(e.to_string()))
    }

    fn matrix(&mut self, name: &str) -> Result<Array2<f64>> {
        let got = self.string()?;
        if got != name {
            return Err(Error::Parse(format!("expected parameter {name}, found {got}")));
        }
        let rows = self.u32()?;
        let cols = self.u32()?;
        let data = self
            .bytes(rows * cols * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Array2::from_shape_vec((rows, cols), data).map_err(|e| Error::Parse(e.to_string()))
    }

    fn vector(&mut self, name: &str) -> Result<Array1<f64>> {
        let m = self.matrix(name)?;
        if m.nrows() != 1 {
            return Err(Error::Parse(format!("{name} must have one row")));
        }
        Ok(m.row(0).to_owned())
    }
}

pub fn read_checkpoint<R: Read>(r: R) -> Result<ToyModel> {
    let mut r = Reader { inner: r };
    if r.bytes(8)? != MAGIC {
        return Err(Error::Parse("not a checkpoint file".into()));
    }
    let version = r.u32()? as u32;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Parse(format!("unsupported checkpoint version {version}")));
    }
    let seed = r.u64()?;
    let size = r.u32()?;
    let symbols = (0..size).map(|_| r.string()).collect::<Result<Vec<_>>>()?;
    let vocab = Vocab::with_symbols(symbols)?;
    let embed = r.matrix("embed")?;
    let enc_w = r.matrix("enc_w")?;
    let dec_w = r.matrix("dec_w")?;
    let pool_w = r.matrix("pool_w")?;
    let enc_b = r.vector("enc_b")?;
    let dec_b = r.vector("dec_b")?;

    let (v, d) = (vocab.len(), embed.ncols());
    let shapes_ok = embed.nrows() == v
        && enc_w.ncols() == v
        && enc_b.len() == v
        && dec_w.dim() == (4 * d, v)
        && dec_b.len() == v
        && pool_w.dim() == (v, d);
    if !shapes_ok {
        return Err(Error::Parse("parameter shapes are inconsistent".into()));
    }
    Ok(ToyModel {
        vocab,
        seed,
        embed,
        enc_w,
        enc_b,
        dec_w,
        dec_b,
        pool_w,
    })
}

pub fn save_checkpoint(model: &ToyModel, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, model)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ToyModel> {
    read_checkpoint(fs::read(path)?.as_slice())
}
