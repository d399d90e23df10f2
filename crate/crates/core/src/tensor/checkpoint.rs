//! `JGCK` checkpoint: magic, version u32, count u32, then per parameter the name
//! (u32 length + UTF-8), rank u32, dims u32[rank], data f64[]; all little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

const MAGIC: [u8; 4] = *b"JGCK";
const VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(w: &mut W, params: &[(String, Tensor)]) -> Result<()> {
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(params.len() as u32).to_le_bytes())?;
    for (name, t) in params {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.rank() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], section: &'static str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        ErrorKind::UnexpectedEof => Error::UnexpectedEof(section),
        _ => Error::Io(e),
    })
}

fn read_u32<R: Read>(r: &mut R, section: &'static str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, section)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<Vec<(String, Tensor)>> {
    let mut magic = [0u8; 4];
    read_exact(r, &mut magic, "header")?;
    if magic != MAGIC {
        return Err(Error::BadMagic { expected: MAGIC, found: magic });
    }
    let version = read_u32(r, "header")?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let count = read_u32(r, "header")? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let len = read_u32(r, "parameter")? as usize;
        let mut name = vec![0u8; len];
        read_exact(r, &mut name, "parameter")?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Invariant("parameter name is not UTF-8".into()))?;
        let rank = read_u32(r, "parameter")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u32(r, "parameter")? as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        let mut b = [0u8; 8];
        for _ in 0..n {
            read_exact(r, &mut b, "parameter data")?;
            data.push(f64::from_le_bytes(b));
        }
        out.push((name, Tensor::new(shape, data)?));
    }
    Ok(out)
}

/// Writes every parameter of `store`, preceded by `extra` entries (config echo).
pub fn save_checkpoint(path: &Path, store: &ParamStore, extra: &[(String, Tensor)]) -> Result<()> {
    let mut entries: Vec<(String, Tensor)> = extra.to_vec();
    entries.extend(store.iter().map(|p| (p.name.clone(), p.value.clone())));
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(&mut w, &entries)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let mut r = BufReader::new(File::open(path)?);
    read_checkpoint(&mut r)
}
