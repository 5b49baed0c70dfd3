//! Little-endian binary primitives shared by the checkpoint and record formats.

use std::io::{Read, Write};

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use crate::backend::{ParamStore, Tensor};
use crate::error::{Error, Result};

pub(crate) fn write_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    w.write_u32::<LE>(s.len() as u32)?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

pub(crate) fn read_str<R: Read>(r: &mut R) -> Result<String> {
    let n = r.read_u32::<LE>()? as usize;
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| Error::Checkpoint(format!("invalid utf-8: {e}")))
}

pub(crate) fn write_f64s<W: Write>(w: &mut W, v: &[f64]) -> Result<()> {
    w.write_u32::<LE>(v.len() as u32)?;
    for &x in v {
        w.write_f64::<LE>(x)?;
    }
    Ok(())
}

pub(crate) fn read_f64s<R: Read>(r: &mut R) -> Result<Vec<f64>> {
    let n = r.read_u32::<LE>()? as usize;
    (0..n).map(|_| Ok(r.read_f64::<LE>()?)).collect()
}

pub(crate) fn write_tensor<W: Write>(w: &mut W, t: &Tensor) -> Result<()> {
    w.write_u32::<LE>(t.rows() as u32)?;
    w.write_u32::<LE>(t.cols() as u32)?;
    for &x in t.data() {
        w.write_f64::<LE>(x)?;
    }
    Ok(())
}

pub(crate) fn read_tensor<R: Read>(r: &mut R) -> Result<Tensor> {
    let rows = r.read_u32::<LE>()? as usize;
    let cols = r.read_u32::<LE>()? as usize;
    let data = (0..rows * cols).map(|_| r.read_f64::<LE>()).collect::<std::io::Result<Vec<_>>>()?;
    Ok(Tensor::from_rows(rows, cols, data))
}

/// `count:u32` then per entry `name:str, tensor`.
pub(crate) fn write_store<W: Write>(w: &mut W, s: &ParamStore) -> Result<()> {
    w.write_u32::<LE>(s.len() as u32)?;
    for (name, t) in s.iter() {
        write_str(w, name)?;
        write_tensor(w, t)?;
    }
    Ok(())
}

pub(crate) fn read_store<R: Read>(r: &mut R) -> Result<ParamStore> {
    let n = r.read_u32::<LE>()?;
    let mut s = ParamStore::new();
    for _ in 0..n {
        let name = read_str(r)?;
        let t = read_tensor(r)?;
        s.insert(name, t);
    }
    Ok(s)
}

pub(crate) fn expect_magic<R: Read>(r: &mut R, magic: &[u8; 8]) -> Result<()> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    if &buf != magic {
        return Err(Error::Checkpoint(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&buf),
            String::from_utf8_lossy(magic)
        )));
    }
    Ok(())
}
