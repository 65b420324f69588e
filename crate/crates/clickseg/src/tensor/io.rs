//! WCT1 on-disk tensor format: magic `WCT1`, u8 rank, rank×u32 LE dims,
//! then product(dims)×f32 LE values.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::Tensor;
use crate::error::{Error, Result};

const MAGIC: [u8; 4] = [0x57, 0x43, 0x54, 0x31];

pub fn write_tensor(path: &Path, t: &Tensor) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&MAGIC)?;
    w.write_all(&[t.shape().len() as u8])?;
    for &d in t.shape() {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    for &v in t.data().iter() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_tensor(path: &Path) -> Result<Tensor> {
    let mut r = BufReader::new(
        File::open(path).map_err(|e| Error::bad_file(path, format!("open failed: {e}")))?,
    );
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::bad_file(path, "truncated before magic"))?;
    if magic != MAGIC {
        return Err(Error::bad_file(path, format!("bad magic {magic:02x?}")));
    }
    let mut rank = [0u8; 1];
    r.read_exact(&mut rank)
        .map_err(|_| Error::bad_file(path, "truncated before rank"))?;
    let rank = rank[0] as usize;
    if !(1..=4).contains(&rank) {
        return Err(Error::bad_file(path, format!("rank {rank} outside 1..=4")));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        let mut buf = [0u8; 4];
        r.read_exact(&mut buf)
            .map_err(|_| Error::bad_file(path, "truncated in dims"))?;
        shape.push(u32::from_le_bytes(buf) as usize);
    }
    let numel: usize = shape.iter().product();
    let mut data = Vec::with_capacity(numel);
    let mut buf = [0u8; 4];
    for i in 0..numel {
        r.read_exact(&mut buf)
            .map_err(|_| Error::bad_file(path, format!("truncated at element {i} of {numel}")))?;
        data.push(f32::from_le_bytes(buf));
    }
    if r.read(&mut buf).map_err(|e| Error::bad_file(path, e.to_string()))? != 0 {
        return Err(Error::bad_file(path, "trailing bytes after tensor data"));
    }
    Tensor::from_vec(&shape, data).map_err(|e| Error::bad_file(path, e.to_string()))
}
