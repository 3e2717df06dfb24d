//! `ATNS` tensor files: `"ATNS" | u8 dtype (0 f32, 1 i8) | u8 rank |
//! u32 dims... | little-endian payload | u32 CRC32`.

use std::path::Path;

use super::codec::{check_crc, read_file, write_file, Reader, Writer};
use crate::error::{Error, Result};
use crate::tensor::{FloatTensor, Shape};

pub const MAGIC: [u8; 4] = *b"ATNS";

const DTYPE_F32: u8 = 0;
const DTYPE_I8: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum StoredTensor {
    F32(FloatTensor),
    I8 { shape: Shape, data: Vec<i8> },
}

impl StoredTensor {
    pub fn shape(&self) -> &Shape {
        match self {
            StoredTensor::F32(t) => t.shape(),
            StoredTensor::I8 { shape, .. } => shape,
        }
    }
}

pub fn encode_tensor(t: &StoredTensor) -> Vec<u8> {
    let mut w = Writer::default();
    w.bytes(&MAGIC);
    let shape = t.shape();
    w.u8(match t {
        StoredTensor::F32(_) => DTYPE_F32,
        StoredTensor::I8 { .. } => DTYPE_I8,
    });
    w.u8(shape.rank() as u8);
    for &d in shape.dims() {
        w.usize(d);
    }
    match t {
        StoredTensor::F32(t) => t.data().iter().for_each(|&v| w.f32(v)),
        StoredTensor::I8 { data, .. } => {
            w.bytes(&data.iter().map(|&q| q as u8).collect::<Vec<_>>())
        }
    }
    w.finish()
}

pub fn decode_tensor(bytes: &[u8], path: &Path) -> Result<StoredTensor> {
    if bytes.len() < 4 {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
        });
    }
    let found: [u8; 4] = bytes[..4].try_into().expect("4 bytes");
    if found != MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            found,
        });
    }
    let body = check_crc(bytes, path)?;
    let mut r = Reader::new(&body[4..], path);
    let dtype = r.u8()?;
    let rank = r.u8()? as usize;
    let dims = (0..rank).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
    let shape = Shape::new(dims).map_err(|e| r.malformed(e.to_string()))?;
    let n = shape.element_count();
    let t = match dtype {
        DTYPE_F32 => {
            let data = r.f32s(n)?;
            StoredTensor::F32(
                FloatTensor::new(shape, data).map_err(|e| r.malformed(e.to_string()))?,
            )
        }
        DTYPE_I8 => StoredTensor::I8 {
            data: r.i8s(n)?,
            shape,
        },
        d => return Err(r.malformed(format!("unknown dtype {d}"))),
    };
    if r.remaining() != 0 {
        return Err(r.malformed(format!("{} trailing bytes", r.remaining())));
    }
    Ok(t)
}

pub fn save_tensor(t: &StoredTensor, path: &Path) -> Result<()> {
    write_file(path, &encode_tensor(t))
}

pub fn load_tensor(path: &Path) -> Result<StoredTensor> {
    decode_tensor(&read_file(path)?, path)
}
