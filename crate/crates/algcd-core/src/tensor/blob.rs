//! On-disk tensor container.
//!
//! Layout, all little-endian:
//!
//! ```text
//! 8 bytes  magic  "ALGCDTEN"
//! 1 byte   format version (currently 1)
//! 1 byte   dtype (0 = f32, 1 = f64)
//! 4 bytes  rank (u32)
//! 8×rank   extents (u64 each)
//! payload  row-major values in the stored dtype
//! ```
//!
//! Values are held as `f64` in memory regardless of the stored dtype; f32
//! payloads are widened on read and rounded on write.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::BlobError;

pub const MAGIC: &[u8; 8] = b"ALGCDTEN";
pub const VERSION: u8 = 1;

/// Upper bound on the element count read from a header, so corrupt extents
/// fail cleanly instead of attempting a giant allocation.
pub const MAX_ELEMENTS: u64 = 1 << 28;

/// Payload element type.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    fn code(self) -> u8 {
        match self {
            Dtype::F32 => 0,
            Dtype::F64 => 1,
        }
    }

    fn from_code(code: u8) -> Result<Self, BlobError> {
        match code {
            0 => Ok(Dtype::F32),
            1 => Ok(Dtype::F64),
            other => Err(BlobError::BadDtype(other)),
        }
    }
}

/// Serializes one tensor into `w`.
pub fn write_tensor(
    w: &mut impl Write,
    data: &[f64],
    shape: &[usize],
    dtype: Dtype,
) -> Result<(), BlobError> {
    let numel: usize = shape.iter().product();
    if numel != data.len() {
        return Err(BlobError::ShapeDataMismatch {
            shape: shape.to_vec(),
            len: data.len(),
        });
    }
    w.write_all(MAGIC)?;
    w.write_all(&[VERSION, dtype.code()])?;
    w.write_all(&(shape.len() as u32).to_le_bytes())?;
    for &e in shape {
        w.write_all(&(e as u64).to_le_bytes())?;
    }
    match dtype {
        Dtype::F32 => {
            for &v in data {
                w.write_all(&(v as f32).to_le_bytes())?;
            }
        }
        Dtype::F64 => {
            for &v in data {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

fn read_exact_or_truncated(r: &mut impl Read, buf: &mut [u8]) -> Result<(), BlobError> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            BlobError::Truncated
        } else {
            BlobError::Io(e)
        }
    })
}

/// Deserializes one tensor from `r`, widening f32 payloads to f64.
pub fn read_tensor(r: &mut impl Read) -> Result<(Vec<f64>, Vec<usize>), BlobError> {
    let mut magic = [0u8; 8];
    read_exact_or_truncated(r, &mut magic)?;
    if &magic != MAGIC {
        return Err(BlobError::BadMagic);
    }
    let mut vd = [0u8; 2];
    read_exact_or_truncated(r, &mut vd)?;
    if vd[0] != VERSION {
        return Err(BlobError::BadVersion(vd[0]));
    }
    let dtype = Dtype::from_code(vd[1])?;
    let mut rank_bytes = [0u8; 4];
    read_exact_or_truncated(r, &mut rank_bytes)?;
    let rank = u32::from_le_bytes(rank_bytes);
    if rank > 8 {
        return Err(BlobError::BadHeader(format!("rank {rank} is implausible")));
    }
    let mut shape = Vec::with_capacity(rank as usize);
    let mut numel: u64 = 1;
    for _ in 0..rank {
        let mut ext = [0u8; 8];
        read_exact_or_truncated(r, &mut ext)?;
        let e = u64::from_le_bytes(ext);
        if e == 0 {
            return Err(BlobError::BadHeader("zero extent".into()));
        }
        numel = numel
            .checked_mul(e)
            .filter(|&n| n <= MAX_ELEMENTS)
            .ok_or_else(|| BlobError::BadHeader(format!("element count exceeds {MAX_ELEMENTS}")))?;
        shape.push(e as usize);
    }
    let mut data = Vec::with_capacity(numel as usize);
    match dtype {
        Dtype::F32 => {
            let mut buf = [0u8; 4];
            for _ in 0..numel {
                read_exact_or_truncated(r, &mut buf)?;
                data.push(f32::from_le_bytes(buf) as f64);
            }
        }
        Dtype::F64 => {
            let mut buf = [0u8; 8];
            for _ in 0..numel {
                read_exact_or_truncated(r, &mut buf)?;
                data.push(f64::from_le_bytes(buf));
            }
        }
    }
    Ok((data, shape))
}

/// Writes one tensor to a file (buffered).
pub fn save_tensor(
    path: impl AsRef<Path>,
    data: &[f64],
    shape: &[usize],
    dtype: Dtype,
) -> Result<(), BlobError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_tensor(&mut w, data, shape, dtype)?;
    w.flush()?;
    Ok(())
}

/// Reads one tensor from a file (buffered).
pub fn load_tensor(path: impl AsRef<Path>) -> Result<(Vec<f64>, Vec<usize>), BlobError> {
    let mut r = BufReader::new(File::open(path)?);
    let out = read_tensor(&mut r)?;
    // Trailing bytes mean the file is not just this tensor.
    let mut probe = [0u8; 1];
    match r.read(&mut probe) {
        Ok(0) => Ok(out),
        Ok(_) => Err(BlobError::BadHeader("trailing bytes after payload".into())),
        Err(e) => Err(BlobError::Io(e)),
    }
}
