//! ZCBM binary matrix files and vocabulary sidecars.
//!
//! Layout (little-endian):
//!
//! ```text
//! "ZCBM" | version u8 = 1 | dtype u8 = 0 (f32) | flags u8 (bit0 normalized) | pad u8
//! | dim u32 | count u64 | count * dim f32, row-major
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{EmbeddingMatrix, VecError};

const MAGIC: &[u8; 4] = b"ZCBM";
const VERSION: u8 = 1;
const DTYPE_F32: u8 = 0;
const FLAG_NORMALIZED: u8 = 1;
const HEADER_LEN: u64 = 20;

pub fn write_matrix<W: Write>(m: &EmbeddingMatrix, mut w: W) -> Result<(), VecError> {
    let flags = if m.is_normalized() { FLAG_NORMALIZED } else { 0 };
    w.write_all(MAGIC)?;
    w.write_all(&[VERSION, DTYPE_F32, flags, 0])?;
    w.write_all(&(m.dim() as u32).to_le_bytes())?;
    w.write_all(&(m.count() as u64).to_le_bytes())?;
    for &x in m.data() {
        w.write_all(&x.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix<R: Read>(mut r: R) -> Result<EmbeddingMatrix, VecError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    parse(&bytes)
}

fn parse(bytes: &[u8]) -> Result<EmbeddingMatrix, VecError> {
    let total = bytes.len() as u64;
    if bytes.len() >= 4 && &bytes[..4] != MAGIC {
        let mut magic = [0u8; 4];
        magic.copy_from_slice(&bytes[..4]);
        return Err(VecError::BadMagic(magic));
    }
    if total < HEADER_LEN {
        return Err(VecError::TruncatedFile {
            expected: HEADER_LEN,
            actual: total,
        });
    }
    let (version, dtype, flags) = (bytes[4], bytes[5], bytes[6]);
    if version != VERSION || dtype != DTYPE_F32 {
        return Err(VecError::UnsupportedVersion { version, dtype });
    }
    let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as u64;
    let count = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
    let payload = dim
        .checked_mul(count)
        .and_then(|n| n.checked_mul(4))
        .ok_or(VecError::DimMismatch {
            expected: u64::MAX,
            actual: total - HEADER_LEN,
        })?;
    let actual = total - HEADER_LEN;
    if actual < payload {
        return Err(VecError::TruncatedFile {
            expected: HEADER_LEN + payload,
            actual: total,
        });
    }
    if actual > payload || dim == 0 {
        return Err(VecError::DimMismatch {
            expected: payload,
            actual,
        });
    }
    let data: Vec<f32> = bytes[HEADER_LEN as usize..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    EmbeddingMatrix::new(dim as usize, data, flags & FLAG_NORMALIZED != 0)
}

pub fn save_matrix(m: &EmbeddingMatrix, path: impl AsRef<Path>) -> Result<(), VecError> {
    let file = File::create(path)?;
    write_matrix(m, BufWriter::new(file))
}

pub fn load_matrix(path: impl AsRef<Path>) -> Result<EmbeddingMatrix, VecError> {
    let bytes = std::fs::read(path)?;
    parse(&bytes)
}

/// Writes one entry per line with LF endings; line index equals row index.
pub fn write_vocab<S: AsRef<str>>(vocab: &[S], path: impl AsRef<Path>) -> Result<(), VecError> {
    let mut w = BufWriter::new(File::create(path)?);
    for (i, entry) in vocab.iter().enumerate() {
        let entry = entry.as_ref();
        if entry.contains('\n') || entry.contains('\r') {
            return Err(VecError::InvalidVocabEntry(i));
        }
        w.write_all(entry.as_bytes())?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_vocab(path: impl AsRef<Path>) -> Result<Vec<String>, VecError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in reader.lines() {
        out.push(line?);
    }
    Ok(out)
}
