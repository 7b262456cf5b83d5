//! Flat binary container of named arrays. Little-endian throughout.
//!
//! Layout: magic `NLQT`, format version (u32), element width (u8, 4 or 8),
//! entry count (u32), then per entry: name length (u32) + UTF-8 name,
//! rows (u64), cols (u64), raw elements.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::arr::Arr;
use crate::Scalar;

const MAGIC: &[u8; 4] = b"NLQT";
const VERSION: u32 = 1;

pub fn save_arrays<F: Scalar>(path: &Path, entries: &[(String, Arr<F>)]) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let width = std::mem::size_of::<F>() as u8;
    w.write_all(&[width])?;
    w.write_all(&(entries.len() as u32).to_le_bytes())?;
    for (name, arr) in entries {
        let bytes = name.as_bytes();
        w.write_all(&(bytes.len() as u32).to_le_bytes())?;
        w.write_all(bytes)?;
        let (r, c) = arr.shape();
        w.write_all(&(r as u64).to_le_bytes())?;
        w.write_all(&(c as u64).to_le_bytes())?;
        for &x in arr.as_slice() {
            if width == 4 {
                w.write_all(&(x.to_f32().unwrap()).to_le_bytes())?;
            } else {
                w.write_all(&(x.to_f64().unwrap()).to_le_bytes())?;
            }
        }
    }
    w.flush()
}

pub fn load_arrays<F: Scalar>(path: &Path) -> io::Result<Vec<(String, Arr<F>)>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(bad("not a parameter container (bad magic)"));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(bad(&format!("unsupported container version {version}")));
    }
    let mut width = [0u8; 1];
    r.read_exact(&mut width)?;
    let width = width[0];
    if width != 4 && width != 8 {
        return Err(bad(&format!("unsupported element width {width}")));
    }
    let count = read_u32(&mut r)? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| bad("non-utf8 array name"))?;
        let rows = read_u64(&mut r)? as usize;
        let cols = read_u64(&mut r)? as usize;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            let x = if width == 4 {
                let mut b = [0u8; 4];
                r.read_exact(&mut b)?;
                f32::from_le_bytes(b) as f64
            } else {
                let mut b = [0u8; 8];
                r.read_exact(&mut b)?;
                f64::from_le_bytes(b)
            };
            data.push(F::from(x).unwrap());
        }
        out.push((name, Arr::from_data(rows, cols, data)));
    }
    Ok(out)
}

fn read_u32(r: &mut impl Read) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn bad(msg: &str) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg)
}
