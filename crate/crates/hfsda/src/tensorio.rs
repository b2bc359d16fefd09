//! Binary container for named f64 tensors.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   b"HFT1"
//! u32     tensor count
//! repeat:
//!   u32     name length, then that many UTF-8 bytes
//!   u32     rank, then rank × u64 dimensions
//!   f64 ×   product(dims), row-major
//! ```
//!
//! Used for encoder weight files and as the tensor payload inside training
//! checkpoints. Readers validate eagerly and report the offending path.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::IxDyn;

use crate::autograd::Arr;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"HFT1";

fn format_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format { path: path.to_path_buf(), reason: reason.into() }
}

/// Serialize `tensors` into `out`.
pub fn write_tensors<W: Write>(out: &mut W, tensors: &BTreeMap<String, Arr>) -> Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, arr) in tensors {
        out.write_all(&(name.len() as u32).to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        out.write_all(&(arr.ndim() as u32).to_le_bytes())?;
        for &d in arr.shape() {
            out.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in arr.iter() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Deserialize a tensor map from `input`, attributing failures to `path`.
pub fn read_tensors<R: Read>(input: &mut R, path: &Path) -> Result<BTreeMap<String, Arr>> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic).map_err(|e| format_err(path, format!("short magic: {e}")))?;
    if &magic != MAGIC {
        return Err(format_err(path, "bad magic; not a tensor container"));
    }
    let count = read_u32(input, path)? as usize;
    let mut tensors = BTreeMap::new();
    for _ in 0..count {
        let name_len = read_u32(input, path)? as usize;
        if name_len > 4096 {
            return Err(format_err(path, format!("implausible name length {name_len}")));
        }
        let mut name_buf = vec![0u8; name_len];
        input.read_exact(&mut name_buf).map_err(|e| format_err(path, format!("truncated name: {e}")))?;
        let name = String::from_utf8(name_buf)
            .map_err(|_| format_err(path, "tensor name is not UTF-8"))?;
        let rank = read_u32(input, path)? as usize;
        if rank > 8 {
            return Err(format_err(path, format!("implausible rank {rank} for '{name}'")));
        }
        let mut dims = Vec::with_capacity(rank);
        let mut len = 1usize;
        for _ in 0..rank {
            let d = read_u64(input, path)? as usize;
            len = len
                .checked_mul(d)
                .ok_or_else(|| format_err(path, format!("dimension overflow in '{name}'")))?;
            dims.push(d);
        }
        if len > (1 << 30) {
            return Err(format_err(path, format!("tensor '{name}' too large ({len} elements)")));
        }
        let mut data = vec![0.0f64; len];
        let mut buf = [0u8; 8];
        for slot in data.iter_mut() {
            input
                .read_exact(&mut buf)
                .map_err(|e| format_err(path, format!("truncated data in '{name}': {e}")))?;
            *slot = f64::from_le_bytes(buf);
        }
        let arr = Arr::from_shape_vec(IxDyn(&dims), data)
            .map_err(|e| format_err(path, format!("bad shape for '{name}': {e}")))?;
        if tensors.insert(name.clone(), arr).is_some() {
            return Err(format_err(path, format!("duplicate tensor '{name}'")));
        }
    }
    Ok(tensors)
}

/// Write a tensor file atomically: temp file in the same directory, fsync,
/// then rename over the destination.
pub fn save_tensor_file(path: &Path, tensors: &BTreeMap<String, Arr>) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    write_tensors(tmp.as_file_mut(), tensors)?;
    tmp.as_file_mut().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Read a tensor file written by [`save_tensor_file`].
pub fn load_tensor_file(path: &Path) -> Result<BTreeMap<String, Arr>> {
    let bytes = std::fs::read(path)?;
    let mut cursor = std::io::Cursor::new(bytes);
    let tensors = read_tensors(&mut cursor, path)?;
    let pos = cursor.position() as usize;
    if pos != cursor.get_ref().len() {
        return Err(format_err(path, format!("{} trailing bytes", cursor.get_ref().len() - pos)));
    }
    Ok(tensors)
}

fn read_u32<R: Read>(input: &mut R, path: &Path) -> Result<u32> {
    let mut buf = [0u8; 4];
    input.read_exact(&mut buf).map_err(|e| format_err(path, format!("truncated u32: {e}")))?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64<R: Read>(input: &mut R, path: &Path) -> Result<u64> {
    let mut buf = [0u8; 8];
    input.read_exact(&mut buf).map_err(|e| format_err(path, format!("truncated u64: {e}")))?;
    Ok(u64::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::IxDyn;

    #[test]
    fn round_trip_preserves_names_shapes_and_bits() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("weights.hft");
        let mut tensors = BTreeMap::new();
        tensors.insert("a.w".to_string(), Arr::from_shape_fn(IxDyn(&[3, 4]), |ix| (ix[0] * 4 + ix[1]) as f64 * 0.1));
        tensors.insert("b".to_string(), Arr::from_elem(IxDyn(&[2, 1, 5]), -1.25));
        tensors.insert("scalar".to_string(), Arr::from_elem(IxDyn(&[]), 7.0));
        save_tensor_file(&path, &tensors).unwrap();
        let back = load_tensor_file(&path).unwrap();
        assert_eq!(back.len(), 3);
        for (name, arr) in &tensors {
            assert_eq!(&back[name], arr, "{name}");
        }
    }

    #[test]
    fn corrupt_and_truncated_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("weights.hft");
        let mut tensors = BTreeMap::new();
        tensors.insert("w".to_string(), Arr::from_elem(IxDyn(&[4, 4]), 1.0));
        save_tensor_file(&path, &tensors).unwrap();

        let good = std::fs::read(&path).unwrap();
        // Bad magic.
        let mut bad = good.clone();
        bad[0] = b'X';
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(load_tensor_file(&path), Err(Error::Format { .. })));
        // Truncated payload.
        std::fs::write(&path, &good[..good.len() - 9]).unwrap();
        assert!(matches!(load_tensor_file(&path), Err(Error::Format { .. })));
        // Trailing garbage.
        let mut long = good.clone();
        long.extend_from_slice(&[0u8; 3]);
        std::fs::write(&path, &long).unwrap();
        assert!(matches!(load_tensor_file(&path), Err(Error::Format { .. })));
    }
}
