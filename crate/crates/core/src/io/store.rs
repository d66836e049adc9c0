//! `TVDS` descriptor store.
//!
//! ```text
//! "TVDS" | u32 version | u32 dim | u32 count
//! count × { id (64 bytes, zero-padded UTF-8) | u32 rows | u32 cols | u32 M
//!           | dim × f32 global | M × 2 × i32 coords | M × dim × f32 descriptors }
//! ```

use std::path::Path;

use super::bytes::{put_f32s, put_i32s, put_u32, to_u32, Reader};
use crate::aggregate::{ImageDescriptor, KeyPatches};
use crate::error::{Error, Result};
use crate::retrieval::ID_FIELD_BYTES;

pub const STORE_MAGIC: &[u8; 4] = b"TVDS";
pub const STORE_VERSION: u32 = 1;
/// Magic, version, dim and count.
pub const STORE_HEADER_BYTES: usize = 16;

fn check_id(id: &str) -> Result<()> {
    if id.is_empty() || id.len() > ID_FIELD_BYTES || id.contains('\0') {
        return Err(Error::validation(format!(
            "image id `{id}` must be 1..={ID_FIELD_BYTES} bytes without NUL"
        )));
    }
    Ok(())
}

pub fn encode_store(descs: &[ImageDescriptor]) -> Result<Vec<u8>> {
    let dim = descs.first().map_or(0, |d| d.global.len());
    let mut out = Vec::new();
    out.extend_from_slice(STORE_MAGIC);
    put_u32(&mut out, STORE_VERSION);
    put_u32(&mut out, to_u32(dim, "dim")?);
    put_u32(&mut out, to_u32(descs.len(), "count")?);
    for d in descs {
        check_id(&d.id)?;
        let m = d.keys.len();
        if d.global.len() != dim || (m > 0 && d.keys.dim != dim) || d.keys.descs.len() != m * d.keys.dim {
            return Err(Error::validation(format!("descriptor `{}` does not match store dim {dim}", d.id)));
        }
        let mut id = [0u8; ID_FIELD_BYTES];
        id[..d.id.len()].copy_from_slice(d.id.as_bytes());
        out.extend_from_slice(&id);
        put_u32(&mut out, d.rows);
        put_u32(&mut out, d.cols);
        put_u32(&mut out, to_u32(m, "key-patch count")?);
        put_f32s(&mut out, &d.global);
        let coords: Vec<i32> = d.keys.coords.iter().flatten().copied().collect();
        put_i32s(&mut out, &coords);
        put_f32s(&mut out, &d.keys.descs);
    }
    Ok(out)
}

pub fn decode_store(buf: &[u8]) -> Result<Vec<ImageDescriptor>> {
    let mut r = Reader::new(buf);
    r.magic(STORE_MAGIC)?;
    let at = r.offset();
    let version = r.u32("version")?;
    if version != STORE_VERSION {
        return Err(Error::format(at, format!("unsupported store version {version}")));
    }
    let dim = r.u32("dim")? as usize;
    let count = r.u32("count")? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let at = r.offset();
        let raw = r.take(ID_FIELD_BYTES, "image id")?;
        let end = raw.iter().position(|&b| b == 0).unwrap_or(ID_FIELD_BYTES);
        if raw[end..].iter().any(|&b| b != 0) {
            return Err(Error::format(at, "image id padding is not zero"));
        }
        let id = std::str::from_utf8(&raw[..end])
            .map_err(|_| Error::format(at, "image id is not UTF-8"))?
            .to_string();
        let rows = r.u32("rows")?;
        let cols = r.u32("cols")?;
        let m = r.u32("key-patch count")? as usize;
        let global = r.f32s(dim, "global descriptor")?;
        let flat = r.i32s(2 * m, "key-patch coordinates")?;
        let descs = r.f32s(m * dim, "key-patch descriptors")?;
        out.push(ImageDescriptor {
            id,
            rows,
            cols,
            global,
            keys: KeyPatches {
                coords: flat.chunks_exact(2).map(|c| [c[0], c[1]]).collect(),
                descs,
                dim,
            },
        });
    }
    r.finish()?;
    Ok(out)
}

pub fn write_store(path: &Path, descs: &[ImageDescriptor]) -> Result<()> {
    std::fs::write(path, encode_store(descs)?)?;
    Ok(())
}

pub fn read_store(path: &Path) -> Result<Vec<ImageDescriptor>> {
    decode_store(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retrieval::Footprint;

    fn sample(id: &str, m: usize) -> ImageDescriptor {
        ImageDescriptor {
            id: id.into(),
            rows: 3,
            cols: 4,
            global: vec![0.6, 0.8, 0.0],
            keys: KeyPatches {
                coords: (0..m as i32).map(|k| [16 * k + 8, 24]).collect(),
                descs: (0..3 * m).map(|k| k as f32 * 0.5 - 1.0).collect(),
                dim: 3,
            },
        }
    }

    #[test]
    fn golden_bytes() {
        let bytes = encode_store(&[sample("ab", 1)]).unwrap();
        let mut want = b"TVDS".to_vec();
        want.extend([1, 0, 0, 0, 3, 0, 0, 0, 1, 0, 0, 0]);
        let mut id = [0u8; 64];
        id[..2].copy_from_slice(b"ab");
        want.extend(id);
        want.extend([3, 0, 0, 0, 4, 0, 0, 0, 1, 0, 0, 0]);
        for v in [0.6f32, 0.8, 0.0] {
            want.extend(v.to_le_bytes());
        }
        want.extend([8, 0, 0, 0, 24, 0, 0, 0]);
        for v in [-1.0f32, -0.5, 0.0] {
            want.extend(v.to_le_bytes());
        }
        assert_eq!(bytes, want);
    }

    #[test]
    fn round_trip_and_size_formula() {
        let descs = vec![sample("a", 0), sample("b", 5)];
        let bytes = encode_store(&descs).unwrap();
        assert_eq!(decode_store(&bytes).unwrap(), descs);
        let formula: usize = descs.iter().map(|d| Footprint::of_descriptor(d).total_bytes).sum();
        assert_eq!(bytes.len(), STORE_HEADER_BYTES + formula);
    }

    #[test]
    fn rejects_long_ids_and_garbage() {
        assert!(encode_store(&[sample(&"x".repeat(65), 0)]).is_err());
        let mut bytes = encode_store(&[sample("a", 1)]).unwrap();
        bytes.push(0);
        assert!(matches!(decode_store(&bytes), Err(Error::Format { .. })));
        assert!(matches!(decode_store(b"TVD"), Err(Error::Format { offset: 0, .. })));
    }
}
