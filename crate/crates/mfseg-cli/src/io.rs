//! Image and mask files.
//!
//! Images travel as raw 32-bit floats under a 16-byte self-describing
//! header (`MFG1` format below) so no codec can quantize or compress the
//! data. Masks are binary portable graymaps (`P5`) whose pixel values are
//! the class labels `1..=K`.
//!
//! `MFG1` header layout, bit-exact:
//!
//! | offset | size | content                               |
//! |-------:|-----:|---------------------------------------|
//! |      0 |    4 | magic `b"MFG1"`                       |
//! |      4 |    1 | endianness, `b'L'` (little) only      |
//! |      5 |    1 | sample type code, `4` = 32-bit float  |
//! |      6 |    2 | format version, `u16` LE, currently 1 |
//! |      8 |    4 | width, `u32` LE                       |
//! |     12 |    4 | height, `u32` LE                      |
//!
//! Samples follow row-major, one `f32` LE per pixel.

use std::fs;
use std::path::Path;

use mfseg::{Grid, MfError, Result};

pub const MFG1_MAGIC: &[u8; 4] = b"MFG1";
pub const MFG1_VERSION: u16 = 1;
/// Sample type code for 32-bit IEEE floats (the only one defined).
pub const MFG1_DTYPE_F32: u8 = 4;
const MFG1_HEADER_LEN: usize = 16;

fn file_err(path: &Path, what: &str, e: std::io::Error) -> MfError {
    MfError::Config(format!("{}: cannot {what}: {e}", path.display()))
}

/// Write a float grid as an `MFG1` file. Samples are narrowed to `f32`.
pub fn write_image(path: &Path, img: &Grid<f64>) -> Result<()> {
    let mut bytes = Vec::with_capacity(MFG1_HEADER_LEN + 4 * img.len());
    bytes.extend_from_slice(MFG1_MAGIC);
    bytes.push(b'L');
    bytes.push(MFG1_DTYPE_F32);
    bytes.extend_from_slice(&MFG1_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(img.cols() as u32).to_le_bytes());
    bytes.extend_from_slice(&(img.rows() as u32).to_le_bytes());
    for &v in img.data() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| file_err(path, "write", e))
}

/// Read an `MFG1` file back into a float grid.
pub fn read_image(path: &Path) -> Result<Grid<f64>> {
    let bytes = fs::read(path).map_err(|e| file_err(path, "read", e))?;
    let bad = |msg: String| MfError::Config(format!("{}: {msg}", path.display()));
    if bytes.len() < MFG1_HEADER_LEN {
        return Err(bad(format!("truncated header ({} bytes)", bytes.len())));
    }
    if &bytes[0..4] != MFG1_MAGIC {
        return Err(bad("not an MFG1 image (bad magic)".into()));
    }
    if bytes[4] != b'L' {
        return Err(bad(format!(
            "unsupported endianness marker {:?} (only 'L' is defined)",
            bytes[4] as char
        )));
    }
    if bytes[5] != MFG1_DTYPE_F32 {
        return Err(bad(format!("unsupported sample type code {}", bytes[5])));
    }
    let version = u16::from_le_bytes([bytes[6], bytes[7]]);
    if version != MFG1_VERSION {
        return Err(bad(format!("unsupported format version {version}")));
    }
    let width = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let height = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let expect = MFG1_HEADER_LEN + 4 * width * height;
    if bytes.len() != expect {
        return Err(bad(format!(
            "payload is {} bytes, header promises {expect}",
            bytes.len()
        )));
    }
    let mut data = Vec::with_capacity(width * height);
    for chunk in bytes[MFG1_HEADER_LEN..].chunks_exact(4) {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(bad("non-finite sample".into()));
        }
        data.push(v as f64);
    }
    Ok(Grid::from_vec(height, width, data))
}

/// Write a label mask as a binary PGM (`P5`, maxval 255). Labels are
/// stored as-is; callers pass them 1-based.
pub fn write_mask(path: &Path, mask: &Grid<u8>) -> Result<()> {
    let mut bytes = format!("P5\n{} {}\n255\n", mask.cols(), mask.rows()).into_bytes();
    bytes.extend_from_slice(mask.data());
    fs::write(path, bytes).map_err(|e| file_err(path, "write", e))
}

/// Read a binary PGM label mask. Comments (`#` to end of line) are
/// allowed anywhere whitespace is.
pub fn read_mask(path: &Path) -> Result<Grid<u8>> {
    let bytes = fs::read(path).map_err(|e| file_err(path, "read", e))?;
    let bad = |msg: &str| MfError::Config(format!("{}: {msg}", path.display()));
    if bytes.len() < 2 || &bytes[0..2] != b"P5" {
        return Err(bad("not a binary PGM (want magic P5)"));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for f in fields.iter_mut() {
        // Skip whitespace and comments before each header field.
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(bad("truncated header")),
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        *f = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("malformed header field"))?;
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(bad("maxval must be 255"));
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(bad("missing whitespace after maxval")),
    }
    let data = &bytes[pos..];
    if data.len() != width * height {
        return Err(bad("payload length does not match header"));
    }
    Ok(Grid::from_vec(height, width, data.to_vec()))
}
