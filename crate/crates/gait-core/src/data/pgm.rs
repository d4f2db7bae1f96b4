//! Minimal binary PGM (P5, maxval 255) reader/writer.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::DataError;

pub fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<(), DataError> {
    debug_assert_eq!(pixels.len(), width * height);
    let p = path.display().to_string();
    let mut f = fs::File::create(path).map_err(|e| DataError::io(&p, e))?;
    f.write_all(format!("P5\n{width} {height}\n255\n").as_bytes())
        .map_err(|e| DataError::io(&p, e))?;
    f.write_all(pixels).map_err(|e| DataError::io(&p, e))?;
    Ok(())
}

/// Returns (width, height, pixels).
pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u8>), DataError> {
    let p = path.display().to_string();
    let bytes = fs::read(path).map_err(|e| DataError::io(&p, e))?;
    if !bytes.starts_with(b"P5") {
        return Err(DataError::parse(&p, "not a binary PGM (missing P5 magic)"));
    }
    // Header: magic, width, height, maxval as whitespace-separated tokens,
    // with optional '#' comment lines.
    let mut pos = 2usize;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // skip whitespace and comments
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err(DataError::parse(&p, "malformed PGM header"));
        }
        let text = std::str::from_utf8(&bytes[start..pos])
            .map_err(|_| DataError::parse(&p, "malformed PGM header"))?;
        *field = text
            .parse()
            .map_err(|_| DataError::parse(&p, "malformed PGM header"))?;
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(DataError::parse(&p, format!("unsupported maxval {maxval}")));
    }
    // exactly one whitespace byte separates header and payload
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(DataError::parse(&p, "malformed PGM header"));
    }
    pos += 1;
    let expected = width * height;
    let payload = &bytes[pos..];
    if payload.len() != expected {
        return Err(DataError::parse(
            &p,
            format!("expected {expected} pixel bytes, got {}", payload.len()),
        ));
    }
    Ok((width, height, payload.to_vec()))
}
