//! IDX container parsing (big-endian header, unsigned byte payload).

use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;

use super::image::GrayImage;
use crate::error::{Error, Result};

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

/// Read a whole IDX file, transparently inflating gzip content.
pub fn read_idx_file(path: &Path) -> Result<Vec<u8>> {
    let raw = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Parse {
            offset: bytes.len(),
            message: format!("header truncated, needed 4 bytes at offset {offset}"),
        })
}

fn check_magic(bytes: &[u8], expected: u32) -> Result<()> {
    let magic = be_u32(bytes, 0)?;
    if magic != expected {
        return Err(Error::Parse {
            offset: 0,
            message: format!("bad magic 0x{magic:08x}, expected 0x{expected:08x}"),
        });
    }
    Ok(())
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<Vec<GrayImage>> {
    check_magic(bytes, IMAGE_MAGIC)?;
    let count = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let size = rows * cols;
    let payload = &bytes[16..];
    let mut images = Vec::with_capacity(count);
    for i in 0..count {
        let start = i * size;
        let Some(chunk) = payload.get(start..start + size) else {
            return Err(Error::Parse {
                offset: bytes.len(),
                message: format!("payload truncated inside image {i} of {count}"),
            });
        };
        images.push(GrayImage::new(cols, rows, chunk.to_vec())?);
    }
    Ok(images)
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    check_magic(bytes, LABEL_MAGIC)?;
    let count = be_u32(bytes, 4)? as usize;
    let payload = bytes.get(8..8 + count).ok_or_else(|| Error::Parse {
        offset: bytes.len(),
        message: format!("payload truncated, expected {count} labels"),
    })?;
    if let Some(pos) = payload.iter().position(|&l| l > 9) {
        return Err(Error::Parse {
            offset: 8 + pos,
            message: format!("label {} outside 0-9", payload[pos]),
        });
    }
    Ok(payload.to_vec())
}
