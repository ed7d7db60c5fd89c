//! Big-endian IDX files as used by MNIST.

use crate::error::{Error, Result};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Parse {
            offset: bytes.len() as u64,
            message: format!("header truncated, expected 4 bytes at offset {offset}"),
        })
}

fn check_magic(bytes: &[u8], expected: u32) -> Result<()> {
    let magic = read_u32(bytes, 0)?;
    if magic != expected {
        return Err(Error::Parse {
            offset: 0,
            message: format!("bad magic 0x{magic:08X}, expected 0x{expected:08X}"),
        });
    }
    Ok(())
}

fn payload(bytes: &[u8], header: usize, len: usize) -> Result<&[u8]> {
    let end = header + len;
    if bytes.len() < end {
        return Err(Error::Parse {
            offset: bytes.len() as u64,
            message: format!("payload truncated, expected {len} bytes after offset {header}"),
        });
    }
    if bytes.len() > end {
        return Err(Error::Parse {
            offset: end as u64,
            message: format!("{} trailing bytes", bytes.len() - end),
        });
    }
    Ok(&bytes[header..end])
}

/// Raw images: `(count, rows, cols, pixels)` with one byte per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

pub fn decode_images(bytes: &[u8]) -> Result<IdxImages> {
    check_magic(bytes, IMAGE_MAGIC)?;
    let count = read_u32(bytes, 4)? as usize;
    let rows = read_u32(bytes, 8)? as usize;
    let cols = read_u32(bytes, 12)? as usize;
    let pixels = payload(bytes, 16, count * rows * cols)?.to_vec();
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels,
    })
}

pub fn decode_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    check_magic(bytes, LABEL_MAGIC)?;
    let count = read_u32(bytes, 4)? as usize;
    Ok(payload(bytes, 8, count)?.to_vec())
}

pub fn encode_images(images: &IdxImages) -> Result<Vec<u8>> {
    if images.pixels.len() != images.count * images.rows * images.cols {
        return Err(Error::shape(format!(
            "{} pixels for {}x{}x{} images",
            images.pixels.len(),
            images.count,
            images.rows,
            images.cols
        )));
    }
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    for v in [IMAGE_MAGIC, images.count as u32, images.rows as u32, images.cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(&images.pixels);
    Ok(out)
}

pub fn encode_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image_file(count: u32, pixels: &[u8]) -> Vec<u8> {
        let mut f = Vec::new();
        for v in [2051u32, count, 28, 28] {
            f.extend_from_slice(&v.to_be_bytes());
        }
        f.extend_from_slice(pixels);
        f
    }

    #[test]
    fn two_images() {
        let pixels: Vec<u8> = (0..2 * 784).map(|i| (i % 256) as u8).collect();
        let img = decode_images(&image_file(2, &pixels)).unwrap();
        assert_eq!((img.count, img.rows, img.cols), (2, 28, 28));
        assert_eq!(img.pixels, pixels);
    }

    #[test]
    fn two_labels() {
        let f = [0, 0, 8, 1, 0, 0, 0, 2, 7, 3];
        assert_eq!(decode_labels(&f).unwrap(), vec![7, 3]);
    }

    #[test]
    fn bad_magic_at_offset_zero() {
        let f = [0xDE, 0xAD, 0xBE, 0xEF, 0, 0, 0, 0];
        match decode_labels(&f) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("{other:?}"),
        }
        match decode_images(&f) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn truncated_payload_names_end() {
        let f = image_file(2, &[0; 784 + 10]);
        match decode_images(&f) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, (16 + 794) as u64),
            other => panic!("{other:?}"),
        }
        match decode_labels(&[0, 0, 8, 1, 0, 0]) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 6),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn trailing_bytes_rejected() {
        assert!(matches!(
            decode_labels(&[0, 0, 8, 1, 0, 0, 0, 1, 4, 4]),
            Err(Error::Parse { offset: 9, .. })
        ));
    }

    #[test]
    fn round_trip() {
        let pixels: Vec<u8> = (0..3 * 784).map(|i| (i * 7 % 256) as u8).collect();
        let f = image_file(3, &pixels);
        assert_eq!(encode_images(&decode_images(&f).unwrap()).unwrap(), f);
        let l = encode_labels(&[1, 2, 9]);
        assert_eq!(encode_labels(&decode_labels(&l).unwrap()), l);
    }
}
