//! IDX files: big-endian magic `0x00000803` (images, 3 dimensions) or
//! `0x00000801` (labels, 1 dimension), then the dimension sizes, then bytes.

use std::path::Path;

use gradcert_core::{Dataset, Tensor};

use crate::error::{AppError, AppResult, FormatError};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

fn read_u32(bytes: &[u8], offset: usize, file: &str, what: &str) -> Result<u32, FormatError> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| FormatError::at_offset(file, offset as u64, format!("truncated header: missing {what}")))
}

fn check_magic(bytes: &[u8], expected: u32, file: &str) -> Result<(), FormatError> {
    let magic = read_u32(bytes, 0, file, "magic number")?;
    if magic != expected {
        return Err(FormatError::at_offset(file, 0, format!("bad magic 0x{magic:08x}, expected 0x{expected:08x}")));
    }
    Ok(())
}

fn payload<'a>(bytes: &'a [u8], start: usize, len: usize, file: &str) -> Result<&'a [u8], FormatError> {
    if bytes.len() < start + len {
        return Err(FormatError::at_offset(
            file,
            bytes.len() as u64,
            format!("truncated data: expected {len} bytes from offset {start}, found {}", bytes.len() - start),
        ));
    }
    if bytes.len() > start + len {
        return Err(FormatError::at_offset(file, (start + len) as u64, format!("{} trailing bytes", bytes.len() - start - len)));
    }
    Ok(&bytes[start..])
}

/// Decoded image file: `count` images of `rows x cols` pixels scaled to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Images {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<f64>,
}

pub fn parse_images(bytes: &[u8], file: &str) -> Result<Images, FormatError> {
    check_magic(bytes, IMAGES_MAGIC, file)?;
    let count = read_u32(bytes, 4, file, "image count")? as usize;
    let rows = read_u32(bytes, 8, file, "row count")? as usize;
    let cols = read_u32(bytes, 12, file, "column count")? as usize;
    if rows == 0 || cols == 0 {
        return Err(FormatError::at_offset(file, 8, format!("empty image dimensions {rows}x{cols}")));
    }
    let len = count
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or_else(|| FormatError::at_offset(file, 4, "dimension product overflows"))?;
    let data = payload(bytes, 16, len, file)?;
    Ok(Images { count, rows, cols, pixels: data.iter().map(|&b| f64::from(b) / 255.0).collect() })
}

pub fn parse_labels(bytes: &[u8], file: &str) -> Result<Vec<usize>, FormatError> {
    check_magic(bytes, LABELS_MAGIC, file)?;
    let count = read_u32(bytes, 4, file, "label count")? as usize;
    Ok(payload(bytes, 8, count, file)?.iter().map(|&b| usize::from(b)).collect())
}

pub fn encode_images(rows: usize, cols: usize, images: &[Vec<u8>]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.len() * rows * cols);
    for v in [IMAGES_MAGIC, images.len() as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    for img in images {
        out.extend_from_slice(img);
    }
    out
}

pub fn encode_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    for v in [LABELS_MAGIC, labels.len() as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(labels);
    out
}

/// Builds a dataset from decoded image and label bytes.
pub fn decode_dataset(images: &[u8], images_name: &str, labels: &[u8], labels_name: &str) -> Result<Dataset, FormatError> {
    let img = parse_images(images, images_name)?;
    let labels = parse_labels(labels, labels_name)?;
    if labels.len() != img.count {
        return Err(FormatError::at_offset(labels_name, 4, format!("{} labels for {} images", labels.len(), img.count)));
    }
    let classes = labels.iter().copied().max().map_or(1, |m| m + 1).max(10);
    let n = img.rows * img.cols;
    let ds = Dataset::new(
        Path::new(images_name).file_name().map_or("idx".to_string(), |s| s.to_string_lossy().into_owned()),
        Tensor::matrix(img.count, n, img.pixels),
        labels,
        classes,
        vec![1, img.rows, img.cols],
        vec![0.0; n],
        vec![1.0; n],
    )
    .map_err(|e| FormatError::in_file(images_name, e.to_string()))?;
    Ok(ds)
}

pub fn load_idx(images: &Path, labels: &Path) -> AppResult<Dataset> {
    let ib = std::fs::read(images).map_err(|e| AppError::input(images, e))?;
    let lb = std::fs::read(labels).map_err(|e| AppError::input(labels, e))?;
    Ok(decode_dataset(&ib, &images.display().to_string(), &lb, &labels.display().to_string())?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decodes_crafted_image() {
        let bytes = encode_images(2, 2, &[vec![0, 255, 128, 64]]);
        let img = parse_images(&bytes, "img").unwrap();
        assert_eq!(img.pixels, vec![0.0, 1.0, 128.0 / 255.0, 64.0 / 255.0]);
        assert!((img.pixels[2] - 0.50196).abs() < 1e-5 && (img.pixels[3] - 0.25098).abs() < 1e-5);
    }

    #[test]
    fn rejects_swapped_magic() {
        let err = parse_labels(&encode_images(1, 1, &[vec![3]]), "lbl").unwrap_err();
        assert!(err.to_string().contains("bad magic 0x00000803"), "{err}");
    }

    #[test]
    fn enforces_size_consistency() {
        let mut bytes = encode_images(2, 2, &[vec![1, 2, 3, 4]]);
        bytes.pop();
        assert!(parse_images(&bytes, "img").unwrap_err().to_string().contains("truncated data"));
        let labels = encode_labels(&[1, 2]);
        let images = encode_images(2, 2, &[vec![0; 4]]);
        assert!(decode_dataset(&images, "i", &labels, "l").unwrap_err().to_string().contains("2 labels for 1 images"));
    }
}
