//! Target explanations for targeted certification and attacks.

use std::path::Path;

use gradcert_core::Tensor;

use crate::error::{AppError, AppResult, FormatError};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Corner {
    TopLeft,
    TopRight,
    BottomLeft,
    BottomRight,
}

impl Corner {
    pub const ALL: [Corner; 4] = [Corner::TopLeft, Corner::TopRight, Corner::BottomLeft, Corner::BottomRight];

    pub fn name(self) -> &'static str {
        match self {
            Corner::TopLeft => "top-left",
            Corner::TopRight => "top-right",
            Corner::BottomLeft => "bottom-left",
            Corner::BottomRight => "bottom-right",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Target {
    pub name: String,
    pub tensor: Tensor,
}

/// Scales `t` to unit root-mean-square.
pub fn unit_rms(t: &Tensor) -> Tensor {
    let rms = rms(t);
    if rms > 0.0 {
        t.scale(1.0 / rms)
    } else {
        t.clone()
    }
}

pub fn rms(t: &Tensor) -> f64 {
    if t.is_empty() {
        0.0
    } else {
        t.l2_norm() / (t.len() as f64).sqrt()
    }
}

/// A `k x k` block of ones at `inset` pixels from `corner`, on every channel,
/// scaled to unit RMS. `shape` is `[channels, height, width]`.
pub fn corner_mask(shape: &[usize], corner: Corner, inset: usize, k: usize) -> AppResult<Tensor> {
    let [c, h, w] = shape else {
        return Err(AppError::Config(format!("corner masks need image inputs [channels, height, width], got {shape:?}")));
    };
    if k == 0 || inset + k > *h || inset + k > *w {
        return Err(AppError::Config(format!("a {k}x{k} mask at inset {inset} does not fit a {h}x{w} image")));
    }
    let (r0, c0) = match corner {
        Corner::TopLeft => (inset, inset),
        Corner::TopRight => (inset, w - inset - k),
        Corner::BottomLeft => (h - inset - k, inset),
        Corner::BottomRight => (h - inset - k, w - inset - k),
    };
    let mut data = vec![0.0; c * h * w];
    for ch in 0..*c {
        for r in r0..r0 + k {
            for col in c0..c0 + k {
                data[(ch * h + r) * w + col] = 1.0;
            }
        }
    }
    Ok(unit_rms(&Tensor::new(shape.to_vec(), data)?))
}

/// Four corners times `insets` offsets.
pub fn corner_masks(shape: &[usize], insets: usize, k: usize) -> AppResult<Vec<Target>> {
    let mut out = Vec::with_capacity(4 * insets);
    for corner in Corner::ALL {
        for inset in 0..insets {
            out.push(Target { name: format!("{}-{inset}", corner.name()), tensor: corner_mask(shape, corner, inset, k)? });
        }
    }
    Ok(out)
}

/// Explicit targets from a JSON array of flat arrays, each reshaped to
/// `shape` and scaled to unit RMS.
pub fn load_targets(path: &Path, shape: &[usize]) -> AppResult<Vec<Target>> {
    let file = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|e| AppError::input(path, e))?;
    let rows: Vec<Vec<f64>> =
        serde_json::from_str(&text).map_err(|e| FormatError::in_file(&file, format!("expected an array of number arrays: {e}")))?;
    let n: usize = shape.iter().product();
    rows.into_iter()
        .enumerate()
        .map(|(i, row)| {
            if row.len() != n {
                return Err(FormatError::at_row(&file, i, format!("target has {} values, the model input has {n}", row.len())).into());
            }
            if row.iter().all(|v| *v == 0.0) {
                return Err(FormatError::at_row(&file, i, "target is all zeros").into());
            }
            Ok(Target { name: format!("target-{i}"), tensor: unit_rms(&Tensor::new(shape.to_vec(), row)?) })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn twenty_distinct_unit_rms_masks() {
        let masks = corner_masks(&[1, 28, 28], 5, 5).unwrap();
        assert_eq!(masks.len(), 20);
        for (i, m) in masks.iter().enumerate() {
            assert!((rms(&m.tensor) - 1.0).abs() < 1e-12);
            assert_eq!(m.tensor.data().iter().filter(|v| **v > 0.0).count(), 25);
            for other in &masks[i + 1..] {
                assert_ne!(m.tensor, other.tensor);
            }
        }
    }

    #[test]
    fn corner_positions() {
        let on = |corner, inset| -> Vec<usize> {
            let m = corner_mask(&[1, 4, 4], corner, inset, 2).unwrap();
            m.data().iter().enumerate().filter(|(_, v)| **v > 0.0).map(|(i, _)| i).collect()
        };
        assert_eq!(on(Corner::TopLeft, 0), vec![0, 1, 4, 5]);
        assert_eq!(on(Corner::TopRight, 0), vec![2, 3, 6, 7]);
        assert_eq!(on(Corner::BottomLeft, 0), vec![8, 9, 12, 13]);
        assert_eq!(on(Corner::BottomRight, 1), vec![5, 6, 9, 10]);
    }

    #[test]
    fn oversized_mask_is_rejected() {
        assert!(corner_mask(&[1, 4, 4], Corner::TopLeft, 2, 3).is_err());
        assert!(corner_mask(&[16], Corner::TopLeft, 0, 1).is_err());
    }
}
