//! Image stacks and the `SPS1` stack file format.
//!
//! Layout (all integers little-endian):
//!
//! | bytes  | content                                             |
//! |--------|-----------------------------------------------------|
//! | 0..4   | magic `SPS1`                                        |
//! | 4..8   | `u32` slice count `m`                               |
//! | 8..12  | `u32` side length `p`                               |
//! | 12     | flags, bit 0 set when intensities lie in `[0, 1]`   |
//! | 13..16 | reserved, zero                                      |
//! | 16..   | `m * p * p` `f32` values, slice-major, row-major    |

use std::fs;
use std::io::Write;
use std::path::Path;

use super::image::{column_major_to_row_major, Image};
use super::DatasetError;

pub const MAGIC: &[u8; 4] = b"SPS1";
pub const HEADER_LEN: usize = 16;
const FLAG_NORMALIZED: u8 = 0x01;

/// One patient's scan: `m` slices of `p`×`p` intensities.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageStack {
    patient_id: String,
    m: usize,
    p: usize,
    data: Vec<f32>,
}

impl ImageStack {
    /// Build a stack from flat slice-major, row-major data.
    pub fn from_flat(
        patient_id: impl Into<String>,
        m: usize,
        p: usize,
        data: Vec<f32>,
    ) -> Result<Self, DatasetError> {
        if m == 0 || p == 0 {
            return Err(DatasetError::EmptyStack);
        }
        if data.len() != m * p * p {
            return Err(DatasetError::Truncated {
                expected: m * p * p,
                found: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(DatasetError::NonFinite);
        }
        Ok(Self {
            patient_id: patient_id.into(),
            m,
            p,
            data,
        })
    }

    /// Build a stack from a list of square slices given as rows.
    pub fn from_slices(
        patient_id: impl Into<String>,
        slices: &[Vec<Vec<f64>>],
    ) -> Result<Self, DatasetError> {
        let m = slices.len();
        let p = slices.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(m * p * p);
        for slice in slices {
            if slice.len() != p || slice.iter().any(|row| row.len() != p) {
                return Err(DatasetError::RaggedSlices);
            }
            data.extend(slice.iter().flatten().map(|&v| v as f32));
        }
        Self::from_flat(patient_id, m, p, data)
    }

    pub fn patient_id(&self) -> &str {
        &self.patient_id
    }

    pub fn set_patient_id(&mut self, id: impl Into<String>) {
        self.patient_id = id.into();
    }

    /// Number of slices.
    pub fn m(&self) -> usize {
        self.m
    }

    /// Side length in pixels.
    pub fn p(&self) -> usize {
        self.p
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Row-major pixels of slice `j`.
    pub fn slice(&self, j: usize) -> &[f32] {
        let len = self.p * self.p;
        &self.data[j * len..(j + 1) * len]
    }

    pub fn slice_image(&self, j: usize) -> Image {
        Image::new(self.p, self.slice(j).iter().map(|&v| f64::from(v)).collect())
    }

    /// Column-major coordinate `i` of slice `j`.
    #[inline]
    pub fn pixel(&self, j: usize, i: usize) -> f32 {
        self.slice(j)[column_major_to_row_major(i, self.p)]
    }

    pub fn is_unit_range(&self) -> bool {
        self.data.iter().all(|v| (0.0..=1.0).contains(v))
    }

    /// Permute slices: slice `j` of the result is slice `order[j]` of `self`.
    pub fn reordered(&self, order: &[usize]) -> Self {
        assert_eq!(order.len(), self.m);
        let mut data = Vec::with_capacity(self.data.len());
        for &j in order {
            data.extend_from_slice(self.slice(j));
        }
        Self { data, ..self.clone() }
    }

    /// Every intensity multiplied by `factor`.
    pub fn scaled(&self, factor: f32) -> Self {
        Self {
            data: self.data.iter().map(|v| v * factor).collect(),
            ..self.clone()
        }
    }

    /// Resample every slice to `p`×`p`.
    pub fn resized(&self, p: usize) -> Self {
        if p == self.p {
            return self.clone();
        }
        let mut data = Vec::with_capacity(self.m * p * p);
        for j in 0..self.m {
            let out = super::resize::resize_bilinear(&self.slice_image(j), p);
            data.extend(out.as_slice().iter().map(|&v| v as f32));
        }
        Self {
            patient_id: self.patient_id.clone(),
            m: self.m,
            p,
            data,
        }
    }

    /// Encode as an `SPS1` byte buffer.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.m as u32).to_le_bytes());
        out.extend_from_slice(&(self.p as u32).to_le_bytes());
        out.push(if self.is_unit_range() { FLAG_NORMALIZED } else { 0 });
        out.extend_from_slice(&[0, 0, 0]);
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Decode an `SPS1` buffer. Raw (unflagged) intensities are normalized to
    /// `[0, 1]`.
    pub fn from_bytes(patient_id: impl Into<String>, bytes: &[u8]) -> Result<Self, DatasetError> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(DatasetError::BadMagic);
        }
        if bytes.len() < HEADER_LEN {
            return Err(DatasetError::Truncated {
                expected: HEADER_LEN,
                found: bytes.len(),
            });
        }
        let m = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let p = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let flags = bytes[12];
        if bytes[13..16] != [0, 0, 0] || flags & !FLAG_NORMALIZED != 0 {
            return Err(DatasetError::BadHeader("reserved header bits must be zero".into()));
        }
        if m < 2 {
            return Err(DatasetError::TooFewSlices(m));
        }
        if p == 0 {
            return Err(DatasetError::EmptyStack);
        }
        let count = (m as u64)
            .checked_mul(p as u64)
            .and_then(|v| v.checked_mul(p as u64))
            .filter(|&v| v <= (usize::MAX / 4) as u64)
            .ok_or_else(|| DatasetError::BadHeader(format!("stack {m}x{p}x{p} is too large")))?
            as usize;
        let payload = &bytes[HEADER_LEN..];
        if payload.len() < 4 * count {
            return Err(DatasetError::Truncated {
                expected: count,
                found: payload.len() / 4,
            });
        }
        if payload.len() > 4 * count {
            return Err(DatasetError::TrailingData(payload.len() - 4 * count));
        }
        let data: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let stack = Self::from_flat(patient_id, m, p, data)?;
        if flags & FLAG_NORMALIZED != 0 {
            if !stack.is_unit_range() {
                return Err(DatasetError::OutOfRange);
            }
            Ok(stack)
        } else {
            normalize_intensity(&stack)
        }
    }
}

/// Read an `SPS1` file. The patient id is the file stem.
pub fn read_stack(path: &Path) -> Result<ImageStack, DatasetError> {
    let bytes = fs::read(path).map_err(|e| DatasetError::io(path, e))?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    ImageStack::from_bytes(id, &bytes)
}

pub fn write_stack(stack: &ImageStack, path: &Path) -> Result<(), DatasetError> {
    let mut file = fs::File::create(path).map_err(|e| DatasetError::io(path, e))?;
    file.write_all(&stack.to_bytes())
        .map_err(|e| DatasetError::io(path, e))
}

/// Affine map of the whole stack onto `[0, 1]` using its global minimum and
/// maximum. A constant stack maps to 0.5 everywhere.
pub fn normalize_intensity(stack: &ImageStack) -> Result<ImageStack, DatasetError> {
    if stack.data.iter().any(|v| !v.is_finite()) {
        return Err(DatasetError::NonFinite);
    }
    let (lo, hi) = stack
        .data
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(f64::from(v)), hi.max(f64::from(v)))
        });
    let range = hi - lo;
    let data = if range > 0.0 {
        stack
            .data
            .iter()
            .map(|&v| ((f64::from(v) - lo) / range).clamp(0.0, 1.0) as f32)
            .collect()
    } else {
        vec![0.5; stack.data.len()]
    };
    Ok(ImageStack {
        data,
        ..stack.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stack(m: usize, p: usize, values: &[f32]) -> ImageStack {
        ImageStack::from_flat("t", m, p, values.to_vec()).unwrap()
    }

    #[test]
    fn header_round_trip_keeps_shape() {
        let values: Vec<f32> = (0..12).map(|i| i as f32 / 11.0).collect();
        let s = stack(3, 2, &values);
        let bytes = s.to_bytes();
        assert_eq!(bytes.len(), 16 + 48);
        assert_eq!(bytes[12], 1);
        let back = ImageStack::from_bytes("t", &bytes).unwrap();
        assert_eq!(back.m(), 3);
        assert_eq!(back.p(), 2);
        assert_eq!(back.slice(1), &values[4..8]);
    }

    #[test]
    fn bad_magic_is_rejected() {
        let mut bytes = stack(2, 1, &[0.0, 1.0]).to_bytes();
        bytes[..4].copy_from_slice(b"XXXX");
        assert!(matches!(
            ImageStack::from_bytes("t", &bytes),
            Err(DatasetError::BadMagic)
        ));
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let bytes = stack(2, 2, &[0.0; 8]).to_bytes();
        let err = ImageStack::from_bytes("t", &bytes[..bytes.len() - 3]).unwrap_err();
        assert!(matches!(err, DatasetError::Truncated { expected: 8, found: 7 }));
    }

    #[test]
    fn single_slice_file_is_rejected() {
        let bytes = stack(1, 2, &[0.0; 4]).to_bytes();
        assert!(matches!(
            ImageStack::from_bytes("t", &bytes),
            Err(DatasetError::TooFewSlices(1))
        ));
    }

    #[test]
    fn non_finite_payload_is_rejected() {
        let mut bytes = stack(2, 1, &[0.0, 1.0]).to_bytes();
        bytes[16..20].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(
            ImageStack::from_bytes("t", &bytes),
            Err(DatasetError::NonFinite)
        ));
    }

    #[test]
    fn raw_flag_triggers_normalization() {
        let raw = stack(2, 1, &[-100.0, 300.0]);
        let bytes = raw.to_bytes();
        assert_eq!(bytes[12], 0);
        let back = ImageStack::from_bytes("t", &bytes).unwrap();
        assert_eq!(back.data(), &[0.0, 1.0]);
    }

    #[test]
    fn normalize_two_point_range() {
        let s = stack(2, 1, &[0.0, 255.0]);
        assert_eq!(normalize_intensity(&s).unwrap().data(), &[0.0, 1.0]);
    }

    #[test]
    fn normalize_constant_maps_to_half() {
        let s = stack(2, 2, &[7.0; 8]);
        assert!(normalize_intensity(&s).unwrap().data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn normalize_hand_affine_map() {
        let s = stack(3, 1, &[-1.0, 0.0, 3.0]);
        assert_eq!(normalize_intensity(&s).unwrap().data(), &[0.0, 0.25, 1.0]);
    }

    #[test]
    fn pixel_uses_column_major_coordinates() {
        // slice 0 rows: [a b; c d] = [1 2; 3 4]
        let s = stack(2, 2, &[1.0, 2.0, 3.0, 4.0, 0.0, 0.0, 0.0, 0.0]);
        let coords: Vec<f32> = (0..4).map(|i| s.pixel(0, i)).collect();
        assert_eq!(coords, vec![1.0, 3.0, 2.0, 4.0]);
    }
}
