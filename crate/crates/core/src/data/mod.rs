//! Image ingestion, rotated pair construction and contrast normalization.

mod idx;
mod io;
mod pairs;
mod rotate;
mod synthetic;

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{GaeError, Result};

pub use idx::{load_idx, load_idx_labels, parse_idx_images, parse_idx_labels};
pub use io::{read_pairs, write_pairs, PAIR_MAGIC};
pub use pairs::{contrast_normalize, contrast_normalize_row, make_rotation_pairs, PairOptions};
pub use rotate::{apply_circular_mask, center_crop, resample_area, rotate_image};
pub use synthetic::synthetic_shapes;

/// A square grayscale image, indexed `[row, col]`.
pub type Image = Array2<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageSet {
    pub images: Vec<Image>,
    pub split: Split,
}

impl ImageSet {
    pub fn new(images: Vec<Image>, split: Split) -> Result<Self> {
        let Some(first) = images.first() else {
            return Err(GaeError::Empty("image set has no images".into()));
        };
        let (h, w) = first.dim();
        if h != w {
            return Err(GaeError::Config(format!("images must be square, got {h}×{w}")));
        }
        if let Some(bad) = images.iter().position(|im| im.dim() != (h, w)) {
            return Err(GaeError::Config(format!(
                "image {bad} has shape {:?}, expected {h}×{w}",
                images[bad].dim()
            )));
        }
        Ok(ImageSet { images, split })
    }

    pub fn side(&self) -> usize {
        self.images[0].nrows()
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Applies `f` to every image, e.g. cropping and downsampling.
    pub fn map_images(&self, f: impl Fn(&Image) -> Image) -> Result<Self> {
        ImageSet::new(self.images.iter().map(f).collect(), self.split)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TransformationName {
    #[serde(rename = "mnistr20")]
    Mnistr20,
    #[serde(rename = "mnistr20_10")]
    Mnistr20_10,
    #[serde(rename = "mnistr1")]
    Mnistr1,
    #[serde(rename = "custom")]
    Custom,
}

/// Discrete rotation classes, in integer degrees within `[-180, 179]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransformationSet {
    pub name: TransformationName,
    pub angles: Vec<i32>,
}

impl TransformationSet {
    /// `{-180, -160, …, 160}`.
    pub fn mnistr20() -> Self {
        TransformationSet {
            name: TransformationName::Mnistr20,
            angles: (-180..180).step_by(20).collect(),
        }
    }

    /// `{-170, -150, …, 170}`.
    pub fn mnistr20_10() -> Self {
        TransformationSet {
            name: TransformationName::Mnistr20_10,
            angles: (-170..180).step_by(20).collect(),
        }
    }

    /// Every integer angle in `[-180, 179]`.
    pub fn mnistr1() -> Self {
        TransformationSet {
            name: TransformationName::Mnistr1,
            angles: (-180..180).collect(),
        }
    }

    pub fn custom(mut angles: Vec<i32>) -> Result<Self> {
        if angles.is_empty() {
            return Err(GaeError::Empty("transformation set has no angles".into()));
        }
        if let Some(a) = angles.iter().find(|a| !(-180..180).contains(*a)) {
            return Err(GaeError::Config(format!("angle {a} outside [-180, 179]")));
        }
        angles.sort_unstable();
        angles.dedup();
        Ok(TransformationSet {
            name: TransformationName::Custom,
            angles,
        })
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "mnistr20" => Ok(Self::mnistr20()),
            "mnistr20_10" | "mnistr20-10" | "mnistr20/10" => Ok(Self::mnistr20_10()),
            "mnistr1" => Ok(Self::mnistr1()),
            other => Err(GaeError::Config(format!("unknown transformation set '{other}'"))),
        }
    }

    pub fn contains(&self, angle: i32) -> bool {
        self.angles.binary_search(&angle).is_ok()
    }
}

/// Matched image pairs, one flattened image per row. Labels are only used
/// for evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct PairDataset {
    pub x: Array2<f32>,
    pub y: Array2<f32>,
    pub angle_label: Vec<i16>,
    pub normalized: bool,
}

impl PairDataset {
    pub fn new(x: Array2<f32>, y: Array2<f32>, angle_label: Vec<i16>) -> Result<Self> {
        if x.dim() != y.dim() {
            return Err(GaeError::Config(format!(
                "x has shape {:?} but y has shape {:?}",
                x.dim(),
                y.dim()
            )));
        }
        if angle_label.len() != x.nrows() {
            return Err(GaeError::Shape {
                context: "pair labels",
                expected: x.nrows(),
                actual: angle_label.len(),
            });
        }
        let normalized = rows_normalized(&x) && rows_normalized(&y);
        Ok(PairDataset {
            x,
            y,
            angle_label,
            normalized,
        })
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.x.ncols()
    }

    /// Side length of the square images, if `input_dim` is a perfect square.
    pub fn side(&self) -> Option<usize> {
        let p = self.input_dim();
        let s = (p as f64).sqrt().round() as usize;
        (s * s == p).then_some(s)
    }

    pub fn x_f64(&self) -> Array2<f64> {
        self.x.mapv(f64::from)
    }

    pub fn y_f64(&self) -> Array2<f64> {
        self.y.mapv(f64::from)
    }

    /// Rows `indices` of `x` and `y`, widened to f64.
    pub fn gather(&self, indices: &[usize]) -> (Array2<f64>, Array2<f64>) {
        let p = self.input_dim();
        let mut x = Array2::zeros((indices.len(), p));
        let mut y = Array2::zeros((indices.len(), p));
        for (r, &i) in indices.iter().enumerate() {
            x.row_mut(r).assign(&self.x.row(i).mapv(f64::from));
            y.row_mut(r).assign(&self.y.row(i).mapv(f64::from));
        }
        (x, y)
    }

    /// Histogram of labels, sorted by angle.
    pub fn label_histogram(&self) -> Vec<(i16, usize)> {
        let mut counts = std::collections::BTreeMap::new();
        for &a in &self.angle_label {
            *counts.entry(a).or_insert(0usize) += 1;
        }
        counts.into_iter().collect()
    }
}

/// Mean and population standard deviation.
pub(crate) fn mean_std(row: ArrayView1<f64>) -> (f64, f64) {
    let n = row.len() as f64;
    let mean = row.sum() / n;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn rows_normalized(m: &Array2<f32>) -> bool {
    m.nrows() > 0
        && m.rows().into_iter().all(|r| {
            let (mean, std) = mean_std(r.mapv(f64::from).view());
            mean.abs() < 1e-5 && (std - 1.0).abs() < 1e-5
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn angle_sets_are_exact() {
        let r20 = TransformationSet::mnistr20();
        assert_eq!(r20.angles.len(), 18);
        assert_eq!(r20.angles.first(), Some(&-180));
        assert_eq!(r20.angles.last(), Some(&160));
        let r20_10 = TransformationSet::mnistr20_10();
        assert_eq!(r20_10.angles.len(), 18);
        assert_eq!(r20_10.angles.first(), Some(&-170));
        assert_eq!(r20_10.angles.last(), Some(&170));
        assert!(r20.angles.iter().all(|a| !r20_10.contains(*a)));
        let r1 = TransformationSet::mnistr1();
        assert_eq!(r1.angles.len(), 360);
        assert_eq!((r1.angles[0], r1.angles[359]), (-180, 179));
    }

    #[test]
    fn custom_set_validation() {
        assert!(TransformationSet::custom(vec![]).is_err());
        assert!(TransformationSet::custom(vec![180]).is_err());
        let s = TransformationSet::custom(vec![30, -30, 30]).unwrap();
        assert_eq!(s.angles, vec![-30, 30]);
    }

    #[test]
    fn image_set_rejects_bad_shapes() {
        assert!(ImageSet::new(vec![], Split::Train).is_err());
        assert!(ImageSet::new(vec![Array2::zeros((2, 3))], Split::Train).is_err());
        assert!(ImageSet::new(vec![Array2::zeros((2, 2)), Array2::zeros((3, 3))], Split::Test).is_err());
    }
}
