use ndarray::{Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::rotate::{apply_circular_mask, rotate_image};
use super::{mean_std, ImageSet, PairDataset, TransformationSet};
use crate::error::{GaeError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairOptions {
    /// Zero everything outside the inscribed disk after rotating.
    pub circular_mask: bool,
}

impl Default for PairOptions {
    fn default() -> Self {
        PairOptions {
            circular_mask: true,
        }
    }
}

/// RNG stream for one pair, independent of generation order.
pub(crate) fn pair_rng(seed: u64, pair_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(pair_index);
    rng
}

/// Builds `pairs_per_image` rotated pairs from every image. Each pair starts
/// from a uniformly random base orientation in `[0, 360)`; `y` is rotated a
/// further class angle drawn uniformly from `tset`, which becomes the label.
pub fn make_rotation_pairs(
    images: &ImageSet,
    tset: &TransformationSet,
    pairs_per_image: usize,
    seed: u64,
    options: PairOptions,
) -> Result<PairDataset> {
    if images.is_empty() {
        return Err(GaeError::Empty("no images to build pairs from".into()));
    }
    if tset.angles.is_empty() {
        return Err(GaeError::Empty("transformation set has no angles".into()));
    }
    let side = images.side();
    let p = side * side;
    let n = images.len() * pairs_per_image;
    let mut x = Array2::<f32>::zeros((n, p));
    let mut y = Array2::<f32>::zeros((n, p));
    let mut labels = Vec::with_capacity(n);
    for (img_idx, image) in images.images.iter().enumerate() {
        for j in 0..pairs_per_image {
            let pair = img_idx * pairs_per_image + j;
            let mut rng = pair_rng(seed, pair as u64);
            let base: f64 = rng.random_range(0.0..360.0);
            let theta = tset.angles[rng.random_range(0..tset.angles.len())];
            let mut first = rotate_image(image.view(), base);
            let mut second = rotate_image(image.view(), base + f64::from(theta));
            if options.circular_mask {
                apply_circular_mask(&mut first);
                apply_circular_mask(&mut second);
            }
            x.row_mut(pair)
                .iter_mut()
                .zip(first.iter())
                .for_each(|(d, &s)| *d = s as f32);
            y.row_mut(pair)
                .iter_mut()
                .zip(second.iter())
                .for_each(|(d, &s)| *d = s as f32);
            labels.push(theta as i16);
        }
    }
    PairDataset::new(x, y, labels)
}

/// Zero mean, unit population standard deviation.
pub fn contrast_normalize_row(row: ArrayView1<f64>) -> Result<Vec<f64>> {
    let (mean, std) = mean_std(row);
    if !(std >= 1e-8) {
        return Err(GaeError::Degenerate(format!(
            "constant image (std {std:e}) cannot be contrast-normalized"
        )));
    }
    Ok(row.iter().map(|v| (v - mean) / std).collect())
}

fn normalize_rows(m: &Array2<f32>, side: &str) -> Result<Array2<f32>> {
    let mut out = Array2::zeros(m.raw_dim());
    for (i, (src, mut dst)) in m.rows().into_iter().zip(out.rows_mut()).enumerate() {
        let row = contrast_normalize_row(src.mapv(f64::from).view())
            .map_err(|e| GaeError::Degenerate(format!("{side} row {i}: {e}")))?;
        dst.iter_mut().zip(row).for_each(|(d, v)| *d = v as f32);
    }
    Ok(out)
}

/// Per-image contrast normalization of both sides of every pair.
pub fn contrast_normalize(dataset: &PairDataset) -> Result<PairDataset> {
    let x = normalize_rows(&dataset.x, "x")?;
    let y = normalize_rows(&dataset.y, "y")?;
    let mut out = PairDataset::new(x, y, dataset.angle_label.clone())?;
    out.normalized = true;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synthetic_shapes, Split};
    use ndarray::array;

    fn shapes(n: usize, seed: u64) -> ImageSet {
        synthetic_shapes(n, 16, seed).unwrap()
    }

    #[test]
    fn hand_normalized_row() {
        let row = contrast_normalize_row(array![0.0, 2.0].view()).unwrap();
        assert_eq!(row, vec![-1.0, 1.0]);
        assert!(matches!(
            contrast_normalize_row(array![0.0, 0.0, 0.0].view()),
            Err(GaeError::Degenerate(_))
        ));
    }

    #[test]
    fn normalized_rows_have_unit_stats_and_idempotence() {
        let pairs = make_rotation_pairs(
            &shapes(20, 1),
            &TransformationSet::mnistr20(),
            3,
            5,
            PairOptions::default(),
        )
        .unwrap();
        assert!(!pairs.normalized);
        let once = contrast_normalize(&pairs).unwrap();
        assert!(once.normalized);
        for row in once.x.rows().into_iter().chain(once.y.rows()) {
            let (mean, std) = mean_std(row.mapv(f64::from).view());
            assert!(mean.abs() < 1e-6, "{mean}");
            assert!((std - 1.0).abs() < 1e-6, "{std}");
        }
        let twice = contrast_normalize(&once).unwrap();
        let diff = (&twice.x - &once.x)
            .iter()
            .chain((&twice.y - &once.y).iter())
            .fold(0.0f32, |m, v| m.max(v.abs()));
        assert!(diff < 1e-6, "{diff}");
    }

    #[test]
    fn constant_image_is_rejected() {
        let blank = ImageSet::new(vec![Array2::zeros((8, 8))], Split::Train).unwrap();
        let pairs =
            make_rotation_pairs(&blank, &TransformationSet::mnistr20(), 1, 0, PairOptions::default())
                .unwrap();
        assert!(matches!(contrast_normalize(&pairs), Err(GaeError::Degenerate(_))));
    }

    #[test]
    fn labels_come_from_the_set() {
        let tset = TransformationSet::mnistr20();
        let pairs = make_rotation_pairs(&shapes(30, 2), &tset, 4, 9, PairOptions::default()).unwrap();
        assert_eq!(pairs.len(), 120);
        assert!(pairs.angle_label.iter().all(|&a| tset.contains(a as i32)));
    }

    #[test]
    fn label_histogram_is_uniform() {
        let tset = TransformationSet::mnistr20();
        let images = shapes(100, 3);
        let pairs = make_rotation_pairs(&images, &tset, 180, 17, PairOptions::default()).unwrap();
        assert_eq!(pairs.len(), 18_000);
        let hist = pairs.label_histogram();
        assert_eq!(hist.len(), 18);
        let n: f64 = 18_000.0;
        let p = 1.0 / 18.0;
        let sigma = (n * p * (1.0 - p)).sqrt();
        for (angle, count) in hist {
            assert!((count as f64 - n * p).abs() < 3.0 * sigma, "{angle}: {count}");
        }
    }

    #[test]
    fn zero_angle_from_zero_base_gives_identical_sides() {
        let images = shapes(1, 4);
        let tset = TransformationSet::custom(vec![0]).unwrap();
        // base angle is random; rotating by base and base + 0 must coincide exactly
        let pairs = make_rotation_pairs(&images, &tset, 5, 1, PairOptions::default()).unwrap();
        assert_eq!(pairs.x, pairs.y);
        let upright = rotate_image(images.images[0].view(), 0.0);
        assert_eq!(upright, images.images[0]);
    }

    #[test]
    fn rotating_x_by_label_recovers_y() {
        let images = shapes(10, 6);
        let pairs = make_rotation_pairs(
            &images,
            &TransformationSet::mnistr20(),
            4,
            8,
            PairOptions::default(),
        )
        .unwrap();
        let side = 16;
        let c = 7.5;
        for i in 0..pairs.len() {
            let x = pairs.x.row(i).mapv(f64::from).into_shape_with_order((side, side)).unwrap();
            let y = pairs.y.row(i).mapv(f64::from).into_shape_with_order((side, side)).unwrap();
            let rotated = rotate_image(x.view(), f64::from(pairs.angle_label[i]));
            let mut total = 0.0;
            let mut count = 0;
            for ((r, col), &v) in rotated.indexed_iter() {
                if ((r as f64 - c).powi(2) + (col as f64 - c).powi(2)).sqrt() < 5.0 {
                    total += (v - y[[r, col]]).abs();
                    count += 1;
                }
            }
            assert!(total / (count as f64) < 0.05, "pair {i}: {}", total / count as f64);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let images = shapes(5, 7);
        let tset = TransformationSet::mnistr1();
        let a = make_rotation_pairs(&images, &tset, 3, 99, PairOptions::default()).unwrap();
        let b = make_rotation_pairs(&images, &tset, 3, 99, PairOptions::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_inputs_are_errors() {
        let images = shapes(2, 1);
        let empty = TransformationSet {
            name: crate::data::TransformationName::Custom,
            angles: vec![],
        };
        assert!(make_rotation_pairs(&images, &empty, 1, 0, PairOptions::default()).is_err());
    }
}
