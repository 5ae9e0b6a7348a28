//! Procedural test corpus: an oriented bar plus two blobs of unequal size and
//! brightness, so no image maps onto itself under a quarter, half or
//! three-quarter turn.

use ndarray::Array2;
use rand::Rng;

use super::pairs::{contrast_normalize_row, pair_rng};
use super::rotate::{apply_circular_mask, rotate_image};
use super::{Image, ImageSet, Split};
use crate::error::{GaeError, Result};

const MIN_NONZERO_FRACTION: f64 = 0.1;
const MIN_ROTATION_DISTANCE: f64 = 0.1;
const MAX_ATTEMPTS: usize = 1000;
// keeps image streams apart from pair streams drawn with the same seed
const SHAPES_STREAM_KEY: u64 = 0x5348_4150_4553;

fn gaussian(d2: f64, sigma: f64) -> f64 {
    (-d2 / (2.0 * sigma * sigma)).exp()
}

fn draw_candidate<R: Rng>(size: usize, rng: &mut R) -> Image {
    let c = (size as f64 - 1.0) / 2.0;
    let radius = c;
    let scale = size as f64 / 16.0;

    let bar_angle: f64 = rng.random_range(0.0..std::f64::consts::PI);
    let bar_half = rng.random_range(0.35..0.6) * radius;
    let bar_offset = (rng.random_range(-0.2..0.2) * radius, rng.random_range(-0.2..0.2) * radius);
    let bar_width = rng.random_range(0.7..1.2) * scale;
    let (dir_y, dir_x) = bar_angle.sin_cos();

    let mut blobs = Vec::with_capacity(2);
    for (sigma_range, amp) in [((1.6, 2.2), 1.0), ((0.9, 1.3), 0.6)] {
        let r = rng.random_range(0.25..0.6) * radius;
        let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let sigma = rng.random_range(sigma_range.0..sigma_range.1) * scale;
        blobs.push((c + r * phi.sin(), c + r * phi.cos(), sigma, amp));
    }

    let mut image = Array2::from_shape_fn((size, size), |(row, col)| {
        let (py, px) = (row as f64 - c - bar_offset.0, col as f64 - c - bar_offset.1);
        let along = (px * dir_x + py * dir_y).clamp(-bar_half, bar_half);
        let (qy, qx) = (py - along * dir_y, px - along * dir_x);
        let bar = 0.8 * gaussian(qx * qx + qy * qy, bar_width);
        let blob = blobs
            .iter()
            .map(|&(by, bx, sigma, amp)| {
                let d2 = (row as f64 - by).powi(2) + (col as f64 - bx).powi(2);
                amp * gaussian(d2, sigma)
            })
            .fold(0.0, f64::max);
        let v = bar.max(blob).min(1.0);
        if v < 0.02 {
            0.0
        } else {
            v
        }
    });
    apply_circular_mask(&mut image);
    image
}

fn nonzero_fraction(image: &Image) -> f64 {
    image.iter().filter(|&&v| v != 0.0).count() as f64 / image.len() as f64
}

/// Smallest L2 distance between the normalized image and its normalized
/// quarter, half and three-quarter turns.
fn min_rotation_distance(image: &Image) -> f64 {
    let Ok(base) = contrast_normalize_row(image.view().into_shape_with_order(image.len()).unwrap())
    else {
        return 0.0;
    };
    [90.0, 180.0, 270.0]
        .iter()
        .map(|&deg| {
            let turned = rotate_image(image.view(), deg);
            match contrast_normalize_row(turned.view().into_shape_with_order(turned.len()).unwrap()) {
                Ok(t) => base
                    .iter()
                    .zip(&t)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt(),
                Err(_) => 0.0,
            }
        })
        .fold(f64::INFINITY, f64::min)
}

/// `n` images on a `size × size` grid, each drawn from its own RNG stream so
/// the corpus depends only on `(seed, index)`.
pub fn synthetic_shapes(n: usize, size: usize, seed: u64) -> Result<ImageSet> {
    if size < 8 {
        return Err(GaeError::Config(format!(
            "synthetic images need size >= 8, got {size}"
        )));
    }
    if n == 0 {
        return Err(GaeError::Empty("requested zero synthetic images".into()));
    }
    let images = (0..n)
        .map(|i| {
            let mut rng = pair_rng(seed ^ SHAPES_STREAM_KEY, i as u64);
            for _ in 0..MAX_ATTEMPTS {
                let candidate = draw_candidate(size, &mut rng);
                if nonzero_fraction(&candidate) >= MIN_NONZERO_FRACTION
                    && min_rotation_distance(&candidate) > MIN_ROTATION_DISTANCE
                {
                    return Ok(candidate);
                }
            }
            Err(GaeError::Degenerate(format!(
                "could not draw an acceptable synthetic image {i}"
            )))
        })
        .collect::<Result<Vec<_>>>()?;
    ImageSet::new(images, Split::Train)
}
