use ndarray::{Array2, ArrayView2};

/// `sin`/`cos` with exact values at multiples of 90°.
fn exact_sin_cos(degrees: f64) -> (f64, f64) {
    let (s, c) = degrees.to_radians().sin_cos();
    let snap = |v: f64| if (v - v.round()).abs() < 1e-12 { v.round() } else { v };
    (snap(s), snap(c))
}

fn sample_bilinear(image: &ArrayView2<f64>, row: f64, col: f64) -> f64 {
    let (h, w) = image.dim();
    let r0 = row.floor();
    let c0 = col.floor();
    let fr = row - r0;
    let fc = col - c0;
    let at = |r: f64, c: f64| -> f64 {
        if r < 0.0 || c < 0.0 || r >= h as f64 || c >= w as f64 {
            0.0
        } else {
            image[[r as usize, c as usize]]
        }
    };
    let mut value = 0.0;
    for (dr, wr) in [(0.0, 1.0 - fr), (1.0, fr)] {
        for (dc, wc) in [(0.0, 1.0 - fc), (1.0, fc)] {
            let weight = wr * wc;
            if weight != 0.0 {
                value += weight * at(r0 + dr, c0 + dc);
            }
        }
    }
    value
}

/// Rotates counterclockwise (as displayed, rows growing downward) about the
/// image center with bilinear interpolation. Samples outside the source read
/// as zero.
pub fn rotate_image(image: ArrayView2<f64>, degrees: f64) -> Array2<f64> {
    let (h, w) = image.dim();
    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (w as f64 - 1.0) / 2.0;
    let (s, c) = exact_sin_cos(degrees);
    Array2::from_shape_fn((h, w), |(r, col)| {
        let dy = r as f64 - cy;
        let dx = col as f64 - cx;
        let src_col = cx + dx * c - dy * s;
        let src_row = cy + dx * s + dy * c;
        sample_bilinear(&image, src_row, src_col)
    })
}

/// Zeroes every pixel whose center lies outside the inscribed disk.
pub fn apply_circular_mask(image: &mut Array2<f64>) {
    let (h, w) = image.dim();
    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (w as f64 - 1.0) / 2.0;
    let radius = cx.min(cy);
    for ((r, c), v) in image.indexed_iter_mut() {
        let (dy, dx) = (r as f64 - cy, c as f64 - cx);
        if dx * dx + dy * dy > radius * radius {
            *v = 0.0;
        }
    }
}

/// Central `size × size` window.
pub fn center_crop(image: ArrayView2<f64>, size: usize) -> Array2<f64> {
    let (h, w) = image.dim();
    let size = size.min(h).min(w);
    let r0 = (h - size) / 2;
    let c0 = (w - size) / 2;
    image
        .slice(ndarray::s![r0..r0 + size, c0..c0 + size])
        .to_owned()
}

/// Area-weighted resampling matrix mapping `from` samples to `to` samples.
fn area_weights(from: usize, to: usize) -> Array2<f64> {
    let scale = from as f64 / to as f64;
    Array2::from_shape_fn((to, from), |(o, i)| {
        let lo = o as f64 * scale;
        let hi = lo + scale;
        let overlap = (hi.min(i as f64 + 1.0) - lo.max(i as f64)).max(0.0);
        overlap / scale
    })
}

/// Box-filter resampling to `size × size`; each output pixel averages the
/// source area it covers.
pub fn resample_area(image: ArrayView2<f64>, size: usize) -> Array2<f64> {
    let (h, w) = image.dim();
    let rows = area_weights(h, size);
    let cols = area_weights(w, size);
    rows.dot(&image).dot(&cols.t())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn disk(size: usize, radius: f64) -> Array2<f64> {
        let c = (size as f64 - 1.0) / 2.0;
        Array2::from_shape_fn((size, size), |(r, col)| {
            let d = ((r as f64 - c).powi(2) + (col as f64 - c).powi(2)).sqrt();
            (1.0 - (d / radius).powi(2)).max(0.0)
        })
    }

    /// Index permutation for a counterclockwise quarter turn.
    fn quarter_turn(image: &Array2<f64>) -> Array2<f64> {
        let n = image.nrows();
        Array2::from_shape_fn((n, n), |(r, c)| image[[c, n - 1 - r]])
    }

    #[test]
    fn zero_rotation_is_identity() {
        let im = array![[0.1, 0.2, 0.3], [0.4, 0.5, 0.6], [0.7, 0.8, 0.9]];
        assert_eq!(rotate_image(im.view(), 0.0), im);
    }

    #[test]
    fn right_angles_permute_indices() {
        let im = array![[1.0, 2.0], [3.0, 4.0]];
        let once = quarter_turn(&im);
        assert_eq!(once, array![[2.0, 4.0], [1.0, 3.0]]);
        assert_eq!(rotate_image(im.view(), 90.0), once);
        assert_eq!(rotate_image(im.view(), 180.0), quarter_turn(&once));
        assert_eq!(rotate_image(im.view(), -90.0), quarter_turn(&quarter_turn(&once)));

        let odd = Array2::from_shape_fn((5, 5), |(r, c)| (r * 5 + c) as f64);
        assert_eq!(rotate_image(odd.view(), 90.0), quarter_turn(&odd));
        assert_eq!(rotate_image(odd.view(), 270.0), rotate_image(odd.view(), -90.0));
    }

    #[test]
    fn round_trip_preserves_disk_interior() {
        let c = 7.5;
        let smooth = disk(16, 6.0);
        let back = rotate_image(rotate_image(smooth.view(), 37.0).view(), -37.0);
        for ((r, col), &v) in smooth.indexed_iter() {
            let d = ((r as f64 - c).powi(2) + (col as f64 - c).powi(2)).sqrt();
            if d < 5.0 {
                assert!((v - back[[r, col]]).abs() < 0.05, "{r},{col}");
            }
        }
    }

    #[test]
    fn mask_keeps_inscribed_disk() {
        let mut im = Array2::ones((4, 4));
        apply_circular_mask(&mut im);
        assert_eq!(im[[0, 0]], 0.0);
        assert_eq!(im[[1, 1]], 1.0);
        assert_eq!(im[[0, 1]], 0.0);
    }

    #[test]
    fn crop_and_resample() {
        let im = Array2::from_shape_fn((28, 28), |(r, c)| (r + c) as f64);
        let cropped = center_crop(im.view(), 24);
        assert_eq!(cropped.dim(), (24, 24));
        assert_eq!(cropped[[0, 0]], 4.0);
        let small = resample_area(cropped.view(), 16);
        assert_eq!(small.dim(), (16, 16));
        // averaging a linear ramp preserves the mean
        assert!((small.mean().unwrap() - cropped.mean().unwrap()).abs() < 1e-9);
        let halved = resample_area(array![[1.0, 3.0], [5.0, 7.0]].view(), 1);
        assert!((halved[[0, 0]] - 4.0).abs() < 1e-12);
    }
}
