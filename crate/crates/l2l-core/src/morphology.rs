//! Binary and grayscale morphology on 2-D rasters: 3x3 erosion/dilation,
//! median filtering with border replication, Otsu thresholding and the black
//! top-hat transform used for vein detection.

use ndarray::Array2;

/// Clamped (border-replicated) neighbor lookup.
#[inline]
fn at_clamped(img: &Array2<f32>, y: isize, x: isize) -> f32 {
    let (h, w) = img.dim();
    let y = y.clamp(0, h as isize - 1) as usize;
    let x = x.clamp(0, w as isize - 1) as usize;
    img[[y, x]]
}

/// Median of the 3x3 neighborhood around each pixel, border-replicated.
pub fn median3x3(img: &Array2<f32>) -> Array2<f32> {
    let (h, w) = img.dim();
    let mut out = Array2::zeros((h, w));
    let mut window = [0f32; 9];
    for y in 0..h {
        for x in 0..w {
            let mut k = 0;
            for dy in -1..=1isize {
                for dx in -1..=1isize {
                    window[k] = at_clamped(img, y as isize + dy, x as isize + dx);
                    k += 1;
                }
            }
            window.sort_by(|a, b| a.partial_cmp(b).unwrap());
            out[[y, x]] = window[4];
        }
    }
    out
}

/// 3x3 grayscale erosion (neighborhood minimum), border-replicated.
pub fn gray_erode3x3(img: &Array2<f32>) -> Array2<f32> {
    let (h, w) = img.dim();
    let mut out = Array2::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let mut m = f32::INFINITY;
            for dy in -1..=1isize {
                for dx in -1..=1isize {
                    m = m.min(at_clamped(img, y as isize + dy, x as isize + dx));
                }
            }
            out[[y, x]] = m;
        }
    }
    out
}

/// 3x3 grayscale dilation (neighborhood maximum), border-replicated.
pub fn gray_dilate3x3(img: &Array2<f32>) -> Array2<f32> {
    let (h, w) = img.dim();
    let mut out = Array2::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let mut m = f32::NEG_INFINITY;
            for dy in -1..=1isize {
                for dx in -1..=1isize {
                    m = m.max(at_clamped(img, y as isize + dy, x as isize + dx));
                }
            }
            out[[y, x]] = m;
        }
    }
    out
}

/// Black top-hat: morphological closing minus the image. Responds to dark
/// structures thinner than the 3x3 element, which is how veins show up
/// against the bright leaf blade in NIR.
pub fn black_tophat3x3(img: &Array2<f32>) -> Array2<f32> {
    let closed = gray_erode3x3(&gray_dilate3x3(img));
    &closed - img
}

/// Binary 3x3 erosion. Pixels outside the frame count as background, so the
/// frame border always erodes.
pub fn binary_erode3x3(mask: &Array2<u8>) -> Array2<u8> {
    let (h, w) = mask.dim();
    let mut out = Array2::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let mut all = true;
            'n: for dy in -1..=1isize {
                for dx in -1..=1isize {
                    let yy = y as isize + dy;
                    let xx = x as isize + dx;
                    if yy < 0 || yy >= h as isize || xx < 0 || xx >= w as isize {
                        all = false;
                        break 'n;
                    }
                    if mask[[yy as usize, xx as usize]] == 0 {
                        all = false;
                        break 'n;
                    }
                }
            }
            out[[y, x]] = all as u8;
        }
    }
    out
}

/// Binary 3x3 dilation.
pub fn binary_dilate3x3(mask: &Array2<u8>) -> Array2<u8> {
    let (h, w) = mask.dim();
    let mut out = Array2::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let mut any = false;
            'n: for dy in -1..=1isize {
                for dx in -1..=1isize {
                    let yy = y as isize + dy;
                    let xx = x as isize + dx;
                    if yy >= 0 && yy < h as isize && xx >= 0 && xx < w as isize
                        && mask[[yy as usize, xx as usize]] == 1
                    {
                        any = true;
                        break 'n;
                    }
                }
            }
            out[[y, x]] = any as u8;
        }
    }
    out
}

/// One-pixel-wide boundary of a region: the region minus its erosion.
pub fn boundary(mask: &Array2<u8>) -> Array2<u8> {
    let eroded = binary_erode3x3(mask);
    let mut out = mask.clone();
    ndarray::Zip::from(&mut out).and(&eroded).for_each(|o, &e| {
        *o = (*o == 1 && e == 0) as u8;
    });
    out
}

/// Otsu's threshold over a 256-bin histogram of values in `[0, 1]`.
/// Returns the bin-center threshold maximizing between-class variance;
/// `None` when the image is constant.
pub fn otsu_threshold(values: impl Iterator<Item = f32>) -> Option<f32> {
    let mut hist = [0u64; 256];
    let mut n = 0u64;
    for v in values {
        let bin = (v.clamp(0.0, 1.0) * 255.0).round() as usize;
        hist[bin] += 1;
        n += 1;
    }
    if n == 0 {
        return None;
    }
    let total_sum: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();
    let mut w0 = 0f64;
    let mut sum0 = 0f64;
    let mut best = (0f64, None::<usize>);
    for t in 0..255 {
        w0 += hist[t] as f64;
        sum0 += t as f64 * hist[t] as f64;
        let w1 = n as f64 - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let m0 = sum0 / w0;
        let m1 = (total_sum - sum0) / w1;
        let between = w0 * w1 * (m0 - m1) * (m0 - m1);
        if between > best.0 {
            best = (between, Some(t));
        }
    }
    // Threshold between bins t and t+1, mapped back to [0,1].
    best.1.map(|t| (t as f32 + 0.5) / 255.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn median_handles_borders_by_replication() {
        let img = array![[1.0, 0.0], [0.0, 0.0]];
        let med = median3x3(&img);
        // Top-left window replicates the corner: {1 x4, 0 x5} -> median 0.
        assert_eq!(med[[0, 0]], 0.0);
    }

    #[test]
    fn erosion_of_3x3_block_is_center() {
        let mut m = Array2::<u8>::zeros((5, 5));
        for y in 1..4 {
            for x in 1..4 {
                m[[y, x]] = 1;
            }
        }
        let e = binary_erode3x3(&m);
        assert_eq!(e.iter().filter(|&&v| v == 1).count(), 1);
        assert_eq!(e[[2, 2]], 1);
    }

    #[test]
    fn boundary_of_block_is_ring() {
        let mut m = Array2::<u8>::zeros((5, 5));
        for y in 1..4 {
            for x in 1..4 {
                m[[y, x]] = 1;
            }
        }
        let b = boundary(&m);
        assert_eq!(b.iter().filter(|&&v| v == 1).count(), 8);
        assert_eq!(b[[2, 2]], 0);
    }

    #[test]
    fn otsu_separates_bimodal() {
        let vals: Vec<f32> = (0..100)
            .map(|i| if i < 50 { 0.1 } else { 0.9 })
            .collect();
        let t = otsu_threshold(vals.into_iter()).unwrap();
        assert!(t > 0.1 && t < 0.9, "threshold {t}");
    }

    #[test]
    fn otsu_constant_is_none() {
        assert_eq!(otsu_threshold(std::iter::repeat(0.5).take(10)), None);
    }

    #[test]
    fn black_tophat_highlights_dark_line() {
        let mut img = Array2::from_elem((7, 7), 0.8f32);
        for x in 0..7 {
            img[[3, x]] = 0.2; // dark 1px line
        }
        let th = black_tophat3x3(&img);
        assert!(th[[3, 3]] > 0.5);
        assert!(th[[0, 3]] < 1e-6);
    }
}
