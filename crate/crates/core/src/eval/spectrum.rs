use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn dft_1d(input: &[Complex64], twiddle: &[Complex64]) -> Vec<Complex64> {
    let n = input.len();
    (0..n)
        .map(|k| {
            input
                .iter()
                .enumerate()
                .map(|(t, v)| v * twiddle[(k * t) % n])
                .sum()
        })
        .collect()
}

/// |DFT| of a square image, rows then columns.
fn dft_magnitude(img: &[f64], h: usize) -> Vec<f64> {
    let twiddle: Vec<Complex64> = (0..h)
        .map(|k| Complex64::from_polar(1.0, -2.0 * PI * k as f64 / h as f64))
        .collect();
    let mut buf: Vec<Complex64> = img.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    for r in 0..h {
        let row = dft_1d(&buf[r * h..(r + 1) * h], &twiddle);
        buf[r * h..(r + 1) * h].copy_from_slice(&row);
    }
    for c in 0..h {
        let col: Vec<Complex64> = (0..h).map(|r| buf[r * h + c]).collect();
        for (r, v) in dft_1d(&col, &twiddle).into_iter().enumerate() {
            buf[r * h + c] = v;
        }
    }
    buf.iter().map(|v| v.norm()).collect()
}

/// Radially averaged log spectrum of a set of square single-channel images.
///
/// Each DFT magnitude is mapped through `log10(1 + |F|)`, the zero frequency
/// is moved to the center, and pixels are grouped by rounded distance from
/// it. Entry `r` is the mean over ring `r` and over the image set, for
/// `r = 0..=h/2`; corner frequencies beyond `h/2` are dropped.
pub fn radial_spectrum(images: &[Tensor]) -> Result<Vec<f64>> {
    let first = images
        .first()
        .ok_or_else(|| Error::config("radial spectrum needs at least one image"))?;
    let (h, w) = match first.shape() {
        [h, w] => (*h, *w),
        s => return Err(Error::shape(format!("expected [h, w] images, got {s:?}"))),
    };
    if h != w {
        return Err(Error::shape(format!("radial spectrum needs square images, got {h}x{w}")));
    }
    if h < 4 {
        return Err(Error::shape(format!("images must be at least 4x4, got {h}x{w}")));
    }
    let rings = h / 2 + 1;
    let center = (h / 2) as f64;
    let ring_of: Vec<Option<usize>> = (0..h * h)
        .map(|idx| {
            // fftshift: frequency index k lands at (k + h/2) mod h.
            let (r, c) = (idx / h, idx % h);
            let (sr, sc) = ((r + h / 2) % h, (c + h / 2) % h);
            let d = ((sr as f64 - center).powi(2) + (sc as f64 - center).powi(2)).sqrt();
            let ring = d.round() as usize;
            (ring < rings).then_some(ring)
        })
        .collect();
    let mut sums = vec![0.0; rings];
    let mut counts = vec![0usize; rings];
    for img in images {
        if img.shape() != [h, w] {
            return Err(Error::shape("all images must share one shape"));
        }
        for (mag, ring) in dft_magnitude(img.data(), h).into_iter().zip(&ring_of) {
            if let Some(r) = ring {
                sums[*r] += (1.0 + mag).log10();
                counts[*r] += 1;
            }
        }
    }
    Ok(sums.into_iter().zip(counts).map(|(s, c)| s / c as f64).collect())
}
