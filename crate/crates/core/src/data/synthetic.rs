use std::f64::consts::PI;

use super::{normalize_global, DataKind, Dataset, Normalization};
use crate::error::{Error, Result};
use crate::random::Rng;
use crate::tensor::Tensor;

/// Equal-weight mixture of `k` isotropic Gaussians with means on a circle of
/// radius `spread` (component j at angle 2πj/k) and std `spread / 10`,
/// min-max normalized jointly over both coordinates.
pub fn gen_gmm2d(k: usize, spread: f64, n_points: usize, seed: u64) -> Result<Dataset> {
    if k == 0 || n_points < k {
        return Err(Error::config(format!(
            "gmm2d needs k >= 1 and n_points >= k, got k={k}, n={n_points}"
        )));
    }
    if !(spread > 0.0) {
        return Err(Error::config("gmm2d spread must be positive"));
    }
    let mut rng = Rng::new(seed);
    let std = spread / 10.0;
    let mut data = Vec::with_capacity(2 * n_points);
    let mut labels = Vec::with_capacity(n_points);
    for _ in 0..n_points {
        let j = rng.below(k);
        let angle = 2.0 * PI * j as f64 / k as f64;
        data.push(spread * angle.cos() + std * rng.normal());
        data.push(spread * angle.sin() + std * rng.normal());
        labels.push(j);
    }
    let normalization = normalize_global(&mut data);
    Ok(Dataset {
        x: Tensor::new(vec![n_points, 2], data)?,
        kind: DataKind::Vector,
        name: format!("gmm2d-k{k}"),
        normalization,
        labels: Some(labels),
    })
}

/// `h × w` images, each holding one bright (1.0) horizontal or vertical bar
/// of width 1 or 2 on a 0 background, plus N(0, 0.01²) noise clamped to [0, 1].
pub fn gen_bars(h: usize, w: usize, n_points: usize, seed: u64) -> Result<Dataset> {
    if h < 4 || w < 4 {
        return Err(Error::config(format!("bars needs h, w >= 4, got {h}x{w}")));
    }
    if n_points == 0 {
        return Err(Error::config("bars needs n_points >= 1"));
    }
    let mut rng = Rng::new(seed);
    let mut data = Vec::with_capacity(n_points * h * w);
    let mut labels = Vec::with_capacity(n_points);
    for _ in 0..n_points {
        let horizontal = rng.below(2) == 0;
        let width = 1 + rng.below(2);
        let extent = if horizontal { h } else { w };
        let start = rng.below(extent - width + 1);
        for r in 0..h {
            for c in 0..w {
                let pos = if horizontal { r } else { c };
                let base = if pos >= start && pos < start + width { 1.0 } else { 0.0 };
                data.push((base + 0.01 * rng.normal()).clamp(0.0, 1.0));
            }
        }
        labels.push(usize::from(horizontal));
    }
    Ok(Dataset {
        x: Tensor::new(vec![n_points, h * w], data)?,
        kind: DataKind::Image { h, w, c: 1 },
        name: format!("bars-{h}x{w}"),
        normalization: Normalization::IDENTITY,
        labels: Some(labels),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gmm_single_blob_mean() {
        let n = 4000;
        let ds = gen_gmm2d(1, 2.0, n, 5).unwrap();
        let norm = ds.normalization;
        for (coord, center) in [(0, 2.0), (1, 0.0)] {
            let vals: Vec<f64> = ds.x.iter_rows().map(|r| norm.denormalize(r[coord])).collect();
            let mean = vals.iter().sum::<f64>() / n as f64;
            let se = 0.2 / (n as f64).sqrt();
            assert!((mean - center).abs() < 3.0 * se, "coord {coord}: {mean}");
        }
    }

    #[test]
    fn gmm_component_counts() {
        let (n, k) = (8000, 8);
        let ds = gen_gmm2d(k, 1.0, n, 17).unwrap();
        let mut counts = vec![0usize; k];
        for &l in ds.labels.as_ref().unwrap() {
            counts[l] += 1;
        }
        let p = 1.0 / k as f64;
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - n as f64 * p).abs() < 3.0 * sd, "{c}");
        }
    }

    #[test]
    fn generators_are_deterministic_and_bounded() {
        assert_eq!(gen_gmm2d(3, 1.0, 50, 2).unwrap(), gen_gmm2d(3, 1.0, 50, 2).unwrap());
        assert_eq!(gen_bars(6, 6, 20, 2).unwrap(), gen_bars(6, 6, 20, 2).unwrap());
        for ds in [gen_gmm2d(3, 1.0, 50, 2).unwrap(), gen_bars(6, 6, 20, 2).unwrap()] {
            assert!(ds.x.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn bars_mean_image_is_flat_enough() {
        let ds = gen_bars(8, 8, 10_000, 4).unwrap();
        let mut mean = vec![0.0; 64];
        for row in ds.x.iter_rows() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v / 10_000.0;
            }
        }
        let max = mean.iter().copied().fold(f64::MIN, f64::max);
        let min = mean.iter().copied().fold(f64::MAX, f64::min);
        assert!(max / min <= 2.0, "{max} / {min}");
    }

    #[test]
    fn invalid_parameters() {
        assert!(gen_gmm2d(0, 1.0, 10, 0).is_err());
        assert!(gen_gmm2d(5, 1.0, 4, 0).is_err());
        assert!(gen_bars(3, 8, 10, 0).is_err());
    }
}
