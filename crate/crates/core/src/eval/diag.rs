use serde::Serialize;

use super::stats::pearson;
use crate::error::{Error, Result};
use crate::nets::Params;
use crate::random::{sample_standard_normal, Rng};
use crate::tensor::{check_beta, Tape, Tensor};

fn latent_draws(params: &Params, x: &[f64], k: usize, rng: &mut Rng) -> Result<Tensor> {
    let (mu, lv) = params.encode(&Tensor::new(vec![1, x.len()], x.to_vec())?)?;
    let m = mu.numel();
    let eps = sample_standard_normal(rng, &[k, m])?.into_tensor();
    let mut z = eps.into_data();
    for row in z.chunks_mut(m) {
        for (j, v) in row.iter_mut().enumerate() {
            *v = mu.data()[j] + (0.5 * lv.data()[j]).exp() * *v;
        }
    }
    Tensor::new(vec![k, m], z)
}

/// Per-coordinate unbiased variance across `k` reconstructions of `x`.
pub fn variance_map(params: &Params, x: &[f64], k: usize, rng: &mut Rng) -> Result<Vec<f64>> {
    if k < 2 {
        return Err(Error::config(format!("variance map needs k >= 2, got {k}")));
    }
    let out = params.decode(&latent_draws(params, x, k, rng)?)?;
    let n = out.cols();
    let mut mean = vec![0.0; n];
    for row in out.iter_rows() {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v / k as f64;
        }
    }
    let mut var = vec![0.0; n];
    for row in out.iter_rows() {
        for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    Ok(var.into_iter().map(|s| s / (k - 1) as f64).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResidualHistogram {
    /// Bin edges over [−1, 1], `bins + 1` entries.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub mean: f64,
    pub std: f64,
    /// Fraction of residuals with |r| ≤ 0.2.
    pub central_fraction: f64,
}

/// Histograms residuals already expressed on the [−1, 1] scale.
pub fn residual_histogram(residuals: &[f64], bins: usize) -> Result<ResidualHistogram> {
    if bins < 3 {
        return Err(Error::config(format!("need at least 3 bins, got {bins}")));
    }
    if residuals.is_empty() {
        return Err(Error::config("no residuals to histogram"));
    }
    let mut counts = vec![0u64; bins];
    let mut central = 0usize;
    for &r in residuals {
        let r = r.clamp(-1.0, 1.0);
        let idx = (((r + 1.0) / 2.0) * bins as f64).floor() as usize;
        counts[idx.min(bins - 1)] += 1;
        if r.abs() <= 0.2 {
            central += 1;
        }
    }
    let n = residuals.len() as f64;
    let mean = residuals.iter().sum::<f64>() / n;
    let std = (residuals.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n).sqrt();
    Ok(ResidualHistogram {
        edges: (0..=bins).map(|i| -1.0 + 2.0 * i as f64 / bins as f64).collect(),
        counts,
        mean,
        std,
        central_fraction: central as f64 / n,
    })
}

/// Pools `g(zᵢ) − x` over every row of `x` and `k` posterior draws each.
/// Data live in [0, 1], so residuals already lie in [−1, 1].
pub fn residual_distribution(
    params: &Params,
    x: &Tensor,
    k: usize,
    bins: usize,
    rng: &mut Rng,
) -> Result<ResidualHistogram> {
    if k < 1 {
        return Err(Error::config("residual distribution needs k >= 1"));
    }
    let mut residuals = Vec::with_capacity(x.numel() * k);
    for row in x.iter_rows() {
        let out = params.decode(&latent_draws(params, row, k, rng)?)?;
        for rec in out.iter_rows() {
            residuals.extend(rec.iter().zip(row).map(|(g, v)| g - v));
        }
    }
    residual_histogram(&residuals, bins)
}

/// Largest `‖f(xᵢ) − f(xⱼ)‖ / ‖xᵢ − xⱼ‖` over `pairs` seeded random pairs
/// of distinct rows. Pairs closer than 1e-9 are skipped. Pairs are drawn as
/// a single stream, so more pairs never lowers the estimate.
pub fn lipschitz_estimate<F>(map: F, points: &Tensor, pairs: usize, rng: &mut Rng) -> Result<f64>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    let n = points.rows();
    if n < 2 || pairs == 0 {
        return Err(Error::config(format!(
            "lipschitz estimate needs >= 2 points and >= 1 pair, got {n} and {pairs}"
        )));
    }
    let images = map(points)?;
    if images.rows() != n {
        return Err(Error::shape("map must return one row per input row"));
    }
    let dist = |a: &[f64], b: &[f64]| {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
    };
    let mut best: Option<f64> = None;
    for _ in 0..pairs {
        let i = rng.below(n);
        let mut j = rng.below(n - 1);
        if j >= i {
            j += 1;
        }
        let dx = dist(points.row(i), points.row(j));
        if dx < 1e-9 {
            continue;
        }
        let ratio = dist(images.row(i), images.row(j)) / dx;
        best = Some(best.map_or(ratio, |b: f64| b.max(ratio)));
    }
    best.ok_or_else(|| Error::Evaluation("every sampled pair was degenerate".into()))
}

/// Mean of `exp(logvar)` over all rows and latent dimensions.
pub fn latent_variance_mean(params: &Params, x: &Tensor) -> Result<f64> {
    let (_, lv) = params.encode(x)?;
    Ok(lv.data().iter().map(|v| v.exp()).sum::<f64>() / lv.numel() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CorrelationReport {
    pub pearson_r: f64,
    pub r_squared: f64,
    /// Half the mean pairwise `‖g(zᵢ) − g(zⱼ)‖^β` from `m_ref` posterior draws.
    pub reference: Vec<f64>,
    /// `½‖g(μ + √2(z − μ)) − g(μ)‖^β`, averaged over `draws` samples.
    pub surrogate: Vec<f64>,
    pub draws: usize,
}

pub fn correlation_from_terms(reference: &[f64], surrogate: &[f64]) -> Result<(f64, f64)> {
    let r = pearson(reference, surrogate)?;
    Ok((r, r * r))
}

fn norm_pow(a: &[f64], b: &[f64], beta: f64) -> f64 {
    let sq: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    sq.sqrt().powf(beta)
}

/// Compares the single-sample linearized dispersion term against the full
/// pairwise term, per row of `x`.
pub fn uncertainty_term_correlation(
    params: &Params,
    x: &Tensor,
    m_ref: usize,
    draws: usize,
    beta: f64,
    rng: &mut Rng,
) -> Result<CorrelationReport> {
    check_beta(beta)?;
    if m_ref < 2 || draws < 1 {
        return Err(Error::config(format!(
            "correlation needs m_ref >= 2 and draws >= 1, got {m_ref}, {draws}"
        )));
    }
    let (mu, lv) = params.encode(x)?;
    let m = mu.cols();
    let mut reference = Vec::with_capacity(x.rows());
    let mut surrogate = Vec::with_capacity(x.rows());
    for i in 0..x.rows() {
        let mu_i = mu.row(i);
        let sd: Vec<f64> = lv.row(i).iter().map(|v| (0.5 * v).exp()).collect();

        let eps = sample_standard_normal(rng, &[m_ref, m])?.into_tensor();
        let z: Vec<f64> = eps
            .data()
            .iter()
            .enumerate()
            .map(|(k, e)| mu_i[k % m] + sd[k % m] * e)
            .collect();
        let out = params.decode(&Tensor::new(vec![m_ref, m], z)?)?;
        let mut acc = 0.0;
        for a in 0..m_ref {
            for b in a + 1..m_ref {
                acc += norm_pow(out.row(a), out.row(b), beta);
            }
        }
        reference.push(acc / (m_ref * (m_ref - 1)) as f64);

        let eps = sample_standard_normal(rng, &[draws, m])?.into_tensor();
        let mut z = Vec::with_capacity((draws + 1) * m);
        z.extend_from_slice(mu_i);
        z.extend(
            eps.data()
                .iter()
                .enumerate()
                .map(|(k, e)| mu_i[k % m] + std::f64::consts::SQRT_2 * sd[k % m] * e),
        );
        let out = params.decode(&Tensor::new(vec![draws + 1, m], z)?)?;
        let center = out.row(0);
        let s: f64 = (1..=draws)
            .map(|d| 0.5 * norm_pow(out.row(d), center, beta))
            .sum();
        surrogate.push(s / draws as f64);
    }
    let (pearson_r, r_squared) = correlation_from_terms(&reference, &surrogate)?;
    Ok(CorrelationReport {
        pearson_r,
        r_squared,
        reference,
        surrogate,
        draws,
    })
}

/// ∂g/∂z at `z` as an `[n, m]` tensor, one reverse pass per output.
pub fn decoder_jacobian(params: &Params, z: &[f64]) -> Result<Tensor> {
    let m = z.len();
    let tape = Tape::new();
    let pv = params.attach(&tape, false);
    let zv = tape.leaf(Tensor::new(vec![1, m], z.to_vec())?);
    let out = crate::nets::decoder_forward(&pv, zv)?;
    let n = out.shape()[1];
    let mut jac = Vec::with_capacity(n * m);
    for i in 0..n {
        let grads = tape.backward(out.columns(i, 1)?.sum()?)?;
        jac.extend_from_slice(grads.get(zv).data());
    }
    Tensor::new(vec![n, m], jac)
}

/// Central-difference Jacobian, used to cross-check [`decoder_jacobian`].
pub fn decoder_jacobian_fd(params: &Params, z: &[f64], h: f64) -> Result<Tensor> {
    let m = z.len();
    let mut cols = Vec::with_capacity(m);
    for j in 0..m {
        let mut zp = z.to_vec();
        let mut zm = z.to_vec();
        zp[j] += h;
        zm[j] -= h;
        let gp = params.decode(&Tensor::new(vec![1, m], zp)?)?;
        let gm = params.decode(&Tensor::new(vec![1, m], zm)?)?;
        cols.push(
            gp.data()
                .iter()
                .zip(gm.data())
                .map(|(a, b)| (a - b) / (2.0 * h))
                .collect::<Vec<_>>(),
        );
    }
    let n = cols[0].len();
    let data = (0..n).flat_map(|i| cols.iter().map(move |c| c[i])).collect();
    Tensor::new(vec![n, m], data)
}

/// Decodes `(1 − t)·z1 + t·z2` at `t = i / (steps + 1)`, `i = 0..=steps+1`,
/// one point per decoder call.
pub fn latent_walk(params: &Params, z1: &[f64], z2: &[f64], steps: usize) -> Result<Vec<Tensor>> {
    let m = params.arch().latent_dim;
    if z1.len() != m || z2.len() != m {
        return Err(Error::shape(format!(
            "walk endpoints must have {m} entries, got {} and {}",
            z1.len(),
            z2.len()
        )));
    }
    (0..steps + 2)
        .map(|i| {
            let t = i as f64 / (steps + 1) as f64;
            let z = z1.iter().zip(z2).map(|(a, b)| (1.0 - t) * a + t * b).collect();
            params.decode(&Tensor::new(vec![1, m], z)?)
        })
        .collect()
}
