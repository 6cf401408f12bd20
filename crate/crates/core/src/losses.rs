//! Training objectives.
//!
//! * `envae`: Monte-Carlo energy score over M decoded posterior draws plus α·KL.
//! * `fenvae`: single-draw surrogate. The pairwise dispersion term is replaced
//!   by half the distance between g(μ + √2(z* − μ)) and g(μ), which equals the
//!   pairwise term in expectation when g is linear around μ.
//! * `vanilla`: Gaussian-likelihood ELBO, i.e. squared error plus α·KL.
//! * `l1`: absolute error plus α·KL.
//!
//! Every loss reduces per-example values by the batch mean and reports its
//! parts separately in [`LossTerms`], with `total = recon + dispersion + α·kl`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nets::{decoder_forward, encoder_forward, ParamVars};
use crate::random::{
    kl_diag_gaussian, reparameterize, sample_standard_normal, GaussianPosterior, NoiseDraw, Rng,
};
use crate::tensor::{check_beta, concat, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossVariant {
    Vanilla,
    L1,
    Envae,
    Fenvae,
}

impl std::fmt::Display for LossVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LossVariant::Vanilla => "vanilla",
            LossVariant::L1 => "l1",
            LossVariant::Envae => "envae",
            LossVariant::Fenvae => "fenvae",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub variant: LossVariant,
    pub beta: f64,
    pub alpha: f64,
    pub m_samples: usize,
    pub share_noise: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            variant: LossVariant::Envae,
            beta: 1.0,
            alpha: 1.0,
            m_samples: 50,
            share_noise: true,
        }
    }
}

impl LossConfig {
    pub fn new(variant: LossVariant) -> Self {
        LossConfig {
            variant,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_beta(self.beta)?;
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(Error::config(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if self.variant == LossVariant::Envae && self.m_samples < 2 {
            return Err(Error::config(format!(
                "m_samples must be >= 2 for envae (pairwise term undefined), got {}",
                self.m_samples
            )));
        }
        Ok(())
    }
}

/// Scalar loss on the tape plus its batch-mean components.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms<'t> {
    pub total: Var<'t>,
    /// Distance of draws to the data (mean loss / reconstruction error).
    pub recon: f64,
    /// Signed dispersion contribution; ≤ 0 for envae and fenvae, 0 otherwise.
    pub dispersion: f64,
    /// Unscaled KL divergence.
    pub kl: f64,
}

/// `[M, B, n]` decoded draws x*ᵢ = g(zᵢ).
#[derive(Clone, Copy, Debug)]
pub struct DecodedSamples<'t> {
    samples: Var<'t>,
}

impl<'t> DecodedSamples<'t> {
    pub fn new(samples: Var<'t>) -> Result<Self> {
        if samples.shape().len() != 3 {
            return Err(Error::shape(format!(
                "decoded samples must be [M, B, n], got {:?}",
                samples.shape()
            )));
        }
        Ok(DecodedSamples { samples })
    }

    pub fn var(&self) -> Var<'t> {
        self.samples
    }

    pub fn m(&self) -> usize {
        self.samples.shape()[0]
    }
}

/// The two halves of the Monte-Carlo energy score, each `[B]`:
/// `(1/M)Σᵢ‖x*ᵢ − x‖^β` and `−(1/(2M(M−1)))Σ_{i≠j}‖x*ᵢ − x*ⱼ‖^β`.
pub fn energy_score_parts<'t>(
    samples: &DecodedSamples<'t>,
    x: Var<'t>,
    beta: f64,
) -> Result<(Var<'t>, Var<'t>)> {
    check_beta(beta)?;
    let s = samples.var();
    let m = samples.m();
    if m < 2 {
        return Err(Error::config(format!(
            "energy score needs M >= 2 samples (pairwise term undefined), got {m}"
        )));
    }
    let shape = s.shape();
    if x.shape() != shape[1..] {
        return Err(Error::shape(format!(
            "data {:?} does not match samples {shape:?}",
            x.shape()
        )));
    }
    let accuracy = s.sub(x)?.pow_norm(beta)?.mean_axis(0)?;
    // Ordered pairs i<j counted once; the i≠j sum is twice that.
    let mf = m as f64;
    let dispersion = s.pairwise_pow_sum(beta)?.scale(-1.0 / (mf * (mf - 1.0)))?;
    Ok((accuracy, dispersion))
}

/// Per-example Monte-Carlo energy score, `[B]`.
pub fn energy_score_mc<'t>(samples: &DecodedSamples<'t>, x: Var<'t>, beta: f64) -> Result<Var<'t>> {
    let (a, d) = energy_score_parts(samples, x, beta)?;
    a.add(d)
}

/// [`energy_score_mc`] on plain tensors: `samples` `[M, B, n]`, `x` `[B, n]`.
pub fn energy_score_values(samples: &Tensor, x: &Tensor, beta: f64) -> Result<Vec<f64>> {
    let tape = Tape::new();
    let s = DecodedSamples::new(tape.constant(samples.clone()))?;
    Ok(energy_score_mc(&s, tape.constant(x.clone()), beta)?
        .to_tensor()
        .into_data())
}

fn batch_dims(pv: &ParamVars<'_>, x: Var<'_>) -> Result<(usize, usize)> {
    let s = x.shape();
    if s.len() != 2 || s[1] != pv.arch().input_dim {
        return Err(Error::shape(format!(
            "data must be [B, {}], got {s:?}",
            pv.arch().input_dim
        )));
    }
    Ok((s[0], pv.arch().latent_dim))
}

fn assemble<'t>(
    recon: Var<'t>,
    dispersion: Option<Var<'t>>,
    kl: Var<'t>,
    alpha: f64,
) -> Result<LossTerms<'t>> {
    let recon = recon.mean()?;
    let kl = kl.mean()?;
    let mut total = recon;
    let mut disp_value = 0.0;
    if let Some(d) = dispersion {
        let d = d.mean()?;
        disp_value = d.item()?;
        total = total.add(d)?;
    }
    let total = total.add(kl.scale(alpha)?)?;
    Ok(LossTerms {
        total,
        recon: recon.item()?,
        dispersion: disp_value,
        kl: kl.item()?,
    })
}

/// Energy-score objective with explicit noise `eps` of shape `[M, B, m]`.
pub fn envae_loss_with_noise<'t>(
    pv: &ParamVars<'t>,
    x: Var<'t>,
    cfg: &LossConfig,
    eps: &NoiseDraw,
) -> Result<LossTerms<'t>> {
    let (b, m) = batch_dims(pv, x)?;
    let es = eps.eps().shape();
    if es.len() != 3 || es[1..] != [b, m] {
        return Err(Error::shape(format!("envae noise must be [M, {b}, {m}], got {es:?}")));
    }
    let draws = es[0];
    if draws < 2 {
        return Err(Error::config(format!(
            "m_samples must be >= 2 (pairwise term undefined), got {draws}"
        )));
    }
    let post = encoder_forward(pv, x)?;
    let z = reparameterize(&post, eps)?.reshape(&[draws * b, m])?;
    let n = pv.arch().input_dim;
    let decoded = decoder_forward(pv, z)?.reshape(&[draws, b, n])?;
    let samples = DecodedSamples::new(decoded)?;
    let (accuracy, dispersion) = energy_score_parts(&samples, x, cfg.beta)?;
    assemble(accuracy, Some(dispersion), kl_diag_gaussian(&post)?, cfg.alpha)
}

pub fn envae_loss<'t>(
    pv: &ParamVars<'t>,
    x: Var<'t>,
    cfg: &LossConfig,
    rng: &mut Rng,
) -> Result<LossTerms<'t>> {
    cfg.validate()?;
    let (b, m) = batch_dims(pv, x)?;
    let eps = sample_standard_normal(rng, &[cfg.m_samples, b, m])?;
    envae_loss_with_noise(pv, x, cfg, &eps)
}

/// FEnVAE uncertainty term ½‖g(μ + √2(z* − μ)) − g(μ)‖^β per example, given
/// the perturbed latent already built. Returns `(g(z*), uncertainty)`.
fn fenvae_decodes<'t>(
    pv: &ParamVars<'t>,
    post: &GaussianPosterior<'t>,
    z_star: Var<'t>,
    z_wide: Var<'t>,
    beta: f64,
) -> Result<(Var<'t>, Var<'t>)> {
    let b = post.mu.shape()[0];
    // One batched pass over the three latent sets: rows are g(z*), g(ẑ), g(μ).
    let decoded = decoder_forward(pv, concat(&[z_star, z_wide, post.mu])?)?;
    let g_star = decoded.narrow(0, b)?;
    let g_wide = decoded.narrow(b, b)?;
    let g_mu = decoded.narrow(2 * b, b)?;
    let uncertainty = g_wide.sub(g_mu)?.pow_norm(beta)?.scale(0.5)?;
    Ok((g_star, uncertainty))
}

/// Uncertainty loss ½‖g(μ + √2σ⊙ε) − g(μ)‖^β per example, `[B]`.
pub fn uncertainty_loss<'t>(
    pv: &ParamVars<'t>,
    post: &GaussianPosterior<'t>,
    eps: &NoiseDraw,
    beta: f64,
) -> Result<Var<'t>> {
    let z_star = reparameterize(post, eps)?;
    let z_wide = z_star.sub(post.mu)?.scale(std::f64::consts::SQRT_2)?.add(post.mu)?;
    Ok(fenvae_decodes(pv, post, z_star, z_wide, beta)?.1)
}

/// Single-draw objective with explicit noise `eps` `[B, m]`. When
/// `cfg.share_noise` is false, `eps_prime` builds the uncertainty term.
pub fn fenvae_loss_with_noise<'t>(
    pv: &ParamVars<'t>,
    x: Var<'t>,
    cfg: &LossConfig,
    eps: &NoiseDraw,
    eps_prime: Option<&NoiseDraw>,
) -> Result<LossTerms<'t>> {
    let (b, m) = batch_dims(pv, x)?;
    if eps.eps().shape() != [b, m] {
        return Err(Error::shape(format!(
            "fenvae noise must be [{b}, {m}], got {:?}",
            eps.eps().shape()
        )));
    }
    let post = encoder_forward(pv, x)?;
    let z_star = reparameterize(&post, eps)?;
    let z_wide = match (cfg.share_noise, eps_prime) {
        (true, _) => z_star.sub(post.mu)?.scale(std::f64::consts::SQRT_2)?.add(post.mu)?,
        (false, Some(e2)) => reparameterize(&post, e2)?
            .sub(post.mu)?
            .scale(std::f64::consts::SQRT_2)?
            .add(post.mu)?,
        (false, None) => {
            return Err(Error::contract("share_noise = false needs a second noise draw"))
        }
    };
    let (g_star, uncertainty) = fenvae_decodes(pv, &post, z_star, z_wide, cfg.beta)?;
    let mean_loss = g_star.sub(x)?.pow_norm(cfg.beta)?;
    assemble(
        mean_loss,
        Some(uncertainty.neg()?),
        kl_diag_gaussian(&post)?,
        cfg.alpha,
    )
}

pub fn fenvae_loss<'t>(
    pv: &ParamVars<'t>,
    x: Var<'t>,
    cfg: &LossConfig,
    rng: &mut Rng,
) -> Result<LossTerms<'t>> {
    cfg.validate()?;
    let (b, m) = batch_dims(pv, x)?;
    let eps = sample_standard_normal(rng, &[b, m])?;
    let eps_prime = if cfg.share_noise {
        None
    } else {
        Some(sample_standard_normal(rng, &[b, m])?)
    };
    fenvae_loss_with_noise(pv, x, cfg, &eps, eps_prime.as_ref())
}

fn single_draw_loss<'t>(
    pv: &ParamVars<'t>,
    x: Var<'t>,
    cfg: &LossConfig,
    eps: &NoiseDraw,
    l1: bool,
) -> Result<LossTerms<'t>> {
    let (b, m) = batch_dims(pv, x)?;
    if eps.eps().shape() != [b, m] {
        return Err(Error::shape(format!(
            "noise must be [{b}, {m}], got {:?}",
            eps.eps().shape()
        )));
    }
    let post = encoder_forward(pv, x)?;
    let z = reparameterize(&post, eps)?;
    let residual = decoder_forward(pv, z)?.sub(x)?;
    let recon = if l1 {
        residual.abs()?.sum_axis(1)?
    } else {
        residual.pow_norm(2.0)?
    };
    assemble(recon, None, kl_diag_gaussian(&post)?, cfg.alpha)
}

/// Negative Gaussian ELBO up to constants: ‖g(z) − x‖² + α·KL.
pub fn vanilla_loss_with_noise<'t>(
    pv: &ParamVars<'t>,
    x: Var<'t>,
    cfg: &LossConfig,
    eps: &NoiseDraw,
) -> Result<LossTerms<'t>> {
    single_draw_loss(pv, x, cfg, eps, false)
}

pub fn vanilla_elbo_loss<'t>(
    pv: &ParamVars<'t>,
    x: Var<'t>,
    cfg: &LossConfig,
    rng: &mut Rng,
) -> Result<LossTerms<'t>> {
    cfg.validate()?;
    let (b, m) = batch_dims(pv, x)?;
    let eps = sample_standard_normal(rng, &[b, m])?;
    vanilla_loss_with_noise(pv, x, cfg, &eps)
}

/// ‖g(z) − x‖₁ + α·KL.
pub fn l1_loss_with_noise<'t>(
    pv: &ParamVars<'t>,
    x: Var<'t>,
    cfg: &LossConfig,
    eps: &NoiseDraw,
) -> Result<LossTerms<'t>> {
    single_draw_loss(pv, x, cfg, eps, true)
}

pub fn l1_loss<'t>(
    pv: &ParamVars<'t>,
    x: Var<'t>,
    cfg: &LossConfig,
    rng: &mut Rng,
) -> Result<LossTerms<'t>> {
    cfg.validate()?;
    let (b, m) = batch_dims(pv, x)?;
    let eps = sample_standard_normal(rng, &[b, m])?;
    l1_loss_with_noise(pv, x, cfg, &eps)
}

/// Dispatches on `cfg.variant`.
pub fn compute_loss<'t>(
    pv: &ParamVars<'t>,
    x: Var<'t>,
    cfg: &LossConfig,
    rng: &mut Rng,
) -> Result<LossTerms<'t>> {
    match cfg.variant {
        LossVariant::Vanilla => vanilla_elbo_loss(pv, x, cfg, rng),
        LossVariant::L1 => l1_loss(pv, x, cfg, rng),
        LossVariant::Envae => envae_loss(pv, x, cfg, rng),
        LossVariant::Fenvae => fenvae_loss(pv, x, cfg, rng),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::{HiddenActivation, ModelArch, OutputActivation, Params};

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    fn linear_arch(n: usize, m: usize) -> ModelArch {
        ModelArch {
            input_dim: n,
            latent_dim: m,
            encoder_hidden: vec![],
            decoder_hidden: vec![],
            hidden_activation: HiddenActivation::Tanh,
            output_activation: OutputActivation::Identity,
        }
    }

    #[test]
    fn energy_score_two_points() {
        // samples {0, 2}, x = 0: accuracy (0+2)/2 = 1, dispersion 2·2/(2·2·1) = 1
        let s = t(&[2, 1, 1], &[0.0, 2.0]);
        let x = t(&[1, 1], &[0.0]);
        assert_eq!(energy_score_values(&s, &x, 1.0).unwrap(), vec![0.0]);
    }

    #[test]
    fn energy_score_identical_samples() {
        let s = t(&[3, 1, 2], &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        let x = t(&[1, 2], &[4.0, 6.0]);
        let got = energy_score_values(&s, &x, 1.0).unwrap()[0];
        assert!((got - 5.0).abs() < 1e-12);
    }

    #[test]
    fn energy_score_needs_two_samples() {
        let s = t(&[1, 1, 1], &[0.0]);
        let x = t(&[1, 1], &[0.0]);
        let err = energy_score_values(&s, &x, 1.0).unwrap_err();
        assert!(matches!(err, Error::Config(ref m) if m.contains("pairwise term undefined")));
    }

    #[test]
    fn config_validation() {
        let mut c = LossConfig::new(LossVariant::Envae);
        c.m_samples = 1;
        assert!(c.validate().is_err());
        c.m_samples = 2;
        c.beta = 2.5;
        assert!(c.validate().is_err());
        c.beta = 2.0;
        c.alpha = -1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn vanilla_and_l1_shifted_decoder() {
        // Encoder zero → μ = 0, logvar = 0 (KL = 0 since α = 0 anyway);
        // decoder g(z) = 0·z + 1 and x = 0 gives g(z) − x = 1 in each of 4 coords.
        let arch = linear_arch(4, 2);
        let mut p = Params::zeros(&arch).unwrap();
        p.set("dec.out.b", Tensor::ones(&[4])).unwrap();
        let cfg = LossConfig {
            alpha: 0.0,
            ..LossConfig::new(LossVariant::Vanilla)
        };
        let tape = Tape::new();
        let pv = p.attach(&tape, true);
        let x = tape.constant(Tensor::zeros(&[1, 4]));
        let eps = NoiseDraw::from_tensor(t(&[1, 2], &[0.3, -1.1]));
        let v = vanilla_loss_with_noise(&pv, x, &cfg, &eps).unwrap();
        assert_eq!(v.total.item().unwrap(), 4.0);
        let l = l1_loss_with_noise(&pv, x, &cfg, &eps).unwrap();
        assert_eq!(l.total.item().unwrap(), 4.0);
    }

    #[test]
    fn perfect_reconstruction_is_kl_only() {
        let arch = linear_arch(2, 1);
        let p = Params::zeros(&arch).unwrap();
        let cfg = LossConfig::new(LossVariant::L1);
        let tape = Tape::new();
        let pv = p.attach(&tape, true);
        let x = tape.constant(Tensor::zeros(&[1, 2]));
        let eps = NoiseDraw::from_tensor(t(&[1, 1], &[0.9]));
        let l = l1_loss_with_noise(&pv, x, &cfg, &eps).unwrap();
        assert_eq!(l.recon, 0.0);
        assert_eq!(l.total.item().unwrap(), cfg.alpha * l.kl);
        let v = vanilla_loss_with_noise(&pv, x, &LossConfig::new(LossVariant::Vanilla), &eps)
            .unwrap();
        assert_eq!(v.total.item().unwrap(), 0.0);
    }

    #[test]
    fn fenvae_zero_noise() {
        let arch = ModelArch {
            encoder_hidden: vec![5],
            decoder_hidden: vec![5],
            ..linear_arch(3, 2)
        };
        let p = Params::init(&arch, &mut Rng::new(4)).unwrap();
        let cfg = LossConfig::new(LossVariant::Fenvae);
        let xs = t(&[2, 3], &[0.1, 0.2, 0.3, 0.9, 0.8, 0.7]);
        let tape = Tape::new();
        let pv = p.attach(&tape, true);
        let x = tape.constant(xs.clone());
        let l = fenvae_loss_with_noise(&pv, x, &cfg, &NoiseDraw::zeros(&[2, 2]), None).unwrap();
        assert_eq!(l.dispersion, 0.0);

        let (mu, _) = p.encode(&xs).unwrap();
        let g = p.decode(&mu).unwrap();
        let expected: f64 = (0..2)
            .map(|i| {
                g.row(i)
                    .iter()
                    .zip(xs.row(i))
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .sum::<f64>()
            / 2.0;
        let total = l.total.item().unwrap();
        assert!((total - (expected + cfg.alpha * l.kl)).abs() < 1e-12);
    }

    #[test]
    fn fenvae_linear_decoder_uncertainty_matches_jacobian_form() {
        // g(z) = zW + b; uncertainty = ½‖√2·(σ⊙ε)W‖^β exactly.
        let arch = linear_arch(3, 2);
        let mut p = Params::init(&arch, &mut Rng::new(12)).unwrap();
        p.set("enc.logvar.b", Tensor::vector(&[-0.4, 0.3])).unwrap();
        let xs = t(&[1, 3], &[0.2, -0.1, 0.5]);
        let eps_v = [0.7, -1.3];
        let cfg = LossConfig::new(LossVariant::Fenvae);
        let tape = Tape::new();
        let pv = p.attach(&tape, false);
        let l = fenvae_loss_with_noise(
            &pv,
            tape.constant(xs.clone()),
            &cfg,
            &NoiseDraw::from_tensor(t(&[1, 2], &eps_v)),
            None,
        )
        .unwrap();

        let (_, lv) = p.encode(&xs).unwrap();
        let w = p.get("dec.out.w").unwrap();
        let step: Vec<f64> = (0..2)
            .map(|k| std::f64::consts::SQRT_2 * (lv.data()[k] / 2.0).exp() * eps_v[k])
            .collect();
        let jv: Vec<f64> = (0..3)
            .map(|j| (0..2).map(|k| step[k] * w.data()[k * 3 + j]).sum())
            .collect();
        let expected = 0.5 * jv.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((-l.dispersion - expected).abs() < 1e-12, "{} vs {expected}", -l.dispersion);
    }

    #[test]
    fn terms_recombine() {
        let arch = ModelArch {
            encoder_hidden: vec![4],
            decoder_hidden: vec![4],
            ..linear_arch(3, 2)
        };
        let p = Params::init(&arch, &mut Rng::new(1)).unwrap();
        let xs = t(&[2, 3], &[0.1, 0.2, 0.3, 0.9, 0.8, 0.7]);
        for variant in [
            LossVariant::Vanilla,
            LossVariant::L1,
            LossVariant::Envae,
            LossVariant::Fenvae,
        ] {
            let cfg = LossConfig {
                m_samples: 5,
                alpha: 0.7,
                ..LossConfig::new(variant)
            };
            let tape = Tape::new();
            let pv = p.attach(&tape, true);
            let l = compute_loss(&pv, tape.constant(xs.clone()), &cfg, &mut Rng::new(3)).unwrap();
            let total = l.total.item().unwrap();
            let sum = l.recon + l.dispersion + cfg.alpha * l.kl;
            assert!((total - sum).abs() <= 1e-12, "{variant}: {total} vs {sum}");
        }
    }
}
