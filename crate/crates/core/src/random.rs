//! Seeded randomness, Gaussian noise, the reparameterization trick and the
//! closed-form KL divergence of a diagonal Gaussian from N(0, I).
//!
//! The generator is ChaCha8 (`rand_chacha`). A stream is identified by a
//! 64-bit seed and a 64-bit stream id, and its position is the ChaCha word
//! counter, so the full state fits in [`RngState`] and round-trips through
//! checkpoints exactly.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Tensor, Var};

/// Deterministic pseudo-random stream.
#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

/// Serializable position of an [`Rng`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub stream: u64,
    pub word_pos: u128,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Rng { seed, inner }
    }

    pub fn state(&self) -> RngState {
        RngState {
            seed: self.seed,
            stream: self.inner.get_stream(),
            word_pos: self.inner.get_word_pos(),
        }
    }

    pub fn from_state(state: RngState) -> Self {
        let mut rng = Self::with_stream(state.seed, state.stream);
        rng.inner.set_word_pos(state.word_pos);
        rng
    }

    /// `k` independent child streams. Consumes one draw from `self`; the
    /// children share a fresh seed and differ by stream id.
    pub fn split(&mut self, k: usize) -> Vec<Rng> {
        let seed = self.inner.next_u64();
        (0..k as u64).map(|s| Rng::with_stream(seed, s)).collect()
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        rand::Rng::random::<f64>(&mut self.inner)
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        rand::Rng::random_range(&mut self.inner, 0..n)
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        self.shuffle(&mut idx);
        idx
    }
}

/// i.i.d. N(0, 1) variates used to reparameterize a posterior.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseDraw {
    eps: Tensor,
}

impl NoiseDraw {
    pub fn eps(&self) -> &Tensor {
        &self.eps
    }

    pub fn into_tensor(self) -> Tensor {
        self.eps
    }

    /// All-zero noise, which collapses every draw onto the posterior mean.
    pub fn zeros(shape: &[usize]) -> Self {
        NoiseDraw {
            eps: Tensor::zeros(shape),
        }
    }

    /// Wraps given variates. Intended for tests and for replaying fixed noise.
    pub fn from_tensor(eps: Tensor) -> Self {
        NoiseDraw { eps }
    }
}

pub fn sample_standard_normal(rng: &mut Rng, shape: &[usize]) -> Result<NoiseDraw> {
    if shape.is_empty() {
        return Err(Error::shape("noise shape must be non-empty"));
    }
    let numel: usize = shape.iter().product();
    let data = (0..numel).map(|_| rng.normal()).collect();
    Ok(NoiseDraw {
        eps: Tensor::new(shape.to_vec(), data)?,
    })
}

/// Diagonal Gaussian q(z|x) for a batch: means and log-variances, `[B, m]`.
#[derive(Clone, Copy, Debug)]
pub struct GaussianPosterior<'t> {
    pub mu: Var<'t>,
    pub logvar: Var<'t>,
}

impl<'t> GaussianPosterior<'t> {
    pub fn new(mu: Var<'t>, logvar: Var<'t>) -> Result<Self> {
        if mu.shape() != logvar.shape() {
            return Err(Error::shape(format!(
                "posterior mu {:?} and logvar {:?} differ",
                mu.shape(),
                logvar.shape()
            )));
        }
        Ok(GaussianPosterior { mu, logvar })
    }

    /// Per-dimension standard deviation exp(logvar / 2).
    pub fn std(&self) -> Result<Var<'t>> {
        self.logvar.scale(0.5)?.exp()
    }
}

/// z = mu + exp(logvar / 2) ⊙ eps.
///
/// `eps` may carry extra leading dimensions (e.g. `[M, B, m]` for M draws per
/// example); the posterior broadcasts over them.
pub fn reparameterize<'t>(post: &GaussianPosterior<'t>, eps: &NoiseDraw) -> Result<Var<'t>> {
    let shape = post.mu.shape();
    let es = eps.eps.shape();
    if es.len() < shape.len() || es[es.len() - shape.len()..] != shape[..] {
        return Err(Error::shape(format!(
            "noise {es:?} does not match posterior {shape:?}"
        )));
    }
    let tape = post.mu.tape();
    let e = tape.constant(eps.eps.clone());
    post.std()?.mul(e)?.add(post.mu)
}

/// KL(q ‖ N(0, I)) per example: −½ Σ_k (1 + logvar − mu² − exp(logvar)). Shape `[B]`.
pub fn kl_diag_gaussian<'t>(post: &GaussianPosterior<'t>) -> Result<Var<'t>> {
    let terms = post
        .logvar
        .add_scalar(1.0)?
        .sub(post.mu.square()?)?
        .sub(post.logvar.exp()?)?;
    let last = post.mu.shape().len() - 1;
    terms.sum_axis(last)?.scale(-0.5)
}
