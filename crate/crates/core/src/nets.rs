//! MLP encoder q(z|x) and deterministic MLP decoder g(z).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::random::{GaussianPosterior, Rng};
use crate::tensor::{Tape, Tensor, Var};

/// Encoder log-variance is clamped into this range.
pub const LOGVAR_CLAMP: (f64, f64) = (-20.0, 20.0);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HiddenActivation {
    Tanh,
    Relu,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputActivation {
    Sigmoid,
    Identity,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelArch {
    pub input_dim: usize,
    pub latent_dim: usize,
    pub encoder_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    pub hidden_activation: HiddenActivation,
    pub output_activation: OutputActivation,
}

impl ModelArch {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.latent_dim == 0 {
            return Err(Error::config("input_dim and latent_dim must be >= 1"));
        }
        if self.encoder_hidden.iter().chain(&self.decoder_hidden).any(|&w| w == 0) {
            return Err(Error::config("hidden widths must be positive"));
        }
        Ok(())
    }

    /// `(name, fan_in, fan_out)` for every dense layer, encoder first.
    fn layers(&self) -> Vec<(String, usize, usize)> {
        let mut out = Vec::new();
        let mut width = self.input_dim;
        for (i, &h) in self.encoder_hidden.iter().enumerate() {
            out.push((format!("enc.h{i}"), width, h));
            width = h;
        }
        out.push(("enc.mu".into(), width, self.latent_dim));
        out.push(("enc.logvar".into(), width, self.latent_dim));
        let mut width = self.latent_dim;
        for (i, &h) in self.decoder_hidden.iter().enumerate() {
            out.push((format!("dec.h{i}"), width, h));
            width = h;
        }
        out.push(("dec.out".into(), width, self.input_dim));
        out
    }
}

/// Named weights for encoder (`enc.*`) and decoder (`dec.*`). Layer `L` owns
/// `L.w` with shape `[fan_in, fan_out]` and `L.b` with shape `[fan_out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Params {
    arch: ModelArch,
    tensors: BTreeMap<String, Tensor>,
}

impl Params {
    /// Weights ~ N(0, 1/fan_in), biases zero.
    pub fn init(arch: &ModelArch, rng: &mut Rng) -> Result<Self> {
        arch.validate()?;
        let mut tensors = BTreeMap::new();
        for (name, fan_in, fan_out) in arch.layers() {
            let std = 1.0 / (fan_in as f64).sqrt();
            let w = (0..fan_in * fan_out).map(|_| rng.normal() * std).collect();
            tensors.insert(format!("{name}.w"), Tensor::new(vec![fan_in, fan_out], w)?);
            tensors.insert(format!("{name}.b"), Tensor::zeros(&[fan_out]));
        }
        Ok(Params {
            arch: arch.clone(),
            tensors,
        })
    }

    pub fn zeros(arch: &ModelArch) -> Result<Self> {
        arch.validate()?;
        let mut tensors = BTreeMap::new();
        for (name, fan_in, fan_out) in arch.layers() {
            tensors.insert(format!("{name}.w"), Tensor::zeros(&[fan_in, fan_out]));
            tensors.insert(format!("{name}.b"), Tensor::zeros(&[fan_out]));
        }
        Ok(Params {
            arch: arch.clone(),
            tensors,
        })
    }

    /// Rebuilds from named tensors, checking names and shapes against `arch`.
    pub fn from_tensors(arch: &ModelArch, tensors: BTreeMap<String, Tensor>) -> Result<Self> {
        let reference = Params::zeros(arch)?;
        if reference.tensors.len() != tensors.len() {
            return Err(Error::shape(format!(
                "expected {} parameter tensors, got {}",
                reference.tensors.len(),
                tensors.len()
            )));
        }
        for (name, t) in &reference.tensors {
            match tensors.get(name) {
                Some(got) if got.shape() == t.shape() => {}
                Some(got) => {
                    return Err(Error::shape(format!(
                        "parameter {name}: expected {:?}, got {:?}",
                        t.shape(),
                        got.shape()
                    )))
                }
                None => return Err(Error::shape(format!("missing parameter {name}"))),
            }
        }
        Ok(Params {
            arch: arch.clone(),
            tensors,
        })
    }

    pub fn arch(&self) -> &ModelArch {
        &self.arch
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    /// Replaces a tensor of the same shape.
    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        let slot = self
            .tensors
            .get_mut(name)
            .ok_or_else(|| Error::shape(format!("unknown parameter {name}")))?;
        if slot.shape() != value.shape() {
            return Err(Error::shape(format!(
                "parameter {name}: expected {:?}, got {:?}",
                slot.shape(),
                value.shape()
            )));
        }
        *slot = value;
        Ok(())
    }

    /// Sorted by name.
    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub(crate) fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn encoder_names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys().filter(|k| k.starts_with("enc."))
    }

    pub fn decoder_names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys().filter(|k| k.starts_with("dec."))
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    /// Records every tensor on `tape`, as leaves when `trainable`.
    pub fn attach<'t>(&self, tape: &'t Tape, trainable: bool) -> ParamVars<'t> {
        let vars = self
            .tensors
            .iter()
            .map(|(k, t)| {
                let v = if trainable {
                    tape.leaf(t.clone())
                } else {
                    tape.constant(t.clone())
                };
                (k.clone(), v)
            })
            .collect();
        ParamVars {
            arch: self.arch.clone(),
            vars,
        }
    }

    /// All entries concatenated in name order.
    pub fn flatten(&self) -> Tensor {
        let data: Vec<f64> = self.tensors.values().flat_map(|t| t.data().iter().copied()).collect();
        Tensor::vector(&data)
    }

    /// Records parameters as slices of one flat `[num_scalars]` variable, laid
    /// out as in [`Params::flatten`]. Gradients wrt `flat` then cover every entry.
    pub fn attach_flat<'t>(&self, flat: Var<'t>) -> Result<ParamVars<'t>> {
        if flat.shape() != [self.num_scalars()] {
            return Err(Error::shape(format!(
                "flat parameters must be [{}], got {:?}",
                self.num_scalars(),
                flat.shape()
            )));
        }
        let mut vars = BTreeMap::new();
        let mut start = 0;
        for (k, t) in &self.tensors {
            let v = flat.narrow(start, t.numel())?.reshape(t.shape())?;
            start += t.numel();
            vars.insert(k.clone(), v);
        }
        Ok(ParamVars {
            arch: self.arch.clone(),
            vars,
        })
    }

    /// Posterior means and log-variances for `x` `[B, n]`, no gradient tracking.
    pub fn encode(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let tape = Tape::new();
        let pv = self.attach(&tape, false);
        let post = encoder_forward(&pv, tape.constant(x.clone()))?;
        Ok((post.mu.to_tensor(), post.logvar.to_tensor()))
    }

    /// g(z) for `z` `[B, m]`, no gradient tracking.
    pub fn decode(&self, z: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        let pv = self.attach(&tape, false);
        Ok(decoder_forward(&pv, tape.constant(z.clone()))?.to_tensor())
    }
}

/// [`Params`] recorded on a tape.
pub struct ParamVars<'t> {
    arch: ModelArch,
    vars: BTreeMap<String, Var<'t>>,
}

impl<'t> ParamVars<'t> {
    pub fn arch(&self) -> &ModelArch {
        &self.arch
    }

    pub fn get(&self, name: &str) -> Result<Var<'t>> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::contract(format!("no parameter {name}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var<'t>)> {
        self.vars.iter()
    }

    fn dense(&self, layer: &str, x: Var<'t>) -> Result<Var<'t>> {
        let w = self.get(&format!("{layer}.w"))?;
        let b = self.get(&format!("{layer}.b"))?;
        x.matmul(w)?.add(b)
    }

    fn hidden(&self, x: Var<'t>) -> Result<Var<'t>> {
        match self.arch.hidden_activation {
            HiddenActivation::Tanh => x.tanh(),
            HiddenActivation::Relu => x.relu(),
        }
    }
}

fn expect_cols(x: Var<'_>, cols: usize, what: &str) -> Result<()> {
    let s = x.shape();
    if s.len() != 2 || s[1] != cols {
        return Err(Error::shape(format!("{what}: expected [B, {cols}], got {s:?}")));
    }
    Ok(())
}

/// Shared tanh/relu trunk followed by separate mean and log-variance heads.
pub fn encoder_forward<'t>(pv: &ParamVars<'t>, x: Var<'t>) -> Result<GaussianPosterior<'t>> {
    expect_cols(x, pv.arch.input_dim, "encoder input")?;
    let mut h = x;
    for i in 0..pv.arch.encoder_hidden.len() {
        h = pv.hidden(pv.dense(&format!("enc.h{i}"), h)?)?;
    }
    let mu = pv.dense("enc.mu", h)?;
    let logvar = pv
        .dense("enc.logvar", h)?
        .clamp(LOGVAR_CLAMP.0, LOGVAR_CLAMP.1)?;
    GaussianPosterior::new(mu, logvar)
}

/// The deterministic decoder g(z). No sampling happens here.
pub fn decoder_forward<'t>(pv: &ParamVars<'t>, z: Var<'t>) -> Result<Var<'t>> {
    expect_cols(z, pv.arch.latent_dim, "decoder input")?;
    let mut h = z;
    for i in 0..pv.arch.decoder_hidden.len() {
        h = pv.hidden(pv.dense(&format!("dec.h{i}"), h)?)?;
    }
    let out = pv.dense("dec.out", h)?;
    match pv.arch.output_activation {
        OutputActivation::Sigmoid => out.sigmoid(),
        OutputActivation::Identity => Ok(out),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::finite_diff_check;

    fn arch(n: usize, m: usize, hidden: Vec<usize>, out: OutputActivation) -> ModelArch {
        ModelArch {
            input_dim: n,
            latent_dim: m,
            encoder_hidden: hidden.clone(),
            decoder_hidden: hidden,
            hidden_activation: HiddenActivation::Tanh,
            output_activation: out,
        }
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let a = arch(5, 2, vec![8], OutputActivation::Sigmoid);
        let p1 = Params::init(&a, &mut Rng::new(9)).unwrap();
        let p2 = Params::init(&a, &mut Rng::new(9)).unwrap();
        assert_eq!(p1, p2);
        for (name, t) in p1.iter() {
            if name.ends_with(".b") {
                assert!(t.data().iter().all(|&v| v == 0.0), "{name}");
            }
        }
    }

    #[test]
    fn init_weight_scale() {
        let a = arch(256, 4, vec![256], OutputActivation::Identity);
        let p = Params::init(&a, &mut Rng::new(1)).unwrap();
        let w = p.get("enc.h0.w").unwrap().data();
        let n = w.len() as f64;
        let mean = w.iter().sum::<f64>() / n;
        let std = (w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        let target = 1.0 / 256f64.sqrt();
        assert!((std / target - 1.0).abs() < 0.2, "{std} vs {target}");
    }

    #[test]
    fn zero_params_give_standard_posterior_and_half_outputs() {
        let a = arch(3, 2, vec![4], OutputActivation::Sigmoid);
        let p = Params::zeros(&a).unwrap();
        let x = Tensor::new(vec![2, 3], vec![0.1, 0.9, 0.4, 1.0, 0.0, 0.3]).unwrap();
        let (mu, lv) = p.encode(&x).unwrap();
        assert!(mu.data().iter().chain(lv.data()).all(|&v| v == 0.0));
        let out = p.decode(&Tensor::new(vec![1, 2], vec![0.3, -2.0]).unwrap()).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn identical_rows_identical_posteriors() {
        let a = arch(3, 2, vec![4], OutputActivation::Sigmoid);
        let p = Params::init(&a, &mut Rng::new(2)).unwrap();
        let x = Tensor::new(vec![2, 3], vec![0.2, 0.5, 0.7, 0.2, 0.5, 0.7]).unwrap();
        let (mu, lv) = p.encode(&x).unwrap();
        assert_eq!(mu.row(0), mu.row(1));
        assert_eq!(lv.row(0), lv.row(1));
    }

    #[test]
    fn linear_decoder_is_affine() {
        let a = arch(3, 2, vec![], OutputActivation::Identity);
        let mut p = Params::zeros(&a).unwrap();
        // z·W + b with W = Aᵀ
        let w = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, -1.0, 0.5, 0.0]).unwrap();
        p.set("dec.out.w", w).unwrap();
        p.set("dec.out.b", Tensor::vector(&[0.1, 0.2, 0.3])).unwrap();
        let out = p.decode(&Tensor::new(vec![1, 2], vec![2.0, 4.0]).unwrap()).unwrap();
        assert_eq!(out.data(), &[2.0 - 4.0 + 0.1, 4.0 + 2.0 + 0.2, 6.0 + 0.3]);
    }

    #[test]
    fn decoder_is_bit_deterministic() {
        let a = arch(4, 2, vec![8], OutputActivation::Sigmoid);
        let p = Params::init(&a, &mut Rng::new(5)).unwrap();
        let z = Tensor::new(vec![1, 2], vec![0.3, -0.8]).unwrap();
        assert_eq!(p.decode(&z).unwrap(), p.decode(&z).unwrap());
    }

    #[test]
    fn shape_mismatch_rejected() {
        let a = arch(4, 2, vec![8], OutputActivation::Sigmoid);
        let p = Params::zeros(&a).unwrap();
        assert!(p.encode(&Tensor::zeros(&[1, 3])).is_err());
        assert!(p.decode(&Tensor::zeros(&[1, 3])).is_err());
    }

    #[test]
    fn encoder_gradient_wrt_input() {
        let a = arch(4, 2, vec![6], OutputActivation::Sigmoid);
        let p = Params::init(&a, &mut Rng::new(8)).unwrap();
        let x = Tensor::new(vec![2, 4], vec![0.1, 0.2, -0.3, 0.4, 0.5, -0.6, 0.7, 0.8]).unwrap();
        let r = finite_diff_check(
            |xv| {
                let pv = p.attach(xv.tape(), false);
                let post = encoder_forward(&pv, xv)?;
                post.mu.tanh()?.sum()?.add(post.logvar.square()?.sum()?)
            },
            &x,
            1e-6,
        )
        .unwrap();
        assert!(r.max_rel_error <= 1e-4, "{}", r.max_rel_error);
    }
}
