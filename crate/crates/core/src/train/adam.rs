use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nets::Params;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates per parameter, plus the step counter
/// used for bias correction.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: BTreeMap<String, Tensor>,
    pub v: BTreeMap<String, Tensor>,
}

impl AdamState {
    pub fn new(params: &Params) -> Self {
        let zeros: BTreeMap<String, Tensor> = params
            .iter()
            .map(|(k, t)| (k.clone(), Tensor::zeros(t.shape())))
            .collect();
        AdamState {
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// One bias-corrected Adam update of every parameter.
pub fn adam_step(
    params: &mut Params,
    grads: &BTreeMap<String, Tensor>,
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    for (name, p) in params.iter() {
        let g = grads
            .get(name)
            .ok_or_else(|| Error::contract(format!("missing gradient for parameter {name}")))?;
        if g.shape() != p.shape() {
            return Err(Error::shape(format!(
                "gradient for {name} has shape {:?}, parameter has {:?}",
                g.shape(),
                p.shape()
            )));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (name, p) in params.iter_mut() {
        let g = &grads[name];
        let m = state
            .m
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(p.shape()));
        let v = state
            .v
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(p.shape()));
        let (pd, md, vd) = (p.data_mut(), m.data_mut(), v.data_mut());
        for (i, &gi) in g.data().iter().enumerate() {
            md[i] = cfg.beta1 * md[i] + (1.0 - cfg.beta1) * gi;
            vd[i] = cfg.beta2 * vd[i] + (1.0 - cfg.beta2) * gi * gi;
            let m_hat = md[i] / bc1;
            let v_hat = vd[i] / bc2;
            pd[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::{HiddenActivation, ModelArch, OutputActivation};
    use crate::random::Rng;

    fn tiny() -> Params {
        let arch = ModelArch {
            input_dim: 2,
            latent_dim: 1,
            encoder_hidden: vec![],
            decoder_hidden: vec![],
            hidden_activation: HiddenActivation::Tanh,
            output_activation: OutputActivation::Identity,
        };
        Params::init(&arch, &mut Rng::new(0)).unwrap()
    }

    fn grads_like(p: &Params, v: f64) -> BTreeMap<String, Tensor> {
        p.iter()
            .map(|(k, t)| (k.clone(), Tensor::full(t.shape(), v)))
            .collect()
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = tiny();
        let before = p.clone();
        let mut st = AdamState::new(&p);
        let g = grads_like(&p, 0.0);
        for _ in 0..3 {
            adam_step(&mut p, &g, &mut st, &AdamConfig::default()).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // m̂ = g and v̂ = g² after one step, so Δ = −lr·g/(|g| + eps).
        let mut p = tiny();
        for (name, t) in p.clone().iter() {
            p.set(name, Tensor::zeros(t.shape())).unwrap();
        }
        let mut st = AdamState::new(&p);
        let cfg = AdamConfig {
            lr: 0.1,
            ..Default::default()
        };
        let g = grads_like(&p, 1.0);
        adam_step(&mut p, &g, &mut st, &cfg).unwrap();
        let w = p.get("dec.out.w").unwrap().data()[0];
        let expected = -0.1 / (1.0 + 1e-8);
        assert!((w - expected).abs() < 1e-15, "{w}");
        assert!((w + 0.1).abs() < 1e-8);
    }

    #[test]
    fn missing_gradient_is_contract_error() {
        let mut p = tiny();
        let mut st = AdamState::new(&p);
        let mut g = grads_like(&p, 1.0);
        g.remove("enc.mu.w");
        let err = adam_step(&mut p, &g, &mut st, &AdamConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
        assert_eq!(st.step, 0);
    }
}
