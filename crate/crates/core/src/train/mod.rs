//! Minibatch Adam training for every loss variant.
//!
//! One [`Rng`] seeded from `TrainConfig::seed` drives parameter init, the
//! per-epoch shuffle and every noise draw, and its state is stored in the
//! checkpoint. Training is single-threaded, so `(seed, config, data)` fixes
//! the loss trajectory bit for bit, and resuming from a checkpoint continues
//! it exactly.

mod adam;
mod checkpoint;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, MAGIC,
    VERSION,
};

use crate::data::DataKind;
use crate::error::{Error, Result};
use crate::losses::{compute_loss, LossConfig};
use crate::nets::{ModelArch, Params};
use crate::random::Rng;
use crate::tensor::{Tape, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub log_every: u64,
    pub loss: LossConfig,
    pub arch: ModelArch,
}

impl TrainConfig {
    /// Defaults: 200 epochs, batch 64, Adam(1e-3, 0.9, 0.999, 1e-8).
    pub fn new(arch: ModelArch, loss: LossConfig) -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 64,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            log_every: 1,
            loss,
            arch,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.log_every == 0 {
            return Err(Error::config("epochs, batch_size and log_every must be positive"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::config("learning_rate must be positive"));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::config("adam_eps must be positive"));
        }
        self.arch.validate()?;
        self.loss.validate()
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }
}

/// One optimizer step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRecord {
    pub step: u64,
    pub epoch: u64,
    pub total: f64,
    pub recon: f64,
    pub dispersion: f64,
    pub kl: f64,
    pub ms: f64,
}

/// Means over one epoch's steps, plus its wall-clock time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochSummary {
    pub epoch: u64,
    pub steps: u64,
    pub total: f64,
    pub recon: f64,
    pub dispersion: f64,
    pub kl: f64,
    pub ms: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainTrace {
    pub records: Vec<TraceRecord>,
    pub epochs: Vec<EpochSummary>,
}

pub const TRACE_HEADER: [&str; 7] = ["step", "epoch", "total", "recon", "dispersion", "kl", "ms"];

impl TrainTrace {
    /// Writes `step,epoch,total,recon,dispersion,kl,ms`. Wall-clock time is
    /// the only non-deterministic column; with `wall_clock = false` it is
    /// written as 0 so that same-seed runs produce identical files.
    pub fn write_csv<W: Write>(&self, out: W, wall_clock: bool) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(TRACE_HEADER)?;
        for r in &self.records {
            let ms = if wall_clock { r.ms } else { 0.0 };
            w.write_record([
                r.step.to_string(),
                r.epoch.to_string(),
                r.total.to_string(),
                r.recon.to_string(),
                r.dispersion.to_string(),
                r.kl.to_string(),
                ms.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("trace.csv", e))?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>, wall_clock: bool) -> Result<()> {
        let path = path.as_ref();
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f), wall_clock)
    }

    /// Median wall-clock ms over the recorded epochs.
    pub fn median_epoch_ms(&self) -> Option<f64> {
        median(self.epochs.iter().map(|e| e.ms).collect())
    }

    pub fn last_epoch(&self) -> Option<&EpochSummary> {
        self.epochs.last()
    }
}

pub(crate) fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// Training state that can be advanced epoch by epoch and checkpointed.
pub struct Trainer {
    config: TrainConfig,
    params: Params,
    adam: AdamState,
    rng: Rng,
    step: u64,
    epoch: u64,
    trace: TrainTrace,
    data_kind: Option<DataKind>,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::new(config.seed);
        let params = Params::init(&config.arch, &mut rng)?;
        let adam = AdamState::new(&params);
        Ok(Trainer {
            config,
            params,
            adam,
            rng,
            step: 0,
            epoch: 0,
            trace: TrainTrace::default(),
            data_kind: None,
        })
    }

    /// Continues from `ckpt`. Architecture and loss must match `config`.
    pub fn from_checkpoint(ckpt: Checkpoint, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if ckpt.arch() != &config.arch {
            return Err(Error::config("checkpoint architecture differs from config"));
        }
        if ckpt.loss != config.loss {
            return Err(Error::config("checkpoint loss config differs from config"));
        }
        Ok(Trainer {
            config,
            params: ckpt.params,
            adam: ckpt.adam,
            rng: Rng::from_state(ckpt.rng),
            step: ckpt.step,
            epoch: ckpt.epoch,
            trace: TrainTrace::default(),
            data_kind: ckpt.data_kind,
        })
    }

    pub fn with_data_kind(mut self, kind: DataKind) -> Self {
        self.data_kind = Some(kind);
        self
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn trace(&self) -> &TrainTrace {
        &self.trace
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            version: VERSION,
            params: self.params.clone(),
            adam: self.adam.clone(),
            step: self.step,
            epoch: self.epoch,
            rng: self.rng.state(),
            loss: self.config.loss.clone(),
            data_kind: self.data_kind,
        }
    }

    fn step_on(&mut self, batch: &Tensor) -> Result<TraceRecord> {
        let started = Instant::now();
        let tape = Tape::new();
        let pv = self.params.attach(&tape, true);
        let x = tape.constant(batch.clone());
        let terms = compute_loss(&pv, x, &self.config.loss, &mut self.rng)?;
        let total = terms.total.item()?;
        let next_step = self.step + 1;
        if ![total, terms.recon, terms.dispersion, terms.kl]
            .iter()
            .all(|v| v.is_finite())
        {
            return Err(Error::NonFiniteLoss {
                step: next_step,
                epoch: self.epoch + 1,
                total,
                recon: terms.recon,
                dispersion: terms.dispersion,
                kl: terms.kl,
            });
        }
        let g = tape.backward(terms.total)?;
        let grads: BTreeMap<String, Tensor> =
            pv.iter().map(|(k, v)| (k.clone(), g.get(*v))).collect();
        drop(pv);
        adam_step(&mut self.params, &grads, &mut self.adam, &self.config.adam())?;
        self.step = next_step;
        Ok(TraceRecord {
            step: self.step,
            epoch: self.epoch + 1,
            total,
            recon: terms.recon,
            dispersion: terms.dispersion,
            kl: terms.kl,
            ms: started.elapsed().as_secs_f64() * 1e3,
        })
    }

    /// One pass over `data` `[N, n]` in a freshly shuffled order.
    pub fn run_epoch(&mut self, data: &Tensor) -> Result<EpochSummary> {
        if data.rank() != 2 || data.cols() != self.config.arch.input_dim {
            return Err(Error::shape(format!(
                "dataset {:?} does not match input_dim {}",
                data.shape(),
                self.config.arch.input_dim
            )));
        }
        let started = Instant::now();
        let order = self.rng.permutation(data.rows());
        let mut sums = [0.0; 4];
        let mut steps = 0u64;
        for chunk in order.chunks(self.config.batch_size) {
            let batch = data.select_rows(chunk)?;
            let rec = self.step_on(&batch)?;
            for (s, v) in sums.iter_mut().zip([rec.total, rec.recon, rec.dispersion, rec.kl]) {
                *s += v;
            }
            steps += 1;
            if rec.step % self.config.log_every == 0 {
                self.trace.records.push(rec);
            }
        }
        self.epoch += 1;
        let n = steps as f64;
        let summary = EpochSummary {
            epoch: self.epoch,
            steps,
            total: sums[0] / n,
            recon: sums[1] / n,
            dispersion: sums[2] / n,
            kl: sums[3] / n,
            ms: started.elapsed().as_secs_f64() * 1e3,
        };
        self.trace.epochs.push(summary);
        Ok(summary)
    }

    pub fn run_epochs(&mut self, data: &Tensor, epochs: u64) -> Result<()> {
        for _ in 0..epochs {
            self.run_epoch(data)?;
        }
        Ok(())
    }

    /// Runs until `config.epochs` epochs have completed in total.
    pub fn run_to_end(&mut self, data: &Tensor) -> Result<()> {
        while self.epoch < self.config.epochs {
            self.run_epoch(data)?;
        }
        Ok(())
    }

    pub fn into_parts(self) -> (Checkpoint, TrainTrace) {
        let ckpt = self.checkpoint();
        (ckpt, self.trace)
    }
}

/// Trains from scratch for `config.epochs` epochs.
pub fn train(config: &TrainConfig, data: &Tensor) -> Result<(Checkpoint, TrainTrace)> {
    let mut t = Trainer::new(config.clone())?;
    t.run_to_end(data)?;
    Ok(t.into_parts())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::LossVariant;
    use crate::nets::{HiddenActivation, OutputActivation};

    fn toy() -> (TrainConfig, Tensor) {
        let arch = ModelArch {
            input_dim: 2,
            latent_dim: 2,
            encoder_hidden: vec![16],
            decoder_hidden: vec![16],
            hidden_activation: HiddenActivation::Tanh,
            output_activation: OutputActivation::Sigmoid,
        };
        let mut rng = Rng::new(99);
        let data: Vec<f64> = (0..32).map(|_| 0.2 + 0.6 * rng.uniform()).collect();
        let mut cfg = TrainConfig::new(arch, LossConfig::new(LossVariant::Vanilla));
        cfg.epochs = 50;
        cfg.batch_size = 4;
        cfg.learning_rate = 1e-2;
        (cfg, Tensor::new(vec![16, 2], data).unwrap())
    }

    #[test]
    fn vanilla_loss_decreases() {
        let (cfg, data) = toy();
        let (_, trace) = train(&cfg, &data).unwrap();
        let first = trace.epochs.first().unwrap().total;
        let last = trace.last_epoch().unwrap().total;
        assert!(last < first, "{first} -> {last}");
    }

    #[test]
    fn same_seed_same_trajectory() {
        let (mut cfg, data) = toy();
        cfg.epochs = 3;
        cfg.loss = LossConfig {
            m_samples: 4,
            ..LossConfig::new(LossVariant::Envae)
        };
        let (c1, t1) = train(&cfg, &data).unwrap();
        let (c2, t2) = train(&cfg, &data).unwrap();
        assert_eq!(c1, c2);
        let strip = |t: &TrainTrace| {
            t.records
                .iter()
                .map(|r| (r.step, r.total.to_bits(), r.kl.to_bits()))
                .collect::<Vec<_>>()
        };
        assert_eq!(strip(&t1), strip(&t2));
    }

    #[test]
    fn trace_rows_follow_log_every() {
        let (mut cfg, data) = toy();
        cfg.epochs = 2;
        cfg.log_every = 3;
        let (ckpt, trace) = train(&cfg, &data).unwrap();
        assert_eq!(ckpt.step, 8);
        assert_eq!(
            trace.records.iter().map(|r| r.step).collect::<Vec<_>>(),
            vec![3, 6]
        );
    }

    #[test]
    fn csv_header_and_zeroed_clock() {
        let (mut cfg, data) = toy();
        cfg.epochs = 1;
        let (_, trace) = train(&cfg, &data).unwrap();
        let mut buf = Vec::new();
        trace.write_csv(&mut buf, false).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "step,epoch,total,recon,dispersion,kl,ms");
        assert!(lines.all(|l| l.ends_with(",0")));
    }

    #[test]
    fn bad_config_rejected() {
        let (mut cfg, _) = toy();
        cfg.adam_beta1 = 1.0;
        assert!(Trainer::new(cfg).is_err());
    }
}
