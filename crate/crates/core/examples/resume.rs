//! Trains five epochs, checkpoints, resumes for five more, and confirms the
//! result is bit-identical to ten uninterrupted epochs.

use envae::data::gen_gmm2d;
use envae::losses::{LossConfig, LossVariant};
use envae::nets::{HiddenActivation, ModelArch, OutputActivation};
use envae::train::{load_checkpoint, save_checkpoint, TrainConfig, Trainer};

fn main() -> envae::Result<()> {
    let ds = gen_gmm2d(4, 1.0, 400, 0)?;
    let arch = ModelArch {
        input_dim: 2,
        latent_dim: 2,
        encoder_hidden: vec![32],
        decoder_hidden: vec![32],
        hidden_activation: HiddenActivation::Tanh,
        output_activation: OutputActivation::Identity,
    };
    let loss = LossConfig {
        m_samples: 8,
        ..LossConfig::new(LossVariant::Envae)
    };
    let mut cfg = TrainConfig::new(arch, loss);
    cfg.epochs = 10;

    let mut straight = Trainer::new(cfg.clone())?;
    straight.run_to_end(&ds.x)?;

    let dir = tempfile::tempdir().map_err(|e| envae::Error::Io { path: "tmp".into(), source: e })?;
    let path = dir.path().join("half.bin");
    let mut first = Trainer::new(cfg.clone())?;
    first.run_epochs(&ds.x, 5)?;
    save_checkpoint(&first.checkpoint(), &path)?;
    let mut resumed = Trainer::from_checkpoint(load_checkpoint(&path)?, cfg)?;
    resumed.run_to_end(&ds.x)?;

    let same = straight.params().flatten().data().iter().map(|v| v.to_bits()).eq(
        resumed.params().flatten().data().iter().map(|v| v.to_bits()),
    );
    println!("epochs: straight {}, resumed {}", straight.epoch(), resumed.epoch());
    println!("parameters bit-identical: {same}");
    Ok(())
}
