//! Trains vanilla, EnVAE and FEnVAE on the 2-D Gaussian mixture and compares
//! the energy distance of prior samples to held-out data.
//!
//! `cargo run --release --example train_gmm -- [epochs]`

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

use envae::data::{gen_gmm2d, split};
use envae::eval::energy_distance;
use envae::losses::{LossConfig, LossVariant};
use envae::nets::{HiddenActivation, ModelArch, OutputActivation};
use envae::random::{sample_standard_normal, Rng};
use envae::train::{TrainConfig, Trainer};

fn main() -> envae::Result<()> {
    let epochs: u64 = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(30);
    let ds = gen_gmm2d(8, 1.0, 2000, 0)?;
    let (train, test) = split(&ds, 0.2, 0)?;
    let arch = ModelArch {
        input_dim: 2,
        latent_dim: 2,
        encoder_hidden: vec![128, 128],
        decoder_hidden: vec![128, 128],
        hidden_activation: HiddenActivation::Tanh,
        output_activation: OutputActivation::Identity,
    };
    for variant in [LossVariant::Vanilla, LossVariant::Envae, LossVariant::Fenvae] {
        let loss = LossConfig {
            m_samples: 10,
            ..LossConfig::new(variant)
        };
        let mut cfg = TrainConfig::new(arch.clone(), loss);
        cfg.epochs = epochs;
        let mut trainer = Trainer::new(cfg)?;
        trainer.run_to_end(&train.x)?;
        let last = trainer.trace().last_epoch().copied().unwrap();

        let z = sample_standard_normal(&mut Rng::new(1), &[1000, 2])?.into_tensor();
        let generated = trainer.params().decode(&z)?;
        let ed = energy_distance(&generated, &test.x, 1.0)?;
        println!(
            "{variant:>8}: loss {:.4} (recon {:.4}, dispersion {:.4}, kl {:.4}), \
             {:.1} ms/epoch, energy distance {ed:.4}",
            last.total,
            last.recon,
            last.dispersion,
            last.kl,
            trainer.trace().median_epoch_ms().unwrap_or(f64::NAN),
        );
    }
    Ok(())
}
