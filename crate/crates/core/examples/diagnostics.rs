//! Trains a small FEnVAE on the Gaussian mixture, then runs the diagnostic
//! battery: variance map, residuals, Lipschitz estimate, Jacobian and the
//! correlation between the single-sample and pairwise dispersion terms.

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

use envae::data::{gen_gmm2d, split};
use envae::eval::{
    decoder_jacobian, latent_variance_mean, lipschitz_estimate, residual_distribution,
    uncertainty_term_correlation, variance_map,
};
use envae::losses::{LossConfig, LossVariant};
use envae::nets::{HiddenActivation, ModelArch, OutputActivation};
use envae::random::{sample_standard_normal, Rng};
use envae::train::{TrainConfig, Trainer};

fn main() -> envae::Result<()> {
    let ds = gen_gmm2d(8, 1.0, 1000, 0)?;
    let (train, test) = split(&ds, 0.2, 0)?;
    let arch = ModelArch {
        input_dim: 2,
        latent_dim: 2,
        encoder_hidden: vec![64, 64],
        decoder_hidden: vec![64, 64],
        hidden_activation: HiddenActivation::Tanh,
        output_activation: OutputActivation::Sigmoid,
    };
    let mut cfg = TrainConfig::new(arch, LossConfig::new(LossVariant::Fenvae));
    cfg.epochs = 20;
    let mut trainer = Trainer::new(cfg)?;
    trainer.run_to_end(&train.x)?;
    let p = trainer.params();
    let mut rng = Rng::new(9);

    let vm = variance_map(p, test.x.row(0), 50, &mut rng)?;
    println!("variance map at first test point: {vm:?}");
    println!("mean posterior variance: {:.4}", latent_variance_mean(p, &test.x)?);

    let hist = residual_distribution(p, &test.x, 10, 21, &mut rng)?;
    println!(
        "residuals: mean {:.4}, std {:.4}, {:.1}% within 0.2",
        hist.mean,
        hist.std,
        100.0 * hist.central_fraction
    );

    let z = sample_standard_normal(&mut rng, &[500, 2])?.into_tensor();
    let lip = lipschitz_estimate(|z| p.decode(z), &z, 1000, &mut rng)?;
    println!("decoder Lipschitz estimate: {lip:.3}");

    let (mu, _) = p.encode(&train.x.select_rows(&[0])?)?;
    println!("Jacobian at a posterior mean: {:?}", decoder_jacobian(p, mu.data())?.data());

    let pts = test.x.select_rows(&(0..100).collect::<Vec<_>>())?;
    let corr = uncertainty_term_correlation(p, &pts, 100, 32, 1.0, &mut rng)?;
    println!("uncertainty term correlation: r = {:.3}", corr.pearson_r);
    Ok(())
}
