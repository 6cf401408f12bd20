//! Checks reverse-mode gradients of every loss against central differences
//! on a small random network.

use envae::losses::{compute_loss, LossConfig, LossVariant};
use envae::nets::{HiddenActivation, ModelArch, OutputActivation, Params};
use envae::random::Rng;
use envae::tensor::{finite_diff_check, Tensor};

fn main() -> envae::Result<()> {
    let arch = ModelArch {
        input_dim: 4,
        latent_dim: 2,
        encoder_hidden: vec![6],
        decoder_hidden: vec![6],
        hidden_activation: HiddenActivation::Tanh,
        output_activation: OutputActivation::Sigmoid,
    };
    let params = Params::init(&arch, &mut Rng::new(3))?;
    let mut rng = Rng::new(4);
    let x = Tensor::new(vec![3, 4], (0..12).map(|_| rng.uniform()).collect())?;

    for variant in [LossVariant::Vanilla, LossVariant::L1, LossVariant::Envae, LossVariant::Fenvae] {
        let cfg = LossConfig {
            m_samples: 5,
            ..LossConfig::new(variant)
        };
        // Same noise stream for every evaluation, so the loss is a fixed function.
        let check = finite_diff_check(
            |flat| {
                let pv = params.attach_flat(flat)?;
                let xv = flat.tape().constant(x.clone());
                Ok(compute_loss(&pv, xv, &cfg, &mut Rng::new(11))?.total)
            },
            &params.flatten(),
            1e-5,
        )?;
        println!(
            "{variant:>8}: {} parameters checked, {} kinks skipped, max relative error {:.2e}",
            check.checked,
            check.excluded.len(),
            check.max_rel_error
        );
    }
    Ok(())
}
