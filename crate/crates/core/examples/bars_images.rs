//! Trains on 8x8 bar images, writes a few decoded prior samples and a latent
//! walk as PGM files, and compares radial spectra of data and samples.
//!
//! `cargo run --release --example bars_images -- [out_dir]`

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

use envae::data::{export_raster, gen_bars, row_as_image};
use envae::eval::{latent_walk, radial_spectrum};
use envae::losses::{LossConfig, LossVariant};
use envae::nets::{HiddenActivation, ModelArch, OutputActivation};
use envae::random::{sample_standard_normal, Rng};
use envae::tensor::Tensor;
use envae::train::{TrainConfig, Trainer};

fn main() -> envae::Result<()> {
    let out = std::path::PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "bars_out".into()));
    std::fs::create_dir_all(&out).map_err(|e| envae::Error::Io { path: out.clone(), source: e })?;

    let ds = gen_bars(8, 8, 2000, 0)?;
    let arch = ModelArch {
        input_dim: 64,
        latent_dim: 4,
        encoder_hidden: vec![128, 128],
        decoder_hidden: vec![128, 128],
        hidden_activation: HiddenActivation::Tanh,
        output_activation: OutputActivation::Sigmoid,
    };
    let loss = LossConfig {
        m_samples: 10,
        ..LossConfig::new(LossVariant::Envae)
    };
    let mut cfg = TrainConfig::new(arch, loss);
    cfg.epochs = 15;
    let mut trainer = Trainer::new(cfg)?;
    trainer.run_to_end(&ds.x)?;
    let p = trainer.params();

    let z = sample_standard_normal(&mut Rng::new(1), &[64, 4])?.into_tensor();
    let gen = p.decode(&z)?;
    let to_image = |row: &[f64]| row_as_image(row, ds.kind);
    let gen_images: Vec<Tensor> = gen.iter_rows().map(to_image).collect::<Result<_, _>>()?;
    for (i, img) in gen_images.iter().take(8).enumerate() {
        export_raster(img, out.join(format!("sample_{i:04}.pgm")))?;
    }
    let walk = latent_walk(p, z.row(0), z.row(1), 6)?;
    for (i, frame) in walk.iter().enumerate() {
        export_raster(&to_image(frame.data())?, out.join(format!("walk_{i:04}.pgm")))?;
    }

    let data_images: Vec<Tensor> = (0..64).map(|i| ds.image(i)).collect::<Result<_, _>>()?;
    let (sd, sg) = (radial_spectrum(&data_images)?, radial_spectrum(&gen_images)?);
    println!("radius  data    generated");
    for (r, (a, b)) in sd.iter().zip(&sg).enumerate() {
        println!("{r:6}  {a:.4}  {b:.4}");
    }
    println!("wrote rasters to {}", out.display());
    Ok(())
}
