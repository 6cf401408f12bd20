use envae::data::{export_raster, load_idx, write_idx_images, write_idx_labels};
use envae::error::{CheckpointError, IdxError};
use envae::losses::{LossConfig, LossVariant};
use envae::nets::{HiddenActivation, ModelArch, OutputActivation};
use envae::tensor::Tensor;
use envae::train::{decode_checkpoint, encode_checkpoint, TrainConfig, Trainer, MAGIC};
use envae::Error;
use tempfile::TempDir;

fn tiny_config(variant: LossVariant) -> TrainConfig {
    let arch = ModelArch {
        input_dim: 3,
        latent_dim: 2,
        encoder_hidden: vec![6],
        decoder_hidden: vec![6],
        hidden_activation: HiddenActivation::Tanh,
        output_activation: OutputActivation::Sigmoid,
    };
    let mut cfg = TrainConfig::new(
        arch,
        LossConfig {
            m_samples: 3,
            alpha: 0.7,
            ..LossConfig::new(variant)
        },
    );
    cfg.epochs = 4;
    cfg.batch_size = 8;
    cfg
}

fn data() -> Tensor {
    let v: Vec<f64> = (0..60).map(|i| ((i * 37) % 17) as f64 / 16.0).collect();
    Tensor::new(vec![20, 3], v).unwrap()
}

#[test]
fn trace_components_recombine() {
    for variant in [LossVariant::Vanilla, LossVariant::L1, LossVariant::Envae, LossVariant::Fenvae] {
        let cfg = tiny_config(variant);
        let mut t = Trainer::new(cfg.clone()).unwrap();
        t.run_to_end(&data()).unwrap();
        let records = &t.trace().records;
        assert_eq!(records.len(), 4 * 3);
        for (i, r) in records.iter().enumerate() {
            assert_eq!(r.step, i as u64 + 1);
            let sum = r.recon + r.dispersion + cfg.loss.alpha * r.kl;
            assert!((r.total - sum).abs() <= 1e-12, "{variant}: {} vs {sum}", r.total);
            if matches!(variant, LossVariant::Vanilla | LossVariant::L1) {
                assert_eq!(r.dispersion, 0.0);
            } else {
                assert!(r.dispersion <= 0.0);
            }
        }
    }
}

#[test]
fn checkpoint_corruption_modes_are_distinct() {
    let mut t = Trainer::new(tiny_config(LossVariant::Envae)).unwrap();
    t.run_epoch(&data()).unwrap();
    let bytes = encode_checkpoint(&t.checkpoint()).unwrap();
    assert_eq!(&bytes[..8], MAGIC);
    assert_eq!(decode_checkpoint(&bytes).unwrap(), t.checkpoint());

    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(decode_checkpoint(&bad), Err(Error::Checkpoint(CheckpointError::BadMagic))));

    let mut bad = bytes.clone();
    bad[8..12].copy_from_slice(&7u32.to_le_bytes());
    assert!(matches!(
        decode_checkpoint(&bad),
        Err(Error::Checkpoint(CheckpointError::VersionMismatch { found: 7, expected: 1 }))
    ));

    assert!(matches!(
        decode_checkpoint(&bytes[..bytes.len() - 3]),
        Err(Error::Checkpoint(CheckpointError::Truncated { .. }))
    ));
}

#[test]
fn idx_round_trip_and_label_mismatch() {
    let tmp = TempDir::new().unwrap();
    let pixels: Vec<u8> = (0..=255).chain(0..=255).take(3 * 4 * 5).collect();
    let img = tmp.path().join("img.idx");
    let lab = tmp.path().join("lab.idx");
    std::fs::write(&img, write_idx_images(4, 5, &pixels)).unwrap();
    std::fs::write(&lab, write_idx_labels(&[1, 2, 3])).unwrap();
    let ds = load_idx(&img, Some(&lab)).unwrap();
    assert_eq!(ds.x.shape(), &[3, 20]);
    let back: Vec<u8> = ds.x.data().iter().map(|v| (v * 255.0).round() as u8).collect();
    assert_eq!(back, pixels);
    assert_eq!(ds.image(0).unwrap().shape(), &[4, 5]);

    std::fs::write(&lab, write_idx_labels(&[1, 2])).unwrap();
    assert!(matches!(
        load_idx(&img, Some(&lab)),
        Err(Error::Idx(IdxError::CountMismatch { images: 3, labels: 2 }))
    ));
}

#[test]
fn raster_export_writes_file_and_rejects_out_of_range() {
    let tmp = TempDir::new().unwrap();
    let path = tmp.path().join("a.pgm");
    let img = Tensor::new(vec![1, 2], vec![0.0, 1.0]).unwrap();
    export_raster(&img, &path).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), b"P5\n2 1\n255\n\x00\xff");
    let over = Tensor::new(vec![1, 1], vec![1.5]).unwrap();
    assert!(export_raster(&over, tmp.path().join("b.pgm")).is_err());
}
