use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::{LipschitzTarget, RunConfig};
use crate::data::{export_raster, row_as_image, DataKind, Dataset};
use crate::error::{Error, Result};
use crate::eval::{
    energy_distance, latent_variance_mean, lipschitz_estimate, radial_spectrum,
    residual_distribution, uncertainty_term_correlation, variance_map, ArrayMetric, MetricReport,
};
use crate::losses::LossVariant;
use crate::nets::Params;
use crate::random::{sample_standard_normal, Rng};
use crate::tensor::Tensor;
use crate::train::{load_checkpoint, save_checkpoint, Checkpoint, TrainTrace, Trainer};

pub const RESOLVED_CONFIG: &str = "resolved_config.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const TRACE_FILE: &str = "trace.csv";

/// Scalar keys every `eval` report carries (or marks skipped).
pub const EVAL_METRICS: [&str; 6] = [
    "energy_distance_gen",
    "energy_distance_recon",
    "latent_var_mean",
    "lipschitz",
    "pearson_r",
    "r_squared",
];

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn prior_draws(rng: &mut Rng, n: usize, m: usize) -> Result<Tensor> {
    Ok(sample_standard_normal(rng, &[n, m])?.into_tensor())
}

fn first_rows(x: &Tensor, n: usize) -> Result<Tensor> {
    let idx: Vec<usize> = (0..n.min(x.rows())).collect();
    x.select_rows(&idx)
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub trace: TrainTrace,
}

/// Trains on the train split of `cfg` and writes the checkpoint, trace and
/// resolved config into `out`. `wall_clock` keeps real timings in trace.csv
/// (otherwise the ms column is 0 and the file is reproducible byte for byte).
pub fn run_train(cfg: &RunConfig, out: &Path, wall_clock: bool) -> Result<TrainOutcome> {
    let cfg = cfg.clone().resolve()?;
    create_dir(out)?;
    cfg.save(out.join(RESOLVED_CONFIG))?;
    let (train, _) = cfg.split_dataset()?;
    let mut trainer = Trainer::new(cfg.train_config()?)?.with_data_kind(train.kind);
    trainer.run_to_end(&train.x)?;
    let (checkpoint, trace) = trainer.into_parts();
    save_checkpoint(&checkpoint, out.join(CHECKPOINT_FILE))?;
    trace.save_csv(out.join(TRACE_FILE), wall_clock)?;
    Ok(TrainOutcome { checkpoint, trace })
}

/// Full diagnostic battery for `params` against the held-out split.
pub fn evaluate(params: &Params, cfg: &RunConfig, test: &Dataset) -> Result<MetricReport> {
    let e = &cfg.eval;
    let m = params.arch().latent_dim;
    let mut rng = Rng::new(e.seed);
    let mut report = MetricReport::new();
    report.note(
        "energy_distance_* are two-sample energy distances against the held-out split; \
         they stand in for FID/IS, which need a pretrained Inception network",
    );
    report.note(format!(
        "pearson_r/r_squared compare the single-sample uncertainty term (averaged over {} \
         draws per point) with the {}-sample pairwise term",
        e.corr_draws, e.corr_m_ref
    ));

    let generated = params.decode(&prior_draws(&mut rng, e.gen_samples, m)?)?;
    report.set(
        "energy_distance_gen",
        energy_distance(&generated, &test.x, e.distance_beta)?,
    )?;

    let (mu, lv) = params.encode(&test.x)?;
    let eps = prior_draws(&mut rng, test.len(), m)?;
    let z = Tensor::new(
        mu.shape().to_vec(),
        mu.data()
            .iter()
            .zip(lv.data())
            .zip(eps.data())
            .map(|((mu, lv), e)| mu + (0.5 * lv).exp() * e)
            .collect(),
    )?;
    let recon = params.decode(&z)?;
    report.set(
        "energy_distance_recon",
        energy_distance(&recon, &test.x, e.distance_beta)?,
    )?;
    report.set("latent_var_mean", latent_variance_mean(params, &test.x)?)?;

    let lip = match e.lipschitz_target {
        LipschitzTarget::Decoder => {
            let pts = prior_draws(&mut rng, e.lipschitz_points, m)?;
            lipschitz_estimate(|z| params.decode(z), &pts, e.lipschitz_pairs, &mut rng)
        }
        LipschitzTarget::Encoder => {
            let pts = first_rows(&test.x, e.lipschitz_points)?;
            lipschitz_estimate(|x| Ok(params.encode(x)?.0), &pts, e.lipschitz_pairs, &mut rng)
        }
    };
    match lip {
        Ok(v) => report.set("lipschitz", v)?,
        Err(err) => report.skip("lipschitz", err.to_string()),
    }

    let corr_x = first_rows(&test.x, e.corr_points)?;
    match uncertainty_term_correlation(
        params,
        &corr_x,
        e.corr_m_ref,
        e.corr_draws,
        cfg.loss.beta,
        &mut rng,
    ) {
        Ok(c) => {
            report.set("pearson_r", c.pearson_r)?;
            report.set("r_squared", c.r_squared)?;
        }
        Err(Error::Evaluation(reason)) => {
            report.skip("pearson_r", reason.clone());
            report.skip("r_squared", reason);
        }
        Err(err) => return Err(err),
    }

    let vmap = variance_map(params, test.x.row(0), e.variance_k, &mut rng)?;
    report.set(
        "variance_map_mean",
        vmap.iter().sum::<f64>() / vmap.len() as f64,
    )?;
    report.set_array("variance_map", ArrayMetric::indexed(&vmap));

    let hist = residual_distribution(
        params,
        &first_rows(&test.x, e.residual_points)?,
        e.residual_k,
        e.residual_bins,
        &mut rng,
    )?;
    report.set("residual_mean", hist.mean)?;
    report.set("residual_std", hist.std)?;
    report.set("residual_central_fraction", hist.central_fraction)?;
    let mut residuals = ArrayMetric::new(&["bin_lo", "bin_hi", "count"]);
    for (i, &c) in hist.counts.iter().enumerate() {
        residuals.push(vec![hist.edges[i], hist.edges[i + 1], c as f64])?;
    }
    report.set_array("residuals", residuals);

    let mut spectrum = ArrayMetric::new(&["radius", "generated", "data"]);
    match test.kind {
        DataKind::Image { h, w, c: 1 } if h == w && h >= 4 => {
            let k = e.spectrum_images.min(test.len()).max(1);
            let gen = params.decode(&prior_draws(&mut rng, k, m)?)?;
            let to_images = |t: &Tensor| -> Result<Vec<Tensor>> {
                t.iter_rows().take(k).map(|r| row_as_image(r, test.kind)).collect()
            };
            let g = radial_spectrum(&to_images(&gen)?)?;
            let d = radial_spectrum(&to_images(&test.x)?)?;
            for (r, (gv, dv)) in g.iter().zip(&d).enumerate() {
                spectrum.push(vec![r as f64, *gv, *dv])?;
            }
        }
        _ => report.skip("spectrum", "needs square single-channel image data"),
    }
    report.set_array("spectrum", spectrum);
    report.check_declared(&EVAL_METRICS)?;
    Ok(report)
}

/// Evaluates a checkpoint against the test split of `cfg`.
pub fn run_eval(checkpoint: &Path, cfg: &RunConfig, out: &Path) -> Result<MetricReport> {
    let cfg = cfg.clone().resolve()?;
    let ckpt = load_checkpoint(checkpoint)?;
    if ckpt.arch() != &cfg.model_arch()? {
        return Err(Error::config(
            "checkpoint architecture does not match the config's arch section",
        ));
    }
    create_dir(out)?;
    cfg.save(out.join(RESOLVED_CONFIG))?;
    let (_, test) = cfg.split_dataset()?;
    let report = evaluate(&ckpt.params, &cfg, &test)?;
    report.write_dir(out)?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum SampleMode {
    Prior { n: usize },
    Walk { seeds: (u64, u64), steps: usize },
}

#[derive(Clone, Debug, Serialize)]
struct SampleRecord<'a> {
    command: &'static str,
    checkpoint: &'a Path,
    mode: &'a SampleMode,
    seed: u64,
}

/// Decodes prior draws or a latent walk. Image checkpoints produce one
/// raster per output (`sample_0000.pgm`, `walk_0000.pgm`, ...); vector
/// checkpoints produce `samples.csv` or `walk.csv`. Returns written paths.
pub fn run_sample(checkpoint: &Path, out: &Path, mode: &SampleMode, seed: u64) -> Result<Vec<PathBuf>> {
    let ckpt = load_checkpoint(checkpoint)?;
    create_dir(out)?;
    let record = SampleRecord {
        command: "sample",
        checkpoint,
        mode,
        seed,
    };
    let path = out.join(RESOLVED_CONFIG);
    std::fs::write(&path, serde_json::to_string_pretty(&record)?).map_err(|e| Error::io(&path, e))?;

    let params = &ckpt.params;
    let m = params.arch().latent_dim;
    let (prefix, outputs) = match mode {
        SampleMode::Prior { n } => {
            let mut rng = Rng::new(seed);
            let z = prior_draws(&mut rng, *n, m)?;
            ("sample", params.decode(&z)?.iter_rows().map(|r| r.to_vec()).collect::<Vec<_>>())
        }
        SampleMode::Walk { seeds, steps } => {
            let z1 = prior_draws(&mut Rng::new(seeds.0), 1, m)?.into_data();
            let z2 = prior_draws(&mut Rng::new(seeds.1), 1, m)?.into_data();
            let walk = crate::eval::latent_walk(params, &z1, &z2, *steps)?;
            ("walk", walk.into_iter().map(|t| t.into_data()).collect())
        }
    };
    let kind = ckpt.data_kind.unwrap_or(DataKind::Vector);
    let mut written = Vec::new();
    match kind {
        DataKind::Vector => {
            let path = out.join(format!("{}.csv", if prefix == "sample" { "samples" } else { "walk" }));
            let mut w = csv::Writer::from_path(&path)?;
            let n = params.arch().input_dim;
            let mut header = vec!["index".to_string()];
            header.extend((0..n).map(|j| format!("x{j}")));
            w.write_record(&header)?;
            for (i, row) in outputs.iter().enumerate() {
                let mut rec = vec![i.to_string()];
                rec.extend(row.iter().map(|v| v.to_string()));
                w.write_record(&rec)?;
            }
            w.flush().map_err(|e| Error::io(&path, e))?;
            written.push(path);
        }
        DataKind::Image { c, .. } => {
            let ext = if c == 3 { "ppm" } else { "pgm" };
            for (i, row) in outputs.iter().enumerate() {
                let clamped: Vec<f64> = row.iter().map(|v| v.clamp(0.0, 1.0)).collect();
                let path = out.join(format!("{prefix}_{i:04}.{ext}"));
                export_raster(&row_as_image(&clamped, kind)?, &path)?;
                written.push(path);
            }
        }
    }
    Ok(written)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub value: String,
    pub total: f64,
    pub recon: f64,
    pub dispersion: f64,
    pub kl: f64,
    pub energy_distance_gen: f64,
    pub energy_distance_recon: f64,
    pub latent_var_mean: f64,
    pub lipschitz: f64,
    pub epoch_ms: f64,
}

/// One train + eval run per value, sequentially, then `sweep_summary.csv`.
pub fn run_sweep(cfg: &RunConfig, param: &str, values: &[String], out: &Path) -> Result<Vec<SweepRow>> {
    let base = cfg.clone().resolve()?;
    let mut probe = base.clone();
    for v in values {
        probe.set_sweep_param(param, v)?;
        probe.clone().resolve()?;
    }
    if values.is_empty() {
        return Err(Error::config("sweep needs at least one value"));
    }
    create_dir(out)?;
    base.save(out.join(RESOLVED_CONFIG))?;
    let mut rows = Vec::new();
    for (i, v) in values.iter().enumerate() {
        let mut run_cfg = base.clone();
        run_cfg.set_sweep_param(param, v)?;
        let run_cfg = run_cfg.resolve()?;
        let dir = out.join(format!("run_{i:02}_{}", v.replace(['/', ' '], "_")));
        let outcome = run_train(&run_cfg, &dir, true)?;
        let (_, test) = run_cfg.split_dataset()?;
        let report = evaluate(&outcome.checkpoint.params, &run_cfg, &test)?;
        report.write_dir(&dir)?;
        let last = outcome
            .trace
            .last_epoch()
            .copied()
            .ok_or_else(|| Error::config("sweep runs need at least one epoch"))?;
        let get = |k: &str| report.get(k).unwrap_or(f64::NAN);
        rows.push(SweepRow {
            value: v.clone(),
            total: last.total,
            recon: last.recon,
            dispersion: last.dispersion,
            kl: last.kl,
            energy_distance_gen: get("energy_distance_gen"),
            energy_distance_recon: get("energy_distance_recon"),
            latent_var_mean: get("latent_var_mean"),
            lipschitz: get("lipschitz"),
            epoch_ms: outcome.trace.median_epoch_ms().unwrap_or(f64::NAN),
        });
    }
    let path = out.join("sweep_summary.csv");
    let mut w = csv::Writer::from_path(&path)?;
    for row in &rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchRow {
    pub variant: LossVariant,
    pub m_samples: usize,
    pub median_epoch_ms: f64,
}

/// Epochs timed per bench run; the median is reported.
pub const BENCH_EPOCHS: u64 = 3;

/// Median per-epoch time of vanilla, fenvae and envae at M = 10, 50, 100
/// on the train split of `cfg`.
pub fn run_bench(cfg: &RunConfig, out: &Path) -> Result<Vec<BenchRow>> {
    let base = cfg.clone().resolve()?;
    create_dir(out)?;
    base.save(out.join(RESOLVED_CONFIG))?;
    let (train, _) = base.split_dataset()?;
    // M = 1 marks the single-sample variants.
    let plan = [
        (LossVariant::Vanilla, 1),
        (LossVariant::Fenvae, 1),
        (LossVariant::Envae, 10),
        (LossVariant::Envae, 50),
        (LossVariant::Envae, 100),
    ];
    let mut rows = Vec::new();
    for (variant, m) in plan {
        let mut tc = base.train_config()?;
        tc.loss.variant = variant;
        if variant == LossVariant::Envae {
            tc.loss.m_samples = m;
        }
        tc.epochs = BENCH_EPOCHS;
        let mut trainer = Trainer::new(tc)?;
        trainer.run_to_end(&train.x)?;
        rows.push(BenchRow {
            variant,
            m_samples: m,
            median_epoch_ms: trainer.trace().median_epoch_ms().unwrap_or(f64::NAN),
        });
    }
    let path = out.join("bench.csv");
    let mut w = csv::Writer::from_path(&path)?;
    for row in &rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(rows)
}
