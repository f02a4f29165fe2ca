use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use super::config::PipelineConfig;
use super::dataset::{build_training_set, to_training_samples, SampleRecord, TrainingSet};
use super::patches::PatchExtractor;
use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::neural::{denormalize, forward, init_weights, load_mlp, normalize_with_spread, save_mlp, train_cg, MlpParams, TrainOutcome};
use crate::pca::{fit_pca, load_basis, project_into, save_basis, EigenBasis};
use crate::projection::project_sequence;
use crate::registration::{register_sequence, Transform};

pub const BASIS_FILE: &str = "basis.srpca";
pub const MLP_FILE: &str = "model.srmlp";
pub const MANIFEST_FILE: &str = "manifest.txt";

/// Training provenance stored next to the weights.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Provenance {
    pub corpus_hashes: Vec<String>,
    pub n_samples: usize,
    pub iterations: usize,
    pub stop: String,
    pub final_loss: f64,
}

/// Everything needed to superresolve: config, PCA basis and network.
#[derive(Clone, Debug)]
pub struct ModelBundle {
    pub config: PipelineConfig,
    pub basis: EigenBasis,
    pub mlp: MlpParams,
    pub provenance: Provenance,
}

impl ModelBundle {
    pub fn check(&self) -> Result<()> {
        self.config.validate()?;
        if self.basis.dim() != self.config.patch_len() {
            return Err(Error::dims(
                format!("basis of dimension {}", self.config.patch_len()),
                format!("dimension {}", self.basis.dim()),
            ));
        }
        if self.mlp.k_in != self.config.eigvecs {
            return Err(Error::dims(
                format!("network with {} inputs", self.config.eigvecs),
                format!("{} inputs", self.mlp.k_in),
            ));
        }
        Ok(())
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        save_basis(&self.basis, dir.join(BASIS_FILE))?;
        save_mlp(&self.mlp, dir.join(MLP_FILE))?;
        write_manifest(dir.join(MANIFEST_FILE), &self.config, &self.provenance)
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let (config, provenance) = read_manifest(dir.join(MANIFEST_FILE))?;
        let bundle = ModelBundle {
            config,
            basis: load_basis(dir.join(BASIS_FILE))?,
            mlp: load_mlp(dir.join(MLP_FILE))?,
            provenance,
        };
        bundle.check()?;
        Ok(bundle)
    }
}

/// Writes the config snapshot followed by the provenance keys.
pub fn write_manifest(path: impl AsRef<Path>, config: &PipelineConfig, p: &Provenance) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::from("# srlocal model manifest\n");
    text.push_str(&config.to_kv_text());
    for h in &p.corpus_hashes {
        let _ = writeln!(text, "corpus_hash = {h}");
    }
    let _ = writeln!(text, "samples = {}", p.n_samples);
    let _ = writeln!(text, "iterations = {}", p.iterations);
    let _ = writeln!(text, "stop = {}", p.stop);
    let _ = writeln!(text, "final_loss = {:?}", p.final_loss);
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<(PipelineConfig, Provenance)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut config_lines = String::new();
    let mut provenance = Provenance::default();
    let bad = |field, detail: &str| Error::Format {
        format: "manifest",
        field,
        detail: detail.to_string(),
    };
    for line in text.lines() {
        if let Some((key, value)) = line.split_once('=') {
            let value = value.trim();
            match key.trim() {
                "corpus_hash" => {
                    provenance.corpus_hashes.push(value.to_string());
                    continue;
                }
                "samples" => {
                    provenance.n_samples = value.parse().map_err(|_| bad("samples", value))?;
                    continue;
                }
                "iterations" => {
                    provenance.iterations = value.parse().map_err(|_| bad("iterations", value))?;
                    continue;
                }
                "stop" => {
                    provenance.stop = value.to_string();
                    continue;
                }
                "final_loss" => {
                    provenance.final_loss = value.parse().map_err(|_| bad("final_loss", value))?;
                    continue;
                }
                _ => {}
            }
        }
        config_lines.push_str(line);
        config_lines.push('\n');
    }
    let mut config = PipelineConfig::default();
    config.apply_kv_text(&config_lines)?;
    Ok((config, provenance))
}

/// Trains a bundle from precomputed records.
pub fn train_from_records(
    records: &[SampleRecord],
    corpus_hashes: Vec<String>,
    cfg: &PipelineConfig,
) -> Result<(ModelBundle, TrainOutcome)> {
    cfg.validate()?;
    let patches: Vec<_> = records.iter().map(|r| r.patch.clone()).collect();
    let basis = fit_pca(&patches)?;
    drop(patches);
    let samples = to_training_samples(records, &basis, cfg.eigvecs)?;
    let init = init_weights(cfg.eigvecs, cfg.train.seed);
    let outcome = train_cg(&init, &samples, &cfg.train)?;
    let bundle = ModelBundle {
        config: cfg.clone(),
        basis,
        mlp: outcome.params.clone(),
        provenance: Provenance {
            corpus_hashes,
            n_samples: records.len(),
            iterations: outcome.iterations,
            stop: format!("{:?}", outcome.stop),
            final_loss: outcome.history.last().copied().unwrap_or(f64::NAN),
        },
    };
    Ok((bundle, outcome))
}

/// Builds the training set from `corpus` and trains a bundle on it.
pub fn train_bundle(corpus: &[GrayImage], cfg: &PipelineConfig) -> Result<(ModelBundle, TrainOutcome, TrainingSet)> {
    let set = build_training_set(corpus, cfg)?;
    let mut hashes: Vec<String> = corpus.iter().map(|c| c.content_hash()).collect();
    hashes.dedup();
    let (bundle, outcome) = train_from_records(&set.records, hashes, cfg)?;
    Ok((bundle, outcome, set))
}

/// Superresolved image plus bookkeeping.
#[derive(Clone, Debug)]
pub struct SuperResolved {
    pub image: GrayImage,
    pub transforms: Vec<Transform>,
    /// Sites with no support within twice the radius, filled by nearest pixel.
    pub fallback_sites: usize,
}

/// Registers the frames and superresolves them.
pub fn superresolve(frames: &[GrayImage], bundle: &ModelBundle) -> Result<SuperResolved> {
    let transforms = register_sequence(frames, &bundle.config.registration)?;
    superresolve_with_shifts(frames, &transforms, bundle)
}

/// Superresolves frames whose transforms are already known.
pub fn superresolve_with_shifts(frames: &[GrayImage], transforms: &[Transform], bundle: &ModelBundle) -> Result<SuperResolved> {
    bundle.check()?;
    let cfg = &bundle.config;
    let cloud = project_sequence(frames, transforms, cfg.scale)?;
    if cloud.is_empty() {
        return Err(Error::InvalidArgument("no frame pixels landed on the HR grid".into()));
    }
    let extractor = PatchExtractor::new(&cloud, cfg.window, &cfg.fit)?;
    let (w, h) = (cloud.hr_width(), cloud.hr_height());
    let k = cfg.eigvecs;
    let rows: Vec<Result<(Vec<f64>, usize)>> = (0..h)
        .into_par_iter()
        .map(|gy| {
            let mut coords = vec![0.0; k];
            let mut row = Vec::with_capacity(w);
            let mut fallback = 0;
            for gx in 0..w {
                match extractor.patch(gx, gy) {
                    Ok(sp) => {
                        let (patch, ctx) = normalize_with_spread(&sp.patch, sp.support_std)?;
                        project_into(&bundle.basis, patch.as_slice(), &mut coords);
                        row.push(denormalize(forward(&bundle.mlp, &coords)?, ctx));
                    }
                    Err(Error::EmptySupport { .. }) => {
                        fallback += 1;
                        let nn = cloud.nearest(gx as i64, gy as i64).expect("cloud is non-empty");
                        row.push(nn.pixel.value);
                    }
                    Err(e) => return Err(e),
                }
            }
            Ok((row, fallback))
        })
        .collect();
    let mut pixels = Vec::with_capacity(w * h);
    let mut fallback_sites = 0;
    for r in rows {
        let (row, fb) = r?;
        pixels.extend(row);
        fallback_sites += fb;
    }
    Ok(SuperResolved {
        image: GrayImage::new(w, h, pixels)?,
        transforms: transforms.to_vec(),
        fallback_sites,
    })
}
