use std::fmt::Write as _;
use std::path::Path;

use super::config::PipelineConfig;
use super::dataset::{sequence_cloud, sequence_seed, sequence_transforms, simulate, to_training_samples, SampleRecord, HELD_OUT_STREAM};
use super::model::{superresolve_with_shifts, ModelBundle};
use crate::error::{Error, Result};
use crate::image::{rms_error, GrayImage};
use crate::localmodel::{reconstruct, Interpolator};
use crate::neural::{forward, init_weights, train_cg, MlpParams, TrainConfig, TrainingSample};
use crate::pca::{explained_variance, EigenBasis};
use crate::pgm::save_pgm;
use crate::projection::project_sequence;

/// Bilinear magnification of one LR frame onto the HR grid.
pub fn baseline_zoom(frame: &GrayImage, scale: usize) -> GrayImage {
    let s = scale as f64;
    let off = (s - 1.0) / 2.0;
    GrayImage::from_fn(frame.width() * scale, frame.height() * scale, |x, y| {
        frame.bilinear_sample((x as f64 - off) / s, (y as f64 - off) / s)
    })
}

/// RMS errors indexed by method and noise level.
#[derive(Clone, Debug, PartialEq)]
pub struct RmsTable {
    pub methods: Vec<String>,
    pub sigmas: Vec<f64>,
    /// `rms[m][s]` for method `m` at noise level `s`.
    pub rms: Vec<Vec<f64>>,
    pub notes: Vec<String>,
}

impl RmsTable {
    pub fn get(&self, method: &str, sigma: f64) -> Option<f64> {
        let m = self.methods.iter().position(|x| x == method)?;
        let s = self.sigmas.iter().position(|&x| x == sigma)?;
        Some(self.rms[m][s])
    }

    /// Entry-wise mean of tables with identical layout.
    pub fn mean(tables: &[RmsTable]) -> Result<RmsTable> {
        let Some(first) = tables.first() else {
            return Err(Error::InvalidArgument("no tables to average".into()));
        };
        if tables.iter().any(|t| t.methods != first.methods || t.sigmas != first.sigmas) {
            return Err(Error::InvalidArgument("tables have different layouts".into()));
        }
        let n = tables.len() as f64;
        let rms = (0..first.methods.len())
            .map(|m| {
                (0..first.sigmas.len())
                    .map(|s| tables.iter().map(|t| t.rms[m][s]).sum::<f64>() / n)
                    .collect()
            })
            .collect();
        let mut notes = vec![format!("mean over {} images", tables.len())];
        notes.extend(first.notes.iter().filter(|n| !n.starts_with("fallback_sites")).cloned());
        Ok(RmsTable {
            methods: first.methods.clone(),
            sigmas: first.sigmas.clone(),
            rms,
            notes,
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("method");
        for s in &self.sigmas {
            let _ = write!(out, ",sigma={s}");
        }
        out.push('\n');
        for (m, row) in self.methods.iter().zip(&self.rms) {
            out.push_str(m);
            for v in row {
                let _ = write!(out, ",{v:.4}");
            }
            out.push('\n');
        }
        for n in &self.notes {
            let _ = writeln!(out, "# {n}");
        }
        out
    }
}

/// Interpolators compared by [`benchmark_interpolators`], in table order.
pub fn interpolator_set(cfg: &PipelineConfig) -> Vec<Interpolator> {
    vec![
        Interpolator::Nearest,
        Interpolator::InverseDistance { radius: cfg.idw_radius },
        Interpolator::Polynomial(1),
        Interpolator::Polynomial(2),
        Interpolator::Polynomial(3),
    ]
}

/// Reconstructs simulated sequences of `hr` with every baseline interpolator
/// and reports RMS error against `hr` for each noise level.
pub fn benchmark_interpolators(hr: &GrayImage, cfg: &PipelineConfig) -> Result<RmsTable> {
    cfg.validate()?;
    let methods = interpolator_set(cfg);
    let mut rms = vec![Vec::with_capacity(cfg.noise_levels.len()); methods.len()];
    let mut fallbacks = 0;
    for (j, &sigma) in cfg.noise_levels.iter().enumerate() {
        let seq = simulate(hr, cfg, sigma, sequence_seed(cfg.seed, HELD_OUT_STREAM, j))?;
        let cloud = sequence_cloud(&seq, cfg)?;
        for (m, method) in methods.iter().enumerate() {
            let rec = reconstruct(&cloud, *method, &cfg.fit)?;
            fallbacks += rec.fallback_sites;
            rms[m].push(rms_error(&rec.image, &seq.ground_truth, cfg.border())?);
        }
    }
    Ok(RmsTable {
        methods: methods.iter().map(|m| m.label()).collect(),
        sigmas: cfg.noise_levels.clone(),
        rms,
        notes: vec![
            format!("shifts={}", cfg.shift_source.as_str()),
            format!("frames={} scale={} border={}", cfg.n_frames, cfg.scale, cfg.border()),
            format!("support_radius={} idw_radius={}", cfg.fit.support_radius, cfg.idw_radius),
            format!("fallback_sites={fallbacks}"),
        ],
    })
}

pub const METHODS: [&str; 3] = ["ZOOM", "SEQ-NN", "LOCALREP+MLP"];

/// Compares single-frame zoom, sequence nearest neighbor and the learned
/// reconstruction on a held-out image. Refuses images the bundle was
/// trained on. Reconstructions are written to `out_dir` when given.
pub fn benchmark_methods(hr: &GrayImage, bundle: &ModelBundle, sigmas: &[f64], out_dir: Option<&Path>) -> Result<RmsTable> {
    bundle.check()?;
    let hash = hr.content_hash();
    if bundle.provenance.corpus_hashes.contains(&hash) {
        return Err(Error::Leakage { hash });
    }
    let cfg = &bundle.config;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut rms = vec![Vec::with_capacity(sigmas.len()); METHODS.len()];
    let mut fallbacks = 0;
    for (j, &sigma) in sigmas.iter().enumerate() {
        let seq = simulate(hr, cfg, sigma, sequence_seed(cfg.seed, HELD_OUT_STREAM, j))?;
        let transforms = sequence_transforms(&seq, cfg)?;
        let zoom = baseline_zoom(&seq.frames[0], cfg.scale);
        let cloud = project_sequence(&seq.frames, &transforms, cfg.scale)?;
        let nn = reconstruct(&cloud, Interpolator::Nearest, &cfg.fit)?.image;
        let sr = superresolve_with_shifts(&seq.frames, &transforms, bundle)?;
        fallbacks += sr.fallback_sites;
        for (m, img) in [&zoom, &nn, &sr.image].into_iter().enumerate() {
            rms[m].push(rms_error(img, &seq.ground_truth, cfg.border())?);
            if let Some(dir) = out_dir {
                let name = format!("{}_sigma{}.pgm", METHODS[m].to_lowercase().replace('+', "_"), sigma);
                save_pgm(img, dir.join(name))?;
            }
        }
    }
    Ok(RmsTable {
        methods: METHODS.iter().map(|s| s.to_string()).collect(),
        sigmas: sigmas.to_vec(),
        rms,
        notes: vec![
            format!("shifts={}", cfg.shift_source.as_str()),
            format!("frames={} scale={} border={}", cfg.n_frames, cfg.scale, cfg.border()),
            format!("eigvecs={} window={}", cfg.eigvecs, cfg.window),
            "ZOOM=bilinear upsampling of frame 0".to_string(),
            format!("fallback_sites={fallbacks}"),
        ],
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepPoint {
    pub k: usize,
    pub explained_variance: f64,
    pub train_rms: f64,
    pub valid_rms: f64,
    pub iterations: usize,
}

/// RMS in image units of the network over records projected on `k` components.
fn denormalized_rms(params: &MlpParams, samples: &[TrainingSample]) -> Result<f64> {
    let mut sum = 0.0;
    for s in samples {
        let e = (forward(params, &s.input)? - s.target) * s.ctx.s;
        sum += e * e;
    }
    Ok((sum / samples.len() as f64).sqrt())
}

/// Trains one network per `k` and reports train and validation RMS.
pub fn dimension_sweep(
    train: &[SampleRecord],
    valid: &[SampleRecord],
    basis: &EigenBasis,
    ks: &[usize],
    train_cfg: &TrainConfig,
) -> Result<Vec<SweepPoint>> {
    if train.is_empty() || valid.is_empty() {
        return Err(Error::InvalidArgument("sweep needs training and validation records".into()));
    }
    let mut out = Vec::with_capacity(ks.len());
    for &k in ks {
        let tr = to_training_samples(train, basis, k)?;
        let va = to_training_samples(valid, basis, k)?;
        let outcome = train_cg(&init_weights(k, train_cfg.seed), &tr, train_cfg)?;
        out.push(SweepPoint {
            k,
            explained_variance: explained_variance(basis, k)?,
            train_rms: denormalized_rms(&outcome.params, &tr)?,
            valid_rms: denormalized_rms(&outcome.params, &va)?,
            iterations: outcome.iterations,
        });
    }
    Ok(out)
}

pub fn sweep_csv(points: &[SweepPoint]) -> String {
    let mut out = String::from("k,explained_variance,train_rms,valid_rms,iterations\n");
    for p in points {
        let _ = writeln!(
            out,
            "{},{:.6},{:.4},{:.4},{}",
            p.k, p.explained_variance, p.train_rms, p.valid_rms, p.iterations
        );
    }
    out
}
