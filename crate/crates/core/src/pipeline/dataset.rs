use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;

use super::config::{PipelineConfig, ShiftSource};
use super::patches::PatchExtractor;
use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::neural::{normalize_with_spread, NormContext, TrainingSample};
use crate::pca::{project_into, CoeffPatch, EigenBasis};
use crate::projection::{project_sequence, ProjectedCloud};
use crate::registration::{register_sequence, Transform};
use crate::synth::{derive_seed, generate_sequence, SequenceSpec, SyntheticSequence};

/// A normalized coefficient patch and its normalized HR target.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleRecord {
    pub patch: CoeffPatch,
    pub target: f64,
    pub ctx: NormContext,
}

/// Where a batch of samples came from.
#[derive(Clone, Debug, PartialEq)]
pub struct SourceInfo {
    pub image_hash: String,
    pub sigma: f64,
    pub seed: u64,
    pub count: usize,
}

#[derive(Clone, Debug)]
pub struct TrainingSet {
    pub records: Vec<SampleRecord>,
    pub sources: Vec<SourceInfo>,
}

/// Seed stream reserved for held-out evaluation sequences.
pub const HELD_OUT_STREAM: u64 = u64::MAX - 1;

pub fn sequence_seed(base: u64, image_stream: u64, sigma_index: usize) -> u64 {
    derive_seed(derive_seed(base, image_stream), sigma_index as u64)
}

/// Simulates the acquisition of `hr` at noise level `sigma`.
pub fn simulate(hr: &GrayImage, cfg: &PipelineConfig, sigma: f64, seed: u64) -> Result<SyntheticSequence> {
    generate_sequence(
        hr,
        &SequenceSpec {
            n_frames: cfg.n_frames,
            scale: cfg.scale,
            sigma,
            seed,
            ..Default::default()
        },
    )
}

/// Transforms for a simulated sequence according to the configured source.
pub fn sequence_transforms(seq: &SyntheticSequence, cfg: &PipelineConfig) -> Result<Vec<Transform>> {
    match cfg.shift_source {
        ShiftSource::GroundTruth => Ok(seq.true_shifts.clone()),
        ShiftSource::Estimated => register_sequence(&seq.frames, &cfg.registration),
    }
}

pub fn sequence_cloud(seq: &SyntheticSequence, cfg: &PipelineConfig) -> Result<ProjectedCloud> {
    let transforms = sequence_transforms(seq, cfg)?;
    project_sequence(&seq.frames, &transforms, cfg.scale)
}

/// Interior sites on the densest regular grid holding at least `budget`
/// points, thinned evenly to exactly `budget` (or all interior sites when
/// there are fewer).
pub fn sample_sites(width: usize, height: usize, margin: usize, budget: usize, offset: usize) -> Vec<(usize, usize)> {
    if width <= 2 * margin || height <= 2 * margin || budget == 0 {
        return Vec::new();
    }
    let (iw, ih) = (width - 2 * margin, height - 2 * margin);
    let stride = (((iw * ih) as f64 / budget as f64).sqrt().floor() as usize).max(1);
    let off = offset % stride;
    let mut grid = Vec::new();
    for y in (margin + off..height - margin).step_by(stride) {
        for x in (margin + off..width - margin).step_by(stride) {
            grid.push((x, y));
        }
    }
    if grid.len() <= budget {
        return grid;
    }
    (0..budget).map(|i| grid[i * grid.len() / budget]).collect()
}

/// Normalized samples at the given sites. Sites without any support are
/// skipped.
pub fn harvest(
    cloud: &ProjectedCloud,
    truth: &GrayImage,
    sites: &[(usize, usize)],
    cfg: &PipelineConfig,
) -> Result<Vec<SampleRecord>> {
    if truth.dims() != (cloud.hr_width(), cloud.hr_height()) {
        return Err(Error::dims(
            format!("{}x{}", cloud.hr_width(), cloud.hr_height()),
            format!("{}x{}", truth.width(), truth.height()),
        ));
    }
    let extractor = PatchExtractor::new(cloud, cfg.window, &cfg.fit)?;
    let out: Vec<Option<SampleRecord>> = sites
        .par_iter()
        .map(|&(x, y)| match extractor.patch(x, y) {
            Ok(sp) => {
                let (patch, ctx) = normalize_with_spread(&sp.patch, sp.support_std)?;
                Ok(Some(SampleRecord {
                    patch,
                    target: (truth.get(x, y) - ctx.mu) / ctx.s,
                    ctx,
                }))
            }
            Err(Error::EmptySupport { .. }) => Ok(None),
            Err(e) => Err(e),
        })
        .collect::<Result<_>>()?;
    Ok(out.into_iter().flatten().collect())
}

/// Samples from one image at every configured noise level.
pub fn samples_from_image(
    hr: &GrayImage,
    cfg: &PipelineConfig,
    image_stream: u64,
    budget: usize,
) -> Result<(Vec<SampleRecord>, Vec<SourceInfo>)> {
    let per = budget.div_ceil(cfg.noise_levels.len().max(1));
    let mut records = Vec::new();
    let mut sources = Vec::new();
    let hash = hr.content_hash();
    for (j, &sigma) in cfg.noise_levels.iter().enumerate() {
        let seed = sequence_seed(cfg.seed, image_stream, j);
        let seq = simulate(hr, cfg, sigma, seed)?;
        let cloud = sequence_cloud(&seq, cfg)?;
        let sites = sample_sites(hr.width(), hr.height(), cfg.border(), per, j);
        let batch = harvest(&cloud, &seq.ground_truth, &sites, cfg)?;
        sources.push(SourceInfo {
            image_hash: hash.clone(),
            sigma,
            seed,
            count: batch.len(),
        });
        records.extend(batch);
    }
    Ok((records, sources))
}

/// Training samples over a corpus, with the budget split evenly across
/// images and noise levels.
pub fn build_training_set(corpus: &[GrayImage], cfg: &PipelineConfig) -> Result<TrainingSet> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::InvalidArgument("training corpus is empty".into()));
    }
    if cfg.noise_levels.is_empty() {
        return Err(Error::InvalidArgument("no noise levels configured".into()));
    }
    let per_image = cfg.sample_budget.div_ceil(corpus.len());
    let mut set = TrainingSet {
        records: Vec::new(),
        sources: Vec::new(),
    };
    for (i, hr) in corpus.iter().enumerate() {
        let (records, sources) = samples_from_image(hr, cfg, i as u64, per_image)?;
        set.records.extend(records);
        set.sources.extend(sources);
    }
    if set.records.len() < 2 {
        return Err(Error::InvalidArgument("corpus produced fewer than 2 samples".into()));
    }
    Ok(set)
}

/// Samples from an image outside the training corpus, drawn from the
/// held-out seed stream.
pub fn validation_records(hr: &GrayImage, cfg: &PipelineConfig, budget: usize) -> Result<Vec<SampleRecord>> {
    cfg.validate()?;
    Ok(samples_from_image(hr, cfg, HELD_OUT_STREAM, budget)?.0)
}

/// Projects records onto the first `k` components.
pub fn to_training_samples(records: &[SampleRecord], basis: &EigenBasis, k: usize) -> Result<Vec<TrainingSample>> {
    if k == 0 || k > basis.dim() {
        return Err(Error::InvalidArgument(format!("k must lie in 1..={}, got {k}", basis.dim())));
    }
    if let Some(r) = records.iter().find(|r| r.patch.len() != basis.dim()) {
        return Err(Error::dims(format!("patches of length {}", basis.dim()), format!("length {}", r.patch.len())));
    }
    Ok(records
        .par_iter()
        .map(|r| {
            let mut input = vec![0.0; k];
            project_into(basis, r.patch.as_slice(), &mut input);
            TrainingSample {
                input,
                target: r.target,
                ctx: r.ctx,
            }
        })
        .collect())
}

/// Binary sample file: `u32` count and `u32` patch length, then per sample
/// the normalized patch, normalized target, mu and s, all little-endian.
pub fn write_samples(records: &[SampleRecord], mut out: impl Write) -> Result<()> {
    let dim = records.first().map_or(0, |r| r.patch.len());
    if records.iter().any(|r| r.patch.len() != dim) {
        return Err(Error::InvalidArgument("records have mixed patch lengths".into()));
    }
    let io = |e| Error::io("<samples>", e);
    out.write_all(&(records.len() as u32).to_le_bytes()).map_err(io)?;
    out.write_all(&(dim as u32).to_le_bytes()).map_err(io)?;
    for r in records {
        for v in r.patch.as_slice().iter().chain([r.target, r.ctx.mu, r.ctx.s].iter()) {
            out.write_all(&v.to_le_bytes()).map_err(io)?;
        }
    }
    out.flush().map_err(io)
}

pub fn read_samples(mut input: impl Read) -> Result<Vec<SampleRecord>> {
    let fmt = |field, detail: String| Error::Format {
        format: "samples",
        field,
        detail,
    };
    let mut word = [0u8; 4];
    input.read_exact(&mut word).map_err(|e| fmt("count", e.to_string()))?;
    let count = u32::from_le_bytes(word) as usize;
    input.read_exact(&mut word).map_err(|e| fmt("dim", e.to_string()))?;
    let dim = u32::from_le_bytes(word) as usize;
    let mut buf = vec![0u8; (dim + 3) * 8];
    let mut records = Vec::with_capacity(count.min(1 << 20));
    for i in 0..count {
        input
            .read_exact(&mut buf)
            .map_err(|e| fmt("payload", format!("sample {i}: {e}")))?;
        let vals: Vec<f64> = buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        records.push(SampleRecord {
            patch: CoeffPatch::new(vals[..dim].to_vec()),
            target: vals[dim],
            ctx: NormContext {
                mu: vals[dim + 1],
                s: vals[dim + 2],
            },
        });
    }
    let mut extra = [0u8; 1];
    if input.read(&mut extra).map_err(|e| fmt("payload", e.to_string()))? != 0 {
        return Err(fmt("payload", "trailing data".into()));
    }
    Ok(records)
}

pub fn save_samples(records: &[SampleRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_samples(records, BufWriter::new(file))
}

pub fn load_samples(path: impl AsRef<Path>) -> Result<Vec<SampleRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_samples(BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn site_grid_respects_margin_and_budget() {
        let sites = sample_sites(64, 64, 4, 100, 0);
        assert!(sites.iter().all(|&(x, y)| (4..60).contains(&x) && (4..60).contains(&y)));
        assert_eq!(sites.len(), 100);
        let mut dedup = sites.clone();
        dedup.dedup();
        assert_eq!(dedup.len(), 100);
        assert!(sample_sites(8, 8, 4, 10, 0).is_empty());
        assert_eq!(sample_sites(64, 64, 4, 1_000_000, 3).len(), 56 * 56);
    }

    #[test]
    fn samples_roundtrip_bit_exact() {
        let records: Vec<SampleRecord> = (0..5)
            .map(|i| SampleRecord {
                patch: CoeffPatch::new((0..12).map(|j| (i * 12 + j) as f64 / 7.0 - 3.3).collect()),
                target: -0.1 * i as f64,
                ctx: NormContext {
                    mu: 100.0 + i as f64,
                    s: 1.0 + 1e-9 * i as f64,
                },
            })
            .collect();
        let mut buf = Vec::new();
        write_samples(&records, &mut buf).unwrap();
        assert_eq!(buf.len(), 8 + 5 * 15 * 8);
        assert_eq!(read_samples(buf.as_slice()).unwrap(), records);
        buf.push(0);
        assert!(read_samples(buf.as_slice()).is_err());
        buf.truncate(30);
        assert!(matches!(read_samples(&[1u8, 0][..]), Err(Error::Format { field: "count", .. })));
        assert!(matches!(read_samples(buf.as_slice()), Err(Error::Format { field: "payload", .. })));
    }

    #[test]
    fn training_set_is_deterministic() {
        let hr = GrayImage::from_fn(40, 40, |x, y| 100.0 + 40.0 * ((x as f64) * 0.4).sin() * ((y as f64) * 0.3).cos());
        let cfg = PipelineConfig {
            n_frames: 6,
            noise_levels: vec![0.0, 10.0],
            sample_budget: 200,
            shift_source: ShiftSource::GroundTruth,
            ..Default::default()
        };
        let a = build_training_set(std::slice::from_ref(&hr), &cfg).unwrap();
        let b = build_training_set(std::slice::from_ref(&hr), &cfg).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.sources.len(), 2);
        assert_eq!(a.sources.iter().map(|s| s.count).sum::<usize>(), a.records.len());
        assert!(a.records.iter().all(|r| r.patch.len() == 54 && r.ctx.s >= 1.0));
        assert_ne!(a.sources[0].seed, a.sources[1].seed);
    }
}
