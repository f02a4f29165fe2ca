//! Synthetic low-resolution sequences with known sub-pixel motion.
//!
//! Forward model per frame: translate the HR image, box-average down by the
//! scale factor, then add unclamped Gaussian noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::registration::Transform;

#[derive(Clone, Debug, PartialEq)]
pub struct SequenceSpec {
    pub n_frames: usize,
    pub scale: usize,
    /// Noise standard deviation in gray levels.
    pub sigma: f64,
    pub seed: u64,
    /// Half-open range for per-axis shifts, in LR pixels.
    pub shift_range: (f64, f64),
}

impl Default for SequenceSpec {
    fn default() -> Self {
        SequenceSpec {
            n_frames: 25,
            scale: 2,
            sigma: 0.0,
            seed: 0,
            shift_range: (0.0, 1.0),
        }
    }
}

impl SequenceSpec {
    fn validate(&self) -> Result<()> {
        if self.n_frames == 0 {
            return Err(Error::InvalidArgument("n_frames must be at least 1".into()));
        }
        if self.scale == 0 {
            return Err(Error::InvalidArgument("scale must be at least 1".into()));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!("sigma must be >= 0, got {}", self.sigma)));
        }
        let (lo, hi) = self.shift_range;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::InvalidArgument(format!("empty shift range [{lo}, {hi})")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticSequence {
    pub frames: Vec<GrayImage>,
    pub true_shifts: Vec<Transform>,
    pub spec: SequenceSpec,
    pub ground_truth: GrayImage,
}

/// SplitMix64 finalizer; maps a (seed, stream) pair to an independent seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Moves image content by `(+tx, +ty)` pixels using bilinear resampling.
pub fn shift_image(img: &GrayImage, tx: f64, ty: f64) -> GrayImage {
    GrayImage::from_fn(img.width(), img.height(), |x, y| {
        img.bilinear_sample(x as f64 - tx, y as f64 - ty)
    })
}

/// Averages each `scale x scale` block into one output pixel.
pub fn downsample_box(img: &GrayImage, scale: usize) -> Result<GrayImage> {
    if scale == 0 {
        return Err(Error::InvalidArgument("scale must be at least 1".into()));
    }
    let (w, h) = img.dims();
    if w % scale != 0 || h % scale != 0 {
        return Err(Error::InvalidArgument(format!(
            "{w}x{h} image is not divisible by scale {scale}"
        )));
    }
    let norm = 1.0 / (scale * scale) as f64;
    Ok(GrayImage::from_fn(w / scale, h / scale, |x, y| {
        let mut sum = 0.0;
        for yy in y * scale..(y + 1) * scale {
            sum += img.row(yy)[x * scale..(x + 1) * scale].iter().sum::<f64>();
        }
        sum * norm
    }))
}

pub fn add_gaussian_noise(img: &GrayImage, sigma: f64, seed: u64) -> GrayImage {
    if sigma == 0.0 {
        return img.clone();
    }
    let normal = Normal::new(0.0, sigma).expect("sigma must be finite and non-negative");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    img.map(|v| v + normal.sample(&mut rng))
}

pub fn generate_sequence(hr: &GrayImage, spec: &SequenceSpec) -> Result<SyntheticSequence> {
    spec.validate()?;
    let (w, h) = hr.dims();
    if w % spec.scale != 0 || h % spec.scale != 0 {
        return Err(Error::InvalidArgument(format!(
            "{w}x{h} image is not divisible by scale {}",
            spec.scale
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, u64::MAX));
    let (lo, hi) = spec.shift_range;
    let mut true_shifts = Vec::with_capacity(spec.n_frames);
    true_shifts.push(Transform::IDENTITY);
    for _ in 1..spec.n_frames {
        let tx = rng.random_range(lo..hi);
        let ty = rng.random_range(lo..hi);
        true_shifts.push(Transform::new(tx, ty));
    }

    let scale = spec.scale as f64;
    let frames = true_shifts
        .iter()
        .enumerate()
        .map(|(k, t)| {
            let shifted = shift_image(hr, scale * t.tx, scale * t.ty);
            let lr = downsample_box(&shifted, spec.scale)?;
            Ok(add_gaussian_noise(&lr, spec.sigma, derive_seed(spec.seed, k as u64)))
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(SyntheticSequence {
        frames,
        true_shifts,
        spec: spec.clone(),
        ground_truth: hr.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn textured(w: usize, h: usize) -> GrayImage {
        GrayImage::from_fn(w, h, |x, y| {
            let (x, y) = (x as f64, y as f64);
            128.0 + 60.0 * (0.4 * x).sin() * (0.3 * y).cos() + 20.0 * (0.9 * x + 0.2 * y).sin()
        })
    }

    #[test]
    fn zero_shift_is_identity() {
        let img = textured(9, 7);
        assert_eq!(shift_image(&img, 0.0, 0.0), img);
    }

    #[test]
    fn integer_shift_translates_interior() {
        let img = textured(10, 6);
        let out = shift_image(&img, 1.0, 0.0);
        for y in 0..6 {
            for x in 1..10 {
                assert_eq!(out.get(x, y), img.get(x - 1, y));
            }
        }
    }

    #[test]
    fn half_pixel_shift_on_ramp() {
        let img = GrayImage::from_fn(8, 4, |x, _| x as f64);
        let out = shift_image(&img, 0.5, 0.0);
        for y in 0..4 {
            for x in 1..8 {
                assert!((out.get(x, y) - (x as f64 - 0.5)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn box_downsample_examples() {
        let img = GrayImage::new(2, 2, vec![0.0, 0.0, 0.0, 4.0]).unwrap();
        assert_eq!(downsample_box(&img, 2).unwrap().pixels(), &[1.0]);
        let img = textured(6, 4);
        assert_eq!(downsample_box(&img, 1).unwrap(), img);
        let c = downsample_box(&GrayImage::filled(6, 4, 9.0), 2).unwrap();
        assert_eq!(c.dims(), (3, 2));
        assert!(c.pixels().iter().all(|&v| v == 9.0));
        assert!(downsample_box(&GrayImage::filled(5, 4, 0.0), 2).is_err());
    }

    #[test]
    fn noise_statistics() {
        let img = GrayImage::filled(1000, 1000, 100.0);
        let noisy = add_gaussian_noise(&img, 20.0, 42);
        let n = noisy.pixels().len() as f64;
        let mean = noisy.mean();
        let var = noisy.pixels().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!((mean - 100.0).abs() < 0.1, "mean {mean}");
        assert!((var.sqrt() - 20.0).abs() < 0.2, "std {}", var.sqrt());
        assert_eq!(add_gaussian_noise(&img, 0.0, 1), img);
        assert_eq!(add_gaussian_noise(&img, 5.0, 9), add_gaussian_noise(&img, 5.0, 9));
    }

    #[test]
    fn single_frame_sequence() {
        let hr = textured(16, 12);
        let spec = SequenceSpec {
            n_frames: 1,
            ..Default::default()
        };
        let seq = generate_sequence(&hr, &spec).unwrap();
        assert_eq!(seq.frames.len(), 1);
        assert_eq!(seq.true_shifts, vec![Transform::IDENTITY]);
        assert_eq!(seq.frames[0], downsample_box(&hr, 2).unwrap());
    }

    #[test]
    fn noiseless_frames_follow_forward_model() {
        let hr = textured(20, 16);
        let spec = SequenceSpec {
            n_frames: 5,
            seed: 3,
            ..Default::default()
        };
        let seq = generate_sequence(&hr, &spec).unwrap();
        for (frame, t) in seq.frames.iter().zip(&seq.true_shifts) {
            assert!((0.0..1.0).contains(&t.tx) && (0.0..1.0).contains(&t.ty));
            let expected = downsample_box(&shift_image(&hr, 2.0 * t.tx, 2.0 * t.ty), 2).unwrap();
            assert_eq!(frame, &expected);
        }
    }

    #[test]
    fn sequence_is_deterministic() {
        let hr = textured(16, 16);
        let spec = SequenceSpec {
            n_frames: 4,
            sigma: 10.0,
            seed: 11,
            ..Default::default()
        };
        let a = generate_sequence(&hr, &spec).unwrap();
        let b = generate_sequence(&hr, &spec).unwrap();
        assert_eq!(a.frames, b.frames);
        assert_eq!(a.true_shifts, b.true_shifts);
        let c = generate_sequence(&hr, &SequenceSpec { seed: 12, ..spec }).unwrap();
        assert_ne!(a.frames, c.frames);
    }

    #[test]
    fn rejects_bad_specs() {
        let hr = textured(16, 16);
        for spec in [
            SequenceSpec { n_frames: 0, ..Default::default() },
            SequenceSpec { scale: 3, ..Default::default() },
            SequenceSpec { sigma: -1.0, ..Default::default() },
            SequenceSpec { shift_range: (1.0, 1.0), ..Default::default() },
        ] {
            assert!(generate_sequence(&hr, &spec).is_err(), "{spec:?}");
        }
    }

    proptest! {
        #[test]
        fn box_downsample_preserves_mean(seed in any::<u64>(), scale in 1usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let img = GrayImage::from_fn(4 * scale, 3 * scale, |_, _| rng.random_range(0.0..255.0));
            let out = downsample_box(&img, scale).unwrap();
            prop_assert!((out.mean() - img.mean()).abs() < 1e-9);
        }
    }
}
