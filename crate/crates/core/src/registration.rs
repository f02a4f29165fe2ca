//! Sub-pixel translational registration of frames against a reference.
//!
//! Gauss-Newton on the sum of squared differences between a frame and the
//! bilinearly translated reference, run coarse-to-fine over a 2x box pyramid.
//! The Jacobian uses the exact derivative of the bilinear interpolant, so the
//! fixed point is a true stationary point of the SSD objective.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::synth::downsample_box;

/// Translation in LR pixels; positive values move content right / down.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Transform {
    pub tx: f64,
    pub ty: f64,
}

impl Transform {
    pub const IDENTITY: Transform = Transform { tx: 0.0, ty: 0.0 };

    pub fn new(tx: f64, ty: f64) -> Self {
        Transform { tx, ty }
    }

    fn max_abs(&self) -> f64 {
        self.tx.abs().max(self.ty.abs())
    }

    fn scaled(&self, k: f64) -> Transform {
        Transform::new(self.tx * k, self.ty * k)
    }
}

impl std::ops::Neg for Transform {
    type Output = Transform;
    fn neg(self) -> Transform {
        Transform::new(-self.tx, -self.ty)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegistrationConfig {
    pub pyramid_levels: usize,
    pub max_iters_per_level: usize,
    /// Step size (LR pixels) below which iteration stops.
    pub convergence_eps: f64,
    /// Largest shift magnitude (LR pixels) accepted before giving up.
    pub search_limit: f64,
    /// Standard deviation (LR pixels) of the Gaussian applied to both images
    /// before matching; 0 disables it.
    pub prefilter_sigma: f64,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        RegistrationConfig {
            pyramid_levels: 3,
            max_iters_per_level: 50,
            convergence_eps: 1e-4,
            search_limit: 8.0,
            prefilter_sigma: 1.5,
        }
    }
}

impl RegistrationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pyramid_levels == 0
            || self.max_iters_per_level == 0
            || !(self.convergence_eps > 0.0)
            || !(self.search_limit > 0.0)
            || !(self.prefilter_sigma >= 0.0)
        {
            return Err(Error::InvalidArgument(format!(
                "registration parameters must be positive: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Width of the band excluded from the residual for a given shift.
pub fn residual_border(t: Transform) -> usize {
    t.max_abs().ceil() as usize + 1
}

/// Mean squared difference between `frame` and `reference` translated by `t`,
/// over the region left after removing `border` pixels on each side.
///
/// Returns `None` when the region is empty.
pub fn mean_squared_residual(
    reference: &GrayImage,
    frame: &GrayImage,
    t: Transform,
    border: usize,
) -> Option<f64> {
    let (w, h) = frame.dims();
    if 2 * border >= w || 2 * border >= h {
        return None;
    }
    let mut sum = 0.0;
    for y in border..h - border {
        for x in border..w - border {
            let r = frame.get(x, y) - reference.bilinear_sample(x as f64 - t.tx, y as f64 - t.ty);
            sum += r * r;
        }
    }
    Some(sum / ((w - 2 * border) * (h - 2 * border)) as f64)
}

/// Value and exact partial derivatives of the bilinear interpolant at (u, v).
/// The caller guarantees `0 <= u < w - 1` and `0 <= v < h - 1`.
#[inline]
fn interp_with_grad(img: &GrayImage, u: f64, v: f64) -> (f64, f64, f64) {
    let x0 = u.floor() as usize;
    let y0 = v.floor() as usize;
    let fx = u - x0 as f64;
    let fy = v - y0 as f64;
    let w = img.width();
    let p = img.pixels();
    let i00 = p[y0 * w + x0];
    let i10 = p[y0 * w + x0 + 1];
    let i01 = p[(y0 + 1) * w + x0];
    let i11 = p[(y0 + 1) * w + x0 + 1];
    let top = i00 + fx * (i10 - i00);
    let bottom = i01 + fx * (i11 - i01);
    let value = top + fy * (bottom - top);
    let gx = (1.0 - fy) * (i10 - i00) + fy * (i11 - i01);
    let gy = bottom - top;
    (value, gx, gy)
}

struct NormalEquations {
    h: [f64; 3],
    g: [f64; 2],
}

fn normal_equations(reference: &GrayImage, frame: &GrayImage, t: Transform, border: usize) -> NormalEquations {
    let (w, h) = frame.dims();
    let mut hxx = 0.0;
    let mut hxy = 0.0;
    let mut hyy = 0.0;
    let mut gx_acc = 0.0;
    let mut gy_acc = 0.0;
    for y in border..h - border {
        for x in border..w - border {
            let (value, ix, iy) = interp_with_grad(reference, x as f64 - t.tx, y as f64 - t.ty);
            let r = frame.get(x, y) - value;
            hxx += ix * ix;
            hxy += ix * iy;
            hyy += iy * iy;
            gx_acc += ix * r;
            gy_acc += iy * r;
        }
    }
    NormalEquations {
        h: [hxx, hxy, hyy],
        g: [gx_acc, gy_acc],
    }
}

/// Separable Gaussian blur truncated at 3 sigma, replicating the border.
pub fn gaussian_blur(img: &GrayImage, sigma: f64) -> GrayImage {
    if sigma == 0.0 {
        return img.clone();
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let mut kernel: Vec<f64> = (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);
    let (w, h) = img.dims();
    let pass = |src: &GrayImage, horizontal: bool| {
        GrayImage::from_fn(w, h, |x, y| {
            kernel
                .iter()
                .enumerate()
                .map(|(i, k)| {
                    let d = i as i64 - radius;
                    let v = if horizontal {
                        src.get((x as i64 + d).clamp(0, w as i64 - 1) as usize, y)
                    } else {
                        src.get(x, (y as i64 + d).clamp(0, h as i64 - 1) as usize)
                    };
                    k * v
                })
                .sum()
        })
    };
    pass(&pass(img, true), false)
}

fn build_pyramid(img: &GrayImage, levels: usize) -> Vec<GrayImage> {
    let mut pyramid = vec![img.clone()];
    while pyramid.len() < levels {
        let last = pyramid.last().unwrap();
        let (w, h) = (last.width() / 2, last.height() / 2);
        if w < 16 || h < 16 {
            break;
        }
        let cropped = GrayImage::from_fn(2 * w, 2 * h, |x, y| last.get(x, y));
        pyramid.push(downsample_box(&cropped, 2).expect("even dimensions"));
    }
    pyramid
}

fn refine_level(
    reference: &GrayImage,
    frame: &GrayImage,
    mut t: Transform,
    level_scale: f64,
    cfg: &RegistrationConfig,
) -> Result<Transform> {
    // Pixels this close to the edge are contaminated by the prefilter's
    // border replication.
    let margin = (3.0 * cfg.prefilter_sigma / level_scale).ceil() as usize;
    let eps = cfg.convergence_eps / level_scale;
    let limit = cfg.search_limit / level_scale;
    for _ in 0..cfg.max_iters_per_level {
        let border = residual_border(t) + margin;
        let too_small = || Error::Degenerate(format!(
            "{}x{} image too small for a {border}-pixel residual border",
            frame.width(),
            frame.height()
        ));
        if 2 * border >= frame.width() || 2 * border >= frame.height() {
            return Err(too_small());
        }
        let ne = normal_equations(reference, frame, t, border);
        let [hxx, hxy, hyy] = ne.h;
        let det = hxx * hyy - hxy * hxy;
        let trace = hxx + hyy;
        if !(trace > 0.0) || det <= 1e-12 * trace * trace {
            return Err(Error::Degenerate(
                "normal matrix is singular; image lacks gradient structure".into(),
            ));
        }
        // Solve H d = -g.
        let dx = -(hyy * ne.g[0] - hxy * ne.g[1]) / det;
        let dy = -(hxx * ne.g[1] - hxy * ne.g[0]) / det;

        // Backtrack until the objective does not increase; both sides are
        // evaluated over the same region so they are comparable.
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..12 {
            let cand = Transform::new(t.tx + step * dx, t.ty + step * dy);
            let b = residual_border(t).max(residual_border(cand)) + margin;
            match (
                mean_squared_residual(reference, frame, t, b),
                mean_squared_residual(reference, frame, cand, b),
            ) {
                (Some(f0), Some(f1)) if f1 <= f0 => {
                    accepted = Some(cand);
                    break;
                }
                _ => step *= 0.5,
            }
        }
        let Some(next) = accepted else {
            // No descent along the Gauss-Newton direction: local minimum.
            return Ok(t);
        };
        let moved = (next.tx - t.tx).abs().max((next.ty - t.ty).abs());
        t = next;
        if !(t.max_abs() <= limit) {
            let last = t.scaled(level_scale);
            return Err(Error::NonConvergence {
                tx: last.tx,
                ty: last.ty,
                reason: format!("estimate left the search limit of {}", cfg.search_limit),
            });
        }
        if moved < eps {
            break;
        }
    }
    Ok(t)
}

/// Estimates `t` such that `shift_image(reference, t.tx, t.ty)` best matches
/// `frame` in the least-squares sense.
pub fn register(reference: &GrayImage, frame: &GrayImage, cfg: &RegistrationConfig) -> Result<Transform> {
    cfg.validate()?;
    if reference.dims() != frame.dims() {
        return Err(Error::dims(
            format!("{}x{}", reference.width(), reference.height()),
            format!("{}x{}", frame.width(), frame.height()),
        ));
    }
    let first = reference.pixels()[0];
    if reference.pixels().iter().all(|&v| v == first) {
        return Err(Error::Degenerate("reference image is constant".into()));
    }

    let ref_pyr = build_pyramid(&gaussian_blur(reference, cfg.prefilter_sigma), cfg.pyramid_levels);
    let frame_pyr = build_pyramid(&gaussian_blur(frame, cfg.prefilter_sigma), cfg.pyramid_levels);
    let mut t = Transform::IDENTITY;
    for level in (0..ref_pyr.len()).rev() {
        let level_scale = (1u64 << level) as f64;
        t = refine_level(&ref_pyr[level], &frame_pyr[level], t, level_scale, cfg)?;
        if level > 0 {
            t = t.scaled(2.0);
        }
    }
    Ok(t)
}

/// Registers every frame against `frames[0]`; the first transform is exactly
/// the identity.
pub fn register_sequence(frames: &[GrayImage], cfg: &RegistrationConfig) -> Result<Vec<Transform>> {
    let Some(reference) = frames.first() else {
        return Err(Error::InvalidArgument("cannot register an empty sequence".into()));
    };
    let mut out: Vec<Transform> = frames[1..]
        .par_iter()
        .enumerate()
        .map(|(i, f)| {
            register(reference, f, cfg).map_err(|e| Error::Frame {
                index: i + 1,
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;
    out.insert(0, Transform::IDENTITY);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{add_gaussian_noise, shift_image};

    fn scene(w: usize, h: usize) -> GrayImage {
        GrayImage::from_fn(w, h, |x, y| {
            let (x, y) = (x as f64, y as f64);
            120.0
                + 50.0 * (0.21 * x + 0.05 * y).sin()
                + 35.0 * (0.17 * y - 0.08 * x).cos()
                + 15.0 * (0.05 * x * y / 8.0).sin()
        })
    }

    #[test]
    fn self_registration_is_identity() {
        let img = scene(64, 48);
        let t = register(&img, &img, &RegistrationConfig::default()).unwrap();
        assert!(t.tx.abs() < 1e-6 && t.ty.abs() < 1e-6, "{t:?}");
    }

    #[test]
    fn recovers_generating_shift() {
        let img = scene(64, 64);
        let frame = shift_image(&img, 0.5, -0.25);
        let t = register(&img, &frame, &RegistrationConfig::default()).unwrap();
        assert!((t.tx - 0.5).abs() < 0.01 && (t.ty + 0.25).abs() < 0.01, "{t:?}");
    }

    #[test]
    fn large_shift_needs_pyramid() {
        let img = scene(96, 96);
        let frame = shift_image(&img, 3.3, -2.6);
        let t = register(&img, &frame, &RegistrationConfig::default()).unwrap();
        assert!((t.tx - 3.3).abs() < 0.02 && (t.ty + 2.6).abs() < 0.02, "{t:?}");
    }

    #[test]
    fn noisy_pair_within_tolerance() {
        let img = scene(96, 96);
        let frame = add_gaussian_noise(&shift_image(&img, 0.5, -0.25), 20.0, 5);
        let t = register(&img, &frame, &RegistrationConfig::default()).unwrap();
        assert!((t.tx - 0.5).abs() < 0.2 && (t.ty + 0.25).abs() < 0.2, "{t:?}");
    }

    #[test]
    fn constant_reference_is_degenerate() {
        let flat = GrayImage::filled(32, 32, 7.0);
        let err = register(&flat, &scene(32, 32), &RegistrationConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Degenerate(_)), "{err}");
    }

    #[test]
    fn mismatched_dims_rejected() {
        let err = register(&scene(32, 32), &scene(32, 30), &RegistrationConfig::default()).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
    }

    #[test]
    fn escaping_search_limit_is_reported() {
        let img = scene(96, 96);
        let frame = shift_image(&img, 3.0, 0.0);
        let cfg = RegistrationConfig {
            search_limit: 1.0,
            ..Default::default()
        };
        let err = register(&img, &frame, &cfg).unwrap_err();
        assert!(matches!(err, Error::NonConvergence { .. }), "{err}");
    }

    #[test]
    fn sequence_starts_at_identity() {
        let img = scene(48, 48);
        let out = register_sequence(std::slice::from_ref(&img), &RegistrationConfig::default()).unwrap();
        assert_eq!(out, vec![Transform::IDENTITY]);
        let frames = vec![img.clone(), img.clone(), img.clone()];
        let out = register_sequence(&frames, &RegistrationConfig::default()).unwrap();
        assert_eq!(out[0], Transform::IDENTITY);
        for t in &out {
            assert!(t.tx.abs() < 1e-6 && t.ty.abs() < 1e-6);
        }
        assert!(register_sequence(&[], &RegistrationConfig::default()).is_err());
    }

    #[test]
    fn frame_errors_carry_index() {
        let img = scene(48, 48);
        let frames = vec![GrayImage::filled(48, 48, 1.0), img];
        let err = register_sequence(&frames, &RegistrationConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Frame { index: 1, .. }), "{err}");
    }

    fn scene_shifted(w: usize, h: usize, tx: f64, ty: f64) -> GrayImage {
        GrayImage::from_fn(w, h, |x, y| {
            let (x, y) = (x as f64 - tx, y as f64 - ty);
            120.0 + 50.0 * (0.21 * x + 0.05 * y).sin() + 35.0 * (0.17 * y - 0.08 * x).cos()
        })
    }

    #[test]
    fn antisymmetric_on_interpolation_exact_pairs() {
        let cfg = RegistrationConfig::default();
        let tol = 2.0 * cfg.convergence_eps;
        for &(tx, ty) in &[(2.0, -1.0), (1.0, 1.0), (-3.0, 2.0), (0.0, 1.0)] {
            let a = scene_shifted(96, 96, 0.0, 0.0);
            let b = scene_shifted(96, 96, tx, ty);
            let ab = register(&a, &b, &cfg).unwrap();
            let ba = register(&b, &a, &cfg).unwrap();
            assert!((ab.tx + ba.tx).abs() < tol && (ab.ty + ba.ty).abs() < tol, "{ab:?} {ba:?}");
            assert!((ab.tx - tx).abs() < tol && (ab.ty - ty).abs() < tol, "{ab:?}");
        }
    }

    #[test]
    fn nearly_antisymmetric_on_fractional_pairs() {
        // Bilinear resampling bias keeps the two directions ~1e-3 apart here.
        let cfg = RegistrationConfig::default();
        for &(tx, ty) in &[(0.37, -0.62), (1.3, 0.45), (-0.8, -1.1)] {
            let a = scene_shifted(96, 96, 0.0, 0.0);
            let b = scene_shifted(96, 96, tx, ty);
            let ab = register(&a, &b, &cfg).unwrap();
            let ba = register(&b, &a, &cfg).unwrap();
            assert!((ab.tx + ba.tx).abs() < 5e-3 && (ab.ty + ba.ty).abs() < 5e-3, "{ab:?} {ba:?}");
        }
    }

    #[test]
    fn never_worse_than_no_registration() {
        let a = scene(64, 64);
        for (i, &(tx, ty)) in [(0.3, 0.7), (-1.4, 0.2), (2.2, -0.9)].iter().enumerate() {
            let b = add_gaussian_noise(&shift_image(&a, tx, ty), 5.0, i as u64);
            let t = register(&a, &b, &RegistrationConfig::default()).unwrap();
            let border = residual_border(t);
            let at_t = mean_squared_residual(&a, &b, t, border).unwrap();
            let at_zero = mean_squared_residual(&a, &b, Transform::IDENTITY, border).unwrap();
            assert!(at_t <= at_zero);
        }
    }
}
