use std::borrow::Cow;

use crate::error::{Error, Result};
use crate::localmodel::{fit_poly_centered, support_std, FitConfig, ModelField};
use crate::pca::{CoeffPatch, SITE_COEFFS};
use crate::projection::ProjectedCloud;

/// Order of the per-site models that feed the patches.
pub const PATCH_ORDER: u8 = 2;

/// Central-site support values plus the coefficient patch around it.
#[derive(Clone, Debug)]
pub struct SitePatch {
    pub patch: CoeffPatch,
    pub support_std: f64,
}

fn widened(cfg: &FitConfig) -> FitConfig {
    FitConfig {
        support_radius: 2.0 * cfg.support_radius,
        ..*cfg
    }
}

/// Model at one site fitted directly from the cloud: first within the support
/// radius, then within twice that. Returns coefficients and support values.
fn fit_site(cloud: &ProjectedCloud, gx: i64, gy: i64, cfg: &FitConfig) -> Option<(Vec<f64>, Vec<f64>)> {
    for c in [*cfg, widened(cfg)] {
        let support = cloud.query_support(gx, gy, c.support_radius);
        if let Ok(m) = fit_poly_centered(&support, (gx, gy), PATCH_ORDER, &c) {
            return Some((m.coeffs, support.iter().map(|n| n.pixel.value).collect()));
        }
    }
    None
}

fn clamp_site(v: i64, len: usize) -> i64 {
    v.clamp(0, len as i64 - 1)
}

/// Builds the `window x window` coefficient patch centered on `site`
/// straight from the cloud. Neighbors outside the grid are clamped to the
/// edge; a neighbor with no support reuses the central model.
///
/// Returns the patch and the central site's support values.
pub fn build_patch(
    cloud: &ProjectedCloud,
    site: (i64, i64),
    window: usize,
    cfg: &FitConfig,
) -> Result<(CoeffPatch, Vec<f64>)> {
    check_window(window)?;
    let (w, h) = (cloud.hr_width(), cloud.hr_height());
    let (cx, cy) = (clamp_site(site.0, w), clamp_site(site.1, h));
    let (central, values) = fit_site(cloud, cx, cy, cfg).ok_or(Error::EmptySupport {
        gx: site.0,
        gy: site.1,
        radius: 2.0 * cfg.support_radius,
    })?;
    let half = (window / 2) as i64;
    let mut patch = Vec::with_capacity(SITE_COEFFS * window * window);
    for dy in -half..=half {
        for dx in -half..=half {
            let (nx, ny) = (clamp_site(site.0 + dx, w), clamp_site(site.1 + dy, h));
            match fit_site(cloud, nx, ny, cfg) {
                Some((c, _)) => patch.extend_from_slice(&c),
                None => patch.extend_from_slice(&central),
            }
        }
    }
    Ok((CoeffPatch::new(patch), values))
}

fn check_window(window: usize) -> Result<()> {
    if window == 0 || window.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!("window must be odd, got {window}")));
    }
    Ok(())
}

/// Patch extraction backed by a precomputed model field. Gives the same
/// patches as [`build_patch`] but fits every site only once.
pub struct PatchExtractor<'a> {
    cloud: &'a ProjectedCloud,
    field: ModelField,
    window: usize,
    cfg: FitConfig,
}

impl<'a> PatchExtractor<'a> {
    pub fn new(cloud: &'a ProjectedCloud, window: usize, cfg: &FitConfig) -> Result<Self> {
        check_window(window)?;
        let field = ModelField::fit(cloud, PATCH_ORDER, cfg)?;
        Ok(PatchExtractor {
            cloud,
            field,
            window,
            cfg: *cfg,
        })
    }

    pub fn field(&self) -> &ModelField {
        &self.field
    }

    fn site_model(&self, gx: i64, gy: i64) -> Option<(Cow<'_, [f64]>, f64)> {
        if let Some(c) = self.field.coeffs(gx as usize, gy as usize) {
            return Some((Cow::Borrowed(c), self.field.support_std(gx as usize, gy as usize)));
        }
        let wide = widened(&self.cfg);
        let support = self.cloud.query_support(gx, gy, wide.support_radius);
        fit_poly_centered(&support, (gx, gy), PATCH_ORDER, &wide)
            .ok()
            .map(|m| (Cow::Owned(m.coeffs), support_std(&support)))
    }

    /// Patch at `site` (must lie on the grid) plus the central support spread.
    pub fn patch(&self, gx: usize, gy: usize) -> Result<SitePatch> {
        let (w, h) = (self.field.width(), self.field.height());
        let (sx, sy) = (gx as i64, gy as i64);
        let (central, std) = self.site_model(sx, sy).ok_or(Error::EmptySupport {
            gx: sx,
            gy: sy,
            radius: 2.0 * self.cfg.support_radius,
        })?;
        let half = (self.window / 2) as i64;
        let mut patch = Vec::with_capacity(SITE_COEFFS * self.window * self.window);
        for dy in -half..=half {
            for dx in -half..=half {
                let (nx, ny) = (clamp_site(sx + dx, w), clamp_site(sy + dy, h));
                match self.site_model(nx, ny) {
                    Some((c, _)) => patch.extend_from_slice(&c),
                    None => patch.extend_from_slice(&central),
                }
            }
        }
        Ok(SitePatch {
            patch: CoeffPatch::new(patch),
            support_std: std,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::localmodel::support_std;
    use crate::projection::ProjectedPixel;

    fn sparse_cloud() -> ProjectedCloud {
        // Samples only in the left half, so the right half needs fallbacks.
        let mut pixels = Vec::new();
        let mut k = 0;
        for y in 0..8 {
            for x in 0..4 {
                for (ox, oy) in [(0.1, -0.2), (-0.3, 0.25)] {
                    let (px, py) = (x as f64 + ox, y as f64 + oy);
                    pixels.push(ProjectedPixel {
                        x: px,
                        y: py,
                        value: 10.0 + 3.0 * px - py + 0.5 * px * py + ((k * 7) % 5) as f64,
                        frame: 0,
                        lr_row: y as u32,
                        lr_col: k,
                    });
                    k += 1;
                }
            }
        }
        ProjectedCloud::from_pixels(pixels, 10, 8)
    }

    #[test]
    fn extractor_matches_direct_build() {
        let cloud = sparse_cloud();
        let cfg = FitConfig::default();
        let ex = PatchExtractor::new(&cloud, 3, &cfg).unwrap();
        for gy in 0..8 {
            for gx in 0..10 {
                let direct = build_patch(&cloud, (gx, gy), 3, &cfg);
                let fast = ex.patch(gx as usize, gy as usize);
                match (direct, fast) {
                    (Ok((p, values)), Ok(sp)) => {
                        assert_eq!(p, sp.patch, "site ({gx}, {gy})");
                        let n = values.len() as f64;
                        let mean = values.iter().sum::<f64>() / n;
                        let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
                        assert!((std - sp.support_std).abs() < 1e-9);
                    }
                    (Err(Error::EmptySupport { .. }), Err(Error::EmptySupport { .. })) => {}
                    (a, b) => panic!("site ({gx}, {gy}) disagrees: {a:?} vs {b:?}"),
                }
            }
        }
    }

    #[test]
    fn patch_layout_and_edge_clamping() {
        let cloud = sparse_cloud();
        let cfg = FitConfig::default();
        let (p, _) = build_patch(&cloud, (0, 0), 3, &cfg).unwrap();
        assert_eq!(p.len(), 54);
        // Clamped neighbors at the corner repeat the corner model.
        let s = p.as_slice();
        assert_eq!(&s[0..6], &s[6 * 4..6 * 5]);
        assert_eq!(&s[0..6], &s[6..12]);
        let support = cloud.query_support(0, 0, cfg.support_radius);
        assert!((support_std(&support) - PatchExtractor::new(&cloud, 3, &cfg).unwrap().patch(0, 0).unwrap().support_std).abs() < 1e-12);
    }

    #[test]
    fn empty_site_is_an_error() {
        let cloud = sparse_cloud();
        let err = build_patch(&cloud, (9, 4), 3, &FitConfig::default()).unwrap_err();
        assert!(matches!(err, Error::EmptySupport { gx: 9, gy: 4, .. }));
        assert!(build_patch(&cloud, (1, 1), 4, &FitConfig::default()).is_err());
    }
}
