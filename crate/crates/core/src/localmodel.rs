//! Local polynomial surface models fitted to projected pixels, plus the
//! distance-based baseline interpolators they are compared against.
//!
//! Basis order is fixed: `[1, dx, dy, dx^2, dx*dy, dy^2, dx^3, dx^2*dy, dx*dy^2, dy^3]`,
//! truncated to the model order, with `(dx, dy)` the HR-pixel offset from the
//! model's site.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::linalg::lstsq_svd;
use crate::projection::{Neighbor, ProjectedCloud};

/// Coincidence radius for inverse-distance weighting, in HR pixels.
pub const IDW_EPSILON: f64 = 1e-9;

pub fn coeff_count(order: u8) -> usize {
    let o = order as usize;
    (o + 1) * (o + 2) / 2
}

fn check_order(order: u8) -> Result<()> {
    if (1..=3).contains(&order) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("polynomial order must be 1, 2 or 3, got {order}")))
    }
}

/// Writes the basis functions of `order` evaluated at `(dx, dy)` into `out`.
#[inline]
pub fn basis_into(order: u8, dx: f64, dy: f64, out: &mut [f64]) {
    out[0] = 1.0;
    out[1] = dx;
    out[2] = dy;
    if order >= 2 {
        out[3] = dx * dx;
        out[4] = dx * dy;
        out[5] = dy * dy;
    }
    if order >= 3 {
        out[6] = dx * dx * dx;
        out[7] = dx * dx * dy;
        out[8] = dx * dy * dy;
        out[9] = dy * dy * dy;
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolyModel {
    pub order: u8,
    pub coeffs: Vec<f64>,
    pub site: (i64, i64),
    pub n_support: usize,
    /// Set when the SVD discarded a singular value or the support was
    /// smaller than the configured minimum.
    pub condition_flag: bool,
}

impl PolyModel {
    pub fn eval(&self, dx: f64, dy: f64) -> f64 {
        let mut b = [0.0; 10];
        basis_into(self.order, dx, dy, &mut b);
        self.coeffs.iter().zip(&b).map(|(c, v)| c * v).sum()
    }
}

pub fn eval_poly(model: &PolyModel, dx: f64, dy: f64) -> f64 {
    model.eval(dx, dy)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FitConfig {
    /// Radius (HR pixels) of the circular support window.
    pub support_radius: f64,
    /// Singular values below this fraction of the largest are zeroed.
    pub svd_rel_threshold: f64,
    /// Support size below which fits are flagged; `None` means the number of
    /// coefficients.
    pub min_support: Option<usize>,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            support_radius: 2.5,
            svd_rel_threshold: 1e-6,
            min_support: None,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.support_radius > 0.0) {
            return Err(Error::InvalidArgument("support_radius must be positive".into()));
        }
        if !(self.svd_rel_threshold > 0.0 && self.svd_rel_threshold < 1.0) {
            return Err(Error::InvalidArgument("svd_rel_threshold must lie in (0, 1)".into()));
        }
        if self.min_support == Some(0) {
            return Err(Error::InvalidArgument("min_support must be at least 1".into()));
        }
        Ok(())
    }
}

/// Least-squares polynomial through the support pixels, solved by truncated
/// SVD (minimum-norm when rank deficient).
pub fn fit_poly(support: &[Neighbor], site: (i64, i64), order: u8, cfg: &FitConfig) -> Result<PolyModel> {
    fit_offset(support, site, order, cfg, 0.0)
}

/// [`fit_poly`] on the support values minus their mean, with the mean added
/// back to the DC term. Same model when the fit has full rank; on
/// rank-deficient supports a constant stays exactly constant.
pub fn fit_poly_centered(support: &[Neighbor], site: (i64, i64), order: u8, cfg: &FitConfig) -> Result<PolyModel> {
    let mean = support.iter().map(|n| n.pixel.value).sum::<f64>() / support.len().max(1) as f64;
    let mut model = fit_offset(support, site, order, cfg, mean)?;
    model.coeffs[0] += mean;
    Ok(model)
}

fn fit_offset(support: &[Neighbor], site: (i64, i64), order: u8, cfg: &FitConfig, offset: f64) -> Result<PolyModel> {
    check_order(order)?;
    if support.is_empty() {
        return Err(Error::EmptySupport {
            gx: site.0,
            gy: site.1,
            radius: cfg.support_radius,
        });
    }
    let m = coeff_count(order);
    let mut a = vec![0.0; support.len() * m];
    let mut b = Vec::with_capacity(support.len());
    for (row, n) in a.chunks_exact_mut(m).zip(support) {
        basis_into(order, n.pixel.x - site.0 as f64, n.pixel.y - site.1 as f64, row);
        b.push(n.pixel.value - offset);
    }
    let sol = lstsq_svd(&a, &b, m, cfg.svd_rel_threshold);
    let min_support = cfg.min_support.unwrap_or(m);
    Ok(PolyModel {
        order,
        coeffs: sol.x,
        site,
        n_support: support.len(),
        condition_flag: sol.truncated || support.len() < min_support,
    })
}

/// Value of the first (nearest, tie-broken) support pixel.
pub fn interp_nn(support: &[Neighbor]) -> Result<f64> {
    support
        .first()
        .map(|n| n.pixel.value)
        .ok_or_else(|| Error::InvalidArgument("nearest-neighbor interpolation needs a non-empty support".into()))
}

/// Plain inverse-distance weighted mean; pixels closer than
/// [`IDW_EPSILON`] to the site take over completely.
pub fn interp_idw(support: &[Neighbor]) -> Result<f64> {
    if support.is_empty() {
        return Err(Error::InvalidArgument("IDW interpolation needs a non-empty support".into()));
    }
    let coincident: Vec<f64> = support
        .iter()
        .filter(|n| n.distance < IDW_EPSILON)
        .map(|n| n.pixel.value)
        .collect();
    if !coincident.is_empty() {
        return Ok(coincident.iter().sum::<f64>() / coincident.len() as f64);
    }
    let (num, den) = support.iter().fold((0.0, 0.0), |(num, den), n| {
        let w = 1.0 / n.distance.max(IDW_EPSILON);
        (num + w * n.pixel.value, den + w)
    });
    Ok(num / den)
}

/// Polynomial fit evaluated at the site itself, falling back to the nearest
/// pixel within twice the support radius when the window is empty.
pub fn interp_poly(cloud: &ProjectedCloud, site: (i64, i64), order: u8, cfg: &FitConfig) -> Result<f64> {
    let support = cloud.query_support(site.0, site.1, cfg.support_radius);
    match fit_poly_centered(&support, site, order, cfg) {
        Ok(model) => Ok(model.coeffs[0]),
        Err(Error::EmptySupport { .. }) => {
            let radius = 2.0 * cfg.support_radius;
            let wide = cloud.query_support(site.0, site.1, radius);
            interp_nn(&wide).map_err(|_| Error::EmptySupport {
                gx: site.0,
                gy: site.1,
                radius,
            })
        }
        Err(e) => Err(e),
    }
}

/// Per-site polynomial models over a whole HR grid.
#[derive(Clone, Debug)]
pub struct ModelField {
    width: usize,
    height: usize,
    order: u8,
    n_coeffs: usize,
    coeffs: Vec<f64>,
    fitted: Vec<bool>,
    support_std: Vec<f64>,
    flagged: Vec<bool>,
}

#[derive(Default)]
struct SiteFit {
    coeffs: Vec<f64>,
    fitted: bool,
    std: f64,
    flagged: bool,
}

/// Population standard deviation of the support values.
pub fn support_std(support: &[Neighbor]) -> f64 {
    if support.is_empty() {
        return 0.0;
    }
    let n = support.len() as f64;
    let mean = support.iter().map(|s| s.pixel.value).sum::<f64>() / n;
    (support.iter().map(|s| (s.pixel.value - mean).powi(2)).sum::<f64>() / n).sqrt()
}

impl ModelField {
    /// Fits one model per HR site (rows in parallel).
    pub fn fit(cloud: &ProjectedCloud, order: u8, cfg: &FitConfig) -> Result<Self> {
        check_order(order)?;
        cfg.validate()?;
        let (width, height) = (cloud.hr_width(), cloud.hr_height());
        let n_coeffs = coeff_count(order);
        let rows: Vec<Vec<SiteFit>> = (0..height)
            .into_par_iter()
            .map(|gy| {
                let mut buf = Vec::new();
                (0..width)
                    .map(|gx| {
                        let site = (gx as i64, gy as i64);
                        cloud.query_support_into(site.0, site.1, cfg.support_radius, &mut buf);
                        match fit_poly_centered(&buf, site, order, cfg) {
                            Ok(m) => SiteFit {
                                coeffs: m.coeffs,
                                fitted: true,
                                std: support_std(&buf),
                                flagged: m.condition_flag,
                            },
                            Err(_) => SiteFit {
                                coeffs: vec![0.0; n_coeffs],
                                ..Default::default()
                            },
                        }
                    })
                    .collect()
            })
            .collect();
        let mut field = ModelField {
            width,
            height,
            order,
            n_coeffs,
            coeffs: Vec::with_capacity(width * height * n_coeffs),
            fitted: Vec::with_capacity(width * height),
            support_std: Vec::with_capacity(width * height),
            flagged: Vec::with_capacity(width * height),
        };
        for site in rows.into_iter().flatten() {
            field.coeffs.extend_from_slice(&site.coeffs);
            field.fitted.push(site.fitted);
            field.support_std.push(site.std);
            field.flagged.push(site.flagged);
        }
        Ok(field)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn order(&self) -> u8 {
        self.order
    }

    pub fn n_coeffs(&self) -> usize {
        self.n_coeffs
    }

    /// Coefficients at a site, or `None` when its window was empty.
    pub fn coeffs(&self, gx: usize, gy: usize) -> Option<&[f64]> {
        let i = gy * self.width + gx;
        self.fitted[i].then(|| &self.coeffs[i * self.n_coeffs..(i + 1) * self.n_coeffs])
    }

    pub fn support_std(&self, gx: usize, gy: usize) -> f64 {
        self.support_std[gy * self.width + gx]
    }

    pub fn flagged_count(&self) -> usize {
        self.flagged.iter().filter(|&&f| f).count()
    }
}

/// Baseline interpolation schemes over a projected cloud.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Interpolator {
    Nearest,
    InverseDistance { radius: f64 },
    Polynomial(u8),
}

impl Interpolator {
    pub fn label(&self) -> String {
        match self {
            Interpolator::Nearest => "SEQ-NN".into(),
            Interpolator::InverseDistance { .. } => "IDW".into(),
            Interpolator::Polynomial(o) => format!("POLY{o}"),
        }
    }
}

/// An HR image plus the number of sites that needed a fallback value.
#[derive(Clone, Debug)]
pub struct Reconstruction {
    pub image: GrayImage,
    pub fallback_sites: usize,
}

/// Reconstructs every HR site with the given interpolator.
pub fn reconstruct(cloud: &ProjectedCloud, method: Interpolator, cfg: &FitConfig) -> Result<Reconstruction> {
    if cloud.is_empty() {
        return Err(Error::InvalidArgument("projected cloud is empty".into()));
    }
    let (w, h) = (cloud.hr_width(), cloud.hr_height());
    let (values, fallback): (Vec<f64>, usize) = match method {
        Interpolator::Polynomial(order) => {
            let field = ModelField::fit(cloud, order, cfg)?;
            let rows: Vec<Result<(Vec<f64>, usize)>> = (0..h)
                .into_par_iter()
                .map(|gy| {
                    let mut fb = 0;
                    let mut row = Vec::with_capacity(w);
                    for gx in 0..w {
                        match field.coeffs(gx, gy) {
                            Some(c) => row.push(c[0]),
                            None => {
                                fb += 1;
                                row.push(interp_poly(cloud, (gx as i64, gy as i64), order, cfg)?);
                            }
                        }
                    }
                    Ok((row, fb))
                })
                .collect();
            collect_rows(rows)?
        }
        Interpolator::Nearest | Interpolator::InverseDistance { .. } => {
            let rows: Vec<Result<(Vec<f64>, usize)>> = (0..h)
                .into_par_iter()
                .map(|gy| {
                    let mut fb = 0;
                    let mut row = Vec::with_capacity(w);
                    let mut buf = Vec::new();
                    for gx in 0..w {
                        let (sx, sy) = (gx as i64, gy as i64);
                        let value = match method {
                            Interpolator::InverseDistance { radius } => {
                                cloud.query_support_into(sx, sy, radius, &mut buf);
                                if buf.is_empty() {
                                    fb += 1;
                                    None
                                } else {
                                    Some(interp_idw(&buf)?)
                                }
                            }
                            _ => None,
                        };
                        let value = match value {
                            Some(v) => v,
                            None => cloud.nearest(sx, sy).expect("cloud is non-empty").pixel.value,
                        };
                        row.push(value);
                    }
                    Ok((row, fb))
                })
                .collect();
            collect_rows(rows)?
        }
    };
    Ok(Reconstruction {
        image: GrayImage::new(w, h, values)?,
        fallback_sites: fallback,
    })
}

fn collect_rows(rows: Vec<Result<(Vec<f64>, usize)>>) -> Result<(Vec<f64>, usize)> {
    let mut values = Vec::new();
    let mut fallback = 0;
    for r in rows {
        let (row, fb) = r?;
        values.extend(row);
        fallback += fb;
    }
    Ok((values, fallback))
}
