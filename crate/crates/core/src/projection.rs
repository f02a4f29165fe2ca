//! Projection of LR sequence pixels onto the HR grid.
//!
//! LR pixel `(i, j)` of a frame with transform `t` lands at
//! `x = scale * (j - tx) + (scale - 1) / 2`, `y = scale * (i - ty) + (scale - 1) / 2`:
//! the scene point seen by that pixel, expressed in HR pixel coordinates with
//! LR pixel centers at the centroid of their `scale x scale` HR block.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::registration::Transform;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProjectedPixel {
    pub x: f64,
    pub y: f64,
    pub value: f64,
    pub frame: u32,
    pub lr_row: u32,
    pub lr_col: u32,
}

impl ProjectedPixel {
    fn source_key(&self) -> (u32, u32, u32) {
        (self.frame, self.lr_row, self.lr_col)
    }
}

/// A projected pixel together with its distance to the queried site.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor {
    pub pixel: ProjectedPixel,
    pub distance: f64,
}

/// Total order used for every support list: distance, then source frame,
/// then LR position.
pub fn neighbor_order(a: &Neighbor, b: &Neighbor) -> Ordering {
    a.distance
        .total_cmp(&b.distance)
        .then_with(|| a.pixel.source_key().cmp(&b.pixel.source_key()))
}

/// Projected pixels bucketed by nearest HR site.
///
/// Pixels are stored bin-major; within a bin they keep projection order
/// (frame, then row-major LR position).
#[derive(Clone, Debug)]
pub struct ProjectedCloud {
    pixels: Vec<ProjectedPixel>,
    bin_offsets: Vec<usize>,
    hr_width: usize,
    hr_height: usize,
    dropped: usize,
}

/// HR site whose cell `[g - 0.5, g + 0.5)` contains `coord`.
#[inline]
fn bin_coord(coord: f64) -> i64 {
    (coord + 0.5).floor() as i64
}

/// Maps an LR pixel of a frame with transform `t` to HR coordinates.
#[inline]
pub fn project_point(row: usize, col: usize, t: Transform, scale: usize) -> (f64, f64) {
    let s = scale as f64;
    let offset = (s - 1.0) / 2.0;
    (s * (col as f64 - t.tx) + offset, s * (row as f64 - t.ty) + offset)
}

impl ProjectedCloud {
    /// Builds a cloud directly from pixels on an HR grid of the given size.
    pub fn from_pixels(pixels: Vec<ProjectedPixel>, hr_width: usize, hr_height: usize) -> Self {
        let n_bins = hr_width * hr_height;
        let mut counts = vec![0usize; n_bins + 1];
        let mut kept = Vec::with_capacity(pixels.len());
        let mut dropped = 0;
        for p in pixels {
            let (bx, by) = (bin_coord(p.x), bin_coord(p.y));
            let inside = p.x.is_finite()
                && p.y.is_finite()
                && (0..hr_width as i64).contains(&bx)
                && (0..hr_height as i64).contains(&by);
            if inside {
                let bin = by as usize * hr_width + bx as usize;
                counts[bin + 1] += 1;
                kept.push((bin, p));
            } else {
                dropped += 1;
            }
        }
        for i in 1..=n_bins {
            counts[i] += counts[i - 1];
        }
        let bin_offsets = counts.clone();
        let mut cursor = counts;
        let mut sorted = vec![
            ProjectedPixel {
                x: 0.0,
                y: 0.0,
                value: 0.0,
                frame: 0,
                lr_row: 0,
                lr_col: 0
            };
            kept.len()
        ];
        for (bin, p) in kept {
            sorted[cursor[bin]] = p;
            cursor[bin] += 1;
        }
        ProjectedCloud {
            pixels: sorted,
            bin_offsets,
            hr_width,
            hr_height,
            dropped,
        }
    }

    pub fn hr_width(&self) -> usize {
        self.hr_width
    }

    pub fn hr_height(&self) -> usize {
        self.hr_height
    }

    /// Number of pixels that fell outside the HR frame and were discarded.
    pub fn dropped(&self) -> usize {
        self.dropped
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    /// All retained pixels, bin-major.
    pub fn pixels(&self) -> &[ProjectedPixel] {
        &self.pixels
    }

    /// Pixels whose nearest HR site is `(gx, gy)`.
    pub fn bin(&self, gx: usize, gy: usize) -> &[ProjectedPixel] {
        let b = gy * self.hr_width + gx;
        &self.pixels[self.bin_offsets[b]..self.bin_offsets[b + 1]]
    }

    /// Appends every pixel within `radius` of `(gx, gy)` to `out`, unsorted.
    pub fn collect_within(&self, gx: i64, gy: i64, radius: f64, out: &mut Vec<Neighbor>) {
        // A pixel in bin b lies within half a pixel of b on each axis.
        let reach = (radius + 0.5).ceil() as i64;
        let x_lo = (gx - reach).max(0);
        let x_hi = (gx + reach).min(self.hr_width as i64 - 1);
        let y_lo = (gy - reach).max(0);
        let y_hi = (gy + reach).min(self.hr_height as i64 - 1);
        if x_lo > x_hi || y_lo > y_hi {
            return;
        }
        let (sx, sy) = (gx as f64, gy as f64);
        let r2 = radius * radius;
        for by in y_lo..=y_hi {
            let row = by as usize * self.hr_width;
            let start = self.bin_offsets[row + x_lo as usize];
            let end = self.bin_offsets[row + x_hi as usize + 1];
            for p in &self.pixels[start..end] {
                let dx = p.x - sx;
                let dy = p.y - sy;
                let d2 = dx * dx + dy * dy;
                if d2 <= r2 {
                    out.push(Neighbor {
                        pixel: *p,
                        distance: d2.sqrt(),
                    });
                }
            }
        }
    }

    /// Every projected pixel within `radius` (inclusive) of the site,
    /// sorted by [`neighbor_order`].
    pub fn query_support(&self, gx: i64, gy: i64, radius: f64) -> Vec<Neighbor> {
        let mut out = Vec::new();
        self.query_support_into(gx, gy, radius, &mut out);
        out
    }

    /// Like [`query_support`](Self::query_support), reusing `out`'s allocation.
    pub fn query_support_into(&self, gx: i64, gy: i64, radius: f64, out: &mut Vec<Neighbor>) {
        out.clear();
        if !(radius > 0.0) {
            return;
        }
        self.collect_within(gx, gy, radius, out);
        out.sort_unstable_by(neighbor_order);
    }

    /// Nearest projected pixel to the site, widening the search until one is
    /// found. `None` only for an empty cloud.
    pub fn nearest(&self, gx: i64, gy: i64) -> Option<Neighbor> {
        if self.pixels.is_empty() {
            return None;
        }
        let max_r = (self.hr_width + self.hr_height) as f64 + 2.0;
        let mut r = 1.0;
        let mut buf = Vec::new();
        loop {
            buf.clear();
            self.collect_within(gx, gy, r, &mut buf);
            if let Some(best) = buf.iter().min_by(|a, b| neighbor_order(a, b)) {
                return Some(*best);
            }
            if r > max_r {
                return None;
            }
            r *= 2.0;
        }
    }
}

/// Places every pixel of every frame on the HR grid using its frame's
/// transform.
pub fn project_sequence(frames: &[GrayImage], transforms: &[Transform], scale: usize) -> Result<ProjectedCloud> {
    if frames.len() != transforms.len() {
        return Err(Error::dims(
            format!("{} transforms", frames.len()),
            format!("{} transforms", transforms.len()),
        ));
    }
    if scale == 0 {
        return Err(Error::InvalidArgument("scale must be at least 1".into()));
    }
    let Some(first) = frames.first() else {
        return Err(Error::InvalidArgument("cannot project an empty sequence".into()));
    };
    let (w, h) = first.dims();
    if let Some((k, f)) = frames.iter().enumerate().find(|(_, f)| f.dims() != (w, h)) {
        return Err(Error::Frame {
            index: k,
            source: Box::new(Error::dims(format!("{w}x{h}"), format!("{}x{}", f.width(), f.height()))),
        });
    }
    let mut pixels = Vec::with_capacity(frames.len() * w * h);
    for (k, (frame, &t)) in frames.iter().zip(transforms).enumerate() {
        for i in 0..h {
            for j in 0..w {
                let (x, y) = project_point(i, j, t, scale);
                pixels.push(ProjectedPixel {
                    x,
                    y,
                    value: frame.get(j, i),
                    frame: k as u32,
                    lr_row: i as u32,
                    lr_col: j as u32,
                });
            }
        }
    }
    Ok(ProjectedCloud::from_pixels(pixels, w * scale, h * scale))
}
