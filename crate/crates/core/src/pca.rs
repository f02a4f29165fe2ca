//! Principal component analysis of neighborhood coefficient patches.
//!
//! A patch concatenates the order-2 coefficients of every site in a `w x w`
//! neighborhood (sites row-major, six coefficients per site in basis order).

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::linalg::symmetric_eigen;
use crate::pgm::save_pgm;

/// Coefficients per site of an order-2 model.
pub const SITE_COEFFS: usize = 6;

#[derive(Clone, Debug, PartialEq)]
pub struct CoeffPatch(Vec<f64>);

impl CoeffPatch {
    pub fn new(values: Vec<f64>) -> Self {
        CoeffPatch(values)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl From<Vec<f64>> for CoeffPatch {
    fn from(v: Vec<f64>) -> Self {
        CoeffPatch(v)
    }
}

pub fn patch_len(window: usize) -> usize {
    SITE_COEFFS * window * window
}

#[derive(Clone, Debug, PartialEq)]
pub struct EigenBasis {
    dim: usize,
    mean: Vec<f64>,
    eigenvalues: Vec<f64>,
    /// Eigenvectors stored contiguously, one after another.
    eigenvectors: Vec<f64>,
    n_samples: usize,
}

impl EigenBasis {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    /// The `k`-th eigenvector (unit norm), paired with `eigenvalues()[k]`.
    pub fn eigenvector(&self, k: usize) -> &[f64] {
        &self.eigenvectors[k * self.dim..(k + 1) * self.dim]
    }

    fn check_k(&self, k: usize) -> Result<()> {
        if k == 0 || k > self.dim {
            return Err(Error::InvalidArgument(format!(
                "component count {k} outside 1..={}",
                self.dim
            )));
        }
        Ok(())
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.dim {
            return Err(Error::dims(format!("patch of length {}", self.dim), format!("length {len}")));
        }
        Ok(())
    }
}

/// Flips each vector so its largest-magnitude entry (lowest index on ties)
/// is positive.
fn normalize_sign(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Sample mean and covariance (divisor n - 1), accumulated in fixed-size
/// chunks so the result does not depend on thread count.
fn mean_and_covariance(samples: &[CoeffPatch], dim: usize) -> (Vec<f64>, Vec<f64>) {
    const CHUNK: usize = 2048;
    let n = samples.len() as f64;
    let partial_sums: Vec<Vec<f64>> = samples
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut s = vec![0.0; dim];
            for p in chunk {
                for (a, b) in s.iter_mut().zip(p.as_slice()) {
                    *a += b;
                }
            }
            s
        })
        .collect();
    let mut mean = vec![0.0; dim];
    for s in &partial_sums {
        for (m, v) in mean.iter_mut().zip(s) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);

    let partial_cov: Vec<Vec<f64>> = samples
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut c = vec![0.0; dim * dim];
            let mut centered = vec![0.0; dim];
            for p in chunk {
                for ((d, v), m) in centered.iter_mut().zip(p.as_slice()).zip(&mean) {
                    *d = v - m;
                }
                for i in 0..dim {
                    let ci = centered[i];
                    if ci == 0.0 {
                        continue;
                    }
                    let row = &mut c[i * dim..i * dim + dim];
                    for j in i..dim {
                        row[j] += ci * centered[j];
                    }
                }
            }
            c
        })
        .collect();
    let mut cov = vec![0.0; dim * dim];
    for c in &partial_cov {
        for (a, b) in cov.iter_mut().zip(c) {
            *a += b;
        }
    }
    let denom = n - 1.0;
    for i in 0..dim {
        for j in i..dim {
            let v = cov[i * dim + j] / denom;
            cov[i * dim + j] = v;
            cov[j * dim + i] = v;
        }
    }
    (mean, cov)
}

/// Fits the PCA basis: sample mean plus eigenvectors of the sample
/// covariance, sorted by non-increasing eigenvalue.
pub fn fit_pca(samples: &[CoeffPatch]) -> Result<EigenBasis> {
    if samples.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "PCA needs at least 2 samples, got {}",
            samples.len()
        )));
    }
    let dim = samples[0].len();
    if dim == 0 {
        return Err(Error::InvalidArgument("patches are empty".into()));
    }
    if let Some(p) = samples.iter().find(|p| p.len() != dim) {
        return Err(Error::dims(format!("patches of length {dim}"), format!("length {}", p.len())));
    }
    let (mean, cov) = mean_and_covariance(samples, dim);
    let (values, vectors) = symmetric_eigen(&cov, dim);

    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));

    let mut eigenvalues = Vec::with_capacity(dim);
    let mut eigenvectors = Vec::with_capacity(dim * dim);
    for &k in &order {
        eigenvalues.push(values[k].max(0.0));
        let mut v: Vec<f64> = (0..dim).map(|i| vectors[i * dim + k]).collect();
        normalize_sign(&mut v);
        eigenvectors.extend(v);
    }
    Ok(EigenBasis {
        dim,
        mean,
        eigenvalues,
        eigenvectors,
        n_samples: samples.len(),
    })
}

/// Coordinates of `patch - mean` on the first `k` eigenvectors.
pub fn project(basis: &EigenBasis, patch: &CoeffPatch, k: usize) -> Result<Vec<f64>> {
    basis.check_k(k)?;
    basis.check_len(patch.len())?;
    let mut out = vec![0.0; k];
    project_into(basis, patch.as_slice(), &mut out);
    Ok(out)
}

/// Unchecked projection onto `out.len()` components.
pub(crate) fn project_into(basis: &EigenBasis, patch: &[f64], out: &mut [f64]) {
    for (j, o) in out.iter_mut().enumerate() {
        *o = basis
            .eigenvector(j)
            .iter()
            .zip(patch)
            .zip(&basis.mean)
            .map(|((u, p), m)| u * (p - m))
            .sum();
    }
}

/// `mean + sum_j coords[j] * eigenvector_j`.
pub fn reconstruct(basis: &EigenBasis, coords: &[f64]) -> Result<CoeffPatch> {
    basis.check_k(coords.len().max(1))?;
    let mut out = basis.mean.clone();
    for (j, c) in coords.iter().enumerate() {
        for (o, u) in out.iter_mut().zip(basis.eigenvector(j)) {
            *o += c * u;
        }
    }
    Ok(CoeffPatch(out))
}

/// Fraction of total variance carried by the first `k` components.
/// A basis with zero total variance reports 1.0.
pub fn explained_variance(basis: &EigenBasis, k: usize) -> Result<f64> {
    basis.check_k(k)?;
    let mut partial = 0.0;
    let mut total = 0.0;
    for (j, &l) in basis.eigenvalues.iter().enumerate() {
        total += l;
        if j + 1 == k {
            partial = total;
        }
    }
    if total == 0.0 {
        return Ok(1.0);
    }
    Ok(partial / total)
}

/// Tiles the first `m` eigenvectors as images: one row of tiles per
/// eigenvector, one `w x w` tile per coefficient channel.
pub fn eigenimage_tiles(basis: &EigenBasis, m: usize, window: usize) -> Result<GrayImage> {
    if window == 0 || basis.dim != patch_len(window) {
        return Err(Error::dims(format!("basis of dim 6*w^2 for w={window}"), format!("dim {}", basis.dim)));
    }
    basis.check_k(m)?;
    let mut img = GrayImage::filled(SITE_COEFFS * window, m * window, 0.0);
    for k in 0..m {
        let v = basis.eigenvector(k);
        let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for (idx, &val) in v.iter().enumerate() {
            let site = idx / SITE_COEFFS;
            let channel = idx % SITE_COEFFS;
            let (r, c) = (site / window, site % window);
            let gray = if hi > lo { (val - lo) / (hi - lo) * 255.0 } else { 128.0 };
            img.set(channel * window + c, k * window + r, gray);
        }
    }
    Ok(img)
}

pub fn export_eigenimages(basis: &EigenBasis, m: usize, window: usize, path: impl AsRef<Path>) -> Result<()> {
    save_pgm(&eigenimage_tiles(basis, m, window)?, path)
}

const MAGIC: &str = "SRPCA 1";

fn join(values: &[f64]) -> String {
    values.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(" ")
}

pub fn write_basis(basis: &EigenBasis, mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "{MAGIC}")?;
    writeln!(out, "{}", basis.dim)?;
    writeln!(out, "{}", basis.n_samples)?;
    writeln!(out, "{}", join(&basis.mean))?;
    for k in 0..basis.dim {
        writeln!(out, "{:?} {}", basis.eigenvalues[k], join(basis.eigenvector(k)))?;
    }
    Ok(())
}

fn parse_err(field: &'static str, detail: impl Into<String>) -> Error {
    Error::Format {
        format: "SRPCA",
        field,
        detail: detail.into(),
    }
}

pub(crate) fn parse_floats(line: &str, field: &'static str, fmt: &'static str) -> Result<Vec<f64>> {
    line.split_whitespace()
        .map(|t| {
            t.parse::<f64>().map_err(|_| Error::Format {
                format: fmt,
                field,
                detail: format!("not a number: {t:?}"),
            })
        })
        .collect()
}

pub fn read_basis(input: impl BufRead) -> Result<EigenBasis> {
    let mut lines = input.lines();
    let mut next = |field: &'static str| -> Result<String> {
        match lines.next() {
            Some(Ok(l)) => Ok(l),
            Some(Err(e)) => Err(parse_err(field, e.to_string())),
            None => Err(parse_err(field, "unexpected end of file")),
        }
    };
    if next("header")?.trim() != MAGIC {
        return Err(parse_err("header", format!("expected {MAGIC:?}")));
    }
    let dim: usize = next("dim")?.trim().parse().map_err(|_| parse_err("dim", "not an integer"))?;
    let n_samples: usize = next("n_samples")?
        .trim()
        .parse()
        .map_err(|_| parse_err("n_samples", "not an integer"))?;
    let mean = parse_floats(&next("mean")?, "mean", "SRPCA")?;
    if mean.len() != dim {
        return Err(parse_err("mean", format!("expected {dim} values, found {}", mean.len())));
    }
    let mut eigenvalues = Vec::with_capacity(dim);
    let mut eigenvectors = Vec::with_capacity(dim * dim);
    for _ in 0..dim {
        let row = parse_floats(&next("eigenpair")?, "eigenpair", "SRPCA")?;
        if row.len() != dim + 1 {
            return Err(parse_err("eigenpair", format!("expected {} values, found {}", dim + 1, row.len())));
        }
        eigenvalues.push(row[0]);
        eigenvectors.extend_from_slice(&row[1..]);
    }
    Ok(EigenBasis {
        dim,
        mean,
        eigenvalues,
        eigenvectors,
        n_samples,
    })
}

pub fn save_basis(basis: &EigenBasis, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_basis(basis, &mut buf).expect("writing to memory");
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_basis(path: impl AsRef<Path>) -> Result<EigenBasis> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_basis(BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_samples(seed: u64, n: usize, dim: usize) -> Vec<CoeffPatch> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Correlated data: random mixing of independent sources with decaying scale.
        let mix: Vec<f64> = (0..dim * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        (0..n)
            .map(|_| {
                let src: Vec<f64> = (0..dim).map(|i| rng.random_range(-1.0..1.0) / (1.0 + i as f64)).collect();
                CoeffPatch((0..dim).map(|r| (0..dim).map(|c| mix[r * dim + c] * src[c]).sum::<f64>() + 3.0).collect())
            })
            .collect()
    }

    fn direct_covariance(samples: &[CoeffPatch]) -> (Vec<f64>, Vec<f64>) {
        let dim = samples[0].len();
        let n = samples.len() as f64;
        let mean: Vec<f64> = (0..dim).map(|i| samples.iter().map(|s| s.0[i]).sum::<f64>() / n).collect();
        let mut cov = vec![0.0; dim * dim];
        for i in 0..dim {
            for j in 0..dim {
                cov[i * dim + j] =
                    samples.iter().map(|s| (s.0[i] - mean[i]) * (s.0[j] - mean[j])).sum::<f64>() / (n - 1.0);
            }
        }
        (mean, cov)
    }

    #[test]
    fn identical_samples_have_zero_spectrum() {
        let p = CoeffPatch(vec![1.0, -2.0, 5.0]);
        let basis = fit_pca(&[p.clone(), p.clone(), p.clone()]).unwrap();
        assert_eq!(basis.mean(), p.as_slice());
        assert!(basis.eigenvalues().iter().all(|&l| l == 0.0));
        assert_eq!(explained_variance(&basis, 1).unwrap(), 1.0);
    }

    #[test]
    fn line_data_has_one_component() {
        let samples: Vec<CoeffPatch> = [-2.0, -1.0, 0.5, 3.0]
            .iter()
            .map(|&t| CoeffPatch(vec![1.0 + t, 2.0 + t]))
            .collect();
        let basis = fit_pca(&samples).unwrap();
        let u = basis.eigenvector(0);
        let r = 0.5f64.sqrt();
        assert!((u[0] - r).abs() < 1e-12 && (u[1] - r).abs() < 1e-12, "{u:?}");
        assert!(basis.eigenvalues()[1].abs() < 1e-12);
        assert!((explained_variance(&basis, 1).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn covariance_reconstructs_from_spectrum() {
        let samples = random_samples(9, 400, 54);
        let basis = fit_pca(&samples).unwrap();
        let (_, cov) = direct_covariance(&samples);
        let dim = 54;
        let mut diff = 0.0;
        let mut norm = 0.0;
        for i in 0..dim {
            for j in 0..dim {
                let rec: f64 = (0..dim)
                    .map(|k| basis.eigenvalues()[k] * basis.eigenvector(k)[i] * basis.eigenvector(k)[j])
                    .sum();
                diff += (rec - cov[i * dim + j]).powi(2);
                norm += cov[i * dim + j].powi(2);
            }
        }
        assert!((diff / norm).sqrt() < 1e-8);
        let trace: f64 = (0..dim).map(|i| cov[i * dim + i]).sum();
        let total: f64 = basis.eigenvalues().iter().sum();
        assert!(((total - trace) / trace).abs() < 1e-8);
    }

    #[test]
    fn basis_invariants() {
        let samples = random_samples(5, 300, 24);
        let basis = fit_pca(&samples).unwrap();
        let dim = basis.dim();
        for w in basis.eigenvalues().windows(2) {
            assert!(w[0] >= w[1]);
        }
        for i in 0..dim {
            let v = basis.eigenvector(i);
            let big = v.iter().cloned().fold(0.0f64, |a, x| a.max(x.abs()));
            assert!(v.contains(&big), "largest entry must be positive");
            for j in 0..dim {
                let d: f64 = v.iter().zip(basis.eigenvector(j)).map(|(a, b)| a * b).sum();
                let target = if i == j { 1.0 } else { 0.0 };
                assert!((d - target).abs() < 1e-9);
            }
        }
        assert_eq!(explained_variance(&basis, dim).unwrap(), 1.0);
        assert_eq!(fit_pca(&samples).unwrap(), basis);
    }

    #[test]
    fn projection_examples() {
        let samples = random_samples(3, 100, 6);
        let basis = fit_pca(&samples).unwrap();
        let mean = CoeffPatch(basis.mean().to_vec());
        assert!(project(&basis, &mean, 6).unwrap().iter().all(|&c| c.abs() < 1e-15));
        let shifted = CoeffPatch(basis.mean().iter().zip(basis.eigenvector(0)).map(|(m, u)| m + u).collect());
        let c = project(&basis, &shifted, 3).unwrap();
        assert!((c[0] - 1.0).abs() < 1e-12 && c[1].abs() < 1e-12 && c[2].abs() < 1e-12);
        assert_eq!(reconstruct(&basis, &[0.0, 0.0]).unwrap(), mean);

        let p = &samples[17];
        let full = reconstruct(&basis, &project(&basis, p, 6).unwrap()).unwrap();
        for (a, b) in full.as_slice().iter().zip(p.as_slice()) {
            assert!((a - b).abs() < 1e-9);
        }
        let mut last = f64::INFINITY;
        for k in 1..=6 {
            let rec = reconstruct(&basis, &project(&basis, p, k).unwrap()).unwrap();
            let err: f64 = rec.as_slice().iter().zip(p.as_slice()).map(|(a, b)| (a - b).powi(2)).sum();
            assert!(err <= last + 1e-12);
            last = err;
        }
    }

    #[test]
    fn argument_errors() {
        let basis = fit_pca(&random_samples(1, 10, 4)).unwrap();
        let p = CoeffPatch(vec![0.0; 4]);
        assert!(project(&basis, &p, 0).is_err());
        assert!(project(&basis, &p, 5).is_err());
        assert!(project(&basis, &CoeffPatch(vec![0.0; 3]), 2).is_err());
        assert!(reconstruct(&basis, &[0.0; 5]).is_err());
        assert!(explained_variance(&basis, 0).is_err());
        assert!(fit_pca(std::slice::from_ref(&p)).is_err());
        assert!(fit_pca(&[p, CoeffPatch(vec![0.0; 3])]).is_err());
    }

    #[test]
    fn eigenimage_layout() {
        let basis = fit_pca(&random_samples(2, 200, 54)).unwrap();
        let img = eigenimage_tiles(&basis, 5, 3).unwrap();
        assert_eq!(img.dims(), (18, 15));
        assert!(eigenimage_tiles(&basis, 1, 5).is_err());

        // Constant eigenvector maps to mid-gray.
        let flat = EigenBasis {
            dim: 54,
            mean: vec![0.0; 54],
            eigenvalues: vec![1.0; 54],
            eigenvectors: vec![1.0 / 54f64.sqrt(); 54 * 54],
            n_samples: 2,
        };
        let img = eigenimage_tiles(&flat, 1, 3).unwrap();
        assert!(img.pixels().iter().all(|&v| v == 128.0));

        // Entry (site 4, channel 2) of a one-hot vector lands at tile column 2, center pixel.
        let mut one_hot = flat.clone();
        one_hot.eigenvectors[..54].iter_mut().for_each(|v| *v = 0.0);
        one_hot.eigenvectors[4 * 6 + 2] = 1.0;
        let img = eigenimage_tiles(&one_hot, 1, 3).unwrap();
        assert_eq!(img.get(2 * 3 + 1, 1), 255.0);
        assert_eq!(img.pixels().iter().filter(|&&v| v == 255.0).count(), 1);
    }

    #[test]
    fn text_roundtrip_is_exact() {
        let basis = fit_pca(&random_samples(8, 50, 12)).unwrap();
        let mut buf = Vec::new();
        write_basis(&basis, &mut buf).unwrap();
        assert!(buf.starts_with(b"SRPCA 1\n12\n50\n"));
        assert_eq!(read_basis(&buf[..]).unwrap(), basis);
        assert!(read_basis(&b"SRPCA 2\n"[..]).is_err());
        assert!(read_basis(&b"SRPCA 1\n2\n3\n0 0\n1 1 0\n"[..]).is_err());
    }

    proptest! {
        #[test]
        fn full_projection_is_isometry(seed in any::<u64>()) {
            let samples = random_samples(seed, 40, 8);
            let basis = fit_pca(&samples).unwrap();
            let p = &samples[0];
            let c = project(&basis, p, 8).unwrap();
            let n1: f64 = c.iter().map(|x| x * x).sum::<f64>().sqrt();
            let n2: f64 = p.as_slice().iter().zip(basis.mean()).map(|(a, m)| (a - m).powi(2)).sum::<f64>().sqrt();
            prop_assert!((n1 - n2).abs() < 1e-9);
        }
    }
}
