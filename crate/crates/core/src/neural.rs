//! Two-layer perceptron (10 tanh hidden units, linear output) regressing the
//! normalized HR pixel from PCA coordinates, trained with Polak-Ribiere
//! nonlinear conjugate gradient.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::pca::{parse_floats, CoeffPatch, SITE_COEFFS};

pub const HIDDEN: usize = 10;

/// Floor on the normalization spread, in gray levels.
pub const S_MIN: f64 = 1.0;

#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    pub k_in: usize,
    /// `HIDDEN x k_in`, row-major.
    pub w1: Vec<f64>,
    pub b1: [f64; HIDDEN],
    pub w2: [f64; HIDDEN],
    pub b2: f64,
}

impl MlpParams {
    pub fn zeros(k_in: usize) -> Self {
        MlpParams {
            k_in,
            w1: vec![0.0; HIDDEN * k_in],
            b1: [0.0; HIDDEN],
            w2: [0.0; HIDDEN],
            b2: 0.0,
        }
    }

    pub fn param_count(&self) -> usize {
        HIDDEN * self.k_in + 2 * HIDDEN + 1
    }

    /// Flattening order: W1 row-major, b1, w2, b2.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.param_count());
        v.extend_from_slice(&self.w1);
        v.extend_from_slice(&self.b1);
        v.extend_from_slice(&self.w2);
        v.push(self.b2);
        v
    }

    pub fn from_flat(k_in: usize, flat: &[f64]) -> Result<Self> {
        let mut p = MlpParams::zeros(k_in);
        if flat.len() != p.param_count() {
            return Err(Error::dims(p.param_count(), flat.len()));
        }
        let n1 = HIDDEN * k_in;
        p.w1.copy_from_slice(&flat[..n1]);
        p.b1.copy_from_slice(&flat[n1..n1 + HIDDEN]);
        p.w2.copy_from_slice(&flat[n1 + HIDDEN..n1 + 2 * HIDDEN]);
        p.b2 = flat[n1 + 2 * HIDDEN];
        Ok(p)
    }
}

/// Per-sample affine normalization: `normalized = (value - mu) / s`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormContext {
    pub mu: f64,
    pub s: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSample {
    pub input: Vec<f64>,
    pub target: f64,
    pub ctx: NormContext,
}

/// Normalizes a coefficient patch by the neighborhood's mean DC level and the
/// spread of the central site's support values.
///
/// The DC entries (every sixth value) are centered on `mu`; all entries are
/// then divided by `s = max(std(support), S_MIN)`.
pub fn normalize(
    patch: &CoeffPatch,
    support_values: &[f64],
    target: Option<f64>,
) -> Result<(CoeffPatch, Option<f64>, NormContext)> {
    if support_values.is_empty() {
        return Err(Error::InvalidArgument("normalization needs a non-empty support".into()));
    }
    let n = support_values.len() as f64;
    let mean = support_values.iter().sum::<f64>() / n;
    let std = (support_values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let (out, ctx) = normalize_with_spread(patch, std)?;
    Ok((out, target.map(|t| (t - ctx.mu) / ctx.s), ctx))
}

/// [`normalize`] with the support spread already computed.
pub fn normalize_with_spread(patch: &CoeffPatch, support_std: f64) -> Result<(CoeffPatch, NormContext)> {
    if patch.is_empty() || !patch.len().is_multiple_of(SITE_COEFFS) {
        return Err(Error::InvalidArgument(format!(
            "patch length {} is not a positive multiple of {SITE_COEFFS}",
            patch.len()
        )));
    }
    let sites = patch.len() / SITE_COEFFS;
    let mu = patch.as_slice().iter().step_by(SITE_COEFFS).sum::<f64>() / sites as f64;
    let s = support_std.max(S_MIN);
    let mut out = patch.clone();
    for (i, v) in out.as_mut_slice().iter_mut().enumerate() {
        if i % SITE_COEFFS == 0 {
            *v -= mu;
        }
        *v /= s;
    }
    Ok((out, NormContext { mu, s }))
}

pub fn denormalize(yhat: f64, ctx: NormContext) -> f64 {
    yhat * ctx.s + ctx.mu
}

#[inline]
fn forward_unchecked(p: &MlpParams, x: &[f64], hidden: &mut [f64; HIDDEN]) -> f64 {
    let mut y = p.b2;
    for h in 0..HIDDEN {
        let row = &p.w1[h * p.k_in..(h + 1) * p.k_in];
        let a = p.b1[h] + row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>();
        hidden[h] = a.tanh();
        y += p.w2[h] * hidden[h];
    }
    y
}

/// `w2 . tanh(W1 x + b1) + b2`.
pub fn forward(params: &MlpParams, x: &[f64]) -> Result<f64> {
    if x.len() != params.k_in {
        return Err(Error::dims(params.k_in, x.len()));
    }
    let mut hidden = [0.0; HIDDEN];
    Ok(forward_unchecked(params, x, &mut hidden))
}

const CHUNK: usize = 1024;

fn check_samples(params: &MlpParams, samples: &[TrainingSample]) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    if let Some(s) = samples.iter().find(|s| s.input.len() != params.k_in) {
        return Err(Error::dims(params.k_in, s.input.len()));
    }
    Ok(())
}

/// Mean squared error only; chunked sums in fixed order.
fn loss_only(params: &MlpParams, samples: &[TrainingSample]) -> f64 {
    let partial: Vec<f64> = samples
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut hidden = [0.0; HIDDEN];
            chunk
                .iter()
                .map(|s| {
                    let e = forward_unchecked(params, &s.input, &mut hidden) - s.target;
                    e * e
                })
                .sum::<f64>()
        })
        .collect();
    partial.iter().sum::<f64>() / samples.len() as f64
}

fn loss_grad_unchecked(params: &MlpParams, samples: &[TrainingSample]) -> (f64, Vec<f64>) {
    let k = params.k_in;
    let n_params = params.param_count();
    let partial: Vec<(f64, Vec<f64>)> = samples
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut grad = vec![0.0; n_params];
            let mut loss = 0.0;
            let mut hidden = [0.0; HIDDEN];
            let (gw1, rest) = grad.split_at_mut(HIDDEN * k);
            let (gb1, rest) = rest.split_at_mut(HIDDEN);
            let (gw2, gb2) = rest.split_at_mut(HIDDEN);
            for s in chunk {
                let e = forward_unchecked(params, &s.input, &mut hidden) - s.target;
                loss += e * e;
                gb2[0] += e;
                for h in 0..HIDDEN {
                    gw2[h] += e * hidden[h];
                    let delta = e * params.w2[h] * (1.0 - hidden[h] * hidden[h]);
                    gb1[h] += delta;
                    for (g, xi) in gw1[h * k..(h + 1) * k].iter_mut().zip(&s.input) {
                        *g += delta * xi;
                    }
                }
            }
            (loss, grad)
        })
        .collect();
    let mut loss = 0.0;
    let mut grad = vec![0.0; n_params];
    for (l, g) in &partial {
        loss += l;
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
    }
    let n = samples.len() as f64;
    grad.iter_mut().for_each(|g| *g *= 2.0 / n);
    (loss / n, grad)
}

/// Mean squared error over the samples and its exact gradient in the
/// [`MlpParams::to_flat`] order.
pub fn loss_and_grad(params: &MlpParams, samples: &[TrainingSample]) -> Result<(f64, Vec<f64>)> {
    check_samples(params, samples)?;
    Ok(loss_grad_unchecked(params, samples))
}

/// Uniform `[-a, a]` weights with `a = 1/sqrt(fan_in)` per layer; zero biases.
pub fn init_weights(k_in: usize, seed: u64) -> MlpParams {
    assert!(k_in >= 1, "network needs at least one input");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = MlpParams::zeros(k_in);
    let a1 = 1.0 / (k_in as f64).sqrt();
    p.w1.iter_mut().for_each(|w| *w = rng.random_range(-a1..=a1));
    let a2 = 1.0 / (HIDDEN as f64).sqrt();
    p.w2.iter_mut().for_each(|w| *w = rng.random_range(-a2..=a2));
    p
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub max_iters: usize,
    /// Stop when the largest gradient component falls below this.
    pub grad_tol: f64,
    pub seed: u64,
    /// Iterations between forced steepest-descent restarts; `None` means the
    /// parameter count.
    pub restart_interval: Option<usize>,
    pub armijo_c: f64,
    pub backtrack: f64,
    pub max_halvings: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_iters: 500,
            grad_tol: 1e-6,
            seed: 0,
            restart_interval: None,
            armijo_c: 1e-4,
            backtrack: 0.5,
            max_halvings: 40,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    GradientTolerance,
    MaxIterations,
    LineSearchFailed,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: MlpParams,
    /// Loss at the start and after every accepted step.
    pub history: Vec<f64>,
    pub iterations: usize,
    pub stop: StopReason,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Full-batch Polak-Ribiere conjugate gradient with an Armijo backtracking
/// line search.
///
/// The search direction resets to steepest descent every
/// `restart_interval` iterations and whenever the PR coefficient turns
/// negative. A failed line search triggers one steepest-descent retry; a
/// second consecutive failure ends training.
pub fn train_cg(init: &MlpParams, samples: &[TrainingSample], cfg: &TrainConfig) -> Result<TrainOutcome> {
    check_samples(init, samples)?;
    if cfg.max_iters == 0 || !(cfg.grad_tol > 0.0) || !(cfg.armijo_c > 0.0 && cfg.armijo_c < 1.0) {
        return Err(Error::InvalidArgument(format!("invalid training configuration: {cfg:?}")));
    }
    if !(cfg.backtrack > 0.0 && cfg.backtrack < 1.0) || cfg.max_halvings == 0 {
        return Err(Error::InvalidArgument(format!("invalid line search settings: {cfg:?}")));
    }
    let k = init.k_in;
    let restart_interval = cfg.restart_interval.unwrap_or(init.param_count()).max(1);
    let eval = |flat: &[f64]| -> MlpParams { MlpParams::from_flat(k, flat).expect("flat length is fixed") };

    let mut x = init.to_flat();
    let (mut f, mut g) = loss_grad_unchecked(init, samples);
    let mut history = vec![f];
    if max_abs(&g) < cfg.grad_tol {
        return Ok(TrainOutcome {
            params: init.clone(),
            history,
            iterations: 0,
            stop: StopReason::GradientTolerance,
        });
    }
    let mut d: Vec<f64> = g.iter().map(|v| -v).collect();
    let mut since_restart = 0;
    let mut prev_step: Option<(f64, f64)> = None; // (alpha, slope)
    let mut retried = false;
    let mut iterations = 0;
    let mut stop = StopReason::MaxIterations;

    while iterations < cfg.max_iters {
        let mut slope = dot(&g, &d);
        if slope >= 0.0 {
            d = g.iter().map(|v| -v).collect();
            slope = -dot(&g, &g);
            since_restart = 0;
        }
        // Initial trial step: keep the previous step's first-order decrease.
        let mut alpha = match prev_step {
            Some((a, s)) => (a * s / slope).min(1e6),
            None => 1.0 / max_abs(&d).max(1.0),
        };
        let mut trial = vec![0.0; x.len()];
        let mut accepted = None;
        for _ in 0..=cfg.max_halvings {
            for ((t, xi), di) in trial.iter_mut().zip(&x).zip(&d) {
                *t = xi + alpha * di;
            }
            let ft = loss_only(&eval(&trial), samples);
            if ft <= f + cfg.armijo_c * alpha * slope {
                accepted = Some(ft);
                break;
            }
            alpha *= cfg.backtrack;
        }
        let Some(mut f_new) = accepted else {
            if retried || since_restart == 0 {
                stop = StopReason::LineSearchFailed;
                break;
            }
            retried = true;
            d = g.iter().map(|v| -v).collect();
            since_restart = 0;
            prev_step = None;
            continue;
        };
        retried = false;

        // Refine with the minimizer of the quadratic through f(0), f'(0) and
        // f(alpha); kept only if it satisfies Armijo and lowers the loss.
        let curvature = f_new - f - slope * alpha;
        if curvature > 0.0 {
            let a_q = (-slope * alpha * alpha / (2.0 * curvature)).min(10.0 * alpha);
            if a_q.is_finite() && a_q > 0.0 && (a_q - alpha).abs() > 1e-12 * alpha {
                let cand: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + a_q * di).collect();
                let fq = loss_only(&eval(&cand), samples);
                if fq < f_new && fq <= f + cfg.armijo_c * a_q * slope {
                    alpha = a_q;
                    f_new = fq;
                    trial = cand;
                }
            }
        }

        x = trial;
        let (f_acc, g_new) = loss_grad_unchecked(&eval(&x), samples);
        debug_assert_eq!(f_acc, f_new);
        f = f_acc;
        history.push(f);
        iterations += 1;
        prev_step = Some((alpha, slope));

        if max_abs(&g_new) < cfg.grad_tol {
            stop = StopReason::GradientTolerance;
            break;
        }
        let gg = dot(&g, &g);
        let mut beta = (dot(&g_new, &g_new) - dot(&g_new, &g)) / gg;
        since_restart += 1;
        if !(beta > 0.0) || since_restart >= restart_interval {
            beta = 0.0;
            since_restart = 0;
        }
        for (di, gi) in d.iter_mut().zip(&g_new) {
            *di = -gi + beta * *di;
        }
        g = g_new;
    }
    Ok(TrainOutcome {
        params: eval(&x),
        history,
        iterations,
        stop,
    })
}

const MAGIC: &str = "SRMLP 1";

fn join(values: &[f64]) -> String {
    values.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(" ")
}

pub fn write_mlp(params: &MlpParams, mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "{MAGIC}")?;
    writeln!(out, "{}", params.k_in)?;
    for row in params.w1.chunks(params.k_in) {
        writeln!(out, "{}", join(row))?;
    }
    writeln!(out, "{}", join(&params.b1))?;
    writeln!(out, "{}", join(&params.w2))?;
    writeln!(out, "{:?}", params.b2)
}

fn mlp_err(field: &'static str, detail: impl Into<String>) -> Error {
    Error::Format {
        format: "SRMLP",
        field,
        detail: detail.into(),
    }
}

pub fn read_mlp(input: impl BufRead) -> Result<MlpParams> {
    let mut lines = input.lines();
    let mut next = |field: &'static str| -> Result<String> {
        match lines.next() {
            Some(Ok(l)) => Ok(l),
            Some(Err(e)) => Err(mlp_err(field, e.to_string())),
            None => Err(mlp_err(field, "unexpected end of file")),
        }
    };
    if next("header")?.trim() != MAGIC {
        return Err(mlp_err("header", format!("expected {MAGIC:?}")));
    }
    let k_in: usize = next("k_in")?.trim().parse().map_err(|_| mlp_err("k_in", "not an integer"))?;
    if k_in == 0 {
        return Err(mlp_err("k_in", "must be positive"));
    }
    let mut p = MlpParams::zeros(k_in);
    for h in 0..HIDDEN {
        let row = parse_floats(&next("W1")?, "W1", "SRMLP")?;
        if row.len() != k_in {
            return Err(mlp_err("W1", format!("row {h} has {} values, expected {k_in}", row.len())));
        }
        p.w1[h * k_in..(h + 1) * k_in].copy_from_slice(&row);
    }
    for (field, dst) in [("b1", &mut p.b1), ("w2", &mut p.w2)] {
        let row = parse_floats(&next(field)?, field, "SRMLP")?;
        if row.len() != HIDDEN {
            return Err(mlp_err(field, format!("expected {HIDDEN} values, found {}", row.len())));
        }
        dst.copy_from_slice(&row);
    }
    let b2 = parse_floats(&next("b2")?, "b2", "SRMLP")?;
    if b2.len() != 1 {
        return Err(mlp_err("b2", "expected a single value"));
    }
    p.b2 = b2[0];
    Ok(p)
}

pub fn save_mlp(params: &MlpParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_mlp(params, &mut buf).expect("writing to memory");
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_mlp(path: impl AsRef<Path>) -> Result<MlpParams> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_mlp(BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx() -> NormContext {
        NormContext { mu: 0.0, s: 1.0 }
    }

    fn random_params(k: usize, seed: u64) -> MlpParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = MlpParams::zeros(k);
        p.w1.iter_mut().for_each(|w| *w = rng.random_range(-1.0..1.0));
        p.b1.iter_mut().for_each(|w| *w = rng.random_range(-0.5..0.5));
        p.w2.iter_mut().for_each(|w| *w = rng.random_range(-1.0..1.0));
        p.b2 = rng.random_range(-0.5..0.5);
        p
    }

    fn random_samples(k: usize, n: usize, seed: u64) -> Vec<TrainingSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| TrainingSample {
                input: (0..k).map(|_| rng.random_range(-1.5..1.5)).collect(),
                target: rng.random_range(-1.0..1.0),
                ctx: ctx(),
            })
            .collect()
    }

    #[test]
    fn forward_examples() {
        let mut p = MlpParams::zeros(3);
        p.b2 = 0.7;
        assert_eq!(forward(&p, &[1.0, -2.0, 3.0]).unwrap(), 0.7);
        let mut p = random_params(3, 1);
        p.b1 = [0.0; HIDDEN];
        assert_eq!(forward(&p, &[0.0; 3]).unwrap(), p.b2);
        assert!(forward(&p, &[0.0; 2]).is_err());
    }

    #[test]
    fn forward_matches_independent_evaluation() {
        let p = random_params(7, 3);
        let x = [0.3, -1.2, 0.8, 0.0, 2.0, -0.4, 1.1];
        let mut y = p.b2;
        for h in 0..HIDDEN {
            let mut a = p.b1[h];
            for i in 0..7 {
                a += p.w1[h * 7 + i] * x[i];
            }
            y += p.w2[h] * ((a.exp() - (-a).exp()) / (a.exp() + (-a).exp()));
        }
        assert!((forward(&p, &x).unwrap() - y).abs() < 1e-13);
    }

    #[test]
    fn flat_roundtrip() {
        let p = random_params(4, 2);
        let flat = p.to_flat();
        assert_eq!(flat.len(), 61);
        assert_eq!(MlpParams::from_flat(4, &flat).unwrap(), p);
        assert!(MlpParams::from_flat(4, &flat[1..]).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for seed in 0..5 {
            let p = random_params(5, seed);
            let samples = random_samples(5, 30, seed + 100);
            let (_, grad) = loss_and_grad(&p, &samples).unwrap();
            let flat = p.to_flat();
            let h = 1e-5;
            for i in 0..flat.len() {
                let mut up = flat.clone();
                up[i] += h;
                let mut down = flat.clone();
                down[i] -= h;
                let fu = loss_and_grad(&MlpParams::from_flat(5, &up).unwrap(), &samples).unwrap().0;
                let fd = loss_and_grad(&MlpParams::from_flat(5, &down).unwrap(), &samples).unwrap().0;
                let fd_grad = (fu - fd) / (2.0 * h);
                let rel = (fd_grad - grad[i]).abs() / fd_grad.abs().max(grad[i].abs()).max(1e-6);
                assert!(rel < 1e-5, "param {i}: {fd_grad} vs {}", grad[i]);
            }
        }
    }

    #[test]
    fn perfect_fit_has_zero_loss_and_gradient() {
        let p = random_params(3, 9);
        let samples: Vec<TrainingSample> = random_samples(3, 20, 1)
            .into_iter()
            .map(|mut s| {
                s.target = forward(&p, &s.input).unwrap();
                s
            })
            .collect();
        let (loss, grad) = loss_and_grad(&p, &samples).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.iter().all(|&g| g == 0.0));
        let out = train_cg(&p, &samples, &TrainConfig::default()).unwrap();
        assert_eq!(out.history, vec![0.0]);
        assert_eq!(out.params, p);
    }

    #[test]
    fn output_layer_subproblem_has_closed_form() {
        // With W1 and b1 fixed, the loss is quadratic in (w2, b2). Doubling
        // the targets doubles the optimal output weights, so the optimal
        // loss scales by exactly four.
        let p = random_params(2, 4);
        let samples = random_samples(2, 50, 8);
        let optimum = |targets_scale: f64| -> f64 {
            // Normal equations for (w2, b2) on hidden activations.
            let m = HIDDEN + 1;
            let mut ata = vec![0.0; m * m];
            let mut atb = vec![0.0; m];
            let mut hidden = [0.0; HIDDEN];
            for s in &samples {
                forward_unchecked(&p, &s.input, &mut hidden);
                let row: Vec<f64> = hidden.iter().cloned().chain([1.0]).collect();
                for i in 0..m {
                    atb[i] += row[i] * s.target * targets_scale;
                    for j in 0..m {
                        ata[i * m + j] += row[i] * row[j];
                    }
                }
            }
            let sol = crate::linalg::lstsq_svd(&ata, &atb, m, 1e-14).x;
            let mut q = p.clone();
            q.w2.copy_from_slice(&sol[..HIDDEN]);
            q.b2 = sol[HIDDEN];
            let scaled: Vec<TrainingSample> = samples
                .iter()
                .map(|s| TrainingSample { target: s.target * targets_scale, ..s.clone() })
                .collect();
            let (loss, grad) = loss_and_grad(&q, &scaled).unwrap();
            let n1 = HIDDEN * 2 + HIDDEN;
            assert!(grad[n1..].iter().all(|g| g.abs() < 1e-9), "output gradient vanishes at the optimum");
            loss
        };
        let base = optimum(1.0);
        assert!((optimum(2.0) - 4.0 * base).abs() < 1e-9 * base.max(1.0));
    }

    #[test]
    fn bias_only_problem_converges_to_mean() {
        let samples: Vec<TrainingSample> = [1.0, 2.0, 4.5, -0.5]
            .iter()
            .map(|&t| TrainingSample { input: vec![0.3, 0.1], target: t, ctx: ctx() })
            .collect();
        let out = train_cg(&MlpParams::zeros(2), &samples, &TrainConfig::default()).unwrap();
        assert!((out.params.b2 - 1.75).abs() < 1e-8, "{}", out.params.b2);
        assert!(out.iterations <= 3, "{} iterations", out.iterations);
    }

    #[test]
    fn history_never_increases() {
        let samples = random_samples(4, 100, 2);
        let out = train_cg(&init_weights(4, 3), &samples, &TrainConfig { max_iters: 60, ..Default::default() }).unwrap();
        assert!(out.history.windows(2).all(|w| w[1] <= w[0]));
        assert!(out.history.last().unwrap() < &out.history[0]);
        let again = train_cg(&init_weights(4, 3), &samples, &TrainConfig { max_iters: 60, ..Default::default() }).unwrap();
        assert_eq!(again.params, out.params);
    }

    #[test]
    fn init_rules() {
        let a = init_weights(40, 7);
        assert_eq!(a, init_weights(40, 7));
        assert_ne!(a, init_weights(40, 8));
        let bound = 1.0 / 40f64.sqrt();
        assert!(a.w1.iter().all(|w| w.abs() <= bound));
        assert!(a.w2.iter().all(|w| w.abs() <= 1.0 / 10f64.sqrt()));
        assert_eq!(a.b1, [0.0; HIDDEN]);
        assert_eq!(a.b2, 0.0);
    }

    #[test]
    fn normalization_examples() {
        let mut patch = vec![0.0; 54];
        for s in 0..9 {
            patch[s * 6] = 90.0;
        }
        let (norm, t, c) = normalize(&CoeffPatch::new(patch), &[90.0; 12], Some(90.0)).unwrap();
        assert_eq!(c, NormContext { mu: 90.0, s: 1.0 });
        assert!(norm.as_slice().iter().all(|&v| v == 0.0));
        assert_eq!(t, Some(0.0));
        assert!(normalize(&CoeffPatch::new(vec![0.0; 6]), &[], None).is_err());

        let c = NormContext { mu: 100.0, s: 20.0 };
        assert_eq!(denormalize(0.0, c), 100.0);
        assert_eq!(denormalize(1.0, c), 120.0);
        let (_, t, c) = normalize(&CoeffPatch::new(vec![3.0; 6]), &[1.0, 9.0, 4.0], Some(77.0)).unwrap();
        assert!((denormalize(t.unwrap(), c) - 77.0).abs() < 1e-12);
    }

    #[test]
    fn normalization_is_scale_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let patch: Vec<f64> = (0..54).map(|_| rng.random_range(-20.0..20.0) + 100.0).collect();
        let support: Vec<f64> = (0..40).map(|_| rng.random_range(60.0..140.0)).collect();
        let (a, _, ca) = normalize(&CoeffPatch::new(patch.clone()), &support, None).unwrap();
        // Scale the scene about mu by 2: DC entries move about mu, the other
        // coefficients (derivatives) simply double.
        let mu = ca.mu;
        let scaled_patch: Vec<f64> = patch
            .iter()
            .enumerate()
            .map(|(i, v)| if i % 6 == 0 { mu + 2.0 * (v - mu) } else { 2.0 * v })
            .collect();
        let scaled_support: Vec<f64> = support.iter().map(|v| mu + 2.0 * (v - mu)).collect();
        let (b, _, cb) = normalize(&CoeffPatch::new(scaled_patch), &scaled_support, None).unwrap();
        assert!((cb.s - 2.0 * ca.s).abs() < 1e-9);
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn text_roundtrip() {
        let p = random_params(3, 11);
        let mut buf = Vec::new();
        write_mlp(&p, &mut buf).unwrap();
        assert!(buf.starts_with(b"SRMLP 1\n3\n"));
        assert_eq!(read_mlp(&buf[..]).unwrap(), p);
        assert!(read_mlp(&b"SRMLP 1\n3\n1 2\n"[..]).is_err());
    }
}
