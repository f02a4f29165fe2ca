use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::localmodel::FitConfig;
use crate::neural::TrainConfig;
use crate::pca::patch_len;
use crate::registration::RegistrationConfig;

/// Where the per-frame transforms used for projection come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShiftSource {
    Estimated,
    GroundTruth,
}

impl ShiftSource {
    pub fn as_str(&self) -> &'static str {
        match self {
            ShiftSource::Estimated => "estimated",
            ShiftSource::GroundTruth => "ground_truth",
        }
    }
}

impl std::str::FromStr for ShiftSource {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "estimated" => Ok(ShiftSource::Estimated),
            "ground_truth" | "ground-truth" => Ok(ShiftSource::GroundTruth),
            other => Err(Error::InvalidArgument(format!("unknown shift source {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub scale: usize,
    /// Neighborhood width (odd).
    pub window: usize,
    /// Number of PCA components fed to the network.
    pub eigvecs: usize,
    pub n_frames: usize,
    pub fit: FitConfig,
    /// Radius (HR pixels) of the IDW baseline's window.
    pub idw_radius: f64,
    pub registration: RegistrationConfig,
    pub train: TrainConfig,
    pub noise_levels: Vec<f64>,
    pub shift_source: ShiftSource,
    /// `None` means `2 * scale`.
    pub rms_border: Option<usize>,
    pub sample_budget: usize,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            scale: 2,
            window: 3,
            eigvecs: 40,
            n_frames: 25,
            fit: FitConfig {
                support_radius: 1.5,
                ..FitConfig::default()
            },
            idw_radius: 0.75,
            registration: RegistrationConfig::default(),
            train: TrainConfig::default(),
            noise_levels: vec![0.0, 5.0, 10.0, 20.0],
            shift_source: ShiftSource::Estimated,
            rms_border: None,
            sample_budget: 200_000,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn border(&self) -> usize {
        self.rms_border.unwrap_or(2 * self.scale)
    }

    pub fn patch_len(&self) -> usize {
        patch_len(self.window)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.scale == 0 {
            return bad("scale must be at least 1".into());
        }
        if self.window == 0 || self.window.is_multiple_of(2) {
            return bad(format!("window must be odd, got {}", self.window));
        }
        if self.eigvecs == 0 || self.eigvecs > self.patch_len() {
            return bad(format!("eigvecs must lie in 1..={}, got {}", self.patch_len(), self.eigvecs));
        }
        if self.n_frames == 0 {
            return bad("n_frames must be at least 1".into());
        }
        if !(self.idw_radius > 0.0) {
            return bad("idw_radius must be positive".into());
        }
        if self.noise_levels.iter().any(|s| !(*s >= 0.0)) {
            return bad("noise levels must be non-negative".into());
        }
        if self.sample_budget == 0 {
            return bad("sample_budget must be positive".into());
        }
        self.registration.validate()?;
        self.fit.validate()
    }

    /// Serializes as `key = value` lines (the config file format).
    pub fn to_kv_text(&self) -> String {
        let mut s = String::new();
        let levels: Vec<String> = self.noise_levels.iter().map(|v| format!("{v:?}")).collect();
        let _ = writeln!(s, "scale = {}", self.scale);
        let _ = writeln!(s, "window = {}", self.window);
        let _ = writeln!(s, "eigvecs = {}", self.eigvecs);
        let _ = writeln!(s, "frames = {}", self.n_frames);
        let _ = writeln!(s, "support_radius = {:?}", self.fit.support_radius);
        let _ = writeln!(s, "svd_rel_threshold = {:?}", self.fit.svd_rel_threshold);
        if let Some(m) = self.fit.min_support {
            let _ = writeln!(s, "min_support = {m}");
        }
        let _ = writeln!(s, "idw_radius = {:?}", self.idw_radius);
        let _ = writeln!(s, "pyramid_levels = {}", self.registration.pyramid_levels);
        let _ = writeln!(s, "max_iters_per_level = {}", self.registration.max_iters_per_level);
        let _ = writeln!(s, "convergence_eps = {:?}", self.registration.convergence_eps);
        let _ = writeln!(s, "search_limit = {:?}", self.registration.search_limit);
        let _ = writeln!(s, "prefilter_sigma = {:?}", self.registration.prefilter_sigma);
        let _ = writeln!(s, "max_iters = {}", self.train.max_iters);
        let _ = writeln!(s, "grad_tol = {:?}", self.train.grad_tol);
        if let Some(r) = self.train.restart_interval {
            let _ = writeln!(s, "restart_interval = {r}");
        }
        let _ = writeln!(s, "train_seed = {}", self.train.seed);
        let _ = writeln!(s, "noise_levels = {}", levels.join(","));
        let _ = writeln!(s, "shift_source = {}", self.shift_source.as_str());
        if let Some(b) = self.rms_border {
            let _ = writeln!(s, "rms_border = {b}");
        }
        let _ = writeln!(s, "sample_budget = {}", self.sample_budget);
        let _ = writeln!(s, "seed = {}", self.seed);
        s
    }

    /// Applies `key = value` lines on top of `self`. Blank lines and `#`
    /// comments are skipped; unknown keys are rejected.
    pub fn apply_kv_text(&mut self, text: &str) -> Result<()> {
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Format {
                    format: "config",
                    field: "line",
                    detail: format!("line {}: expected `key = value`", lineno + 1),
                });
            };
            self.set(key.trim(), value.trim())?;
        }
        self.validate()
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::Format {
                format: "config",
                field: "value",
                detail: format!("{key}: cannot parse {v:?}"),
            })
        }
        match key {
            "scale" => self.scale = num(key, value)?,
            "window" => self.window = num(key, value)?,
            "eigvecs" => self.eigvecs = num(key, value)?,
            "frames" => self.n_frames = num(key, value)?,
            "support_radius" => self.fit.support_radius = num(key, value)?,
            "svd_rel_threshold" => self.fit.svd_rel_threshold = num(key, value)?,
            "min_support" => self.fit.min_support = Some(num(key, value)?),
            "idw_radius" => self.idw_radius = num(key, value)?,
            "pyramid_levels" => self.registration.pyramid_levels = num(key, value)?,
            "max_iters_per_level" => self.registration.max_iters_per_level = num(key, value)?,
            "convergence_eps" => self.registration.convergence_eps = num(key, value)?,
            "search_limit" => self.registration.search_limit = num(key, value)?,
            "prefilter_sigma" => self.registration.prefilter_sigma = num(key, value)?,
            "max_iters" => self.train.max_iters = num(key, value)?,
            "grad_tol" => self.train.grad_tol = num(key, value)?,
            "restart_interval" => self.train.restart_interval = Some(num(key, value)?),
            "train_seed" => self.train.seed = num(key, value)?,
            "noise_levels" => {
                self.noise_levels = value
                    .split(',')
                    .map(|v| num::<f64>(key, v.trim()))
                    .collect::<Result<_>>()?
            }
            "shift_source" => self.shift_source = value.parse()?,
            "rms_border" => self.rms_border = Some(num(key, value)?),
            "sample_budget" => self.sample_budget = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            other => {
                return Err(Error::Format {
                    format: "config",
                    field: "key",
                    detail: format!("unknown key {other:?}"),
                })
            }
        }
        Ok(())
    }
}
