use std::fmt;
use std::path::Path;

use ddlab_core::{GaussianMixture, NoiseSchedule, ScoreModel, SdeScheme};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    HpSample,
    TrackLikelihood,
    BiasBounds,
    ModeCurve,
    Tradeoff,
    HpVsSamples,
    NonsmoothDemo,
    BetaInvariance,
    Selftest,
}

impl Experiment {
    pub const ALL: [Experiment; 9] = [
        Experiment::HpSample,
        Experiment::TrackLikelihood,
        Experiment::BiasBounds,
        Experiment::ModeCurve,
        Experiment::Tradeoff,
        Experiment::HpVsSamples,
        Experiment::NonsmoothDemo,
        Experiment::BetaInvariance,
        Experiment::Selftest,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::HpSample => "hp-sample",
            Experiment::TrackLikelihood => "track-likelihood",
            Experiment::BiasBounds => "bias-bounds",
            Experiment::ModeCurve => "mode-curve",
            Experiment::Tradeoff => "tradeoff",
            Experiment::HpVsSamples => "hp-vs-samples",
            Experiment::NonsmoothDemo => "nonsmooth-demo",
            Experiment::BetaInvariance => "beta-invariance",
            Experiment::Selftest => "selftest",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub lambda_max: f64,
    pub lambda_min: f64,
    pub horizon: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        let s = NoiseSchedule::default();
        Self {
            lambda_max: s.lambda_max,
            lambda_min: s.lambda_min,
            horizon: s.horizon,
        }
    }
}

/// Isotropic Gaussian mixture `Σ w_i N(μ_i, v_i I)` at `t = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyConfig {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<f64>,
}

impl FamilyConfig {
    pub fn univariate(weights: &[f64], means: &[f64], variances: &[f64]) -> Self {
        Self {
            weights: weights.to_vec(),
            means: means.iter().map(|&m| vec![m]).collect(),
            variances: variances.to_vec(),
        }
    }

    /// Symmetric bimodal mixture.
    pub fn bimodal() -> Self {
        Self::univariate(&[0.5, 0.5], &[-2.0, 2.0], &[0.25, 0.25])
    }

    /// Three-component mixture with a discontinuous denoising mode curve
    /// (weights as printed, renormalised on construction).
    pub fn nonsmooth() -> Self {
        Self::univariate(&[0.274, 0.274, 0.45], &[-2.5, -1.5, 1.0], &[0.1, 0.1, 0.1])
    }

    /// Four 2D components on a square, bottom-left heaviest.
    pub fn four_corners() -> Self {
        Self {
            weights: vec![0.4, 0.2, 0.2, 0.2],
            means: vec![vec![-2.0, -2.0], vec![2.0, -2.0], vec![-2.0, 2.0], vec![2.0, 2.0]],
            variances: vec![0.3; 4],
        }
    }

    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, Vec::len)
    }

    pub fn build(&self, schedule: NoiseSchedule, field: &str) -> Result<GaussianMixture> {
        GaussianMixture::new(
            self.weights.clone(),
            self.means.iter().map(|m| DVector::from_column_slice(m)).collect(),
            self.variances.clone(),
            schedule,
        )
        .map_err(|e| CliError::config(field, e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreKind {
    Exact,
    Mismatched,
    Perturbed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreConfig {
    pub kind: ScoreKind,
    /// `ε` for `perturbed`.
    pub scale: f64,
    /// Constant field `b` for `perturbed`.
    pub bias: Vec<f64>,
    /// Mixture `q` whose score is used by `mismatched`.
    pub mismatch: Option<FamilyConfig>,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        Self {
            kind: ScoreKind::Exact,
            scale: 0.0,
            bias: Vec::new(),
            mismatch: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaseSampler {
    Sde,
    PfOde,
}

/// Conditioning point `x_t` given by its log-SNR.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnchorConfig {
    pub x: Vec<f64>,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

/// λ_s values scanned for the mode curve and jump detection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanConfig {
    pub lambda_from: f64,
    pub lambda_to: f64,
    pub points: usize,
    pub jump_threshold: f64,
}

impl ScanConfig {
    pub fn lambdas(&self) -> Vec<f64> {
        let n = self.points;
        (0..n)
            .map(|i| self.lambda_from + (self.lambda_to - self.lambda_from) * i as f64 / (n - 1) as f64)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub seed: u64,
    pub n_steps: usize,
    pub n_paths: usize,
    pub scheme: SdeScheme,
    pub schedule: ScheduleConfig,
    pub family: FamilyConfig,
    pub score: ScoreConfig,
    pub sampler: BaseSampler,
    /// Threshold log-SNRs. `λ_max` means `t = 0` (no HP-ODE leg).
    pub thresholds: Vec<f64>,
    pub anchor: AnchorConfig,
    pub grid: GridConfig,
    pub scan: ScanConfig,
    /// Antithetic pairs per ELBO estimate.
    pub elbo_samples: usize,
    /// Posterior samples per anchor in `hp-vs-samples`.
    pub k_samples: usize,
    pub betas: Vec<f64>,
}

impl ExperimentConfig {
    pub fn defaults(experiment: Experiment) -> Self {
        let base = Self {
            experiment,
            seed: 0,
            n_steps: 1024,
            n_paths: 256,
            scheme: SdeScheme::default(),
            schedule: ScheduleConfig::default(),
            family: FamilyConfig::bimodal(),
            score: ScoreConfig::default(),
            sampler: BaseSampler::Sde,
            thresholds: vec![0.0],
            anchor: AnchorConfig {
                x: vec![-2.5],
                lambda: -8.0,
            },
            grid: GridConfig {
                lo: -4.0,
                hi: 3.5,
                points: 4000,
            },
            scan: ScanConfig {
                lambda_from: -7.9,
                lambda_to: 8.0,
                points: 160,
                jump_threshold: 0.5,
            },
            elbo_samples: 500,
            k_samples: 512,
            betas: vec![0.5, 2.0],
        };
        match experiment {
            Experiment::HpSample => Self { n_paths: 64, ..base },
            Experiment::TrackLikelihood | Experiment::Selftest => base,
            Experiment::BiasBounds => Self {
                n_paths: 512,
                score: ScoreConfig {
                    kind: ScoreKind::Perturbed,
                    scale: 0.1,
                    bias: vec![1.0],
                    mismatch: None,
                },
                ..base
            },
            Experiment::ModeCurve => Self {
                family: FamilyConfig::nonsmooth(),
                n_steps: 2048,
                ..base
            },
            Experiment::Tradeoff => Self {
                family: FamilyConfig::four_corners(),
                thresholds: vec![-4.0, 0.0, 4.0],
                ..base
            },
            Experiment::HpVsSamples => Self {
                n_paths: 20,
                n_steps: 512,
                thresholds: vec![-2.0, 0.0, 2.0],
                ..base
            },
            Experiment::NonsmoothDemo => Self {
                family: FamilyConfig::nonsmooth(),
                scan: ScanConfig {
                    lambda_from: -6.0,
                    lambda_to: 6.0,
                    points: 49,
                    jump_threshold: 0.5,
                },
                ..base
            },
            Experiment::BetaInvariance => Self {
                n_paths: 10_000,
                ..base
            },
        }
    }

    /// Defaults for `experiment` overlaid with the TOML document `text`.
    pub fn from_toml(experiment: Experiment, text: &str) -> Result<Self> {
        let user: toml::Table = toml::from_str(text).map_err(|e| CliError::Parse(e.to_string()))?;
        if let Some(v) = user.get("experiment") {
            if v.as_str() != Some(experiment.name()) {
                return Err(CliError::config(
                    "experiment",
                    format!("config is for {v}, but the subcommand is {experiment}"),
                ));
            }
        }
        let mut merged =
            toml::Table::try_from(Self::defaults(experiment)).map_err(|e| CliError::Parse(e.to_string()))?;
        merge(&mut merged, user);
        let cfg: Self = merged
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(experiment: Experiment, path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
                Self::from_toml(experiment, &text)
            }
            None => {
                let cfg = Self::defaults(experiment);
                cfg.validate()?;
                Ok(cfg)
            }
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    /// First 16 hex digits of the SHA-256 of the config's JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config is always representable as JSON");
        let digest = Sha256::digest(&json);
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn noise_schedule(&self) -> Result<NoiseSchedule> {
        let s = &self.schedule;
        NoiseSchedule::new(s.lambda_max, s.lambda_min, s.horizon)
            .map_err(|e| CliError::config("schedule", e.to_string()))
    }

    pub fn build_family(&self) -> Result<GaussianMixture> {
        self.family.build(self.noise_schedule()?, "family")
    }

    pub fn build_model(&self) -> Result<ScoreModel> {
        let fam = self.build_family()?;
        match self.score.kind {
            ScoreKind::Exact => Ok(ScoreModel::Exact(fam)),
            ScoreKind::Mismatched => {
                let q = self
                    .score
                    .mismatch
                    .as_ref()
                    .ok_or_else(|| CliError::config("score.mismatch", "required for kind = \"mismatched\""))?;
                Ok(ScoreModel::Mismatched(
                    q.build(self.noise_schedule()?, "score.mismatch")?,
                ))
            }
            ScoreKind::Perturbed => {
                ScoreModel::perturbed(fam, DVector::from_column_slice(&self.score.bias), self.score.scale)
                    .map_err(|e| CliError::config("score", e.to_string()))
            }
        }
    }

    /// Time of a threshold log-SNR, clamped onto `[0, T]`.
    pub fn threshold_time(&self, lambda: f64) -> Result<f64> {
        let sched = self.noise_schedule()?;
        let l = lambda.clamp(sched.lambda_min, sched.lambda_max);
        Ok(sched.time_from_lambda(l)?)
    }

    pub fn validate(&self) -> Result<()> {
        let sched = self.noise_schedule()?;
        let positive = |field: &str, v: usize| {
            if v == 0 {
                Err(CliError::config(field, "must be at least 1"))
            } else {
                Ok(())
            }
        };
        positive("n_steps", self.n_steps)?;
        positive("n_paths", self.n_paths)?;
        positive("elbo_samples", self.elbo_samples)?;
        positive("k_samples", self.k_samples)?;
        let fam = self.build_family()?;
        let dim = fam.dim();
        if self.score.kind == ScoreKind::Perturbed && self.score.bias.len() != dim {
            return Err(CliError::config(
                "score.bias",
                format!(
                    "length {} does not match the family dimension {dim}",
                    self.score.bias.len()
                ),
            ));
        }
        self.build_model()?;
        if let Some(q) = &self.score.mismatch {
            if q.dim() != dim {
                return Err(CliError::config("score.mismatch", "dimension differs from the family"));
            }
        }
        if self.thresholds.iter().any(|l| !l.is_finite()) {
            return Err(CliError::config("thresholds", "must be finite"));
        }
        let needs_thresholds = matches!(
            self.experiment,
            Experiment::HpSample | Experiment::Tradeoff | Experiment::HpVsSamples
        );
        if needs_thresholds && self.thresholds.is_empty() {
            return Err(CliError::config("thresholds", "at least one threshold is required"));
        }
        if self.experiment == Experiment::HpVsSamples
            && self
                .thresholds
                .iter()
                .any(|&l| l >= sched.lambda_max || l < sched.lambda_min)
        {
            return Err(CliError::config("thresholds", "λ_t must lie in [λ_min, λ_max)"));
        }
        let g = &self.grid;
        if !(g.lo.is_finite() && g.hi.is_finite() && g.lo < g.hi) {
            return Err(CliError::config("grid", "needs finite lo < hi"));
        }
        if g.points < 8 {
            return Err(CliError::config("grid.points", "must be at least 8"));
        }
        let s = &self.scan;
        if s.points < 2 || !(s.lambda_from.is_finite() && s.lambda_to.is_finite()) || s.lambda_from == s.lambda_to {
            return Err(CliError::config(
                "scan",
                "needs two distinct finite ends and at least 2 points",
            ));
        }
        if s.jump_threshold.is_nan() || s.jump_threshold <= 0.0 {
            return Err(CliError::config("scan.jump_threshold", "must be positive"));
        }
        let uses_anchor = matches!(self.experiment, Experiment::ModeCurve | Experiment::NonsmoothDemo);
        if uses_anchor {
            if dim != 1 {
                return Err(CliError::config("family", "mode curves need a one-dimensional family"));
            }
            if self.anchor.x.len() != dim {
                return Err(CliError::config("anchor.x", format!("needs {dim} entries")));
            }
            let a = self.anchor.lambda;
            if !(a >= sched.lambda_min && a < sched.lambda_max) {
                return Err(CliError::config("anchor.lambda", "must lie in [λ_min, λ_max)"));
            }
            let inside = |l: f64| l > a && l <= sched.lambda_max;
            if !(inside(s.lambda_from) && inside(s.lambda_to)) {
                return Err(CliError::config("scan", "λ_s must lie in (anchor.lambda, λ_max]"));
            }
        }
        if self.experiment == Experiment::BetaInvariance {
            if self.betas.is_empty() {
                return Err(CliError::config("betas", "at least one β is required"));
            }
            if self.betas.iter().any(|b| !(b.is_finite() && *b > 0.0)) {
                return Err(CliError::config("betas", "β must be positive and finite"));
            }
            if dim != 1 {
                return Err(CliError::config(
                    "family",
                    "the KS comparison needs a one-dimensional family",
                ));
            }
        }
        Ok(())
    }
}

fn merge(base: &mut toml::Table, user: toml::Table) {
    for (k, v) in user {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(u)) => merge(b, u),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
