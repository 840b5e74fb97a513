//! Run configuration, stored as TOML. Relative paths are resolved against the
//! directory of the config file.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use vistk_core::curate::{FilterConfig, TrackerConfig};
use vistk_core::eval::EvalConfig;
use vistk_core::loss::LossConfig;
use vistk_core::synth::CorpusSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub ground_truth: PathBuf,
    pub detections: PathBuf,
    /// Where commands write their artifacts.
    pub out_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            ground_truth: "data/ground_truth.json".into(),
            detections: "data/detections.json".into(),
            out_dir: "out".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelfcheckConfig {
    pub instances: usize,
    pub step: f64,
    pub tolerance: f64,
    /// Replaces the built-in RLE reference cases.
    pub rle_golden: Option<PathBuf>,
}

impl Default for SelfcheckConfig {
    fn default() -> Self {
        Self {
            instances: 200,
            step: 1e-4,
            tolerance: 1e-5,
            rle_golden: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Seeds corpus generation (overriding `synth.seed`) and the self-checks.
    pub seed: u64,
    pub paths: Paths,
    pub synth: CorpusSpec,
    pub tracker: TrackerConfig,
    pub filter: FilterConfig,
    pub eval: EvalConfig,
    pub loss: LossConfig,
    pub selfcheck: SelfcheckConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            paths: Paths::default(),
            synth: CorpusSpec::default(),
            tracker: TrackerConfig::default(),
            filter: FilterConfig::default(),
            eval: EvalConfig::default(),
            loss: LossConfig::default(),
            selfcheck: SelfcheckConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config always serializes")
    }

    /// Reads a config and makes its relative paths absolute.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg = Self::from_toml(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.paths.ground_truth);
        fix(&mut self.paths.detections);
        fix(&mut self.paths.out_dir);
        if let Some(p) = &mut self.selfcheck.rle_golden {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seed > i64::MAX as u64 {
            bail!("seed must fit in a signed 64-bit integer");
        }
        self.tracker.validate().map_err(anyhow::Error::msg).context("[tracker]")?;
        self.filter.validate().map_err(anyhow::Error::msg).context("[filter]")?;
        self.eval.validate().context("[eval]")?;
        self.synth.validate().map_err(anyhow::Error::msg).context("[synth]")?;
        self.loss.validate().context("[loss]")?;
        if !(self.selfcheck.step > 0.0 && self.selfcheck.tolerance > 0.0) {
            bail!("[selfcheck] step and tolerance must be positive");
        }
        Ok(())
    }

    pub fn corpus_spec(&self) -> CorpusSpec {
        CorpusSpec {
            seed: self.seed,
            ..self.synth.clone()
        }
    }
}
