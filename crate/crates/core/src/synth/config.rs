use std::path::Path;

use serde::{Deserialize, Serialize};

use super::noise::{ClutterEmbedding, NoiseModel};
use super::scenario::ScenarioSpec;
use crate::error::{Error, Result};

/// Flat `key = value` description of a scenario and its detector noise.
///
/// Every key is optional; missing keys take the defaults of
/// [`ScenarioSpec`] and [`NoiseModel`]. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub frames: usize,
    pub width: f64,
    pub height: f64,
    pub objects: usize,
    pub categories: u32,
    pub dim: usize,
    pub min_size: f64,
    pub max_size: f64,
    pub min_aspect: f64,
    pub max_aspect: f64,
    pub max_speed: f64,
    pub min_lifespan: f64,
    pub miss_rate: f64,
    pub fp_rate: f64,
    pub jitter_sigma: f64,
    pub score_tp_lo: f64,
    pub score_tp_hi: f64,
    pub score_fp_lo: f64,
    pub score_fp_hi: f64,
    pub embed_sigma: f64,
    pub fp_embed_mode: ClutterEmbedding,
    pub fp_embed_sigma: f64,
    pub embed_scale: f64,
    pub dup_rate: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let noise = NoiseModel {
            embed_scale: crate::experiments::BENCHMARK_EMBED_SCALE,
            ..NoiseModel::default()
        };
        Self::from_parts(&ScenarioSpec::default(), &noise)
    }
}

impl SynthConfig {
    pub fn from_parts(s: &ScenarioSpec, n: &NoiseModel) -> Self {
        Self {
            frames: s.frames,
            width: s.width,
            height: s.height,
            objects: s.objects,
            categories: s.categories,
            dim: s.dim,
            min_size: s.min_size,
            max_size: s.max_size,
            min_aspect: s.min_aspect,
            max_aspect: s.max_aspect,
            max_speed: s.max_speed,
            min_lifespan: s.min_lifespan,
            miss_rate: n.miss_rate,
            fp_rate: n.fp_rate,
            jitter_sigma: n.jitter_sigma,
            score_tp_lo: n.score_range_tp.0,
            score_tp_hi: n.score_range_tp.1,
            score_fp_lo: n.score_range_fp.0,
            score_fp_hi: n.score_range_fp.1,
            embed_sigma: n.embed_sigma,
            fp_embed_mode: n.fp_embed_mode,
            fp_embed_sigma: n.fp_embed_sigma,
            embed_scale: n.embed_scale,
            dup_rate: n.dup_rate,
        }
    }

    pub fn scenario(&self) -> ScenarioSpec {
        ScenarioSpec {
            frames: self.frames,
            width: self.width,
            height: self.height,
            objects: self.objects,
            categories: self.categories,
            dim: self.dim,
            min_size: self.min_size,
            max_size: self.max_size,
            min_aspect: self.min_aspect,
            max_aspect: self.max_aspect,
            max_speed: self.max_speed,
            min_lifespan: self.min_lifespan,
        }
    }

    pub fn noise(&self) -> NoiseModel {
        NoiseModel {
            miss_rate: self.miss_rate,
            fp_rate: self.fp_rate,
            jitter_sigma: self.jitter_sigma,
            score_range_tp: (self.score_tp_lo, self.score_tp_hi),
            score_range_fp: (self.score_fp_lo, self.score_fp_hi),
            embed_sigma: self.embed_sigma,
            fp_embed_mode: self.fp_embed_mode,
            fp_embed_sigma: self.fp_embed_sigma,
            embed_scale: self.embed_scale,
            dup_rate: self.dup_rate,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario().validate()?;
        self.noise().validate()
    }

    /// Parses and validates configuration text.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: SynthConfig =
            toml::from_str(text).map_err(|e| Error::invalid(format!("synth config: {}", e.message())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text).map_err(|e| match e {
            Error::InvalidParameter(message) => Error::Parse {
                path: path.to_path_buf(),
                line: 0,
                message,
            },
            other => other,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        assert_eq!(SynthConfig::parse("").unwrap(), SynthConfig::default());
    }

    #[test]
    fn keys_override_defaults() {
        let cfg =
            SynthConfig::parse("objects = 1\nframes = 5\nfp_rate = 2.0\nfp_embed_mode = \"near-object\"\n").unwrap();
        assert_eq!(cfg.scenario().objects, 1);
        assert_eq!(cfg.scenario().frames, 5);
        assert_eq!(cfg.noise().fp_rate, 2.0);
        assert_eq!(cfg.noise().fp_embed_mode, ClutterEmbedding::NearObject);
    }

    #[test]
    fn unknown_and_invalid_keys_fail() {
        assert!(SynthConfig::parse("object = 3").is_err());
        assert!(SynthConfig::parse("miss_rate = 2.0").is_err());
        assert!(SynthConfig::parse("width = 0.0").is_err());
        assert!(SynthConfig::parse("frames = \"ten\"").is_err());
    }
}
