//! Token and FLOP accounting for probe and focused passes.
//!
//! One pass over `T` tokens costs `L * (8*T*d² + 4*T²*d + 4*T*d*d_ff)`: the
//! first and last terms are the projections and feed-forward block (linear in
//! `T`), the middle term is attention scores and mixing (quadratic in `T`).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{GridError, PipelineError};
use crate::probe::Resolution;

pub const COST_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisionTokenizerConfig {
    pub patch_pixels: u32,
    pub spatial_merge: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelCostConfig {
    pub layers: u64,
    pub hidden: u64,
    pub ffn: u64,
    /// Text tokens every pass pays for (instructions, options, subtitles).
    pub prompt_tokens: u64,
}

/// On-disk cost preset: `{layers, hidden, ffn, patch_pixels, spatial_merge, prompt_tokens}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostConfig {
    #[serde(default = "cost_schema_version")]
    pub schema_version: u32,
    #[serde(default)]
    pub name: String,
    pub layers: u64,
    pub hidden: u64,
    pub ffn: u64,
    pub patch_pixels: u32,
    pub spatial_merge: u32,
    pub prompt_tokens: u64,
}

fn cost_schema_version() -> u32 {
    COST_SCHEMA_VERSION
}

const PRESET_2B: &str = include_str!("../presets/2b-like.json");
const PRESET_4B: &str = include_str!("../presets/4b-like.json");
const PRESET_8B: &str = include_str!("../presets/8b-like.json");

impl CostConfig {
    pub const PRESETS: [&'static str; 3] = ["2b-like", "4b-like", "8b-like"];

    pub fn preset(name: &str) -> Option<Self> {
        let raw = match name {
            "2b-like" | "2b" => PRESET_2B,
            "4b-like" | "4b" => PRESET_4B,
            "8b-like" | "8b" => PRESET_8B,
            _ => return None,
        };
        Some(serde_json::from_str(raw).expect("bundled cost preset is valid"))
    }

    pub fn from_json(raw: &str, context: &str) -> Result<Self, PipelineError> {
        let cfg: Self = serde_json::from_str(raw).map_err(|source| PipelineError::Json {
            context: context.to_string(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let raw = std::fs::read_to_string(path).map_err(|source| PipelineError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&raw, &path.display().to_string())
    }

    /// Preset name or a path to a preset file.
    pub fn resolve(name_or_path: &str) -> Result<Self, PipelineError> {
        match Self::preset(name_or_path) {
            Some(cfg) => Ok(cfg),
            None => Self::load(Path::new(name_or_path)),
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.schema_version != COST_SCHEMA_VERSION {
            return Err(PipelineError::Config(format!(
                "cost config schema_version {} unsupported",
                self.schema_version
            )));
        }
        if self.layers == 0
            || self.hidden == 0
            || self.ffn == 0
            || self.patch_pixels == 0
            || self.spatial_merge == 0
        {
            return Err(PipelineError::Config(
                "cost config values must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn tokenizer(&self) -> VisionTokenizerConfig {
        VisionTokenizerConfig {
            patch_pixels: self.patch_pixels,
            spatial_merge: self.spatial_merge,
        }
    }

    pub fn model(&self) -> ModelCostConfig {
        ModelCostConfig {
            layers: self.layers,
            hidden: self.hidden,
            ffn: self.ffn,
            prompt_tokens: self.prompt_tokens,
        }
    }
}

impl Default for CostConfig {
    fn default() -> Self {
        Self::preset("2b-like").expect("bundled preset")
    }
}

pub fn tokens_per_frame(res: Resolution, cfg: &VisionTokenizerConfig) -> u64 {
    let cell = (cfg.patch_pixels * cfg.spatial_merge) as u64;
    (res.width as u64).div_ceil(cell) * (res.height as u64).div_ceil(cell)
}

/// Rough text token count: one token per four characters.
pub fn estimate_text_tokens(text: &str) -> u64 {
    (text.chars().count() as u64).div_ceil(4)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PassCost {
    pub linear: f64,
    pub attention: f64,
}

impl PassCost {
    pub fn total(&self) -> f64 {
        self.linear + self.attention
    }
}

pub fn pass_cost_terms(tokens: u64, cfg: &ModelCostConfig) -> PassCost {
    let t = tokens as f64;
    let l = cfg.layers as f64;
    let d = cfg.hidden as f64;
    let ff = cfg.ffn as f64;
    PassCost {
        linear: l * (8.0 * t * d * d + 4.0 * t * d * ff),
        attention: l * 4.0 * t * t * d,
    }
}

pub fn pass_cost(tokens: u64, cfg: &ModelCostConfig) -> f64 {
    pass_cost_terms(tokens, cfg).total()
}

/// Visual-token counts of one question's passes.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PassSchedule {
    pub probe_tokens: Vec<u64>,
    pub focused_tokens: u64,
    /// Question-specific text tokens, paid on every pass on top of the
    /// configured prompt overhead.
    pub text_tokens: u64,
    pub m_eff: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub probe_flops: f64,
    pub focused_flops: f64,
    pub total_flops: f64,
    pub probe_attention_flops: f64,
    pub focused_attention_flops: f64,
    pub probe_tokens: u64,
    pub focused_tokens: u64,
    pub passes: usize,
    pub m_eff: usize,
}

pub fn pipeline_cost(schedule: &PassSchedule, cfg: &ModelCostConfig) -> CostBreakdown {
    let overhead = cfg.prompt_tokens + schedule.text_tokens;
    let mut probe = PassCost {
        linear: 0.0,
        attention: 0.0,
    };
    let mut probe_tokens = 0;
    for &t in &schedule.probe_tokens {
        let c = pass_cost_terms(t + overhead, cfg);
        probe.linear += c.linear;
        probe.attention += c.attention;
        probe_tokens += t + overhead;
    }
    let focused_tokens = schedule.focused_tokens + overhead;
    let focused = pass_cost_terms(focused_tokens, cfg);
    CostBreakdown {
        probe_flops: probe.total(),
        focused_flops: focused.total(),
        total_flops: probe.total() + focused.total(),
        probe_attention_flops: probe.attention,
        focused_attention_flops: focused.attention,
        probe_tokens,
        focused_tokens,
        passes: schedule.probe_tokens.len() + 1,
        m_eff: schedule.m_eff,
    }
}

/// Population standard deviation over mean.
pub fn compute_cv(costs: &[f64]) -> Result<f64, GridError> {
    if costs.len() < 2 {
        return Err(GridError::DegenerateCosts);
    }
    let n = costs.len() as f64;
    let mean = costs.iter().sum::<f64>() / n;
    if mean <= 0.0 || !mean.is_finite() {
        return Err(GridError::DegenerateCosts);
    }
    let var = costs.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / n;
    Ok(var.sqrt() / mean)
}
