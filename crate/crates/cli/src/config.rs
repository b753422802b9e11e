//! Config layering: built-in defaults < config file < manifest overrides < flags.

use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::Args;
use gridprobe::compute::CostConfig;
use gridprobe::pipeline::BackendSpec;
use gridprobe::probe::ServerEndpoint;
use gridprobe::{FrameOrder, PipelineConfig, Resolution, Strategy};
use serde_json::Value;

use crate::exit::CliError;

#[derive(Debug, Clone, Default, Args)]
pub struct ConfigFlags {
    /// Pipeline config JSON; any subset of fields.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Grid side; the pool holds K² frames.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub gamma0: Option<f64>,
    /// auto, fixed:M, monolithic or uniform.
    #[arg(long)]
    pub mode: Option<Strategy>,
    /// Focused-pass frame order: temporal or importance.
    #[arg(long)]
    pub order: Option<FrameOrder>,
    /// Tile the focused frames into one canvas.
    #[arg(long)]
    pub collate: bool,
    #[arg(long, value_name = "WxH")]
    pub probe_res: Option<Resolution>,
    #[arg(long, value_name = "WxH")]
    pub focused_res: Option<Resolution>,
    /// Chat-completions base URL for the probe stage.
    #[arg(long, value_name = "URL")]
    pub selector_endpoint: Option<String>,
    #[arg(long, value_name = "NAME")]
    pub selector_model: Option<String>,
    /// Chat-completions base URL for the focused pass.
    #[arg(long, value_name = "URL")]
    pub qa_endpoint: Option<String>,
    #[arg(long, value_name = "NAME")]
    pub qa_model: Option<String>,
    /// Per-request timeout for remote backends, in milliseconds.
    #[arg(long, value_name = "MS")]
    pub timeout_ms: Option<u64>,
    #[arg(long)]
    pub retries: Option<u32>,
    /// Cost preset name (2b-like, 4b-like, 8b-like) or JSON file.
    #[arg(long, value_name = "FILE")]
    pub cost_config: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Maximum concurrent items (bench) or probe requests (run).
    #[arg(long, value_name = "N")]
    pub parallel: Option<usize>,
    /// Record wall-clock timing in traces (makes them non-reproducible).
    #[arg(long)]
    pub timing: bool,
}

/// Recursively overlays `top` onto `base`; objects merge, everything else replaces.
pub fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

pub fn read_json(path: &Path) -> Result<Value, CliError> {
    let raw = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&raw)
        .map_err(|e| CliError::Config(format!("{} is not valid JSON: {e}", path.display())))
}

fn remote(url: &str, model: Option<&String>, existing: &BackendSpec) -> BackendSpec {
    let mut ep = match existing {
        BackendSpec::Remote(ep) => ep.clone(),
        BackendSpec::Synthetic { .. } => ServerEndpoint::default(),
    };
    ep.base_url = url.to_string();
    if let Some(m) = model {
        ep.model = m.clone();
    }
    BackendSpec::Remote(ep)
}

impl ConfigFlags {
    /// Resolves the effective config; `overrides` sits between the file and the flags.
    pub fn resolve(&self, overrides: Option<Value>) -> Result<PipelineConfig, CliError> {
        let mut value = serde_json::to_value(PipelineConfig::default())
            .map_err(|e| CliError::Internal(e.to_string()))?;
        if let Some(path) = &self.config {
            merge(&mut value, read_json(path)?);
        }
        if let Some(o) = overrides {
            merge(&mut value, o);
        }
        let mut cfg: PipelineConfig = serde_json::from_value(value)
            .map_err(|e| CliError::Config(format!("invalid pipeline config: {e}")))?;

        if let Some(k) = self.k {
            cfg.k = k;
        }
        if let Some(g) = self.gamma0 {
            cfg.gamma0 = g;
        }
        if let Some(m) = self.mode {
            cfg.mode = m;
        }
        if let Some(o) = self.order {
            cfg.ordering = o;
        }
        if self.collate {
            cfg.collate = true;
        }
        if let Some(r) = self.probe_res {
            cfg.probe_resolution = r;
        }
        if let Some(r) = self.focused_res {
            cfg.focused_resolution = r;
        }
        if let Some(url) = &self.selector_endpoint {
            cfg.selector = remote(url, self.selector_model.as_ref(), &cfg.selector);
        }
        if let Some(url) = &self.qa_endpoint {
            cfg.qa = remote(url, self.qa_model.as_ref(), &cfg.qa);
        }
        if let Some(ms) = self.timeout_ms {
            for spec in [&mut cfg.selector, &mut cfg.qa] {
                if let BackendSpec::Remote(ep) = spec {
                    ep.timeout = Duration::from_millis(ms);
                }
            }
        }
        if let Some(n) = self.retries {
            cfg.retry.max_retries = n;
        }
        if let Some(c) = &self.cost_config {
            cfg.cost = CostConfig::resolve(c).map_err(|e| CliError::Config(e.to_string()))?;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(p) = self.parallel {
            cfg.parallelism = p;
        }
        if self.timing {
            cfg.record_timing = true;
        }
        cfg.validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn merge_is_deep() {
        let mut base = json!({"a": 1, "b": {"x": 1, "y": 2}});
        merge(&mut base, json!({"b": {"y": 3}, "c": [1]}));
        assert_eq!(base, json!({"a": 1, "b": {"x": 1, "y": 3}, "c": [1]}));
    }

    #[test]
    fn flags_beat_file_beat_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(
            &path,
            r#"{"k": 6, "gamma0": 0.5, "ordering": "importance"}"#,
        )
        .unwrap();
        let flags = ConfigFlags {
            config: Some(path),
            k: Some(8),
            ..ConfigFlags::default()
        };
        let cfg = flags.resolve(Some(json!({"gamma0": 0.4}))).unwrap();
        assert_eq!(cfg.k, 8);
        assert_eq!(cfg.gamma0, 0.4);
        assert_eq!(cfg.ordering, FrameOrder::Importance);
        assert_eq!(cfg.probe_resolution, Resolution::square(224));
    }

    #[test]
    fn endpoint_flags_build_remote_backends() {
        let flags = ConfigFlags {
            selector_endpoint: Some("http://127.0.0.1:9".into()),
            selector_model: Some("small".into()),
            timeout_ms: Some(1500),
            ..ConfigFlags::default()
        };
        let cfg = flags.resolve(None).unwrap();
        match &cfg.selector {
            BackendSpec::Remote(ep) => {
                assert_eq!(ep.model, "small");
                assert_eq!(ep.timeout, Duration::from_millis(1500));
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(cfg.qa, BackendSpec::Synthetic { .. }));
    }

    #[test]
    fn invalid_values_are_config_errors() {
        let flags = ConfigFlags {
            k: Some(1),
            ..ConfigFlags::default()
        };
        assert!(matches!(flags.resolve(None), Err(CliError::Config(_))));
        let flags = ConfigFlags {
            cost_config: Some("no-such-preset".into()),
            ..ConfigFlags::default()
        };
        assert!(matches!(flags.resolve(None), Err(CliError::Config(_))));
    }
}
