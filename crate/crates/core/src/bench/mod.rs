//! Synthetic evaluation harness: suites of planted-evidence episodes run
//! through every strategy, reduced to accuracy/compute reports.

mod episode;
mod report;

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tracing::info;

use crate::error::PipelineError;
use crate::pipeline::{run, BackendPool, PipelineConfig, QuestionItem, Strategy, Trace};
use crate::probe::{Regime, SyntheticEpisode};

pub use episode::{generate_episode, RegimeSpec, Span, WeightDist};
pub use report::{
    BenchReport, ParetoRow, RegimeStrategySummary, RegimeSummary, SkewBucket, StrategySummary,
    REPORT_SCHEMA_VERSION,
};

pub const SUITE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteEntry {
    pub spec: RegimeSpec,
    /// Explicit seeds; when absent, `count` seeds from `seed_start`.
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
    #[serde(default)]
    pub count: usize,
    #[serde(default)]
    pub seed_start: u64,
}

impl SuiteEntry {
    pub fn seeds(&self) -> Vec<u64> {
        match &self.seeds {
            Some(s) => s.clone(),
            None => (0..self.count as u64)
                .map(|i| self.seed_start + i)
                .collect(),
        }
    }
}

/// Episode suite file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Suite {
    #[serde(default = "suite_schema_version")]
    pub schema_version: u32,
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub k: Option<usize>,
    pub entries: Vec<SuiteEntry>,
}

fn suite_schema_version() -> u32 {
    SUITE_SCHEMA_VERSION
}

/// One generated episode with its stable id.
#[derive(Debug, Clone)]
pub struct SuiteEpisode {
    pub id: String,
    pub episode: SyntheticEpisode,
}

impl Suite {
    pub fn from_json(raw: &str, context: &str) -> Result<Self, PipelineError> {
        let suite: Self = serde_json::from_str(raw).map_err(|source| PipelineError::Json {
            context: context.into(),
            source,
        })?;
        if suite.schema_version != SUITE_SCHEMA_VERSION {
            return Err(PipelineError::Config(format!(
                "suite schema_version {} unsupported",
                suite.schema_version
            )));
        }
        Ok(suite)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let raw = std::fs::read_to_string(path).map_err(|source| PipelineError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&raw, &path.display().to_string())
    }

    /// Equal-count suite over the given regimes with default knobs.
    pub fn balanced(regimes: &[Regime], per_regime: usize, seed_start: u64) -> Self {
        Self {
            schema_version: SUITE_SCHEMA_VERSION,
            name: "balanced".into(),
            k: None,
            entries: regimes
                .iter()
                .enumerate()
                .map(|(i, &r)| SuiteEntry {
                    spec: RegimeSpec::for_regime(r),
                    seeds: None,
                    count: per_regime,
                    seed_start: seed_start + (i as u64) * 1_000_000,
                })
                .collect(),
        }
    }

    pub fn episode_count(&self) -> usize {
        self.entries.iter().map(|e| e.seeds().len()).sum()
    }

    pub fn generate(&self, k: usize) -> Result<Vec<SuiteEpisode>, PipelineError> {
        if self.episode_count() == 0 {
            return Err(PipelineError::Config("suite has no episodes".into()));
        }
        let mut out = Vec::with_capacity(self.episode_count());
        for (e, entry) in self.entries.iter().enumerate() {
            for seed in entry.seeds() {
                out.push(SuiteEpisode {
                    id: format!("{}-{e:02}-{seed}", entry.spec.regime.as_str()),
                    episode: generate_episode(&entry.spec, k, seed)?,
                });
            }
        }
        Ok(out)
    }
}

/// Trace of one (episode, strategy) run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ItemResult {
    pub item_id: String,
    pub regime: Regime,
    pub trace: Trace,
}

/// Every strategy's traces over a suite, in episode order.
#[derive(Debug, Clone)]
pub struct BenchRun {
    pub strategies: Vec<Strategy>,
    pub cfg: PipelineConfig,
    pub results: Vec<Vec<ItemResult>>,
}

impl BenchRun {
    pub fn traces(&self, strategy: Strategy) -> Option<&[ItemResult]> {
        let i = self.strategies.iter().position(|s| *s == strategy)?;
        Some(&self.results[i])
    }

    pub fn report(&self) -> BenchReport {
        report::build(self)
    }
}

/// Runs every strategy on every episode. Items run concurrently up to
/// `cfg.parallelism`; results keep episode order.
pub fn run_suite(
    strategies: &[Strategy],
    episodes: &[SuiteEpisode],
    cfg: &PipelineConfig,
) -> Result<BenchRun, PipelineError> {
    if strategies.is_empty() || episodes.is_empty() {
        return Err(PipelineError::Config(
            "benchmark needs at least one strategy and one episode".into(),
        ));
    }
    cfg.validate()?;
    let backends = BackendPool::new(cfg)?;
    let items: Vec<(Regime, QuestionItem)> = episodes
        .iter()
        .map(|e| {
            (
                e.episode.regime,
                QuestionItem::from_episode(e.id.clone(), e.episode.clone()),
            )
        })
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.parallelism)
        .build()
        .map_err(|e| PipelineError::Config(format!("thread pool: {e}")))?;

    let mut results = Vec::with_capacity(strategies.len());
    for &strategy in strategies {
        let scfg = PipelineConfig {
            mode: strategy,
            // items already run concurrently; keep each item's probes serial
            parallelism: 1,
            ..cfg.clone()
        };
        scfg.validate()?;
        let traces: Result<Vec<ItemResult>, PipelineError> = pool.install(|| {
            items
                .par_iter()
                .map(|(regime, item)| {
                    let b = backends.for_item(item)?;
                    Ok(ItemResult {
                        item_id: item.id.clone(),
                        regime: *regime,
                        trace: run(&scfg, item, &b)?,
                    })
                })
                .collect()
        });
        let traces = traces?;
        info!(%strategy, items = traces.len(), "strategy complete");
        results.push(traces);
    }
    Ok(BenchRun {
        strategies: strategies.to_vec(),
        cfg: cfg.clone(),
        results,
    })
}

pub fn evaluate(
    strategies: &[Strategy],
    episodes: &[SuiteEpisode],
    cfg: &PipelineConfig,
) -> Result<BenchReport, PipelineError> {
    Ok(run_suite(strategies, episodes, cfg)?.report())
}
