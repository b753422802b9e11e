//! Two-stage probe-then-answer orchestration and the baseline strategies.
//!
//! Stage 1 scores K row subsets and K column subsets through the selector
//! backend and multiplies their confidences into the importance map. The map's
//! shape fixes the frame budget, and stage 2 runs one focused pass over the
//! top cells through the QA backend.

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering as AtomicOrdering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use tracing::debug;

use crate::compute::{
    estimate_text_tokens, pipeline_cost, tokens_per_frame, CostBreakdown, CostConfig, PassSchedule,
};
use crate::error::{BackendError, PipelineError};
use crate::grid::{sample_uniform, Axis, FrameRef, Grid};
use crate::importance::{effective_budget, shape_statistic, BudgetRule, ImportanceMap, ShapeStats};
use crate::probe::{
    probe_confidence, AnswerSpace, BackendResponse, InputMode, Posterior, PosteriorBackend,
    ProbeRequest, RemoteBackend, Resolution, RetryPolicy, ServerEndpoint, SyntheticBackend,
    SyntheticEpisode,
};
use crate::selection::{select_top, FrameOrder, SelectedCell, SelectionPlan, DEFAULT_CANVAS};

pub const TRACE_SCHEMA_VERSION: u32 = 1;

/// How the focused frame set is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub enum Strategy {
    /// Budget from the map shape, frames by map rank.
    #[default]
    Auto,
    /// Probe stage as usual, budget pinned to `M`.
    Fixed(usize),
    /// No probe stage; one pass over the whole pool.
    Monolithic,
    /// Budget from the map shape, frames spread uniformly over the pool.
    Uniform,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::Auto => f.write_str("auto"),
            Strategy::Fixed(m) => write!(f, "fixed:{m}"),
            Strategy::Monolithic => f.write_str("monolithic"),
            Strategy::Uniform => f.write_str("uniform"),
        }
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "auto" => Ok(Strategy::Auto),
            "monolithic" => Ok(Strategy::Monolithic),
            "uniform" => Ok(Strategy::Uniform),
            other => match other.strip_prefix("fixed:") {
                Some(m) => m
                    .parse::<usize>()
                    .map(Strategy::Fixed)
                    .map_err(|e| format!("fixed budget {m:?}: {e}")),
                None => Err(format!(
                    "unknown mode {other:?} (expected auto, fixed:M, monolithic or uniform)"
                )),
            },
        }
    }
}

impl Serialize for Strategy {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Strategy {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

/// Which posterior backend to build for a role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendSpec {
    /// Evidence oracle over the item's synthetic episode.
    Synthetic {
        #[serde(default)]
        noise: Option<f64>,
    },
    Remote(ServerEndpoint),
}

impl Default for BackendSpec {
    fn default() -> Self {
        BackendSpec::Synthetic { noise: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub k: usize,
    pub gamma0: f64,
    pub variance_threshold: f64,
    pub probe_resolution: Resolution,
    pub probe_input_mode: InputMode,
    pub focused_resolution: Resolution,
    pub ordering: FrameOrder,
    pub collate: bool,
    pub collation_canvas: Resolution,
    pub mode: Strategy,
    pub selector: BackendSpec,
    pub qa: BackendSpec,
    pub parallelism: usize,
    pub retry: RetryPolicy,
    pub seed: u64,
    /// Wall-clock timings make traces non-reproducible, so they are opt-in.
    pub record_timing: bool,
    pub cost: CostConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            k: 12,
            gamma0: 0.25,
            variance_threshold: 1e-9,
            probe_resolution: Resolution::square(224),
            probe_input_mode: InputMode::FrameSequence,
            focused_resolution: Resolution::square(448),
            ordering: FrameOrder::Temporal,
            collate: false,
            collation_canvas: DEFAULT_CANVAS,
            mode: Strategy::Auto,
            selector: BackendSpec::default(),
            qa: BackendSpec::default(),
            parallelism: 1,
            retry: RetryPolicy::default(),
            seed: 0,
            record_timing: false,
            cost: CostConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.k < 2 {
            return Err(PipelineError::Config(format!(
                "K must be ≥ 2, got {}",
                self.k
            )));
        }
        self.budget_rule()?;
        if let Strategy::Fixed(m) = self.mode {
            if m == 0 || m > self.k * self.k {
                return Err(PipelineError::Config(format!(
                    "fixed budget {m} outside [1, {}]",
                    self.k * self.k
                )));
            }
        }
        for res in [
            self.probe_resolution,
            self.focused_resolution,
            self.collation_canvas,
        ] {
            if res.width == 0 || res.height == 0 {
                return Err(PipelineError::Config(format!(
                    "resolution {res} not positive"
                )));
            }
        }
        if self.parallelism == 0 {
            return Err(PipelineError::Config("parallelism must be ≥ 1".into()));
        }
        self.cost.validate()
    }

    pub fn budget_rule(&self) -> Result<BudgetRule, PipelineError> {
        BudgetRule::new(self.gamma0, self.variance_threshold).map_err(PipelineError::Config)
    }

    pub fn with_mode(&self, mode: Strategy) -> Self {
        Self {
            mode,
            ..self.clone()
        }
    }
}

/// One question over one frame pool.
#[derive(Debug, Clone)]
pub struct QuestionItem {
    pub id: String,
    pub question: String,
    pub answer_space: AnswerSpace,
    pub truth: Option<String>,
    /// Timeline-ordered candidate frames; must hold exactly K² entries.
    pub pool: Vec<FrameRef>,
    pub episode: Option<Arc<SyntheticEpisode>>,
}

impl QuestionItem {
    pub fn from_episode(id: impl Into<String>, episode: SyntheticEpisode) -> Self {
        Self {
            id: id.into(),
            question: episode.question.clone(),
            answer_space: episode.answer_space.clone(),
            truth: Some(episode.truth_label.clone()),
            pool: episode.pool(),
            episode: Some(Arc::new(episode)),
        }
    }
}

/// The selector (probe stage) and QA (focused pass) handles.
#[derive(Clone)]
pub struct Backends {
    pub selector: Arc<dyn PosteriorBackend>,
    pub qa: Arc<dyn PosteriorBackend>,
}

impl Backends {
    /// Same handle in both roles.
    pub fn shared(backend: Arc<dyn PosteriorBackend>) -> Self {
        Self {
            selector: backend.clone(),
            qa: backend,
        }
    }

    /// Builds both roles from `cfg` for `item`. Remote handles are cheap to
    /// rebuild but callers running many items should prefer [`BackendPool`].
    pub fn for_item(cfg: &PipelineConfig, item: &QuestionItem) -> Result<Self, PipelineError> {
        BackendPool::new(cfg)?.for_item(item)
    }
}

/// Reusable remote handles plus per-item synthetic oracles.
pub struct BackendPool {
    selector: Role,
    qa: Role,
}

enum Role {
    Synthetic {
        noise: Option<f64>,
        name: &'static str,
    },
    Remote(Arc<dyn PosteriorBackend>),
}

impl BackendPool {
    pub fn new(cfg: &PipelineConfig) -> Result<Self, PipelineError> {
        let build = |spec: &BackendSpec, name: &'static str| -> Result<Role, PipelineError> {
            Ok(match spec {
                BackendSpec::Synthetic { noise } => Role::Synthetic {
                    noise: *noise,
                    name,
                },
                BackendSpec::Remote(endpoint) => Role::Remote(Arc::new(RemoteBackend::new(
                    endpoint.clone(),
                    cfg.retry.clone(),
                )?)),
            })
        };
        Ok(Self {
            selector: build(&cfg.selector, "synthetic-selector")?,
            qa: build(&cfg.qa, "synthetic-qa")?,
        })
    }

    pub fn for_item(&self, item: &QuestionItem) -> Result<Backends, PipelineError> {
        let make = |role: &Role| -> Result<Arc<dyn PosteriorBackend>, PipelineError> {
            match role {
                Role::Remote(b) => Ok(b.clone()),
                Role::Synthetic { noise, name } => {
                    let episode = item.episode.clone().ok_or_else(|| {
                        PipelineError::Config(format!(
                            "item {} has no synthetic episode for the oracle backend",
                            item.id
                        ))
                    })?;
                    let mut b = SyntheticBackend::new(episode).named(*name);
                    if let Some(n) = noise {
                        b = b.with_noise(*n);
                    }
                    Ok(Arc::new(b))
                }
            }
        };
        Ok(Backends {
            selector: make(&self.selector)?,
            qa: make(&self.qa)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub axis: Axis,
    pub index: usize,
    pub pool_indices: Vec<usize>,
    pub confidence: f64,
    pub retries: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub probe_ms: f64,
    pub focused_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub stage: String,
    pub kind: String,
    pub message: String,
}

/// Everything one question run produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub schema_version: u32,
    pub item_id: String,
    pub strategy: Strategy,
    pub k: usize,
    pub selector_backend: String,
    pub qa_backend: String,
    pub probes: Vec<ProbeRecord>,
    pub map: Option<ImportanceMap>,
    pub shape: Option<ShapeStats>,
    pub m_eff: Option<usize>,
    pub selection: Option<SelectionPlan>,
    pub posterior: Option<Posterior>,
    pub answer: Option<String>,
    pub truth: Option<String>,
    pub correct: Option<bool>,
    pub cost: Option<CostBreakdown>,
    pub retries: u32,
    pub timing: Option<Timing>,
    pub failure: Option<FailureRecord>,
}

impl Trace {
    fn start(cfg: &PipelineConfig, item: &QuestionItem, backends: &Backends) -> Self {
        Self {
            schema_version: TRACE_SCHEMA_VERSION,
            item_id: item.id.clone(),
            strategy: cfg.mode,
            k: cfg.k,
            selector_backend: backends.selector.identity(),
            qa_backend: backends.qa.identity(),
            probes: Vec::new(),
            map: None,
            shape: None,
            m_eff: None,
            selection: None,
            posterior: None,
            answer: None,
            truth: item.truth.clone(),
            correct: None,
            cost: None,
            retries: 0,
            timing: None,
            failure: None,
        }
    }

    pub fn is_failure(&self) -> bool {
        self.failure.is_some()
    }

    /// The focused-pass frame set in the order it was presented.
    pub fn focused_frames(&self) -> Option<&[usize]> {
        self.selection.as_ref().map(|s| s.frame_order.as_slice())
    }

    fn fail(mut self, stage: &str, err: &PipelineError) -> Self {
        let kind = match err {
            PipelineError::Backend(b) => b.kind().to_string(),
            PipelineError::Grid(_) => "grid".into(),
            PipelineError::Config(_) => "config".into(),
            _ => "internal".into(),
        };
        self.failure = Some(FailureRecord {
            stage: stage.into(),
            kind,
            message: err.to_string(),
        });
        self
    }
}

/// Runs `cfg.mode` on `item`. Backend errors come back as a failure trace;
/// configuration errors are returned as `Err`.
pub fn run(
    cfg: &PipelineConfig,
    item: &QuestionItem,
    backends: &Backends,
) -> Result<Trace, PipelineError> {
    cfg.validate()?;
    if item.pool.len() != cfg.k * cfg.k {
        return Err(PipelineError::Config(format!(
            "item {} has {} frames, K={} needs {}",
            item.id,
            item.pool.len(),
            cfg.k,
            cfg.k * cfg.k
        )));
    }
    let grid = Grid::build(item.pool.clone(), cfg.k)?;
    let started = Instant::now();
    let mut trace = Trace::start(cfg, item, backends);

    let cells = if cfg.mode == Strategy::Monolithic {
        let cells = (0..grid.len())
            .map(|i| SelectedCell {
                row: i / cfg.k,
                col: i % cfg.k,
                pool_index: i,
                value: 1.0,
            })
            .collect::<Vec<_>>();
        trace.m_eff = Some(grid.len());
        cells
    } else {
        let (records, retries) = match probe_stage(cfg, &grid, item, backends.selector.as_ref()) {
            Ok(r) => r,
            Err(e) => return Ok(trace.fail("probe", &e)),
        };
        trace.retries += retries;
        let rows: Vec<f64> = records[..cfg.k].iter().map(|r| r.confidence).collect();
        let cols: Vec<f64> = records[cfg.k..].iter().map(|r| r.confidence).collect();
        trace.probes = records;
        let map = ImportanceMap::build(&rows, &cols)?;
        let rule = cfg.budget_rule()?;
        let shape = shape_statistic(&map, &rule);
        let auto_budget = effective_budget(&shape, cfg.k, &rule);
        let m_eff = match cfg.mode {
            Strategy::Fixed(m) => m,
            _ => auto_budget,
        };
        let cells = match cfg.mode {
            Strategy::Uniform => sample_uniform(grid.len(), m_eff)?
                .into_iter()
                .map(|i| SelectedCell {
                    row: i / cfg.k,
                    col: i % cfg.k,
                    pool_index: i,
                    value: map.get(i / cfg.k, i % cfg.k),
                })
                .collect(),
            _ => select_top(&map, m_eff)?,
        };
        debug!(item = %item.id, sigma = shape.sigma, m_eff, "probe stage complete");
        trace.map = Some(map);
        trace.shape = Some(shape);
        trace.m_eff = Some(m_eff);
        cells
    };
    let probe_done = Instant::now();

    let plan = SelectionPlan::new(
        cells,
        cfg.ordering,
        cfg.collate.then_some(cfg.collation_canvas),
    );
    let focused = ProbeRequest {
        frames: plan
            .frame_order
            .iter()
            .map(|&i| grid.cells()[i].clone())
            .collect(),
        question: item.question.clone(),
        answer_space: item.answer_space.clone(),
        resolution: if cfg.collate {
            cfg.collation_canvas
        } else {
            cfg.focused_resolution
        },
        input_mode: if cfg.collate {
            InputMode::TiledCollage
        } else {
            InputMode::FrameSequence
        },
    };
    trace.cost = Some(cost_of(cfg, item, &trace.probes, &plan));
    trace.selection = Some(plan);

    let response = match backends.qa.posterior(&focused) {
        Ok(r) => r,
        Err(e) => return Ok(trace.fail("focused", &PipelineError::Backend(e))),
    };
    trace.retries += response.retries;
    let answer = response.posterior.answer(&item.answer_space).to_string();
    trace.correct = item.truth.as_ref().map(|t| *t == answer);
    trace.answer = Some(answer);
    trace.posterior = Some(response.posterior);
    if cfg.record_timing {
        let done = Instant::now();
        trace.timing = Some(Timing {
            probe_ms: (probe_done - started).as_secs_f64() * 1e3,
            focused_ms: (done - probe_done).as_secs_f64() * 1e3,
            total_ms: (done - started).as_secs_f64() * 1e3,
        });
    }
    Ok(trace)
}

pub fn run_gridprobe(
    cfg: &PipelineConfig,
    item: &QuestionItem,
    backends: &Backends,
) -> Result<Trace, PipelineError> {
    run(&cfg.with_mode(Strategy::Auto), item, backends)
}

pub fn run_monolithic(
    cfg: &PipelineConfig,
    item: &QuestionItem,
    backends: &Backends,
) -> Result<Trace, PipelineError> {
    run(&cfg.with_mode(Strategy::Monolithic), item, backends)
}

pub fn run_fixed_m(
    cfg: &PipelineConfig,
    m: usize,
    item: &QuestionItem,
    backends: &Backends,
) -> Result<Trace, PipelineError> {
    run(&cfg.with_mode(Strategy::Fixed(m)), item, backends)
}

pub fn run_uniform_control(
    cfg: &PipelineConfig,
    item: &QuestionItem,
    backends: &Backends,
) -> Result<Trace, PipelineError> {
    run(&cfg.with_mode(Strategy::Uniform), item, backends)
}

/// Issues the 2K probes (rows first, then columns). Records come back in that
/// order whatever order the requests complete in.
fn probe_stage(
    cfg: &PipelineConfig,
    grid: &Grid,
    item: &QuestionItem,
    selector: &dyn PosteriorBackend,
) -> Result<(Vec<ProbeRecord>, u32), PipelineError> {
    let k = grid.k();
    let subsets = [Axis::Row, Axis::Column]
        .into_iter()
        .flat_map(|axis| (0..k).map(move |i| (axis, i)))
        .map(|(axis, i)| grid.subset(axis, i))
        .collect::<Result<Vec<_>, _>>()?;
    let requests: Vec<ProbeRequest> = subsets
        .iter()
        .map(|s| ProbeRequest {
            frames: s.frames.clone(),
            question: item.question.clone(),
            answer_space: item.answer_space.clone(),
            resolution: cfg.probe_resolution,
            input_mode: cfg.probe_input_mode,
        })
        .collect();

    let workers = cfg
        .parallelism
        .min(selector.max_in_flight().unwrap_or(usize::MAX))
        .min(requests.len())
        .max(1);
    // Once a probe fails the item is lost, so no further requests are issued.
    let results: Vec<Option<Result<BackendResponse, BackendError>>> = if workers == 1 {
        let mut out: Vec<_> = requests.iter().map(|_| None).collect();
        for (slot, req) in out.iter_mut().zip(&requests) {
            let r = selector.posterior(req);
            let failed = r.is_err();
            *slot = Some(r);
            if failed {
                break;
            }
        }
        out
    } else {
        let slots: Vec<Mutex<Option<Result<BackendResponse, BackendError>>>> =
            requests.iter().map(|_| Mutex::new(None)).collect();
        let next = AtomicUsize::new(0);
        let failed = AtomicBool::new(false);
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    if failed.load(AtomicOrdering::Relaxed) {
                        break;
                    }
                    let i = next.fetch_add(1, AtomicOrdering::Relaxed);
                    let Some(req) = requests.get(i) else { break };
                    let out = selector.posterior(req);
                    if out.is_err() {
                        failed.store(true, AtomicOrdering::Relaxed);
                    }
                    *slots[i].lock().expect("probe slot poisoned") = Some(out);
                });
            }
        });
        slots
            .into_iter()
            .map(|s| s.into_inner().expect("probe slot poisoned"))
            .collect()
    };
    if let Some(pos) = results.iter().position(|r| matches!(r, Some(Err(_)))) {
        let Some(Some(Err(e))) = results.into_iter().nth(pos) else {
            unreachable!()
        };
        return Err(e.into());
    }

    let mut records = Vec::with_capacity(results.len());
    let mut retries = 0;
    for (subset, result) in subsets.into_iter().zip(results) {
        let response = result.expect("all probes ran when none failed")?;
        retries += response.retries;
        records.push(ProbeRecord {
            axis: subset.axis,
            index: subset.axis_index,
            pool_indices: subset.pool_indices(),
            confidence: probe_confidence(&response.posterior),
            retries: response.retries,
        });
    }
    Ok((records, retries))
}

fn cost_of(
    cfg: &PipelineConfig,
    item: &QuestionItem,
    probes: &[ProbeRecord],
    plan: &SelectionPlan,
) -> CostBreakdown {
    let tok = cfg.cost.tokenizer();
    let probe_tokens = probes
        .iter()
        .map(|p| match cfg.probe_input_mode {
            InputMode::FrameSequence => {
                p.pool_indices.len() as u64 * tokens_per_frame(cfg.probe_resolution, &tok)
            }
            InputMode::TiledCollage => tokens_per_frame(cfg.probe_resolution, &tok),
        })
        .collect();
    let focused_tokens = if cfg.collate {
        tokens_per_frame(cfg.collation_canvas, &tok)
    } else {
        plan.m_eff as u64 * tokens_per_frame(cfg.focused_resolution, &tok)
    };
    pipeline_cost(
        &PassSchedule {
            probe_tokens,
            focused_tokens,
            text_tokens: estimate_text_tokens(&item.question),
            m_eff: plan.m_eff,
        },
        &cfg.cost.model(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::probe::EvidenceRef;
    use crate::probe::Regime;
    use std::collections::BTreeMap;

    fn episode(k: usize, evidence_at: &[usize]) -> SyntheticEpisode {
        let mut frames = vec![Vec::new(); k * k];
        let mut atoms = BTreeMap::new();
        if !evidence_at.is_empty() {
            atoms.insert(0, 1.0);
        }
        for &i in evidence_at {
            frames[i].push(EvidenceRef {
                atom: 0,
                weight: 1.0,
            });
        }
        SyntheticEpisode {
            k,
            frames,
            atoms,
            truth_label: "C".into(),
            question: "What happens?".into(),
            answer_space: AnswerSpace::letters(4).unwrap(),
            regime: Regime::Localized,
            noise: 0.0,
            seed: 1,
        }
    }

    fn setup(k: usize, evidence_at: &[usize]) -> (PipelineConfig, QuestionItem, Backends) {
        let cfg = PipelineConfig {
            k,
            ..PipelineConfig::default()
        };
        let item = QuestionItem::from_episode("q", episode(k, evidence_at));
        let backends = Backends::for_item(&cfg, &item).unwrap();
        (cfg, item, backends)
    }

    #[test]
    fn strategy_round_trips() {
        for s in ["auto", "fixed:8", "monolithic", "uniform"] {
            assert_eq!(s.parse::<Strategy>().unwrap().to_string(), s);
        }
        assert!("fixed:x".parse::<Strategy>().is_err());
        assert!("best".parse::<Strategy>().is_err());
    }

    #[test]
    fn single_evidence_frame_is_found() {
        let (cfg, item, b) = setup(2, &[3]);
        let t = run_gridprobe(&cfg, &item, &b).unwrap();
        assert_eq!(t.probes.len(), 4);
        // rows (1/4, 1), cols (1/4, 1): map values 1/16, 1/4, 1/4, 1 -> sigma from
        // the two-level distribution; the peak cell is frame 3.
        let shape = t.shape.unwrap();
        let rule = BudgetRule::default();
        assert_eq!(t.m_eff, Some(effective_budget(&shape, 2, &rule)));
        assert!(t.m_eff.unwrap() < 4);
        let sel = t.selection.as_ref().unwrap();
        assert_eq!(sel.cells[0].pool_index, 3);
        assert_eq!(t.answer.as_deref(), Some("C"));
        assert_eq!(t.correct, Some(true));
    }

    #[test]
    fn no_evidence_falls_back_to_full_pool() {
        let (cfg, item, b) = setup(3, &[]);
        let t = run_gridprobe(&cfg, &item, &b).unwrap();
        assert!(t.shape.unwrap().degenerate);
        assert_eq!(t.m_eff, Some(9));
        let mono = run_monolithic(&cfg, &item, &b).unwrap();
        assert_eq!(t.focused_frames(), mono.focused_frames());
        assert!(mono.probes.is_empty());
        assert_eq!(mono.m_eff, Some(9));
        assert_eq!(mono.cost.as_ref().unwrap().passes, 1);
    }

    #[test]
    fn fixed_and_uniform_modes() {
        let (cfg, item, b) = setup(12, &[77]);
        let t = run_fixed_m(&cfg, 8, &item, &b).unwrap();
        assert_eq!(t.selection.as_ref().unwrap().cells.len(), 8);
        let t1 = run_fixed_m(&cfg, 1, &item, &b).unwrap();
        assert_eq!(t1.focused_frames(), Some(&[77][..]));
        let u = run(&cfg.with_mode(Strategy::Fixed(4)), &item, &b).unwrap();
        assert_eq!(u.m_eff, Some(4));
        let mut ucfg = cfg.with_mode(Strategy::Uniform);
        ucfg.gamma0 = 0.25;
        let ut = run(&ucfg, &item, &b).unwrap();
        let m = ut.m_eff.unwrap();
        let expected = sample_uniform(144, m).unwrap();
        assert_eq!(ut.focused_frames().unwrap(), expected.as_slice());
        assert!(run_fixed_m(&cfg, 145, &item, &b).is_err());
    }

    #[test]
    fn trace_marginals_match_probes() {
        let (cfg, item, b) = setup(4, &[5, 10]);
        let t = run_gridprobe(&cfg, &item, &b).unwrap();
        let map = t.map.as_ref().unwrap();
        for p in &t.probes {
            let marginal = match p.axis {
                Axis::Row => map.row_conf()[p.index],
                Axis::Column => map.col_conf()[p.index],
            };
            assert_eq!(marginal, p.confidence);
        }
    }

    #[test]
    fn parallel_probing_is_order_independent() {
        let (cfg, item, b) = setup(6, &[7, 20, 33]);
        let seq = run_gridprobe(&cfg, &item, &b).unwrap();
        let par_cfg = PipelineConfig {
            parallelism: 5,
            ..cfg
        };
        let par = run_gridprobe(&par_cfg, &item, &b).unwrap();
        assert_eq!(
            serde_json::to_string(&seq).unwrap(),
            serde_json::to_string(&par).unwrap()
        );
    }

    #[test]
    fn wrong_pool_size_is_config_error() {
        let (cfg, mut item, b) = setup(3, &[1]);
        item.pool.pop();
        assert!(matches!(
            run(&cfg, &item, &b),
            Err(PipelineError::Config(_))
        ));
    }

    struct Failing;

    impl PosteriorBackend for Failing {
        fn identity(&self) -> String {
            "failing".into()
        }

        fn posterior(&self, _: &ProbeRequest) -> Result<BackendResponse, BackendError> {
            Err(BackendError::Unscorable {
                tokens: vec!["x".into()],
            })
        }
    }

    #[test]
    fn backend_errors_become_failure_traces() {
        let (cfg, item, b) = setup(2, &[0]);
        let broken = Backends {
            selector: b.selector.clone(),
            qa: Arc::new(Failing),
        };
        let t = run_gridprobe(&cfg, &item, &broken).unwrap();
        let f = t.failure.as_ref().unwrap();
        assert_eq!(
            (f.stage.as_str(), f.kind.as_str()),
            ("focused", "unscorable")
        );
        assert_eq!(t.qa_backend, "failing");
        let t = run_gridprobe(&cfg, &item, &Backends::shared(Arc::new(Failing))).unwrap();
        assert_eq!(t.failure.unwrap().stage, "probe");
    }

    #[test]
    fn timing_is_opt_in() {
        let (mut cfg, item, b) = setup(2, &[0]);
        assert!(run_gridprobe(&cfg, &item, &b).unwrap().timing.is_none());
        cfg.record_timing = true;
        assert!(run_gridprobe(&cfg, &item, &b).unwrap().timing.is_some());
    }

    #[test]
    fn collation_uses_single_image_budget() {
        let (mut cfg, item, b) = setup(4, &[5]);
        cfg.collate = true;
        let t = run_gridprobe(&cfg, &item, &b).unwrap();
        let plan = t.selection.unwrap();
        let tiles = plan.collation.unwrap();
        assert!(tiles.side * tiles.side >= plan.m_eff);
        let per_canvas = tokens_per_frame(cfg.collation_canvas, &cfg.cost.tokenizer());
        let text = cfg.cost.prompt_tokens + estimate_text_tokens(&item.question);
        assert_eq!(t.cost.unwrap().focused_tokens, per_canvas + text);
    }
}
