//! Posterior-probing frame selection for multiple-choice video QA.
//!
//! A pool of K² frames is laid out as a K×K grid. Each row and each column is
//! shown to an answering model once; the peak of its answer posterior scores
//! that axis. The outer product of row and column scores is a per-frame
//! importance map, the map's skewness and kurtosis set how many frames to keep,
//! and a single focused pass over the kept frames answers the question.
//!
//! Backends implement [`probe::PosteriorBackend`]. A deterministic evidence
//! oracle ([`probe::SyntheticBackend`]) and an OpenAI-style chat-completions
//! client ([`probe::RemoteBackend`]) ship with the crate.

pub mod bench;
pub mod compute;
pub mod error;
pub mod grid;
pub mod importance;
pub mod pipeline;
pub mod probe;
pub mod selection;

pub use error::{BackendError, GridError, PipelineError};
pub use grid::{sample_uniform, Axis, FrameRef, FrameSource, FrameSubset, Grid};
pub use importance::{
    effective_budget, moments, shape_of_values, shape_statistic, BudgetRule, ImportanceMap,
    ShapeStats,
};
pub use pipeline::{
    run, run_fixed_m, run_gridprobe, run_monolithic, run_uniform_control, BackendSpec, Backends,
    PipelineConfig, QuestionItem, Strategy, Trace,
};
pub use probe::{AnswerSpace, Posterior, PosteriorBackend, ProbeRequest, Resolution};
pub use selection::{collate_layout, order_frames, select_top, FrameOrder, SelectionPlan};
