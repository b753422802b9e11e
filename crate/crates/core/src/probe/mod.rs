//! Answer posteriors and the backends that produce them.
//!
//! A backend maps (frames, question, answer labels) to a normalized posterior
//! over the labels. The probe confidence of a frame subset is the peak of
//! that posterior.

mod imaging;
mod letter;
mod remote;
mod synthetic;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::BackendError;
use crate::grid::FrameRef;

pub use imaging::{compose_tiles, render_frame, render_synthetic};
pub use letter::letter_posterior_from_logprobs;
pub use remote::{RemoteBackend, RetryPolicy, ServerEndpoint, API_KEY_ENV};
pub use synthetic::{
    sufficiency, synthetic_posterior, EvidenceRef, Regime, SyntheticBackend, SyntheticEpisode,
};

const SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct AnswerSpace {
    labels: Vec<String>,
}

impl AnswerSpace {
    pub fn new<S: Into<String>>(labels: impl IntoIterator<Item = S>) -> Result<Self, BackendError> {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        if labels.len() < 2 {
            return Err(BackendError::AnswerSpace(format!(
                "need at least 2 labels, got {}",
                labels.len()
            )));
        }
        for (i, l) in labels.iter().enumerate() {
            if l.trim().is_empty() {
                return Err(BackendError::AnswerSpace("empty label".into()));
            }
            if labels[..i].contains(l) {
                return Err(BackendError::AnswerSpace(format!("duplicate label {l:?}")));
            }
        }
        Ok(Self { labels })
    }

    /// `A`, `B`, ... for `n` options (n ≤ 26).
    pub fn letters(n: usize) -> Result<Self, BackendError> {
        if n > 26 {
            return Err(BackendError::AnswerSpace(format!("{n} letter options")));
        }
        Self::new((0..n).map(|i| ((b'A' + i as u8) as char).to_string()))
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn contains(&self, label: &str) -> bool {
        self.index_of(label).is_some()
    }
}

impl TryFrom<Vec<String>> for AnswerSpace {
    type Error = BackendError;

    fn try_from(labels: Vec<String>) -> Result<Self, Self::Error> {
        Self::new(labels)
    }
}

impl From<AnswerSpace> for Vec<String> {
    fn from(space: AnswerSpace) -> Self {
        space.labels
    }
}

/// Probability vector aligned with an [`AnswerSpace`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Posterior {
    probabilities: Vec<f64>,
}

impl Posterior {
    pub fn new(probabilities: Vec<f64>) -> Result<Self, BackendError> {
        if probabilities.len() < 2 {
            return Err(BackendError::Posterior(format!(
                "{} entries",
                probabilities.len()
            )));
        }
        if let Some(p) = probabilities
            .iter()
            .find(|p| !p.is_finite() || **p < 0.0 || **p > 1.0)
        {
            return Err(BackendError::Posterior(format!("entry {p} outside [0, 1]")));
        }
        let sum: f64 = probabilities.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(BackendError::Posterior(format!("sums to {sum}")));
        }
        Ok(Self { probabilities })
    }

    pub fn uniform(n: usize) -> Result<Self, BackendError> {
        Self::new(vec![1.0 / n as f64; n])
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn len(&self) -> usize {
        self.probabilities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probabilities.is_empty()
    }

    /// Index of the most probable label; ties go to the earliest label.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probabilities.iter().enumerate().skip(1) {
            if p > self.probabilities[best] {
                best = i;
            }
        }
        best
    }

    pub fn answer<'a>(&self, space: &'a AnswerSpace) -> &'a str {
        &space.labels()[self.argmax()]
    }
}

impl TryFrom<Vec<f64>> for Posterior {
    type Error = BackendError;

    fn try_from(p: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(p)
    }
}

impl From<Posterior> for Vec<f64> {
    fn from(p: Posterior) -> Self {
        p.probabilities
    }
}

/// Peak of the posterior: how confidently a single answer can be committed to.
pub fn probe_confidence(posterior: &Posterior) -> f64 {
    posterior
        .probabilities
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Resolution {
    pub width: u32,
    pub height: u32,
}

impl Resolution {
    pub const fn new(width: u32, height: u32) -> Self {
        Self { width, height }
    }

    pub const fn square(side: u32) -> Self {
        Self::new(side, side)
    }
}

impl fmt::Display for Resolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.width, self.height)
    }
}

impl FromStr for Resolution {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (w, h) = s
            .split_once(['x', 'X'])
            .ok_or_else(|| format!("expected WxH, got {s:?}"))?;
        let w: u32 = w.trim().parse().map_err(|e| format!("width: {e}"))?;
        let h: u32 = h.trim().parse().map_err(|e| format!("height: {e}"))?;
        if w == 0 || h == 0 {
            return Err(format!("resolution must be positive, got {s}"));
        }
        Ok(Self::new(w, h))
    }
}

/// How a set of frames is handed to the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputMode {
    /// One image per frame at the request resolution.
    #[default]
    FrameSequence,
    /// All frames tiled row-major into a single image; the request
    /// resolution is the canvas size.
    TiledCollage,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeRequest {
    pub frames: Vec<FrameRef>,
    pub question: String,
    pub answer_space: AnswerSpace,
    pub resolution: Resolution,
    pub input_mode: InputMode,
}

impl ProbeRequest {
    pub fn validate(&self) -> Result<(), BackendError> {
        if self.frames.is_empty() {
            return Err(BackendError::Config("probe request without frames".into()));
        }
        if self.resolution.width == 0 || self.resolution.height == 0 {
            return Err(BackendError::Config(format!(
                "non-positive resolution {}",
                self.resolution
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackendResponse {
    pub posterior: Posterior,
    /// Attempts beyond the first that the transport needed.
    pub retries: u32,
}

/// Anything that can score an answer posterior for a frame subset.
pub trait PosteriorBackend: Send + Sync {
    /// Stable identity recorded in traces, e.g. `synthetic(eta=0)` or a model URL.
    fn identity(&self) -> String;

    fn posterior(&self, request: &ProbeRequest) -> Result<BackendResponse, BackendError>;

    /// Upper bound on concurrent requests; `None` means unrestricted and
    /// `Some(1)` declares the backend serialized.
    fn max_in_flight(&self) -> Option<usize> {
        None
    }
}
