//! Deterministic evidence oracle standing in for a frozen answering model.
//!
//! An episode plants weighted evidence atoms in frames. A frame subset's
//! sufficiency is the covered share of total atom weight, each atom counted
//! once however many selected frames carry it. The posterior moves mass from
//! a flat distribution onto the true label in proportion to sufficiency.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{AnswerSpace, BackendResponse, Posterior, PosteriorBackend, ProbeRequest};
use crate::error::BackendError;
use crate::grid::{synthetic_pool, FrameRef};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Localized,
    Redundant,
    Holistic,
    UniformNoise,
}

impl Regime {
    pub const ALL: [Regime; 4] = [
        Regime::Localized,
        Regime::Redundant,
        Regime::Holistic,
        Regime::UniformNoise,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Regime::Localized => "localized",
            Regime::Redundant => "redundant",
            Regime::Holistic => "holistic",
            Regime::UniformNoise => "uniform_noise",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceRef {
    pub atom: u32,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticEpisode {
    pub k: usize,
    /// Evidence carried by each pool frame, indexed by pool index.
    pub frames: Vec<Vec<EvidenceRef>>,
    pub atoms: BTreeMap<u32, f64>,
    pub truth_label: String,
    pub question: String,
    pub answer_space: AnswerSpace,
    pub regime: Regime,
    #[serde(default)]
    pub noise: f64,
    pub seed: u64,
}

impl SyntheticEpisode {
    pub fn validate(&self) -> Result<(), BackendError> {
        let bad = |m: String| Err(BackendError::Config(m));
        if self.k < 2 {
            return bad(format!("episode grid side {}", self.k));
        }
        if self.frames.len() != self.k * self.k {
            return bad(format!(
                "episode has {} frames, expected {}",
                self.frames.len(),
                self.k * self.k
            ));
        }
        if !(0.0..1.0).contains(&self.noise) {
            return bad(format!("noise {} outside [0, 1)", self.noise));
        }
        if !self.answer_space.contains(&self.truth_label) {
            return bad(format!("truth label {:?} not an answer", self.truth_label));
        }
        if self.atoms.values().any(|w| !w.is_finite() || *w < 0.0) {
            return bad("negative atom weight".into());
        }
        let referenced: BTreeSet<u32> = self.frames.iter().flatten().map(|e| e.atom).collect();
        for atom in self.atoms.keys() {
            if !referenced.contains(atom) {
                return bad(format!("atom {atom} is not carried by any frame"));
            }
        }
        if let Some(e) = self
            .frames
            .iter()
            .flatten()
            .find(|e| !self.atoms.contains_key(&e.atom))
        {
            return bad(format!("frame references unknown atom {}", e.atom));
        }
        // Evidence-free episodes are legal; any other episode needs weight.
        if !self.atoms.is_empty() && self.total_weight() <= 0.0 {
            return bad("atom weights sum to zero".into());
        }
        Ok(())
    }

    pub fn total_weight(&self) -> f64 {
        self.atoms.values().sum()
    }

    pub fn pool(&self) -> Vec<FrameRef> {
        synthetic_pool(&format!("episode-{}", self.seed), self.k)
    }

    /// Pool indices of frames carrying any evidence.
    pub fn evidence_frames(&self) -> Vec<usize> {
        self.frames
            .iter()
            .enumerate()
            .filter(|(_, ev)| !ev.is_empty())
            .map(|(i, _)| i)
            .collect()
    }
}

/// Covered share of total atom weight, in `[0, 1]`.
pub fn sufficiency(episode: &SyntheticEpisode, subset: &[usize]) -> Result<f64, BackendError> {
    let pool = episode.frames.len();
    let mut covered = BTreeSet::new();
    for &i in subset {
        let frame = episode
            .frames
            .get(i)
            .ok_or(BackendError::PoolIndex { index: i, pool })?;
        covered.extend(frame.iter().map(|e| e.atom));
    }
    let total = episode.total_weight();
    if total <= 0.0 {
        return Ok(0.0);
    }
    let got: f64 = covered.iter().filter_map(|a| episode.atoms.get(a)).sum();
    Ok((got / total).clamp(0.0, 1.0))
}

pub fn synthetic_posterior(
    episode: &SyntheticEpisode,
    subset: &[usize],
    answer_space: &AnswerSpace,
) -> Result<Posterior, BackendError> {
    posterior_with_noise(episode, subset, answer_space, episode.noise)
}

fn posterior_with_noise(
    episode: &SyntheticEpisode,
    subset: &[usize],
    answer_space: &AnswerSpace,
    noise: f64,
) -> Result<Posterior, BackendError> {
    let truth = answer_space.index_of(&episode.truth_label).ok_or_else(|| {
        BackendError::AnswerSpace(format!(
            "truth {:?} not in answer space",
            episode.truth_label
        ))
    })?;
    let n = answer_space.len();
    let floor = 1.0 / n as f64;
    let signal = sufficiency(episode, subset)? * (1.0 - noise);
    if signal <= 0.0 {
        // Exact flat posterior so empty evidence yields exactly 1/|Y|.
        return Posterior::new(vec![floor; n]);
    }
    let peak = (floor + (1.0 - floor) * signal).min(1.0);
    let rest = (1.0 - peak) / (n - 1) as f64;
    let mut p = vec![rest; n];
    p[truth] = peak;
    Posterior::new(p)
}

/// Oracle backend bound to one episode. Frames are identified by pool index.
#[derive(Debug, Clone)]
pub struct SyntheticBackend {
    episode: Arc<SyntheticEpisode>,
    noise: Option<f64>,
    name: String,
}

impl SyntheticBackend {
    pub fn new(episode: Arc<SyntheticEpisode>) -> Self {
        Self {
            episode,
            noise: None,
            name: "synthetic".into(),
        }
    }

    /// Overrides the episode's noise, e.g. to model a weaker selector.
    pub fn with_noise(mut self, noise: f64) -> Self {
        self.noise = Some(noise);
        self
    }

    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn episode(&self) -> &SyntheticEpisode {
        &self.episode
    }
}

impl PosteriorBackend for SyntheticBackend {
    fn identity(&self) -> String {
        let eta = self.noise.unwrap_or(self.episode.noise);
        format!("{}(eta={eta})", self.name)
    }

    fn posterior(&self, request: &ProbeRequest) -> Result<BackendResponse, BackendError> {
        request.validate()?;
        let subset: Vec<usize> = request.frames.iter().map(|f| f.pool_index).collect();
        let noise = self.noise.unwrap_or(self.episode.noise);
        if !(0.0..1.0).contains(&noise) {
            return Err(BackendError::Config(format!(
                "noise {noise} outside [0, 1)"
            )));
        }
        let posterior = posterior_with_noise(&self.episode, &subset, &request.answer_space, noise)?;
        Ok(BackendResponse {
            posterior,
            retries: 0,
        })
    }
}
