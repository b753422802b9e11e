//! Seeded episode generator with planted evidence regimes.
//!
//! * localized: a few atoms, each in a single frame (sparse peaks, right skew)
//! * redundant: one atom copied into every frame of a covered row×column block
//!   that leaves a few rows and columns uncovered (mass at the top, left skew)
//! * holistic: many small atoms, one per frame, balanced so every row and
//!   column carries the same share (near-flat map)
//! * uniform noise: no evidence at all

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::PipelineError;
use crate::probe::{AnswerSpace, EvidenceRef, Regime, SyntheticEpisode};

/// Inclusive integer range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub min: usize,
    pub max: usize,
}

impl Span {
    pub const fn new(min: usize, max: usize) -> Self {
        Self { min, max }
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> usize {
        rng.random_range(self.min..=self.max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightDist {
    Equal,
    Uniform { min: f64, max: f64 },
}

impl WeightDist {
    fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        match *self {
            WeightDist::Equal => 1.0,
            WeightDist::Uniform { min, max } if max > min => rng.random_range(min..max),
            WeightDist::Uniform { min, .. } => min,
        }
    }
}

/// Regime parameters. Knobs that do not apply to a regime are ignored.
/// Fields omitted in JSON take the named regime's defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "RawRegimeSpec")]
pub struct RegimeSpec {
    pub regime: Regime,
    /// Localized: how many single-frame atoms.
    pub atoms: Span,
    /// Redundant: how many rows (and, independently, columns) the shared atom misses.
    pub uncovered: Span,
    /// Holistic: fraction of each row/column carrying an atom.
    pub density: f64,
    pub weights: WeightDist,
    pub labels: usize,
    pub noise: f64,
    /// Filler words appended to the question, varying prompt length.
    pub question_words: Span,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRegimeSpec {
    regime: Regime,
    atoms: Option<Span>,
    uncovered: Option<Span>,
    density: Option<f64>,
    weights: Option<WeightDist>,
    labels: Option<usize>,
    noise: Option<f64>,
    question_words: Option<Span>,
}

impl From<RawRegimeSpec> for RegimeSpec {
    fn from(raw: RawRegimeSpec) -> Self {
        let d = RegimeSpec::for_regime(raw.regime);
        Self {
            regime: raw.regime,
            atoms: raw.atoms.unwrap_or(d.atoms),
            uncovered: raw.uncovered.unwrap_or(d.uncovered),
            density: raw.density.unwrap_or(d.density),
            weights: raw.weights.unwrap_or(d.weights),
            labels: raw.labels.unwrap_or(d.labels),
            noise: raw.noise.unwrap_or(d.noise),
            question_words: raw.question_words.unwrap_or(d.question_words),
        }
    }
}

impl Default for RegimeSpec {
    fn default() -> Self {
        Self::for_regime(Regime::Localized)
    }
}

impl RegimeSpec {
    pub fn for_regime(regime: Regime) -> Self {
        Self {
            regime,
            atoms: Span::new(1, 3),
            uncovered: Span::new(1, 2),
            density: 0.5,
            weights: match regime {
                Regime::Localized => WeightDist::Uniform { min: 0.5, max: 1.5 },
                _ => WeightDist::Equal,
            },
            labels: 8,
            noise: 0.0,
            question_words: Span::new(8, 40),
        }
    }

    pub fn validate(&self, k: usize) -> Result<(), PipelineError> {
        let bad = |m: String| {
            Err(PipelineError::Regime(format!(
                "{}: {m}",
                self.regime.as_str()
            )))
        };
        if k < 2 {
            return bad(format!("K={k}"));
        }
        if !(2..=26).contains(&self.labels) {
            return bad(format!("{} answer labels", self.labels));
        }
        if !(0.0..1.0).contains(&self.noise) {
            return bad(format!("noise {} outside [0, 1)", self.noise));
        }
        if self.question_words.min > self.question_words.max {
            return bad("question_words min > max".into());
        }
        if let WeightDist::Uniform { min, max } = self.weights {
            if !(min > 0.0 && max >= min && max.is_finite()) {
                return bad(format!("weight range [{min}, {max})"));
            }
        }
        match self.regime {
            Regime::Localized => {
                if self.atoms.min < 1 || self.atoms.max > 3 || self.atoms.min > self.atoms.max {
                    return bad(format!(
                        "atoms {}..={} must lie in 1..=3",
                        self.atoms.min, self.atoms.max
                    ));
                }
            }
            Regime::Redundant => {
                let u = self.uncovered;
                if u.min > u.max || u.max >= k {
                    return bad(format!("uncovered {}..={} for K={k}", u.min, u.max));
                }
                // the shared atom must still appear in at least K frames
                if (k - u.max) * (k - u.max) < k {
                    return bad(format!(
                        "uncovered up to {} leaves fewer than K frames",
                        u.max
                    ));
                }
            }
            Regime::Holistic => {
                if !(self.density > 0.0 && self.density <= 1.0) {
                    return bad(format!("density {}", self.density));
                }
                if holistic_per_row(self.density, k) * k * 2 < k * k {
                    return bad("fewer than K²/2 atoms".into());
                }
            }
            Regime::UniformNoise => {}
        }
        Ok(())
    }
}

fn holistic_per_row(density: f64, k: usize) -> usize {
    ((density * k as f64).ceil() as usize).clamp(1, k)
}

const FILLER: [&str; 12] = [
    "throughout",
    "the",
    "clip",
    "which",
    "scene",
    "shows",
    "what",
    "object",
    "after",
    "person",
    "moment",
    "before",
];

pub fn generate_episode(
    spec: &RegimeSpec,
    k: usize,
    seed: u64,
) -> Result<SyntheticEpisode, PipelineError> {
    spec.validate(k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let answer_space = AnswerSpace::letters(spec.labels)?;
    let truth_label = answer_space.labels()[rng.random_range(0..spec.labels)].clone();

    let n = k * k;
    let mut frames: Vec<Vec<EvidenceRef>> = vec![Vec::new(); n];
    let mut atoms = BTreeMap::new();
    let mut plant = |atom: u32, weight: f64, at: &[usize], frames: &mut Vec<Vec<EvidenceRef>>| {
        atoms.insert(atom, weight);
        for &i in at {
            frames[i].push(EvidenceRef { atom, weight });
        }
    };

    match spec.regime {
        Regime::Localized => {
            let count = spec.atoms.draw(&mut rng);
            let mut at = sample(&mut rng, n, count).into_vec();
            at.sort_unstable();
            for (atom, frame) in at.into_iter().enumerate() {
                let w = spec.weights.draw(&mut rng);
                plant(atom as u32, w, &[frame], &mut frames);
            }
        }
        Regime::Redundant => {
            let (gap_rows, gap_cols) =
                (spec.uncovered.draw(&mut rng), spec.uncovered.draw(&mut rng));
            let skip_rows = sample(&mut rng, k, gap_rows).into_vec();
            let skip_cols = sample(&mut rng, k, gap_cols).into_vec();
            let covered: Vec<usize> = (0..n)
                .filter(|i| !skip_rows.contains(&(i / k)) && !skip_cols.contains(&(i % k)))
                .collect();
            let w = spec.weights.draw(&mut rng);
            plant(0, w, &covered, &mut frames);
        }
        Regime::Holistic => {
            let per_row = holistic_per_row(spec.density, k);
            let mut rows: Vec<usize> = (0..k).collect();
            let mut cols: Vec<usize> = (0..k).collect();
            rows.shuffle(&mut rng);
            cols.shuffle(&mut rng);
            let mut atom = 0u32;
            for (r, &row) in rows.iter().enumerate() {
                for (c, &col) in cols.iter().enumerate() {
                    // circulant band: each row and column holds exactly per_row atoms
                    if (c + k - r) % k < per_row {
                        let w = spec.weights.draw(&mut rng);
                        plant(atom, w, &[row * k + col], &mut frames);
                        atom += 1;
                    }
                }
            }
        }
        Regime::UniformNoise => {}
    }

    let words = spec.question_words.draw(&mut rng);
    let filler: Vec<&str> = (0..words)
        .map(|_| FILLER[rng.random_range(0..FILLER.len())])
        .collect();
    let question = format!("[{} #{seed}] {}?", spec.regime.as_str(), filler.join(" "));

    let episode = SyntheticEpisode {
        k,
        frames,
        atoms,
        truth_label,
        question,
        answer_space,
        regime: spec.regime,
        noise: spec.noise,
        seed,
    };
    episode.validate()?;
    Ok(episode)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::probe::sufficiency;

    #[test]
    fn localized_has_at_most_three_evidence_frames() {
        let spec = RegimeSpec::for_regime(Regime::Localized);
        for seed in 0..50 {
            let ep = generate_episode(&spec, 12, seed).unwrap();
            let ev = ep.evidence_frames();
            assert!((1..=3).contains(&ev.len()), "seed {seed}: {ev:?}");
        }
    }

    #[test]
    fn redundant_atom_is_widely_copied_and_each_copy_suffices() {
        let spec = RegimeSpec::for_regime(Regime::Redundant);
        for seed in 0..20 {
            let ep = generate_episode(&spec, 12, seed).unwrap();
            let ev = ep.evidence_frames();
            assert!(ev.len() >= 12);
            assert_eq!(ep.atoms.len(), 1);
            for &i in &ev {
                assert_eq!(sufficiency(&ep, &[i]).unwrap(), 1.0);
            }
        }
    }

    #[test]
    fn holistic_is_balanced() {
        let spec = RegimeSpec::for_regime(Regime::Holistic);
        let ep = generate_episode(&spec, 12, 3).unwrap();
        assert!(ep.atoms.len() * 2 >= 144);
        for r in 0..12 {
            let row = ep.frames[r * 12..(r + 1) * 12]
                .iter()
                .filter(|f| !f.is_empty())
                .count();
            let col = (0..12)
                .filter(|j| !ep.frames[r + 12 * j].is_empty())
                .count();
            assert_eq!((row, col), (6, 6));
        }
        let odd = generate_episode(&spec, 5, 3).unwrap();
        assert_eq!(odd.atoms.len(), 15);
    }

    #[test]
    fn uniform_noise_has_no_evidence() {
        let ep = generate_episode(&RegimeSpec::for_regime(Regime::UniformNoise), 12, 9).unwrap();
        assert!(ep.atoms.is_empty());
        assert!(ep.evidence_frames().is_empty());
    }

    #[test]
    fn generation_is_deterministic() {
        for regime in Regime::ALL {
            let spec = RegimeSpec::for_regime(regime);
            let a = generate_episode(&spec, 12, 77).unwrap();
            let b = generate_episode(&spec, 12, 77).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn omitted_json_fields_follow_the_regime() {
        let spec: RegimeSpec =
            serde_json::from_str(r#"{"regime": "holistic", "labels": 4}"#).unwrap();
        assert_eq!(spec.weights, WeightDist::Equal);
        assert_eq!(spec.labels, 4);
        let round: RegimeSpec =
            serde_json::from_str(&serde_json::to_string(&spec).unwrap()).unwrap();
        assert_eq!(round, spec);
        assert!(
            serde_json::from_str::<RegimeSpec>(r#"{"regime": "holistic", "atom": 1}"#).is_err()
        );
    }

    #[test]
    fn inconsistent_specs_rejected() {
        let mut loc = RegimeSpec::for_regime(Regime::Localized);
        loc.atoms = Span::new(1, 5);
        assert!(generate_episode(&loc, 12, 0).is_err());
        let mut red = RegimeSpec::for_regime(Regime::Redundant);
        red.uncovered = Span::new(1, 12);
        assert!(generate_episode(&red, 12, 0).is_err());
        let mut hol = RegimeSpec::for_regime(Regime::Holistic);
        hol.density = 0.2;
        assert!(generate_episode(&hol, 12, 0).is_err());
        let mut noisy = RegimeSpec::for_regime(Regime::Holistic);
        noisy.noise = 1.0;
        assert!(generate_episode(&noisy, 12, 0).is_err());
    }
}
