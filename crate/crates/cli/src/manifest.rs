use std::path::{Path, PathBuf};

use gridprobe::grid::FrameSource;
use gridprobe::probe::SyntheticEpisode;
use gridprobe::{sample_uniform, AnswerSpace, FrameRef, PipelineConfig, QuestionItem};
use serde::Deserialize;
use serde_json::Value;

use crate::exit::CliError;

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;
const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

/// One question to answer. Exactly one of `frames` (a directory of images
/// whose names sort in timeline order) or `episode` (a synthetic episode
/// file) must be set. Relative paths resolve against the manifest.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    #[serde(default = "schema_version")]
    pub schema_version: u32,
    #[serde(default)]
    pub id: Option<String>,
    #[serde(default)]
    pub question: Option<String>,
    #[serde(default)]
    pub labels: Option<Vec<String>>,
    #[serde(default)]
    pub truth: Option<String>,
    #[serde(default)]
    pub frames: Option<PathBuf>,
    #[serde(default)]
    pub episode: Option<PathBuf>,
    /// Pipeline config fields applied over the config file.
    #[serde(default)]
    pub config: Option<Value>,
    #[serde(skip)]
    base: PathBuf,
}

fn schema_version() -> u32 {
    MANIFEST_SCHEMA_VERSION
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("cannot read manifest {}: {e}", path.display())))?;
        let mut m: Self = serde_json::from_str(&raw)
            .map_err(|e| config_err(format!("invalid manifest {}: {e}", path.display())))?;
        if m.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(config_err(format!(
                "manifest schema_version {} unsupported",
                m.schema_version
            )));
        }
        m.base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(m)
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    /// Builds the question item. A synthetic episode fixes K unless the
    /// caller set K explicitly, in which case the two must agree.
    pub fn item(
        &self,
        cfg: &mut PipelineConfig,
        k_is_explicit: bool,
    ) -> Result<QuestionItem, CliError> {
        let item = match (&self.frames, &self.episode) {
            (Some(_), Some(_)) => return Err(config_err("manifest sets both frames and episode")),
            (None, None) => return Err(config_err("manifest needs frames or episode")),
            (None, Some(ep)) => self.episode_item(&self.resolve(ep), cfg, k_is_explicit)?,
            (Some(dir), None) => self.frames_item(&self.resolve(dir), cfg.k)?,
        };
        cfg.validate().map_err(|e| config_err(e.to_string()))?;
        Ok(item)
    }

    fn episode_item(
        &self,
        path: &Path,
        cfg: &mut PipelineConfig,
        k_is_explicit: bool,
    ) -> Result<QuestionItem, CliError> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("cannot read episode {}: {e}", path.display())))?;
        let episode: SyntheticEpisode = serde_json::from_str(&raw)
            .map_err(|e| config_err(format!("invalid episode {}: {e}", path.display())))?;
        episode
            .validate()
            .map_err(|e| config_err(format!("episode {}: {e}", path.display())))?;
        if k_is_explicit && cfg.k != episode.k {
            return Err(config_err(format!(
                "--k {} conflicts with the episode's K={}",
                cfg.k, episode.k
            )));
        }
        cfg.k = episode.k;
        if let Some(labels) = &self.labels {
            if labels.as_slice() != episode.answer_space.labels() {
                return Err(config_err("manifest labels differ from the episode's"));
            }
        }
        let id = self
            .id
            .clone()
            .unwrap_or_else(|| format!("episode-{}", episode.seed));
        let mut item = QuestionItem::from_episode(id, episode);
        if let Some(q) = &self.question {
            item.question = q.clone();
        }
        if let Some(t) = &self.truth {
            item.truth = Some(t.clone());
        }
        check_truth(&item)?;
        Ok(item)
    }

    fn frames_item(&self, dir: &Path, k: usize) -> Result<QuestionItem, CliError> {
        if !dir.is_dir() {
            return Err(config_err(format!(
                "frame directory {} not found",
                dir.display()
            )));
        }
        let question = self
            .question
            .clone()
            .ok_or_else(|| config_err("manifest with frames needs a question"))?;
        let labels = self
            .labels
            .clone()
            .ok_or_else(|| config_err("manifest with frames needs labels"))?;
        let answer_space = AnswerSpace::new(labels).map_err(|e| config_err(e.to_string()))?;
        let files = list_images(dir)?;
        let pool = sample_uniform(files.len(), k * k)
            .map_err(|e| config_err(e.to_string()))?
            .into_iter()
            .enumerate()
            .map(|(i, src)| FrameRef {
                pool_index: i,
                source_index: src,
                source: FrameSource::Image(files[src].clone()),
            })
            .collect();
        let item = QuestionItem {
            id: self.id.clone().unwrap_or_else(|| "item".into()),
            question,
            answer_space,
            truth: self.truth.clone(),
            pool,
            episode: None,
        };
        check_truth(&item)?;
        Ok(item)
    }
}

fn check_truth(item: &QuestionItem) -> Result<(), CliError> {
    match &item.truth {
        Some(t) if !item.answer_space.contains(t) => {
            Err(config_err(format!("truth {t:?} is not one of the labels")))
        }
        _ => Ok(()),
    }
}

/// Image files in `dir`, ordered by name with digit runs compared numerically.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let entries = std::fs::read_dir(dir)
        .map_err(|e| config_err(format!("cannot list {}: {e}", dir.display())))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|x| x.to_str())
                    .is_some_and(|x| IMAGE_EXTENSIONS.contains(&x.to_ascii_lowercase().as_str()))
        })
        .collect();
    if files.is_empty() {
        return Err(config_err(format!("no image files in {}", dir.display())));
    }
    files.sort_by_cached_key(|p| natural_key(&p.file_name().unwrap_or_default().to_string_lossy()));
    Ok(files)
}

#[derive(Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Chunk {
    Num(u128, usize),
    Text(String),
}

fn natural_key(name: &str) -> Vec<Chunk> {
    let mut out = Vec::new();
    let mut chars = name.chars().peekable();
    while let Some(&c) = chars.peek() {
        let digit = c.is_ascii_digit();
        let mut run = String::new();
        while let Some(&c) = chars.peek() {
            if c.is_ascii_digit() != digit {
                break;
            }
            run.push(c);
            chars.next();
        }
        out.push(if digit {
            // length breaks ties between "7" and "007"
            Chunk::Num(run.parse().unwrap_or(u128::MAX), run.len())
        } else {
            Chunk::Text(run)
        });
    }
    out
}
