use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{BenchRun, ItemResult};
use crate::compute::compute_cv;
use crate::error::PipelineError;
use crate::pipeline::Strategy;
use crate::probe::Regime;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Width of a signed-skew bucket; bucket `i` covers `[(i-0.5)w, (i+0.5)w)`.
pub const SKEW_BUCKET_WIDTH: f64 = 0.5;
/// Skews beyond ±this land in the outermost buckets.
pub const SKEW_CLIP: f64 = 4.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySummary {
    pub strategy: Strategy,
    pub items: usize,
    pub completed: usize,
    pub failures: usize,
    pub correct: usize,
    /// Over completed items only.
    pub accuracy: f64,
    /// 95% Wilson interval on accuracy.
    pub accuracy_ci95: (f64, f64),
    pub mean_flops: f64,
    pub p50_flops: f64,
    pub p90_flops: f64,
    pub cv_flops: Option<f64>,
    pub mean_m_eff: f64,
    /// Mean flops over the monolithic strategy's, when it ran.
    pub relative_flops: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeStrategySummary {
    pub strategy: Strategy,
    pub items: usize,
    pub failures: usize,
    pub accuracy: f64,
    pub mean_flops: f64,
    pub mean_m_eff: f64,
    pub mean_sigma: Option<f64>,
    pub mean_skew: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeSummary {
    pub regime: Regime,
    pub episodes: usize,
    pub strategies: Vec<RegimeStrategySummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoRow {
    pub strategy: Strategy,
    pub accuracy: f64,
    pub mean_flops: f64,
    /// No other strategy is at least as accurate and at most as expensive
    /// with one of the two strict.
    pub pareto_optimal: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkewBucket {
    pub index: i64,
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub mean_m_eff: f64,
    pub mean_correct: f64,
    /// Accuracy of the monolithic strategy on the same episodes, if it ran.
    pub baseline_correct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub schema_version: u32,
    pub k: usize,
    pub gamma0: f64,
    pub cost_preset: String,
    pub episodes: usize,
    pub strategies: Vec<StrategySummary>,
    pub regimes: Vec<RegimeSummary>,
    /// Sorted by ascending mean flops.
    pub pareto: Vec<ParetoRow>,
    /// Strategy whose maps fed the skew table.
    pub skew_source: Option<Strategy>,
    pub skew_buckets: Vec<SkewBucket>,
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, n) = xs
        .into_iter()
        .fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

fn wilson(correct: usize, n: usize) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let z = 1.96f64;
    let n = n as f64;
    let p = correct as f64 / n;
    let denom = 1.0 + z * z / n;
    let centre = (p + z * z / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

fn completed(results: &[ItemResult]) -> impl Iterator<Item = &ItemResult> {
    results.iter().filter(|r| !r.trace.is_failure())
}

fn flops(r: &ItemResult) -> f64 {
    r.trace.cost.as_ref().map_or(0.0, |c| c.total_flops)
}

fn m_eff(r: &ItemResult) -> f64 {
    r.trace.m_eff.unwrap_or(0) as f64
}

fn correct(r: &ItemResult) -> bool {
    r.trace.correct == Some(true)
}

fn summarize(
    strategy: Strategy,
    results: &[ItemResult],
    mono_mean: Option<f64>,
) -> StrategySummary {
    let done: Vec<&ItemResult> = completed(results).collect();
    let n_correct = done.iter().filter(|r| correct(r)).count();
    let mut costs: Vec<f64> = done.iter().map(|r| flops(r)).collect();
    let cv = compute_cv(&costs).ok();
    costs.sort_by(f64::total_cmp);
    let mean_flops = mean(costs.iter().copied());
    StrategySummary {
        strategy,
        items: results.len(),
        completed: done.len(),
        failures: results.len() - done.len(),
        correct: n_correct,
        accuracy: if done.is_empty() {
            0.0
        } else {
            n_correct as f64 / done.len() as f64
        },
        accuracy_ci95: wilson(n_correct, done.len()),
        mean_flops,
        p50_flops: percentile(&costs, 0.5),
        p90_flops: percentile(&costs, 0.9),
        cv_flops: cv,
        mean_m_eff: mean(done.iter().map(|r| m_eff(r))),
        relative_flops: mono_mean.filter(|m| *m > 0.0).map(|m| mean_flops / m),
    }
}

fn skew_bucket_index(skew: f64) -> i64 {
    let clipped = skew.clamp(-SKEW_CLIP, SKEW_CLIP);
    (clipped / SKEW_BUCKET_WIDTH).round() as i64
}

pub(super) fn build(run: &BenchRun) -> BenchReport {
    let mono_mean = run
        .traces(Strategy::Monolithic)
        .map(|r| mean(completed(r).map(flops)));
    let strategies: Vec<StrategySummary> = run
        .strategies
        .iter()
        .zip(&run.results)
        .map(|(s, r)| summarize(*s, r, mono_mean))
        .collect();

    let mut regimes = Vec::new();
    for regime in Regime::ALL {
        let per: Vec<RegimeStrategySummary> = run
            .strategies
            .iter()
            .zip(&run.results)
            .filter_map(|(s, results)| {
                let all: Vec<&ItemResult> = results.iter().filter(|r| r.regime == regime).collect();
                if all.is_empty() {
                    return None;
                }
                let done: Vec<&&ItemResult> =
                    all.iter().filter(|r| !r.trace.is_failure()).collect();
                let shapes: Vec<_> = done.iter().filter_map(|r| r.trace.shape).collect();
                Some(RegimeStrategySummary {
                    strategy: *s,
                    items: all.len(),
                    failures: all.len() - done.len(),
                    accuracy: if done.is_empty() {
                        0.0
                    } else {
                        done.iter().filter(|r| correct(r)).count() as f64 / done.len() as f64
                    },
                    mean_flops: mean(done.iter().map(|r| flops(r))),
                    mean_m_eff: mean(done.iter().map(|r| m_eff(r))),
                    mean_sigma: (!shapes.is_empty()).then(|| mean(shapes.iter().map(|s| s.sigma))),
                    mean_skew: (!shapes.is_empty()).then(|| mean(shapes.iter().map(|s| s.skew))),
                })
            })
            .collect();
        if let Some(first) = per.first() {
            regimes.push(RegimeSummary {
                regime,
                episodes: first.items,
                strategies: per,
            });
        }
    }

    let mut pareto: Vec<ParetoRow> = strategies
        .iter()
        .map(|s| ParetoRow {
            strategy: s.strategy,
            accuracy: s.accuracy,
            mean_flops: s.mean_flops,
            pareto_optimal: !strategies.iter().any(|o| {
                o.accuracy >= s.accuracy
                    && o.mean_flops <= s.mean_flops
                    && (o.accuracy > s.accuracy || o.mean_flops < s.mean_flops)
            }),
        })
        .collect();
    pareto.sort_by(|a, b| {
        a.mean_flops
            .total_cmp(&b.mean_flops)
            .then(a.strategy.cmp(&b.strategy))
    });

    let skew_source = [Strategy::Auto]
        .into_iter()
        .chain(run.strategies.iter().copied())
        .find(|s| *s != Strategy::Monolithic && run.strategies.contains(s));
    let mono = run.traces(Strategy::Monolithic);
    let mut buckets: BTreeMap<i64, (usize, f64, usize, usize, usize)> = BTreeMap::new();
    if let Some(source) = skew_source.and_then(|s| run.traces(s)) {
        for (i, r) in source.iter().enumerate() {
            let Some(shape) = r.trace.shape.filter(|_| !r.trace.is_failure()) else {
                continue;
            };
            let b = buckets.entry(skew_bucket_index(shape.skew)).or_default();
            b.0 += 1;
            b.1 += m_eff(r);
            b.2 += correct(r) as usize;
            if let Some(m) = mono
                .and_then(|m| m.get(i))
                .filter(|m| !m.trace.is_failure())
            {
                b.3 += 1;
                b.4 += correct(m) as usize;
            }
        }
    }
    let skew_buckets = buckets
        .into_iter()
        .map(
            |(index, (count, m_sum, correct_n, base_n, base_correct))| SkewBucket {
                index,
                lo: (index as f64 - 0.5) * SKEW_BUCKET_WIDTH,
                hi: (index as f64 + 0.5) * SKEW_BUCKET_WIDTH,
                count,
                mean_m_eff: m_sum / count as f64,
                mean_correct: correct_n as f64 / count as f64,
                baseline_correct: (base_n > 0).then(|| base_correct as f64 / base_n as f64),
            },
        )
        .collect();

    BenchReport {
        schema_version: REPORT_SCHEMA_VERSION,
        k: run.cfg.k,
        gamma0: run.cfg.gamma0,
        cost_preset: run.cfg.cost.name.clone(),
        episodes: run.results.first().map_or(0, Vec::len),
        strategies,
        regimes,
        pareto,
        skew_source,
        skew_buckets,
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

impl BenchReport {
    pub fn strategy(&self, s: Strategy) -> Option<&StrategySummary> {
        self.strategies.iter().find(|x| x.strategy == s)
    }

    pub fn regime(&self, r: Regime) -> Option<&RegimeSummary> {
        self.regimes.iter().find(|x| x.regime == r)
    }

    /// Bucket holding skew 0 (the near-uniform middle).
    pub fn middle_bucket(&self) -> Option<&SkewBucket> {
        self.skew_buckets.iter().find(|b| b.index == 0)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One row per strategy, ordered by mean flops.
    pub fn pareto_csv(&self) -> String {
        let mut out = String::from(
            "strategy,items,completed,failures,accuracy,ci95_lo,ci95_hi,mean_flops,p50_flops,p90_flops,cv_flops,mean_m_eff,relative_flops,pareto_optimal\n",
        );
        for row in &self.pareto {
            let s = self
                .strategy(row.strategy)
                .expect("pareto row has a summary");
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                s.strategy,
                s.items,
                s.completed,
                s.failures,
                s.accuracy,
                s.accuracy_ci95.0,
                s.accuracy_ci95.1,
                s.mean_flops,
                s.p50_flops,
                s.p90_flops,
                opt(s.cv_flops),
                s.mean_m_eff,
                opt(s.relative_flops),
                row.pareto_optimal
            );
        }
        out
    }

    pub fn regime_csv(&self, regime: &RegimeSummary) -> String {
        let mut out = String::from(
            "strategy,items,failures,accuracy,mean_flops,mean_m_eff,mean_sigma,mean_skew\n",
        );
        for s in &regime.strategies {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                s.strategy,
                s.items,
                s.failures,
                s.accuracy,
                s.mean_flops,
                s.mean_m_eff,
                opt(s.mean_sigma),
                opt(s.mean_skew)
            );
        }
        out
    }

    pub fn skew_csv(&self) -> String {
        let mut out = String::from("index,lo,hi,count,mean_m_eff,mean_correct,baseline_correct\n");
        for b in &self.skew_buckets {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                b.index,
                b.lo,
                b.hi,
                b.count,
                b.mean_m_eff,
                b.mean_correct,
                opt(b.baseline_correct)
            );
        }
        out
    }

    /// Writes `report.json`, `pareto.csv`, `skew_buckets.csv` and one
    /// `regime_<name>.csv` per regime into `dir`. Returns the written paths.
    pub fn write_to(&self, dir: &Path) -> Result<Vec<PathBuf>, PipelineError> {
        let io = |path: &Path, source| PipelineError::Io {
            path: path.display().to_string(),
            source,
        };
        std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
        let mut files = vec![
            (dir.join("report.json"), self.to_json() + "\n"),
            (dir.join("pareto.csv"), self.pareto_csv()),
            (dir.join("skew_buckets.csv"), self.skew_csv()),
        ];
        for r in &self.regimes {
            files.push((
                dir.join(format!("regime_{}.csv", r.regime.as_str())),
                self.regime_csv(r),
            ));
        }
        for (path, body) in &files {
            std::fs::write(path, body).map_err(|e| io(path, e))?;
        }
        Ok(files.into_iter().map(|(p, _)| p).collect())
    }
}
