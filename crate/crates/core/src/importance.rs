//! Rank-1 importance map, distribution-shape statistic and the closed-form
//! frame budget.
//!
//! `sigma = |skew| + 0.5 * max(0, excess kurtosis)` of the flattened map, and
//! `M_eff = ceil(K² / (1 + gamma0 * K * sigma))`. A map whose population
//! variance falls below the threshold is degenerate: sigma is 0 and the budget
//! is the whole pool.

use serde::{Deserialize, Serialize};

use crate::error::GridError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MapMarginals")]
pub struct ImportanceMap {
    k: usize,
    row_conf: Vec<f64>,
    col_conf: Vec<f64>,
    values: Vec<Vec<f64>>,
}

#[derive(Deserialize)]
struct MapMarginals {
    row_conf: Vec<f64>,
    col_conf: Vec<f64>,
}

impl TryFrom<MapMarginals> for ImportanceMap {
    type Error = GridError;

    fn try_from(m: MapMarginals) -> Result<Self, Self::Error> {
        Self::build(&m.row_conf, &m.col_conf)
    }
}

impl ImportanceMap {
    /// Outer product `values[r][c] = row_conf[r] * col_conf[c]`.
    pub fn build(row_conf: &[f64], col_conf: &[f64]) -> Result<Self, GridError> {
        if row_conf.len() != col_conf.len() {
            return Err(GridError::MarginalLength {
                rows: row_conf.len(),
                cols: col_conf.len(),
            });
        }
        if let Some(&bad) = row_conf
            .iter()
            .chain(col_conf)
            .find(|c| !(0.0..=1.0).contains(*c))
        {
            return Err(GridError::Confidence(bad));
        }
        let values = row_conf
            .iter()
            .map(|r| col_conf.iter().map(|c| r * c).collect())
            .collect();
        Ok(Self {
            k: row_conf.len(),
            row_conf: row_conf.to_vec(),
            col_conf: col_conf.to_vec(),
            values,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn row_conf(&self) -> &[f64] {
        &self.row_conf
    }

    pub fn col_conf(&self) -> &[f64] {
        &self.col_conf
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r][c]
    }

    /// Row-major flattening; index `i` is pool frame `i`.
    pub fn flatten(&self) -> Vec<f64> {
        self.values.iter().flatten().copied().collect()
    }
}

/// Online accumulator for the first four central moments.
///
/// Uses the pairwise update of the central sums so that values can be pushed
/// in any order, and two accumulators can be merged.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MomentAccumulator {
    n: u64,
    mean: f64,
    m2: f64,
    m3: f64,
    m4: f64,
}

impl MomentAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: f64) {
        let n1 = self.n as f64;
        self.n += 1;
        let n = self.n as f64;
        let delta = x - self.mean;
        let delta_n = delta / n;
        let delta_n2 = delta_n * delta_n;
        let term1 = delta * delta_n * n1;
        self.mean += delta_n;
        self.m4 += term1 * delta_n2 * (n * n - 3.0 * n + 3.0) + 6.0 * delta_n2 * self.m2
            - 4.0 * delta_n * self.m3;
        self.m3 += term1 * delta_n * (n - 2.0) - 3.0 * delta_n * self.m2;
        self.m2 += term1;
    }

    pub fn merge(&self, other: &Self) -> Self {
        if self.n == 0 {
            return *other;
        }
        if other.n == 0 {
            return *self;
        }
        let (na, nb) = (self.n as f64, other.n as f64);
        let n = na + nb;
        let d = other.mean - self.mean;
        let d2 = d * d;
        let d3 = d2 * d;
        let d4 = d2 * d2;
        let m2 = self.m2 + other.m2 + d2 * na * nb / n;
        let m3 = self.m3
            + other.m3
            + d3 * na * nb * (na - nb) / (n * n)
            + 3.0 * d * (na * other.m2 - nb * self.m2) / n;
        let m4 = self.m4
            + other.m4
            + d4 * na * nb * (na * na - na * nb + nb * nb) / (n * n * n)
            + 6.0 * d2 * (na * na * other.m2 + nb * nb * self.m2) / (n * n)
            + 4.0 * d * (na * other.m3 - nb * self.m3) / n;
        Self {
            n: self.n + other.n,
            mean: self.mean + d * nb / n,
            m2,
            m3,
            m4,
        }
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Population (n-denominator) variance.
    pub fn variance(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.m2 / self.n as f64
        }
    }

    pub fn skewness(&self) -> f64 {
        (self.n as f64).sqrt() * self.m3 / self.m2.powf(1.5)
    }

    pub fn excess_kurtosis(&self) -> f64 {
        self.n as f64 * self.m4 / (self.m2 * self.m2) - 3.0
    }
}

impl FromIterator<f64> for MomentAccumulator {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = Self::new();
        iter.into_iter().for_each(|x| acc.push(x));
        acc
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeStats {
    pub skew: f64,
    pub kurt_ex: f64,
    pub sigma: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetRule {
    pub gamma0: f64,
    pub variance_threshold: f64,
}

impl Default for BudgetRule {
    fn default() -> Self {
        Self {
            gamma0: 0.25,
            variance_threshold: 1e-9,
        }
    }
}

impl BudgetRule {
    pub fn new(gamma0: f64, variance_threshold: f64) -> Result<Self, String> {
        if !(gamma0 > 0.0 && gamma0.is_finite()) {
            return Err(format!("gamma0 must be positive, got {gamma0}"));
        }
        if !(variance_threshold > 0.0 && variance_threshold.is_finite()) {
            return Err(format!(
                "variance threshold must be positive, got {variance_threshold}"
            ));
        }
        Ok(Self {
            gamma0,
            variance_threshold,
        })
    }
}

/// Population skewness and excess kurtosis; `sigma` is left at 0.
pub fn moments(values: &[f64], variance_threshold: f64) -> Result<ShapeStats, GridError> {
    if values.len() < 2 {
        return Err(GridError::TooFewValues(values.len()));
    }
    let acc: MomentAccumulator = values.iter().copied().collect();
    if acc.variance() < variance_threshold {
        return Ok(ShapeStats {
            skew: 0.0,
            kurt_ex: 0.0,
            sigma: 0.0,
            degenerate: true,
        });
    }
    Ok(ShapeStats {
        skew: acc.skewness(),
        kurt_ex: acc.excess_kurtosis(),
        sigma: 0.0,
        degenerate: false,
    })
}

/// Shape statistic of an arbitrary value multiset.
pub fn shape_of_values(values: &[f64], rule: &BudgetRule) -> Result<ShapeStats, GridError> {
    let mut stats = moments(values, rule.variance_threshold)?;
    if !stats.degenerate {
        stats.sigma = stats.skew.abs() + 0.5 * stats.kurt_ex.max(0.0);
    }
    Ok(stats)
}

pub fn shape_statistic(map: &ImportanceMap, rule: &BudgetRule) -> ShapeStats {
    // A built map has K ≥ 1 rows; K = 1 gives a single value, which is degenerate.
    shape_of_values(&map.flatten(), rule).unwrap_or(ShapeStats {
        skew: 0.0,
        kurt_ex: 0.0,
        sigma: 0.0,
        degenerate: true,
    })
}

/// `ceil(K² / (1 + gamma0 * K * sigma))`, clamped to `[1, K²]`.
pub fn effective_budget(stats: &ShapeStats, k: usize, rule: &BudgetRule) -> usize {
    let pool = k * k;
    let sigma = if stats.degenerate || stats.sigma.is_nan() {
        0.0
    } else {
        stats.sigma.max(0.0)
    };
    let quotient = pool as f64 / (1.0 + rule.gamma0 * k as f64 * sigma);
    (quotient.ceil() as usize).clamp(1, pool)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Textbook definitions, two passes, no shared code with the accumulator.
    fn brute(values: &[f64]) -> (f64, f64) {
        let n = values.len() as f64;
        let mu = values.iter().sum::<f64>() / n;
        let central = |p: i32| values.iter().map(|x| (x - mu).powi(p)).sum::<f64>() / n;
        let sd = central(2).sqrt();
        (central(3) / sd.powi(3), central(4) / sd.powi(4) - 3.0)
    }

    fn one_hot(k: usize) -> ImportanceMap {
        let mut e = vec![0.0; k];
        e[0] = 1.0;
        ImportanceMap::build(&e, &e).unwrap()
    }

    #[test]
    fn build_examples() {
        let m = ImportanceMap::build(&[0.9, 0.25], &[0.5, 1.0]).unwrap();
        assert_eq!(m.values(), &[vec![0.45, 0.9], vec![0.125, 0.25]]);
        let ones = ImportanceMap::build(&[1.0; 3], &[1.0; 3]).unwrap();
        assert!(ones.flatten().iter().all(|&v| v == 1.0));
        assert_eq!(one_hot(2).values(), &[vec![1.0, 0.0], vec![0.0, 0.0]]);
        assert!(ImportanceMap::build(&[0.5], &[0.5, 0.5]).is_err());
        assert!(ImportanceMap::build(&[1.5, 0.5], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn moment_examples() {
        let flat = moments(&[0.3; 9], 1e-9).unwrap();
        assert!(flat.degenerate);
        assert_eq!((flat.skew, flat.kurt_ex), (0.0, 0.0));

        let m = moments(&[1.0, 0.0, 0.0, 0.0], 1e-9).unwrap();
        let (s, k) = brute(&[1.0, 0.0, 0.0, 0.0]);
        assert!((m.skew - s).abs() < 1e-12 && (m.skew - 1.154_700_538_379_251_5).abs() < 1e-12);
        assert!((m.kurt_ex - k).abs() < 1e-12 && (m.kurt_ex + 2.0 / 3.0).abs() < 1e-12);

        let m = moments(&[1.0, 0.0, 1.0, 0.0], 1e-9).unwrap();
        assert!(m.skew.abs() < 1e-12);
        assert!((m.kurt_ex + 2.0).abs() < 1e-12);

        assert!(moments(&[1.0], 1e-9).is_err());
    }

    #[test]
    fn shape_examples() {
        let rule = BudgetRule::default();
        let uniform = ImportanceMap::build(&[0.125; 4], &[0.125; 4]).unwrap();
        assert_eq!(shape_statistic(&uniform, &rule).sigma, 0.0);

        let s2 = shape_statistic(&one_hot(2), &rule);
        assert!((s2.sigma - 1.154_700_538_379_251_5).abs() < 1e-12);

        let s12 = shape_statistic(&one_hot(12), &rule);
        let (skew, kurt) = brute(&one_hot(12).flatten());
        assert!((s12.skew - skew).abs() < 1e-9);
        assert!((s12.kurt_ex - kurt).abs() < 1e-9);
        assert!((s12.sigma - (skew + 0.5 * kurt)).abs() < 1e-9);
        assert!((s12.sigma - 81.37).abs() < 0.01, "sigma {}", s12.sigma);
    }

    #[test]
    fn budget_examples() {
        let rule = BudgetRule::default();
        let zero = ShapeStats {
            skew: 0.0,
            kurt_ex: 0.0,
            sigma: 0.0,
            degenerate: true,
        };
        assert_eq!(effective_budget(&zero, 12, &rule), 144);
        let one = ShapeStats {
            skew: 1.0,
            kurt_ex: 0.0,
            sigma: 1.0,
            degenerate: false,
        };
        assert_eq!(effective_budget(&one, 12, &rule), 36);
        let peaked = shape_statistic(&one_hot(12), &rule);
        assert_eq!(effective_budget(&peaked, 12, &rule), 1);
        for k in 2..=16 {
            assert_eq!(effective_budget(&zero, k, &rule), k * k);
        }
    }

    #[test]
    fn budget_rule_validation() {
        assert!(BudgetRule::new(0.0, 1e-9).is_err());
        assert!(BudgetRule::new(0.25, 0.0).is_err());
        assert!(BudgetRule::new(0.25, 1e-9).is_ok());
    }

    #[test]
    fn budget_grows_linearly_in_k_for_fixed_sigma() {
        let rule = BudgetRule::default();
        let stats = ShapeStats {
            skew: 40.0,
            kurt_ex: 0.0,
            sigma: 40.0,
            degenerate: false,
        };
        let m = |k| effective_budget(&stats, k, &rule) as f64;
        let ratio = m(1024) / m(512);
        assert!((ratio - 2.0).abs() < 0.05, "ratio {ratio}");
        let k = 4096.0;
        assert!((m(4096) * rule.gamma0 * 40.0 / k - 1.0).abs() < 0.01);
    }

    proptest! {
        #[test]
        fn accumulator_matches_brute_force(values in proptest::collection::vec(0.0f64..1.0, 2..80)) {
            let acc: MomentAccumulator = values.iter().copied().collect();
            prop_assume!(acc.variance() > 1e-6);
            let (s, k) = brute(&values);
            prop_assert!((acc.skewness() - s).abs() < 1e-9);
            prop_assert!((acc.excess_kurtosis() - k).abs() < 1e-9);
        }

        #[test]
        fn merge_equals_sequential(a in proptest::collection::vec(-5.0f64..5.0, 1..40),
                                   b in proptest::collection::vec(-5.0f64..5.0, 1..40)) {
            let left: MomentAccumulator = a.iter().copied().collect();
            let right: MomentAccumulator = b.iter().copied().collect();
            let all: MomentAccumulator = a.iter().chain(&b).copied().collect();
            let merged = left.merge(&right);
            prop_assert_eq!(merged.count(), all.count());
            prop_assert!((merged.mean() - all.mean()).abs() < 1e-12);
            prop_assert!((merged.m2 - all.m2).abs() < 1e-9);
            prop_assert!((merged.m3 - all.m3).abs() < 1e-8);
            prop_assert!((merged.m4 - all.m4).abs() < 1e-7);
        }

        #[test]
        fn map_is_rank_one_and_bounded(
            conf in proptest::collection::vec((0.125f64..=1.0, 0.125f64..=1.0), 2..10)
        ) {
            let (rows, cols): (Vec<f64>, Vec<f64>) = conf.into_iter().unzip();
            let m = ImportanceMap::build(&rows, &cols).unwrap();
            let k = m.k();
            for r in 0..k { for r2 in 0..k { for c in 0..k { for c2 in 0..k {
                let lhs = m.get(r, c) * m.get(r2, c2);
                let rhs = m.get(r, c2) * m.get(r2, c);
                prop_assert!((lhs - rhs).abs() < 1e-9);
            }}}}
            prop_assert!(m.flatten().iter().all(|&v| (1.0 / 64.0..=1.0).contains(&v)));
            let rule = BudgetRule::default();
            let s = shape_statistic(&m, &rule);
            prop_assert!(s.sigma >= 0.0);
            let budget = effective_budget(&s, k, &rule);
            prop_assert!((1..=k * k).contains(&budget));
        }

        #[test]
        fn budget_non_increasing_in_sigma(k in 2usize..40, a in 0.0f64..100.0, b in 0.0f64..100.0) {
            let rule = BudgetRule::default();
            let st = |s: f64| ShapeStats { skew: s, kurt_ex: 0.0, sigma: s, degenerate: false };
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(effective_budget(&st(lo), k, &rule) >= effective_budget(&st(hi), k, &rule));
        }

        #[test]
        fn permutation_invariant(mut values in proptest::collection::vec(0.0f64..1.0, 4..64), seed in any::<u64>()) {
            use rand::{seq::SliceRandom, SeedableRng};
            let rule = BudgetRule::default();
            let before = shape_of_values(&values, &rule).unwrap();
            values.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let after = shape_of_values(&values, &rule).unwrap();
            prop_assert!((before.sigma - after.sigma).abs() < 1e-9 * (1.0 + before.sigma));
        }
    }
}
