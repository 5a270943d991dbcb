use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::MissionError;
use crate::seed::derive_seed;

/// Saturating dose response: `p = p_max * (1 - exp(-beta * pollen_mg))`.
///
/// A calibration layer for comparing treatments, not a fit to field data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FruitSetModel {
    pub p_max: f64,
    /// Per milligram of pollen.
    pub beta: f64,
}

impl Default for FruitSetModel {
    fn default() -> Self {
        Self {
            p_max: 0.8,
            beta: 1.0,
        }
    }
}

impl FruitSetModel {
    pub fn validate(&self) -> Result<(), MissionError> {
        if !((0.0..=1.0).contains(&self.p_max) && self.beta >= 0.0 && !self.beta.is_nan()) {
            return Err(MissionError::InvalidConfig(format!(
                "fruit-set model needs p_max in [0, 1] and beta >= 0, got {self:?}"
            )));
        }
        Ok(())
    }

    /// Set probability for `dose` ml of suspension at `concentration` g/l.
    pub fn probability(&self, dose: f64, concentration: f64) -> f64 {
        let mass_mg = concentration * dose;
        if mass_mg <= 0.0 {
            return 0.0;
        }
        self.p_max * (1.0 - (-self.beta * mass_mg).exp())
    }
}

/// Independent Bernoulli draw per flower.
///
/// Each flower's uniform variate depends only on `seed` and its id, so adding
/// or removing other flowers never changes its outcome.
pub fn simulate_fruit_set(
    doses: &BTreeMap<u32, f64>,
    concentration: f64,
    model: &FruitSetModel,
    seed: u64,
) -> Result<BTreeMap<u32, bool>, MissionError> {
    model.validate()?;
    if !(concentration >= 0.0 && concentration.is_finite()) {
        return Err(MissionError::InvalidConfig(format!(
            "concentration must be non-negative, got {concentration}"
        )));
    }
    if let Some((id, d)) = doses.iter().find(|(_, d)| !(**d >= 0.0)) {
        return Err(MissionError::InvalidConfig(format!(
            "flower {id} has negative dose {d}"
        )));
    }
    Ok(doses
        .iter()
        .map(|(&id, &dose)| {
            let u: f64 =
                ChaCha8Rng::seed_from_u64(derive_seed(seed, "fruit_set", u64::from(id))).random();
            (id, u < model.probability(dose, concentration))
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FruitSetMetrics {
    pub flowers_total: usize,
    pub flowers_set: usize,
    pub clusters_total: usize,
    pub clusters_set: usize,
    /// Percent of sprayed flowers that set fruit, one decimal.
    pub flower_pct: f64,
    /// Percent of sprayed clusters with at least one fruit, one decimal.
    pub cluster_pct: f64,
}

impl FruitSetMetrics {
    pub fn from_counts(
        flowers_set: usize,
        flowers_total: usize,
        clusters_set: usize,
        clusters_total: usize,
    ) -> Result<Self, MissionError> {
        if flowers_total == 0 || clusters_total == 0 {
            return Err(MissionError::UndefinedMetric("no sprayed flowers".into()));
        }
        if flowers_set > flowers_total || clusters_set > clusters_total {
            return Err(MissionError::InvalidConfig(
                "more successes than trials".into(),
            ));
        }
        Ok(Self {
            flowers_total,
            flowers_set,
            clusters_total,
            clusters_set,
            flower_pct: percent_one_decimal(flowers_set, flowers_total),
            cluster_pct: percent_one_decimal(clusters_set, clusters_total),
        })
    }
}

/// `100 * num / den` rounded to one decimal, halves away from zero, in exact integer arithmetic.
pub fn percent_one_decimal(num: usize, den: usize) -> f64 {
    let (num, den) = (num as u128, den as u128);
    let tenths = (2000 * num + den) / (2 * den);
    tenths as f64 / 10.0
}

/// Flower- and cluster-level fruit set over `(cluster_id, set)` pairs, one per sprayed flower.
pub fn fruit_set_metrics(flowers: &[(u32, bool)]) -> Result<FruitSetMetrics, MissionError> {
    let clusters: BTreeSet<u32> = flowers.iter().map(|(c, _)| *c).collect();
    let clusters_set: BTreeSet<u32> = flowers
        .iter()
        .filter(|(_, s)| *s)
        .map(|(c, _)| *c)
        .collect();
    let flowers_set = flowers.iter().filter(|(_, s)| *s).count();
    FruitSetMetrics::from_counts(
        flowers_set,
        flowers.len(),
        clusters_set.len(),
        clusters.len(),
    )
}
