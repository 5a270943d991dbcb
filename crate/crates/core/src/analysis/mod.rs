//! Fruit-quality statistics: per-group summaries, rank tests, and boxplot data.

mod rank;

use std::collections::BTreeMap;
use std::fmt;
use std::io::Read;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

pub use rank::{
    dunn_posthoc, kruskal_wallis, midranks, DunnPair, DunnResult, KruskalWallis, PMethod,
    EXACT_LIMIT,
};

pub const CSV_HEADER: &str =
    "site,treatment,blush_pct,weight_g,diameter_mm,firmness_lbf,brix,starch,disorder";

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("row {row}: {message}")]
    InvalidRecord { row: usize, message: String },
    #[error("unknown metric {0:?}")]
    UnknownMetric(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("invalid value: {0}")]
    InvalidValue(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Treatment {
    Natural,
    #[serde(rename = "robot_2gl")]
    Robot2gl,
    #[serde(rename = "robot_1gl")]
    Robot1gl,
}

impl Treatment {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Natural => "natural",
            Self::Robot2gl => "robot_2gl",
            Self::Robot1gl => "robot_1gl",
        }
    }
}

impl fmt::Display for Treatment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One harvested fruit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FruitRecord {
    pub site: String,
    pub treatment: Treatment,
    pub blush_pct: f64,
    pub weight_g: f64,
    pub diameter_mm: f64,
    pub firmness_lbf: f64,
    pub brix: f64,
    /// Raw starch-iodine index on the site's chart.
    pub starch: f64,
    #[serde(default)]
    pub disorder: String,
}

/// Starch-iodine chart used at a site.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StarchScale {
    /// Honeycrisp chart, 1 to 6.
    Wtfrc,
    /// Generic apple chart, 1 to 8.
    Cornell,
}

impl StarchScale {
    /// Chart for a site, judged from its name; unknown sites get the wider chart.
    pub fn for_site(site: &str) -> Self {
        let s = site.to_ascii_lowercase();
        if s.contains("honeycrisp") || s.contains("naches") {
            Self::Wtfrc
        } else {
            Self::Cornell
        }
    }

    pub fn range(self) -> (f64, f64) {
        match self {
            Self::Wtfrc => (1.0, 6.0),
            Self::Cornell => (1.0, 8.0),
        }
    }
}

impl FruitRecord {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=100.0).contains(&self.blush_pct) {
            return Err(format!("blush_pct {} outside [0, 100]", self.blush_pct));
        }
        for (name, v) in [
            ("weight_g", self.weight_g),
            ("diameter_mm", self.diameter_mm),
            ("firmness_lbf", self.firmness_lbf),
            ("brix", self.brix),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("{name} must be positive, got {v}"));
            }
        }
        let (lo, hi) = StarchScale::for_site(&self.site).range();
        if !(lo..=hi).contains(&self.starch) {
            return Err(format!(
                "starch {} outside {lo}..={hi} for site {:?}",
                self.starch, self.site
            ));
        }
        Ok(())
    }

    pub fn value(&self, metric: Metric) -> f64 {
        match metric {
            Metric::BlushPct => self.blush_pct,
            Metric::WeightG => self.weight_g,
            Metric::DiameterMm => self.diameter_mm,
            Metric::FirmnessLbf => self.firmness_lbf,
            Metric::Brix => self.brix,
            Metric::Starch => self.starch,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    BlushPct,
    WeightG,
    DiameterMm,
    FirmnessLbf,
    Brix,
    Starch,
}

impl Metric {
    pub const ALL: [Metric; 6] = [
        Self::BlushPct,
        Self::WeightG,
        Self::DiameterMm,
        Self::FirmnessLbf,
        Self::Brix,
        Self::Starch,
    ];

    pub fn column(self) -> &'static str {
        match self {
            Self::BlushPct => "blush_pct",
            Self::WeightG => "weight_g",
            Self::DiameterMm => "diameter_mm",
            Self::FirmnessLbf => "firmness_lbf",
            Self::Brix => "brix",
            Self::Starch => "starch",
        }
    }
}

impl FromStr for Metric {
    type Err = AnalysisError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|m| m.column() == s)
            .ok_or_else(|| AnalysisError::UnknownMetric(s.to_string()))
    }
}

/// Reads and validates fruit records from CSV with [`CSV_HEADER`] columns.
pub fn read_records<R: Read>(reader: R) -> Result<Vec<FruitRecord>, AnalysisError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<FruitRecord>().enumerate() {
        let record = row?;
        record
            .validate()
            .map_err(|message| AnalysisError::InvalidRecord {
                row: i + 1,
                message,
            })?;
        out.push(record);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    #[default]
    Treatment,
    SiteTreatment,
}

impl Grouping {
    pub fn label(self, r: &FruitRecord) -> String {
        match self {
            Self::Treatment => r.treatment.to_string(),
            Self::SiteTreatment => format!("{}/{}", r.site, r.treatment),
        }
    }
}

/// Metric values per group label, in label order.
pub fn group_values(
    records: &[FruitRecord],
    metric: Metric,
    grouping: Grouping,
) -> BTreeMap<String, Vec<f64>> {
    let mut groups: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in records {
        groups
            .entry(grouping.label(r))
            .or_default()
            .push(r.value(metric));
    }
    groups
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub group: String,
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation.
    pub sd: f64,
    /// Two-sided 95% t interval for the mean; absent below two values.
    pub ci95: Option<[f64; 2]>,
}

pub fn describe(group: &str, values: &[f64]) -> Option<GroupSummary> {
    if values.is_empty() {
        return None;
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return Some(GroupSummary {
            group: group.to_string(),
            n,
            mean,
            sd: 0.0,
            ci95: None,
        });
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let sd = var.sqrt();
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .expect("n >= 2")
        .inverse_cdf(0.975);
    let half = t * sd / (n as f64).sqrt();
    Some(GroupSummary {
        group: group.to_string(),
        n,
        mean,
        sd,
        ci95: Some([mean - half, mean + half]),
    })
}

/// Summaries for every group; empty groups are skipped, and groups too
/// small for an interval are reported without one. Both produce warnings.
pub fn summarize(groups: &BTreeMap<String, Vec<f64>>) -> (Vec<GroupSummary>, Vec<String>) {
    let mut warnings = Vec::new();
    let mut out = Vec::new();
    for (label, values) in groups {
        match describe(label, values) {
            None => warnings.push(format!("group {label} is empty; skipped")),
            Some(s) => {
                if s.ci95.is_none() {
                    warnings.push(format!(
                        "group {label} has one value; no confidence interval"
                    ));
                }
                out.push(s);
            }
        }
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    (out, warnings)
}

/// Quantile by linear interpolation between order statistics at `(n - 1) * p`.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxplotSummary {
    pub group: String,
    pub n: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    /// Most extreme values within 1.5 IQR of the quartiles.
    pub whisker_low: f64,
    pub whisker_high: f64,
    pub outliers: Vec<f64>,
}

pub fn boxplot(group: &str, values: &[f64]) -> Option<BoxplotSummary> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (q1, median, q3) = (
        quantile(&sorted, 0.25),
        quantile(&sorted, 0.5),
        quantile(&sorted, 0.75),
    );
    let iqr = q3 - q1;
    let (lo_fence, hi_fence) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    let inside: Vec<f64> = sorted
        .iter()
        .copied()
        .filter(|v| (lo_fence..=hi_fence).contains(v))
        .collect();
    let outliers = sorted
        .iter()
        .copied()
        .filter(|v| !(lo_fence..=hi_fence).contains(v))
        .collect();
    Some(BoxplotSummary {
        group: group.to_string(),
        n: sorted.len(),
        min: sorted[0],
        q1,
        median,
        q3,
        max: sorted[sorted.len() - 1],
        whisker_low: inside.first().copied().unwrap_or(q1),
        whisker_high: inside.last().copied().unwrap_or(q3),
        outliers,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric: Metric,
    pub grouping: Grouping,
    /// Group labels in the order Dunn indices refer to.
    pub groups: Vec<String>,
    pub summaries: Vec<GroupSummary>,
    pub kruskal_wallis: Option<KruskalWallis>,
    pub dunn: Option<DunnResult>,
    pub boxplots: Vec<BoxplotSummary>,
    pub warnings: Vec<String>,
}

/// Everything reported for one metric: summaries, rank tests, and boxplots.
///
/// Rank tests run over the nonempty groups and are omitted, with a warning,
/// when fewer than two groups or three values remain.
pub fn analyze(
    records: &[FruitRecord],
    metric: Metric,
    grouping: Grouping,
    alpha: f64,
    method: PMethod,
) -> Result<MetricReport, AnalysisError> {
    let grouped = group_values(records, metric, grouping);
    let (summaries, mut warnings) = summarize(&grouped);
    let nonempty: Vec<(&String, &Vec<f64>)> =
        grouped.iter().filter(|(_, v)| !v.is_empty()).collect();
    let labels: Vec<String> = nonempty.iter().map(|(k, _)| (*k).clone()).collect();
    let samples: Vec<Vec<f64>> = nonempty.iter().map(|(_, v)| (*v).clone()).collect();
    let total: usize = samples.iter().map(Vec::len).sum();
    let (kw, dunn) = if samples.len() >= 2 && total >= 3 {
        (
            Some(kruskal_wallis(&samples, method)?),
            Some(dunn_posthoc(&samples, alpha, method)?),
        )
    } else {
        warnings.push(format!(
            "{} groups with {total} values; rank tests skipped",
            samples.len()
        ));
        (None, None)
    };
    let boxplots = nonempty.iter().filter_map(|(k, v)| boxplot(k, v)).collect();
    Ok(MetricReport {
        metric,
        grouping,
        groups: labels,
        summaries,
        kruskal_wallis: kw,
        dunn,
        boxplots,
        warnings,
    })
}
