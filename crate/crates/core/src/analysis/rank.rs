use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use super::AnalysisError;

/// Largest number of distinct group assignments enumerated for exact p-values.
pub const EXACT_LIMIT: u64 = 2_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PMethod {
    /// Exact when the assignment count is at most [`EXACT_LIMIT`], otherwise asymptotic.
    #[default]
    Auto,
    /// Enumerate every assignment of the pooled values to the groups.
    Exact,
    /// Chi-square for Kruskal–Wallis, standard normal for Dunn.
    Asymptotic,
}

/// Mid-ranks (1-based) of `values` and the sizes of their tie groups.
pub fn midranks(values: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        // Positions i..j share the average of ranks i+1..=j.
        let rank = (i + j + 1) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = rank;
        }
        ties.push(j - i);
        i = j;
    }
    (ranks, ties)
}

fn tie_sum(ties: &[usize]) -> f64 {
    ties.iter().map(|&t| (t * t * t - t) as f64).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KruskalWallis {
    /// Tie-corrected statistic.
    pub h: f64,
    pub df: usize,
    pub p: f64,
    pub method: PMethod,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DunnPair {
    pub group_a: usize,
    pub group_b: usize,
    pub z: f64,
    /// Two-sided standard-normal p.
    pub p_normal: f64,
    /// Two-sided p from the method in [`DunnResult::method`].
    pub p_raw: f64,
    /// Bonferroni over all pairs.
    pub p_adjusted: f64,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DunnResult {
    pub alpha: f64,
    pub method: PMethod,
    pub pairs: Vec<DunnPair>,
}

/// Pooled ranks split back into groups.
struct Pooled {
    ranks: Vec<f64>,
    sizes: Vec<usize>,
    ties: Vec<usize>,
}

impl Pooled {
    fn new(groups: &[Vec<f64>]) -> Self {
        let values: Vec<f64> = groups.iter().flatten().copied().collect();
        let (ranks, ties) = midranks(&values);
        Self {
            ranks,
            sizes: groups.iter().map(Vec::len).collect(),
            ties,
        }
    }

    fn n(&self) -> usize {
        self.ranks.len()
    }

    fn observed_sums(&self) -> Vec<f64> {
        let mut sums = Vec::with_capacity(self.sizes.len());
        let mut start = 0;
        for &s in &self.sizes {
            sums.push(self.ranks[start..start + s].iter().sum());
            start += s;
        }
        sums
    }

    fn tie_factor(&self) -> f64 {
        let n = self.n() as f64;
        1.0 - tie_sum(&self.ties) / (n * n * n - n)
    }

    fn h(&self, sums: &[f64]) -> f64 {
        let c = self.tie_factor();
        if c <= 0.0 {
            return 0.0;
        }
        let n = self.n() as f64;
        let raw: f64 = sums
            .iter()
            .zip(&self.sizes)
            .map(|(r, &s)| r * r / s as f64)
            .sum::<f64>()
            * 12.0
            / (n * (n + 1.0))
            - 3.0 * (n + 1.0);
        (raw / c).max(0.0)
    }

    /// Variance scale of a mean rank under the null, tie-adjusted.
    fn dunn_sigma2(&self) -> f64 {
        let n = self.n() as f64;
        n * (n + 1.0) / 12.0 - tie_sum(&self.ties) / (12.0 * (n - 1.0))
    }

    fn dunn_z(&self, sums: &[f64], a: usize, b: usize) -> f64 {
        let s2 = self.dunn_sigma2();
        let (na, nb) = (self.sizes[a] as f64, self.sizes[b] as f64);
        let se = (s2 * (1.0 / na + 1.0 / nb)).sqrt();
        if !(se > 0.0) {
            return 0.0;
        }
        (sums[a] / na - sums[b] / nb) / se
    }

    fn assignment_count(&self) -> Option<u64> {
        // Multinomial N! / prod(n_i!) built from binomials to stay exact.
        let mut total: u64 = 1;
        let mut left = self.n() as u64;
        for &s in &self.sizes {
            total = total.checked_mul(binomial(left, s as u64)?)?;
            left -= s as u64;
        }
        Some(total)
    }

    fn use_exact(&self, method: PMethod) -> bool {
        match method {
            PMethod::Exact => true,
            PMethod::Asymptotic => false,
            PMethod::Auto => self.assignment_count().is_some_and(|c| c <= EXACT_LIMIT),
        }
    }

    /// Calls `visit` with the per-group rank sums of every distinct assignment.
    fn for_each_assignment(&self, visit: &mut dyn FnMut(&[f64])) {
        let mut sums = vec![0.0; self.sizes.len()];
        let mut room = self.sizes.clone();
        self.assign(0, &mut sums, &mut room, visit);
    }

    fn assign(
        &self,
        pos: usize,
        sums: &mut [f64],
        room: &mut [usize],
        visit: &mut dyn FnMut(&[f64]),
    ) {
        if pos == self.ranks.len() {
            visit(sums);
            return;
        }
        for g in 0..room.len() {
            if room[g] == 0 {
                continue;
            }
            room[g] -= 1;
            sums[g] += self.ranks[pos];
            self.assign(pos + 1, sums, room, visit);
            sums[g] -= self.ranks[pos];
            room[g] += 1;
        }
    }
}

fn binomial(n: u64, k: u64) -> Option<u64> {
    let k = k.min(n - k);
    let mut acc: u64 = 1;
    for i in 0..k {
        acc = acc.checked_mul(n - i)? / (i + 1);
    }
    Some(acc)
}

/// Relative slack when comparing permuted statistics to the observed one.
const STAT_EPS: f64 = 1e-9;

fn check_groups(groups: &[Vec<f64>]) -> Result<(), AnalysisError> {
    if groups.len() < 2 {
        return Err(AnalysisError::InsufficientData(format!(
            "need at least 2 groups, got {}",
            groups.len()
        )));
    }
    if groups.iter().any(Vec::is_empty) {
        return Err(AnalysisError::InsufficientData(
            "every group needs at least one value".into(),
        ));
    }
    if groups.iter().flatten().any(|v| !v.is_finite()) {
        return Err(AnalysisError::InvalidValue(
            "non-finite value in a group".into(),
        ));
    }
    Ok(())
}

/// Kruskal–Wallis H with tie correction.
///
/// With [`PMethod::Exact`] the p-value is the share of all distinct group
/// assignments of the pooled values whose H reaches the observed H.
pub fn kruskal_wallis(
    groups: &[Vec<f64>],
    method: PMethod,
) -> Result<KruskalWallis, AnalysisError> {
    check_groups(groups)?;
    let pooled = Pooled::new(groups);
    if pooled.n() < 3 {
        return Err(AnalysisError::InsufficientData(format!(
            "need at least 3 values, got {}",
            pooled.n()
        )));
    }
    let df = groups.len() - 1;
    let h = pooled.h(&pooled.observed_sums());
    if pooled.tie_factor() <= 0.0 {
        return Ok(KruskalWallis {
            h: 0.0,
            df,
            p: 1.0,
            method: PMethod::Exact,
        });
    }
    if pooled.use_exact(method) {
        let (mut hits, mut total) = (0u64, 0u64);
        let bar = h - STAT_EPS * h.abs().max(1.0);
        pooled.for_each_assignment(&mut |sums| {
            total += 1;
            hits += u64::from(pooled.h(sums) >= bar);
        });
        return Ok(KruskalWallis {
            h,
            df,
            p: hits as f64 / total as f64,
            method: PMethod::Exact,
        });
    }
    let chi = ChiSquared::new(df as f64).expect("df is positive");
    Ok(KruskalWallis {
        h,
        df,
        p: chi.sf(h).clamp(0.0, 1.0),
        method: PMethod::Asymptotic,
    })
}

/// Dunn's pairwise mean-rank comparisons with Bonferroni adjustment.
///
/// The exact p for a pair is the share of all group assignments of the
/// pooled values whose |z| for that pair reaches the observed |z|.
pub fn dunn_posthoc(
    groups: &[Vec<f64>],
    alpha: f64,
    method: PMethod,
) -> Result<DunnResult, AnalysisError> {
    check_groups(groups)?;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(AnalysisError::InvalidValue(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    let pooled = Pooled::new(groups);
    let k = groups.len();
    let pairs: Vec<(usize, usize)> = (0..k)
        .flat_map(|a| (a + 1..k).map(move |b| (a, b)))
        .collect();
    let sums = pooled.observed_sums();
    let z: Vec<f64> = pairs
        .iter()
        .map(|&(a, b)| pooled.dunn_z(&sums, a, b))
        .collect();
    let normal = Normal::standard();
    let p_normal: Vec<f64> = z
        .iter()
        .map(|z| (2.0 * normal.sf(z.abs())).min(1.0))
        .collect();

    let exact = pooled.use_exact(method) && pooled.n() >= 2;
    let p_raw = if exact {
        let bars: Vec<f64> = z
            .iter()
            .map(|z| z.abs() - STAT_EPS * z.abs().max(1.0))
            .collect();
        let mut hits = vec![0u64; pairs.len()];
        let mut total = 0u64;
        pooled.for_each_assignment(&mut |s| {
            total += 1;
            for (i, &(a, b)) in pairs.iter().enumerate() {
                hits[i] += u64::from(pooled.dunn_z(s, a, b).abs() >= bars[i]);
            }
        });
        hits.iter().map(|&h| h as f64 / total as f64).collect()
    } else {
        p_normal.clone()
    };

    let m = pairs.len() as f64;
    let out = pairs
        .iter()
        .enumerate()
        .map(|(i, &(a, b))| {
            let p_adjusted = (p_raw[i] * m).min(1.0);
            DunnPair {
                group_a: a,
                group_b: b,
                z: z[i],
                p_normal: p_normal[i],
                p_raw: p_raw[i],
                p_adjusted,
                significant: p_adjusted < alpha,
            }
        })
        .collect();
    Ok(DunnResult {
        alpha,
        method: if exact {
            PMethod::Exact
        } else {
            PMethod::Asymptotic
        },
        pairs: out,
    })
}
