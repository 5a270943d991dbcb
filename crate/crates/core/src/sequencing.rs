//! Visit ordering: a closed tour from the tool's start position through every
//! target exactly once, minimizing Euclidean length.

use itertools::Itertools;
use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum SequencingError {
    #[error("duplicate site id {0}")]
    DuplicateSite(u32),
    #[error("site {0} has a non-finite position")]
    NonFinite(u32),
    #[error("brute force is limited to {max} sites, got {got}")]
    TooManySites { max: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TourSite {
    pub cluster_id: u32,
    pub position: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TourProblem {
    pub start: Vector3<f64>,
    pub sites: Vec<TourSite>,
}

impl TourProblem {
    pub fn new(start: Vector3<f64>, sites: Vec<TourSite>) -> Result<Self, SequencingError> {
        let mut ids: Vec<u32> = sites.iter().map(|s| s.cluster_id).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(SequencingError::DuplicateSite(w[0]));
        }
        if let Some(s) = sites
            .iter()
            .find(|s| !s.position.iter().all(|c| c.is_finite()))
        {
            return Err(SequencingError::NonFinite(s.cluster_id));
        }
        if !start.iter().all(|c| c.is_finite()) {
            return Err(SequencingError::NonFinite(0));
        }
        Ok(Self { start, sites })
    }

    /// Closed tour length for a visiting order of site indices.
    pub fn cost_of(&self, order: &[usize]) -> f64 {
        let mut cost = 0.0;
        let mut here = self.start;
        for &i in order {
            cost += (self.sites[i].position - here).norm();
            here = self.sites[i].position;
        }
        cost + (self.start - here).norm()
    }

    /// Closed tour length for a visiting order of cluster ids.
    pub fn cost_of_ids(&self, ids: &[u32]) -> Option<f64> {
        let order: Option<Vec<usize>> = ids
            .iter()
            .map(|id| self.sites.iter().position(|s| s.cluster_id == *id))
            .collect();
        order.map(|o| self.cost_of(&o))
    }

    fn tour(&self, order: &[usize]) -> Tour {
        Tour {
            order: order.iter().map(|&i| self.sites[i].cluster_id).collect(),
            cost_m: self.cost_of(order),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tour {
    pub order: Vec<u32>,
    pub cost_m: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct TourConfig {
    /// Cap on applied improving moves; `None` means `10 * n^2`.
    pub max_iterations: Option<usize>,
    /// Extra local searches from seeded random orders.
    pub restarts: usize,
    pub seed: u64,
}

const IMPROVEMENT_EPS: f64 = 1e-10;

/// Nearest-neighbor construction improved by first-improvement 2-opt and
/// Or-opt (segments of 1 to 3 sites, either orientation). With restarts, the
/// best result by `(cost, order)` wins; the nearest-neighbor run is always
/// among the candidates, so the result never costs more than that run.
pub fn solve_tour(problem: &TourProblem, config: &TourConfig) -> Tour {
    let n = problem.sites.len();
    if n == 0 {
        return Tour {
            order: Vec::new(),
            cost_m: 0.0,
        };
    }
    let cap = config.max_iterations.unwrap_or(10 * n * n);
    let mut best = {
        let mut route = nearest_neighbor(problem);
        local_search(problem, &mut route, cap);
        problem.tour(&route[1..].iter().map(|&i| i - 1).collect_vec())
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    for _ in 0..config.restarts {
        let mut order: Vec<usize> = (1..=n).collect();
        order.shuffle(&mut rng);
        let mut route = std::iter::once(0).chain(order).collect_vec();
        local_search(problem, &mut route, cap);
        let candidate = problem.tour(&route[1..].iter().map(|&i| i - 1).collect_vec());
        if candidate.cost_m < best.cost_m
            || (candidate.cost_m == best.cost_m && candidate.order < best.order)
        {
            best = candidate;
        }
    }
    best
}

/// Exact optimum by enumeration; ties within 1e-12 m keep the
/// lexicographically smallest order of cluster ids.
pub fn brute_force_tour(problem: &TourProblem) -> Result<Tour, SequencingError> {
    const MAX_SITES: usize = 10;
    let n = problem.sites.len();
    if n > MAX_SITES {
        return Err(SequencingError::TooManySites {
            max: MAX_SITES,
            got: n,
        });
    }
    let mut by_id: Vec<usize> = (0..n).collect();
    by_id.sort_by_key(|&i| problem.sites[i].cluster_id);
    let mut best = problem.tour(&by_id);
    for perm in by_id.iter().copied().permutations(n) {
        let cost = problem.cost_of(&perm);
        if cost < best.cost_m - 1e-12 {
            best = problem.tour(&perm);
        }
    }
    Ok(best)
}

/// Node 0 is the start; node `i + 1` is site `i`. Ties go to the lower cluster id.
fn nearest_neighbor(problem: &TourProblem) -> Vec<usize> {
    let n = problem.sites.len();
    let mut route = vec![0];
    let mut visited = vec![false; n];
    let mut here = problem.start;
    for _ in 0..n {
        let next = (0..n)
            .filter(|&i| !visited[i])
            .min_by(|&a, &b| {
                let (da, db) = (
                    (problem.sites[a].position - here).norm(),
                    (problem.sites[b].position - here).norm(),
                );
                da.total_cmp(&db).then(
                    problem.sites[a]
                        .cluster_id
                        .cmp(&problem.sites[b].cluster_id),
                )
            })
            .expect("unvisited site remains");
        visited[next] = true;
        here = problem.sites[next].position;
        route.push(next + 1);
    }
    route
}

fn node(problem: &TourProblem, k: usize) -> Vector3<f64> {
    if k == 0 {
        problem.start
    } else {
        problem.sites[k - 1].position
    }
}

fn local_search(problem: &TourProblem, route: &mut Vec<usize>, cap: usize) {
    let d = |a: usize, b: usize| (node(problem, a) - node(problem, b)).norm();
    let mut applied = 0;
    while applied < cap {
        if two_opt_pass(route, &d) || or_opt_pass(route, &d) {
            applied += 1;
        } else {
            break;
        }
    }
}

/// Applies the first improving segment reversal, if any.
fn two_opt_pass(route: &mut [usize], d: &impl Fn(usize, usize) -> f64) -> bool {
    let len = route.len();
    for i in 1..len {
        for j in i + 1..len {
            let (a, b, c, e) = (route[i - 1], route[i], route[j], route[(j + 1) % len]);
            let delta = d(a, c) + d(b, e) - d(a, b) - d(c, e);
            if delta < -IMPROVEMENT_EPS {
                route[i..=j].reverse();
                return true;
            }
        }
    }
    false
}

/// Applies the first improving relocation of a 1 to 3 site segment.
fn or_opt_pass(route: &mut Vec<usize>, d: &impl Fn(usize, usize) -> f64) -> bool {
    let len = route.len();
    for seg_len in 1..=3usize {
        for i in 1..len {
            let end = i + seg_len - 1;
            if end >= len {
                break;
            }
            let (prev, next) = (route[i - 1], route[(end + 1) % len]);
            let (first, last) = (route[i], route[end]);
            let removal = d(prev, first) + d(last, next) - d(prev, next);
            let rest: Vec<usize> = route[..i]
                .iter()
                .chain(&route[end + 1..])
                .copied()
                .collect();
            for p in 0..rest.len() {
                if p == i - 1 {
                    continue;
                }
                let (a, b) = (rest[p], rest[(p + 1) % rest.len()]);
                let forward = d(a, first) + d(last, b) - d(a, b);
                let backward = d(a, last) + d(first, b) - d(a, b);
                let reversed = backward < forward;
                if forward.min(backward) - removal < -IMPROVEMENT_EPS {
                    let mut segment = route[i..=end].to_vec();
                    if reversed {
                        segment.reverse();
                    }
                    let mut out = rest[..=p].to_vec();
                    out.extend(segment);
                    out.extend_from_slice(&rest[p + 1..]);
                    *route = out;
                    return true;
                }
            }
        }
    }
    false
}
