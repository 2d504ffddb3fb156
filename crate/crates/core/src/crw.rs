//! Monte Carlo estimate of first-passage masses by simulating individual
//! vacancy walks.
//!
//! Walker `w` draws from its own ChaCha8 stream (`seed`, stream `w`), so a
//! tally depends only on the seed and the configuration, never on how the
//! walkers were split across threads.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::grid::Grid;
use crate::lattice::{HopModel, LatticeSpec, SiteRef};
use crate::mu::{PropagationResult, TracerNeighbor};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WalkConfig {
    pub n_max: usize,
    pub num_walkers: u64,
    pub seed: u64,
    /// Walkers per parallel work item.
    pub batch: u64,
}

impl WalkConfig {
    pub fn new(n_max: usize, num_walkers: u64, seed: u64) -> Self {
        WalkConfig {
            n_max,
            num_walkers,
            seed,
            batch: 1 << 16,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FirstPassageTally {
    pub config: WalkConfig,
    pub lattice: String,
    pub tracer: SiteRef,
    pub neighbors: Vec<TracerNeighbor>,
    /// `N -> (neighbor label -> walkers that first reached the tracer at N)`.
    pub hits: BTreeMap<usize, BTreeMap<String, u64>>,
    pub walkers: u64,
    pub censored: u64,
}

impl FirstPassageTally {
    pub fn captured(&self) -> u64 {
        self.hits.values().flat_map(|m| m.values()).sum()
    }

    /// The tally a run with a smaller horizon and the same seed would give.
    pub fn truncated(&self, n_max: usize) -> Self {
        let mut out = self.clone();
        out.config.n_max = n_max.min(self.config.n_max);
        out.hits = self
            .hits
            .range(..=out.config.n_max)
            .map(|(n, m)| (*n, m.clone()))
            .collect();
        out.censored = out.walkers - out.captured();
        out
    }
}

/// Cumulative hop tables per sublattice.
fn cumulative(probs: &[Vec<f64>]) -> Vec<Vec<f64>> {
    probs
        .iter()
        .map(|row| {
            let mut acc = 0.0;
            let mut out: Vec<f64> = row
                .iter()
                .map(|p| {
                    acc += p;
                    acc
                })
                .collect();
            // guard against rounding leaving a gap below 1
            if let Some(last) = out.last_mut() {
                *last = f64::INFINITY;
            }
            out
        })
        .collect()
}

struct Walk<'a> {
    grid: &'a Grid,
    cdf: Vec<Vec<f64>>,
    start: usize,
    tracer: usize,
    tracer_neighbors: Vec<usize>,
    n_max: usize,
}

impl Walk<'_> {
    /// Returns `(N, neighbor index)` of the first arrival, or `None` if the
    /// walk is censored.
    fn run(&self, rng: &mut ChaCha8Rng) -> Result<Option<(usize, usize)>> {
        let mut here = self.start;
        for n in 2..=self.n_max {
            let sub = here % self.grid.nsub;
            let u: f64 = rng.gen();
            let k = self.cdf[sub].iter().position(|c| u < *c).unwrap_or(0);
            let next = self.grid.step(here, &self.grid.hops[sub][k]).ok_or_else(|| {
                Error::Bounds(format!(
                    "a walker at {} left the extent of '{}'",
                    self.grid.site(here),
                    self.grid.name
                ))
            })?;
            if next == self.tracer {
                let j = self
                    .tracer_neighbors
                    .iter()
                    .position(|t| *t == here)
                    .expect("a site hopping into the tracer is its neighbor");
                return Ok(Some((n, j)));
            }
            here = next;
        }
        Ok(None)
    }
}

/// Simulates `config.num_walkers` independent walks of at most
/// `config.n_max - 1` hops.
pub fn simulate(
    spec: &LatticeSpec,
    model: &HopModel,
    start: &SiteRef,
    tracer: &SiteRef,
    config: &WalkConfig,
) -> Result<FirstPassageTally> {
    if config.num_walkers == 0 {
        return Err(domain("num_walkers must be at least 1"));
    }
    if config.n_max < 2 {
        return Err(domain(format!("n_max must be at least 2, got {}", config.n_max)));
    }
    if !spec.are_neighbors(tracer, start) {
        return Err(domain(format!(
            "the vacancy start {start} must be adjacent to the tracer {tracer}"
        )));
    }
    let grid = Grid::new(spec)?;
    let neighbors: Vec<TracerNeighbor> = spec
        .neighbors(tracer)?
        .into_iter()
        .map(|n| TracerNeighbor {
            label: n.label,
            site: n.site,
        })
        .collect();
    let walk = Walk {
        cdf: cumulative(&model.distributions(spec)?),
        start: grid.index(start)?,
        tracer: grid.index(tracer)?,
        tracer_neighbors: neighbors
            .iter()
            .map(|n| grid.index(&n.site))
            .collect::<Result<_>>()?,
        n_max: config.n_max,
        grid: &grid,
    };
    let z = neighbors.len();
    let batch = config.batch.max(1);
    let batches = config.num_walkers.div_ceil(batch);

    let partials: Vec<Result<Vec<u64>>> = (0..batches)
        .into_par_iter()
        .map(|b| {
            // counts[(n - 2) * z + k], censored last
            let mut counts = vec![0u64; (config.n_max - 1) * z + 1];
            let lo = b * batch;
            let hi = (lo + batch).min(config.num_walkers);
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            for w in lo..hi {
                rng.set_stream(w);
                rng.set_word_pos(0);
                match walk.run(&mut rng)? {
                    Some((n, k)) => counts[(n - 2) * z + k] += 1,
                    None => *counts.last_mut().unwrap() += 1,
                }
            }
            Ok(counts)
        })
        .collect();

    let mut total = vec![0u64; (config.n_max - 1) * z + 1];
    for part in partials {
        for (t, c) in total.iter_mut().zip(part?) {
            *t += c;
        }
    }
    let mut hits = BTreeMap::new();
    for n in 2..=config.n_max {
        let row: BTreeMap<String, u64> = neighbors
            .iter()
            .enumerate()
            .filter_map(|(k, nb)| {
                let c = total[(n - 2) * z + k];
                (c > 0).then(|| (nb.label.clone(), c))
            })
            .collect();
        hits.insert(n, row);
    }
    Ok(FirstPassageTally {
        config: config.clone(),
        lattice: spec.name.clone(),
        tracer: *tracer,
        neighbors,
        hits,
        walkers: config.num_walkers,
        censored: *total.last().unwrap(),
    })
}

/// Hit fractions with their binomial standard errors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrivalEstimate {
    pub arrivals: PropagationResult,
    pub stderr: BTreeMap<usize, BTreeMap<String, f64>>,
    pub walkers: u64,
}

pub fn tally_to_arrivals(tally: &FirstPassageTally) -> Result<ArrivalEstimate> {
    if tally.walkers == 0 {
        return Err(domain("the tally holds no walkers"));
    }
    let w = tally.walkers as f64;
    let z = tally.neighbors.len();
    let mut rows = BTreeMap::new();
    let mut stderr = BTreeMap::new();
    for (n, m) in &tally.hits {
        let mut row = vec![0.0; z];
        let mut se = BTreeMap::new();
        for (k, nb) in tally.neighbors.iter().enumerate() {
            if let Some(c) = m.get(&nb.label) {
                let p = *c as f64 / w;
                row[k] = p;
                se.insert(nb.label.clone(), (p * (1.0 - p) / w).sqrt());
            }
        }
        rows.insert(*n, row);
        stderr.insert(*n, se);
    }
    Ok(ArrivalEstimate {
        arrivals: PropagationResult::from_rows(
            tally.tracer,
            tally.neighbors.clone(),
            tally.config.n_max,
            &rows,
        ),
        stderr,
        walkers: tally.walkers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mu::run;

    fn square(n_max: usize) -> (LatticeSpec, SiteRef, SiteRef) {
        let spec = LatticeSpec::builtin("square", n_max).unwrap();
        let (s, t) = (spec.default_start(), spec.tracer());
        (spec, s, t)
    }

    #[test]
    fn two_step_hits_are_binomial() {
        let (spec, s, t) = square(2);
        let cfg = WalkConfig::new(2, 200_000, 11);
        let tally = simulate(&spec, &HopModel::uniform(), &s, &t, &cfg).unwrap();
        assert_eq!(tally.captured() + tally.censored, tally.walkers);
        let est = tally_to_arrivals(&tally).unwrap();
        let p = est.arrivals.arrival(2, "-y");
        assert!((p - 0.25).abs() < 4.0 * (0.25 * 0.75 / 200_000f64).sqrt(), "{p}");
        assert_eq!(est.arrivals.total_at(2), p);
    }

    #[test]
    fn agrees_with_propagation_within_three_sigma() {
        let (spec, s, t) = square(6);
        let cfg = WalkConfig::new(6, 400_000, 3);
        let tally = simulate(&spec, &HopModel::uniform(), &s, &t, &cfg).unwrap();
        let est = tally_to_arrivals(&tally).unwrap();
        let exact = run(&spec, &HopModel::uniform(), &s, &t, 6).unwrap();
        for n in 2..=6 {
            for nb in &exact.neighbors {
                let e = exact.arrival(n, &nb.label);
                let p = est.arrivals.arrival(n, &nb.label);
                let se = (e * (1.0 - e) / cfg.num_walkers as f64).sqrt().max(1e-12);
                assert!((p - e).abs() <= 3.5 * se, "N={n} {}: {p} vs {e}", nb.label);
            }
        }
    }

    #[test]
    fn tally_is_independent_of_thread_count_and_batching() {
        let (spec, s, t) = square(8);
        let cfg = WalkConfig {
            batch: 1000,
            ..WalkConfig::new(8, 20_000, 99)
        };
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| simulate(&spec, &HopModel::uniform(), &s, &t, &cfg).unwrap());
        let b = four.install(|| simulate(&spec, &HopModel::uniform(), &s, &t, &cfg).unwrap());
        assert_eq!(a, b);
        let rebatched = WalkConfig { batch: 777, ..cfg.clone() };
        let c = simulate(&spec, &HopModel::uniform(), &s, &t, &rebatched).unwrap();
        assert_eq!(a.hits, c.hits);
    }

    #[test]
    fn truncation_matches_shorter_run() {
        let (spec, s, t) = square(8);
        let long = simulate(&spec, &HopModel::uniform(), &s, &t, &WalkConfig::new(8, 5000, 1)).unwrap();
        let short = simulate(&spec, &HopModel::uniform(), &s, &t, &WalkConfig::new(4, 5000, 1)).unwrap();
        assert_eq!(long.truncated(4), short);
    }

    #[test]
    fn stderr_arithmetic() {
        let (spec, s, t) = square(2);
        let mut tally = simulate(&spec, &HopModel::uniform(), &s, &t, &WalkConfig::new(2, 1, 0)).unwrap();
        tally.walkers = 1_000_000;
        tally.hits = BTreeMap::from([(2, BTreeMap::from([("-y".to_string(), 250_317)]))]);
        tally.censored = tally.walkers - 250_317;
        let est = tally_to_arrivals(&tally).unwrap();
        assert_eq!(est.arrivals.arrival(2, "-y"), 0.250317);
        assert!((est.stderr[&2]["-y"] - 4.3e-4).abs() < 1e-5);

        tally.hits.clear();
        let empty = tally_to_arrivals(&tally).unwrap();
        assert_eq!(empty.arrivals.captured_mass, 0.0);
    }

    #[test]
    fn zero_walkers_is_a_domain_error() {
        let (spec, s, t) = square(2);
        let r = simulate(&spec, &HopModel::uniform(), &s, &t, &WalkConfig::new(2, 0, 0));
        assert!(matches!(r, Err(Error::Domain(_))));
    }
}
