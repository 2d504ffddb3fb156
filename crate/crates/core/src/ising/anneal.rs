//! Simulated annealing with restarts, used to collect the degenerate valid
//! trajectories of a problem.
//!
//! Each restart is single-bit-flip Metropolis from the empty configuration
//! in three phases:
//!
//! 1. cool geometrically from `t_hot` to `t_cold` with the constraint
//!    penalty scaled by `penalty_start`;
//! 2. hold at `t_cold` for `hold_sweeps` sweeps, recording every valid
//!    trajectory the chain passes through;
//! 3. raise the penalty weight to 1 over `ramp_sweeps` sweeps and finish
//!    with a zero-temperature descent.
//!
//! With the full penalty throughout, moving a vacancy costs about
//! `Λ - 2|t|` while an adjacent hop only gains `|t|`, so single flips freeze
//! into paths with non-adjacent hops long before they find valid ones.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::lattice::SiteRef;

use super::IsingProblem;

pub const DEFAULT_SATURATION_WINDOW: usize = 50;
/// Restarts per parallel work item and thread.
const RESTART_BATCH: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub t_hot: f64,
    pub t_cold: f64,
    /// Cooling sweeps.
    pub sweeps: usize,
    /// Penalty weight during cooling and holding, in `(0, 1]`.
    pub penalty_start: f64,
    pub hold_sweeps: usize,
    pub ramp_sweeps: usize,
}

impl Schedule {
    /// Plain annealing on the full problem.
    pub fn plain(t_hot: f64, t_cold: f64, sweeps: usize) -> Self {
        Schedule {
            t_hot,
            t_cold,
            sweeps,
            penalty_start: 1.0,
            hold_sweeps: 0,
            ramp_sweeps: 0,
        }
    }

    /// Defaults scaled to the problem's hop energy `|t|` and penalty `Λ`.
    /// The initial penalty is `2.5 |t|`, enough to keep one vacancy per step
    /// while letting it move.
    pub fn default_for(problem: &IsingProblem) -> Self {
        let t = problem.max_abs_hop().max(1e-3);
        Schedule {
            t_hot: 0.6 * t,
            t_cold: 0.25 * t,
            sweeps: 200,
            penalty_start: (2.5 * t / problem.penalty).min(1.0),
            hold_sweeps: 400,
            ramp_sweeps: 100,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.t_hot.is_finite() && self.t_cold > 0.0 && self.t_hot >= self.t_cold) {
            return Err(domain(format!(
                "the schedule must cool: t_hot = {}, t_cold = {}",
                self.t_hot, self.t_cold
            )));
        }
        if !(self.penalty_start > 0.0 && self.penalty_start <= 1.0) {
            return Err(domain(format!(
                "penalty_start must lie in (0, 1], got {}",
                self.penalty_start
            )));
        }
        if self.sweeps + self.hold_sweeps + self.ramp_sweeps == 0 {
            return Err(domain("the schedule needs at least one sweep"));
        }
        Ok(())
    }

    fn cooling_temperature(&self, sweep: usize) -> f64 {
        if self.sweeps <= 1 {
            return self.t_cold;
        }
        let x = sweep as f64 / (self.sweeps - 1) as f64;
        self.t_hot * (self.t_cold / self.t_hot).powf(x)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnealOutcome {
    /// Distinct valid trajectories, in lexicographic site order.
    pub trajectories: Vec<Vec<SiteRef>>,
    pub restarts_run: usize,
    /// Restarts whose final configuration decoded to a valid trajectory.
    pub valid_samples: usize,
    /// Whether the run ended on the saturation window rather than the
    /// restart budget.
    pub saturated: bool,
}

/// Compressed adjacency of the couplings, with hop and penalty parts kept
/// apart.
struct Couplings {
    start: Vec<usize>,
    other: Vec<usize>,
    hop: Vec<f64>,
    penalty: Vec<f64>,
}

impl Couplings {
    fn new(problem: &IsingProblem) -> Self {
        let n = problem.num_vars();
        let hops = problem.hop_couplings();
        let mut deg = vec![0usize; n + 1];
        for &(i, j) in problem.quadratic.keys() {
            deg[i + 1] += 1;
            deg[j + 1] += 1;
        }
        for k in 0..n {
            deg[k + 1] += deg[k];
        }
        let mut fill = deg.clone();
        let mut other = vec![0; deg[n]];
        let mut hop = vec![0.0; deg[n]];
        let mut penalty = vec![0.0; deg[n]];
        for (key, v) in &problem.quadratic {
            let h = hops.get(key).copied().unwrap_or(0.0);
            let (i, j) = *key;
            for (a, b) in [(i, j), (j, i)] {
                other[fill[a]] = b;
                hop[fill[a]] = h;
                penalty[fill[a]] = v - h;
                fill[a] += 1;
            }
        }
        Couplings {
            start: deg,
            other,
            hop,
            penalty,
        }
    }
}

/// Local fields: the energy change of switching each variable on, split
/// into hop and penalty parts.
struct Fields {
    hop: Vec<f64>,
    penalty: Vec<f64>,
}

impl Fields {
    fn delta(&self, bits: &[bool], j: usize, weight: f64) -> f64 {
        let on = self.hop[j] + weight * self.penalty[j];
        if bits[j] {
            -on
        } else {
            on
        }
    }

    fn flip(&mut self, bits: &mut [bool], c: &Couplings, j: usize) {
        let d = if bits[j] { -1.0 } else { 1.0 };
        bits[j] = !bits[j];
        for r in c.start[j]..c.start[j + 1] {
            let k = c.other[r];
            self.hop[k] += d * c.hop[r];
            self.penalty[k] += d * c.penalty[r];
        }
    }
}

struct Chain<'a> {
    problem: &'a IsingProblem,
    couplings: &'a Couplings,
    bits: Vec<bool>,
    fields: Fields,
}

impl Chain<'_> {
    fn sweep(&mut self, rng: &mut ChaCha8Rng, temperature: f64, weight: f64) {
        let n = self.bits.len();
        let beta = 1.0 / temperature;
        for _ in 0..n {
            let j = rng.gen_range(0..n);
            let delta = self.fields.delta(&self.bits, j, weight);
            if delta <= 0.0 || rng.gen::<f64>() < (-delta * beta).exp() {
                self.fields.flip(&mut self.bits, self.couplings, j);
            }
        }
    }

    fn descend(&mut self) {
        loop {
            let mut improved = false;
            for j in 0..self.bits.len() {
                if self.fields.delta(&self.bits, j, 1.0) < -1e-12 {
                    self.fields.flip(&mut self.bits, self.couplings, j);
                    improved = true;
                }
            }
            if !improved {
                return;
            }
        }
    }

    /// Sites of the current configuration if it is a valid trajectory.
    fn valid_sites(&self) -> Option<Vec<SiteRef>> {
        let m = self.problem.sites.len();
        // cheap one-hot screen before the full decode
        let one_hot = self
            .bits
            .chunks(m)
            .all(|row| row.iter().filter(|b| **b).count() == 1);
        if !one_hot {
            return None;
        }
        let d = self.problem.decode(&self.bits).ok()?;
        d.valid.then_some(d.sites)
    }
}

struct RestartResult {
    final_bits: Vec<bool>,
    /// Distinct valid trajectories seen while holding, in order of first visit.
    visited: Vec<Vec<SiteRef>>,
}

fn anneal_once(problem: &IsingProblem, c: &Couplings, schedule: &Schedule, rng: &mut ChaCha8Rng) -> RestartResult {
    let n = problem.num_vars();
    let mut chain = Chain {
        problem,
        couplings: c,
        bits: vec![false; n],
        // all linear terms are penalty terms
        fields: Fields {
            hop: vec![0.0; n],
            penalty: problem.linear.clone(),
        },
    };
    for sweep in 0..schedule.sweeps {
        chain.sweep(rng, schedule.cooling_temperature(sweep), schedule.penalty_start);
    }
    let mut visited = Vec::new();
    let mut seen = BTreeSet::new();
    for _ in 0..schedule.hold_sweeps {
        chain.sweep(rng, schedule.t_cold, schedule.penalty_start);
        if let Some(sites) = chain.valid_sites() {
            if seen.insert(sites.clone()) {
                visited.push(sites);
            }
        }
    }
    for k in 1..=schedule.ramp_sweeps {
        let x = k as f64 / schedule.ramp_sweeps as f64;
        let weight = schedule.penalty_start + (1.0 - schedule.penalty_start) * x;
        chain.sweep(rng, schedule.t_cold, weight);
    }
    chain.descend();
    RestartResult {
        final_bits: chain.bits,
        visited,
    }
}

/// Final configuration of restart `restart`.
pub fn sample(problem: &IsingProblem, schedule: &Schedule, seed: u64, restart: u64) -> Result<Vec<bool>> {
    schedule.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(restart);
    Ok(anneal_once(problem, &Couplings::new(problem), schedule, &mut rng).final_bits)
}

/// Runs up to `restarts` independent anneals and collects the distinct valid
/// trajectories they visit while holding and end in. Stops once `window`
/// consecutive restarts add nothing new (`window = 0` disables the stop).
///
/// Restart `r` uses ChaCha8 stream `r` of `seed`; results are merged in
/// restart order, so the outcome is independent of the thread count.
pub fn anneal(
    problem: &IsingProblem,
    schedule: &Schedule,
    restarts: usize,
    seed: u64,
    window: usize,
) -> Result<AnnealOutcome> {
    schedule.validate()?;
    if restarts == 0 {
        return Err(domain("at least one restart is required"));
    }
    let couplings = Couplings::new(problem);
    let mut found = BTreeSet::new();
    let mut valid_samples = 0;
    let mut since_new = 0;
    let mut done = 0;
    let mut saturated = false;
    'outer: while done < restarts {
        let hi = (done + RESTART_BATCH * rayon::current_num_threads().max(1)).min(restarts);
        // how far ahead we compute does not change the outcome
        let results: Vec<RestartResult> = (done..hi)
            .into_par_iter()
            .map(|r| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(r as u64);
                anneal_once(problem, &couplings, schedule, &mut rng)
            })
            .collect();
        for res in results {
            done += 1;
            let mut new = false;
            for sites in res.visited {
                new |= found.insert(sites);
            }
            let d = problem.decode(&res.final_bits)?;
            if d.valid {
                valid_samples += 1;
                new |= found.insert(d.sites);
            }
            if new {
                since_new = 0;
            } else {
                since_new += 1;
                if window > 0 && since_new >= window {
                    saturated = true;
                    break 'outer;
                }
            }
        }
    }
    Ok(AnnealOutcome {
        trajectories: found.into_iter().collect(),
        restarts_run: done,
        valid_samples,
        saturated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{HopModel, LatticeSpec};

    fn square(n: usize) -> IsingProblem {
        let spec = LatticeSpec::builtin("square", n).unwrap();
        IsingProblem::for_lattice(&spec, &HopModel::uniform(), n, None).unwrap()
    }

    #[test]
    fn two_steps_find_the_single_return() {
        let p = square(2);
        let out = anneal(&p, &Schedule::default_for(&p), 200, 1, DEFAULT_SATURATION_WINDOW).unwrap();
        assert_eq!(out.trajectories, vec![vec![p.start, p.tracer]]);
        assert!(out.saturated);
    }

    #[test]
    fn outcome_is_independent_of_threads() {
        let p = square(4);
        let s = Schedule::default_for(&p);
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let three = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let a = one.install(|| anneal(&p, &s, 300, 5, 0).unwrap());
        let b = three.install(|| anneal(&p, &s, 300, 5, 0).unwrap());
        assert_eq!(a, b);
        assert_eq!(a.restarts_run, 300);
    }

    #[test]
    fn rejects_bad_schedules() {
        let p = square(2);
        let warm = Schedule::plain(0.1, 1.0, 10);
        assert!(anneal(&p, &warm, 10, 0, 0).is_err());
        assert!(anneal(&p, &Schedule::default_for(&p), 0, 0, 0).is_err());
    }
}
