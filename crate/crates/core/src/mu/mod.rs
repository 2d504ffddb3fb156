//! Exact first-passage propagation of the vacancy field (matrix updating)
//! and a brute-force trajectory enumerator used as its oracle.
//!
//! The vacancy starts on the tracer's previous site `S` at time step 1. Each
//! update moves all mass one hop; mass hopping into the tracer site `T` at
//! time step `N` is recorded under the neighbor it came from and removed.

mod enumerate;
mod field;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::lattice::{HopModel, LatticeSpec, SiteRef};

pub use enumerate::{
    aggregate, enumerate_arrivals, enumeration_guard, enumerate_trajectories, for_each_trajectory, TrajectoryRecord,
    ENUMERATION_MAX_N,
};
pub use field::{
    init_field, propagate_step, FieldMode, FieldState, LogMass, Mass, Propagator, TracerNeighbor,
};

/// First-passage mass `P_k^(N)` per time step `N` and tracer neighbor `k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropagationResult {
    pub n_max: usize,
    pub tracer: SiteRef,
    pub neighbors: Vec<TracerNeighbor>,
    /// `N -> (neighbor label -> mass)`, with an entry (possibly empty) for
    /// every `N` in `2..=n_max`. Only nonzero masses are listed.
    pub per_step_arrivals: BTreeMap<usize, BTreeMap<String, f64>>,
    pub captured_mass: f64,
}

impl PropagationResult {
    /// Builds a result from dense per-step rows aligned with `neighbors`.
    pub fn from_rows(
        tracer: SiteRef,
        neighbors: Vec<TracerNeighbor>,
        n_max: usize,
        rows: &BTreeMap<usize, Vec<f64>>,
    ) -> Self {
        let mut per_step = BTreeMap::new();
        let mut captured = 0.0;
        for n in 2..=n_max {
            let mut entry = BTreeMap::new();
            if let Some(row) = rows.get(&n) {
                for (nb, m) in neighbors.iter().zip(row) {
                    if *m != 0.0 {
                        entry.insert(nb.label.clone(), *m);
                        captured += m;
                    }
                }
            }
            per_step.insert(n, entry);
        }
        PropagationResult {
            n_max,
            tracer,
            neighbors,
            per_step_arrivals: per_step,
            captured_mass: captured,
        }
    }

    /// Arrival mass at step `n` through the neighbor labelled `label`.
    pub fn arrival(&self, n: usize, label: &str) -> f64 {
        self.per_step_arrivals
            .get(&n)
            .and_then(|m| m.get(label))
            .copied()
            .unwrap_or(0.0)
    }

    /// Total arrival mass at step `n`.
    pub fn total_at(&self, n: usize) -> f64 {
        self.per_step_arrivals
            .get(&n)
            .map(|m| m.values().sum())
            .unwrap_or(0.0)
    }

    pub fn neighbor_site(&self, label: &str) -> Option<SiteRef> {
        self.neighbors.iter().find(|n| n.label == label).map(|n| n.site)
    }

    /// The same result restricted to `N <= n_max`.
    pub fn truncated(&self, n_max: usize) -> Self {
        let n_max = n_max.min(self.n_max);
        let per_step: BTreeMap<_, _> = self
            .per_step_arrivals
            .range(..=n_max)
            .map(|(k, v)| (*k, v.clone()))
            .collect();
        let captured = per_step.values().flat_map(|m| m.values()).sum();
        PropagationResult {
            n_max,
            tracer: self.tracer,
            neighbors: self.neighbors.clone(),
            per_step_arrivals: per_step,
            captured_mass: captured,
        }
    }
}

/// Raw per-step arrivals in any mass representation. `arrivals[n][k]` is
/// the mass entering the tracer at step `n` from neighbor `k`; rows 0 and 1
/// are always zero.
#[derive(Clone, Debug)]
pub struct Arrivals<M: Mass> {
    pub n_max: usize,
    pub tracer: SiteRef,
    pub neighbors: Vec<TracerNeighbor>,
    pub arrivals: Vec<Vec<M>>,
}

impl<M: Mass> Arrivals<M> {
    pub fn to_result(&self) -> PropagationResult {
        let rows = self
            .arrivals
            .iter()
            .enumerate()
            .skip(2)
            .map(|(n, row)| (n, row.iter().map(Mass::to_f64).collect()))
            .collect();
        PropagationResult::from_rows(self.tracer, self.neighbors.clone(), self.n_max, &rows)
    }
}

fn check_setup(spec: &LatticeSpec, start: &SiteRef, tracer: &SiteRef, n_max: usize) -> Result<()> {
    if n_max < 2 {
        return Err(domain(format!("n_max must be at least 2, got {n_max}")));
    }
    if !spec.are_neighbors(tracer, start) {
        return Err(domain(format!(
            "the vacancy start {start} must be adjacent to the tracer {tracer}"
        )));
    }
    Ok(())
}

/// Propagates the field up to time step `n_max` in representation `M`.
pub fn run_with<M: Mass>(
    spec: &LatticeSpec,
    model: &HopModel,
    start: &SiteRef,
    tracer: &SiteRef,
    n_max: usize,
) -> Result<Arrivals<M>> {
    check_setup(spec, start, tracer, n_max)?;
    let prop = Propagator::new(spec, model, tracer)?;
    let mut cur = prop.init_field::<M>(start)?;
    let mut next = cur.clone();
    let z = prop.neighbors().len();
    let mut arrivals = vec![vec![M::zero(); z]; 2];
    // the field holds time step n - 1 when computing arrivals at step n
    for _n in 2..=n_max {
        let row = prop.step_into(&cur, &mut next)?;
        arrivals.push(row);
        std::mem::swap(&mut cur, &mut next);
    }
    Ok(Arrivals {
        n_max,
        tracer: *tracer,
        neighbors: prop.neighbors().to_vec(),
        arrivals,
    })
}

/// Exact first-passage probabilities up to time step `n_max` (weight mode).
pub fn run(
    spec: &LatticeSpec,
    model: &HopModel,
    start: &SiteRef,
    tracer: &SiteRef,
    n_max: usize,
) -> Result<PropagationResult> {
    Ok(run_with::<f64>(spec, model, start, tracer, n_max)?.to_result())
}
