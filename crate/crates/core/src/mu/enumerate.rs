//! Depth-first enumeration of every first-passage trajectory. Exponential in
//! `n_max`; kept as an oracle for the propagation engine.

use std::collections::{BTreeMap, HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use super::{check_setup, PropagationResult, TracerNeighbor};
use crate::error::{Error, Result};
use crate::lattice::{cos_theta, Boundary, HopModel, LatticeSpec, SiteRef};

/// Largest horizon the enumerator accepts.
pub const ENUMERATION_MAX_N: usize = 16;
/// Budget in raw path prefixes: `4^15`, what `n_max = 16` costs on the square lattice.
const PATH_BUDGET: f64 = 1_073_741_824.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    /// Vacancy positions at time steps `1..=N`; starts at `S`, ends at `T`.
    pub sites: Vec<SiteRef>,
    pub weight: f64,
    /// Position at time step `N - 1`.
    pub final_neighbor: SiteRef,
    pub theta_cos: f64,
}

impl TrajectoryRecord {
    /// Number of time steps `N`.
    pub fn steps(&self) -> usize {
        self.sites.len()
    }
}

struct Walker<'a> {
    spec: &'a LatticeSpec,
    probs: Vec<Vec<f64>>,
    tracer: SiteRef,
    dist: HashMap<SiteRef, usize>,
    cos: HashMap<SiteRef, f64>,
    n_max: usize,
}

impl Walker<'_> {
    fn step_targets(&self, site: &SiteRef) -> impl Iterator<Item = (SiteRef, f64)> + '_ {
        let sub = site.sublattice;
        let open = self.spec.boundary == Boundary::Open;
        let site = *site;
        self.spec.stencil[sub]
            .iter()
            .zip(&self.probs[sub])
            .map(move |(e, p)| (site.shifted(&e.offset, e.target), *p))
            .filter(move |(s, _)| !open || self.spec.contains(s))
    }

    fn dfs(
        &self,
        path: &mut Vec<SiteRef>,
        weight: f64,
        visit: &mut dyn FnMut(TrajectoryRecord),
    ) {
        let here = *path.last().expect("path starts at S");
        // path.len() = current time step
        let remaining = self.n_max - path.len();
        for (next, p) in self.step_targets(&here) {
            if next == self.tracer {
                path.push(next);
                visit(TrajectoryRecord {
                    sites: path.clone(),
                    weight: weight * p,
                    final_neighbor: here,
                    theta_cos: self.cos[&here],
                });
                path.pop();
                continue;
            }
            match self.dist.get(&next) {
                // one hop spent reaching `next`, at least `d` more to reach T
                Some(&d) if d < remaining => {
                    path.push(next);
                    self.dfs(path, weight * p, visit);
                    path.pop();
                }
                _ => {}
            }
        }
    }
}

/// Hop distances to the tracer, up to `radius`.
fn distances(spec: &LatticeSpec, tracer: &SiteRef, radius: usize) -> HashMap<SiteRef, usize> {
    let open = spec.boundary == Boundary::Open;
    let mut dist = HashMap::from([(*tracer, 0usize)]);
    let mut queue = VecDeque::from([*tracer]);
    while let Some(s) = queue.pop_front() {
        let d = dist[&s];
        if d == radius {
            continue;
        }
        for e in &spec.stencil[s.sublattice] {
            let n = s.shifted(&e.offset, e.target);
            if open && !spec.contains(&n) {
                continue;
            }
            dist.entry(n).or_insert_with(|| {
                queue.push_back(n);
                d + 1
            });
        }
    }
    dist
}

/// Refuses horizons whose enumeration would be too expensive.
pub fn enumeration_guard(spec: &LatticeSpec, n_max: usize) -> Result<()> {
    let z = spec.max_coordination() as f64;
    let cost = z.powi(n_max as i32 - 1);
    if n_max > ENUMERATION_MAX_N || cost > PATH_BUDGET {
        return Err(Error::Infeasible(format!(
            "enumerating {} trajectories up to N = {n_max} costs about {z}^{} = {cost:.3e} path prefixes \
             (limit {PATH_BUDGET:.3e}, N <= {ENUMERATION_MAX_N}); use the propagation engine instead",
            spec.name,
            n_max - 1
        )));
    }
    Ok(())
}

/// Calls `visit` once per valid trajectory with `N <= n_max`, in
/// depth-first stencil order.
pub fn for_each_trajectory(
    spec: &LatticeSpec,
    model: &HopModel,
    start: &SiteRef,
    tracer: &SiteRef,
    n_max: usize,
    mut visit: impl FnMut(TrajectoryRecord),
) -> Result<()> {
    check_setup(spec, start, tracer, n_max)?;
    enumeration_guard(spec, n_max)?;
    spec.validate()?;
    let flow = spec.flow(start, tracer);
    let mut cos = HashMap::new();
    for n in spec.neighbors(tracer)? {
        cos.insert(n.site, cos_theta(spec, tracer, &n.site, &flow)?);
    }
    let walker = Walker {
        spec,
        probs: model.distributions(spec)?,
        tracer: *tracer,
        dist: distances(spec, tracer, n_max),
        cos,
        n_max,
    };
    let mut path = vec![*start];
    walker.dfs(&mut path, 1.0, &mut visit);
    Ok(())
}

pub fn enumerate_trajectories(
    spec: &LatticeSpec,
    model: &HopModel,
    start: &SiteRef,
    tracer: &SiteRef,
    n_max: usize,
) -> Result<Vec<TrajectoryRecord>> {
    let mut out = Vec::new();
    for_each_trajectory(spec, model, start, tracer, n_max, |r| out.push(r))?;
    Ok(out)
}

/// Sums trajectory weights by `(N, final neighbor)`.
pub fn aggregate(
    spec: &LatticeSpec,
    tracer: &SiteRef,
    n_max: usize,
    records: impl IntoIterator<Item = TrajectoryRecord>,
) -> Result<PropagationResult> {
    let neighbors: Vec<TracerNeighbor> = spec
        .neighbors(tracer)?
        .into_iter()
        .map(|n| TracerNeighbor {
            label: n.label,
            site: n.site,
        })
        .collect();
    let mut rows: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for r in records {
        let k = neighbors
            .iter()
            .position(|n| n.site == r.final_neighbor)
            .ok_or_else(|| Error::Domain(format!("{} is not a tracer neighbor", r.final_neighbor)))?;
        rows.entry(r.steps()).or_insert_with(|| vec![0.0; neighbors.len()])[k] += r.weight;
    }
    Ok(PropagationResult::from_rows(*tracer, neighbors, n_max, &rows))
}

/// Enumerates and aggregates without materialising the records.
pub fn enumerate_arrivals(
    spec: &LatticeSpec,
    model: &HopModel,
    start: &SiteRef,
    tracer: &SiteRef,
    n_max: usize,
) -> Result<PropagationResult> {
    let labels: HashMap<SiteRef, usize> = spec
        .neighbors(tracer)?
        .iter()
        .enumerate()
        .map(|(k, n)| (n.site, k))
        .collect();
    let z = labels.len();
    let mut rows: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for_each_trajectory(spec, model, start, tracer, n_max, |r| {
        rows.entry(r.steps()).or_insert_with(|| vec![0.0; z])[labels[&r.final_neighbor]] += r.weight;
    })?;
    aggregate(spec, tracer, n_max, std::iter::empty())
        .map(|empty| PropagationResult::from_rows(*tracer, empty.neighbors, n_max, &rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mu::run;
    use approx::assert_relative_eq;

    #[test]
    fn square_four_steps_has_six_paths() {
        let spec = LatticeSpec::builtin("square", 4).unwrap();
        let (s, t) = (spec.default_start(), spec.tracer());
        let recs = enumerate_trajectories(&spec, &HopModel::uniform(), &s, &t, 4).unwrap();
        assert_eq!(recs.len(), 6);
        let short: Vec<_> = recs.iter().filter(|r| r.steps() == 2).collect();
        assert_eq!(short.len(), 1);
        assert_eq!(short[0].sites, vec![s, t]);
        assert_eq!(short[0].weight, 0.25);
        assert_eq!(short[0].theta_cos, -1.0);
        assert_eq!(recs.iter().filter(|r| r.steps() == 4).count(), 5);
    }

    #[test]
    fn records_are_valid_walks() {
        let spec = LatticeSpec::builtin("triangular", 6).unwrap();
        let (s, t) = (spec.default_start(), spec.tracer());
        for r in enumerate_trajectories(&spec, &HopModel::uniform(), &s, &t, 6).unwrap() {
            assert_eq!(r.sites[0], s);
            assert_eq!(*r.sites.last().unwrap(), t);
            assert!(r.sites[..r.steps() - 1].iter().all(|x| *x != t));
            assert!(r.sites.windows(2).all(|w| spec.are_neighbors(&w[0], &w[1])));
            assert_eq!(r.final_neighbor, r.sites[r.steps() - 2]);
            assert_relative_eq!(r.weight, 6f64.powi(1 - r.steps() as i32));
        }
    }

    #[test]
    fn matches_propagation_with_barriers() {
        let spec = LatticeSpec::builtin("square", 8).unwrap();
        let model = HopModel::with_barriers(
            [("-y", 0.3), ("+y", 0.0), ("-x", 0.1), ("+x", 0.5)]
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect(),
            0.7,
        )
        .unwrap();
        let (s, t) = (spec.default_start(), spec.tracer());
        let oracle = enumerate_arrivals(&spec, &model, &s, &t, 8).unwrap();
        let mu = run(&spec, &model, &s, &t, 8).unwrap();
        for n in 2..=8 {
            for nb in &mu.neighbors {
                let (a, b) = (oracle.arrival(n, &nb.label), mu.arrival(n, &nb.label));
                assert!((a - b).abs() < 1e-12, "N={n} {}: {a} vs {b}", nb.label);
            }
        }
        let recs = enumerate_trajectories(&spec, &model, &s, &t, 8).unwrap();
        assert_eq!(aggregate(&spec, &t, 8, recs).unwrap(), oracle);
    }

    #[test]
    fn guard_refuses_large_horizons() {
        let spec = LatticeSpec::builtin("square", 17).unwrap();
        let (s, t) = (spec.default_start(), spec.tracer());
        let err = enumerate_trajectories(&spec, &HopModel::uniform(), &s, &t, 17).unwrap_err();
        assert!(matches!(err, Error::Infeasible(_)));
        let fcc = LatticeSpec::builtin("fcc", 10).unwrap();
        let r = enumerate_arrivals(&fcc, &HopModel::uniform(), &fcc.default_start(), &fcc.tracer(), 10);
        assert!(matches!(r, Err(Error::Infeasible(_))));
    }

    #[test]
    fn open_boundary_limits_paths() {
        // a 2x2 open square is a 4-cycle: S -> far corner -> other -> T, or straight back
        let mut spec = LatticeSpec::builtin("square", 2).unwrap();
        spec.extent = vec![2, 2];
        spec.boundary = Boundary::Open;
        let (s, t) = (spec.default_start(), spec.tracer());
        let recs = enumerate_trajectories(&spec, &HopModel::uniform(), &s, &t, 4).unwrap();
        let lens: Vec<_> = recs.iter().map(TrajectoryRecord::steps).collect();
        assert_eq!(lens, vec![2, 4, 4]);
    }
}
