//! Binary quadratic (QUBO) encoding of fixed-length vacancy trajectories.
//!
//! Variable `q(α, i)` is 1 when the vacancy sits on site `α` at time step
//! `i`. Its id is `(i - 1) * num_sites + index(α)`. The energy is
//!
//! ```text
//! E = Σ_i Σ_{α~β} t(α→β) q(α,i) q(β,i+1)
//!   + Λ [ Σ_i (Σ_α q(α,i) - 1)² + (q(S,1) - 1)² + (Σ_{1<i<N} q(T,i))² + (q(T,N) - 1)² ]
//! ```
//!
//! with `t(α→β) = ln p(β|α) ≤ 0`, so valid trajectories have energy
//! `ln Π p` and every constraint violation costs at least `Λ - 2N max|t|`.

mod anneal;
mod brute;
mod qubo_io;

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::grid::Grid;
use crate::lattice::{cos_theta, HopModel, LatticeSpec, SiteRef};
use crate::mu::TrajectoryRecord;

pub use anneal::{anneal, sample, AnnealOutcome, Schedule, DEFAULT_SATURATION_WINDOW};
pub use brute::{brute_force_ground, for_each_config, GroundSet, BRUTE_FORCE_MAX_VARS};
pub use qubo_io::{export_qubo, parse_qubo, qubo_text, read_sidecar, QuboFile, Sidecar, VariableInfo};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Violation {
    MultiOccupancy,
    EmptyStep,
    BadEndpoint,
    EarlyCoalescence,
    NonAdjacentHop,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Violation::MultiOccupancy => "multi-occupancy",
            Violation::EmptyStep => "empty-step",
            Violation::BadEndpoint => "bad-endpoint",
            Violation::EarlyCoalescence => "early-coalescence",
            Violation::NonAdjacentHop => "non-adjacent-hop",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodedTrajectory {
    pub valid: bool,
    /// Occupied site per step; complete only when every step is one-hot.
    pub sites: Vec<SiteRef>,
    pub violation: Option<Violation>,
}

impl DecodedTrajectory {
    fn invalid(v: Violation) -> Self {
        DecodedTrajectory {
            valid: false,
            sites: Vec::new(),
            violation: Some(v),
        }
    }
}

#[derive(Clone, Debug)]
pub struct IsingProblem {
    pub lattice: LatticeSpec,
    pub model: HopModel,
    pub start: SiteRef,
    pub tracer: SiteRef,
    pub n_steps: usize,
    /// Sites of the lattice extent, in storage order.
    pub sites: Vec<SiteRef>,
    site_index: HashMap<SiteRef, usize>,
    pub penalty: f64,
    /// Dense linear coefficients indexed by variable id.
    pub linear: Vec<f64>,
    /// Couplings keyed by `(i, j)` with `i < j`.
    pub quadratic: BTreeMap<(usize, usize), f64>,
    /// `t(α→β)` per source site index, for in-extent neighbors `β`.
    pub hop_coeffs: Vec<Vec<(usize, f64)>>,
    pub constant_offset: f64,
}

/// Default penalty `(2N + 1) max|t|`, just above the separation bound.
pub fn default_penalty(n: usize, max_abs_t: f64) -> f64 {
    let scale = if max_abs_t > 0.0 { max_abs_t } else { 1.0 };
    (2 * n + 1) as f64 * scale
}

fn hop_table(spec: &LatticeSpec, model: &HopModel, sites: &[SiteRef], index: &HashMap<SiteRef, usize>) -> Result<Vec<Vec<(usize, f64)>>> {
    let probs = model.distributions(spec)?;
    Ok(sites
        .iter()
        .map(|a| {
            spec.stencil[a.sublattice]
                .iter()
                .zip(&probs[a.sublattice])
                .filter_map(|(e, p)| index.get(&a.shifted(&e.offset, e.target)).map(|b| (*b, p.ln())))
                .collect()
        })
        .collect())
}

impl IsingProblem {
    /// Builds the problem on the extent of `spec` with the default penalty.
    pub fn build(
        spec: &LatticeSpec,
        model: &HopModel,
        start: &SiteRef,
        tracer: &SiteRef,
        n: usize,
    ) -> Result<Self> {
        Self::build_with_penalty(spec, model, start, tracer, n, None)
    }

    /// Builds the problem on the smallest window holding every trajectory of
    /// `n` steps, with the default start and tracer of that window.
    pub fn for_lattice(spec: &LatticeSpec, model: &HopModel, n: usize, penalty: Option<f64>) -> Result<Self> {
        let window = spec.trajectory_window(n);
        let (s, t) = (window.default_start(), window.tracer());
        Self::build_with_penalty(&window, model, &s, &t, n, penalty)
    }

    pub fn build_with_penalty(
        spec: &LatticeSpec,
        model: &HopModel,
        start: &SiteRef,
        tracer: &SiteRef,
        n: usize,
        penalty: Option<f64>,
    ) -> Result<Self> {
        if n < 2 {
            return Err(domain(format!("trajectories need at least 2 steps, got {n}")));
        }
        if !spec.are_neighbors(tracer, start) {
            return Err(domain(format!(
                "the vacancy start {start} must be adjacent to the tracer {tracer}"
            )));
        }
        let grid = Grid::new(spec)?;
        grid.index(start)?;
        grid.index(tracer)?;
        let sites: Vec<SiteRef> = (0..grid.len()).map(|i| grid.site(i)).collect();
        let site_index: HashMap<SiteRef, usize> =
            sites.iter().enumerate().map(|(i, s)| (*s, i)).collect();
        let hop_coeffs = hop_table(spec, model, &sites, &site_index)?;
        let max_t = hop_coeffs
            .iter()
            .flatten()
            .map(|(_, t)| t.abs())
            .fold(0.0, f64::max);
        let lambda = match penalty {
            Some(p) if p.is_finite() && p > 0.0 => p,
            Some(p) => return Err(domain(format!("penalty must be positive, got {p}"))),
            None => default_penalty(n, max_t),
        };

        let m = sites.len();
        let var = |site: usize, step: usize| (step - 1) * m + site;
        let mut linear = vec![0.0; m * n];
        let mut quadratic: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        let mut add_pair = |a: usize, b: usize, v: f64| {
            let key = if a < b { (a, b) } else { (b, a) };
            *quadratic.entry(key).or_insert(0.0) += v;
        };

        for step in 1..n {
            for (a, hops) in hop_coeffs.iter().enumerate() {
                for &(b, t) in hops {
                    add_pair(var(a, step), var(b, step + 1), t);
                }
            }
        }
        // exactly one vacancy per step
        for step in 1..=n {
            for a in 0..m {
                linear[var(a, step)] -= lambda;
                for b in a + 1..m {
                    add_pair(var(a, step), var(b, step), 2.0 * lambda);
                }
            }
        }
        let (s, t) = (site_index[start], site_index[tracer]);
        linear[var(s, 1)] -= lambda;
        for i in 2..n {
            linear[var(t, i)] += lambda;
            for j in i + 1..n {
                add_pair(var(t, i), var(t, j), 2.0 * lambda);
            }
        }
        linear[var(t, n)] -= lambda;
        let offset = lambda * (n + 2) as f64;

        Ok(IsingProblem {
            lattice: spec.clone(),
            model: model.clone(),
            start: *start,
            tracer: *tracer,
            n_steps: n,
            sites,
            site_index,
            penalty: lambda,
            linear,
            quadratic,
            hop_coeffs,
            constant_offset: offset,
        })
    }

    pub fn num_vars(&self) -> usize {
        self.linear.len()
    }

    pub fn var_index(&self, site: &SiteRef, step: usize) -> Option<usize> {
        if step == 0 || step > self.n_steps {
            return None;
        }
        self.site_index.get(site).map(|i| (step - 1) * self.sites.len() + i)
    }

    /// `(site, step)` of a variable id.
    pub fn var_site(&self, id: usize) -> (SiteRef, usize) {
        let m = self.sites.len();
        (self.sites[id % m], id / m + 1)
    }

    /// Hop couplings `t` keyed like [`IsingProblem::quadratic`].
    pub fn hop_couplings(&self) -> BTreeMap<(usize, usize), f64> {
        let m = self.sites.len();
        let mut out = BTreeMap::new();
        for step in 1..self.n_steps {
            for (a, hops) in self.hop_coeffs.iter().enumerate() {
                for &(b, t) in hops {
                    let (i, j) = ((step - 1) * m + a, step * m + b);
                    *out.entry((i.min(j), i.max(j))).or_insert(0.0) += t;
                }
            }
        }
        out
    }

    /// Largest `|t|` over all couplings.
    pub fn max_abs_hop(&self) -> f64 {
        self.hop_coeffs.iter().flatten().map(|(_, t)| t.abs()).fold(0.0, f64::max)
    }

    /// `Λ - 2N max|t|`: the guaranteed energy gap of any invalid configuration.
    pub fn separation_bound(&self) -> f64 {
        self.penalty - 2.0 * self.n_steps as f64 * self.max_abs_hop()
    }

    fn check_len(&self, bits: &[bool]) -> Result<()> {
        if bits.len() != self.num_vars() {
            return Err(domain(format!(
                "configuration has {} bits, the problem has {} variables",
                bits.len(),
                self.num_vars()
            )));
        }
        Ok(())
    }

    pub fn energy(&self, bits: &[bool]) -> Result<f64> {
        self.check_len(bits)?;
        let mut e = self.constant_offset;
        for (i, b) in bits.iter().enumerate() {
            if *b {
                e += self.linear[i];
            }
        }
        for (&(i, j), v) in &self.quadratic {
            if bits[i] && bits[j] {
                e += v;
            }
        }
        Ok(e)
    }

    /// The configuration occupying `sites[i]` at step `i + 1`.
    pub fn config_for(&self, sites: &[SiteRef]) -> Result<Vec<bool>> {
        if sites.len() != self.n_steps {
            return Err(domain(format!(
                "a trajectory of this problem has {} steps, got {}",
                self.n_steps,
                sites.len()
            )));
        }
        let mut bits = vec![false; self.num_vars()];
        for (i, s) in sites.iter().enumerate() {
            let id = self
                .var_index(s, i + 1)
                .ok_or_else(|| domain(format!("site {s} is outside the problem extent")))?;
            bits[id] = true;
        }
        Ok(bits)
    }

    pub fn decode(&self, bits: &[bool]) -> Result<DecodedTrajectory> {
        self.check_len(bits)?;
        let m = self.sites.len();
        let mut sites = Vec::with_capacity(self.n_steps);
        let mut empty = false;
        for step in 0..self.n_steps {
            let occupied: Vec<usize> = (0..m).filter(|a| bits[step * m + a]).collect();
            match occupied.as_slice() {
                [] => empty = true,
                [a] => sites.push(self.sites[*a]),
                _ => return Ok(DecodedTrajectory::invalid(Violation::MultiOccupancy)),
            }
        }
        if empty {
            return Ok(DecodedTrajectory::invalid(Violation::EmptyStep));
        }
        let violation = if sites[0] != self.start || sites[self.n_steps - 1] != self.tracer {
            Some(Violation::BadEndpoint)
        } else if sites[1..self.n_steps - 1].contains(&self.tracer) {
            Some(Violation::EarlyCoalescence)
        } else if !sites.windows(2).all(|w| self.lattice.are_neighbors(&w[0], &w[1])) {
            Some(Violation::NonAdjacentHop)
        } else {
            None
        };
        Ok(DecodedTrajectory {
            valid: violation.is_none(),
            sites,
            violation,
        })
    }

    /// Trajectory record of a valid site sequence, weighted by its path
    /// probability.
    pub fn record(&self, sites: &[SiteRef]) -> Result<TrajectoryRecord> {
        let n = sites.len();
        if n < 2 {
            return Err(domain("a trajectory needs at least 2 steps"));
        }
        let mut ln_w = 0.0;
        for w in sites.windows(2) {
            let a = self.site_index[&w[0]];
            let b = self.site_index.get(&w[1]).copied();
            let t = self.hop_coeffs[a]
                .iter()
                .find(|(j, _)| Some(*j) == b)
                .map(|(_, t)| *t)
                .ok_or_else(|| domain(format!("{} and {} are not adjacent", w[0], w[1])))?;
            ln_w += t;
        }
        let flow = self.lattice.flow(&self.start, &self.tracer);
        let last = sites[n - 2];
        Ok(TrajectoryRecord {
            sites: sites.to_vec(),
            weight: ln_w.exp(),
            final_neighbor: last,
            theta_cos: cos_theta(&self.lattice, &self.tracer, &last, &flow)?,
        })
    }
}
