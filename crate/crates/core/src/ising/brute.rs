//! Exhaustive scan of every configuration of a small problem.

use crate::error::{Error, Result};

use super::IsingProblem;

pub const BRUTE_FORCE_MAX_VARS: usize = 24;

/// Exact ground energy and every configuration attaining it.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundSet {
    pub energy: f64,
    pub configs: Vec<Vec<bool>>,
}

/// Energies within this distance of the minimum count as degenerate.
const DEGENERACY_TOL: f64 = 1e-9;
/// Flips between exact recomputations of the running energy.
const RESYNC_EVERY: u64 = 1 << 14;

/// Visits all `2^n` configurations in Gray-code order with their energies.
pub fn for_each_config(problem: &IsingProblem, mut visit: impl FnMut(&[bool], f64)) -> Result<()> {
    let n = problem.num_vars();
    if n > BRUTE_FORCE_MAX_VARS {
        return Err(Error::Infeasible(format!(
            "brute force over {n} variables needs 2^{n} evaluations (limit {BRUTE_FORCE_MAX_VARS} variables)"
        )));
    }
    let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for (&(i, j), v) in &problem.quadratic {
        adj[i].push((j, *v));
        adj[j].push((i, *v));
    }
    let mut bits = vec![false; n];
    let mut energy = problem.constant_offset;
    visit(&bits, energy);
    for k in 1u64..(1u64 << n) {
        let j = k.trailing_zeros() as usize;
        let mut field = problem.linear[j];
        for &(o, v) in &adj[j] {
            if bits[o] {
                field += v;
            }
        }
        if bits[j] {
            energy -= field;
        } else {
            energy += field;
        }
        bits[j] = !bits[j];
        if k % RESYNC_EVERY == 0 {
            energy = problem.energy(&bits)?;
        }
        visit(&bits, energy);
    }
    Ok(())
}

pub fn brute_force_ground(problem: &IsingProblem) -> Result<GroundSet> {
    let mut best = f64::INFINITY;
    let mut configs: Vec<Vec<bool>> = Vec::new();
    for_each_config(problem, |bits, e| {
        if e < best - DEGENERACY_TOL {
            best = e;
            configs.clear();
            configs.push(bits.to_vec());
        } else if e <= best + DEGENERACY_TOL {
            configs.push(bits.to_vec());
        }
    })?;
    // report the exact energy rather than the running sum
    let energy = problem.energy(&configs[0])?;
    configs.sort();
    Ok(GroundSet { energy, configs })
}
