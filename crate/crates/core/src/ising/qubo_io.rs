//! Plain-text QUBO files and their JSON sidecar.
//!
//! The coefficient file follows the qbsolv layout:
//!
//! ```text
//! c optional comment lines
//! p qubo 0 <num_vars> <num_linear> <num_quadratic>
//! i i <linear coefficient>
//! i j <coupling>            (i < j)
//! ```
//!
//! Values carry 17 significant digits so a re-parsed file reproduces the
//! in-memory energies. The constant offset lives in the sidecar.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::lattice::{LatticeConfig, SiteRef};

use super::IsingProblem;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariableInfo {
    pub id: usize,
    pub site: SiteRef,
    pub label: String,
    pub step: usize,
}

/// Everything needed to rebuild a problem and decode samples of it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub lattice: LatticeConfig,
    pub start: SiteRef,
    pub tracer: SiteRef,
    pub n_steps: usize,
    pub penalty: f64,
    pub constant_offset: f64,
    pub num_vars: usize,
    pub variables: Vec<VariableInfo>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<serde_json::Value>,
}

impl Sidecar {
    pub fn new(problem: &IsingProblem) -> Self {
        let mut lattice = LatticeConfig::from(problem.lattice.clone());
        lattice.barriers = problem.model.barriers.clone();
        lattice.temperature = (!problem.model.uniform).then_some(problem.model.temperature);
        let variables = (0..problem.num_vars())
            .map(|id| {
                let (site, step) = problem.var_site(id);
                VariableInfo {
                    id,
                    site,
                    label: site.to_string(),
                    step,
                }
            })
            .collect();
        Sidecar {
            lattice,
            start: problem.start,
            tracer: problem.tracer,
            n_steps: problem.n_steps,
            penalty: problem.penalty,
            constant_offset: problem.constant_offset,
            num_vars: problem.num_vars(),
            variables,
            manifest: None,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid sidecar: {e}")))
    }

    /// Rebuilds the problem the sidecar describes and checks that it has
    /// the recorded size and offset.
    pub fn problem(&self) -> Result<IsingProblem> {
        let model = self.lattice.hop_model();
        let p = IsingProblem::build_with_penalty(
            &self.lattice.lattice,
            &model,
            &self.start,
            &self.tracer,
            self.n_steps,
            Some(self.penalty),
        )?;
        if p.num_vars() != self.num_vars || (p.constant_offset - self.constant_offset).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "sidecar describes {} variables with offset {}, but the rebuilt problem has {} and {}",
                self.num_vars,
                self.constant_offset,
                p.num_vars(),
                p.constant_offset
            )));
        }
        Ok(p)
    }
}

/// Renders the coefficient file. Zero linear terms are omitted.
pub fn qubo_text(problem: &IsingProblem) -> String {
    let linear: Vec<(usize, f64)> = problem
        .linear
        .iter()
        .enumerate()
        .filter(|(_, v)| **v != 0.0)
        .map(|(i, v)| (i, *v))
        .collect();
    let mut out = String::new();
    let _ = writeln!(
        out,
        "c vacancy trajectories on '{}', N = {}, penalty = {:.16e}, offset = {:.16e}",
        problem.lattice.name, problem.n_steps, problem.penalty, problem.constant_offset
    );
    let _ = writeln!(
        out,
        "p qubo 0 {} {} {}",
        problem.num_vars(),
        linear.len(),
        problem.quadratic.len()
    );
    for (i, v) in linear {
        let _ = writeln!(out, "{i} {i} {v:.16e}");
    }
    for ((i, j), v) in &problem.quadratic {
        let _ = writeln!(out, "{i} {j} {v:.16e}");
    }
    out
}

/// Writes `qubo_path` and `sidecar_path`.
pub fn export_qubo(problem: &IsingProblem, qubo_path: &Path, sidecar_path: &Path) -> Result<()> {
    let sidecar = Sidecar::new(problem).to_json()?;
    std::fs::write(qubo_path, qubo_text(problem))?;
    std::fs::write(sidecar_path, sidecar)?;
    Ok(())
}

pub fn read_sidecar(path: &Path) -> Result<Sidecar> {
    Sidecar::from_json(&std::fs::read_to_string(path)?)
}

/// A parsed coefficient file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct QuboFile {
    pub num_vars: usize,
    pub linear: BTreeMap<usize, f64>,
    pub quadratic: BTreeMap<(usize, usize), f64>,
}

impl QuboFile {
    /// Energy of `bits`, with the sidecar's constant offset added.
    pub fn energy(&self, bits: &[bool], offset: f64) -> Result<f64> {
        if bits.len() != self.num_vars {
            return Err(domain(format!(
                "configuration has {} bits, the file declares {} variables",
                bits.len(),
                self.num_vars
            )));
        }
        let mut e = offset;
        for (i, v) in &self.linear {
            if bits[*i] {
                e += v;
            }
        }
        for ((i, j), v) in &self.quadratic {
            if bits[*i] && bits[*j] {
                e += v;
            }
        }
        Ok(e)
    }
}

pub fn parse_qubo(text: &str) -> Result<QuboFile> {
    let err = |line: usize, msg: String| Error::Parse { line, msg };
    let mut header: Option<(usize, usize, usize)> = None;
    let mut file = QuboFile::default();
    for (no, raw) in text.lines().enumerate() {
        let line = no + 1;
        let fields: Vec<&str> = raw.split_whitespace().collect();
        match fields.as_slice() {
            [] => continue,
            [c, ..] if c.starts_with('c') => continue,
            ["p", "qubo", _topology, nv, nl, nq] => {
                if header.is_some() {
                    return Err(err(line, "duplicate problem line".into()));
                }
                let num = |s: &str| {
                    s.parse::<usize>()
                        .map_err(|_| err(line, format!("'{s}' is not a count")))
                };
                header = Some((num(nv)?, num(nl)?, num(nq)?));
                file.num_vars = header.unwrap().0;
            }
            [i, j, v] => {
                if header.is_none() {
                    return Err(err(line, "coefficient before the 'p qubo' line".into()));
                }
                let idx = |s: &str| {
                    s.parse::<usize>()
                        .map_err(|_| err(line, format!("'{s}' is not a variable index")))
                };
                let (i, j) = (idx(i)?, idx(j)?);
                let v: f64 = v
                    .parse()
                    .map_err(|_| err(line, format!("'{v}' is not a number")))?;
                if i >= file.num_vars || j >= file.num_vars {
                    return Err(err(line, format!("variable index out of range 0..{}", file.num_vars)));
                }
                let dup = if i == j {
                    file.linear.insert(i, v).is_some()
                } else if i < j {
                    file.quadratic.insert((i, j), v).is_some()
                } else {
                    return Err(err(line, format!("coupling {i} {j} must list the smaller index first")));
                };
                if dup {
                    return Err(err(line, format!("duplicate entry for {i} {j}")));
                }
            }
            _ => return Err(err(line, format!("unrecognised line '{raw}'"))),
        }
    }
    let (_, nl, nq) = header.ok_or_else(|| err(0, "missing 'p qubo' line".into()))?;
    if file.linear.len() != nl || file.quadratic.len() != nq {
        return Err(err(
            0,
            format!(
                "header declares {nl} linear and {nq} quadratic entries, found {} and {}",
                file.linear.len(),
                file.quadratic.len()
            ),
        ));
    }
    Ok(file)
}
