use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use anyhow::Result;
use serde::Serialize;

use corrfactor::correlation::correlation_factor;
use corrfactor::ising::{read_sidecar, IsingProblem};
use corrfactor::{mu, Error, SiteRef};

use crate::output::{emit, json_document, Format, RunManifest};

#[derive(Debug, Serialize)]
struct Trajectory {
    sites: Vec<String>,
    weight: f64,
    final_neighbor: String,
    theta_cos: f64,
}

#[derive(Debug, Serialize)]
struct DecodeReport {
    n_steps: usize,
    samples: usize,
    valid_samples: usize,
    unique_trajectories: usize,
    violations: BTreeMap<String, usize>,
    /// Trajectory count from exhaustive enumeration, when affordable.
    oracle_trajectories: Option<usize>,
    coverage: Option<f64>,
    /// Summed weight per tracer direction.
    arrivals: BTreeMap<String, f64>,
    /// Contribution of this N to <cos θ>.
    avg_cos: f64,
    /// Correlation factor of the decoded table alone.
    f: Option<f64>,
    trajectories: Vec<Trajectory>,
}

/// Reads one configuration per line. Blank lines and lines starting with
/// `#` are skipped; whitespace between bits is ignored.
fn parse_samples(text: &str, num_vars: usize) -> Result<Vec<Vec<bool>>, Error> {
    let mut out = Vec::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bits: Vec<bool> = line
            .chars()
            .filter(|c| !c.is_whitespace())
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(Error::Parse {
                    line: no + 1,
                    msg: format!("unexpected character '{other}' in a 0/1 sample"),
                }),
            })
            .collect::<Result<_, _>>()?;
        if bits.len() != num_vars {
            return Err(Error::Parse {
                line: no + 1,
                msg: format!("sample has {} bits, the problem has {num_vars} variables", bits.len()),
            });
        }
        out.push(bits);
    }
    Ok(out)
}

fn oracle_count(problem: &IsingProblem) -> Option<usize> {
    let mut count = 0;
    mu::for_each_trajectory(
        &problem.lattice,
        &problem.model,
        &problem.start,
        &problem.tracer,
        problem.n_steps,
        |r| {
            if r.steps() == problem.n_steps {
                count += 1;
            }
        },
    )
    .ok()?;
    Some(count)
}

fn report(problem: &IsingProblem, samples: &[Vec<bool>]) -> Result<DecodeReport> {
    let labels: BTreeMap<SiteRef, String> = problem
        .lattice
        .neighbors(&problem.tracer)?
        .into_iter()
        .map(|n| (n.site, n.label))
        .collect();
    let mut seen = HashSet::new();
    let mut violations = BTreeMap::new();
    let mut valid_samples = 0;
    let mut trajectories = Vec::new();
    let mut arrivals = BTreeMap::new();
    let mut avg_cos = 0.0;
    for bits in samples {
        let d = problem.decode(bits)?;
        if let Some(v) = d.violation {
            *violations.entry(v.to_string()).or_insert(0) += 1;
            continue;
        }
        valid_samples += 1;
        if !seen.insert(d.sites.clone()) {
            continue;
        }
        let r = problem.record(&d.sites)?;
        let label = labels[&r.final_neighbor].clone();
        *arrivals.entry(label.clone()).or_insert(0.0) += r.weight;
        avg_cos += r.weight * r.theta_cos;
        trajectories.push(Trajectory {
            sites: r.sites.iter().map(ToString::to_string).collect(),
            weight: r.weight,
            final_neighbor: label,
            theta_cos: r.theta_cos,
        });
    }
    let oracle = oracle_count(problem);
    let f = if trajectories.is_empty() {
        None
    } else {
        Some(correlation_factor(avg_cos)?)
    };
    Ok(DecodeReport {
        n_steps: problem.n_steps,
        samples: samples.len(),
        valid_samples,
        unique_trajectories: trajectories.len(),
        violations,
        oracle_trajectories: oracle,
        coverage: oracle.filter(|n| *n > 0).map(|n| trajectories.len() as f64 / n as f64),
        arrivals,
        avg_cos,
        f,
        trajectories,
    })
}

fn text(r: &DecodeReport) -> String {
    let mut t = format!(
        "N = {}: {} samples, {} valid, {} unique trajectories\n",
        r.n_steps, r.samples, r.valid_samples, r.unique_trajectories
    );
    for (v, n) in &r.violations {
        t.push_str(&format!("  invalid ({v}): {n}\n"));
    }
    if let (Some(o), Some(c)) = (r.oracle_trajectories, r.coverage) {
        t.push_str(&format!("coverage: {} of {o} trajectories ({:.2} %)\n", r.unique_trajectories, 100.0 * c));
    }
    if r.trajectories.is_empty() {
        t.push_str("no valid trajectories\n");
        return t;
    }
    for (label, w) in &r.arrivals {
        t.push_str(&format!("  P[{label}] = {w:.10e}\n"));
    }
    t.push_str(&format!("<cos θ> contribution = {:.10}\n", r.avg_cos));
    if let Some(f) = r.f {
        t.push_str(&format!("f (this table only) = {f:.10}\n"));
    }
    t
}

pub fn run(sidecar: &Path, samples: &Path, format: Format, out: Option<&Path>) -> Result<()> {
    let side = read_sidecar(sidecar).map_err(|e| match e {
        Error::Io(io) => Error::Config(format!("cannot read sidecar {}: {io}", sidecar.display())),
        e => e,
    })?;
    let problem = side.problem()?;
    let raw = std::fs::read_to_string(samples)
        .map_err(|e| Error::Config(format!("cannot read samples {}: {e}", samples.display())))?;
    let bits = parse_samples(&raw, problem.num_vars())?;
    let r = report(&problem, &bits)?;
    let body = match format {
        Format::Json => {
            let m = RunManifest::new("decode", &side.lattice.lattice.name, &problem.model)
                .param("sidecar", sidecar.display().to_string())
                .param("samples", samples.display().to_string());
            json_document(&m, "decode", &r)?
        }
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["n_steps", "final_neighbor", "weight", "theta_cos", "sites"])?;
            for t in &r.trajectories {
                w.write_record([
                    r.n_steps.to_string(),
                    t.final_neighbor.clone(),
                    t.weight.to_string(),
                    t.theta_cos.to_string(),
                    t.sites.join(" "),
                ])?;
            }
            String::from_utf8(w.into_inner()?)?
        }
        Format::Text => text(&r),
    };
    emit(out, &body)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_lines() {
        let s = parse_samples("# header\n0 1 1\n\n101\n", 3).unwrap();
        assert_eq!(s, vec![vec![false, true, true], vec![true, false, true]]);
        match parse_samples("010\n01x\n", 3) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_samples("0101\n", 3), Err(Error::Parse { line: 1, .. })));
    }
}
