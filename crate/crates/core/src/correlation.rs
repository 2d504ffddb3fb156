//! Average cosine, correlation factor, convergence tables and the dropout
//! sensitivity experiment.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::crw::{self, FirstPassageTally, WalkConfig};
use crate::error::{config, domain, Error, Result};
use crate::ising::{self, IsingProblem, Schedule};
use crate::lattice::{cos_theta, Boundary, HopModel, LatticeSpec, SiteRef};
use crate::mu::{self, PropagationResult, TrajectoryRecord};

/// Largest trajectory length the annealing engine attempts.
pub const ANNEAL_MAX_N: usize = 8;

/// Cosine of each tracer neighbor, keyed by direction label.
fn neighbor_cosines(spec: &LatticeSpec, tracer: &SiteRef, flow: &[f64]) -> Result<HashMap<String, f64>> {
    spec.neighbors(tracer)?
        .into_iter()
        .map(|n| Ok((n.label.clone(), cos_theta(spec, tracer, &n.site, flow)?)))
        .collect()
}

/// Contribution of each `N` to `<cos θ>`.
fn per_n_cosine(
    arrivals: &PropagationResult,
    spec: &LatticeSpec,
    tracer: &SiteRef,
    flow: &[f64],
) -> Result<BTreeMap<usize, f64>> {
    let cos = neighbor_cosines(spec, tracer, flow)?;
    arrivals
        .per_step_arrivals
        .iter()
        .map(|(n, row)| {
            let mut c = 0.0;
            for (label, p) in row {
                let k = cos
                    .get(label)
                    .ok_or_else(|| domain(format!("'{label}' is not a tracer direction of '{}'", spec.name)))?;
                c += p * k;
            }
            Ok((*n, c))
        })
        .collect()
}

/// `<cos θ> = Σ_N Σ_k P_k^(N) cos θ_k`. Arrivals are matched to tracer
/// neighbors by direction label.
pub fn average_cosine(
    arrivals: &PropagationResult,
    spec: &LatticeSpec,
    tracer: &SiteRef,
    flow: &[f64],
) -> Result<f64> {
    Ok(per_n_cosine(arrivals, spec, tracer, flow)?.values().sum())
}

/// `f = (1 + c) / (1 - c)`.
pub fn correlation_factor(avg_cos: f64) -> Result<f64> {
    if avg_cos >= 1.0 {
        return Err(Error::Divergent);
    }
    if avg_cos < -1.0 || avg_cos.is_nan() {
        return Err(domain(format!("<cos θ> must lie in [-1, 1), got {avg_cos}")));
    }
    Ok((1.0 + avg_cos) / (1.0 - avg_cos))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    Mu,
    Crw,
    Anneal,
    Oracle,
}

impl Engine {
    pub const ALL: [Engine; 4] = [Engine::Mu, Engine::Crw, Engine::Anneal, Engine::Oracle];

    pub fn name(self) -> &'static str {
        match self {
            Engine::Mu => "mu",
            Engine::Crw => "crw",
            Engine::Anneal => "anneal",
            Engine::Oracle => "oracle",
        }
    }
}

impl fmt::Display for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

impl FromStr for Engine {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Engine::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| config(format!("unknown engine '{s}' (expected mu, crw, anneal or oracle)")))
    }
}

/// Engine-specific knobs; each engine reads only its own.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub walkers: u64,
    pub seed: u64,
    pub batch: u64,
    pub restarts: usize,
    pub saturation_window: usize,
    /// Annealing schedule; `None` uses [`Schedule::default_for`] per problem.
    pub schedule: Option<Schedule>,
    pub penalty: Option<f64>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            walkers: 10_000_000,
            seed: 0,
            batch: 1 << 16,
            restarts: 10_000,
            saturation_window: ising::DEFAULT_SATURATION_WINDOW,
            schedule: None,
            penalty: None,
        }
    }
}

/// A lattice, a hop model and the tracer setup derived from them.
///
/// The tracer sits at the centre of the extent; the vacancy starts on the
/// tracer neighbor named `start_label`.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub spec: LatticeSpec,
    pub model: HopModel,
    pub start_label: String,
    pub tracer: SiteRef,
    pub start: SiteRef,
    pub flow: Vec<f64>,
}

impl Scenario {
    /// Sizes `spec` for `n_max` and starts the vacancy on the first
    /// stencil neighbor.
    pub fn new(spec: &LatticeSpec, model: &HopModel, n_max: usize) -> Result<Self> {
        let label = spec
            .stencil
            .first()
            .and_then(|s| s.first())
            .map(|e| e.label.clone())
            .ok_or_else(|| config("the lattice has an empty stencil"))?;
        Self::with_start(spec, model, n_max, &label)
    }

    pub fn with_start(spec: &LatticeSpec, model: &HopModel, n_max: usize, start_label: &str) -> Result<Self> {
        spec.validate()?;
        model.distributions(spec)?;
        let spec = spec.sized_for(n_max);
        let tracer = spec.tracer();
        let start = Self::start_in(&spec, start_label)?;
        let flow = spec.flow(&start, &tracer);
        Ok(Scenario {
            spec,
            model: model.clone(),
            start_label: start_label.to_string(),
            tracer,
            start,
            flow,
        })
    }

    fn start_in(spec: &LatticeSpec, label: &str) -> Result<SiteRef> {
        spec.neighbors(&spec.tracer())?
            .into_iter()
            .find(|n| n.label == label)
            .map(|n| n.site)
            .ok_or_else(|| config(format!("'{label}' is not a tracer direction of '{}'", spec.name)))
    }

    /// The Ising problem for trajectories of exactly `n` steps. Auto-sized
    /// lattices are cut to the smallest window that holds them; open ones
    /// are used as given.
    pub fn ising_problem(&self, n: usize, penalty: Option<f64>) -> Result<IsingProblem> {
        let window = match self.spec.boundary {
            Boundary::Open => self.spec.clone(),
            Boundary::AutoSized => self.spec.trajectory_window(n),
        };
        let start = Self::start_in(&window, &self.start_label)?;
        IsingProblem::build_with_penalty(&window, &self.model, &start, &window.tracer(), n, penalty)
    }

    pub fn run_mu(&self, n_max: usize) -> Result<PropagationResult> {
        mu::run(&self.spec, &self.model, &self.start, &self.tracer, n_max)
    }

    pub fn enumerate(&self, n_max: usize) -> Result<Vec<TrajectoryRecord>> {
        mu::enumerate_trajectories(&self.spec, &self.model, &self.start, &self.tracer, n_max)
    }

    pub fn correlation(&self, arrivals: &PropagationResult) -> Result<(f64, BTreeMap<usize, f64>)> {
        let per_n = per_n_cosine(arrivals, &self.spec, &self.tracer, &self.flow)?;
        Ok((per_n.values().sum(), per_n))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationEstimate {
    pub engine: Engine,
    pub n_max: usize,
    pub avg_cos: f64,
    pub f: f64,
    /// Contribution of each `N` to `avg_cos`.
    pub per_n: BTreeMap<usize, f64>,
    pub captured_mass: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stderr_f: Option<f64>,
    /// Distinct trajectories behind the estimate (annealing engine only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trajectories: Option<usize>,
}

/// Raw output of one engine run, truncatable to any smaller horizon.
enum EngineOutput {
    Exact(PropagationResult),
    Walks(FirstPassageTally),
    Annealed {
        arrivals: PropagationResult,
        counts: BTreeMap<usize, usize>,
    },
}

/// Delta-method standard error of `f` from a walk tally.
fn walk_stderr(tally: &FirstPassageTally, cos: &HashMap<String, f64>, c: f64) -> f64 {
    let w = tally.walkers as f64;
    let second: f64 = tally
        .hits
        .values()
        .flat_map(|m| m.iter())
        .map(|(label, h)| *h as f64 / w * cos[label].powi(2))
        .sum();
    let se_c = ((second - c * c).max(0.0) / w).sqrt();
    2.0 * se_c / (1.0 - c).powi(2)
}

fn run_anneal(scenario: &Scenario, cfg: &EngineConfig, n_max: usize) -> Result<EngineOutput> {
    let labels: Vec<String> = scenario
        .spec
        .neighbors(&scenario.tracer)?
        .into_iter()
        .map(|n| n.label)
        .collect();
    let bipartite = scenario.spec.is_bipartite();
    let mut rows: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    let mut counts = BTreeMap::new();
    for n in 2..=n_max {
        if bipartite && n % 2 == 1 {
            counts.insert(n, 0);
            continue;
        }
        let problem = scenario.ising_problem(n, cfg.penalty)?;
        let schedule = cfg.schedule.unwrap_or_else(|| Schedule::default_for(&problem));
        let out = ising::anneal(&problem, &schedule, cfg.restarts, cfg.seed, cfg.saturation_window)?;
        let window_labels: HashMap<SiteRef, String> = problem
            .lattice
            .neighbors(&problem.tracer)?
            .into_iter()
            .map(|nb| (nb.site, nb.label))
            .collect();
        let row = rows.entry(n).or_insert_with(|| vec![0.0; labels.len()]);
        for sites in &out.trajectories {
            let rec = problem.record(sites)?;
            let label = &window_labels[&rec.final_neighbor];
            let k = labels.iter().position(|l| l == label).expect("same stencil");
            row[k] += rec.weight;
        }
        counts.insert(n, out.trajectories.len());
    }
    let neighbors = mu::aggregate(&scenario.spec, &scenario.tracer, n_max, std::iter::empty())?.neighbors;
    Ok(EngineOutput::Annealed {
        arrivals: PropagationResult::from_rows(scenario.tracer, neighbors, n_max, &rows),
        counts,
    })
}

fn refuse_anneal(n: usize) -> Result<()> {
    if n > ANNEAL_MAX_N {
        return Err(Error::Infeasible(format!(
            "the annealing engine is limited to N <= {ANNEAL_MAX_N} (desk scale); N = {n} was requested"
        )));
    }
    Ok(())
}

fn run_engine(scenario: &Scenario, engine: Engine, cfg: &EngineConfig, n_max: usize) -> Result<EngineOutput> {
    match engine {
        Engine::Mu => Ok(EngineOutput::Exact(scenario.run_mu(n_max)?)),
        Engine::Oracle => Ok(EngineOutput::Exact(mu::enumerate_arrivals(
            &scenario.spec,
            &scenario.model,
            &scenario.start,
            &scenario.tracer,
            n_max,
        )?)),
        Engine::Crw => {
            let wc = WalkConfig {
                n_max,
                num_walkers: cfg.walkers,
                seed: cfg.seed,
                batch: cfg.batch,
            };
            Ok(EngineOutput::Walks(crw::simulate(
                &scenario.spec,
                &scenario.model,
                &scenario.start,
                &scenario.tracer,
                &wc,
            )?))
        }
        Engine::Anneal => {
            refuse_anneal(n_max)?;
            run_anneal(scenario, cfg, n_max)
        }
    }
}

fn estimate_from(scenario: &Scenario, engine: Engine, out: &EngineOutput, n: usize) -> Result<CorrelationEstimate> {
    let (arrivals, stderr_f, trajectories) = match out {
        EngineOutput::Exact(r) => (r.truncated(n), None, None),
        EngineOutput::Annealed { arrivals, counts } => {
            (arrivals.truncated(n), None, Some(counts.range(..=n).map(|(_, c)| c).sum()))
        }
        EngineOutput::Walks(t) => {
            let t = t.truncated(n);
            let est = crw::tally_to_arrivals(&t)?;
            let (c, _) = scenario.correlation(&est.arrivals)?;
            let cos = neighbor_cosines(&scenario.spec, &scenario.tracer, &scenario.flow)?;
            (est.arrivals, Some(walk_stderr(&t, &cos, c)), None)
        }
    };
    let (avg_cos, per_n) = scenario.correlation(&arrivals)?;
    Ok(CorrelationEstimate {
        engine,
        n_max: n,
        avg_cos,
        f: correlation_factor(avg_cos)?,
        per_n,
        captured_mass: arrivals.captured_mass,
        stderr_f,
        trajectories,
    })
}

/// Correlation factor from one engine at horizon `n_max`.
pub fn estimate(scenario: &Scenario, engine: Engine, cfg: &EngineConfig, n_max: usize) -> Result<CorrelationEstimate> {
    if n_max < 2 {
        return Err(domain(format!("n_max must be at least 2, got {n_max}")));
    }
    let out = run_engine(scenario, engine, cfg, n_max)?;
    estimate_from(scenario, engine, &out, n_max)
}

/// One row of a convergence table. `estimate` is `None` for parity-forbidden
/// rows and rows the engine refused; `note` says which.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub n_max: usize,
    pub engine: Engine,
    pub estimate: Option<CorrelationEstimate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl TableRow {
    pub fn f(&self) -> Option<f64> {
        self.estimate.as_ref().map(|e| e.f)
    }
}

/// Largest horizon in `n_list` the engine accepts, and the refusal for the
/// rest.
fn feasible_horizon(scenario: &Scenario, engine: Engine, top: usize) -> (usize, Option<Error>) {
    let check = |n: usize| match engine {
        Engine::Oracle => mu::enumeration_guard(&scenario.spec, n),
        Engine::Anneal => refuse_anneal(n),
        _ => Ok(()),
    };
    match check(top) {
        Ok(()) => (top, None),
        Err(e) => {
            let ok = (2..top).rev().find(|n| check(*n).is_ok()).unwrap_or(1);
            (ok, Some(e))
        }
    }
}

/// Correlation factor for each horizon in `n_list`, from a single engine run
/// at the largest feasible horizon.
pub fn convergence_table(
    scenario: &Scenario,
    engine: Engine,
    cfg: &EngineConfig,
    n_list: &[usize],
) -> Result<Vec<TableRow>> {
    if let Some(n) = n_list.iter().find(|n| **n < 2) {
        return Err(domain(format!("n_max must be at least 2, got {n}")));
    }
    let Some(&top) = n_list.iter().max() else {
        return Ok(Vec::new());
    };
    let bipartite = scenario.spec.is_bipartite();
    let (reach, refusal) = feasible_horizon(scenario, engine, top);
    let out = if reach >= 2 {
        Some(run_engine(scenario, engine, cfg, reach)?)
    } else {
        None
    };
    n_list
        .iter()
        .map(|&n| {
            let (estimate, note) = if bipartite && n % 2 == 1 {
                (None, Some("no first passage at odd N on a bipartite lattice".to_string()))
            } else if n > reach {
                let msg = match (engine, &refusal) {
                    (Engine::Oracle, _) => mu::enumeration_guard(&scenario.spec, n).err(),
                    (Engine::Anneal, _) => refuse_anneal(n).err(),
                    (_, r) => r.as_ref().map(|e| Error::Infeasible(e.to_string())),
                };
                (None, msg.map(|e| e.to_string()))
            } else {
                let out = out.as_ref().expect("engine ran up to the feasible horizon");
                (Some(estimate_from(scenario, engine, out, n)?), None)
            };
            Ok(TableRow {
                n_max: n,
                engine,
                estimate,
                note,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DropoutReport {
    pub rate: f64,
    pub trials: usize,
    pub seed: u64,
    pub full_f: f64,
    /// Mean of `(f_trial - f_full) / f_full`.
    pub mean_bias: f64,
    pub mean_abs_bias: f64,
    /// Standard deviation of the relative bias.
    pub spread: f64,
    pub degenerate_classes: usize,
}

/// Trajectories grouped by `(N, weight)`; only groups of two or more are
/// degenerate.
fn degenerate_classes(records: &[TrajectoryRecord]) -> Vec<Vec<usize>> {
    let mut classes: BTreeMap<(usize, i64), Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        // weights within ~1e-10 relative share a class
        let key = (r.weight.ln() * 1e10).round() as i64;
        classes.entry((r.steps(), key)).or_default().push(i);
    }
    classes.into_values().collect()
}

/// `f` of a trajectory table with only the `kept` records. Every degenerate
/// class is rescaled to its full mass; a class with no survivors drops out.
fn table_f(records: &[TrajectoryRecord], classes: &[Vec<usize>], kept: &[bool]) -> Result<f64> {
    let mut c = 0.0;
    for class in classes {
        let full: f64 = class.iter().map(|i| records[*i].weight).sum();
        let surv: f64 = class.iter().filter(|i| kept[**i]).map(|i| records[*i].weight).sum();
        if surv == 0.0 {
            continue;
        }
        let moment: f64 = class
            .iter()
            .filter(|i| kept[**i])
            .map(|i| records[*i].weight * records[*i].theta_cos)
            .sum();
        c += moment * (full / surv);
    }
    correlation_factor(c)
}

/// Drops members of degenerate trajectory classes with probability `rate`
/// and reports the relative change of `f` over `trials` repetitions.
///
/// A degenerate class is a set of trajectories with the same length and the
/// same weight. Survivors of each class are rescaled to the class's full
/// mass, so dropping only redistributes the class's mass over the
/// remaining exit directions. Trajectories without degenerate partners are
/// always kept.
pub fn dropout_sensitivity(records: &[TrajectoryRecord], rate: f64, seed: u64, trials: usize) -> Result<DropoutReport> {
    if records.is_empty() {
        return Err(domain("the trajectory table is empty"));
    }
    if !(0.0..1.0).contains(&rate) {
        return Err(domain(format!("dropout rate must lie in [0, 1), got {rate}")));
    }
    if trials == 0 {
        return Err(domain("at least one trial is required"));
    }
    let classes = degenerate_classes(records);
    let full_f = table_f(records, &classes, &vec![true; records.len()])?;
    let mut biases = Vec::with_capacity(trials);
    for t in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(t as u64);
        let mut kept = vec![true; records.len()];
        for class in classes.iter().filter(|c| c.len() > 1) {
            for i in class {
                kept[*i] = rng.gen::<f64>() >= rate;
            }
        }
        let f = table_f(records, &classes, &kept)?;
        biases.push((f - full_f) / full_f);
    }
    let n = trials as f64;
    let mean = biases.iter().sum::<f64>() / n;
    let var = biases.iter().map(|b| (b - mean).powi(2)).sum::<f64>() / n;
    Ok(DropoutReport {
        rate,
        trials,
        seed,
        full_f,
        mean_bias: mean,
        mean_abs_bias: biases.iter().map(|b| b.abs()).sum::<f64>() / n,
        spread: var.sqrt(),
        degenerate_classes: classes.iter().filter(|c| c.len() > 1).count(),
    })
}
