//! Lattice topologies, neighbor relations and hop probabilities.
//!
//! A lattice is a Bravais lattice with an optional multi-site basis. Sites are
//! addressed by an integer cell vector plus a sublattice index. Cell
//! coordinates are box-corner based: every axis runs over `0..extent[axis]`
//! and the tracer sits at the centre cell, `extent[axis] / 2`.
//!
//! Neighbors come from per-sublattice stencils. Each stencil entry carries a
//! cell offset, the target sublattice and a direction label; barrier energies
//! in a [`HopModel`] are keyed by that label.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{config, domain, Error, Result};

/// Highest supported spatial dimension.
pub const MAX_DIM: usize = 3;

/// Barrier key matching every direction label without an explicit entry.
pub const WILDCARD: &str = "*";

/// A lattice site: integer cell coordinates plus a sublattice index.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SiteRef {
    cell: [i32; MAX_DIM],
    dim: u8,
    pub sublattice: usize,
}

impl SiteRef {
    /// Panics if `cell` has more than [`MAX_DIM`] components.
    pub fn new(cell: &[i32], sublattice: usize) -> Self {
        assert!(
            !cell.is_empty() && cell.len() <= MAX_DIM,
            "site dimension must be 1..={MAX_DIM}"
        );
        let mut c = [0; MAX_DIM];
        c[..cell.len()].copy_from_slice(cell);
        Self {
            cell: c,
            dim: cell.len() as u8,
            sublattice,
        }
    }

    pub fn cell(&self) -> &[i32] {
        &self.cell[..self.dim as usize]
    }

    pub fn dim(&self) -> usize {
        self.dim as usize
    }

    /// Translates the cell by `offset`, switching to `sublattice`.
    pub fn shifted(&self, offset: &[i32], sublattice: usize) -> Self {
        let mut out = *self;
        for (c, o) in out.cell.iter_mut().zip(offset) {
            *c += o;
        }
        out.sublattice = sublattice;
        out
    }
}

impl fmt::Display for SiteRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, c) in self.cell().iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")?;
        if self.sublattice != 0 {
            write!(f, "#{}", self.sublattice)?;
        }
        Ok(())
    }
}

impl fmt::Debug for SiteRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

#[derive(Serialize, Deserialize)]
struct SiteRepr {
    cell: Vec<i32>,
    #[serde(default)]
    sublattice: usize,
}

impl Serialize for SiteRef {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        SiteRepr {
            cell: self.cell().to_vec(),
            sublattice: self.sublattice,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for SiteRef {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = SiteRepr::deserialize(d)?;
        if repr.cell.is_empty() || repr.cell.len() > MAX_DIM {
            return Err(serde::de::Error::custom("site cell must have 1 to 3 components"));
        }
        Ok(SiteRef::new(&repr.cell, repr.sublattice))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StencilEntry {
    /// Cell offset from the source site's cell.
    pub offset: Vec<i32>,
    /// Sublattice of the neighbor.
    pub target: usize,
    pub label: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Boundary {
    /// The extent is used as given; engines fail with a bounds error if mass
    /// or a walker would leave it.
    Open,
    /// The extent is recomputed from the trajectory horizon so that the
    /// boundary can never be reached.
    AutoSized,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatticeSpec {
    pub name: String,
    pub dimension: usize,
    /// One Cartesian vector per lattice axis.
    pub basis_vectors: Vec<Vec<f64>>,
    /// Cartesian position of each sublattice inside the unit cell.
    pub sublattice_offsets: Vec<Vec<f64>>,
    /// Per-sublattice neighbor stencil. The first entry of sublattice 0 is the
    /// default vacancy start relative to the tracer.
    pub stencil: Vec<Vec<StencilEntry>>,
    /// Number of cells along each axis.
    pub extent: Vec<usize>,
    pub boundary: Boundary,
}

/// One neighbor of a site as returned by [`LatticeSpec::neighbors`].
#[derive(Clone, Debug, PartialEq)]
pub struct Neighbor {
    pub site: SiteRef,
    /// Unit Cartesian vector from the site toward the neighbor.
    pub direction: Vec<f64>,
    pub label: String,
}

/// The seven built-in lattice families.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Honeycomb,
    Square,
    Triangular,
    Diamond,
    Sc,
    Bcc,
    Fcc,
}

impl Family {
    pub const ALL: [Family; 7] = [
        Family::Honeycomb,
        Family::Square,
        Family::Triangular,
        Family::Diamond,
        Family::Sc,
        Family::Bcc,
        Family::Fcc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::Honeycomb => "honeycomb",
            Family::Square => "square",
            Family::Triangular => "triangular",
            Family::Diamond => "diamond",
            Family::Sc => "sc",
            Family::Bcc => "bcc",
            Family::Fcc => "fcc",
        }
    }

    pub fn coordination(self) -> usize {
        match self {
            Family::Honeycomb => 3,
            Family::Square | Family::Diamond => 4,
            Family::Triangular | Family::Sc => 6,
            Family::Bcc => 8,
            Family::Fcc => 12,
        }
    }

    pub fn dimension(self) -> usize {
        match self {
            Family::Honeycomb | Family::Square | Family::Triangular => 2,
            _ => 3,
        }
    }

    /// Analytic correlation factor for uniform hopping.
    pub fn reference_f(self) -> f64 {
        match self {
            Family::Honeycomb => 1.0 / 3.0,
            Family::Square => 0.467,
            Family::Triangular => 0.56006,
            Family::Diamond => 0.5,
            Family::Sc => 0.6531,
            Family::Bcc => 0.7272,
            Family::Fcc => 0.7815,
        }
    }

    /// Second literature value where one is tabulated (bcc only).
    pub fn alternate_reference_f(self) -> Option<f64> {
        match self {
            Family::Bcc => Some(0.72149),
            _ => None,
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.name() == s.to_ascii_lowercase())
            .ok_or_else(|| {
                config(format!(
                    "unknown lattice family '{s}' (expected one of honeycomb, square, triangular, diamond, sc, bcc, fcc)"
                ))
            })
    }
}

/// Basis vectors, sublattice offsets and stencil of a built-in family.
type Geometry = (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<Vec<StencilEntry>>);

fn entry(offset: &[i32], target: usize, label: &str) -> StencilEntry {
    StencilEntry {
        offset: offset.to_vec(),
        target,
        label: label.to_string(),
    }
}

/// Sign-pattern label of a Cartesian direction, e.g. `+-0`.
fn sign_label(v: &[f64]) -> String {
    v.iter()
        .map(|x| {
            if *x > 1e-9 {
                '+'
            } else if *x < -1e-9 {
                '-'
            } else {
                '0'
            }
        })
        .collect()
}

/// Builds a single-sublattice stencil from `±offsets`, labelling each entry by
/// the sign pattern of its Cartesian direction. The negative partner of the
/// first offset comes first.
fn symmetric_stencil(basis: &[Vec<f64>], offsets: &[[i32; 3]], dim: usize) -> Vec<StencilEntry> {
    let mut out = Vec::with_capacity(offsets.len() * 2);
    for o in offsets {
        for sign in [-1, 1] {
            let off: Vec<i32> = o[..dim].iter().map(|x| x * sign).collect();
            let cart = cartesian(basis, &off);
            out.push(entry(&off, 0, &sign_label(&cart)));
        }
    }
    out
}

fn cartesian(basis: &[Vec<f64>], cell: &[i32]) -> Vec<f64> {
    let dim = basis.len();
    let mut v = vec![0.0; dim];
    for (c, b) in cell.iter().zip(basis) {
        for (vi, bi) in v.iter_mut().zip(b) {
            *vi += *c as f64 * bi;
        }
    }
    v
}

impl LatticeSpec {
    /// Built-in lattice auto-sized for trajectories of up to `n_max` time
    /// steps (`n_max - 1` vacancy hops).
    pub fn builtin(name: &str, n_max: usize) -> Result<Self> {
        Self::from_family(name.parse()?, n_max)
    }

    pub fn from_family(family: Family, n_max: usize) -> Result<Self> {
        if n_max < 2 {
            return Err(domain(format!("n_max must be at least 2, got {n_max}")));
        }
        let s3 = 3f64.sqrt();
        let (basis, offsets, stencil): Geometry =
            match family {
                Family::Square => (
                    vec![vec![1.0, 0.0], vec![0.0, 1.0]],
                    vec![vec![0.0, 0.0]],
                    vec![vec![
                        entry(&[0, -1], 0, "-y"),
                        entry(&[0, 1], 0, "+y"),
                        entry(&[-1, 0], 0, "-x"),
                        entry(&[1, 0], 0, "+x"),
                    ]],
                ),
                Family::Triangular => {
                    let basis = vec![vec![1.0, 0.0], vec![0.5, s3 / 2.0]];
                    let st = vec![
                        entry(&[-1, 0], 0, "-a1"),
                        entry(&[1, 0], 0, "+a1"),
                        entry(&[0, -1], 0, "-a2"),
                        entry(&[0, 1], 0, "+a2"),
                        entry(&[1, -1], 0, "+a1-a2"),
                        entry(&[-1, 1], 0, "-a1+a2"),
                    ];
                    (basis, vec![vec![0.0, 0.0]], vec![st])
                }
                Family::Honeycomb => {
                    let basis = vec![vec![1.0, 0.0], vec![0.5, s3 / 2.0]];
                    let b = vec![0.5, s3 / 6.0];
                    (
                        basis,
                        vec![vec![0.0, 0.0], b],
                        vec![
                            vec![
                                entry(&[0, 0], 1, "u"),
                                entry(&[-1, 0], 1, "v"),
                                entry(&[0, -1], 1, "w"),
                            ],
                            vec![
                                entry(&[0, 0], 0, "-u"),
                                entry(&[1, 0], 0, "-v"),
                                entry(&[0, 1], 0, "-w"),
                            ],
                        ],
                    )
                }
                Family::Sc => {
                    let basis = vec![
                        vec![1.0, 0.0, 0.0],
                        vec![0.0, 1.0, 0.0],
                        vec![0.0, 0.0, 1.0],
                    ];
                    let st = vec![
                        entry(&[-1, 0, 0], 0, "-x"),
                        entry(&[1, 0, 0], 0, "+x"),
                        entry(&[0, -1, 0], 0, "-y"),
                        entry(&[0, 1, 0], 0, "+y"),
                        entry(&[0, 0, -1], 0, "-z"),
                        entry(&[0, 0, 1], 0, "+z"),
                    ];
                    (basis, vec![vec![0.0; 3]], vec![st])
                }
                Family::Bcc => {
                    let basis = vec![
                        vec![-0.5, 0.5, 0.5],
                        vec![0.5, -0.5, 0.5],
                        vec![0.5, 0.5, -0.5],
                    ];
                    let st = symmetric_stencil(
                        &basis,
                        &[[1, 1, 1], [1, 0, 0], [0, 1, 0], [0, 0, 1]],
                        3,
                    );
                    (basis, vec![vec![0.0; 3]], vec![st])
                }
                Family::Fcc | Family::Diamond => {
                    let basis = vec![
                        vec![0.0, 0.5, 0.5],
                        vec![0.5, 0.0, 0.5],
                        vec![0.5, 0.5, 0.0],
                    ];
                    if family == Family::Fcc {
                        let st = symmetric_stencil(
                            &basis,
                            &[
                                [0, 0, 1],
                                [1, 0, 0],
                                [0, 1, 0],
                                [1, -1, 0],
                                [0, 1, -1],
                                [1, 0, -1],
                            ],
                            3,
                        );
                        (basis, vec![vec![0.0; 3]], vec![st])
                    } else {
                        let b = vec![0.25, 0.25, 0.25];
                        let a_cells: [[i32; 3]; 4] =
                            [[0, 0, 0], [-1, 0, 0], [0, -1, 0], [0, 0, -1]];
                        let mut st_a = Vec::new();
                        let mut st_b = Vec::new();
                        for c in a_cells {
                            let mut d = cartesian(&basis, &c);
                            for (x, o) in d.iter_mut().zip(&b) {
                                *x += o;
                            }
                            st_a.push(entry(&c, 1, &sign_label(&d)));
                            let back: Vec<i32> = c.iter().map(|x| -x).collect();
                            let neg: Vec<f64> = d.iter().map(|x| -x).collect();
                            st_b.push(entry(&back, 0, &sign_label(&neg)));
                        }
                        (basis, vec![vec![0.0; 3], b], vec![st_a, st_b])
                    }
                }
            };
        let dimension = family.dimension();
        let spec = LatticeSpec {
            name: family.name().to_string(),
            dimension,
            basis_vectors: basis,
            sublattice_offsets: offsets,
            stencil,
            extent: vec![1; dimension],
            boundary: Boundary::AutoSized,
        }
        .sized_for(n_max);
        spec.validate()?;
        Ok(spec)
    }

    /// Checks structural invariants: shapes, sublattice indices, unique
    /// labels, coordination ≥ 2 and neighbor symmetry.
    pub fn validate(&self) -> Result<()> {
        let d = self.dimension;
        if !(2..=MAX_DIM).contains(&d) {
            return Err(config(format!("dimension must be 2 or 3, got {d}")));
        }
        if self.basis_vectors.len() != d || self.basis_vectors.iter().any(|b| b.len() != d) {
            return Err(config("basis_vectors must be a d×d matrix"));
        }
        let nsub = self.sublattice_offsets.len();
        if nsub == 0 {
            return Err(config("at least one sublattice offset is required"));
        }
        if self.sublattice_offsets.iter().any(|o| o.len() != d) {
            return Err(config("sublattice offsets must have the lattice dimension"));
        }
        if self.stencil.len() != nsub {
            return Err(config(format!(
                "stencil lists {} sublattices but {nsub} offsets are given",
                self.stencil.len()
            )));
        }
        if self.extent.len() != d || self.extent.contains(&0) {
            return Err(config("extent must list a positive size for every axis"));
        }
        for (s, entries) in self.stencil.iter().enumerate() {
            if entries.len() < 2 {
                return Err(config(format!(
                    "sublattice {s} has coordination {} (< 2)",
                    entries.len()
                )));
            }
            let mut labels = HashSet::new();
            let mut targets = HashSet::new();
            for e in entries {
                if e.offset.len() != d {
                    return Err(config(format!("stencil entry '{}' has wrong dimension", e.label)));
                }
                if e.target >= nsub {
                    return Err(config(format!(
                        "stencil entry '{}' targets unknown sublattice {}",
                        e.label, e.target
                    )));
                }
                if e.label == WILDCARD || !labels.insert(e.label.as_str()) {
                    return Err(config(format!(
                        "direction label '{}' is reserved or repeated in sublattice {s}",
                        e.label
                    )));
                }
                if !targets.insert((e.offset.clone(), e.target)) {
                    return Err(config(format!("sublattice {s} lists the same neighbor twice")));
                }
                if e.target == s && e.offset.iter().all(|x| *x == 0) {
                    return Err(config(format!("stencil entry '{}' is a self loop", e.label)));
                }
                let back: Vec<i32> = e.offset.iter().map(|x| -x).collect();
                let symmetric = self.stencil[e.target]
                    .iter()
                    .any(|r| r.target == s && r.offset == back);
                if !symmetric {
                    return Err(config(format!(
                        "neighbor relation is not symmetric: entry '{}' of sublattice {s} has no reverse",
                        e.label
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn num_sublattices(&self) -> usize {
        self.sublattice_offsets.len()
    }

    /// Coordination number of a sublattice.
    pub fn coordination(&self, sublattice: usize) -> usize {
        self.stencil[sublattice].len()
    }

    pub fn max_coordination(&self) -> usize {
        self.stencil.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Largest per-axis cell displacement of a single hop.
    pub fn reach(&self) -> i32 {
        self.stencil
            .iter()
            .flatten()
            .flat_map(|e| e.offset.iter().map(|x| x.abs()))
            .max()
            .unwrap_or(1)
            .max(1)
    }

    pub fn num_sites(&self) -> usize {
        self.extent.iter().product::<usize>() * self.num_sublattices()
    }

    /// Returns the lattice with an extent of `2 * half_width + 1` cells per
    /// axis, keeping the tracer at the centre.
    pub fn with_half_width(&self, half_width: usize) -> Self {
        let mut out = self.clone();
        out.extent = vec![2 * half_width + 1; self.dimension];
        out
    }

    /// Re-sizes an auto-sized lattice so that no walk of `n_max - 1` hops
    /// starting next to the tracer reaches the outermost cells. Open lattices
    /// are returned unchanged.
    pub fn sized_for(&self, n_max: usize) -> Self {
        match self.boundary {
            Boundary::Open => self.clone(),
            Boundary::AutoSized => {
                let half = self.reach() as usize * n_max.max(1) + 1;
                self.with_half_width(half)
            }
        }
    }

    /// Smallest centred window holding every valid first-passage trajectory
    /// of `n` time steps strictly inside its boundary.
    pub fn trajectory_window(&self, n: usize) -> Self {
        let half = self.reach() as usize * n.div_ceil(2) + 1;
        let mut out = self.with_half_width(half);
        out.boundary = Boundary::Open;
        out
    }

    /// Tracer site: the centre cell on sublattice 0.
    pub fn tracer(&self) -> SiteRef {
        let cell: Vec<i32> = self.extent.iter().map(|e| (*e / 2) as i32).collect();
        SiteRef::new(&cell, 0)
    }

    /// Default vacancy start: the tracer's first stencil neighbor.
    pub fn default_start(&self) -> SiteRef {
        let t = self.tracer();
        let e = &self.stencil[0][0];
        t.shifted(&e.offset, e.target)
    }

    pub fn contains(&self, site: &SiteRef) -> bool {
        site.dim() == self.dimension
            && site.sublattice < self.num_sublattices()
            && site
                .cell()
                .iter()
                .zip(&self.extent)
                .all(|(c, e)| *c >= 0 && (*c as usize) < *e)
    }

    fn check_inside(&self, site: &SiteRef) -> Result<()> {
        if self.contains(site) {
            Ok(())
        } else {
            Err(Error::Bounds(format!(
                "site {site} is outside the {:?} extent of lattice '{}'",
                self.extent, self.name
            )))
        }
    }

    /// Cartesian position of a site.
    pub fn position(&self, site: &SiteRef) -> Vec<f64> {
        let mut p = cartesian(&self.basis_vectors, site.cell());
        for (x, o) in p.iter_mut().zip(&self.sublattice_offsets[site.sublattice]) {
            *x += o;
        }
        p
    }

    /// Unit Cartesian direction of a stencil entry of `sublattice`.
    pub fn entry_direction(&self, sublattice: usize, entry: &StencilEntry) -> Vec<f64> {
        let mut d = cartesian(&self.basis_vectors, &entry.offset);
        for ((x, to), from) in d
            .iter_mut()
            .zip(&self.sublattice_offsets[entry.target])
            .zip(&self.sublattice_offsets[sublattice])
        {
            *x += to - from;
        }
        normalize(&d)
    }

    /// All `Z` neighbors of a site, in stencil order.
    pub fn neighbors(&self, site: &SiteRef) -> Result<Vec<Neighbor>> {
        self.check_inside(site)?;
        Ok(self.stencil[site.sublattice]
            .iter()
            .map(|e| Neighbor {
                site: site.shifted(&e.offset, e.target),
                direction: self.entry_direction(site.sublattice, e),
                label: e.label.clone(),
            })
            .collect())
    }

    pub fn are_neighbors(&self, a: &SiteRef, b: &SiteRef) -> bool {
        a.dim() == self.dimension
            && a.sublattice < self.num_sublattices()
            && self.stencil[a.sublattice]
                .iter()
                .any(|e| a.shifted(&e.offset, e.target) == *b)
    }

    /// Stencil index of `neighbor` as seen from `site`, if adjacent.
    pub fn neighbor_index(&self, site: &SiteRef, neighbor: &SiteRef) -> Option<usize> {
        if site.sublattice >= self.num_sublattices() {
            return None;
        }
        self.stencil[site.sublattice]
            .iter()
            .position(|e| site.shifted(&e.offset, e.target) == *neighbor)
    }

    /// Flow axis: the unit vector from the vacancy start toward the tracer.
    pub fn flow(&self, start: &SiteRef, tracer: &SiteRef) -> Vec<f64> {
        let a = self.position(start);
        let b = self.position(tracer);
        let d: Vec<f64> = b.iter().zip(&a).map(|(x, y)| x - y).collect();
        normalize(&d)
    }

    /// Whether the neighbor graph admits a two-colouring.
    ///
    /// A connected periodic graph is bipartite iff its colouring has the form
    /// `s(sublattice) + w·cell (mod 2)`, so it suffices to try every sublattice
    /// parity `s` and axis parity `w`.
    pub fn is_bipartite(&self) -> bool {
        let nsub = self.num_sublattices();
        if nsub > 16 {
            return false;
        }
        for w in 0u32..(1 << self.dimension) {
            for s in 0u32..(1 << nsub) {
                let ok = self.stencil.iter().enumerate().all(|(src, entries)| {
                    entries.iter().all(|e| {
                        let mut parity = ((s >> src) & 1) ^ ((s >> e.target) & 1);
                        for (axis, o) in e.offset.iter().enumerate() {
                            parity ^= ((w >> axis) & 1) & (o.rem_euclid(2) as u32);
                        }
                        parity == 1
                    })
                });
                if ok {
                    return true;
                }
            }
        }
        false
    }
}

pub(crate) fn normalize(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Projection `flow · u` of the exchange direction, where `u` points from the
/// tracer toward the neighbor holding the vacancy.
pub fn cos_theta(
    spec: &LatticeSpec,
    tracer: &SiteRef,
    vacancy_neighbor: &SiteRef,
    flow: &[f64],
) -> Result<f64> {
    let norm = dot(flow, flow).sqrt();
    if flow.len() != spec.dimension || (norm - 1.0).abs() > 1e-9 {
        return Err(domain("flow must be a unit vector of the lattice dimension"));
    }
    let idx = spec.neighbor_index(tracer, vacancy_neighbor).ok_or_else(|| {
        domain(format!("{vacancy_neighbor} is not a neighbor of {tracer}"))
    })?;
    let u = spec.entry_direction(tracer.sublattice, &spec.stencil[tracer.sublattice][idx]);
    Ok(dot(flow, &u).clamp(-1.0, 1.0))
}

/// Barrier energies per direction label, with `k_B` folded into the
/// temperature.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HopModel {
    #[serde(default)]
    pub barriers: BTreeMap<String, f64>,
    pub temperature: f64,
    /// Equal barriers everywhere; the hop distribution is exactly `1/Z`.
    #[serde(default)]
    pub uniform: bool,
}

impl Default for HopModel {
    fn default() -> Self {
        Self::uniform()
    }
}

impl HopModel {
    pub fn uniform() -> Self {
        HopModel {
            barriers: BTreeMap::new(),
            temperature: 1.0,
            uniform: true,
        }
    }

    pub fn with_barriers(barriers: BTreeMap<String, f64>, temperature: f64) -> Result<Self> {
        let m = HopModel {
            barriers,
            temperature,
            uniform: false,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(config(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if let Some((k, v)) = self.barriers.iter().find(|(_, v)| !v.is_finite()) {
            return Err(config(format!("barrier '{k}' is not finite: {v}")));
        }
        Ok(())
    }

    fn barrier(&self, label: &str) -> Result<f64> {
        self.barriers
            .get(label)
            .or_else(|| self.barriers.get(WILDCARD))
            .copied()
            .ok_or_else(|| config(format!("no barrier given for direction '{label}'")))
    }

    /// Next-hop distribution out of a site of `sublattice`, aligned with its
    /// stencil: `p_j = exp(-ΔE_j/T) / Σ_k exp(-ΔE_k/T)`.
    pub fn distribution(&self, spec: &LatticeSpec, sublattice: usize) -> Result<Vec<f64>> {
        self.validate()?;
        let entries = &spec.stencil[sublattice];
        if self.uniform {
            return Ok(vec![1.0 / entries.len() as f64; entries.len()]);
        }
        let barriers = entries
            .iter()
            .map(|e| self.barrier(&e.label))
            .collect::<Result<Vec<_>>>()?;
        // shift by the lowest barrier so the largest weight is exactly 1
        let lo = barriers.iter().copied().fold(f64::INFINITY, f64::min);
        let weights: Vec<f64> = barriers
            .iter()
            .map(|b| (-(b - lo) / self.temperature).exp())
            .collect();
        let total: f64 = weights.iter().sum();
        Ok(weights.into_iter().map(|w| w / total).collect())
    }

    /// Distributions for every sublattice.
    pub fn distributions(&self, spec: &LatticeSpec) -> Result<Vec<Vec<f64>>> {
        (0..spec.num_sublattices())
            .map(|s| self.distribution(spec, s))
            .collect()
    }
}

/// Hop probabilities out of `site`, aligned with [`LatticeSpec::neighbors`].
pub fn hop_probabilities(spec: &LatticeSpec, model: &HopModel, site: &SiteRef) -> Result<Vec<f64>> {
    spec.check_inside(site)?;
    model.distribution(spec, site.sublattice)
}

/// On-disk lattice definition: the lattice plus an optional hop model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatticeConfig {
    #[serde(flatten)]
    pub lattice: LatticeSpec,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub barriers: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
}

impl LatticeConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: LatticeConfig =
            serde_json::from_str(text).map_err(|e| config(format!("invalid lattice JSON: {e}")))?;
        cfg.lattice.validate()?;
        cfg.hop_model().validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Hop model implied by the file; no barriers means uniform hopping.
    pub fn hop_model(&self) -> HopModel {
        if self.barriers.is_empty() {
            HopModel {
                temperature: self.temperature.unwrap_or(1.0),
                ..HopModel::uniform()
            }
        } else {
            HopModel {
                barriers: self.barriers.clone(),
                temperature: self.temperature.unwrap_or(1.0),
                uniform: false,
            }
        }
    }
}

impl From<LatticeSpec> for LatticeConfig {
    fn from(lattice: LatticeSpec) -> Self {
        LatticeConfig {
            lattice,
            barriers: BTreeMap::new(),
            temperature: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn square5() -> LatticeSpec {
        LatticeSpec::builtin("square", 2).unwrap().with_half_width(2)
    }

    #[test]
    fn builtin_coordination_matches_family() {
        for fam in Family::ALL {
            let spec = LatticeSpec::from_family(fam, 4).unwrap();
            for s in 0..spec.num_sublattices() {
                assert_eq!(spec.coordination(s), fam.coordination(), "{fam}");
            }
        }
    }

    #[test]
    fn square_extent_and_honeycomb_sublattices() {
        let sq = LatticeSpec::builtin("square", 4).unwrap();
        assert!(sq.extent.iter().all(|e| *e >= 7));
        let hc = LatticeSpec::builtin("honeycomb", 2).unwrap();
        assert_eq!(hc.num_sublattices(), 2);
        assert_eq!(hc.coordination(0), 3);
    }

    #[test]
    fn unknown_family_is_config_error() {
        assert!(matches!(
            LatticeSpec::builtin("kagome", 4),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            LatticeSpec::builtin("square", 1),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn fcc_directions() {
        let spec = LatticeSpec::builtin("fcc", 2).unwrap();
        let t = spec.tracer();
        let s2 = 0.5f64.sqrt();
        for n in spec.neighbors(&t).unwrap() {
            let zeros = n.direction.iter().filter(|x| x.abs() < 1e-12).count();
            assert_eq!(zeros, 1);
            assert!(n
                .direction
                .iter()
                .all(|x| x.abs() < 1e-12 || (x.abs() - s2).abs() < 1e-12));
        }
    }

    #[test]
    fn square_neighbors_of_start_site() {
        let spec = square5();
        let got: HashSet<SiteRef> = spec
            .neighbors(&SiteRef::new(&[2, 1], 0))
            .unwrap()
            .into_iter()
            .map(|n| n.site)
            .collect();
        let want: HashSet<SiteRef> = [[1, 1], [3, 1], [2, 0], [2, 2]]
            .iter()
            .map(|c| SiteRef::new(c, 0))
            .collect();
        assert_eq!(got, want);
    }

    #[test]
    fn honeycomb_is_bipartite_by_sublattice() {
        let spec = LatticeSpec::builtin("honeycomb", 2).unwrap();
        let t = spec.tracer();
        for n in spec.neighbors(&t).unwrap() {
            assert_eq!(n.site.sublattice, 1);
        }
    }

    #[test]
    fn sc_origin_neighbors_are_axis_steps() {
        let spec = LatticeSpec::builtin("sc", 2).unwrap();
        let t = spec.tracer();
        let ns = spec.neighbors(&t).unwrap();
        assert_eq!(ns.len(), 6);
        for n in ns {
            let nonzero: Vec<f64> = n.direction.iter().copied().filter(|x| x.abs() > 0.5).collect();
            assert_eq!(nonzero.len(), 1);
            assert_abs_diff_eq!(nonzero[0].abs(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn outside_site_is_bounds_error() {
        let spec = square5();
        assert!(matches!(
            spec.neighbors(&SiteRef::new(&[5, 0], 0)),
            Err(Error::Bounds(_))
        ));
    }

    #[test]
    fn uniform_probabilities() {
        let sq = square5();
        let p = hop_probabilities(&sq, &HopModel::uniform(), &sq.tracer()).unwrap();
        assert_eq!(p, vec![0.25; 4]);
        let sc = LatticeSpec::builtin("sc", 2).unwrap();
        let p = hop_probabilities(&sc, &HopModel::uniform(), &sc.tracer()).unwrap();
        assert!(p.iter().all(|x| *x == 1.0 / 6.0));
    }

    #[test]
    fn two_direction_chain_softmax() {
        // Z=2 chain embedded as a 2-D lattice with a single axis of hops
        let chain = LatticeSpec {
            name: "chain".into(),
            dimension: 2,
            basis_vectors: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            sublattice_offsets: vec![vec![0.0, 0.0]],
            stencil: vec![vec![entry(&[1, 0], 0, "fwd"), entry(&[-1, 0], 0, "back")]],
            extent: vec![5, 1],
            boundary: Boundary::Open,
        };
        chain.validate().unwrap();
        let t = 0.7;
        let model = HopModel::with_barriers(
            [("fwd".to_string(), 0.0), ("back".to_string(), t * 3f64.ln())].into(),
            t,
        )
        .unwrap();
        let p = model.distribution(&chain, 0).unwrap();
        assert_abs_diff_eq!(p[0], 0.75, epsilon = 1e-12);
        assert_abs_diff_eq!(p[1], 0.25, epsilon = 1e-12);
    }

    #[test]
    fn missing_barrier_is_config_error() {
        let sq = square5();
        let model = HopModel::with_barriers([("+x".to_string(), 0.1)].into(), 1.0).unwrap();
        assert!(matches!(model.distribution(&sq, 0), Err(Error::Config(_))));
        assert!(HopModel::with_barriers(BTreeMap::new(), 0.0).is_err());
    }

    #[test]
    fn cos_theta_examples() {
        let sq = square5();
        let t = SiteRef::new(&[2, 2], 0);
        let flow = sq.flow(&SiteRef::new(&[2, 1], 0), &t);
        assert_abs_diff_eq!(
            cos_theta(&sq, &t, &SiteRef::new(&[2, 1], 0), &flow).unwrap(),
            -1.0
        );
        assert_abs_diff_eq!(
            cos_theta(&sq, &t, &SiteRef::new(&[1, 2], 0), &flow).unwrap(),
            0.0
        );
        assert!(matches!(
            cos_theta(&sq, &t, &SiteRef::new(&[0, 0], 0), &flow),
            Err(Error::Domain(_))
        ));

        let fcc = LatticeSpec::builtin("fcc", 2).unwrap();
        let t = fcc.tracer();
        // (1,1,0)/2 is the a3 primitive vector
        let k = t.shifted(&[0, 0, 1], 0);
        let c = cos_theta(&fcc, &t, &k, &[1.0, 0.0, 0.0]).unwrap();
        assert_abs_diff_eq!(c, 0.5f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn bipartite_families() {
        for fam in Family::ALL {
            let spec = LatticeSpec::from_family(fam, 2).unwrap();
            let expected = !matches!(fam, Family::Triangular | Family::Fcc);
            assert_eq!(spec.is_bipartite(), expected, "{fam}");
        }
    }

    #[test]
    fn asymmetric_stencil_rejected() {
        let mut spec = square5();
        spec.stencil[0].pop();
        assert!(matches!(spec.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn json_round_trip() {
        for fam in Family::ALL {
            let cfg = LatticeConfig::from(LatticeSpec::from_family(fam, 3).unwrap());
            let text = cfg.to_json().unwrap();
            assert_eq!(LatticeConfig::from_json(&text).unwrap(), cfg);
        }
    }

    #[test]
    fn trajectory_window_sizes() {
        let sq = LatticeSpec::builtin("square", 2).unwrap();
        assert_eq!(sq.trajectory_window(2).num_sites(), 25);
        assert_eq!(sq.trajectory_window(4).extent, vec![7, 7]);
    }
}
