//! Vacancy occupancy fields and the per-step propagation update.

use std::fmt;
use std::sync::Arc;

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::grid::Grid;
use crate::lattice::{HopModel, LatticeSpec, SiteRef, MAX_DIM};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldMode {
    /// Probability mass in `[0, 1]`.
    Weight,
    /// Exact trajectory counts; hop probabilities are ignored.
    Count,
    /// Natural log of the probability mass.
    Log,
}

/// Scalar stored per site of a [`FieldState`].
pub trait Mass: Clone + fmt::Debug + PartialEq + Send + Sync {
    const MODE: FieldMode;

    fn zero() -> Self;
    fn unit() -> Self;
    fn is_zero(&self) -> bool;
    /// `self += src * p`, with `ln_p = ln p` supplied for log representations.
    fn add_hop(&mut self, src: &Self, p: f64, ln_p: f64);
    /// Value as a plain probability (or count).
    fn to_f64(&self) -> f64;
}

impl Mass for f64 {
    const MODE: FieldMode = FieldMode::Weight;

    fn zero() -> Self {
        0.0
    }
    fn unit() -> Self {
        1.0
    }
    fn is_zero(&self) -> bool {
        *self == 0.0
    }
    #[inline]
    fn add_hop(&mut self, src: &Self, p: f64, _ln_p: f64) {
        *self += src * p;
    }
    fn to_f64(&self) -> f64 {
        *self
    }
}

/// Log-space mass; `-inf` is empty.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogMass(pub f64);

impl Mass for LogMass {
    const MODE: FieldMode = FieldMode::Log;

    fn zero() -> Self {
        LogMass(f64::NEG_INFINITY)
    }
    fn unit() -> Self {
        LogMass(0.0)
    }
    fn is_zero(&self) -> bool {
        self.0 == f64::NEG_INFINITY
    }
    #[inline]
    fn add_hop(&mut self, src: &Self, _p: f64, ln_p: f64) {
        let x = src.0 + ln_p;
        if x == f64::NEG_INFINITY {
            return;
        }
        let (hi, lo) = if self.0 > x { (self.0, x) } else { (x, self.0) };
        self.0 = hi + (lo - hi).exp().ln_1p();
    }
    fn to_f64(&self) -> f64 {
        self.0.exp()
    }
}

impl Mass for BigUint {
    const MODE: FieldMode = FieldMode::Count;

    fn zero() -> Self {
        Zero::zero()
    }
    fn unit() -> Self {
        One::one()
    }
    fn is_zero(&self) -> bool {
        Zero::is_zero(self)
    }
    fn add_hop(&mut self, src: &Self, _p: f64, _ln_p: f64) {
        *self += src;
    }
    fn to_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::INFINITY)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct ActiveBox {
    lo: [usize; MAX_DIM],
    hi: [usize; MAX_DIM],
}

impl ActiveBox {
    fn point(cell: [usize; MAX_DIM]) -> Self {
        ActiveBox { lo: cell, hi: cell }
    }

    fn grown(&self, grid: &Grid) -> Self {
        let mut out = *self;
        for a in 0..MAX_DIM {
            let r = grid.reach[a] as usize;
            out.lo[a] = self.lo[a].saturating_sub(r);
            out.hi[a] = (self.hi[a] + r).min(grid.dims[a] - 1);
        }
        out
    }

    fn for_each_cell(&self, mut f: impl FnMut([usize; MAX_DIM])) {
        for c0 in self.lo[0]..=self.hi[0] {
            for c1 in self.lo[1]..=self.hi[1] {
                for c2 in self.lo[2]..=self.hi[2] {
                    f([c0, c1, c2]);
                }
            }
        }
    }
}

/// Per-site vacancy mass after `step` hops.
///
/// Masses outside the active box are zero. The tracer site never holds mass.
#[derive(Clone)]
pub struct FieldState<M: Mass> {
    grid: Arc<Grid>,
    masses: Vec<M>,
    step: usize,
    active: ActiveBox,
}

impl<M: Mass> fmt::Debug for FieldState<M> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FieldState")
            .field("lattice", &self.grid.name)
            .field("mode", &M::MODE)
            .field("step", &self.step)
            .field("nonzero", &self.nonzero().len())
            .finish()
    }
}

impl<M: Mass> FieldState<M> {
    fn with_grid(grid: Arc<Grid>, start: &SiteRef) -> Result<Self> {
        let idx = grid.index(start)?;
        let mut masses = vec![M::zero(); grid.len()];
        masses[idx] = M::unit();
        let (cell, _) = grid.coords(idx);
        Ok(FieldState {
            grid,
            masses,
            step: 0,
            active: ActiveBox::point(cell),
        })
    }

    pub fn mode(&self) -> FieldMode {
        M::MODE
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn mass(&self, site: &SiteRef) -> Result<&M> {
        Ok(&self.masses[self.grid.index(site)?])
    }

    /// Sites holding nonzero mass, in storage order.
    pub fn nonzero(&self) -> Vec<(SiteRef, M)> {
        self.masses
            .iter()
            .enumerate()
            .filter(|(_, m)| !m.is_zero())
            .map(|(i, m)| (self.grid.site(i), m.clone()))
            .collect()
    }

    /// Sum of all masses as plain numbers.
    pub fn total(&self) -> f64 {
        self.masses.iter().map(Mass::to_f64).sum()
    }

    fn clear_active(&mut self) {
        let nsub = self.grid.nsub;
        let grid = Arc::clone(&self.grid);
        self.active.for_each_cell(|cell| {
            let base = grid.cell_index(cell);
            for m in &mut self.masses[base..base + nsub] {
                *m = M::zero();
            }
        });
    }
}

/// Initial field: unit mass at `start`, zero elsewhere.
pub fn init_field<M: Mass>(spec: &LatticeSpec, start: &SiteRef) -> Result<FieldState<M>> {
    FieldState::with_grid(Arc::new(Grid::new(spec)?), start)
}

/// A tracer neighbor through which the vacancy can return.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TracerNeighbor {
    pub label: String,
    pub site: SiteRef,
}

/// Applies one hop of the vacancy field with the tracer site absorbing.
pub struct Propagator {
    grid: Arc<Grid>,
    /// `(p, ln p)` per sublattice and stencil entry.
    probs: Vec<Vec<(f64, f64)>>,
    tracer: usize,
    tracer_site: SiteRef,
    /// Flat index of each tracer neighbor, aligned with `neighbors`.
    tracer_neighbors: Vec<usize>,
    neighbors: Vec<TracerNeighbor>,
}

impl Propagator {
    pub fn new(spec: &LatticeSpec, model: &HopModel, tracer: &SiteRef) -> Result<Self> {
        let grid = Arc::new(Grid::new(spec)?);
        let probs = model
            .distributions(spec)?
            .into_iter()
            .map(|row| row.into_iter().map(|p| (p, p.ln())).collect())
            .collect();
        let tracer_idx = grid.index(tracer)?;
        let mut tracer_neighbors = Vec::new();
        let mut neighbors = Vec::new();
        for n in spec.neighbors(tracer)? {
            tracer_neighbors.push(grid.index(&n.site)?);
            neighbors.push(TracerNeighbor {
                label: n.label,
                site: n.site,
            });
        }
        Ok(Propagator {
            grid,
            probs,
            tracer: tracer_idx,
            tracer_site: *tracer,
            tracer_neighbors,
            neighbors,
        })
    }

    pub fn tracer(&self) -> SiteRef {
        self.tracer_site
    }

    pub fn neighbors(&self) -> &[TracerNeighbor] {
        &self.neighbors
    }

    pub fn init_field<M: Mass>(&self, start: &SiteRef) -> Result<FieldState<M>> {
        if *start == self.tracer_site {
            return Err(domain("the vacancy cannot start on the tracer site"));
        }
        FieldState::with_grid(Arc::clone(&self.grid), start)
    }

    /// Advances `field` by one hop. Returns the new field and, per tracer
    /// neighbor, the mass that hopped from it into the tracer site.
    pub fn step<M: Mass>(&self, field: &FieldState<M>) -> Result<(FieldState<M>, Vec<M>)> {
        let mut next = FieldState {
            grid: Arc::clone(&self.grid),
            masses: vec![M::zero(); self.grid.len()],
            step: field.step,
            active: field.active,
        };
        let arrivals = self.step_into(field, &mut next)?;
        Ok((next, arrivals))
    }

    /// Double-buffered form of [`Propagator::step`]: overwrites `dst`.
    pub fn step_into<M: Mass>(&self, src: &FieldState<M>, dst: &mut FieldState<M>) -> Result<Vec<M>> {
        if !Arc::ptr_eq(&src.grid, &self.grid) && src.grid.dims != self.grid.dims {
            return Err(domain("field and propagator were built for different lattices"));
        }
        dst.clear_active();
        dst.active = src.active.grown(&self.grid);
        dst.step = src.step + 1;

        let grid = &*self.grid;
        let mut arrivals = vec![M::zero(); self.tracer_neighbors.len()];
        let mut failure = None;
        src.active.for_each_cell(|cell| {
            if failure.is_some() {
                return;
            }
            let interior = grid.is_interior(cell);
            let base = grid.cell_index(cell);
            for sub in 0..grid.nsub {
                let idx = base + sub;
                let m = &src.masses[idx];
                if m.is_zero() {
                    continue;
                }
                for (hop, &(p, ln_p)) in grid.hops[sub].iter().zip(&self.probs[sub]) {
                    let target = if interior {
                        (idx as isize + hop.delta) as usize
                    } else {
                        match grid.step_checked(cell, hop) {
                            Some(t) => t,
                            None => {
                                failure = Some(grid.site(idx));
                                return;
                            }
                        }
                    };
                    if target == self.tracer {
                        let k = self
                            .tracer_neighbors
                            .iter()
                            .position(|n| *n == idx)
                            .expect("a site hopping into the tracer is a tracer neighbor");
                        arrivals[k].add_hop(m, p, ln_p);
                    } else {
                        dst.masses[target].add_hop(m, p, ln_p);
                    }
                }
            }
        });
        if let Some(site) = failure {
            return Err(Error::Bounds(format!(
                "vacancy mass at {site} would leave the extent of '{}' at step {}; the lattice is too small for this horizon",
                grid.name, dst.step
            )));
        }
        Ok(arrivals)
    }
}

/// Next field and the mass absorbed at each tracer neighbor.
pub type StepOutput<M> = (FieldState<M>, Vec<(SiteRef, M)>);

/// One-off convenience around [`Propagator::step`].
pub fn propagate_step<M: Mass>(
    spec: &LatticeSpec,
    model: &HopModel,
    tracer: &SiteRef,
    field: &FieldState<M>,
) -> Result<StepOutput<M>> {
    let prop = Propagator::new(spec, model, tracer)?;
    let (next, arrivals) = prop.step(field)?;
    let labelled = prop
        .neighbors
        .iter()
        .zip(arrivals)
        .filter(|(_, m)| !m.is_zero())
        .map(|(n, m)| (n.site, m))
        .collect();
    Ok((next, labelled))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn square5() -> LatticeSpec {
        LatticeSpec::builtin("square", 2).unwrap().with_half_width(2)
    }

    #[test]
    fn init_matches_single_unit_at_centre() {
        let spec = square5();
        let f = init_field::<f64>(&spec, &SiteRef::new(&[2, 2], 0)).unwrap();
        assert_eq!(f.step(), 0);
        assert_eq!(f.total(), 1.0);
        assert_eq!(f.nonzero(), vec![(SiteRef::new(&[2, 2], 0), 1.0)]);

        let lf = init_field::<LogMass>(&spec, &SiteRef::new(&[2, 2], 0)).unwrap();
        assert_eq!(*lf.mass(&SiteRef::new(&[2, 2], 0)).unwrap(), LogMass(0.0));
        assert!(lf.mass(&SiteRef::new(&[0, 0], 0)).unwrap().is_zero());
        assert!(matches!(
            init_field::<f64>(&spec, &SiteRef::new(&[7, 0], 0)),
            Err(Error::Bounds(_))
        ));
    }

    #[test]
    fn first_step_from_start() {
        let spec = square5();
        let tracer = SiteRef::new(&[2, 2], 0);
        let start = SiteRef::new(&[2, 1], 0);
        let f0 = init_field::<f64>(&spec, &start).unwrap();
        let (f1, arrivals) = propagate_step(&spec, &HopModel::uniform(), &tracer, &f0).unwrap();
        assert_eq!(arrivals, vec![(start, 0.25)]);
        assert_abs_diff_eq!(f1.total(), 0.75);
        assert_eq!(f1.nonzero().len(), 3);
        assert_eq!(*f1.mass(&tracer).unwrap(), 0.0);
    }

    #[test]
    fn far_mass_is_conserved() {
        let spec = LatticeSpec::builtin("square", 4).unwrap();
        let tracer = spec.tracer();
        let far = tracer.shifted(&[3, 3], 0);
        let f0 = init_field::<f64>(&spec, &far).unwrap();
        let (f1, arrivals) = propagate_step(&spec, &HopModel::uniform(), &tracer, &f0).unwrap();
        assert!(arrivals.is_empty());
        assert_eq!(f1.total(), 1.0);
    }

    #[test]
    fn count_mode_counts_neighbors() {
        let spec = square5();
        let tracer = SiteRef::new(&[2, 2], 0);
        let start = SiteRef::new(&[2, 1], 0);
        let prop = Propagator::new(&spec, &HopModel::uniform(), &tracer).unwrap();
        let f0 = prop.init_field::<BigUint>(&start).unwrap();
        let (f1, arrivals) = prop.step(&f0).unwrap();
        let one = BigUint::from(1u32);
        // three sites keep a path each, the fourth path entered the tracer
        assert_eq!(f1.nonzero().len(), 3);
        assert!(f1.nonzero().iter().all(|(_, c)| *c == one));
        let hit: Vec<_> = arrivals.into_iter().filter(|c| !Mass::is_zero(c)).collect();
        assert_eq!(hit, vec![one]);
    }

    #[test]
    fn leaving_the_extent_is_a_bounds_error() {
        let spec = square5();
        let tracer = SiteRef::new(&[2, 2], 0);
        let prop = Propagator::new(&spec, &HopModel::uniform(), &tracer).unwrap();
        let f0 = prop.init_field::<f64>(&SiteRef::new(&[0, 0], 0)).unwrap();
        assert!(matches!(prop.step(&f0), Err(Error::Bounds(_))));
    }

    #[test]
    fn log_mass_tracks_weight_mass() {
        let spec = LatticeSpec::builtin("triangular", 6).unwrap();
        let tracer = spec.tracer();
        let start = spec.default_start();
        let prop = Propagator::new(&spec, &HopModel::uniform(), &tracer).unwrap();
        let mut w = prop.init_field::<f64>(&start).unwrap();
        let mut l = prop.init_field::<LogMass>(&start).unwrap();
        for _ in 0..5 {
            let (w2, aw) = prop.step(&w).unwrap();
            let (l2, al) = prop.step(&l).unwrap();
            for (a, b) in aw.iter().zip(&al) {
                assert_abs_diff_eq!(*a, b.to_f64(), epsilon = 1e-14);
            }
            w = w2;
            l = l2;
        }
        assert_abs_diff_eq!(w.total(), l.total(), epsilon = 1e-12);
    }
}
