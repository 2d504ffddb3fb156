//! Dense indexing of a lattice extent, shared by the propagation and
//! random-walk engines.
//!
//! Sites are stored with the sublattice index varying fastest:
//! `index = ((c0 * e1 + c1) * e2 + c2) * nsub + sub`. Unused axes of 2-D
//! lattices have extent 1.

use crate::error::{Error, Result};
use crate::lattice::{LatticeSpec, SiteRef, MAX_DIM};

#[derive(Clone, Debug)]
pub(crate) struct GridHop {
    pub offset: [i32; MAX_DIM],
    pub target: usize,
    /// Flat index displacement, valid whenever the target cell is in range.
    pub delta: isize,
}

#[derive(Clone, Debug)]
pub(crate) struct Grid {
    pub dim: usize,
    pub dims: [usize; MAX_DIM],
    pub nsub: usize,
    pub reach: [i32; MAX_DIM],
    pub hops: Vec<Vec<GridHop>>,
    pub name: String,
}

impl Grid {
    pub fn new(spec: &LatticeSpec) -> Result<Self> {
        spec.validate()?;
        let nsub = spec.num_sublattices();
        let mut dims = [1usize; MAX_DIM];
        dims[..spec.dimension].copy_from_slice(&spec.extent);
        let strides = [dims[1] * dims[2] * nsub, dims[2] * nsub, nsub];
        let mut reach = [0i32; MAX_DIM];
        let hops = spec
            .stencil
            .iter()
            .enumerate()
            .map(|(s, entries)| {
                entries
                    .iter()
                    .map(|e| {
                        let mut offset = [0i32; MAX_DIM];
                        offset[..spec.dimension].copy_from_slice(&e.offset);
                        let mut delta = e.target as isize - s as isize;
                        for a in 0..MAX_DIM {
                            delta += offset[a] as isize * strides[a] as isize;
                            reach[a] = reach[a].max(offset[a].abs());
                        }
                        GridHop {
                            offset,
                            target: e.target,
                            delta,
                        }
                    })
                    .collect()
            })
            .collect();
        Ok(Grid {
            dim: spec.dimension,
            dims,
            nsub,
            reach,
            hops,
            name: spec.name.clone(),
        })
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product::<usize>() * self.nsub
    }

    pub fn cell_index(&self, cell: [usize; MAX_DIM]) -> usize {
        ((cell[0] * self.dims[1] + cell[1]) * self.dims[2] + cell[2]) * self.nsub
    }

    pub fn index(&self, site: &SiteRef) -> Result<usize> {
        if site.dim() != self.dim || site.sublattice >= self.nsub {
            return Err(Error::Bounds(format!("site {site} does not belong to '{}'", self.name)));
        }
        let mut cell = [0usize; MAX_DIM];
        for (a, c) in site.cell().iter().enumerate() {
            if *c < 0 || *c as usize >= self.dims[a] {
                return Err(Error::Bounds(format!(
                    "site {site} is outside the extent of '{}'",
                    self.name
                )));
            }
            cell[a] = *c as usize;
        }
        Ok(self.cell_index(cell) + site.sublattice)
    }

    pub fn coords(&self, index: usize) -> ([usize; MAX_DIM], usize) {
        let sub = index % self.nsub;
        let mut rest = index / self.nsub;
        let c2 = rest % self.dims[2];
        rest /= self.dims[2];
        let c1 = rest % self.dims[1];
        let c0 = rest / self.dims[1];
        ([c0, c1, c2], sub)
    }

    pub fn site(&self, index: usize) -> SiteRef {
        let (c, sub) = self.coords(index);
        let cell: Vec<i32> = c[..self.dim].iter().map(|x| *x as i32).collect();
        SiteRef::new(&cell, sub)
    }

    /// Whether every hop out of `cell` stays in range.
    #[inline]
    pub fn is_interior(&self, cell: [usize; MAX_DIM]) -> bool {
        (0..MAX_DIM).all(|a| {
            let r = self.reach[a] as usize;
            cell[a] >= r && cell[a] + r < self.dims[a]
        })
    }

    /// Flat index of the neighbor reached by `hop` from `cell`, or `None` if it
    /// leaves the extent.
    #[inline]
    pub fn step_checked(&self, cell: [usize; MAX_DIM], hop: &GridHop) -> Option<usize> {
        let mut out = [0usize; MAX_DIM];
        for a in 0..MAX_DIM {
            let c = cell[a] as i64 + hop.offset[a] as i64;
            if c < 0 || c as usize >= self.dims[a] {
                return None;
            }
            out[a] = c as usize;
        }
        Some(self.cell_index(out) + hop.target)
    }

    /// Neighbor of flat `index` via `hop`, with bounds checking.
    #[inline]
    pub fn step(&self, index: usize, hop: &GridHop) -> Option<usize> {
        let (cell, _) = self.coords(index);
        if self.is_interior(cell) {
            Some((index as isize + hop.delta) as usize)
        } else {
            self.step_checked(cell, hop)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_round_trip_and_steps_agree_with_spec() {
        for name in ["square", "honeycomb", "diamond", "fcc"] {
            let spec = LatticeSpec::builtin(name, 2).unwrap();
            let grid = Grid::new(&spec).unwrap();
            for idx in 0..grid.len() {
                let site = grid.site(idx);
                assert_eq!(grid.index(&site).unwrap(), idx);
                let ns = spec.neighbors(&site).unwrap();
                for (hop, n) in grid.hops[site.sublattice].iter().zip(&ns) {
                    match grid.step(idx, hop) {
                        Some(j) => assert_eq!(grid.site(j), n.site),
                        None => assert!(!spec.contains(&n.site)),
                    }
                }
            }
        }
    }
}
