//! Periodic deme lattice: `W` demes on a ring, `M` cells per deme.
//!
//! A site is any (deme, cell). Every site `x` has `2M` in-neighbors: all
//! cells of the deme to its left and all cells of the deme to its right.
//! The ordered pair (source `y`, target `x`) is a *directed pair*; arrows of
//! the graphical representation live on directed pairs and always point from
//! the site being imitated to the site that imitates.

use serde::{Deserialize, Serialize};

use crate::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Site {
    pub deme: usize,
    pub cell: usize,
}

impl Site {
    pub fn new(deme: usize, cell: usize) -> Self {
        Self { deme, cell }
    }
}

/// Ring of `demes` demes with `cells` cells each.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Domain {
    pub demes: usize,
    pub cells: usize,
}

impl Domain {
    pub fn new(demes: usize, cells: usize) -> Result<Self, Error> {
        if demes < 2 {
            return Err(Error::DomainTooSmall(format!("need at least 2 demes, got {demes}")));
        }
        if cells == 0 {
            return Err(Error::DomainTooSmall("need at least 1 cell per deme".into()));
        }
        Ok(Self { demes, cells })
    }

    pub fn num_sites(&self) -> usize {
        self.demes * self.cells
    }

    /// Number of directed neighbor pairs, `W * M * 2M`.
    pub fn num_pairs(&self) -> usize {
        self.num_sites() * 2 * self.cells
    }

    #[inline]
    pub fn index(&self, s: Site) -> usize {
        s.deme * self.cells + s.cell
    }

    #[inline]
    pub fn site(&self, index: usize) -> Site {
        Site::new(index / self.cells, index % self.cells)
    }

    /// Deme index of a signed coordinate, wrapped onto the ring.
    #[inline]
    pub fn wrap(&self, deme: i64) -> usize {
        deme.rem_euclid(self.demes as i64) as usize
    }

    /// Decodes directed pair `p` into (source, target) site indices.
    ///
    /// Pairs are laid out target-major: `p = target * 2M + side * M + cell`
    /// where `side` 0 is the left deme and 1 the right deme.
    #[inline]
    pub fn pair(&self, p: usize) -> (usize, usize) {
        let m = self.cells;
        let target = p / (2 * m);
        let rem = p % (2 * m);
        let deme = target / m;
        let src_deme = if rem < m {
            (deme + self.demes - 1) % self.demes
        } else {
            (deme + 1) % self.demes
        };
        (src_deme * m + rem % m, target)
    }

    /// Whether `a` and `b` sit in adjacent demes.
    pub fn adjacent(&self, a: Site, b: Site) -> bool {
        let d = (a.deme + self.demes - b.deme) % self.demes;
        d == 1 || d == self.demes - 1
    }
}
