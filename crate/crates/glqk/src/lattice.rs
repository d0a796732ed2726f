//! Periodic hypercubic qubit lattices and their sliding local subsystems.
//!
//! Sites are indexed row-major (last axis fastest). All geometry is periodic:
//! distances wrap per axis, and the window family returned by
//! [`Lattice::local_subsystems`] slides one anchor per site.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Periodic D-dimensional grid of qubits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lattice {
    dims: Vec<usize>,
}

/// Axis-aligned window of `width^D` sites anchored at a lattice site, wrapping
/// periodically on every axis.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Subsystem {
    /// Site index of the window's lexicographically smallest corner.
    pub anchor: usize,
    /// Per-axis window width.
    pub width: usize,
    /// Member sites in row-major offset order starting at the anchor.
    pub sites: Vec<usize>,
}

impl Lattice {
    /// Build a lattice from per-axis extents (each at least 1, at least one axis).
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::InvalidArgument("lattice needs at least one axis".into()));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidArgument("lattice axis extent must be positive".into()));
        }
        Ok(Lattice { dims })
    }

    /// One-dimensional periodic chain of `n` sites.
    pub fn ring(n: usize) -> Result<Self> {
        Lattice::new(vec![n])
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn num_axes(&self) -> usize {
        self.dims.len()
    }

    /// Total number of sites.
    pub fn num_sites(&self) -> usize {
        self.dims.iter().product()
    }

    /// Shortest per-axis extent; upper bound for window widths.
    pub fn min_side(&self) -> usize {
        *self.dims.iter().min().expect("lattice has at least one axis")
    }

    fn check_site(&self, site: usize) -> Result<()> {
        if site >= self.num_sites() {
            return Err(Error::InvalidArgument(format!(
                "site {site} out of range for lattice with {} sites",
                self.num_sites()
            )));
        }
        Ok(())
    }

    /// Row-major coordinates of a site (last axis fastest).
    pub fn coords(&self, site: usize) -> Result<Vec<usize>> {
        self.check_site(site)?;
        let mut rem = site;
        let mut out = vec![0usize; self.dims.len()];
        for axis in (0..self.dims.len()).rev() {
            out[axis] = rem % self.dims[axis];
            rem /= self.dims[axis];
        }
        Ok(out)
    }

    /// Site index of row-major coordinates.
    pub fn site(&self, coords: &[usize]) -> Result<usize> {
        if coords.len() != self.dims.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} coordinates, got {}",
                self.dims.len(),
                coords.len()
            )));
        }
        let mut idx = 0usize;
        for (axis, &c) in coords.iter().enumerate() {
            if c >= self.dims[axis] {
                return Err(Error::InvalidArgument(format!(
                    "coordinate {c} out of range on axis {axis} (extent {})",
                    self.dims[axis]
                )));
            }
            idx = idx * self.dims[axis] + c;
        }
        Ok(idx)
    }

    /// Periodic Manhattan distance: sum over axes of the wrapped coordinate gap.
    pub fn distance(&self, a: usize, b: usize) -> Result<usize> {
        let ca = self.coords(a)?;
        let cb = self.coords(b)?;
        Ok(ca
            .iter()
            .zip(&cb)
            .zip(&self.dims)
            .map(|((&x, &y), &len)| {
                let d = x.abs_diff(y);
                d.min(len - d)
            })
            .sum())
    }

    /// Minimum distance over all site pairs drawn from two non-empty sets.
    pub fn set_distance(&self, a: &[usize], b: &[usize]) -> Result<usize> {
        if a.is_empty() || b.is_empty() {
            return Err(Error::InvalidArgument("set_distance needs non-empty site sets".into()));
        }
        let mut best = usize::MAX;
        for &x in a {
            for &y in b {
                best = best.min(self.distance(x, y)?);
            }
        }
        Ok(best)
    }

    /// The window of width `width` anchored at `anchor`.
    pub fn subsystem(&self, anchor: usize, width: usize) -> Result<Subsystem> {
        self.check_site(anchor)?;
        self.check_width(width)?;
        let base = self.coords(anchor)?;
        let d = self.dims.len();
        let count = width.pow(d as u32);
        let mut sites = Vec::with_capacity(count);
        // Offsets enumerated row-major so 1D windows read anchor, anchor+1, ...
        let mut offset = vec![0usize; d];
        for _ in 0..count {
            let coords: Vec<usize> = base
                .iter()
                .zip(&offset)
                .zip(&self.dims)
                .map(|((&c, &o), &len)| (c + o) % len)
                .collect();
            sites.push(self.site(&coords).expect("offset coords are in range"));
            for axis in (0..d).rev() {
                offset[axis] += 1;
                if offset[axis] < width {
                    break;
                }
                offset[axis] = 0;
            }
        }
        Ok(Subsystem { anchor, width, sites })
    }

    fn check_width(&self, width: usize) -> Result<()> {
        if width == 0 {
            return Err(Error::InvalidArgument("window width must be positive".into()));
        }
        if width > self.min_side() {
            return Err(Error::InvalidArgument(format!(
                "window width {width} exceeds shortest lattice side {}",
                self.min_side()
            )));
        }
        Ok(())
    }

    /// The sliding window family: one window per site, each of `width^D` sites.
    pub fn local_subsystems(&self, width: usize) -> Result<Vec<Subsystem>> {
        self.check_width(width)?;
        (0..self.num_sites()).map(|a| self.subsystem(a, width)).collect()
    }

    /// Whether the window anchored at `anchor` contains every site in `sites`.
    pub fn window_covers(&self, anchor: usize, width: usize, sites: &[usize]) -> Result<bool> {
        self.check_site(anchor)?;
        self.check_width(width)?;
        let base = self.coords(anchor)?;
        for &s in sites {
            let cs = self.coords(s)?;
            for axis in 0..self.dims.len() {
                let len = self.dims[axis];
                let rel = (cs[axis] + len - base[axis]) % len;
                if rel >= width {
                    return Ok(false);
                }
            }
        }
        Ok(true)
    }

    /// Whether any window of the sliding family contains every site in `sites`.
    pub fn fits_in_window(&self, sites: &[usize], width: usize) -> Result<bool> {
        self.check_width(width)?;
        for anchor in 0..self.num_sites() {
            if self.window_covers(anchor, width, sites)? {
                return Ok(true);
            }
        }
        Ok(false)
    }
}
