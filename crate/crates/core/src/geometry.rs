//! Regular lattices in `R^d` (`d <= 3`) with integer site coordinates.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::space::Relation;

pub type Site = [i32; 3];

/// Finite subset of the lattice `h Z^d`.
#[derive(Debug, Clone)]
pub struct Lattice {
    dim: usize,
    spacing: f64,
    sites: Vec<Site>,
    lookup: HashMap<Site, usize>,
}

impl Lattice {
    /// Sites of `h Z^d` accepted by `keep`, enumerated over `|k_i| <= half_width`.
    pub fn from_filter<F>(dim: usize, spacing: f64, half_width: i32, keep: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> bool,
    {
        if !(1..=3).contains(&dim) {
            return Err(Error::Parameter(format!("dimension {dim} not in 1..=3")));
        }
        if !(spacing > 0.0) {
            return Err(Error::Parameter(format!("spacing {spacing} must be > 0")));
        }
        let range = |axis: usize| if axis < dim { -half_width..=half_width } else { 0..=0 };
        let mut sites = Vec::new();
        for k2 in range(2) {
            for k1 in range(1) {
                for k0 in range(0) {
                    let site = [k0, k1, k2];
                    let x: Vec<f64> = (0..dim).map(|a| site[a] as f64 * spacing).collect();
                    if keep(&x) {
                        sites.push(site);
                    }
                }
            }
        }
        Ok(Self::from_sites(dim, spacing, sites))
    }

    /// Full cube `[-L, L]^d`.
    pub fn cube(dim: usize, extent: f64, spacing: f64) -> Result<Self> {
        let half = (extent / spacing).round() as i32;
        Self::from_filter(dim, spacing, half, |_| true)
    }

    pub fn from_sites(dim: usize, spacing: f64, sites: Vec<Site>) -> Self {
        let lookup = sites.iter().enumerate().map(|(i, s)| (*s, i)).collect();
        Self {
            dim,
            spacing,
            sites,
            lookup,
        }
    }

    /// Keep only the listed points, in the given order.
    pub fn restrict(&self, keep: &[usize]) -> Self {
        Self::from_sites(
            self.dim,
            self.spacing,
            keep.iter().map(|&i| self.sites[i]).collect(),
        )
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn site(&self, i: usize) -> Site {
        self.sites[i]
    }

    pub fn index_of(&self, site: &Site) -> Option<usize> {
        self.lookup.get(site).copied()
    }

    pub fn coords(&self, i: usize) -> Vec<f64> {
        (0..self.dim)
            .map(|a| self.sites[i][a] as f64 * self.spacing)
            .collect()
    }

    pub fn norm(&self, i: usize) -> f64 {
        self.coords(i).iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        let (a, b) = (self.sites[i], self.sites[j]);
        let sq: i64 = (0..self.dim)
            .map(|k| {
                let d = (a[k] - b[k]) as i64;
                d * d
            })
            .sum();
        (sq as f64).sqrt() * self.spacing
    }

    /// Cell measure `h^d`.
    pub fn cell_measure(&self) -> f64 {
        self.spacing.powi(self.dim as i32)
    }

    /// Neighbour one step along `axis` in direction `dir` (`±1`).
    pub fn step(&self, i: usize, axis: usize, dir: i32) -> Option<usize> {
        let mut s = self.sites[i];
        s[axis] += dir;
        self.index_of(&s)
    }

    /// All `2d` axis neighbours present.
    pub fn is_interior(&self, i: usize) -> bool {
        (0..self.dim).all(|a| self.step(i, a, 1).is_some() && self.step(i, a, -1).is_some())
    }

    /// Integer offsets `k` with `|k| h <= radius`.
    pub fn offsets_within(&self, radius: f64) -> Vec<Site> {
        let r = (radius / self.spacing + 1e-9).floor() as i32;
        let lim = |a: usize| if a < self.dim { r } else { 0 };
        let bound = (radius / self.spacing) * (radius / self.spacing) * (1.0 + 1e-9) + 1e-9;
        let mut out = Vec::new();
        for k2 in -lim(2)..=lim(2) {
            for k1 in -lim(1)..=lim(1) {
                for k0 in -lim(0)..=lim(0) {
                    let sq = (k0 * k0 + k1 * k1 + k2 * k2) as f64;
                    if sq <= bound {
                        out.push([k0, k1, k2]);
                    }
                }
            }
        }
        out
    }

    /// `{(i, j) : |x_i - x_j| <= radius and pred(i, j)}`.
    pub fn relation_within<F>(&self, radius: f64, pred: F) -> Relation
    where
        F: Fn(usize, usize) -> bool + Sync + Send,
    {
        let offsets = self.offsets_within(radius);
        let forward = crate::par::map_range(self.len(), |i| {
            let s = self.sites[i];
            offsets
                .iter()
                .filter_map(|o| self.index_of(&[s[0] + o[0], s[1] + o[1], s[2] + o[2]]))
                .filter(|&j| pred(i, j))
                .collect::<Vec<_>>()
        });
        Relation::from_forward(forward).expect("lattice indices in range")
    }

    /// Euclidean ball relation `|x - y| <= radius`.
    pub fn euclidean_relation(&self, radius: f64) -> Relation {
        self.relation_within(radius, |_, _| true)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cube_counts_and_interior() {
        let l = Lattice::cube(2, 1.0, 0.5).unwrap();
        assert_eq!(l.len(), 25);
        let centre = l.index_of(&[0, 0, 0]).unwrap();
        assert!(l.is_interior(centre));
        let corner = l.index_of(&[2, 2, 0]).unwrap();
        assert!(!l.is_interior(corner));
        assert!((l.norm(corner) - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn euclidean_relation_in_one_dimension() {
        let l = Lattice::cube(1, 2.0, 0.25).unwrap();
        let rel = l.euclidean_relation(1.0);
        let centre = l.index_of(&[0, 0, 0]).unwrap();
        assert_eq!(rel.out(centre).len(), 9);
        assert!(rel.is_symmetric());
    }
}
