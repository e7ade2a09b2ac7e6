//! Finite measure spaces with a unit-ball relation.
//!
//! A [`Space`] holds `N` points with strictly positive measure `mu`, a
//! reflexive relation `U` giving the balls
//!
//! ```text
//! B_x  = { y : (x, y) in U }
//! B*_y = { x : (x, y) in U }
//! ```
//!
//! and optionally a nested scale family `U_0 ⊇ U_1 ⊇ … ⊇ U_J`. Integrals are
//! measure-weighted finite sums.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;

/// Sparse boolean relation on `0..n`, stored as sorted forward and backward
/// adjacency lists.
#[derive(Debug, Clone, PartialEq)]
pub struct Relation {
    forward: Vec<Vec<usize>>,
    backward: Vec<Vec<usize>>,
}

impl Relation {
    /// Build from forward adjacency lists (`forward[x]` lists every `y` with
    /// `(x, y)` in the relation). Lists are sorted and deduplicated.
    pub fn from_forward(mut forward: Vec<Vec<usize>>) -> Result<Self> {
        let n = forward.len();
        let mut backward = vec![Vec::new(); n];
        for (x, row) in forward.iter_mut().enumerate() {
            row.sort_unstable();
            row.dedup();
            for &y in row.iter() {
                if y >= n {
                    return Err(Error::Domain(format!(
                        "relation pair ({x}, {y}) out of range for {n} points"
                    )));
                }
                backward[y].push(x);
            }
        }
        Ok(Self { forward, backward })
    }

    pub fn from_pairs(n: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        let mut forward = vec![Vec::new(); n];
        for &(x, y) in pairs {
            if x >= n || y >= n {
                return Err(Error::Domain(format!(
                    "relation pair ({x}, {y}) out of range for {n} points"
                )));
            }
            forward[x].push(y);
        }
        Self::from_forward(forward)
    }

    /// `{(x, y) : pred(x, y)}`, evaluated over all pairs.
    pub fn from_predicate<F>(n: usize, pred: F) -> Self
    where
        F: Fn(usize, usize) -> bool + Sync + Send,
    {
        let forward = par::map_range(n, |x| (0..n).filter(|&y| pred(x, y)).collect());
        Self::from_forward(forward).expect("indices in range")
    }

    pub fn diagonal(n: usize) -> Self {
        Self::from_forward((0..n).map(|x| vec![x]).collect()).expect("indices in range")
    }

    pub fn len(&self) -> usize {
        self.forward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forward.is_empty()
    }

    pub fn pair_count(&self) -> usize {
        self.forward.iter().map(Vec::len).sum()
    }

    /// `{y : (x, y) in U}`.
    pub fn out(&self, x: usize) -> &[usize] {
        &self.forward[x]
    }

    /// `{x : (x, y) in U}`.
    pub fn inn(&self, y: usize) -> &[usize] {
        &self.backward[y]
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        self.forward[x].binary_search(&y).is_ok()
    }

    pub fn is_reflexive(&self) -> Option<usize> {
        (0..self.len()).find(|&x| !self.contains(x, x))
    }

    pub fn is_symmetric(&self) -> bool {
        self.forward == self.backward
    }

    pub fn pairs(&self) -> Vec<(usize, usize)> {
        self.forward
            .iter()
            .enumerate()
            .flat_map(|(x, row)| row.iter().map(move |&y| (x, y)))
            .collect()
    }

    /// First pair of `self` missing from `other`.
    pub fn first_not_in(&self, other: &Relation) -> Option<(usize, usize)> {
        self.pairs().into_iter().find(|&(x, y)| !other.contains(x, y))
    }

    /// Connected components of the symmetrized relation, labelled in order of
    /// their smallest member.
    pub fn components(&self) -> Vec<usize> {
        let n = self.len();
        let mut label = vec![usize::MAX; n];
        let mut next = 0;
        for start in 0..n {
            if label[start] != usize::MAX {
                continue;
            }
            label[start] = next;
            let mut queue = VecDeque::from([start]);
            while let Some(v) = queue.pop_front() {
                for &w in self.forward[v].iter().chain(self.backward[v].iter()) {
                    if label[w] == usize::MAX {
                        label[w] = next;
                        queue.push_back(w);
                    }
                }
            }
            next += 1;
        }
        label
    }
}

/// Finite measure space with unit-ball structure and optional scale family.
#[derive(Debug, Clone)]
pub struct Space {
    measure: Vec<f64>,
    unit: Relation,
    scales: Vec<Relation>,
    ball_mass: Vec<f64>,
    dual_mass: Vec<f64>,
    scale_dual_mass: Vec<Vec<f64>>,
    scale_ball_mass: Vec<Vec<f64>>,
}

impl Space {
    /// Validate and assemble a space.
    pub fn new(measure: Vec<f64>, unit: Relation, scales: Vec<Relation>) -> Result<Self> {
        let n = measure.len();
        if n == 0 {
            return Err(Error::Domain("space has no points".into()));
        }
        if let Some((i, m)) = measure
            .iter()
            .enumerate()
            .find(|(_, m)| !(m.is_finite() && **m > 0.0))
        {
            return Err(Error::Domain(format!("measure at point {i} is {m}, must be > 0")));
        }
        if unit.len() != n {
            return Err(Error::Domain(format!(
                "relation has {} points, measure has {n}",
                unit.len()
            )));
        }
        if let Some(x) = unit.is_reflexive() {
            return Err(Error::NotReflexive(x));
        }
        for (j, s) in scales.iter().enumerate() {
            if s.len() != n {
                return Err(Error::Domain(format!("scale {j} has {} points", s.len())));
            }
            if let Some(x) = s.is_reflexive() {
                return Err(Error::NotReflexive(x));
            }
            if j > 0 {
                if let Some((x, y)) = s.first_not_in(&scales[j - 1]) {
                    return Err(Error::NotNested { index: j, x, y });
                }
            }
        }
        let mass = |set: &[usize]| set.iter().map(|&i| measure[i]).sum::<f64>();
        let ball_mass = (0..n).map(|x| mass(unit.out(x))).collect();
        let dual_mass = (0..n).map(|y| mass(unit.inn(y))).collect();
        let scale_dual_mass = scales
            .iter()
            .map(|s| (0..n).map(|y| mass(s.inn(y))).collect())
            .collect();
        let scale_ball_mass = scales
            .iter()
            .map(|s| (0..n).map(|x| mass(s.out(x))).collect())
            .collect();
        Ok(Self {
            measure,
            unit,
            scales,
            ball_mass,
            dual_mass,
            scale_dual_mass,
            scale_ball_mass,
        })
    }

    pub fn from_pairs(
        measure: Vec<f64>,
        pairs: &[(usize, usize)],
        scales: &[Vec<(usize, usize)>],
    ) -> Result<Self> {
        let n = measure.len();
        let unit = Relation::from_pairs(n, pairs)?;
        let scales = scales
            .iter()
            .map(|s| Relation::from_pairs(n, s))
            .collect::<Result<Vec<_>>>()?;
        Self::new(measure, unit, scales)
    }

    /// Replace the scale family, validating nesting.
    pub fn with_scales(self, scales: Vec<Relation>) -> Result<Self> {
        Self::new(self.measure, self.unit, scales)
    }

    pub fn len(&self) -> usize {
        self.measure.len()
    }

    pub fn is_empty(&self) -> bool {
        self.measure.is_empty()
    }

    pub fn measure(&self) -> &[f64] {
        &self.measure
    }

    pub fn mu(&self, x: usize) -> f64 {
        self.measure[x]
    }

    pub fn total_mass(&self) -> f64 {
        self.measure.iter().sum()
    }

    pub fn mass_of(&self, set: &[usize]) -> f64 {
        set.iter().map(|&i| self.measure[i]).sum()
    }

    pub fn unit(&self) -> &Relation {
        &self.unit
    }

    pub fn ball(&self, x: usize) -> &[usize] {
        self.unit.out(x)
    }

    pub fn dual_ball(&self, y: usize) -> &[usize] {
        self.unit.inn(y)
    }

    /// `mu(B_x)`.
    pub fn ball_mass(&self, x: usize) -> f64 {
        self.ball_mass[x]
    }

    /// `mu(B*_y)`.
    pub fn dual_ball_mass(&self, y: usize) -> f64 {
        self.dual_mass[y]
    }

    pub fn scales(&self) -> &[Relation] {
        &self.scales
    }

    pub fn has_scales(&self) -> bool {
        !self.scales.is_empty()
    }

    /// `mu(U_j^*(y))`, with `U_{J+1}` the diagonal.
    pub fn scale_dual_mass(&self, j: usize, y: usize) -> f64 {
        match self.scale_dual_mass.get(j) {
            Some(m) => m[y],
            None => self.measure[y],
        }
    }

    /// `mu(U_j(x))`, with `U_{J+1}` the diagonal.
    pub fn scale_ball_mass(&self, j: usize, x: usize) -> f64 {
        match self.scale_ball_mass.get(j) {
            Some(m) => m[x],
            None => self.measure[x],
        }
    }

    /// `B^n_x`: points reachable from `x` by a chain of `n` pairs of `U`.
    /// Returned sorted.
    pub fn iterated_ball(&self, x: usize, n: usize) -> Result<Vec<usize>> {
        if n == 0 {
            return Err(Error::Parameter("iterated ball order must be >= 1".into()));
        }
        if x >= self.len() {
            return Err(Error::Domain(format!("point {x} out of range")));
        }
        let depth = self.bfs_depths(x, n);
        Ok((0..self.len()).filter(|&y| depth[y] <= n).collect())
    }

    /// Hop distance from `x` along forward pairs, capped at `limit + 1`.
    fn bfs_depths(&self, x: usize, limit: usize) -> Vec<usize> {
        let mut depth = vec![usize::MAX; self.len()];
        depth[x] = 0;
        let mut queue = VecDeque::from([x]);
        while let Some(v) = queue.pop_front() {
            let d = depth[v];
            if d >= limit {
                continue;
            }
            for &w in self.unit.out(v) {
                if depth[w] == usize::MAX {
                    depth[w] = d + 1;
                    queue.push_back(w);
                }
            }
        }
        depth
    }

    /// `mu(B^n_x) / mu(B_x)` for `n = 1..=max_n`.
    pub fn growth_ratios(&self, x: usize, max_n: usize) -> Vec<f64> {
        let depth = self.bfs_depths(x, max_n);
        let mut layer = vec![0.0; max_n + 1];
        for (y, &d) in depth.iter().enumerate() {
            if d <= max_n {
                layer[d] += self.measure[y];
            }
        }
        // B^n_x contains x itself for every n because U is reflexive.
        let base = self.ball_mass[x];
        let mut acc = layer[0];
        (1..=max_n)
            .map(|n| {
                acc += layer[n];
                acc / base
            })
            .collect()
    }

    /// Fit the growth envelope `mu(B^n_x) <= C lambda0^n mu(B_x)`.
    ///
    /// `lambda0` is the smallest entry of a 200-point geometric grid on
    /// `[1, N]` for which the pure exponential envelope (`C = 1`) holds; the
    /// companion `C` is the tight constant at that `lambda0`.
    pub fn fit_growth_constant(&self, max_n: usize) -> Result<GrowthFit> {
        if max_n == 0 {
            return Err(Error::Parameter("max_n must be >= 1".into()));
        }
        let ratios = par::map_range(self.len(), |x| self.growth_ratios(x, max_n));
        let envelope = ratios
            .iter()
            .flat_map(|r| r.iter().enumerate().map(|(i, v)| v.powf(1.0 / (i + 1) as f64)))
            .fold(1.0_f64, f64::max);
        let top = (self.len() as f64).max(1.0);
        let grid = geometric_grid(1.0, top, 200);
        let lambda0 = grid
            .into_iter()
            .find(|&l| l >= envelope * (1.0 - 1e-12))
            .unwrap_or(envelope);
        let c = ratios
            .iter()
            .flat_map(|r| r.iter().enumerate().map(|(i, v)| v / lambda0.powi(i as i32 + 1)))
            .fold(0.0_f64, f64::max);
        Ok(GrowthFit {
            c,
            lambda0,
            max_n_tested: max_n,
            envelope,
        })
    }

    /// `VOL*(x, y)`: the infimum of `mu(U_{j+1}^*(y))` over `j` with
    /// `x in U_j^*(y)`, taking `U_{J+1}` to be the diagonal.
    pub fn vol_star(&self, x: usize, y: usize) -> Result<f64> {
        let Some(first) = self.scales.first() else {
            return Err(Error::Domain("space has no scale family".into()));
        };
        if !first.contains(x, y) {
            return Err(Error::UndefinedPair { x, y });
        }
        let mut best = f64::INFINITY;
        for (j, s) in self.scales.iter().enumerate() {
            if s.contains(x, y) {
                best = best.min(self.scale_dual_mass(j + 1, y));
            }
        }
        Ok(best)
    }

    pub fn to_doc(&self) -> SpaceDoc {
        SpaceDoc {
            points: self.len(),
            measure: self.measure.clone(),
            relation: self.unit.pairs(),
            scales: self.scales.iter().map(Relation::pairs).collect(),
        }
    }

    pub fn from_doc(doc: &SpaceDoc) -> Result<Self> {
        if doc.measure.len() != doc.points {
            return Err(Error::Domain(format!(
                "document declares {} points but has {} measure entries",
                doc.points,
                doc.measure.len()
            )));
        }
        Self::from_pairs(doc.measure.clone(), &doc.relation, &doc.scales)
    }
}

/// Result of [`Space::fit_growth_constant`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthFit {
    pub c: f64,
    pub lambda0: f64,
    pub max_n_tested: usize,
    /// `max_{x,n} (mu(B^n_x)/mu(B_x))^{1/n}` before snapping to the grid.
    pub envelope: f64,
}

impl GrowthFit {
    /// Pairs `(x, n)` where the fitted bound fails. Empty after a fit.
    pub fn violations(&self, space: &Space) -> Vec<(usize, usize)> {
        let per_point = par::map_range(space.len(), |x| {
            space
                .growth_ratios(x, self.max_n_tested)
                .iter()
                .enumerate()
                .filter(|(i, r)| {
                    !crate::leq_slack(**r, self.c * self.lambda0.powi(*i as i32 + 1))
                })
                .map(|(i, _)| (x, i + 1))
                .collect::<Vec<_>>()
        });
        per_point.into_iter().flatten().collect()
    }
}

/// On-disk form of a [`Space`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceDoc {
    pub points: usize,
    pub measure: Vec<f64>,
    pub relation: Vec<(usize, usize)>,
    #[serde(default)]
    pub scales: Vec<Vec<(usize, usize)>>,
}

/// `count` geometrically spaced values from `lo` to `hi` inclusive.
pub fn geometric_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count <= 1 || hi <= lo {
        return vec![lo];
    }
    let ratio = (hi / lo).ln() / (count - 1) as f64;
    (0..count)
        .map(|k| if k + 1 == count { hi } else { lo * (ratio * k as f64).exp() })
        .collect()
}
