//! Discrete product type spaces.
//!
//! Profiles are enumerated row-major with agent 0 outermost, so a profile's
//! flat index is `Σ_i x_i · stride_i` with the last agent varying fastest.
//! Every [`GridFunction`] stores its values in that order.

use std::ops::ControlFlow;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probabilities within this distance of summing to one are rescaled.
pub const PROB_RENORM_TOL: f64 = 1e-9;

/// Default ceiling on the number of lower sets an exact enumeration may visit.
pub const DEFAULT_LOWER_SET_CAP: usize = 1_000_000;

/// One agent's ordered type set with its probability masses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    points: Vec<f64>,
    probs: Vec<f64>,
    #[serde(skip)]
    cdf: Vec<f64>,
}

impl Axis {
    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Cumulative probability through type `k`.
    pub fn cdf(&self, k: usize) -> f64 {
        self.cdf[k]
    }

    /// Inverse hazard rate `(1 − F(x_k)) / f(x_k)`; zero at the top type.
    pub fn inverse_hazard(&self, k: usize) -> f64 {
        if k + 1 == self.len() {
            0.0
        } else {
            (1.0 - self.cdf[k]).max(0.0) / self.probs[k]
        }
    }
}

/// Product type space `X = X_1 × … × X_N` with independent marginals.
#[derive(Debug, Clone, PartialEq)]
pub struct TypeGrid {
    axes: Vec<Axis>,
    shape: Vec<usize>,
    strides: Vec<usize>,
    joint: Vec<f64>,
}

impl TypeGrid {
    /// Builds a grid from per-agent `(points, probs)` pairs.
    ///
    /// Probabilities that sum to one within [`PROB_RENORM_TOL`] are rescaled
    /// to sum exactly to one; anything further off is rejected.
    pub fn new(axes: Vec<(Vec<f64>, Vec<f64>)>) -> Result<Self> {
        if axes.is_empty() {
            return Err(Error::InvalidInput("a grid needs at least one agent".into()));
        }
        let mut built = Vec::with_capacity(axes.len());
        for (a, (points, probs)) in axes.into_iter().enumerate() {
            if points.is_empty() {
                return Err(Error::EmptyAxis { axis: a });
            }
            if points.iter().any(|p| !p.is_finite()) || points.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::NonIncreasingPoints { axis: a });
            }
            if probs.len() != points.len() {
                return Err(Error::BadProbs {
                    axis: a,
                    reason: format!("{} probabilities for {} points", probs.len(), points.len()),
                });
            }
            if let Some(p) = probs.iter().find(|p| !(p.is_finite() && **p > 0.0)) {
                return Err(Error::BadProbs {
                    axis: a,
                    reason: format!("probability {p} is not strictly positive"),
                });
            }
            let total = neumaier_sum(probs.iter().copied());
            if (total - 1.0).abs() > PROB_RENORM_TOL {
                return Err(Error::BadProbs {
                    axis: a,
                    reason: format!("probabilities sum to {total}"),
                });
            }
            let probs: Vec<f64> = probs.iter().map(|p| p / total).collect();
            let mut cdf = Vec::with_capacity(probs.len());
            let mut acc = 0.0;
            for p in &probs {
                acc += p;
                cdf.push(acc);
            }
            *cdf.last_mut().unwrap() = 1.0;
            built.push(Axis { points, probs, cdf });
        }
        let shape: Vec<usize> = built.iter().map(Axis::len).collect();
        let mut strides = vec![1; shape.len()];
        for i in (0..shape.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * shape[i + 1];
        }
        let len: usize = shape.iter().product();
        let mut joint = vec![1.0; len];
        for (idx, f) in joint.iter_mut().enumerate() {
            for (i, axis) in built.iter().enumerate() {
                *f *= axis.probs[(idx / strides[i]) % shape[i]];
            }
        }
        Ok(Self {
            axes: built,
            shape,
            strides,
            joint,
        })
    }

    /// Uniform grid with types `0, 1, …, n_i − 1` on each axis.
    pub fn uniform(shape: &[usize]) -> Result<Self> {
        Self::new(
            shape
                .iter()
                .map(|&n| {
                    let points = (0..n).map(|k| k as f64).collect();
                    (points, vec![1.0 / n as f64; n])
                })
                .collect(),
        )
    }

    pub fn dims(&self) -> usize {
        self.shape.len()
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.joint.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joint.is_empty()
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn axis(&self, i: usize) -> &Axis {
        &self.axes[i]
    }

    pub fn stride(&self, i: usize) -> usize {
        self.strides[i]
    }

    /// Joint probability `f(x)` of profile `idx`.
    pub fn prob(&self, idx: usize) -> f64 {
        self.joint[idx]
    }

    pub fn probs(&self) -> &[f64] {
        &self.joint
    }

    /// Type index of agent `i` in profile `idx`.
    pub fn coord(&self, idx: usize, i: usize) -> usize {
        (idx / self.strides[i]) % self.shape[i]
    }

    pub fn coords(&self, idx: usize) -> Vec<usize> {
        (0..self.dims()).map(|i| self.coord(idx, i)).collect()
    }

    pub fn index(&self, coords: &[usize]) -> usize {
        coords.iter().zip(&self.strides).map(|(c, s)| c * s).sum()
    }

    /// Profile with agent `i` moved one type up, if any.
    pub fn up(&self, idx: usize, i: usize) -> Option<usize> {
        (self.coord(idx, i) + 1 < self.shape[i]).then(|| idx + self.strides[i])
    }

    /// Profile with agent `i` moved one type down, if any.
    pub fn down(&self, idx: usize, i: usize) -> Option<usize> {
        (self.coord(idx, i) > 0).then(|| idx - self.strides[i])
    }

    /// Componentwise order `a ≤ b`.
    pub fn leq(&self, a: usize, b: usize) -> bool {
        (0..self.dims()).all(|i| self.coord(a, i) <= self.coord(b, i))
    }

    /// Flat indices of the profiles with `x_i = 0`, one per line along agent `i`.
    pub fn line_starts(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(move |&idx| self.coord(idx, i) == 0)
    }

    /// The profiles on agent `i`'s line through `start`, lowest type first.
    pub fn line(&self, start: usize, i: usize) -> impl Iterator<Item = usize> {
        let stride = self.strides[i];
        let base = start - self.coord(start, i) * stride;
        (0..self.shape[i]).map(move |k| base + k * stride)
    }

    pub fn check_agent(&self, i: usize) -> Result<()> {
        if i < self.dims() {
            Ok(())
        } else {
            Err(Error::BadAgent {
                agent: i,
                dims: self.dims(),
            })
        }
    }

    pub fn check_shape(&self, g: &GridFunction) -> Result<()> {
        if g.shape() == self.shape() {
            Ok(())
        } else {
            Err(Error::ShapeMismatch {
                expected: self.shape.clone(),
                found: g.shape().to_vec(),
            })
        }
    }
}

/// Real values indexed by type profile, stored in canonical order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFunction {
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != values.len() || shape.is_empty() {
            return Err(Error::ShapeMismatch {
                expected: shape,
                found: vec![values.len()],
            });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput { index });
        }
        Ok(Self { shape, values })
    }

    /// Two-agent function from a row-major matrix (rows are agent 0's types).
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let ncols = rows.first().map_or(0, |r| r.as_ref().len());
        if rows.iter().any(|r| r.as_ref().len() != ncols) {
            return Err(Error::InvalidInput("ragged matrix".into()));
        }
        let values = rows.iter().flat_map(|r| r.as_ref().iter().copied()).collect();
        Self::new(vec![rows.len(), ncols], values)
    }

    pub fn constant(shape: &[usize], c: f64) -> Self {
        Self {
            shape: shape.to_vec(),
            values: vec![c; shape.iter().product()],
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::constant(shape, 0.0)
    }

    /// Evaluates `f` on every profile of `grid`.
    pub fn from_fn(grid: &TypeGrid, mut f: impl FnMut(usize) -> f64) -> Self {
        Self {
            shape: grid.shape().to_vec(),
            values: (0..grid.len()).map(&mut f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                expected: self.shape.clone(),
                found: other.shape.clone(),
            });
        }
        Ok(Self {
            shape: self.shape.clone(),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// Sup-norm distance to `other`.
    pub fn sup_distance(&self, other: &Self) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Rows of a two-agent function, for display and tests.
    pub fn rows(&self) -> Vec<Vec<f64>> {
        let ncols = *self.shape.last().unwrap();
        self.values.chunks(ncols).map(<[f64]>::to_vec).collect()
    }
}

impl std::ops::Index<usize> for GridFunction {
    type Output = f64;
    fn index(&self, idx: usize) -> &f64 {
        &self.values[idx]
    }
}

impl std::ops::IndexMut<usize> for GridFunction {
    fn index_mut(&mut self, idx: usize) -> &mut f64 {
        &mut self.values[idx]
    }
}

/// Which discrete partial difference to take.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// `g(x) − g(x_i⁻, x_{-i})`, equal to `g` on the lowest type.
    Lower,
    /// `g(x_i⁺, x_{-i}) − g(x)`, zero on the highest type.
    Upper,
}

pub fn partial_delta(grid: &TypeGrid, g: &GridFunction, i: usize, side: Side) -> Result<GridFunction> {
    grid.check_shape(g)?;
    grid.check_agent(i)?;
    Ok(GridFunction::from_fn(grid, |idx| match side {
        Side::Lower => match grid.down(idx, i) {
            Some(d) => g[idx] - g[d],
            None => g[idx],
        },
        Side::Upper => match grid.up(idx, i) {
            Some(u) => g[u] - g[idx],
            None => 0.0,
        },
    }))
}

/// True iff every upper partial difference is at least `−tol`.
pub fn is_nondecreasing(grid: &TypeGrid, g: &GridFunction, tol: f64) -> bool {
    grid.check_shape(g).is_ok() && min_upper_delta(grid, g) >= -tol
}

/// Smallest upper partial difference over all agents and non-top profiles.
pub(crate) fn min_upper_delta(grid: &TypeGrid, g: &GridFunction) -> f64 {
    let mut worst = f64::INFINITY;
    for idx in 0..grid.len() {
        for i in 0..grid.dims() {
            if let Some(u) = grid.up(idx, i) {
                worst = worst.min(g[u] - g[idx]);
            }
        }
    }
    worst
}

/// Probability-weighted mean of `g`, conditional on `subset` when given.
pub fn expectation(grid: &TypeGrid, g: &GridFunction, subset: Option<&[usize]>) -> Result<f64> {
    grid.check_shape(g)?;
    match subset {
        None => Ok(neumaier_sum((0..grid.len()).map(|x| grid.prob(x) * g[x]))),
        Some([]) => Err(Error::EmptySubset),
        Some(cells) => {
            let mass = neumaier_sum(cells.iter().map(|&x| grid.prob(x)));
            Ok(neumaier_sum(cells.iter().map(|&x| grid.prob(x) * g[x])) / mass)
        }
    }
}

/// Compensated summation.
pub(crate) fn neumaier_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// A downward-closed set of profiles together with its maximal members.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LowerSet {
    members: Vec<bool>,
    frontier: Vec<usize>,
}

impl LowerSet {
    /// Validates downward closure of `members`.
    pub fn from_members(grid: &TypeGrid, members: Vec<bool>) -> Result<Self> {
        if members.len() != grid.len() {
            return Err(Error::ShapeMismatch {
                expected: grid.shape().to_vec(),
                found: vec![members.len()],
            });
        }
        for idx in (0..grid.len()).filter(|&x| members[x]) {
            if (0..grid.dims()).any(|i| grid.down(idx, i).is_some_and(|d| !members[d])) {
                return Err(Error::InvalidInput(format!(
                    "profile {:?} is a member but a predecessor is not",
                    grid.coords(idx)
                )));
            }
        }
        Ok(Self::from_members_unchecked(grid, members))
    }

    /// The smallest lower set containing `generators`.
    pub fn generated_by(grid: &TypeGrid, generators: &[usize]) -> Self {
        let members = (0..grid.len())
            .map(|x| generators.iter().any(|&g| grid.leq(x, g)))
            .collect();
        Self::from_members_unchecked(grid, members)
    }

    pub(crate) fn from_members_unchecked(grid: &TypeGrid, members: Vec<bool>) -> Self {
        let frontier = (0..grid.len())
            .filter(|&x| members[x] && (0..grid.dims()).all(|i| grid.up(x, i).is_none_or(|u| !members[u])))
            .collect();
        Self { members, frontier }
    }

    pub fn contains(&self, idx: usize) -> bool {
        self.members[idx]
    }

    pub fn membership(&self) -> &[bool] {
        &self.members
    }

    /// Member indices in canonical order.
    pub fn members(&self) -> Vec<usize> {
        (0..self.members.len()).filter(|&x| self.members[x]).collect()
    }

    /// The antichain of maximal members.
    pub fn frontier(&self) -> &[usize] {
        &self.frontier
    }

    pub fn size(&self) -> usize {
        self.members.iter().filter(|&&m| m).count()
    }

    pub fn is_empty(&self) -> bool {
        self.size() == 0
    }
}

/// Every lower set of `grid` exactly once, ordered by size and then by the
/// lexicographic order of their sorted member indices.
pub fn enumerate_lower_sets(grid: &TypeGrid, cap: usize) -> Result<Vec<LowerSet>> {
    let mut out = Vec::new();
    walk_lower_sets(grid, cap, &[], |members, _| {
        out.push(members.to_vec());
        ControlFlow::Continue(())
    })?;
    let mut sets: Vec<(Vec<usize>, Vec<bool>)> = out
        .into_iter()
        .map(|m| ((0..m.len()).filter(|&x| m[x]).collect(), m))
        .collect();
    sets.sort_by(|a, b| a.0.len().cmp(&b.0.len()).then_with(|| a.0.cmp(&b.0)));
    Ok(sets
        .into_iter()
        .map(|(_, m)| LowerSet::from_members_unchecked(grid, m))
        .collect())
}

/// Number of lower sets, or `TooManyLowerSets` past `cap`.
pub fn count_lower_sets(grid: &TypeGrid, cap: usize) -> Result<usize> {
    walk_lower_sets(grid, cap, &[], |_, _| ControlFlow::Continue(()))
}

/// Depth-first walk over all lower sets.
///
/// For each lower set the visitor receives the membership mask and the sums
/// `Σ_{x ∈ L} w_k(x)` for every weight vector `w_k` in `weights`. Profiles are
/// decided in canonical order; a profile may join only when all of its
/// immediate predecessors have, which makes every branch a distinct lower set.
/// Returns the number of lower sets visited.
pub(crate) fn walk_lower_sets<F>(grid: &TypeGrid, cap: usize, weights: &[&[f64]], mut visit: F) -> Result<usize>
where
    F: FnMut(&[bool], &[f64]) -> ControlFlow<()>,
{
    struct Walk<'a, F> {
        grid: &'a TypeGrid,
        weights: &'a [&'a [f64]],
        members: Vec<bool>,
        sums: Vec<f64>,
        count: usize,
        cap: usize,
        visit: F,
    }

    // Err(true) means the cap was exceeded, Err(false) an early stop.
    fn step<F: FnMut(&[bool], &[f64]) -> ControlFlow<()>>(w: &mut Walk<'_, F>, idx: usize) -> std::result::Result<(), bool> {
        if idx == w.grid.len() {
            w.count += 1;
            if w.count > w.cap {
                return Err(true);
            }
            return match (w.visit)(&w.members, &w.sums) {
                ControlFlow::Continue(()) => Ok(()),
                ControlFlow::Break(()) => Err(false),
            };
        }
        step(w, idx + 1)?;
        let admissible = (0..w.grid.dims()).all(|i| w.grid.down(idx, i).is_none_or(|d| w.members[d]));
        if admissible {
            w.members[idx] = true;
            for (s, wk) in w.sums.iter_mut().zip(w.weights) {
                *s += wk[idx];
            }
            let r = step(w, idx + 1);
            for (s, wk) in w.sums.iter_mut().zip(w.weights) {
                *s -= wk[idx];
            }
            w.members[idx] = false;
            r?;
        }
        Ok(())
    }

    let mut w = Walk {
        grid,
        weights,
        members: vec![false; grid.len()],
        sums: vec![0.0; weights.len()],
        count: 0,
        cap,
        visit: &mut visit,
    };
    match step(&mut w, 0) {
        Ok(()) | Err(false) => Ok(w.count),
        Err(true) => Err(Error::TooManyLowerSets { cap }),
    }
}
