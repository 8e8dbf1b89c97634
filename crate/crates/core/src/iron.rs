//! Ironing: the minimal non-decreasing majorant of a virtual-value function.
//!
//! A transfer field `λ` moves probability-weighted mass from each profile to
//! its successor along one agent's axis. Its divergence `Σ_i Δ̲_i λ_i / f` is
//! subtracted from `α`, and minimizing `E[φ(α − Σ_i Δ̲_i λ_i / f)]` over
//! `λ ≥ 0` yields the ironed function `ᾱ` for every strictly convex `φ`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{self, expectation, GridFunction, TypeGrid};
use crate::majorize::{self, Method};
use crate::pava::pava;

/// Non-negative per-agent transfers, stored as probability mass.
///
/// `λ_i(x)` is the mass moved from `x` to `(x_i⁺, x_{-i})`; it is zero on the
/// top type of agent `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferField {
    lambdas: Vec<GridFunction>,
}

impl TransferField {
    pub fn zeros(grid: &TypeGrid) -> Self {
        Self {
            lambdas: vec![GridFunction::zeros(grid.shape()); grid.dims()],
        }
    }

    /// Validates non-negativity and the top-type convention.
    pub fn new(grid: &TypeGrid, lambdas: Vec<GridFunction>) -> Result<Self> {
        if lambdas.len() != grid.dims() {
            return Err(Error::InvalidInput(format!(
                "{} transfer components for {} agents",
                lambdas.len(),
                grid.dims()
            )));
        }
        for (i, l) in lambdas.iter().enumerate() {
            grid.check_shape(l)?;
            for x in 0..grid.len() {
                if l[x] < 0.0 {
                    return Err(Error::InvalidInput(format!("λ_{i} is negative at {:?}", grid.coords(x))));
                }
                if grid.up(x, i).is_none() && l[x] != 0.0 {
                    return Err(Error::InvalidInput(format!("λ_{i} is nonzero on the top type at {:?}", grid.coords(x))));
                }
            }
        }
        Ok(Self { lambdas })
    }

    /// Transfers in the units of `g` itself: `λ_i(x) / f(x)`.
    ///
    /// Worked examples usually print transfers this way.
    pub fn from_density_scaled(grid: &TypeGrid, scaled: Vec<GridFunction>) -> Result<Self> {
        let lambdas = scaled
            .into_iter()
            .map(|l| {
                grid.check_shape(&l)?;
                Ok(GridFunction::from_fn(grid, |x| l[x] * grid.prob(x)))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(grid, lambdas)
    }

    pub fn agent(&self, i: usize) -> &GridFunction {
        &self.lambdas[i]
    }

    pub fn agents(&self) -> &[GridFunction] {
        &self.lambdas
    }

    pub(crate) fn agent_mut(&mut self, i: usize) -> &mut GridFunction {
        &mut self.lambdas[i]
    }

    pub fn density_scaled(&self, grid: &TypeGrid) -> Vec<GridFunction> {
        self.lambdas
            .iter()
            .map(|l| GridFunction::from_fn(grid, |x| l[x] / grid.prob(x)))
            .collect()
    }

    /// `Δ̲_i λ_i / f` for a single agent.
    pub fn agent_divergence(&self, grid: &TypeGrid, i: usize) -> GridFunction {
        let l = &self.lambdas[i];
        GridFunction::from_fn(grid, |x| {
            let below = grid.down(x, i).map_or(0.0, |d| l[d]);
            (l[x] - below) / grid.prob(x)
        })
    }

    /// `Σ_i Δ̲_i λ_i / f`.
    pub fn divergence(&self, grid: &TypeGrid) -> GridFunction {
        let mut div = GridFunction::zeros(grid.shape());
        for i in 0..grid.dims() {
            let d = self.agent_divergence(grid, i);
            for x in 0..grid.len() {
                div[x] += d[x];
            }
        }
        div
    }

    pub fn max_abs(&self) -> f64 {
        self.lambdas.iter().map(GridFunction::max_abs).fold(0.0, f64::max)
    }
}

/// Strictly convex penalty used in the ironing objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phi {
    #[default]
    Quadratic,
    Quartic,
}

impl Phi {
    pub fn value(self, r: f64) -> f64 {
        match self {
            Phi::Quadratic => r * r,
            Phi::Quartic => (r * r) * (r * r),
        }
    }

    fn derivative(self, r: f64) -> f64 {
        match self {
            Phi::Quadratic => 2.0 * r,
            Phi::Quartic => 4.0 * r * r * r,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IronOptions {
    /// Stop once a sweep lowers the objective by less than `tol · (1 + objective)`.
    pub tol: f64,
    pub max_sweeps: usize,
    pub phi: Phi,
}

impl Default for IronOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_sweeps: 100_000,
            phi: Phi::Quadratic,
        }
    }
}

/// Largest single-coordinate change below which a sweep counts as stalled.
const MIN_UPDATE: f64 = 1e-13;

/// First-order residual, relative to the input's scale, required before a
/// small objective decrease is accepted as convergence. The decrease alone
/// is quadratic in the distance to the optimum and stops too early.
const KKT_TOL: f64 = 1e-12;

/// First-order optimality diagnostics of an ironing solve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Kkt {
    /// Smallest upper difference of `ᾱ`; non-negative at a solution.
    pub min_upper_delta: f64,
    /// Largest `λ_i(x) · |Δ̄_i ᾱ(x)|`; zero at a solution.
    pub max_comp_slack: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IroningResult {
    pub alpha_bar: GridFunction,
    pub lambda: TransferField,
    pub partition: Partition,
    pub objective: f64,
    pub sweeps: usize,
    pub kkt: Kkt,
}

impl IroningResult {
    /// `ᾱ + Σ_i Δ̲_i λ_i / f`, which equals the ironed input.
    pub fn reconstructed_alpha(&self, grid: &TypeGrid) -> GridFunction {
        let div = self.lambda.divergence(grid);
        self.alpha_bar.zip_with(&div, |a, d| a + d).expect("shapes agree")
    }
}

/// Disjoint cells covering the grid, ordered by their smallest member.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    cells: Vec<Vec<usize>>,
    means: Vec<f64>,
    cell_of: Vec<usize>,
}

impl Partition {
    /// Builds a partition from cell labels per profile and the per-cell means of `alpha`.
    pub(crate) fn from_labels(grid: &TypeGrid, labels: &[usize], alpha: &GridFunction) -> Result<Self> {
        let mut remap = vec![usize::MAX; labels.len()];
        let mut cells: Vec<Vec<usize>> = Vec::new();
        let mut cell_of = vec![0; labels.len()];
        for x in 0..labels.len() {
            let l = labels[x];
            if remap[l] == usize::MAX {
                remap[l] = cells.len();
                cells.push(Vec::new());
            }
            cell_of[x] = remap[l];
            cells[remap[l]].push(x);
        }
        let means = cells
            .iter()
            .map(|c| expectation(grid, alpha, Some(c)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { cells, means, cell_of })
    }

    pub fn singletons(grid: &TypeGrid, alpha: &GridFunction) -> Result<Self> {
        let labels: Vec<usize> = (0..grid.len()).collect();
        Self::from_labels(grid, &labels, alpha)
    }

    pub fn cells(&self) -> &[Vec<usize>] {
        &self.cells
    }

    /// Conditional mean of the ironed input on each cell.
    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn cell_of(&self, x: usize) -> usize {
        self.cell_of[x]
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Cells as sorted coordinate lists, for comparisons in tests and output.
    pub fn coordinate_cells(&self, grid: &TypeGrid) -> Vec<Vec<Vec<usize>>> {
        self.cells
            .iter()
            .map(|c| c.iter().map(|&x| grid.coords(x)).collect())
            .collect()
    }

    /// Unions of cells whose ironed values agree within `rel_tol`.
    ///
    /// This is the level-set view; it can merge cells that no transfer connects.
    pub fn level_sets(&self, alpha_bar: &GridFunction, rel_tol: f64) -> Vec<Vec<usize>> {
        let scale = 1.0 + alpha_bar.max_abs();
        let mut order: Vec<usize> = (0..self.cells.len()).collect();
        let value = |c: usize| alpha_bar[self.cells[c][0]];
        order.sort_by(|&a, &b| value(a).total_cmp(&value(b)));
        let mut groups: Vec<Vec<usize>> = Vec::new();
        let mut last = f64::NAN;
        for c in order {
            if groups.is_empty() || (value(c) - last).abs() > rel_tol * scale {
                groups.push(Vec::new());
            }
            last = value(c);
            groups.last_mut().unwrap().extend(&self.cells[c]);
        }
        for g in &mut groups {
            g.sort_unstable();
        }
        groups.sort();
        groups
    }

    /// Ultramodularity: `x ≤ y` in a cell implies the order interval `[x, y]` is in it.
    pub fn is_ultramodular(&self, grid: &TypeGrid) -> Option<usize> {
        (0..self.cells.len()).find(|&c| !cell_is_ultramodular(grid, &self.cells[c], &self.cell_of, c))
    }
}

/// It suffices that for comparable members `x < y`, each one-step move from
/// `x` towards `y` stays in the cell; induction then covers the interval.
pub(crate) fn cell_is_ultramodular(grid: &TypeGrid, cell: &[usize], cell_of: &[usize], id: usize) -> bool {
    for &x in cell {
        for &y in cell {
            if x == y || !grid.leq(x, y) {
                continue;
            }
            for i in 0..grid.dims() {
                if grid.coord(x, i) < grid.coord(y, i) && cell_of[x + grid.stride(i)] != id {
                    return false;
                }
            }
        }
    }
    true
}

/// Convex production cost `C(q)` with `C(0) = C'(0) = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CostModel {
    /// `C(q) = c q² / 2`.
    Quadratic { c: f64 },
    /// `C(q) = c q^p / p` with `p > 1`.
    Power { c: f64, p: f64 },
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel::Quadratic { c: 1.0 }
    }
}

impl CostModel {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            CostModel::Quadratic { c } => c.is_finite() && c > 0.0,
            CostModel::Power { c, p } => c.is_finite() && c > 0.0 && p.is_finite() && p > 1.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("invalid cost model {self:?}")))
        }
    }

    pub fn cost(&self, q: f64) -> f64 {
        match *self {
            CostModel::Quadratic { c } => 0.5 * c * q * q,
            CostModel::Power { c, p } => c * q.max(0.0).powf(p) / p,
        }
    }

    pub fn marginal(&self, q: f64) -> f64 {
        match *self {
            CostModel::Quadratic { c } => c * q,
            CostModel::Power { c, p } => c * q.max(0.0).powf(p - 1.0),
        }
    }

    /// `C'⁻¹(y)` for `y ≥ 0`.
    pub fn marginal_inverse(&self, y: f64) -> f64 {
        let y = y.max(0.0);
        match *self {
            CostModel::Quadratic { c } => y / c,
            CostModel::Power { c, p } => (y / c).powf(1.0 / (p - 1.0)),
        }
    }
}

/// Unconstrained-optimal decision for an ironed virtual value: `C'⁻¹(max(ᾱ, 0))`.
pub fn optimal_q(alpha_bar: &GridFunction, cost: &CostModel) -> GridFunction {
    alpha_bar.map(|a| cost.marginal_inverse(a.max(0.0)))
}

/// Raw coordinate-descent state, shared with the flow majorization check.
pub(crate) struct Descent {
    pub residual: GridFunction,
    pub lambda: TransferField,
    pub objective: f64,
    pub sweeps: usize,
    pub last_decrease: f64,
    pub converged: bool,
}

/// Minimizes `E[φ(α − Σ_i Δ̲_i λ_i / f)]` over `λ ≥ 0` by cyclic coordinate descent.
pub(crate) fn descend(alpha: &GridFunction, grid: &TypeGrid, opts: &IronOptions) -> Result<Descent> {
    grid.check_shape(alpha)?;
    if let Some(index) = alpha.values().iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput { index });
    }
    let phi = opts.phi;
    let f = grid.probs();
    let mut r = alpha.clone();
    let mut lambda = TransferField::zeros(grid);
    let objective = |r: &GridFunction| grid::neumaier_sum((0..grid.len()).map(|x| f[x] * phi.value(r[x])));
    let mut obj = objective(&r);
    let mut sweeps = 0;
    let mut last_decrease = f64::INFINITY;
    let mut converged = false;
    let update_floor = MIN_UPDATE * (1.0 + alpha.max_abs());
    let kkt_floor = KKT_TOL * (1.0 + alpha.max_abs());
    while sweeps < opts.max_sweeps {
        sweeps += 1;
        let mut max_update = 0.0f64;
        for i in 0..grid.dims() {
            let stride = grid.stride(i);
            let l = lambda.agent_mut(i);
            for x in 0..grid.len() {
                if grid.coord(x, i) + 1 == grid.shape()[i] {
                    continue;
                }
                let u = x + stride;
                let t = line_search(phi, r[x], r[u], f[x], f[u], -l[x]);
                if t != 0.0 {
                    l[x] += t;
                    r[x] -= t / f[x];
                    r[u] += t / f[u];
                    max_update = max_update.max(t.abs() / f[x].min(f[u]));
                }
            }
        }
        let next = objective(&r);
        last_decrease = obj - next;
        obj = next;
        let flat = last_decrease < opts.tol * (1.0 + obj) && kkt_violation(grid, &r, &lambda) <= kkt_floor;
        if flat || max_update < update_floor {
            converged = true;
            break;
        }
    }
    Ok(Descent {
        residual: r,
        lambda,
        objective: obj,
        sweeps,
        last_decrease,
        converged,
    })
}

/// Worst first-order violation in value units: a decrease of the residual
/// along an edge, or any change across an edge that carries mass.
fn kkt_violation(grid: &TypeGrid, r: &GridFunction, lambda: &TransferField) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..grid.dims() {
        let l = lambda.agent(i);
        let stride = grid.stride(i);
        for x in 0..grid.len() {
            if grid.coord(x, i) + 1 == grid.shape()[i] {
                continue;
            }
            let d = r[x + stride] - r[x];
            worst = worst.max(if l[x] > 0.0 { d.abs() } else { -d });
        }
    }
    worst
}

/// Minimizes `f_x φ(r_x − t/f_x) + f_u φ(r_u + t/f_u)` over `t ≥ lower`.
///
/// The section is convex with derivative `φ'(r_u + t/f_u) − φ'(r_x − t/f_x)`,
/// increasing in `t`; we bracket its root and refine by bisection on the sign.
fn line_search(phi: Phi, rx: f64, ru: f64, fx: f64, fu: f64, lower: f64) -> f64 {
    if phi == Phi::Quadratic {
        let t = (rx - ru) / (1.0 / fx + 1.0 / fu);
        return t.max(lower);
    }
    let slope = |t: f64| phi.derivative(ru + t / fu) - phi.derivative(rx - t / fx);
    if slope(lower) >= 0.0 {
        return lower;
    }
    let s0 = slope(0.0);
    if s0 == 0.0 {
        return 0.0;
    }
    let (mut lo, mut hi);
    let mut step = (rx.abs() + ru.abs()).max(1e-300) * fx.min(fu);
    if s0 < 0.0 {
        lo = 0.0;
        hi = step;
        while slope(hi) < 0.0 {
            lo = hi;
            step *= 2.0;
            hi += step;
        }
    } else {
        hi = 0.0;
        lo = (-step).max(lower);
        while slope(lo) > 0.0 {
            hi = lo;
            step *= 2.0;
            lo = (hi - step).max(lower);
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if slope(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Irons `alpha` on `grid` and extracts the partition of its level cells.
pub fn iron(alpha: &GridFunction, grid: &TypeGrid, opts: &IronOptions) -> Result<IroningResult> {
    let d = descend(alpha, grid, opts)?;
    if !d.converged {
        return Err(Error::NotConverged {
            sweeps: d.sweeps,
            last_decrease: d.last_decrease,
        });
    }
    let kkt = kkt(grid, &d.residual, &d.lambda);
    let mut result = IroningResult {
        alpha_bar: d.residual,
        lambda: d.lambda,
        partition: Partition::singletons(grid, alpha)?,
        objective: d.objective,
        sweeps: d.sweeps,
        kkt,
    };
    result.partition = extract_partition(&result, grid, PARTITION_MEAN_TOL)?;
    Ok(result)
}

/// Relative tolerance used for the cell-mean validation inside [`iron`].
pub const PARTITION_MEAN_TOL: f64 = 1e-6;

pub(crate) fn kkt(grid: &TypeGrid, alpha_bar: &GridFunction, lambda: &TransferField) -> Kkt {
    let mut slack = 0.0f64;
    for i in 0..grid.dims() {
        let l = lambda.agent(i);
        for x in 0..grid.len() {
            if let Some(u) = grid.up(x, i) {
                slack = slack.max(l[x] * (alpha_bar[u] - alpha_bar[x]).abs());
            }
        }
    }
    let min_delta = grid::min_upper_delta(grid, alpha_bar);
    Kkt {
        min_upper_delta: if min_delta.is_finite() { min_delta } else { 0.0 },
        max_comp_slack: slack,
    }
}

/// Probability-weighted least-squares projection of `alpha` onto the cone of
/// non-decreasing grid functions.
///
/// The cone is the intersection of one monotone cone per agent; Dykstra's
/// alternating projections combine exact per-line projections (pool adjacent
/// violators) into the projection onto the intersection.
pub fn iron_rls(alpha: &GridFunction, grid: &TypeGrid, opts: &IronOptions) -> Result<GridFunction> {
    grid.check_shape(alpha)?;
    if let Some(index) = alpha.values().iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput { index });
    }
    let n = grid.dims();
    let mut x = alpha.clone();
    let mut corrections = vec![GridFunction::zeros(grid.shape()); n];
    let scale = 1.0 + alpha.max_abs();
    let mut vals = Vec::new();
    let mut wts = Vec::new();
    let mut fit = Vec::new();
    let mut change = f64::INFINITY;
    for _ in 0..opts.max_sweeps {
        let prev = x.clone();
        for (i, p) in corrections.iter_mut().enumerate() {
            for start in grid.line_starts(i) {
                vals.clear();
                wts.clear();
                for y in grid.line(start, i) {
                    vals.push(x[y] + p[y]);
                    wts.push(grid.prob(y));
                }
                fit.resize(vals.len(), 0.0);
                pava(&vals, &wts, &mut fit);
                for (k, y) in grid.line(start, i).enumerate() {
                    p[y] = vals[k] - fit[k];
                    x[y] = fit[k];
                }
            }
        }
        change = x.sup_distance(&prev);
        if n == 1 || (change <= 1e-15 * scale && grid::min_upper_delta(grid, &x) >= -1e-14 * scale) {
            return Ok(x);
        }
    }
    Err(Error::NotConverged {
        sweeps: opts.max_sweeps,
        last_decrease: change,
    })
}

/// Groups profiles into the level cells of an ironing solution.
///
/// Neighbours `x` and `(x_i⁺, x_{-i})` are joined when mass flows between them
/// or their ironed values agree; the components are then checked for
/// ultramodularity and for reproducing the ironed value as the conditional
/// mean of the input.
pub fn extract_partition(result: &IroningResult, grid: &TypeGrid, tol: f64) -> Result<Partition> {
    grid.check_shape(&result.alpha_bar)?;
    let abar = &result.alpha_bar;
    let lam_thr = 1e-9 * (1.0 + result.lambda.max_abs());
    let val_thr = 1e-7 * (1.0 + abar.max_abs());
    let mut uf = UnionFind::new(grid.len());
    for i in 0..grid.dims() {
        let l = result.lambda.agent(i);
        for x in 0..grid.len() {
            if let Some(u) = grid.up(x, i) {
                if l[x] > lam_thr || (abar[u] - abar[x]).abs() <= val_thr {
                    uf.union(x, u);
                }
            }
        }
    }
    let labels: Vec<usize> = (0..grid.len()).map(|x| uf.find(x)).collect();
    let alpha = result.reconstructed_alpha(grid);
    let partition = Partition::from_labels(grid, &labels, &alpha)?;
    if let Some(cell) = partition.is_ultramodular(grid) {
        return Err(Error::UltramodularityViolated { cell });
    }
    let scale = 1.0 + alpha.max_abs();
    for (c, cell) in partition.cells.iter().enumerate() {
        let ironed = expectation(grid, abar, Some(cell))?;
        let input = partition.means[c];
        let spread = cell.iter().map(|&x| (abar[x] - ironed).abs()).fold(0.0, f64::max);
        if (input - ironed).abs() > tol * scale || spread > tol * scale {
            return Err(Error::MeanMismatch { cell: c, input, ironed });
        }
    }
    Ok(partition)
}

pub(crate) struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Joins two classes, keeping the smaller root so labels stay canonical.
    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        self.parent[hi] = lo;
        true
    }
}

/// Outcome of [`verify_ironing`]; each check carries its worst deviation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IroningReport {
    pub majorizes: bool,
    pub monotone: bool,
    pub min_upper_delta: f64,
    pub global_mean: bool,
    pub global_mean_gap: f64,
    pub cell_means: bool,
    pub worst_cell_gap: f64,
    pub no_gap: bool,
    pub objective_gap: f64,
}

impl IroningReport {
    pub fn all_passed(&self) -> bool {
        self.majorizes && self.monotone && self.global_mean && self.cell_means && self.no_gap
    }
}

/// Independent checks of an ironing solution against its input.
///
/// Covers majorization of `α` by `ᾱ`, monotonicity, global and per-cell mean
/// preservation, and equality of `E[q*ᾱ − C(q*)]` and `E[q*α − C(q*)]`.
pub fn verify_ironing(
    alpha: &GridFunction,
    result: &IroningResult,
    grid: &TypeGrid,
    method: Method,
    cost: &CostModel,
    tol: f64,
) -> Result<IroningReport> {
    grid.check_shape(alpha)?;
    grid.check_shape(&result.alpha_bar)?;
    let abar = &result.alpha_bar;
    let scale = 1.0 + alpha.max_abs().max(abar.max_abs());
    let thr = tol * scale;
    let cert = majorize::majorizes(abar, alpha, grid, tol, method)?;
    let min_delta = grid::min_upper_delta(grid, abar);
    let global_gap = (expectation(grid, abar, None)? - expectation(grid, alpha, None)?).abs();
    let mut worst_cell = 0.0f64;
    for cell in result.partition.cells() {
        let a = expectation(grid, alpha, Some(cell))?;
        for &x in cell {
            worst_cell = worst_cell.max((abar[x] - a).abs());
        }
    }
    let q = optimal_q(abar, cost);
    let welfare = |v: &GridFunction| {
        grid::neumaier_sum((0..grid.len()).map(|x| grid.prob(x) * (q[x] * v[x] - cost.cost(q[x]))))
    };
    let objective_gap = (welfare(abar) - welfare(alpha)).abs();
    let q_scale = 1.0 + q.max_abs();
    Ok(IroningReport {
        majorizes: cert.verdict,
        monotone: min_delta >= -thr,
        min_upper_delta: if min_delta.is_finite() { min_delta } else { 0.0 },
        global_mean: global_gap <= thr,
        global_mean_gap: global_gap,
        cell_means: worst_cell <= thr,
        worst_cell_gap: worst_cell,
        no_gap: objective_gap <= thr * q_scale,
        objective_gap,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform(shape: &[usize]) -> TypeGrid {
        TypeGrid::uniform(shape).unwrap()
    }

    #[test]
    fn two_by_two() {
        let grid = uniform(&[2, 2]);
        let alpha = GridFunction::from_rows(&[[6.0, 0.0], [0.0, 6.0]]).unwrap();
        let res = iron(&alpha, &grid, &IronOptions::default()).unwrap();
        let d = res.alpha_bar.sup_distance(&GridFunction::from_rows(&[[2.0, 2.0], [2.0, 6.0]]).unwrap());
        assert!(d < 1e-9, "{d} after {} sweeps", res.sweeps);
        // printed multipliers are λ/f = 2 on both edges leaving the origin
        let scaled = res.lambda.density_scaled(&grid);
        assert!((scaled[0][0] - 2.0).abs() < 1e-8);
        assert!((scaled[1][0] - 2.0).abs() < 1e-8);
        assert_eq!(res.partition.cells(), &[vec![0, 1, 2], vec![3]]);
        assert!(res.reconstructed_alpha(&grid).sup_distance(&alpha) < 1e-12);
    }

    #[test]
    fn monotone_input_is_fixed() {
        let grid = uniform(&[3, 2]);
        let alpha = GridFunction::from_rows(&[[0.0, 1.0], [2.0, 3.0], [4.0, 5.0]]).unwrap();
        let res = iron(&alpha, &grid, &IronOptions::default()).unwrap();
        assert_eq!(res.alpha_bar, alpha);
        assert_eq!(res.lambda.max_abs(), 0.0);
        assert_eq!(res.partition.len(), 6);
        assert_eq!(iron_rls(&alpha, &grid, &IronOptions::default()).unwrap(), alpha);
    }

    #[test]
    fn quartic_line_search_matches_closed_form() {
        for &(rx, ru, fx, fu, lo) in &[(3.0, -1.0, 0.25, 0.5, -10.0), (-2.0, 5.0, 0.1, 0.3, -0.4), (1.0, 1.0, 0.2, 0.2, 0.0)] {
            let q = line_search(Phi::Quadratic, rx, ru, fx, fu, lo);
            let r = line_search(Phi::Quartic, rx, ru, fx, fu, lo);
            assert!((q - r).abs() < 1e-12 * (1.0 + q.abs()), "{q} vs {r}");
        }
    }

    #[test]
    fn rls_on_two_by_two() {
        let grid = uniform(&[2, 2]);
        let alpha = GridFunction::from_rows(&[[6.0, 0.0], [0.0, 6.0]]).unwrap();
        let g = iron_rls(&alpha, &grid, &IronOptions::default()).unwrap();
        assert!(g.sup_distance(&GridFunction::from_rows(&[[2.0, 2.0], [2.0, 6.0]]).unwrap()) < 1e-12);
    }

    #[test]
    fn cost_models() {
        let p = CostModel::Power { c: 1.0, p: 3.0 };
        assert!((p.marginal_inverse(4.0) - 2.0).abs() < 1e-15);
        assert!((p.marginal(2.0) - 4.0).abs() < 1e-15);
        let q = optimal_q(&GridFunction::from_rows(&[[-1.0, -3.0]]).unwrap(), &CostModel::default());
        assert_eq!(q.values(), &[0.0, 0.0]);
        assert!(CostModel::Power { c: 1.0, p: 1.0 }.validate().is_err());
    }

    #[test]
    fn strictly_increasing_gives_singletons() {
        let grid = uniform(&[3, 3]);
        let alpha = GridFunction::from_fn(&grid, |x| (grid.coord(x, 0) * 3 + grid.coord(x, 1) * 5) as f64);
        let res = iron(&alpha, &grid, &IronOptions::default()).unwrap();
        assert_eq!(res.partition.len(), 9);
    }

    #[test]
    fn level_set_view() {
        let grid = uniform(&[2, 2]);
        let alpha = GridFunction::from_rows(&[[6.0, 0.0], [0.0, 6.0]]).unwrap();
        let res = iron(&alpha, &grid, &IronOptions::default()).unwrap();
        assert_eq!(res.partition.level_sets(&res.alpha_bar, 1e-7), vec![vec![0, 1, 2], vec![3]]);
    }
}
