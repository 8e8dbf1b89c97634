//! Continuous type spaces on `[0,1]^N` through dyadic discretization.
//!
//! At level `n` each axis is cut into `2^n` cells. A function is replaced by
//! its conditional expectation on each cell, computed with tensor
//! Gauss-Legendre quadrature, and the resulting grid problem is ironed with
//! the discrete solver.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::{self, GridFunction, TypeGrid};
use crate::iron::{iron, IronOptions};

/// A real function on the unit cube.
pub type RealFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
/// A positive marginal density on `[0,1]`.
pub type Density = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Default cap on the total number of cells.
pub const DEFAULT_MAX_CELLS: usize = 1 << 20;
/// Default Gauss-Legendre nodes per axis per cell.
pub const DEFAULT_NODES: usize = 4;
/// Step of the central differences in [`divergence_residual`].
pub const FD_STEP: f64 = 1e-5;

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
fn gauss_legendre(nodes: usize) -> Option<(&'static [f64], &'static [f64])> {
    const X1: [f64; 1] = [0.0];
    const W1: [f64; 1] = [2.0];
    const X2: [f64; 2] = [-0.577_350_269_189_625_8, 0.577_350_269_189_625_8];
    const W2: [f64; 2] = [1.0, 1.0];
    const X3: [f64; 3] = [-0.774_596_669_241_483_4, 0.0, 0.774_596_669_241_483_4];
    const W3: [f64; 3] = [0.555_555_555_555_555_6, 0.888_888_888_888_888_9, 0.555_555_555_555_555_6];
    const X4: [f64; 4] = [
        -0.861_136_311_594_052_6,
        -0.339_981_043_584_856_3,
        0.339_981_043_584_856_3,
        0.861_136_311_594_052_6,
    ];
    const W4: [f64; 4] = [
        0.347_854_845_137_453_8,
        0.652_145_154_862_546_1,
        0.652_145_154_862_546_1,
        0.347_854_845_137_453_8,
    ];
    const X5: [f64; 5] = [
        -0.906_179_845_938_664,
        -0.538_469_310_105_683,
        0.0,
        0.538_469_310_105_683,
        0.906_179_845_938_664,
    ];
    const W5: [f64; 5] = [
        0.236_926_885_056_189_1,
        0.478_628_670_499_366_5,
        0.568_888_888_888_888_9,
        0.478_628_670_499_366_5,
        0.236_926_885_056_189_1,
    ];
    match nodes {
        1 => Some((&X1, &W1)),
        2 => Some((&X2, &W2)),
        3 => Some((&X3, &W3)),
        4 => Some((&X4, &W4)),
        5 => Some((&X5, &W5)),
        _ => None,
    }
}

/// A function on `[0,1]^N` with independent marginal densities.
#[derive(Clone)]
pub struct ContinuousProblem {
    pub dims: usize,
    pub alpha: RealFn,
    /// One marginal density per axis; `None` means uniform.
    pub marginals: Option<Vec<Density>>,
    pub level: u32,
    pub nodes: usize,
    pub max_cells: usize,
}

impl fmt::Debug for ContinuousProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ContinuousProblem")
            .field("dims", &self.dims)
            .field("uniform", &self.marginals.is_none())
            .field("level", &self.level)
            .field("nodes", &self.nodes)
            .field("max_cells", &self.max_cells)
            .finish()
    }
}

impl ContinuousProblem {
    /// Uniform types, default quadrature and cell cap.
    pub fn new(dims: usize, alpha: RealFn, level: u32) -> Result<Self> {
        if dims == 0 {
            return Err(Error::InvalidInput("at least one dimension is required".into()));
        }
        if level == 0 {
            return Err(Error::InvalidInput("dyadic level must be at least 1".into()));
        }
        Ok(Self {
            dims,
            alpha,
            marginals: None,
            level,
            nodes: DEFAULT_NODES,
            max_cells: DEFAULT_MAX_CELLS,
        })
    }

    pub fn with_marginals(mut self, marginals: Vec<Density>) -> Result<Self> {
        if marginals.len() != self.dims {
            return Err(Error::InvalidInput(format!("{} marginals for {} dimensions", marginals.len(), self.dims)));
        }
        self.marginals = Some(marginals);
        Ok(self)
    }

    pub fn with_level(&self, level: u32) -> Self {
        Self { level, ..self.clone() }
    }

    fn density(&self, i: usize, t: f64) -> f64 {
        self.marginals.as_ref().map_or(1.0, |m| m[i](t))
    }
}

/// Quadrature layout of one dyadic level: per axis and cell, the nodes and
/// density-weighted weights normalized to the cell mass.
struct Mesh {
    grid: TypeGrid,
    nodes: Vec<Vec<Vec<f64>>>,
    weights: Vec<Vec<Vec<f64>>>,
}

fn mesh(problem: &ContinuousProblem) -> Result<Mesh> {
    let n = problem.level;
    let level_error = Error::LevelTooLarge {
        level: n,
        cap: problem.max_cells,
    };
    if n >= 31 {
        return Err(level_error);
    }
    let m = 1usize << n;
    let total = (0..problem.dims).try_fold(1usize, |acc, _| acc.checked_mul(m));
    if total.is_none_or(|t| t > problem.max_cells) {
        return Err(level_error);
    }
    let (xs, ws) = gauss_legendre(problem.nodes)
        .ok_or_else(|| Error::InvalidInput(format!("{} quadrature nodes are not supported (1 to 5)", problem.nodes)))?;
    let h = 1.0 / m as f64;
    let mut axes = Vec::with_capacity(problem.dims);
    let mut nodes = Vec::with_capacity(problem.dims);
    let mut weights = Vec::with_capacity(problem.dims);
    for i in 0..problem.dims {
        let mut points = Vec::with_capacity(m);
        let mut masses = Vec::with_capacity(m);
        let mut axis_nodes = Vec::with_capacity(m);
        let mut axis_weights = Vec::with_capacity(m);
        for c in 0..m {
            let lo = c as f64 * h;
            let cell_nodes: Vec<f64> = xs.iter().map(|x| lo + 0.5 * h * (x + 1.0)).collect();
            let w: Vec<f64> = cell_nodes
                .iter()
                .zip(ws)
                .map(|(&t, &w)| 0.5 * h * w * problem.density(i, t))
                .collect();
            let mass: f64 = w.iter().sum();
            if !(mass.is_finite() && mass > 0.0) {
                return Err(Error::QuadratureFailure { cell: c });
            }
            points.push(lo + 0.5 * h);
            masses.push(mass);
            axis_weights.push(w.iter().map(|x| x / mass).collect());
            axis_nodes.push(cell_nodes);
        }
        let total: f64 = masses.iter().sum();
        axes.push((points, masses.iter().map(|x| x / total).collect()));
        nodes.push(axis_nodes);
        weights.push(axis_weights);
    }
    Ok(Mesh {
        grid: TypeGrid::new(axes)?,
        nodes,
        weights,
    })
}

fn average_on(mesh: &Mesh, f: &(dyn Fn(&[f64]) -> f64 + Send + Sync)) -> Result<GridFunction> {
    let grid = &mesh.grid;
    let dims = grid.dims();
    let q = mesh.nodes[0][0].len();
    let mut values = Vec::with_capacity(grid.len());
    let mut point = vec![0.0; dims];
    let mut digits = vec![0usize; dims];
    for cell in 0..grid.len() {
        let coords = grid.coords(cell);
        let mut acc = 0.0;
        digits.iter_mut().for_each(|d| *d = 0);
        loop {
            let mut w = 1.0;
            for i in 0..dims {
                point[i] = mesh.nodes[i][coords[i]][digits[i]];
                w *= mesh.weights[i][coords[i]][digits[i]];
            }
            acc += w * f(&point);
            // odometer over the tensor nodes
            let mut i = dims;
            loop {
                if i == 0 {
                    break;
                }
                i -= 1;
                digits[i] += 1;
                if digits[i] < q {
                    break;
                }
                digits[i] = 0;
            }
            if digits.iter().all(|&d| d == 0) {
                break;
            }
        }
        if !acc.is_finite() {
            return Err(Error::QuadratureFailure { cell });
        }
        values.push(acc);
    }
    GridFunction::new(grid.shape().to_vec(), values)
}

/// The dyadic grid at the problem's level and `α_n = E[α | cell]`.
pub fn dyadic_discretize(problem: &ContinuousProblem) -> Result<(TypeGrid, GridFunction)> {
    let mesh = mesh(problem)?;
    let alpha = average_on(&mesh, problem.alpha.as_ref())?;
    Ok((mesh.grid, alpha))
}

/// Cell averages of another function on the problem's dyadic grid.
pub fn discretize_fn(problem: &ContinuousProblem, f: &RealFn) -> Result<GridFunction> {
    let mesh = mesh(problem)?;
    average_on(&mesh, f.as_ref())
}

/// Maps each cell of a level-`fine` grid to its ancestor at level `coarse`.
fn ancestor(fine_grid: &TypeGrid, coarse_grid: &TypeGrid, cell: usize, shift: u32) -> usize {
    let coords: Vec<usize> = fine_grid.coords(cell).iter().map(|c| c >> shift).collect();
    coarse_grid.index(&coords)
}

/// Averages a fine-level function onto the cells of a coarser level.
pub fn coarsen(fine_grid: &TypeGrid, fine: &GridFunction, coarse_grid: &TypeGrid) -> Result<GridFunction> {
    fine_grid.check_shape(fine)?;
    let ratio = fine_grid.shape()[0] / coarse_grid.shape()[0].max(1);
    if fine_grid.dims() != coarse_grid.dims()
        || !ratio.is_power_of_two()
        || fine_grid
            .shape()
            .iter()
            .zip(coarse_grid.shape())
            .any(|(&f, &c)| f != c * ratio)
    {
        return Err(Error::GridMismatch);
    }
    let shift = ratio.trailing_zeros();
    let mut sums = vec![0.0; coarse_grid.len()];
    let mut mass = vec![0.0; coarse_grid.len()];
    for x in 0..fine_grid.len() {
        let a = ancestor(fine_grid, coarse_grid, x, shift);
        sums[a] += fine_grid.prob(x) * fine[x];
        mass[a] += fine_grid.prob(x);
    }
    GridFunction::new(
        coarse_grid.shape().to_vec(),
        sums.iter().zip(&mass).map(|(s, m)| s / m).collect(),
    )
}

/// Ironing of one dyadic level.
#[derive(Debug, Clone)]
pub struct LevelSolution {
    pub level: u32,
    pub grid: TypeGrid,
    pub alpha: GridFunction,
    pub alpha_bar: GridFunction,
    pub sweeps: usize,
}

/// Distances between the ironed functions of consecutive levels, measured on
/// the coarser level's cells.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceRow {
    pub coarse: u32,
    pub fine: u32,
    pub sup: f64,
    pub l1: f64,
}

#[derive(Debug, Clone)]
pub struct ConvergenceStudy {
    pub levels: Vec<LevelSolution>,
    pub rows: Vec<ConvergenceRow>,
    /// Sup distances never grow by more than 10% from one row to the next.
    /// A diagnostic only: convergence is guaranteed along a subsequence.
    pub decaying: bool,
}

/// Discretizes and irons `problem` at every listed level.
pub fn solve_level(problem: &ContinuousProblem, opts: &IronOptions) -> Result<LevelSolution> {
    let (grid, alpha) = dyadic_discretize(problem)?;
    let res = iron(&alpha, &grid, opts)?;
    Ok(LevelSolution {
        level: problem.level,
        grid,
        alpha,
        alpha_bar: res.alpha_bar,
        sweeps: res.sweeps,
    })
}

pub fn convergence_study(problem: &ContinuousProblem, levels: &[u32], opts: &IronOptions) -> Result<ConvergenceStudy> {
    if levels.is_empty() || levels.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidInput("levels must be non-empty and strictly ascending".into()));
    }
    let solutions = levels
        .iter()
        .map(|&n| solve_level(&problem.with_level(n), opts))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::with_capacity(levels.len().saturating_sub(1));
    for pair in solutions.windows(2) {
        let (c, f) = (&pair[0], &pair[1]);
        let averaged = coarsen(&f.grid, &f.alpha_bar, &c.grid)?;
        let diff = averaged.zip_with(&c.alpha_bar, |a, b| (a - b).abs())?;
        rows.push(ConvergenceRow {
            coarse: c.level,
            fine: f.level,
            sup: diff.max_abs(),
            l1: grid::expectation(&c.grid, &diff, None)?,
        });
    }
    let decaying = rows.windows(2).all(|w| w[1].sup <= 1.1 * w[0].sup);
    Ok(ConvergenceStudy {
        levels: solutions,
        rows,
        decaying,
    })
}

/// Deterministic sampling lattice for [`divergence_residual`].
#[derive(Clone)]
pub struct SampleSpec {
    /// Points per axis, placed at `(j + 1/2)/per_axis`.
    pub per_axis: usize,
    /// Samples for which this returns true are skipped (e.g. a kink band).
    pub exclude: Option<Arc<dyn Fn(&[f64]) -> bool + Send + Sync>>,
}

impl fmt::Debug for SampleSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SampleSpec")
            .field("per_axis", &self.per_axis)
            .field("exclude", &self.exclude.is_some())
            .finish()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceReport {
    /// Largest `|Σ_i ∂_i λ_i / f − (α − ᾱ)|` over the retained samples.
    pub max_residual: f64,
    pub worst_point: Option<Vec<f64>>,
    pub samples: usize,
    pub excluded: usize,
    pub min_lambda: f64,
    /// Largest `|λ_i|` on the faces `x_i = 0` and `x_i = 1`.
    pub max_boundary_lambda: f64,
    pub nonnegative: bool,
    pub boundary_ok: bool,
}

/// Checks `div λ = (α − ᾱ) f` pointwise with central differences.
pub fn divergence_residual(problem: &ContinuousProblem, alpha_bar: &RealFn, lambdas: &[RealFn], samples: &SampleSpec) -> Result<DivergenceReport> {
    let dims = problem.dims;
    if lambdas.len() != dims {
        return Err(Error::InvalidInput(format!("{} transfer functions for {} dimensions", lambdas.len(), dims)));
    }
    if samples.per_axis == 0 {
        return Err(Error::InvalidInput("at least one sample per axis is required".into()));
    }
    let k = samples.per_axis;
    let total = k.checked_pow(dims as u32).ok_or(Error::InvalidInput("sample lattice too large".into()))?;
    let mut report = DivergenceReport {
        max_residual: 0.0,
        worst_point: None,
        samples: 0,
        excluded: 0,
        min_lambda: f64::INFINITY,
        max_boundary_lambda: 0.0,
        nonnegative: true,
        boundary_ok: true,
    };
    let mut x = vec![0.0; dims];
    let mut probe = vec![0.0; dims];
    for s in 0..total {
        let mut rest = s;
        for i in (0..dims).rev() {
            x[i] = ((rest % k) as f64 + 0.5) / k as f64;
            rest /= k;
        }
        for (i, lam) in lambdas.iter().enumerate() {
            report.min_lambda = report.min_lambda.min(lam(&x));
            probe.copy_from_slice(&x);
            for face in [0.0, 1.0] {
                probe[i] = face;
                report.max_boundary_lambda = report.max_boundary_lambda.max(lam(&probe).abs());
            }
        }
        if samples.exclude.as_ref().is_some_and(|e| e(&x)) {
            report.excluded += 1;
            continue;
        }
        let mut div = 0.0;
        for (i, lam) in lambdas.iter().enumerate() {
            probe.copy_from_slice(&x);
            probe[i] = x[i] + FD_STEP;
            let up = lam(&probe);
            probe[i] = x[i] - FD_STEP;
            let down = lam(&probe);
            div += (up - down) / (2.0 * FD_STEP);
        }
        let density: f64 = (0..dims).map(|i| problem.density(i, x[i])).product();
        let r = (div / density - ((problem.alpha)(&x) - alpha_bar(&x))).abs();
        report.samples += 1;
        if !r.is_finite() {
            return Err(Error::NonFiniteInput { index: s });
        }
        if r > report.max_residual || report.worst_point.is_none() {
            report.max_residual = r.max(report.max_residual);
            report.worst_point = Some(x.clone());
        }
    }
    report.nonnegative = report.min_lambda >= -1e-12;
    report.boundary_ok = report.max_boundary_lambda <= 1e-12;
    Ok(report)
}

/// A polynomial `Σ c · Π x_i^{e_i}` on the unit cube.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Polynomial {
    pub terms: Vec<(f64, Vec<u32>)>,
}

impl Polynomial {
    pub fn dims(&self) -> usize {
        self.terms.iter().map(|(_, e)| e.len()).max().unwrap_or(0)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|(c, e)| c * e.iter().zip(x).map(|(&p, &t)| t.powi(p as i32)).product::<f64>())
            .sum()
    }

    pub fn into_fn(self) -> RealFn {
        Arc::new(move |x: &[f64]| self.eval(x))
    }
}

/// A named built-in function.
#[derive(Clone)]
pub struct NamedFunction {
    pub dims: usize,
    pub f: RealFn,
}

impl fmt::Debug for NamedFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NamedFunction").field("dims", &self.dims).finish()
    }
}

/// Names accepted by [`registry`].
pub const REGISTRY_NAMES: [&str; 3] = ["example3", "example4_v", "example4_mr"];

/// Built-in test functions on `[0,1]^2`, all depending on `s = x_1 + x_2`.
///
/// * `example3`: `1 − 3s/2 + s²`, ironed to `1/2` for `s ≤ 1`.
/// * `example4_v`: a buyer's valuation `3 − 4s − 4s²`.
/// * `example4_mr`: the summed marginal revenue `14 + 4s − 16s²` of two such buyers.
pub fn registry(name: &str) -> Option<NamedFunction> {
    let f: RealFn = match name {
        "example3" => Arc::new(|x: &[f64]| {
            let s = x[0] + x[1];
            1.0 - 1.5 * s + s * s
        }),
        "example4_v" => Arc::new(|x: &[f64]| {
            let s = x[0] + x[1];
            3.0 - 4.0 * s - 4.0 * s * s
        }),
        "example4_mr" => Arc::new(|x: &[f64]| {
            let s = x[0] + x[1];
            14.0 + 4.0 * s - 16.0 * s * s
        }),
        _ => return None,
    };
    Some(NamedFunction { dims: 2, f })
}

/// Continuous marginal revenue `v_i − ((1 − F_i)/f_i) ∂_i v_i` under the
/// problem's marginals, with `∂_i v_i` by central differences.
pub fn continuous_marginal_revenue(problem: &ContinuousProblem, v: RealFn, i: usize) -> RealFn {
    let marginal = problem.marginals.as_ref().map(|m| m[i].clone());
    Arc::new(move |x: &[f64]| {
        let mut p = x.to_vec();
        let (lo, hi) = ((x[i] - FD_STEP).max(0.0), (x[i] + FD_STEP).min(1.0));
        p[i] = hi;
        let up = v(&p);
        p[i] = lo;
        let down = v(&p);
        let slope = (up - down) / (hi - lo);
        let hazard = match &marginal {
            None => 1.0 - x[i],
            Some(f) => {
                // survival mass above x_i by 5-node quadrature on 16 panels
                let (xs, ws) = gauss_legendre(5).expect("five nodes are tabulated");
                let width = (1.0 - x[i]) / 16.0;
                let mut tail = 0.0;
                for panel in 0..16 {
                    let a = x[i] + panel as f64 * width;
                    for (t, w) in xs.iter().zip(ws) {
                        tail += 0.5 * width * w * f(a + 0.5 * width * (t + 1.0));
                    }
                }
                tail / f(x[i])
            }
        };
        v(x) - hazard * slope
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic() -> RealFn {
        registry("example3").unwrap().f
    }

    #[test]
    fn level_one_cell_means() {
        let p = ContinuousProblem::new(2, quadratic(), 1).unwrap();
        let (grid, a) = dyadic_discretize(&p).unwrap();
        assert_eq!(grid.shape(), &[2, 2]);
        // E[s] and E[s²] on a cell [a,a+½]×[b,b+½] with c = a+b+½ the mean of s
        let exact = |c: f64| 1.0 - 1.5 * c + c * c + 2.0 * (0.5f64.powi(2) / 12.0);
        for (x, want) in [(0usize, exact(0.5)), (1, exact(1.0)), (2, exact(1.0)), (3, exact(1.5))] {
            assert!((a[x] - want).abs() < 1e-14, "{x}: {} vs {want}", a[x]);
        }
    }

    #[test]
    fn constant_and_martingale() {
        let p = ContinuousProblem::new(2, Arc::new(|_: &[f64]| 2.5), 3).unwrap();
        let (_, a) = dyadic_discretize(&p).unwrap();
        assert!(a.values().iter().all(|&v| (v - 2.5).abs() < 1e-14));

        let p = ContinuousProblem::new(2, quadratic(), 2).unwrap();
        let (coarse, a2) = dyadic_discretize(&p).unwrap();
        let (fine, a3) = dyadic_discretize(&p.with_level(3)).unwrap();
        assert!(coarsen(&fine, &a3, &coarse).unwrap().sup_distance(&a2) < 1e-12);
    }

    #[test]
    fn level_cap() {
        let p = ContinuousProblem::new(3, quadratic(), 7).unwrap();
        assert!(matches!(dyadic_discretize(&p), Err(Error::LevelTooLarge { level: 7, .. })));
    }

    #[test]
    fn weighted_marginals_give_cell_masses() {
        let p = ContinuousProblem::new(1, Arc::new(|x: &[f64]| x[0]), 1)
            .unwrap()
            .with_marginals(vec![Arc::new(|t: f64| 2.0 * t)])
            .unwrap();
        let (grid, a) = dyadic_discretize(&p).unwrap();
        assert!((grid.axis(0).probs()[0] - 0.25).abs() < 1e-14);
        // E[x | x < ½] under density 2x is 1/3
        assert!((a[0] - 1.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn zero_transfers_leave_zero_residual() {
        let p = ContinuousProblem::new(2, quadratic(), 1).unwrap();
        let zero: RealFn = Arc::new(|_: &[f64]| 0.0);
        let rep = divergence_residual(
            &p,
            &quadratic(),
            &[zero.clone(), zero],
            &SampleSpec {
                per_axis: 10,
                exclude: None,
            },
        )
        .unwrap();
        assert_eq!(rep.max_residual, 0.0);
        assert!(rep.nonnegative && rep.boundary_ok);
    }

    #[test]
    fn polynomial_eval() {
        let p = Polynomial {
            terms: vec![(1.0, vec![]), (2.0, vec![1, 0]), (-1.0, vec![1, 2])],
        };
        assert_eq!(p.dims(), 2);
        assert_eq!(p.eval(&[0.5, 2.0]), 1.0 + 1.0 - 2.0);
    }
}
