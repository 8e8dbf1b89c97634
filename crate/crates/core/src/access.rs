//! Ironing with discriminatory access rights.
//!
//! Each agent `i` carries its own virtual value `α_i`. Instead of ironing
//! `Σ_i α_i` jointly, every `α_i` is ironed along its own coordinate,
//! `g_i = α_i − Δ̲_i λ_i / f`, minimizing `E[(Σ_i max(0, g_i))²]`. Agents
//! whose ironed value is negative are screened out; zero values receive
//! fractional access that keeps `q·η_i` monotone in the agent's own type.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{self, GridFunction, TypeGrid};
use crate::iron::{cell_is_ultramodular, iron, CostModel, IronOptions, Partition, TransferField, UnionFind};

/// Coordinate-wise ironing outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct AccessIroning {
    pub alphas_tilde: Vec<GridFunction>,
    pub lambda: TransferField,
    pub objective: f64,
    pub sweeps: usize,
    /// Profiles `(agent, index)` with `α̃_i < 0`. Any other negative value
    /// there gives the same mechanism, so these entries are not unique.
    pub non_unique: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AccessResult {
    pub alphas_tilde: Vec<GridFunction>,
    pub lambda: TransferField,
    pub q_star: GridFunction,
    pub eta: Vec<GridFunction>,
    pub partition: Partition,
    pub objective: f64,
    pub sweeps: usize,
    pub non_unique: Vec<(usize, usize)>,
    /// Feasible `q·η_i` ranges for zero entries not pinned by a cell-mate.
    pub free_levels: Vec<FreeLevel>,
}

/// A zero entry of `α̃_i` whose level `q*·η_i` was chosen from an interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FreeLevel {
    pub agent: usize,
    pub index: usize,
    pub lo: f64,
    pub hi: f64,
    pub chosen: f64,
}

/// Minimizes `E[(Σ_i max(0, α_i − Δ̲_i λ_i / f))²]` over `λ ≥ 0`.
///
/// Cyclic coordinate descent; each one-dimensional section is a convex
/// piecewise quadratic with at most two kinks and is minimized exactly.
/// Once single-edge moves stop, moves along whole line segments are tried,
/// which is enough to leave any kink that is not optimal: the directional
/// derivative splits over agents and profiles, so a descent direction can be
/// reduced to mass moving between two profiles on one line.
pub fn iron_access(alphas: &[GridFunction], grid: &TypeGrid, opts: &IronOptions) -> Result<AccessIroning> {
    if alphas.len() != grid.dims() {
        return Err(Error::InvalidInput(format!(
            "{} virtual values for {} agents",
            alphas.len(),
            grid.dims()
        )));
    }
    let mut scale = 1.0f64;
    for a in alphas {
        grid.check_shape(a)?;
        if let Some(index) = a.values().iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput { index });
        }
        scale = scale.max(1.0 + a.max_abs());
    }
    let f = grid.probs();
    let n = grid.dims();
    let mut g: Vec<GridFunction> = alphas.to_vec();
    let mut lambda = TransferField::zeros(grid);
    let pos_sum = |g: &[GridFunction], x: usize, skip: usize| -> f64 {
        (0..n).filter(|&j| j != skip).map(|j| g[j][x].max(0.0)).sum()
    };
    let objective = |g: &[GridFunction]| {
        grid::neumaier_sum((0..grid.len()).map(|x| {
            let s = pos_sum(g, x, usize::MAX);
            f[x] * s * s
        }))
    };
    let mut obj = objective(&g);
    let mut sweeps = 0;
    let mut last_decrease = f64::INFINITY;
    let floor = 1e-13 * scale;
    loop {
        if sweeps == opts.max_sweeps {
            return Err(Error::NotConverged {
                sweeps,
                last_decrease,
            });
        }
        sweeps += 1;
        let mut max_update = 0.0f64;
        for i in 0..n {
            let stride = grid.stride(i);
            for x in 0..grid.len() {
                if grid.coord(x, i) + 1 == grid.shape()[i] {
                    continue;
                }
                let u = x + stride;
                let section = Section {
                    sx: pos_sum(&g, x, i),
                    su: pos_sum(&g, u, i),
                    gx: g[i][x],
                    gu: g[i][u],
                    fx: f[x],
                    fu: f[u],
                };
                let l = lambda.agent_mut(i);
                let t = section.argmin(-l[x]);
                if t != 0.0 {
                    l[x] += t;
                    g[i][x] -= t / f[x];
                    g[i][u] += t / f[u];
                    max_update = max_update.max(t.abs() / f[x].min(f[u]));
                }
            }
        }
        let next = objective(&g);
        last_decrease = obj - next;
        obj = next;
        // The objective is flat in directions that only move negative
        // entries, so convergence is judged on the iterates themselves.
        if max_update < floor || (last_decrease < opts.tol * (1.0 + obj) && max_update < 1e-12 * scale) {
            // Single edges can stall at a kink where moving mass through
            // several profiles at once still descends.
            if segment_pass(grid, &mut g, &mut lambda, 1e-12 * scale) == 0 {
                break;
            }
            obj = objective(&g);
        }
    }
    let non_unique = (0..n)
        .flat_map(|i| (0..grid.len()).map(move |x| (i, x)))
        .filter(|&(i, x)| g[i][x] < -1e-9 * scale)
        .collect();
    Ok(AccessIroning {
        alphas_tilde: g,
        lambda,
        objective: obj,
        sweeps,
        non_unique,
    })
}

/// Moves mass between the ends of every line segment spanning two or more
/// edges, each by an exact line search. Returns the number of moves larger
/// than `thr` in value units.
fn segment_pass(grid: &TypeGrid, g: &mut [GridFunction], lambda: &mut TransferField, thr: f64) -> usize {
    let n = grid.dims();
    let mut moved = 0;
    for i in 0..n {
        for start in grid.line_starts(i) {
            let line: Vec<usize> = grid.line(start, i).collect();
            for a in 0..line.len() {
                for b in a + 2..line.len() {
                    let (x, u) = (line[a], line[b]);
                    let (fx, fu) = (grid.prob(x), grid.prob(u));
                    let pos = |y: usize| (0..n).filter(|&j| j != i).map(|j| g[j][y].max(0.0)).sum();
                    let section = Section {
                        sx: pos(x),
                        su: pos(u),
                        gx: g[i][x],
                        gu: g[i][u],
                        fx,
                        fu,
                    };
                    let l = lambda.agent_mut(i);
                    let floor = line[a..b].iter().map(|&y| l[y]).fold(f64::INFINITY, f64::min);
                    let t = section.argmin(-floor);
                    if t.abs() / fx.min(fu) <= thr {
                        continue;
                    }
                    for &y in &line[a..b] {
                        l[y] = (l[y] + t).max(0.0);
                    }
                    g[i][x] -= t / fx;
                    g[i][u] += t / fu;
                    moved += 1;
                }
            }
        }
    }
    moved
}

/// `h(t) = f_x ψ(s_x, g_x − t/f_x) + f_u ψ(s_u, g_u + t/f_u)` with `ψ(s, z) = (s + max(z, 0))²`.
struct Section {
    sx: f64,
    su: f64,
    gx: f64,
    gu: f64,
    fx: f64,
    fu: f64,
}

impl Section {
    #[cfg(test)]
    fn value(&self, t: f64) -> f64 {
        let a = self.sx + (self.gx - t / self.fx).max(0.0);
        let b = self.su + (self.gu + t / self.fu).max(0.0);
        self.fx * a * a + self.fu * b * b
    }

    /// Exact minimizer over `t ≥ lower`.
    ///
    /// The kinks sit at `t₁ = f_x g_x` (the first hinge closes) and
    /// `t₂ = −f_u g_u` (the second opens). Between kinks `h'` is affine, so
    /// walking the pieces left to right finds where `h'` first becomes
    /// non-negative. On the flat piece (both hinges closed) the point
    /// closest to `t = 0` is kept.
    fn argmin(&self, lower: f64) -> f64 {
        let t1 = self.fx * self.gx;
        let t2 = -self.fu * self.gu;
        let mut knots = vec![lower];
        for k in [t1, t2] {
            if k > lower {
                knots.push(k);
            }
        }
        knots.sort_by(f64::total_cmp);
        for k in 0..knots.len() {
            let lo = knots[k];
            let hi = knots.get(k + 1).copied().unwrap_or(f64::INFINITY);
            if hi <= lo {
                continue;
            }
            let mid = if hi.is_finite() { 0.5 * (lo + hi) } else { lo + 1.0 + lo.abs() };
            let x_open = self.gx - mid / self.fx > 0.0;
            let u_open = self.gu + mid / self.fu > 0.0;
            // h'(t) = −2(s_x + g_x − t/f_x)[x open] + 2(s_u + g_u + t/f_u)[u open]
            let (mut c0, mut c1) = (0.0, 0.0);
            if x_open {
                c0 -= 2.0 * (self.sx + self.gx);
                c1 += 2.0 / self.fx;
            }
            if u_open {
                c0 += 2.0 * (self.su + self.gu);
                c1 += 2.0 / self.fu;
            }
            if c1 == 0.0 {
                return 0.0f64.clamp(lo, hi);
            }
            if c0 + c1 * lo >= 0.0 {
                return lo;
            }
            let root = -c0 / c1;
            if root < hi {
                return root;
            }
        }
        unreachable!("the last piece has a positive slope")
    }
}

/// Cells of the access solution: per-agent runs of transfer-carrying edges,
/// overlaid across agents, then completed to ultramodular sets by merging
/// whole cells that cut into an order interval.
pub fn access_partition(lambda: &TransferField, grid: &TypeGrid, tol: f64) -> Result<Partition> {
    let thr = 1e-9 * (1.0 + lambda.max_abs());
    let mut uf = UnionFind::new(grid.len());
    for i in 0..grid.dims() {
        let l = lambda.agent(i);
        for x in 0..grid.len() {
            if let Some(u) = grid.up(x, i) {
                if l[x] > thr {
                    uf.union(x, u);
                }
            }
        }
    }
    let bound = grid.len();
    let mut rounds = 0;
    loop {
        let labels: Vec<usize> = (0..grid.len()).map(|x| uf.find(x)).collect();
        let mut merged = false;
        for x in 0..grid.len() {
            for y in 0..grid.len() {
                if x == y || labels[x] != labels[y] || !grid.leq(x, y) {
                    continue;
                }
                for i in 0..grid.dims() {
                    if grid.coord(x, i) < grid.coord(y, i) {
                        merged |= uf.union(x, x + grid.stride(i));
                    }
                }
            }
        }
        if !merged {
            break;
        }
        rounds += 1;
        if rounds > bound {
            return Err(Error::ClosureDiverged { bound });
        }
    }
    let labels: Vec<usize> = (0..grid.len()).map(|x| uf.find(x)).collect();
    let div = lambda.divergence(grid);
    let partition = Partition::from_labels(grid, &labels, &div)?;
    let cell_of: Vec<usize> = (0..grid.len()).map(|x| partition.cell_of(x)).collect();
    for (c, cell) in partition.cells().iter().enumerate() {
        if !cell_is_ultramodular(grid, cell, &cell_of, c) {
            return Err(Error::UltramodularityViolated { cell: c });
        }
        // net mass leaving the cell must vanish
        let net: f64 = cell.iter().map(|&x| grid.prob(x) * div[x]).sum();
        if net.abs() > tol * (1.0 + lambda.max_abs()) {
            return Err(Error::MeanMismatch {
                cell: c,
                input: net,
                ironed: 0.0,
            });
        }
    }
    Ok(partition)
}

/// Optimal decision with access rights: `C'⁻¹(Σ_i max(0, α̃_i))`.
pub fn access_q(alphas_tilde: &[GridFunction], grid: &TypeGrid, cost: &CostModel) -> GridFunction {
    GridFunction::from_fn(grid, |x| {
        cost.marginal_inverse(alphas_tilde.iter().map(|a| a[x].max(0.0)).sum())
    })
}

/// Access probabilities: 1 where `α̃_i > 0`, 0 where `α̃_i < 0`, and on zero
/// entries the level `q*·η_i` is copied from a mate with a nonzero `α̃_i` or,
/// failing that, set to the smallest value keeping `q*·η_i` non-decreasing
/// along the line. Mates are the profiles joined to `x` along its line by
/// edges that carry `λ_i`; the overlaid partition can hold several such
/// runs of one agent with different levels.
pub fn assign_access(
    alphas_tilde: &[GridFunction],
    q_star: &GridFunction,
    lambda: &TransferField,
    grid: &TypeGrid,
    tol: f64,
) -> Result<(Vec<GridFunction>, Vec<FreeLevel>)> {
    let scale = 1.0 + q_star.max_abs() + alphas_tilde.iter().map(GridFunction::max_abs).fold(0.0, f64::max);
    let thr = tol * scale;
    let mut etas = Vec::with_capacity(grid.dims());
    let mut free = Vec::new();
    for (i, at) in alphas_tilde.iter().enumerate() {
        let mut eta = GridFunction::zeros(grid.shape());
        let sign = |x: usize| {
            if at[x] > thr {
                1
            } else if at[x] < -thr {
                -1
            } else {
                0
            }
        };
        let lam = lambda.agent(i);
        let lam_thr = 1e-9 * (1.0 + lambda.max_abs());
        for start in grid.line_starts(i) {
            let line: Vec<usize> = grid.line(start, i).collect();
            let mut run = vec![0usize; line.len()];
            for k in 1..line.len() {
                run[k] = if lam[line[k - 1]] > lam_thr { run[k - 1] } else { k };
            }
            let mut level = vec![0.0; line.len()];
            for (k, &x) in line.iter().enumerate() {
                let fixed = |y: usize| if sign(y) > 0 { q_star[y] } else { 0.0 };
                let lvl = match sign(x) {
                    1 => {
                        eta[x] = 1.0;
                        q_star[x]
                    }
                    -1 => 0.0,
                    _ => {
                        let mates: Vec<usize> = (0..line.len())
                            .filter(|&j| j != k && run[j] == run[k] && sign(line[j]) != 0)
                            .collect();
                        let below = level[..k].iter().copied().fold(0.0, f64::max);
                        let above = line[k + 1..]
                            .iter()
                            .filter(|&&y| sign(y) != 0)
                            .map(|&y| fixed(y))
                            .fold(f64::INFINITY, f64::min);
                        let fits = |t: f64| t <= q_star[x] + thr && t <= above + thr && t >= below - thr;
                        let target = match mates.first() {
                            Some(_) => mates.iter().map(|&j| fixed(line[j])).find(|&t| fits(t)).unwrap_or(f64::NAN),
                            None => {
                                free.push(FreeLevel {
                                    agent: i,
                                    index: x,
                                    lo: below,
                                    hi: above.min(q_star[x]),
                                    chosen: below,
                                });
                                below
                            }
                        };
                        if !fits(target) {
                            return Err(Error::InfeasibleEta {
                                agent: i,
                                index: x,
                                lo: below,
                                hi: above.min(q_star[x]),
                            });
                        }
                        eta[x] = if q_star[x] > thr { (target / q_star[x]).clamp(0.0, 1.0) } else { 0.0 };
                        target
                    }
                };
                level[k] = lvl;
            }
        }
        etas.push(eta);
    }
    Ok((etas, free))
}

/// Principal's payoff `E[q Σ_i η_i α_i − C(q)]`.
pub fn access_objective(alphas: &[GridFunction], q: &GridFunction, eta: &[GridFunction], grid: &TypeGrid, cost: &CostModel) -> f64 {
    grid::neumaier_sum((0..grid.len()).map(|x| {
        let v: f64 = alphas.iter().zip(eta).map(|(a, e)| e[x] * a[x]).sum();
        grid.prob(x) * (q[x] * v - cost.cost(q[x]))
    }))
}

/// Full pipeline: coordinate-wise ironing, partition, decision and access rights.
pub fn solve_access(alphas: &[GridFunction], grid: &TypeGrid, cost: &CostModel, opts: &IronOptions) -> Result<AccessResult> {
    cost.validate()?;
    let ironing = iron_access(alphas, grid, opts)?;
    let partition = access_partition(&ironing.lambda, grid, 1e-6)?;
    let q_star = access_q(&ironing.alphas_tilde, grid, cost);
    let (eta, free_levels) = assign_access(&ironing.alphas_tilde, &q_star, &ironing.lambda, grid, 1e-9)?;
    let objective = access_objective(&ironing.alphas_tilde, &q_star, &eta, grid, cost);
    Ok(AccessResult {
        alphas_tilde: ironing.alphas_tilde,
        lambda: ironing.lambda,
        q_star,
        eta,
        partition,
        objective,
        sweeps: ironing.sweeps,
        non_unique: ironing.non_unique,
        free_levels,
    })
}

/// Solution of the joint problem without access rights on `Σ_i α_i`, for comparison.
pub fn no_access_baseline(alphas: &[GridFunction], grid: &TypeGrid, opts: &IronOptions) -> Result<GridFunction> {
    let mut total = GridFunction::zeros(grid.shape());
    for a in alphas {
        grid.check_shape(a)?;
        for x in 0..grid.len() {
            total[x] += a[x];
        }
    }
    Ok(iron(&total, grid, opts)?.alpha_bar)
}
