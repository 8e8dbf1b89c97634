//! Multivariate stochastic dominance over lower sets.
//!
//! Distributions live on a shared grid in `[0,1]^N`; integrals over lower sets
//! become sums weighted by the grid's cell masses. Second-order dominance is
//! majorization applied to survival complements.

use std::ops::ControlFlow;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{self, walk_lower_sets, GridFunction, LowerSet, TypeGrid};
use crate::lp::{Cmp, LinearSystem, LpOutcome, Sense};
use crate::majorize::{MajorizationCertificate, Method};

/// Tolerance on the total mass of a distribution.
pub const MASS_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct JointDistribution {
    grid: TypeGrid,
    pmf: GridFunction,
}

impl JointDistribution {
    pub fn new(grid: TypeGrid, pmf: GridFunction) -> Result<Self> {
        grid.check_shape(&pmf)?;
        if grid
            .axes()
            .iter()
            .any(|a| a.points().iter().any(|p| !(0.0..=1.0).contains(p)))
        {
            return Err(Error::InvalidInput("outcomes must lie in [0,1]".into()));
        }
        if let Some(index) = pmf.values().iter().position(|&p| !(p >= 0.0)) {
            return Err(Error::InvalidInput(format!("probability at index {index} is negative or NaN")));
        }
        let total = grid::neumaier_sum(pmf.values().iter().copied());
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::InvalidInput(format!("probabilities sum to {total}")));
        }
        Ok(Self { grid, pmf })
    }

    /// Evenly spaced outcomes `k/(n−1)` on each axis with equal cell masses.
    pub fn on_lattice(shape: &[usize], pmf: Vec<f64>) -> Result<Self> {
        let axes = shape
            .iter()
            .map(|&n| {
                if n < 2 {
                    return Err(Error::InvalidInput("each axis needs at least two outcomes".into()));
                }
                let points = (0..n).map(|k| k as f64 / (n - 1) as f64).collect();
                Ok((points, vec![1.0 / n as f64; n]))
            })
            .collect::<Result<Vec<_>>>()?;
        let grid = TypeGrid::new(axes)?;
        let pmf = GridFunction::new(shape.to_vec(), pmf)?;
        Self::new(grid, pmf)
    }

    pub fn grid(&self) -> &TypeGrid {
        &self.grid
    }

    pub fn pmf(&self) -> &GridFunction {
        &self.pmf
    }

    pub fn expect(&self, u: impl Fn(&[f64]) -> f64) -> f64 {
        let mut point = vec![0.0; self.grid.dims()];
        grid::neumaier_sum((0..self.grid.len()).map(|x| {
            for (i, c) in self.grid.coords(x).into_iter().enumerate() {
                point[i] = self.grid.axis(i).points()[c];
            }
            self.pmf[x] * u(&point)
        }))
    }
}

/// `F̄(x) = 1 − P(z > x in every coordinate)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalComplement {
    pub values: GridFunction,
}

pub fn survival_complement(dist: &JointDistribution) -> SurvivalComplement {
    let grid = &dist.grid;
    // Strict upper-set masses by suffix sums along each axis after shifting by one.
    let mut upper = dist.pmf.values().to_vec();
    for i in 0..grid.dims() {
        for start in grid.line_starts(i) {
            let line: Vec<usize> = grid.line(start, i).collect();
            let mut acc = 0.0;
            for &x in line.iter().rev() {
                let here = upper[x];
                upper[x] = acc;
                acc += here;
            }
        }
    }
    let values = GridFunction::new(grid.shape().to_vec(), upper.iter().map(|u| 1.0 - u).collect())
        .expect("shape matches the grid");
    SurvivalComplement { values }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Order {
    First,
    Second,
}

/// Tests whether `g` dominates `f` in the given order.
///
/// First order: `P_g(L) ≤ P_f(L)` on every lower set. Second order:
/// `Σ_L w Ḡ ≤ Σ_L w F̄` on every lower set, with equality on the whole grid,
/// where `w` are the grid's cell masses.
pub fn dominates(g: &JointDistribution, f: &JointDistribution, order: Order, tol: f64) -> Result<MajorizationCertificate> {
    if g.grid != f.grid {
        return Err(Error::GridMismatch);
    }
    let grid = &g.grid;
    let (diff, thr): (Vec<f64>, f64) = match order {
        Order::First => ((0..grid.len()).map(|x| f.pmf[x] - g.pmf[x]).collect(), tol),
        Order::Second => {
            let fb = survival_complement(f).values;
            let gb = survival_complement(g).values;
            let diff: Vec<f64> = (0..grid.len()).map(|x| grid.prob(x) * (fb[x] - gb[x])).collect();
            let thr = tol * (1.0 + fb.max_abs().max(gb.max_abs()));
            let total = grid::neumaier_sum(diff.iter().copied());
            if total.abs() > thr {
                return Ok(MajorizationCertificate {
                    verdict: false,
                    witness: Some(LowerSet::from_members(grid, vec![true; grid.len()])?),
                    method: Method::Oracle,
                    residual: total.abs(),
                });
            }
            (diff, thr)
        }
    };
    let mut worst = 0.0f64;
    let mut witness = None;
    walk_lower_sets(grid, grid::DEFAULT_LOWER_SET_CAP, &[&diff], |members, sums| {
        if sums[0] < worst {
            worst = sums[0];
            witness = Some(members.to_vec());
        }
        ControlFlow::Continue(())
    })?;
    let verdict = worst >= -thr;
    Ok(MajorizationCertificate {
        verdict,
        witness: match (verdict, witness) {
            (false, Some(m)) => Some(LowerSet::from_members(grid, m)?),
            _ => None,
        },
        method: Method::Oracle,
        residual: -worst,
    })
}

/// Expected-utility gaps for sampled Cobb-Douglas utilities.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BatteryReport {
    pub note: &'static str,
    pub exponents: Vec<Vec<f64>>,
    /// `E_g[u] − E_f[u]` per sampled utility.
    pub gaps: Vec<f64>,
    pub min_gap: f64,
    pub second_order_dominance: bool,
    /// True when dominance holds yet some gap is below `−tol`.
    pub fault: bool,
}

const BATTERY_NOTE: &str = "falsification harness: sampled Cobb-Douglas utilities u(x) = prod x_i^b_i with b_i in [0,1]; passing does not prove dominance";

/// Samples `count` Cobb-Douglas utilities with a seeded generator and
/// compares expected utility under `g` and `f`.
pub fn utility_battery(g: &JointDistribution, f: &JointDistribution, count: usize, seed: u64, tol: f64) -> Result<BatteryReport> {
    if count == 0 {
        return Err(Error::InvalidInput("the battery needs at least one utility".into()));
    }
    let dominance = dominates(g, f, Order::Second, tol)?.verdict;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = g.grid.dims();
    let mut exponents = Vec::with_capacity(count);
    let mut gaps = Vec::with_capacity(count);
    for _ in 0..count {
        let beta: Vec<f64> = (0..dims).map(|_| rng.gen_range(0.0..=1.0)).collect();
        let u = |x: &[f64]| x.iter().zip(&beta).map(|(t, b)| t.powf(*b)).product::<f64>();
        gaps.push(g.expect(u) - f.expect(u));
        exponents.push(beta);
    }
    let min_gap = gaps.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(BatteryReport {
        note: BATTERY_NOTE,
        exponents,
        gaps,
        min_gap,
        second_order_dominance: dominance,
        fault: dominance && min_gap < -tol,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum Factorization {
    /// Doubly stochastic `T` with `F = T G`, row-major.
    Feasible(Vec<Vec<f64>>),
    /// No such `T`. The witness lists the indices of the `k` smallest values
    /// of `F` whose sum falls below the `k` smallest of `G`, or every index
    /// when the totals differ.
    Infeasible { witness: Option<Vec<usize>>, shortfall: f64 },
}

/// Sorted prefix-sum test of `G ≻ F`: every sum of the `k` smallest values
/// of `F` is at least that of `G`, with equal totals.
pub fn univariate_majorizes(g_vals: &[f64], f_vals: &[f64], tol: f64) -> (bool, Option<Vec<usize>>, f64) {
    let mut fi: Vec<usize> = (0..f_vals.len()).collect();
    fi.sort_by(|&a, &b| f_vals[a].total_cmp(&f_vals[b]));
    let mut gs = g_vals.to_vec();
    gs.sort_by(f64::total_cmp);
    let scale = 1.0 + f_vals.iter().chain(g_vals).fold(0.0f64, |m, v| m.max(v.abs()));
    let thr = tol * scale * f_vals.len().max(1) as f64;
    let (mut sf, mut sg) = (0.0, 0.0);
    let mut worst = (0.0, None);
    for k in 0..fi.len() {
        sf += f_vals[fi[k]];
        sg += gs[k];
        let short = sg - sf;
        if k + 1 == fi.len() {
            if (sf - sg).abs() > thr && (sf - sg).abs() > worst.0 {
                worst = ((sf - sg).abs(), Some(fi.clone()));
            }
        } else if short > thr && short > worst.0 {
            worst = (short, Some(fi[..=k].to_vec()));
        }
    }
    (worst.1.is_none(), worst.1, worst.0)
}

/// Finds a doubly stochastic `T` with `F = T G` by linear feasibility.
pub fn ds_factorization(f_vals: &[f64], g_vals: &[f64], tol: f64) -> Result<Factorization> {
    let n = f_vals.len();
    if n == 0 || g_vals.len() != n {
        return Err(Error::InvalidInput("F and G need the same positive length".into()));
    }
    if let Some(index) = f_vals.iter().chain(g_vals).position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput { index });
    }
    let var = |i: usize, j: usize| i * n + j;
    let mut sys = LinearSystem::new(vec![(0.0, f64::INFINITY); n * n]);
    for i in 0..n {
        sys.add((0..n).map(|j| (var(i, j), 1.0)).collect(), Cmp::Eq, 1.0);
        sys.add((0..n).map(|j| (var(j, i), 1.0)).collect(), Cmp::Eq, 1.0);
        sys.add((0..n).map(|j| (var(i, j), g_vals[j])).collect(), Cmp::Eq, f_vals[i]);
    }
    match sys.solve(Sense::Minimize, &[])? {
        LpOutcome::Optimal { x, .. } => {
            let t: Vec<Vec<f64>> = (0..n).map(|i| x[i * n..(i + 1) * n].to_vec()).collect();
            let scale = 1.0 + g_vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            for i in 0..n {
                let row: f64 = t[i].iter().sum();
                let col: f64 = (0..n).map(|j| t[j][i]).sum();
                let image: f64 = t[i].iter().zip(g_vals).map(|(a, b)| a * b).sum();
                if (row - 1.0).abs() > tol || (col - 1.0).abs() > tol || (image - f_vals[i]).abs() > tol * scale {
                    return Err(Error::LpFailure(format!("solution violates row {i} beyond {tol:e}")));
                }
            }
            Ok(Factorization::Feasible(t))
        }
        LpOutcome::Infeasible => {
            let (_, witness, shortfall) = univariate_majorizes(g_vals, f_vals, tol);
            Ok(Factorization::Infeasible { witness, shortfall })
        }
    }
}
