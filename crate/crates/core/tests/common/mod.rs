//! Seeded random instances shared by the acceptance and property suites.
#![allow(dead_code)]

use ironkit::mech::{ContractSpec, GoodsSpec, Production};
use ironkit::{CostModel, GridFunction, TypeGrid};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// 1 to 3 axes with 1 to 4 points and random positive probabilities.
pub fn grid(rng: &mut ChaCha8Rng) -> TypeGrid {
    let dims = rng.gen_range(1..=3);
    let axes = (0..dims)
        .map(|_| {
            let n = rng.gen_range(1..=4);
            let mut p = 0.0;
            let points = (0..n)
                .map(|_| {
                    p += rng.gen_range(0.5..1.5);
                    p
                })
                .collect();
            let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.2..1.0)).collect();
            let s: f64 = w.iter().sum();
            (points, w.iter().map(|x| x / s).collect())
        })
        .collect();
    TypeGrid::new(axes).unwrap()
}

pub fn function(rng: &mut ChaCha8Rng, grid: &TypeGrid) -> GridFunction {
    GridFunction::from_fn(grid, |_| rng.gen_range(-5.0..5.0))
}

/// `c + Σ_j w_j 1[x ≥ y_j]` with random generators `y_j`.
pub fn monotone(rng: &mut ChaCha8Rng, grid: &TypeGrid) -> GridFunction {
    let c = rng.gen_range(-3.0..3.0);
    let steps: Vec<(usize, f64)> = (0..grid.len())
        .map(|_| (rng.gen_range(0..grid.len()), rng.gen_range(0.0..2.0)))
        .collect();
    GridFunction::from_fn(grid, |x| {
        c + steps
            .iter()
            .filter(|(y, _)| grid.leq(*y, x))
            .map(|(_, w)| w)
            .sum::<f64>()
    })
}

/// Strictly increasing along every axis, with increments of at least 1.
pub fn strictly_monotone(rng: &mut ChaCha8Rng, grid: &TypeGrid) -> GridFunction {
    let base = monotone(rng, grid);
    GridFunction::from_fn(grid, |x| base[x] + grid.coords(x).iter().sum::<usize>() as f64)
}

/// Spreads `g` upward with small random transfers. The result majorizes `g`
/// and stays non-decreasing when `g` rises by at least 1 per step.
pub fn spread(rng: &mut ChaCha8Rng, grid: &TypeGrid, g: &GridFunction) -> GridFunction {
    let mut h = g.clone();
    let budget = 0.2 / grid.dims() as f64;
    for i in 0..grid.dims() {
        for x in 0..grid.len() {
            if let Some(u) = grid.up(x, i) {
                let mass = rng.gen_range(0.0..budget) * grid.prob(x).min(grid.prob(u));
                h[x] -= mass / grid.prob(x);
                h[u] += mass / grid.prob(u);
            }
        }
    }
    h
}

pub fn cost(rng: &mut ChaCha8Rng) -> CostModel {
    if rng.gen_bool(0.5) {
        CostModel::Quadratic { c: rng.gen_range(0.5..2.0) }
    } else {
        CostModel::Power {
            c: rng.gen_range(0.5..2.0),
            p: rng.gen_range(1.5..3.0),
        }
    }
}

pub fn goods(rng: &mut ChaCha8Rng, grid: &TypeGrid) -> GoodsSpec {
    let values = (0..grid.dims()).map(|_| monotone(rng, grid)).collect();
    GoodsSpec::new(grid.clone(), values, cost(rng)).unwrap()
}

pub fn contract(rng: &mut ChaCha8Rng, grid: &TypeGrid) -> ContractSpec {
    let costs = (0..grid.dims())
        .map(|_| {
            let m = monotone(rng, grid);
            let top = m.values().iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            m.map(|v| 1.0 + top - v)
        })
        .collect();
    ContractSpec::new(grid.clone(), costs, Production::Power { a: 2.0, b: 0.5 }).unwrap()
}

/// A random non-negative non-decreasing decision.
pub fn feasible_q(rng: &mut ChaCha8Rng, grid: &TypeGrid) -> GridFunction {
    let m = monotone(rng, grid);
    let scale = rng.gen_range(0.0..1.0);
    m.map(|v| v.max(0.0) * scale)
}

/// A random quality with access rights such that `q η_i` is non-decreasing in `x_i`.
pub fn feasible_access(rng: &mut ChaCha8Rng, grid: &TypeGrid) -> (GridFunction, Vec<GridFunction>) {
    let q = GridFunction::from_fn(grid, |_| rng.gen_range(0.0..6.0));
    let eta = (0..grid.dims())
        .map(|i| {
            let cap = GridFunction::from_fn(grid, |x| q[x] * rng.gen_range(0.0..1.0));
            let mut alloc = cap.clone();
            for start in grid.line_starts(i) {
                let line: Vec<usize> = grid.line(start, i).collect();
                let mut m = f64::INFINITY;
                for &x in line.iter().rev() {
                    m = m.min(cap[x]);
                    alloc[x] = m;
                }
            }
            GridFunction::from_fn(grid, |x| if q[x] > 0.0 { (alloc[x] / q[x]).min(1.0) } else { 0.0 })
        })
        .collect();
    (q, eta)
}
