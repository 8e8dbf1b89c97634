//! Multivariate majorization.
//!
//! `h ≻ g` ("h majorizes g") holds when `E[g | L] ≥ E[h | L]` on every lower
//! set `L` with equality on the whole grid. Equivalently `h` arises from `g`
//! by moving mass upward along agents' axes: `h = g − Σ_i Δ̲_i λ_i / f` for
//! some transfer field `λ ≥ 0`.

use std::ops::ControlFlow;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{self, expectation, is_nondecreasing, walk_lower_sets, GridFunction, LowerSet, TypeGrid};
use crate::iron::{self, IronOptions, Phi};
use crate::lp::{Cmp, LinearSystem, LpOutcome, Sense};

/// Default absolute and relative tolerance of majorization checks.
pub const DEFAULT_TOL: f64 = 1e-9;

/// Lower-set budget used when a check picks its method automatically.
const AUTO_ORACLE_CAP: usize = 200_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Enumerate every lower set.
    #[default]
    Oracle,
    /// Solve for a non-negative transfer field.
    Flow,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MajorizationCertificate {
    pub verdict: bool,
    /// A lower set violating the inequality when the verdict is false.
    pub witness: Option<LowerSet>,
    pub method: Method,
    /// Oracle: the worst shortfall `−min_L Σ_L f(g − h)` (clamped at 0) or
    /// the global-mean gap. Flow: sup-norm of the least-squares residual.
    pub residual: f64,
}

/// Tests `h ≻ g` within `tol · (1 + scale)`, where `scale` is the larger sup-norm.
pub fn majorizes(h: &GridFunction, g: &GridFunction, grid: &TypeGrid, tol: f64, method: Method) -> Result<MajorizationCertificate> {
    grid.check_shape(h)?;
    grid.check_shape(g)?;
    let thr = tol * (1.0 + h.max_abs().max(g.max_abs()));
    let mean_gap = expectation(grid, g, None)? - expectation(grid, h, None)?;
    if mean_gap.abs() > thr {
        return Ok(MajorizationCertificate {
            verdict: false,
            witness: Some(LowerSet::from_members_unchecked(grid, vec![true; grid.len()])),
            method,
            residual: mean_gap.abs(),
        });
    }
    let diff: Vec<f64> = (0..grid.len()).map(|x| grid.prob(x) * (g[x] - h[x])).collect();
    match method {
        Method::Oracle => oracle(grid, &diff, thr, grid::DEFAULT_LOWER_SET_CAP),
        Method::Flow => flow(h, g, grid, &diff, thr),
    }
}

fn oracle(grid: &TypeGrid, diff: &[f64], thr: f64, cap: usize) -> Result<MajorizationCertificate> {
    let mut worst = 0.0f64;
    let mut witness: Option<Vec<bool>> = None;
    walk_lower_sets(grid, cap, &[diff], |members, sums| {
        if sums[0] < worst {
            worst = sums[0];
            witness = Some(members.to_vec());
        }
        ControlFlow::Continue(())
    })?;
    let verdict = worst >= -thr;
    Ok(MajorizationCertificate {
        verdict,
        witness: if verdict {
            None
        } else {
            witness.map(|m| LowerSet::from_members_unchecked(grid, m))
        },
        method: Method::Oracle,
        residual: -worst,
    })
}

/// Flow check via the ironing solver.
///
/// Ironing `g − h` is the least-squares problem `min ‖(g − h) − Σ_i Δ̲_i λ_i / f‖`
/// over `λ ≥ 0`; its residual is the monotone projection of `g − h`. The
/// sublevel set `{residual < 0}` is a lower set minimizing `Σ_L f(g − h)`, so
/// the verdict is decided on that exact sum rather than on the residual norm.
fn flow(h: &GridFunction, g: &GridFunction, grid: &TypeGrid, diff: &[f64], thr: f64) -> Result<MajorizationCertificate> {
    let d = g.zip_with(h, |a, b| a - b)?;
    let opts = IronOptions {
        tol: 0.0,
        max_sweeps: 1_000_000,
        phi: Phi::Quadratic,
    };
    let descent = iron::descend(&d, grid, &opts)?;
    let r = &descent.residual;
    let residual = r.max_abs();
    let (worst, members) = best_level_set(grid, r, diff);
    let verdict = worst >= -thr;
    Ok(MajorizationCertificate {
        verdict,
        witness: (!verdict).then(|| LowerSet::from_members_unchecked(grid, members)),
        method: Method::Flow,
        residual,
    })
}

/// Among down-closures of the sublevel sets of `r`, the one with the smallest `Σ_L w`.
fn best_level_set(grid: &TypeGrid, r: &GridFunction, w: &[f64]) -> (f64, Vec<bool>) {
    let mut order: Vec<usize> = (0..grid.len()).collect();
    order.sort_by(|&a, &b| r[a].total_cmp(&r[b]).then(a.cmp(&b)));
    let mut best = (0.0, vec![false; grid.len()]);
    let mut k = 0;
    while k < order.len() {
        let t = r[order[k]];
        while k < order.len() && r[order[k]] <= t {
            k += 1;
        }
        let members = down_closure(grid, |x| r[x] <= t);
        let sum = grid::neumaier_sum((0..grid.len()).filter(|&x| members[x]).map(|x| w[x]));
        if sum < best.0 {
            best = (sum, members);
        }
    }
    best
}

fn down_closure(grid: &TypeGrid, seed: impl Fn(usize) -> bool) -> Vec<bool> {
    let mut m: Vec<bool> = (0..grid.len()).map(seed).collect();
    for x in (0..grid.len()).rev() {
        if m[x] {
            for i in 0..grid.dims() {
                if let Some(d) = grid.down(x, i) {
                    m[d] = true;
                }
            }
        }
    }
    m
}

/// Oracle when the lower sets are few enough, flow otherwise.
pub(crate) fn majorizes_auto(h: &GridFunction, g: &GridFunction, grid: &TypeGrid, tol: f64) -> Result<bool> {
    let thr = tol * (1.0 + h.max_abs().max(g.max_abs()));
    if (expectation(grid, g, None)? - expectation(grid, h, None)?).abs() > thr {
        return Ok(false);
    }
    let diff: Vec<f64> = (0..grid.len()).map(|x| grid.prob(x) * (g[x] - h[x])).collect();
    match oracle(grid, &diff, thr, AUTO_ORACLE_CAP) {
        Ok(c) => Ok(c.verdict),
        Err(Error::TooManyLowerSets { .. }) => Ok(flow(h, g, grid, &diff, thr)?.verdict),
        Err(e) => Err(e),
    }
}

/// Coordinate-wise majorization: `g` majorizes `h` in coordinate `i` when on
/// every line along agent `i` the prefix sums of `f·g` stay below those of
/// `f·h` and the line totals agree.
pub fn majorizes_in_coordinate(g: &GridFunction, h: &GridFunction, i: usize, grid: &TypeGrid, tol: f64) -> Result<bool> {
    grid.check_shape(g)?;
    grid.check_shape(h)?;
    grid.check_agent(i)?;
    let thr = tol * (1.0 + g.max_abs().max(h.max_abs()));
    for start in grid.line_starts(i) {
        let mut acc = 0.0;
        let line: Vec<usize> = grid.line(start, i).collect();
        let mass: f64 = line.iter().map(|&x| grid.prob(x)).sum();
        for (k, &x) in line.iter().enumerate() {
            acc += grid.prob(x) * (g[x] - h[x]) / mass;
            if acc > thr || (k + 1 == line.len() && acc.abs() > thr) {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Two-profile mixing on one line of agent `agent`.
///
/// With `a = weight`, the low and high values `c_l < c_h` become
/// `c_l + (1 − a)(c_h − c_l)·w_l` and `c_h − (1 − a)(c_h − c_l)·w_h`, where
/// `w_l = 2f_h/(f_l + f_h)` and `w_h = 2f_l/(f_l + f_h)`. On equal
/// probabilities this is the classical `aI + (1 − a)P` with `P` swapping the
/// two values; in general it conserves probability mass, the amount moved
/// being `delta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrthogonalTTransform {
    pub agent: usize,
    /// The other agents' types, with this agent's slot set to zero.
    pub line: Vec<usize>,
    pub low: usize,
    pub high: usize,
    pub weight: f64,
    /// Probability mass moved from the high to the low profile.
    pub delta: f64,
}

impl OrthogonalTTransform {
    fn profiles(&self, grid: &TypeGrid) -> (usize, usize) {
        let base = grid.index(&self.line);
        let s = grid.stride(self.agent);
        (base + self.low * s, base + self.high * s)
    }

    pub fn apply(&self, grid: &TypeGrid, g: &mut GridFunction) {
        let (lo, hi) = self.profiles(grid);
        let (fl, fh) = (grid.prob(lo), grid.prob(hi));
        let shift = (1.0 - self.weight) * (g[hi] - g[lo]);
        g[lo] += shift * 2.0 * fh / (fl + fh);
        g[hi] -= shift * 2.0 * fl / (fl + fh);
    }
}

/// Writes `g` as the image of `h` under a sequence of orthogonal T-transforms.
///
/// A transfer field with `h = g − Σ_i Δ̲_i λ_i / f` is solved for first. Each
/// transform then sends mass down a segment of one line along which every
/// edge still carries flow, and the flow on those edges shrinks by the mass
/// moved, so the current function keeps majorizing `g`. Steps that clear an
/// edge are preferred, longest segment first; when none exists the pair with
/// the largest equalizing move is averaged. Mass sometimes has to turn a
/// corner, e.g. from `(1,1)` to `(0,0)` through `(0,1)`, which a rule pairing
/// excess and shortfall profiles on a common line cannot express.
pub fn decompose_t_transforms(h: &GridFunction, g: &GridFunction, grid: &TypeGrid) -> Result<Vec<OrthogonalTTransform>> {
    grid.check_shape(h)?;
    grid.check_shape(g)?;
    let scale = 1.0 + h.max_abs().max(g.max_abs());
    let mono_tol = 1e-12 * scale;
    if !is_nondecreasing(grid, h, mono_tol) {
        return Err(Error::NotMonotone { which: "majorant" });
    }
    if !is_nondecreasing(grid, g, mono_tol) {
        return Err(Error::NotMonotone { which: "target" });
    }
    if !majorizes_auto(h, g, grid, DEFAULT_TOL)? {
        return Err(Error::NotMajorized);
    }
    let opts = IronOptions {
        tol: 0.0,
        max_sweeps: 1_000_000,
        phi: Phi::Quadratic,
    };
    let d = g.zip_with(h, |a, b| a - b)?;
    let descent = iron::descend(&d, grid, &opts)?;
    let mut flow: Vec<Vec<f64>> = descent.lambda.agents().iter().map(|l| l.values().to_vec()).collect();
    let flow_eps = 1e-13 * (1.0 + descent.lambda.max_abs());
    let mut cur = h.clone();
    let mut steps = Vec::new();
    let budget = 64 * (grid.len() + 1);
    while steps.len() < budget {
        let Some((i, a, b, line, delta)) = next_segment(grid, &cur, &flow, flow_eps) else {
            break;
        };
        let (lo, hi) = (line[a], line[b]);
        let (fl, fh) = (grid.prob(lo), grid.prob(hi));
        let gap = cur[hi] - cur[lo];
        for &x in &line[a..b] {
            let e = &mut flow[i][x];
            *e = if *e - delta <= flow_eps { 0.0 } else { *e - delta };
        }
        let weight = (1.0 - delta * (fl + fh) / (2.0 * fl * fh * gap)).clamp(0.0, 1.0);
        let mut coords = grid.coords(lo);
        coords[i] = 0;
        let step = OrthogonalTTransform {
            agent: i,
            line: coords,
            low: grid.coord(lo, i),
            high: grid.coord(hi, i),
            weight,
            delta,
        };
        step.apply(grid, &mut cur);
        steps.push(step);
    }
    if cur.sup_distance(g) > 1e-8 * scale {
        return Err(Error::DecompositionStalled { steps: steps.len() });
    }
    Ok(steps)
}

/// Picks the next segment `line[a..=b]` of agent `i` and the mass to move down it.
fn next_segment(grid: &TypeGrid, cur: &GridFunction, flow: &[Vec<f64>], eps: f64) -> Option<(usize, usize, usize, Vec<usize>, f64)> {
    // (span, agent, a, b, line, delta) of the best clearing step, and the best partial one
    let mut clean: Option<(usize, usize, usize, usize, Vec<usize>, f64)> = None;
    let mut partial: Option<(f64, usize, usize, usize, Vec<usize>)> = None;
    for i in 0..grid.dims() {
        for start in grid.line_starts(i) {
            let line: Vec<usize> = grid.line(start, i).collect();
            for a in 0..line.len() {
                let mut min_flow = f64::INFINITY;
                for b in a + 1..line.len() {
                    min_flow = min_flow.min(flow[i][line[b - 1]]);
                    if min_flow <= eps {
                        break;
                    }
                    let (lo, hi) = (line[a], line[b]);
                    let gap = cur[hi] - cur[lo];
                    if gap <= 0.0 {
                        continue;
                    }
                    let (fl, fh) = (grid.prob(lo), grid.prob(hi));
                    let equalize = gap * fl * fh / (fl + fh);
                    if min_flow <= 2.0 * equalize {
                        if clean.as_ref().is_none_or(|c| b - a > c.0) {
                            clean = Some((b - a, i, a, b, line.clone(), min_flow));
                        }
                    } else if partial.as_ref().is_none_or(|p| equalize > p.0) {
                        partial = Some((equalize, i, a, b, line.clone()));
                    }
                }
            }
        }
    }
    match (clean, partial) {
        (Some((_, i, a, b, line, delta)), _) => Some((i, a, b, line, delta)),
        (None, Some((delta, i, a, b, line))) => Some((i, a, b, line, delta)),
        (None, None) => None,
    }
}

/// Per-profile range of `g(x)` over non-decreasing `g` with `candidate ≻ g ≻ alpha`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MinimalityRanges {
    pub ranges: Vec<(f64, f64)>,
    /// Every range collapses onto the candidate's value.
    pub minimal: bool,
}

/// Bounds each profile's value over the polytope of non-decreasing functions
/// sandwiched between `candidate` and `alpha` in the majorization order.
///
/// The polytope is written out with one inequality per lower set and per
/// side, so the grid must be small enough to enumerate.
pub fn minimality_ranges(candidate: &GridFunction, alpha: &GridFunction, grid: &TypeGrid, tol: f64) -> Result<MinimalityRanges> {
    grid.check_shape(candidate)?;
    grid.check_shape(alpha)?;
    let sets = grid::enumerate_lower_sets(grid, grid::DEFAULT_LOWER_SET_CAP)?;
    let n = grid.len();
    let mut sys = LinearSystem::free(n);
    for x in 0..n {
        for i in 0..grid.dims() {
            if let Some(u) = grid.up(x, i) {
                sys.add(vec![(u, 1.0), (x, -1.0)], Cmp::Ge, 0.0);
            }
        }
    }
    for set in sets.iter().filter(|s| !s.is_empty()) {
        let members = set.members();
        let terms: Vec<(usize, f64)> = members.iter().map(|&x| (x, grid.prob(x))).collect();
        let cand: f64 = members.iter().map(|&x| grid.prob(x) * candidate[x]).sum();
        let alph: f64 = members.iter().map(|&x| grid.prob(x) * alpha[x]).sum();
        if members.len() == n {
            sys.add(terms, Cmp::Eq, alph);
        } else {
            // candidate ≻ g: Σ_L f g ≥ Σ_L f candidate; g ≻ α: Σ_L f α ≥ Σ_L f g
            sys.add(terms.clone(), Cmp::Ge, cand);
            sys.add(terms, Cmp::Le, alph);
        }
    }
    let scale = 1.0 + candidate.max_abs().max(alpha.max_abs());
    let mut ranges = Vec::with_capacity(n);
    for x in 0..n {
        let mut ends = [0.0; 2];
        for (k, sense) in [Sense::Minimize, Sense::Maximize].into_iter().enumerate() {
            match sys.solve(sense, &[(x, 1.0)])? {
                LpOutcome::Optimal { objective, .. } => ends[k] = objective,
                LpOutcome::Infeasible => {
                    return Err(Error::LpFailure("the candidate does not majorize the input".into()));
                }
            }
        }
        ranges.push((ends[0], ends[1]));
    }
    let minimal = ranges
        .iter()
        .enumerate()
        .all(|(x, &(lo, hi))| (lo - candidate[x]).abs() <= tol * scale && (hi - candidate[x]).abs() <= tol * scale);
    Ok(MinimalityRanges { ranges, minimal })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[[f64; 2]]) -> GridFunction {
        GridFunction::from_rows(rows).unwrap()
    }

    #[test]
    fn column_versus_diagonal_averaging() {
        let grid = TypeGrid::uniform(&[2, 2]).unwrap();
        let h = m(&[[0.0, 2.0], [4.0, 6.0]]);
        for method in [Method::Oracle, Method::Flow] {
            let ok = majorizes(&h, &m(&[[1.0, 1.0], [5.0, 5.0]]), &grid, DEFAULT_TOL, method).unwrap();
            assert!(ok.verdict, "{method:?}");
            let bad = majorizes(&h, &m(&[[0.0, 3.0], [3.0, 6.0]]), &grid, DEFAULT_TOL, method).unwrap();
            assert!(!bad.verdict, "{method:?}");
            assert_eq!(bad.witness.unwrap().members(), vec![0, 2], "{method:?}");
            let refl = majorizes(&h, &h, &grid, DEFAULT_TOL, method).unwrap();
            assert!(refl.verdict);
            assert_eq!(refl.residual, 0.0);
        }
    }

    #[test]
    fn coordinate_majorization_on_a_line() {
        let grid = TypeGrid::uniform(&[1, 3]).unwrap();
        let h = GridFunction::new(vec![1, 3], vec![0.0, 1.0, 2.0]).unwrap();
        assert!(majorizes_in_coordinate(&h, &h, 1, &grid, 1e-12).unwrap());
        let spread = GridFunction::new(vec![1, 3], vec![-1.0, 1.0, 3.0]).unwrap();
        assert!(majorizes_in_coordinate(&spread, &h, 1, &grid, 1e-12).unwrap());
        // moving value from the top type to the bottom one reverses the prefix sums
        let down = GridFunction::new(vec![1, 3], vec![1.0, 1.0, 1.0]).unwrap();
        assert!(!majorizes_in_coordinate(&down, &h, 1, &grid, 1e-12).unwrap());
    }

    #[test]
    fn decomposition_of_column_averages() {
        let grid = TypeGrid::uniform(&[2, 2]).unwrap();
        let h = m(&[[0.0, 2.0], [4.0, 6.0]]);
        let g = m(&[[1.0, 1.0], [5.0, 5.0]]);
        let steps = decompose_t_transforms(&h, &g, &grid).unwrap();
        assert_eq!(steps.len(), 2);
        let mut cur = h.clone();
        for s in &steps {
            assert_eq!(s.agent, 1);
            // one unit of value on a profile of mass 1/4
            assert!((s.delta - 0.25).abs() < 1e-15);
            s.apply(&grid, &mut cur);
        }
        assert!(cur.sup_distance(&g) < 1e-12);
        assert!(decompose_t_transforms(&h, &h, &grid).unwrap().is_empty());
    }

    #[test]
    fn decomposition_in_one_dimension() {
        let grid = TypeGrid::uniform(&[3]).unwrap();
        let h = GridFunction::new(vec![3], vec![0.0, 2.0, 4.0]).unwrap();
        let g = GridFunction::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        let steps = decompose_t_transforms(&h, &g, &grid).unwrap();
        assert_eq!(steps.len(), 1);
        assert_eq!((steps[0].low, steps[0].high), (0, 2));
        assert!((steps[0].weight - 0.75).abs() < 1e-9);
        assert!(matches!(decompose_t_transforms(&g, &h, &grid), Err(Error::NotMajorized)));
    }

    #[test]
    fn two_by_two_minimality() {
        let grid = TypeGrid::uniform(&[2, 2]).unwrap();
        let alpha = m(&[[6.0, 0.0], [0.0, 6.0]]);
        let r = minimality_ranges(&m(&[[2.0, 2.0], [2.0, 6.0]]), &alpha, &grid, 1e-8).unwrap();
        assert!(r.minimal, "{r:?}");
        let r = minimality_ranges(&m(&[[1.0, 2.0], [2.0, 7.0]]), &alpha, &grid, 1e-8).unwrap();
        assert!(!r.minimal);
        let mono = m(&[[0.0, 1.0], [2.0, 3.0]]);
        assert!(minimality_ranges(&mono, &mono, &grid, 1e-8).unwrap().minimal);
    }
}
