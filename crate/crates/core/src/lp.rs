//! Thin wrapper over `minilp` for the small dense programs used here.

use minilp::{ComparisonOp, LinearExpr, OptimizationDirection, Problem};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Cmp {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Sense {
    Minimize,
    Maximize,
}

/// Linear constraints over `n` variables with box bounds.
#[derive(Debug, Clone)]
pub(crate) struct LinearSystem {
    bounds: Vec<(f64, f64)>,
    rows: Vec<(Vec<(usize, f64)>, Cmp, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum LpOutcome {
    Optimal { objective: f64, x: Vec<f64> },
    Infeasible,
}

impl LinearSystem {
    pub fn new(bounds: Vec<(f64, f64)>) -> Self {
        Self { bounds, rows: Vec::new() }
    }

    pub fn free(n: usize) -> Self {
        Self::new(vec![(f64::NEG_INFINITY, f64::INFINITY); n])
    }

    pub fn add(&mut self, terms: Vec<(usize, f64)>, cmp: Cmp, rhs: f64) {
        self.rows.push((terms, cmp, rhs));
    }

    pub fn solve(&self, sense: Sense, objective: &[(usize, f64)]) -> Result<LpOutcome> {
        let dir = match sense {
            Sense::Minimize => OptimizationDirection::Minimize,
            Sense::Maximize => OptimizationDirection::Maximize,
        };
        let mut coeffs = vec![0.0; self.bounds.len()];
        for &(j, c) in objective {
            coeffs[j] += c;
        }
        let mut p = Problem::new(dir);
        let vars: Vec<_> = self
            .bounds
            .iter()
            .zip(&coeffs)
            .map(|(&b, &c)| p.add_var(c, b))
            .collect();
        for (terms, cmp, rhs) in &self.rows {
            let mut e = LinearExpr::empty();
            for &(j, c) in terms {
                e.add(vars[j], c);
            }
            let op = match cmp {
                Cmp::Le => ComparisonOp::Le,
                Cmp::Ge => ComparisonOp::Ge,
                Cmp::Eq => ComparisonOp::Eq,
            };
            p.add_constraint(e, op, *rhs);
        }
        match p.solve() {
            Ok(sol) => Ok(LpOutcome::Optimal {
                objective: sol.objective(),
                x: vars.iter().map(|&v| *sol.var_value(v)).collect(),
            }),
            Err(minilp::Error::Infeasible) => Ok(LpOutcome::Infeasible),
            Err(e) => Err(Error::LpFailure(e.to_string())),
        }
    }
}
