//! Mechanisms built on ironing: mass-produced goods and multi-agent contracting.
//!
//! Both settings reduce to ironing a virtual value. For goods it is each
//! buyer's marginal revenue `MR_i = v_i − ((1 − F_i)/f_i) Δ̄_i v_i`; for
//! contracting it is minus the summed marginal cost. Transfers follow from
//! the envelope formula with the integral replaced by a forward-difference
//! sum, and are certified by an exhaustive misreport check.

use serde::{Deserialize, Serialize};

use crate::access::solve_access;
use crate::error::{Error, Result};
use crate::grid::{self, GridFunction, TypeGrid};
use crate::iron::{iron, optimal_q, CostModel, IronOptions, Partition};

/// `g − ((1 − F_i)/f_i) Δ̄_i g`, the discrete virtual-value transform along agent `i`.
pub fn virtual_transform(grid: &TypeGrid, g: &GridFunction, i: usize) -> GridFunction {
    let axis = grid.axis(i);
    GridFunction::from_fn(grid, |x| {
        let k = grid.coord(x, i);
        match grid.up(x, i) {
            Some(u) => g[x] - axis.inverse_hazard(k) * (g[u] - g[x]),
            None => g[x],
        }
    })
}

fn own_monotone(grid: &TypeGrid, g: &GridFunction, i: usize, sign: f64) -> bool {
    let tol = 1e-12 * (1.0 + g.max_abs());
    (0..grid.len()).all(|x| grid.up(x, i).is_none_or(|u| sign * (g[u] - g[x]) >= -tol))
}

/// Buyers' valuations per unit of quality, `v_i(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GoodsSpec {
    pub grid: TypeGrid,
    pub values: Vec<GridFunction>,
    pub cost: CostModel,
    /// False when some `v_i` decreases in the buyer's own type.
    pub own_monotone: bool,
}

impl GoodsSpec {
    /// Requires every `v_i` to be non-decreasing in `x_i`.
    pub fn new(grid: TypeGrid, values: Vec<GridFunction>, cost: CostModel) -> Result<Self> {
        let spec = Self::new_unchecked(grid, values, cost)?;
        if !spec.own_monotone {
            return Err(Error::NotMonotone {
                which: "valuation in own type",
            });
        }
        Ok(spec)
    }

    /// Accepts valuations that decrease in own type. The envelope transfers
    /// then need not be incentive compatible; [`verify_ic_ir`] reports it.
    pub fn new_unchecked(grid: TypeGrid, values: Vec<GridFunction>, cost: CostModel) -> Result<Self> {
        cost.validate()?;
        if values.len() != grid.dims() {
            return Err(Error::InvalidInput(format!("{} valuations for {} buyers", values.len(), grid.dims())));
        }
        for v in &values {
            grid.check_shape(v)?;
            if let Some(index) = v.values().iter().position(|z| !z.is_finite()) {
                return Err(Error::NonFiniteInput { index });
            }
        }
        let own_monotone = values.iter().enumerate().all(|(i, v)| own_monotone(&grid, v, i, 1.0));
        Ok(Self {
            grid,
            values,
            cost,
            own_monotone,
        })
    }
}

/// Marginal revenue of each buyer.
pub fn marginal_revenue(spec: &GoodsSpec) -> Vec<GridFunction> {
    (0..spec.grid.dims())
        .map(|i| virtual_transform(&spec.grid, &spec.values[i], i))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MechanismOutcome {
    /// Quality (goods) or duration (contracting).
    pub q: GridFunction,
    pub eta: Vec<GridFunction>,
    pub transfers: Vec<GridFunction>,
    /// Profit computed from transfers.
    pub profit: f64,
    /// Profit computed from the virtual-value representation.
    pub profit_virtual: f64,
    /// Ironed virtual values: one function without access rights, one per agent with them.
    pub ironed: Vec<GridFunction>,
    pub partition: Partition,
    pub sweeps: usize,
    pub warnings: Vec<String>,
}

/// Envelope transfers `t_i = w_i Q_i − Σ_{s < x_i} Δ̄_i w_i(s, x_{-i}) Q_i(s, x_{-i})`
/// for an agent valuing allocation `Q_i` at `w_i` per unit.
fn envelope_payments(grid: &TypeGrid, w: &GridFunction, alloc: &GridFunction, i: usize) -> GridFunction {
    let mut t = GridFunction::zeros(grid.shape());
    for start in grid.line_starts(i) {
        let mut info_rent = 0.0;
        let mut prev: Option<usize> = None;
        for x in grid.line(start, i) {
            if let Some(p) = prev {
                info_rent += (w[x] - w[p]) * alloc[p];
            }
            t[x] = w[x] * alloc[x] - info_rent;
            prev = Some(x);
        }
    }
    t
}

/// Optimal goods mechanism using the discrete marginal revenues of `spec`.
pub fn goods_mechanism(spec: &GoodsSpec, with_access: bool, opts: &IronOptions) -> Result<MechanismOutcome> {
    let mr = marginal_revenue(spec);
    goods_mechanism_with_mr(spec, &mr, with_access, opts)
}

/// Goods mechanism for externally supplied marginal revenues, e.g. the
/// dyadic average of a continuous marginal revenue. Transfers still come
/// from the discrete valuations, so the two profit figures agree only when
/// `mr` is the discrete transform of `spec.values`.
pub fn goods_mechanism_with_mr(spec: &GoodsSpec, mr: &[GridFunction], with_access: bool, opts: &IronOptions) -> Result<MechanismOutcome> {
    let grid = &spec.grid;
    if mr.len() != grid.dims() {
        return Err(Error::InvalidInput("one marginal revenue per buyer is required".into()));
    }
    let (q, eta, ironed, partition, sweeps, mut warnings) = if with_access {
        let res = solve_access(mr, grid, &spec.cost, opts)?;
        let warnings = if res.non_unique.is_empty() {
            Vec::new()
        } else {
            vec![format!(
                "{} negative ironed entries are screened out; their values are not unique",
                res.non_unique.len()
            )]
        };
        (res.q_star, res.eta, res.alphas_tilde, res.partition, res.sweeps, warnings)
    } else {
        let mut total = GridFunction::zeros(grid.shape());
        for m in mr {
            grid.check_shape(m)?;
            for x in 0..grid.len() {
                total[x] += m[x];
            }
        }
        let res = iron(&total, grid, opts)?;
        let q = optimal_q(&res.alpha_bar, &spec.cost);
        let eta = vec![GridFunction::constant(grid.shape(), 1.0); grid.dims()];
        (q, eta, vec![res.alpha_bar], res.partition, res.sweeps, Vec::new())
    };
    if !spec.own_monotone {
        warnings.push("valuations decrease in own type; envelope transfers may violate incentive compatibility".into());
    }
    let transfers: Vec<GridFunction> = (0..grid.dims())
        .map(|i| {
            let alloc = q.zip_with(&eta[i], |a, b| a * b).expect("same grid");
            envelope_payments(grid, &spec.values[i], &alloc, i)
        })
        .collect();
    let cost = &spec.cost;
    let profit = grid::neumaier_sum((0..grid.len()).map(|x| {
        let t: f64 = transfers.iter().map(|t| t[x]).sum();
        grid.prob(x) * (t - cost.cost(q[x]))
    }));
    let profit_virtual = grid::neumaier_sum((0..grid.len()).map(|x| {
        let v: f64 = mr.iter().zip(&eta).map(|(m, e)| m[x] * e[x]).sum();
        grid.prob(x) * (q[x] * v - cost.cost(q[x]))
    }));
    Ok(MechanismOutcome {
        q,
        eta,
        transfers,
        profit,
        profit_virtual,
        ironed,
        partition,
        sweeps,
        warnings,
    })
}

/// Production technology `y(d)` with decreasing marginal product.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Production {
    /// `y(d) = a ln(1 + d)`.
    Log { a: f64 },
    /// `y(d) = a d^b` with `0 < b < 1`.
    Power { a: f64, b: f64 },
    /// Piecewise-linear marginal product through `(d_k, y'(d_k))`, starting at `d = 0`.
    Tabulated { d: Vec<f64>, marginal: Vec<f64> },
}

/// Bisection tolerance for tabulated marginal products.
const TABLE_TOL: f64 = 1e-10;

impl Production {
    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            Production::Log { a } => a.is_finite() && *a > 0.0,
            Production::Power { a, b } => a.is_finite() && *a > 0.0 && *b > 0.0 && *b < 1.0,
            Production::Tabulated { d, marginal } => {
                d.len() >= 2
                    && d.len() == marginal.len()
                    && d[0] == 0.0
                    && d.windows(2).all(|w| w[1] > w[0])
                    && marginal.windows(2).all(|w| w[1] < w[0])
                    && marginal.iter().all(|m| m.is_finite() && *m >= 0.0)
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("invalid production model {self:?}")))
        }
    }

    pub fn output(&self, d: f64) -> f64 {
        match self {
            Production::Log { a } => a * d.ln_1p(),
            Production::Power { a, b } => a * d.max(0.0).powf(*b),
            Production::Tabulated { d: pts, marginal } => {
                // integral of the piecewise-linear marginal product, flat past the table
                let mut y = 0.0;
                for k in 0..pts.len() - 1 {
                    if d <= pts[k] {
                        break;
                    }
                    let hi = d.min(pts[k + 1]);
                    let m_hi = marginal[k] + (marginal[k + 1] - marginal[k]) * (hi - pts[k]) / (pts[k + 1] - pts[k]);
                    y += 0.5 * (marginal[k] + m_hi) * (hi - pts[k]);
                }
                let last = *pts.last().unwrap();
                if d > last {
                    y += marginal.last().unwrap() * (d - last);
                }
                y
            }
        }
    }

    pub fn marginal(&self, d: f64) -> f64 {
        match self {
            Production::Log { a } => a / (1.0 + d),
            Production::Power { a, b } => a * b * d.powf(b - 1.0),
            Production::Tabulated { d: pts, marginal } => {
                let k = pts.partition_point(|&p| p <= d).clamp(1, pts.len() - 1);
                if d >= *pts.last().unwrap() {
                    return *marginal.last().unwrap();
                }
                marginal[k - 1] + (marginal[k] - marginal[k - 1]) * (d - pts[k - 1]) / (pts[k] - pts[k - 1])
            }
        }
    }

    /// The duration equating marginal product with marginal cost `m`; zero
    /// once `m` reaches `y'(0)`.
    pub fn optimal_duration(&self, m: f64) -> Result<f64> {
        if !(m > 0.0) {
            return Err(Error::InvalidInput(format!(
                "marginal cost {m} is not positive; the optimal duration is unbounded"
            )));
        }
        Ok(match self {
            Production::Log { a } => (a / m - 1.0).max(0.0),
            Production::Power { a, b } => (m / (a * b)).powf(1.0 / (b - 1.0)),
            Production::Tabulated { d: pts, marginal } => {
                if m >= marginal[0] {
                    return Ok(0.0);
                }
                if m <= *marginal.last().unwrap() {
                    return Err(Error::InvalidInput(format!(
                        "marginal cost {m} is below the tabulated marginal product"
                    )));
                }
                let (mut lo, mut hi) = (0.0, *pts.last().unwrap());
                while hi - lo > TABLE_TOL * (1.0 + hi) {
                    let mid = 0.5 * (lo + hi);
                    if self.marginal(mid) > m {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                0.5 * (lo + hi)
            }
        })
    }
}

/// Agents' marginal effort costs `c_i(x)` and the principal's technology.
#[derive(Debug, Clone, PartialEq)]
pub struct ContractSpec {
    pub grid: TypeGrid,
    pub costs: Vec<GridFunction>,
    pub production: Production,
}

impl ContractSpec {
    /// Requires every `c_i` to be non-increasing in `x_i`.
    pub fn new(grid: TypeGrid, costs: Vec<GridFunction>, production: Production) -> Result<Self> {
        production.validate()?;
        if costs.len() != grid.dims() {
            return Err(Error::InvalidInput(format!("{} cost functions for {} agents", costs.len(), grid.dims())));
        }
        for (i, c) in costs.iter().enumerate() {
            grid.check_shape(c)?;
            if let Some(index) = c.values().iter().position(|z| !z.is_finite()) {
                return Err(Error::NonFiniteInput { index });
            }
            if !own_monotone(&grid, c, i, -1.0) {
                return Err(Error::NotMonotone {
                    which: "marginal cost must not increase in own type; it",
                });
            }
        }
        Ok(Self {
            grid,
            costs,
            production,
        })
    }
}

/// `MC = Σ_i c_i − ((1 − F_i)/f_i) Δ̄_i c_i`.
pub fn marginal_cost(spec: &ContractSpec) -> GridFunction {
    let mut mc = GridFunction::zeros(spec.grid.shape());
    for (i, c) in spec.costs.iter().enumerate() {
        let v = virtual_transform(&spec.grid, c, i);
        for x in 0..spec.grid.len() {
            mc[x] += v[x];
        }
    }
    mc
}

/// Optimal duration: iron `−MC`, then equate marginal product with the ironed cost.
pub fn contracting_solution(spec: &ContractSpec, opts: &IronOptions) -> Result<MechanismOutcome> {
    let grid = &spec.grid;
    let mc = marginal_cost(spec);
    let res = iron(&mc.map(|v| -v), grid, opts)?;
    let d = GridFunction::new(
        grid.shape().to_vec(),
        res.alpha_bar
            .values()
            .iter()
            .map(|&a| spec.production.optimal_duration(-a))
            .collect::<Result<Vec<_>>>()?,
    )?;
    // Agents value duration at −c_i per unit and are paid rather than paying.
    let transfers: Vec<GridFunction> = spec
        .costs
        .iter()
        .enumerate()
        .map(|(i, c)| envelope_payments(grid, &c.map(|v| -v), &d, i).map(|p| -p))
        .collect();
    let y = &spec.production;
    let profit = grid::neumaier_sum((0..grid.len()).map(|x| {
        let t: f64 = transfers.iter().map(|t| t[x]).sum();
        grid.prob(x) * (y.output(d[x]) - t)
    }));
    let profit_virtual = grid::neumaier_sum((0..grid.len()).map(|x| grid.prob(x) * (y.output(d[x]) - d[x] * mc[x])));
    Ok(MechanismOutcome {
        eta: vec![GridFunction::constant(grid.shape(), 1.0); grid.dims()],
        q: d,
        transfers,
        profit,
        profit_virtual,
        ironed: vec![res.alpha_bar],
        partition: res.partition,
        sweeps: res.sweeps,
        warnings: Vec::new(),
    })
}

/// Ex-post payoffs of a screening setting, used by [`verify_ic_ir`].
pub trait Screening {
    fn grid(&self) -> &TypeGrid;
    /// Agent `i`'s payoff at true profile `truth` when the mechanism is run at `report`.
    fn payoff(&self, outcome: &MechanismOutcome, i: usize, truth: usize, report: usize) -> f64;
}

impl Screening for GoodsSpec {
    fn grid(&self) -> &TypeGrid {
        &self.grid
    }

    fn payoff(&self, o: &MechanismOutcome, i: usize, truth: usize, report: usize) -> f64 {
        self.values[i][truth] * o.q[report] * o.eta[i][report] - o.transfers[i][report]
    }
}

impl Screening for ContractSpec {
    fn grid(&self) -> &TypeGrid {
        &self.grid
    }

    fn payoff(&self, o: &MechanismOutcome, i: usize, truth: usize, report: usize) -> f64 {
        o.transfers[i][report] - self.costs[i][truth] * o.q[report]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IcReport {
    pub ic: bool,
    pub ir: bool,
    /// Largest gain from a misreport (zero when none is profitable).
    pub worst_ic_violation: f64,
    /// Largest shortfall of a truthful payoff below zero.
    pub worst_ir_violation: f64,
    /// `(agent, true profile, reported profile)` of the worst misreport.
    pub worst_misreport: Option<(usize, usize, usize)>,
}

/// Exhaustive ex-post check of every unilateral misreport and of participation.
pub fn verify_ic_ir<S: Screening>(spec: &S, outcome: &MechanismOutcome, tol: f64) -> IcReport {
    let grid = spec.grid();
    let mut worst_ic = 0.0f64;
    let mut worst_ir = 0.0f64;
    let mut worst_misreport = None;
    for i in 0..grid.dims() {
        for truth in 0..grid.len() {
            let honest = spec.payoff(outcome, i, truth, truth);
            worst_ir = worst_ir.max(-honest);
            for report in grid.line(truth, i) {
                let gain = spec.payoff(outcome, i, truth, report) - honest;
                if gain > worst_ic {
                    worst_ic = gain;
                    worst_misreport = Some((i, truth, report));
                }
            }
        }
    }
    IcReport {
        ic: worst_ic <= tol,
        ir: worst_ir <= tol,
        worst_ic_violation: worst_ic,
        worst_ir_violation: worst_ir,
        worst_misreport,
    }
}
