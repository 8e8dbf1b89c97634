//! Dispatch from an instance document to the solvers, producing a result
//! document and per-profile rows for CSV output.

use ironkit::access::{access_objective, no_access_baseline, solve_access};
use ironkit::continuum::{continuous_marginal_revenue, convergence_study, discretize_fn, dyadic_discretize, ContinuousProblem};
use ironkit::iron::{iron, optimal_q, verify_ironing, IronOptions, Partition, TransferField};
use ironkit::majorize::{MajorizationCertificate, DEFAULT_TOL};
use ironkit::mech::{contracting_solution, goods_mechanism_with_mr, marginal_cost, marginal_revenue, verify_ic_ir, ContractSpec, GoodsSpec, IcReport};
use ironkit::sosd::{dominates, survival_complement, utility_battery, JointDistribution, Order};
use ironkit::{GridFunction, Method, Phi, TypeGrid};
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::error::CliError;
use crate::instance::{function, grid_function, InstanceDocument, Mode, VERSION};

/// Command-line settings that override the instance's own options.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub tol: Option<f64>,
    pub max_sweeps: Option<usize>,
    pub phi: Option<Phi>,
    pub method: Option<Method>,
    pub with_access: bool,
    pub level: Option<u32>,
    pub seed: Option<u64>,
}

pub const DEFAULT_LEVEL: u32 = 5;
pub const BATTERY_SIZE: usize = 100;
/// Tolerance of the incentive and ironing checks reported with each result.
pub const CHECK_TOL: f64 = 1e-8;

struct Settings {
    iron: IronOptions,
    method: Method,
    with_access: bool,
    level: u32,
    seed: u64,
}

impl Settings {
    fn new(doc: &InstanceDocument, o: &Overrides) -> Result<Self, CliError> {
        let d = IronOptions::default();
        let iron = IronOptions {
            tol: o.tol.or(doc.options.tol).unwrap_or(d.tol),
            max_sweeps: o.max_sweeps.or(doc.options.max_sweeps).unwrap_or(d.max_sweeps),
            phi: o.phi.or(doc.options.phi).unwrap_or(d.phi),
        };
        if !(iron.tol >= 0.0) {
            return Err(CliError::schema("/options/tol", "must be non-negative"));
        }
        Ok(Self {
            iron,
            method: o.method.or(doc.options.method).unwrap_or_default(),
            with_access: o.with_access || doc.options.with_access.unwrap_or(false),
            level: o.level.or(doc.options.n).unwrap_or(DEFAULT_LEVEL),
            seed: o.seed.or(doc.options.seed).unwrap_or(0),
        })
    }
}

/// Per-profile rows for plotting.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    fn new(grid: &TypeGrid) -> Self {
        let header = (0..grid.dims()).map(|i| format!("x{i}")).collect();
        let rows = (0..grid.len())
            .map(|x| (0..grid.dims()).map(|i| grid.axis(i).points()[grid.coord(x, i)]).collect())
            .collect();
        Self { header, rows }
    }

    fn column(&mut self, name: impl Into<String>, g: &GridFunction) {
        self.header.push(name.into());
        for (row, v) in self.rows.iter_mut().zip(g.values()) {
            row.push(*v);
        }
    }

    fn cells(&mut self, p: &Partition) {
        self.header.push("cell".into());
        for (x, row) in self.rows.iter_mut().enumerate() {
            row.push(p.cell_of(x) as f64);
        }
    }
}

#[derive(Debug, Clone)]
pub struct Solved {
    pub document: Value,
    pub table: Table,
}

/// SHA-256 of the compact serialization of an instance.
pub fn digest(instance: &Value) -> String {
    let bytes = serde_json::to_vec(instance).expect("JSON values serialize");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn run(raw: &Value, doc: &InstanceDocument, overrides: &Overrides) -> Result<Solved, CliError> {
    let s = Settings::new(doc, overrides)?;
    let (grid, outputs, diagnostics, warnings, table) = match doc.mode {
        Mode::Iron => run_iron(doc, &s)?,
        Mode::Access => run_access(doc, &s)?,
        Mode::Goods => run_goods(doc, &s)?,
        Mode::Contract => run_contract(doc, &s)?,
        Mode::Sosd => run_sosd(doc, &s)?,
        Mode::Dyadic => run_dyadic(doc, &s)?,
    };
    let document = json!({
        "version": VERSION,
        "mode": doc.mode.name(),
        "instance_sha256": digest(raw),
        "grid": grid_json(&grid),
        "outputs": outputs,
        "diagnostics": diagnostics,
        "warnings": warnings,
    });
    Ok(Solved { document, table })
}

type ModeOutput = (TypeGrid, Value, Value, Vec<String>, Table);

fn gf(g: &GridFunction) -> Value {
    json!({ "shape": g.shape(), "values": g.values() })
}

fn gfs(gs: &[GridFunction]) -> Value {
    Value::Array(gs.iter().map(gf).collect())
}

fn grid_json(grid: &TypeGrid) -> Value {
    json!({
        "shape": grid.shape(),
        "points": (0..grid.dims()).map(|i| grid.axis(i).points().to_vec()).collect::<Vec<_>>(),
        "probs": (0..grid.dims()).map(|i| grid.axis(i).probs().to_vec()).collect::<Vec<_>>(),
    })
}

fn partition_json(p: &Partition, grid: &TypeGrid) -> Value {
    json!({ "cells": p.coordinate_cells(grid), "means": p.means() })
}

/// Transfers in value units, comparable with differences of the ironed function.
fn lambda_json(l: &TransferField, grid: &TypeGrid) -> Value {
    gfs(&l.density_scaled(grid))
}

fn certificate_json(c: &MajorizationCertificate, grid: &TypeGrid) -> Value {
    json!({
        "verdict": c.verdict,
        "residual": c.residual,
        "witness": c.witness.as_ref().map(|w| w.members().iter().map(|&x| grid.coords(x)).collect::<Vec<_>>()),
    })
}

fn ic_json(r: &IcReport) -> Value {
    json!({
        "ic": r.ic,
        "ir": r.ir,
        "worst_ic_violation": r.worst_ic_violation,
        "worst_ir_violation": r.worst_ir_violation,
        "worst_misreport": r.worst_misreport,
    })
}

fn functions(values: &[Value], grid: &TypeGrid, field: &str) -> Result<Vec<GridFunction>, CliError> {
    if values.len() != grid.dims() {
        return Err(CliError::schema(&format!("/{field}"), &format!("expected {} functions, one per agent", grid.dims())));
    }
    values
        .iter()
        .enumerate()
        .map(|(k, v)| grid_function(v, grid, &format!("/{field}/{k}")))
        .collect()
}

fn run_iron(doc: &InstanceDocument, s: &Settings) -> Result<ModeOutput, CliError> {
    let grid = doc.grid()?;
    let alpha = grid_function(doc.alpha.as_ref().expect("checked by schema"), &grid, "/alpha")?;
    let cost = doc.cost.unwrap_or_default();
    let res = iron(&alpha, &grid, &s.iron)?;
    let q = optimal_q(&res.alpha_bar, &cost);
    let report = verify_ironing(&alpha, &res, &grid, s.method, &cost, CHECK_TOL)?;
    let mut warnings = Vec::new();
    if !report.all_passed() {
        warnings.push("independent verification of the ironing failed; see diagnostics.verification".to_string());
    }
    let mut table = Table::new(&grid);
    table.column("alpha", &alpha);
    table.column("alpha_bar", &res.alpha_bar);
    table.column("q", &q);
    table.cells(&res.partition);
    let outputs = json!({
        "alpha_bar": gf(&res.alpha_bar),
        "lambda": lambda_json(&res.lambda, &grid),
        "partition": partition_json(&res.partition, &grid),
        "q": gf(&q),
    });
    let diagnostics = json!({
        "objective": res.objective,
        "sweeps": res.sweeps,
        "kkt": { "min_upper_delta": res.kkt.min_upper_delta, "max_comp_slack": res.kkt.max_comp_slack },
        "verification": serde_json::to_value(&report).expect("report serializes"),
    });
    Ok((grid, outputs, diagnostics, warnings, table))
}

fn run_access(doc: &InstanceDocument, s: &Settings) -> Result<ModeOutput, CliError> {
    let grid = doc.grid()?;
    let alphas = functions(doc.alphas.as_deref().expect("checked by schema"), &grid, "alphas")?;
    let cost = doc.cost.unwrap_or_default();
    let res = solve_access(&alphas, &grid, &cost, &s.iron)?;
    let base = no_access_baseline(&alphas, &grid, &s.iron)?;
    let q0 = optimal_q(&base, &cost);
    let ones = vec![GridFunction::constant(grid.shape(), 1.0); grid.dims()];
    let baseline_objective = access_objective(&alphas, &q0, &ones, &grid, &cost);
    let objective = access_objective(&alphas, &res.q_star, &res.eta, &grid, &cost);
    let mut table = Table::new(&grid);
    for (i, a) in alphas.iter().enumerate() {
        table.column(format!("alpha{i}"), a);
    }
    for (i, a) in res.alphas_tilde.iter().enumerate() {
        table.column(format!("alpha_tilde{i}"), a);
    }
    table.column("q", &res.q_star);
    for (i, e) in res.eta.iter().enumerate() {
        table.column(format!("eta{i}"), e);
    }
    table.cells(&res.partition);
    let outputs = json!({
        "alphas_tilde": gfs(&res.alphas_tilde),
        "lambda": lambda_json(&res.lambda, &grid),
        "q": gf(&res.q_star),
        "eta": gfs(&res.eta),
        "partition": partition_json(&res.partition, &grid),
        "free_levels": serde_json::to_value(&res.free_levels).expect("levels serialize"),
        "no_access_alpha_bar": gf(&base),
    });
    let diagnostics = json!({
        "objective": objective,
        "dual_objective": res.objective,
        "no_access_objective": baseline_objective,
        "sweeps": res.sweeps,
        "non_unique_entries": res.non_unique.len(),
    });
    Ok((grid, outputs, diagnostics, Vec::new(), table))
}

fn run_goods(doc: &InstanceDocument, s: &Settings) -> Result<ModeOutput, CliError> {
    let cost = doc.cost.unwrap_or_default();
    let (spec, mr) = match (&doc.values, &doc.value_functions) {
        (Some(values), _) => {
            let grid = doc.grid()?;
            let values = functions(values, &grid, "values")?;
            let spec = GoodsSpec::new_unchecked(grid, values, cost)?;
            let mr = marginal_revenue(&spec);
            (spec, mr)
        }
        (None, Some(specs)) => {
            let fs = specs
                .iter()
                .enumerate()
                .map(|(k, f)| function(f, &format!("/value_functions/{k}")))
                .collect::<Result<Vec<_>, _>>()?;
            let dims = fs.len();
            if let Some(k) = fs.iter().position(|(d, _)| *d != dims) {
                return Err(CliError::schema(&format!("/value_functions/{k}"), &format!("expected a function of {dims} variables")));
            }
            // The values are discretized on the dyadic grid, and the marginal
            // revenue is formed from the continuous formula before averaging.
            let problem = ContinuousProblem::new(dims, fs[0].1.clone(), s.level)?;
            let (grid, _) = dyadic_discretize(&problem)?;
            let values = fs
                .iter()
                .map(|(_, f)| discretize_fn(&problem, f))
                .collect::<ironkit::Result<Vec<_>>>()?;
            let mr = fs
                .iter()
                .enumerate()
                .map(|(i, (_, f))| discretize_fn(&problem, &continuous_marginal_revenue(&problem, f.clone(), i)))
                .collect::<ironkit::Result<Vec<_>>>()?;
            (GoodsSpec::new_unchecked(grid, values, cost)?, mr)
        }
        (None, None) => unreachable!("checked by schema"),
    };
    let out = goods_mechanism_with_mr(&spec, &mr, s.with_access, &s.iron)?;
    let ic = verify_ic_ir(&spec, &out, CHECK_TOL);
    let grid = spec.grid.clone();
    let mut table = Table::new(&grid);
    for (i, v) in spec.values.iter().enumerate() {
        table.column(format!("v{i}"), v);
    }
    for (i, m) in mr.iter().enumerate() {
        table.column(format!("mr{i}"), m);
    }
    table.column("q", &out.q);
    for (i, e) in out.eta.iter().enumerate() {
        table.column(format!("eta{i}"), e);
    }
    for (i, t) in out.transfers.iter().enumerate() {
        table.column(format!("t{i}"), t);
    }
    table.cells(&out.partition);
    let outputs = json!({
        "marginal_revenue": gfs(&mr),
        "ironed": gfs(&out.ironed),
        "q": gf(&out.q),
        "eta": gfs(&out.eta),
        "transfers": gfs(&out.transfers),
        "partition": partition_json(&out.partition, &grid),
        "profit": out.profit,
        "profit_virtual": out.profit_virtual,
    });
    let diagnostics = json!({ "sweeps": out.sweeps, "with_access": s.with_access, "incentives": ic_json(&ic) });
    Ok((grid, outputs, diagnostics, out.warnings, table))
}

fn run_contract(doc: &InstanceDocument, s: &Settings) -> Result<ModeOutput, CliError> {
    let grid = doc.grid()?;
    let costs = functions(doc.costs.as_deref().expect("checked by schema"), &grid, "costs")?;
    let production = doc.production.clone().expect("checked by schema");
    let spec = ContractSpec::new(grid.clone(), costs, production)?;
    let mc = marginal_cost(&spec);
    let out = contracting_solution(&spec, &s.iron)?;
    let ic = verify_ic_ir(&spec, &out, CHECK_TOL);
    let mut table = Table::new(&grid);
    for (i, c) in spec.costs.iter().enumerate() {
        table.column(format!("c{i}"), c);
    }
    table.column("mc", &mc);
    table.column("d", &out.q);
    for (i, t) in out.transfers.iter().enumerate() {
        table.column(format!("t{i}"), t);
    }
    table.cells(&out.partition);
    let outputs = json!({
        "marginal_cost": gf(&mc),
        "ironed": gfs(&out.ironed),
        "d": gf(&out.q),
        "transfers": gfs(&out.transfers),
        "partition": partition_json(&out.partition, &grid),
        "profit": out.profit,
        "profit_virtual": out.profit_virtual,
    });
    let diagnostics = json!({ "sweeps": out.sweeps, "incentives": ic_json(&ic) });
    Ok((grid, outputs, diagnostics, out.warnings, table))
}

fn run_sosd(doc: &InstanceDocument, s: &Settings) -> Result<ModeOutput, CliError> {
    let grid = doc.grid()?;
    let d = doc.distributions.as_ref().expect("checked by schema");
    let g = JointDistribution::new(grid.clone(), grid_function(&d.g, &grid, "/distributions/g")?)?;
    let f = JointDistribution::new(grid.clone(), grid_function(&d.f, &grid, "/distributions/f")?)?;
    let first = dominates(&g, &f, Order::First, DEFAULT_TOL)?;
    let second = dominates(&g, &f, Order::Second, DEFAULT_TOL)?;
    let battery = utility_battery(&g, &f, BATTERY_SIZE, s.seed, DEFAULT_TOL)?;
    let gb = survival_complement(&g).values;
    let fb = survival_complement(&f).values;
    let mut warnings = Vec::new();
    if battery.fault {
        warnings.push("a sampled utility ranks the pair against the dominance verdict".to_string());
    }
    let mut table = Table::new(&grid);
    table.column("pmf_g", g.pmf());
    table.column("pmf_f", f.pmf());
    table.column("g_bar", &gb);
    table.column("f_bar", &fb);
    let outputs = json!({
        "g_bar": gf(&gb),
        "f_bar": gf(&fb),
        "first_order": certificate_json(&first, &grid),
        "second_order": certificate_json(&second, &grid),
    });
    let diagnostics = json!({
        "battery": {
            "note": battery.note,
            "count": battery.gaps.len(),
            "seed": s.seed,
            "min_gap": battery.min_gap,
            "fault": battery.fault,
        },
    });
    Ok((grid, outputs, diagnostics, warnings, table))
}

fn run_dyadic(doc: &InstanceDocument, s: &Settings) -> Result<ModeOutput, CliError> {
    let (dims, f) = function(doc.function.as_ref().expect("checked by schema"), "/function")?;
    if s.level == 0 {
        return Err(CliError::schema("/options/n", "the level must be at least 1"));
    }
    let problem = ContinuousProblem::new(dims, f, s.level)?;
    let levels: Vec<u32> = (s.level.saturating_sub(2).max(1)..=s.level).collect();
    let study = convergence_study(&problem, &levels, &s.iron)?;
    let finest = study.levels.last().expect("at least one level");
    let grid = finest.grid.clone();
    let mut table = Table::new(&grid);
    table.column("alpha", &finest.alpha);
    table.column("alpha_bar", &finest.alpha_bar);
    let rows: Vec<Value> = study
        .rows
        .iter()
        .map(|r| json!({ "coarse": r.coarse, "fine": r.fine, "sup": r.sup, "l1": r.l1 }))
        .collect();
    let mut levels_json = Map::new();
    for l in &study.levels {
        levels_json.insert(l.level.to_string(), json!({ "sweeps": l.sweeps }));
    }
    let outputs = json!({
        "alpha": gf(&finest.alpha),
        "alpha_bar": gf(&finest.alpha_bar),
        "convergence": rows,
    });
    let diagnostics = json!({ "levels": levels_json, "decaying": study.decaying });
    let mut warnings = Vec::new();
    if !study.decaying {
        warnings.push("successive sup distances did not decrease".to_string());
    }
    Ok((grid, outputs, diagnostics, warnings, table))
}

/// Result entry for an instance that failed.
pub fn error_json(raw: Option<&Value>, err: &CliError) -> Value {
    let mut m = Map::new();
    m.insert("version".into(), json!(VERSION));
    if let Some(raw) = raw {
        m.insert("instance_sha256".into(), json!(digest(raw)));
    }
    let mut e = Map::new();
    e.insert("kind".into(), json!(err.kind()));
    e.insert("exit_code".into(), json!(err.exit_code()));
    e.insert("message".into(), json!(err.to_string()));
    if let CliError::Schema { path, .. } = err {
        e.insert("path".into(), json!(path));
    }
    m.insert("error".into(), Value::Object(e));
    Value::Object(m)
}

