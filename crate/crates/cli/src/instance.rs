//! Instance documents: parsing, schema checks and conversion to solver inputs.

use std::sync::Arc;

use ironkit::continuum::{registry, Polynomial, RealFn, REGISTRY_NAMES};
use ironkit::mech::Production;
use ironkit::{CostModel, GridFunction, Method, Phi, TypeGrid};
use serde::Deserialize;
use serde_json::Value;

use crate::error::CliError;

pub const VERSION: &str = "ironkit-1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Iron,
    Access,
    Goods,
    Contract,
    Sosd,
    Dyadic,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Iron => "iron",
            Mode::Access => "access",
            Mode::Goods => "goods",
            Mode::Contract => "contract",
            Mode::Sosd => "sosd",
            Mode::Dyadic => "dyadic",
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisSpec {
    pub points: Vec<f64>,
    /// Uniform when omitted.
    #[serde(default)]
    pub probs: Option<Vec<f64>>,
}

/// A continuous function on `[0,1]^N`: a built-in by name, optionally with
/// its arguments permuted, or a polynomial.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum FunctionSpec {
    Named {
        name: String,
        #[serde(default)]
        permute: Option<Vec<usize>>,
    },
    Polynomial {
        dims: usize,
        terms: Vec<(f64, Vec<u32>)>,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Distributions {
    pub g: Value,
    pub f: Value,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Options {
    pub tol: Option<f64>,
    pub max_sweeps: Option<usize>,
    pub phi: Option<Phi>,
    pub method: Option<Method>,
    pub with_access: Option<bool>,
    pub n: Option<u32>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceDocument {
    pub version: String,
    pub mode: Mode,
    #[serde(default)]
    pub axes: Option<Vec<AxisSpec>>,
    #[serde(default)]
    pub alpha: Option<Value>,
    #[serde(default)]
    pub alphas: Option<Vec<Value>>,
    #[serde(default)]
    pub values: Option<Vec<Value>>,
    #[serde(default)]
    pub value_functions: Option<Vec<FunctionSpec>>,
    #[serde(default)]
    pub costs: Option<Vec<Value>>,
    #[serde(default)]
    pub distributions: Option<Distributions>,
    #[serde(default)]
    pub function: Option<FunctionSpec>,
    #[serde(default)]
    pub cost: Option<CostModel>,
    #[serde(default)]
    pub production: Option<Production>,
    #[serde(default)]
    pub options: Options,
}

/// Parses one instance or a batch (a JSON array of instances).
pub fn parse_documents(text: &str) -> Result<Vec<(Value, Result<InstanceDocument, CliError>)>, CliError> {
    let value: Value = serde_json::from_str(text).map_err(|e| CliError::Parse(e.to_string()))?;
    Ok(match value {
        Value::Array(items) => items
            .into_iter()
            .enumerate()
            .map(|(k, v)| {
                let doc = from_value(&v).map_err(|e| e.under(&format!("/{k}")));
                (v, doc)
            })
            .collect(),
        v => {
            let doc = from_value(&v);
            vec![(v, doc)]
        }
    })
}

/// Parses a single instance document.
pub fn parse_instance(text: &str) -> Result<InstanceDocument, CliError> {
    let value: Value = serde_json::from_str(text).map_err(|e| CliError::Parse(e.to_string()))?;
    from_value(&value)
}

fn from_value(value: &Value) -> Result<InstanceDocument, CliError> {
    match value.get("version") {
        Some(Value::String(v)) if v == VERSION => {}
        Some(Value::String(v)) => return Err(CliError::Version(v.clone())),
        Some(_) => return Err(CliError::schema("/version", "expected a string")),
        None => return Err(CliError::schema("/version", "missing field")),
    }
    let doc: InstanceDocument = serde_path_to_error::deserialize(value).map_err(|e| {
        let pointer = pointer(e.path());
        CliError::schema(&pointer, &e.into_inner().to_string())
    })?;
    doc.check_fields()?;
    Ok(doc)
}

fn pointer(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        out.push('/');
        match seg {
            Segment::Seq { index } => out.push_str(&index.to_string()),
            Segment::Map { key } => out.push_str(&key.replace('~', "~0").replace('/', "~1")),
            Segment::Enum { variant } => out.push_str(variant),
            Segment::Unknown => out.push('?'),
        }
    }
    out
}

impl InstanceDocument {
    fn present(&self) -> Vec<&'static str> {
        let mut p = Vec::new();
        let mut add = |name, set: bool| {
            if set {
                p.push(name);
            }
        };
        add("axes", self.axes.is_some());
        add("alpha", self.alpha.is_some());
        add("alphas", self.alphas.is_some());
        add("values", self.values.is_some());
        add("value_functions", self.value_functions.is_some());
        add("costs", self.costs.is_some());
        add("distributions", self.distributions.is_some());
        add("function", self.function.is_some());
        add("cost", self.cost.is_some());
        add("production", self.production.is_some());
        p
    }

    /// Rejects payload fields that do not belong to the mode and reports
    /// missing required ones.
    fn check_fields(&self) -> Result<(), CliError> {
        // (required groups, each satisfied by any one of its names; optional names)
        let (required, optional): (&[&[&str]], &[&str]) = match self.mode {
            Mode::Iron => (&[&["axes"], &["alpha"]], &["cost"]),
            Mode::Access => (&[&["axes"], &["alphas"]], &["cost"]),
            Mode::Goods => (&[&["values", "value_functions"]], &["axes", "cost"]),
            Mode::Contract => (&[&["axes"], &["costs"], &["production"]], &[]),
            Mode::Sosd => (&[&["axes"], &["distributions"]], &[]),
            Mode::Dyadic => (&[&["function"]], &[]),
        };
        for name in self.present() {
            if !required.iter().any(|g| g.contains(&name)) && !optional.contains(&name) {
                return Err(CliError::schema(&format!("/{name}"), &format!("not used by mode {}", self.mode.name())));
            }
        }
        let present = self.present();
        for group in required {
            let hits = group.iter().filter(|n| present.contains(n)).count();
            if hits == 0 {
                return Err(CliError::schema(&format!("/{}", group[0]), "missing field"));
            }
            if hits > 1 {
                return Err(CliError::schema(&format!("/{}", group[1]), &format!("conflicts with /{}", group[0])));
            }
        }
        if self.mode == Mode::Goods && self.values.is_some() && self.axes.is_none() {
            return Err(CliError::schema("/axes", "missing field"));
        }
        if self.mode == Mode::Goods && self.value_functions.is_some() && self.axes.is_some() {
            return Err(CliError::schema("/axes", "value functions are discretized on a dyadic grid"));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<TypeGrid, CliError> {
        let axes = self.axes.as_ref().ok_or_else(|| CliError::schema("/axes", "missing field"))?;
        let axes = axes
            .iter()
            .map(|a| {
                let n = a.points.len();
                let probs = a.probs.clone().unwrap_or_else(|| vec![1.0 / n.max(1) as f64; n]);
                (a.points.clone(), probs)
            })
            .collect();
        TypeGrid::new(axes).map_err(|e| CliError::schema("/axes", &e.to_string()))
    }
}

/// Reads a row-major nested array whose depth and lengths match `grid`.
pub fn grid_function(value: &Value, grid: &TypeGrid, path: &str) -> Result<GridFunction, CliError> {
    let mut out = Vec::with_capacity(grid.len());
    flatten(value, grid.shape(), path, &mut out)?;
    GridFunction::new(grid.shape().to_vec(), out).map_err(|e| CliError::schema(path, &e.to_string()))
}

fn flatten(value: &Value, shape: &[usize], path: &str, out: &mut Vec<f64>) -> Result<(), CliError> {
    match (shape.split_first(), value) {
        (None, Value::Number(n)) => {
            out.push(n.as_f64().ok_or_else(|| CliError::schema(path, "not a finite number"))?);
            Ok(())
        }
        (None, _) => Err(CliError::schema(path, "expected a number")),
        (Some((&n, rest)), Value::Array(items)) => {
            if items.len() != n {
                return Err(CliError::schema(path, &format!("expected {n} entries, found {}", items.len())));
            }
            for (k, item) in items.iter().enumerate() {
                flatten(item, rest, &format!("{path}/{k}"), out)?;
            }
            Ok(())
        }
        (Some(_), _) => Err(CliError::schema(path, "expected an array")),
    }
}

/// Resolves a function spec to a callable and its dimension.
pub fn function(spec: &FunctionSpec, path: &str) -> Result<(usize, RealFn), CliError> {
    match spec {
        FunctionSpec::Named { name, permute } => {
            let named = registry(name).ok_or_else(|| {
                CliError::schema(&format!("{path}/name"), &format!("unknown function {name:?}; known: {}", REGISTRY_NAMES.join(", ")))
            })?;
            let Some(perm) = permute.clone() else {
                return Ok((named.dims, named.f));
            };
            let mut sorted = perm.clone();
            sorted.sort_unstable();
            if sorted != (0..named.dims).collect::<Vec<_>>() {
                return Err(CliError::schema(&format!("{path}/permute"), &format!("not a permutation of 0..{}", named.dims)));
            }
            let f = named.f;
            let g: RealFn = Arc::new(move |x: &[f64]| {
                let y: Vec<f64> = perm.iter().map(|&k| x[k]).collect();
                f(&y)
            });
            Ok((named.dims, g))
        }
        FunctionSpec::Polynomial { dims, terms } => {
            if *dims == 0 || terms.iter().any(|(_, e)| e.len() != *dims) {
                return Err(CliError::schema(&format!("{path}/terms"), "every term needs one exponent per dimension"));
            }
            let p = Polynomial { terms: terms.clone() };
            Ok((*dims, p.into_fn()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_BY_TWO: &str = r#"{"version":"ironkit-1","mode":"iron",
        "axes":[{"points":[0,1]},{"points":[0,1]}],"alpha":[[6,0],[0,6]]}"#;

    #[test]
    fn parses_a_minimal_iron_instance() {
        let doc = parse_instance(TWO_BY_TWO).unwrap();
        assert_eq!(doc.mode, Mode::Iron);
        let grid = doc.grid().unwrap();
        let a = grid_function(doc.alpha.as_ref().unwrap(), &grid, "/alpha").unwrap();
        assert_eq!(a.values(), &[6.0, 0.0, 0.0, 6.0]);
    }

    #[test]
    fn schema_errors_carry_a_pointer() {
        let bad_mode = TWO_BY_TWO.replace("\"iron\"", "\"polish\"");
        assert!(matches!(parse_instance(&bad_mode), Err(CliError::Schema { path, .. }) if path == "/mode"));

        let doc = parse_instance(&TWO_BY_TWO.replace("[[6,0],[0,6]]", "[[6,0,1],[0,6,1]]")).unwrap();
        let grid = doc.grid().unwrap();
        let err = grid_function(doc.alpha.as_ref().unwrap(), &grid, "/alpha").unwrap_err();
        assert!(matches!(err, CliError::Schema { path, .. } if path == "/alpha/0"));

        let extra = TWO_BY_TWO.replace("\"mode\"", "\"colour\":1,\"mode\"");
        assert!(matches!(parse_instance(&extra), Err(CliError::Schema { .. })));
        let wrong = TWO_BY_TWO.replace("\"alpha\"", "\"alphas\"");
        assert!(matches!(parse_instance(&wrong), Err(CliError::Schema { .. })));
        let opt = TWO_BY_TWO.replace("\"mode\"", "\"options\":{\"tol\":\"x\"},\"mode\"");
        assert!(matches!(parse_instance(&opt), Err(CliError::Schema { path, .. }) if path == "/options/tol"));
    }

    #[test]
    fn version_is_checked_first() {
        let v = TWO_BY_TWO.replace("ironkit-1", "ironkit-0");
        assert!(matches!(parse_instance(&v), Err(CliError::Version(_))));
        assert!(matches!(parse_instance("{"), Err(CliError::Parse(_))));
    }

    #[test]
    fn permuted_named_functions_swap_arguments() {
        let spec: FunctionSpec = serde_json::from_str(r#"{"name":"example4_v","permute":[1,0]}"#).unwrap();
        let (dims, f) = function(&spec, "/function").unwrap();
        let (_, g) = function(&FunctionSpec::Named { name: "example4_v".into(), permute: None }, "").unwrap();
        assert_eq!(dims, 2);
        assert_eq!(f(&[0.1, 0.3]), g(&[0.3, 0.1]));
        let bad: FunctionSpec = serde_json::from_str(r#"{"name":"example4_v","permute":[0,0]}"#).unwrap();
        assert!(function(&bad, "/function").is_err());
    }
}
