//! Command-line front end for `ironkit`: JSON instances in, deterministic
//! JSON results and optional CSV plot rows out.

pub mod error;
pub mod instance;
pub mod render;
pub mod run;

use std::io::Read;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde_json::Value;

pub use error::CliError;
pub use instance::{parse_instance, InstanceDocument, Mode};
pub use run::{run, Overrides, Solved, Table};

/// Environment variable naming the fixture directory.
pub const FIXTURES_ENV: &str = "IRONKIT_FIXTURES";

pub fn fixture_dir() -> PathBuf {
    std::env::var_os(FIXTURES_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures"))
}

/// Reads the instance text: `-` is stdin, an existing path is read as is,
/// anything else is looked up in the fixture directory (with or without `.json`).
pub fn read_input(name: &str) -> Result<String, CliError> {
    if name == "-" {
        let mut text = String::new();
        std::io::stdin()
            .read_to_string(&mut text)
            .map_err(|e| CliError::Usage(format!("cannot read stdin: {e}")))?;
        return Ok(text);
    }
    let dir = fixture_dir();
    let candidates = [PathBuf::from(name), dir.join(name), dir.join(format!("{name}.json"))];
    let path = candidates
        .iter()
        .find(|p| p.is_file())
        .ok_or_else(|| CliError::Usage(format!("no instance file or fixture named {name:?} (fixtures in {})", dir.display())))?;
    std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))
}

/// Outcome of solving one input text.
#[derive(Debug)]
pub struct Execution {
    /// Rendered result document, or an array of them for a batch. Empty
    /// when a single instance failed.
    pub stdout: String,
    /// One table per solved instance; `None` where the instance failed.
    pub tables: Vec<Option<Table>>,
    pub errors: Vec<CliError>,
    pub batch: bool,
}

impl Execution {
    /// Largest exit code among the failures, 0 when all succeeded.
    pub fn exit_code(&self) -> i32 {
        self.errors.iter().map(CliError::exit_code).max().unwrap_or(0)
    }
}

/// Parses and solves every instance in `text`. Batch members are solved in
/// parallel; results keep the input order.
pub fn execute(text: &str, overrides: &Overrides) -> Execution {
    let docs = match instance::parse_documents(text) {
        Ok(d) => d,
        Err(e) => {
            return Execution {
                stdout: String::new(),
                tables: Vec::new(),
                errors: vec![e],
                batch: false,
            }
        }
    };
    let batch = text.trim_start().starts_with('[');
    let solved: Vec<(Value, Result<Solved, CliError>)> = docs
        .into_par_iter()
        .map(|(raw, doc)| {
            let out = doc.and_then(|d| run(&raw, &d, overrides));
            (raw, out)
        })
        .collect();
    let mut documents = Vec::with_capacity(solved.len());
    let mut tables = Vec::with_capacity(solved.len());
    let mut errors = Vec::new();
    for (raw, out) in solved {
        match out {
            Ok(s) => {
                documents.push(s.document);
                tables.push(Some(s.table));
            }
            Err(e) => {
                documents.push(run::error_json(Some(&raw), &e));
                tables.push(None);
                errors.push(e);
            }
        }
    }
    let stdout = if batch {
        render::to_json(&Value::Array(documents))
    } else if errors.is_empty() {
        render::to_json(&documents[0])
    } else {
        String::new()
    };
    Execution {
        stdout,
        tables,
        errors,
        batch,
    }
}

/// Writes `table` as CSV with floats in the same 17-digit form as the JSON.
pub fn write_csv(path: &Path, table: &Table) -> Result<(), CliError> {
    let io = |e: csv::Error| CliError::Usage(format!("cannot write {}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(&table.header).map_err(io)?;
    for row in &table.rows {
        w.write_record(row.iter().map(|v| format!("{v:.16e}"))).map_err(io)?;
    }
    w.flush().map_err(|e| CliError::Usage(format!("cannot write {}: {e}", path.display())))
}

/// Path of the CSV for batch member `k`: `plot.csv` becomes `plot.k.csv`.
pub fn batch_csv_path(path: &Path, k: usize) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}.{k}.{}", ext.to_string_lossy()),
        None => format!("{stem}.{k}"),
    };
    path.with_file_name(name)
}
