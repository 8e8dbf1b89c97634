//! Deterministic JSON rendering with 17 significant digits for every float.

use std::fmt::Write;

use serde_json::Value;

/// Renders `value` with two-space indentation. Floats use `{:.16e}`, so each
/// prints with 17 significant digits and parses back to the same bits.
pub fn to_json(value: &Value) -> String {
    let mut out = String::new();
    write_value(&mut out, value, 0);
    out.push('\n');
    out
}

fn write_value(out: &mut String, value: &Value, depth: usize) {
    match value {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if n.is_f64() {
                let _ = write!(out, "{:.16e}", n.as_f64().unwrap_or(f64::NAN));
            } else {
                let _ = write!(out, "{n}");
            }
        }
        Value::String(s) => out.push_str(&serde_json::to_string(s).expect("strings serialize")),
        Value::Array(items) => {
            // numeric arrays stay on one line
            if items.iter().all(|v| matches!(v, Value::Number(_))) {
                out.push('[');
                for (k, v) in items.iter().enumerate() {
                    if k > 0 {
                        out.push_str(", ");
                    }
                    write_value(out, v, depth + 1);
                }
                out.push(']');
                return;
            }
            out.push('[');
            for (k, v) in items.iter().enumerate() {
                out.push_str(if k > 0 { ",\n" } else { "\n" });
                indent(out, depth + 1);
                write_value(out, v, depth + 1);
            }
            if !items.is_empty() {
                out.push('\n');
                indent(out, depth);
            }
            out.push(']');
        }
        Value::Object(map) => {
            out.push('{');
            for (k, (key, v)) in map.iter().enumerate() {
                out.push_str(if k > 0 { ",\n" } else { "\n" });
                indent(out, depth + 1);
                out.push_str(&serde_json::to_string(key).expect("strings serialize"));
                out.push_str(": ");
                write_value(out, v, depth + 1);
            }
            if !map.is_empty() {
                out.push('\n');
                indent(out, depth);
            }
            out.push('}');
        }
    }
}

fn indent(out: &mut String, depth: usize) {
    for _ in 0..depth {
        out.push_str("  ");
    }
}
