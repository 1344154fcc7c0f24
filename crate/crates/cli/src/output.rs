//! Report envelopes and the three output formats.
//!
//! Every successful invocation emits one report. JSON wraps it in a
//! versioned envelope that echoes the resolved configuration; CSV emits a
//! documented header plus data rows behind a `# config` comment line; human
//! mode prints flat `key: value` lines. The timestamp is the only field
//! that varies between identical runs.

use clap::ValueEnum;
use serde_json::{json, Value};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
    Human,
}

// ----------
// Envelope
// ----------

fn unix_now() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// The versioned JSON envelope shared by all subcommands.
pub fn envelope(command: &str, config: &Value, result: &Value) -> Value {
    json!({
        "schema": 1,
        "command": command,
        "timestamp": unix_now(),
        "config": config,
        "result": result,
    })
}

// ----------
// Renderers
// ----------

/// Flat `key: value` walk of the config and result trees.
pub fn print_human(command: &str, config: &Value, result: &Value) {
    println!("codedmm {command}");
    println!("config:");
    print_tree(config, "  ");
    println!("result:");
    print_tree(result, "  ");
}

fn print_tree(v: &Value, prefix: &str) {
    match v {
        Value::Object(map) => {
            for (k, val) in map {
                match val {
                    Value::Object(_) => {
                        println!("{prefix}{k}:");
                        print_tree(val, &format!("{prefix}  "));
                    }
                    _ => {
                        let path = format!("{prefix}{k}");
                        print_leaf(&path, val);
                    }
                }
            }
        }
        other => print_leaf(prefix.trim_end(), other),
    }
}

fn print_leaf(path: &str, v: &Value) {
    match v {
        Value::Array(items) if items.len() > 16 => {
            println!("{path}: [{} values]", items.len())
        }
        other => println!("{path}: {other}"),
    }
}

/// CSV with the resolved config on a leading comment line. The column
/// order is fixed by each subcommand's header and never reordered.
pub fn print_csv(config: &Value, header: &str, rows: &[String]) {
    println!(
        "# config {}",
        serde_json::to_string(config).expect("config serialization")
    );
    println!("{header}");
    for row in rows {
        println!("{row}");
    }
}
