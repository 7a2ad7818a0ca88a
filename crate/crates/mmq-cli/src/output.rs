//! Deterministic delimited-text output: fixed column orders, floats with 17
//! significant digits, and single-writer file helpers.

use std::fs;
use std::path::{Path, PathBuf};

use crate::CliError;

/// Header of every estimate table (`compare`, `bcp`).
pub const RESULT_HEADER: &str =
    "policy,n,nu,alpha,replications,mean,stdError,truncationBound,ciLow95,ciHigh95";

/// Renders a float with 17 significant digits, the round-trip width of an
/// IEEE double. All numeric output funnels through here so reruns are
/// byte-comparable.
#[must_use]
pub fn float(x: f64) -> String {
    format!("{x:.16e}")
}

/// One row of an estimate table. `n` is a label because the Brownian
/// benchmark row carries `limit` instead of a number.
#[allow(clippy::too_many_arguments)]
#[must_use]
pub fn result_row(
    policy: &str,
    n: &str,
    nu: f64,
    alpha: f64,
    replications: u64,
    mean: f64,
    std_error: f64,
    truncation_bound: f64,
    ci95: (f64, f64),
) -> String {
    format!(
        "{policy},{n},{},{},{replications},{},{},{},{},{}",
        float(nu),
        float(alpha),
        float(mean),
        float(std_error),
        float(truncation_bound),
        float(ci95.0),
        float(ci95.1),
    )
}

/// A two-column `key,value` table; values are sanitized so rows stay
/// single-line and comma-free.
#[derive(Debug, Default)]
pub struct KeyValueRows {
    lines: Vec<String>,
}

impl KeyValueRows {
    /// An empty table.
    #[must_use]
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a float row.
    pub fn push_float(&mut self, key: &str, value: f64) {
        self.lines.push(format!("{key},{}", float(value)));
    }

    /// Adds a boolean row.
    pub fn push_bool(&mut self, key: &str, value: bool) {
        self.lines.push(format!("{key},{value}"));
    }

    /// Adds a text row, replacing commas and newlines to keep the shape.
    pub fn push_text(&mut self, key: &str, value: &str) {
        let clean: String =
            value.chars().map(|c| if c == ',' || c == '\n' { ';' } else { c }).collect();
        self.lines.push(format!("{key},{clean}"));
    }

    /// The rendered table with its header row.
    #[must_use]
    pub fn render(&self) -> String {
        let mut out = String::from("key,value\n");
        for line in &self.lines {
            out.push_str(line);
            out.push('\n');
        }
        out
    }
}

/// Writes `content` to `dir/name`, creating the directory if needed.
pub fn write_file(dir: &Path, name: &str, content: &str) -> Result<PathBuf, CliError> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))?;
    let path = dir.join(name);
    fs::write(&path, content)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip_through_seventeen_digits() {
        for x in [0.1, 1.0 / 3.0, 6.02e23, -4.9e-324, 0.0, 1e16 + 2.0] {
            assert_eq!(float(x).parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn result_rows_have_the_header_arity() {
        let row = result_row("cmu-star", "25", 1.0, 0.5, 2000, 52.7, 0.9, 1e-30, (50.9, 54.5));
        assert_eq!(row.split(',').count(), RESULT_HEADER.split(',').count());
        assert!(row.starts_with("cmu-star,25,"));
    }

    #[test]
    fn key_value_rows_stay_single_line() {
        let mut rows = KeyValueRows::new();
        rows.push_text("warning1", "alpha, not canonical\nsecond line");
        assert_eq!(rows.render(), "key,value\nwarning1,alpha; not canonical;second line\n");
    }
}
