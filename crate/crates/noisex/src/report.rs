//! Comparison tables: one row per environment assignment, one column per
//! technique, cells are means over seeds. The best cell of each row is
//! flagged, ties included.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::experiment::{ResultTable, RunResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Markdown,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "markdown" | "md" => Ok(Format::Markdown),
            _ => Err(Error::Config(format!("unknown table format {s:?} (csv, markdown)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    MacroF1,
    NoiseF1,
}

impl Metric {
    pub fn of(self, r: &RunResult) -> f64 {
        match self {
            Metric::MacroF1 => r.macro_f1,
            Metric::NoiseF1 => r.noise_f1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Metric::MacroF1 => "macro_f1",
            Metric::NoiseF1 => "noise_f1",
        }
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "macro_f1" | "macro" => Ok(Metric::MacroF1),
            "noise_f1" | "noise" => Ok(Metric::NoiseF1),
            _ => Err(Error::Config(format!("unknown metric {s:?} (macro_f1, noise_f1)"))),
        }
    }
}

/// Seed means for one assignment row, in technique order.
pub fn row_means(table: &ResultTable, row: usize, metric: Metric) -> Vec<f64> {
    let a = table.assignments[row];
    table.techniques.iter().map(|&t| table.mean(a, t, |r| metric.of(r)).unwrap_or(f64::NAN)).collect()
}

/// Indices of the maximal entries.
pub fn best_of(values: &[f64]) -> Vec<usize> {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (0..values.len()).filter(|&i| values[i] == max).collect()
}

pub fn emit_table(table: &ResultTable, format: Format, metric: Metric) -> Result<String> {
    table.check_complete()?;
    if table.rows.is_empty() {
        return Err(Error::IncompleteTable("no results".into()));
    }
    let names: Vec<String> = table.techniques.iter().map(|t| t.to_string()).collect();
    let mut out = String::new();
    match format {
        Format::Csv => {
            let _ = writeln!(out, "train,test,{},best", names.join(","));
        }
        Format::Markdown => {
            let _ = writeln!(out, "| train | test | {} |", names.join(" | "));
            let _ = writeln!(out, "|---|---|{}", "---:|".repeat(names.len()));
        }
    }
    for (i, a) in table.assignments.iter().enumerate() {
        let means = row_means(table, i, metric);
        let best = best_of(&means);
        match format {
            Format::Csv => {
                let cells: Vec<String> = means.iter().map(|m| format!("{m:.6}")).collect();
                let flags: Vec<&str> = best.iter().map(|&b| names[b].as_str()).collect();
                let _ = writeln!(out, "{},{},{},{}", a.train, a.test, cells.join(","), flags.join("|"));
            }
            Format::Markdown => {
                let cells: Vec<String> = means
                    .iter()
                    .enumerate()
                    .map(|(j, m)| if best.contains(&j) { format!("**{m:.4}**") } else { format!("{m:.4}") })
                    .collect();
                let _ = writeln!(out, "| {} | {} | {} |", a.train, a.test, cells.join(" | "));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use noisex_core::{NoiseEnvironment as Env, TechniqueKind as K};

    fn row(train: Env, test: Env, technique: K, seed: u64, f1: f64) -> RunResult {
        RunResult { train, test, technique, seed, macro_f1: f1, noise_f1: 1.0 - f1, best_epoch: 1, eta: None }
    }

    #[test]
    fn single_cell() {
        let t = ResultTable::from_rows(vec![row(Env::N1, Env::N1, K::NoiseExposure, 0, 0.5)]);
        let csv = emit_table(&t, Format::Csv, Metric::MacroF1).unwrap();
        assert_eq!(csv, "train,test,NE,best\nN1,N1,0.500000,NE\n");
    }

    #[test]
    fn best_and_ties_flagged() {
        let rows = vec![
            row(Env::N1, Env::N2, K::Softmax, 0, 0.3),
            row(Env::N1, Env::N2, K::NoiseExposure, 0, 0.7),
            row(Env::N1, Env::N2, K::FreeEnergy, 0, 0.5),
            row(Env::N2, Env::N1, K::Softmax, 0, 0.5),
            row(Env::N2, Env::N1, K::NoiseExposure, 0, 0.5),
            row(Env::N2, Env::N1, K::FreeEnergy, 0, 0.25),
        ];
        let t = ResultTable::from_rows(rows);
        let md = emit_table(&t, Format::Markdown, Metric::MacroF1).unwrap();
        let lines: Vec<&str> = md.lines().collect();
        assert_eq!(lines[0], "| train | test | SM | NE | FE |");
        assert_eq!(lines[2], "| N1 | N2 | 0.3000 | **0.7000** | 0.5000 |");
        assert_eq!(lines[3], "| N2 | N1 | **0.5000** | **0.5000** | 0.2500 |");
        let csv = emit_table(&t, Format::Csv, Metric::MacroF1).unwrap();
        assert!(csv.ends_with("N2,N1,0.500000,0.500000,0.250000,SM|NE\n"), "{csv}");
        let noise = emit_table(&t, Format::Csv, Metric::NoiseF1).unwrap();
        assert!(noise.contains("N1,N2,0.700000,0.300000,0.500000,SM\n"), "{noise}");
    }

    #[test]
    fn means_over_seeds() {
        let seeds = [0.2, 0.9, 0.4];
        let rows =
            seeds.iter().enumerate().map(|(s, &f)| row(Env::N3, Env::N3, K::AdditionalClass, s as u64, f)).collect();
        let t = ResultTable::from_rows(rows);
        let m = row_means(&t, 0, Metric::MacroF1)[0];
        assert!((m - 0.5).abs() < 1e-15);
    }

    #[test]
    fn incomplete_is_an_error() {
        let t = ResultTable::from_rows(vec![
            row(Env::N1, Env::N1, K::Softmax, 0, 0.1),
            row(Env::N1, Env::N1, K::NoiseExposure, 1, 0.2),
        ]);
        assert!(matches!(emit_table(&t, Format::Csv, Metric::MacroF1), Err(Error::IncompleteTable(_))));
        let empty = ResultTable::from_rows(vec![]);
        assert!(emit_table(&empty, Format::Markdown, Metric::MacroF1).is_err());
    }
}
