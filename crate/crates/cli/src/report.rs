use std::collections::BTreeMap;
use std::fmt::Write as _;

use fedsel_core::orchestrator::Table;

use crate::error::CliError;
use crate::manifest::Run;

pub const SUMMARY: &str = "summary.txt";

/// Writes each table as `<file>` and a plain-text `summary.txt` after it.
/// `notes` are prepended to the summary verbatim.
pub fn render_report(run: &mut Run, tables: &[(&str, &Table)], notes: &[String]) -> Result<(), CliError> {
    if tables.is_empty() {
        return Err(CliError::Core(fedsel_core::Error::Precondition(
            "report has no tables".into(),
        )));
    }
    let mut summary = String::new();
    for n in notes {
        let _ = writeln!(summary, "{n}");
    }
    for (file, table) in tables {
        run.write(file, table.to_csv().as_bytes())?;
        let _ = writeln!(summary, "{file}: {} rows", table.rows.len());
        summary += &summarize(table);
    }
    run.write(SUMMARY, summary.as_bytes())?;
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn group(table: &Table, keys: &[&str], value: &str) -> Option<BTreeMap<Vec<String>, Vec<f64>>> {
    let key_idx: Vec<usize> = keys.iter().map(|k| table.column(k)).collect::<Option<_>>()?;
    let v = table.column(value)?;
    let mut groups: BTreeMap<Vec<String>, Vec<f64>> = BTreeMap::new();
    for row in &table.rows {
        if let Some(x) = row[v].as_f64() {
            groups
                .entry(key_idx.iter().map(|&i| row[i].as_text()).collect())
                .or_default()
                .push(x);
        }
    }
    Some(groups)
}

/// Per-table digest: best cell per algorithm for federation grids, value
/// ranges per budget for EMD curves, mean power per budget for attacks.
pub fn summarize(table: &Table) -> String {
    let mut out = String::new();
    if let Some(groups) = group(table, &["algorithm", "cell"], "accuracy") {
        let mut best: BTreeMap<&str, (&str, f64, usize)> = BTreeMap::new();
        for (key, values) in &groups {
            let m = mean(values);
            let _ = writeln!(out, "  {:<8} {:<12} mean accuracy {m:.4} over {} runs", key[0], key[1], values.len());
            let e = best.entry(key[0].as_str()).or_insert((key[1].as_str(), m, values.len()));
            if m > e.1 {
                *e = (key[1].as_str(), m, values.len());
            }
        }
        for (alg, (cell, m, _)) in best {
            let _ = writeln!(out, "  best for {alg}: {cell} ({m:.4})");
        }
    } else if let Some(groups) = group(table, &["epsilon"], "emd") {
        for (key, values) in groups {
            let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let _ = writeln!(out, "  epsilon {:<6} emd range [{lo:.4}, {hi:.4}]", key[0]);
        }
    } else if let Some(groups) = group(table, &["epsilon"], "power_mean") {
        for (key, values) in groups {
            let _ = writeln!(out, "  epsilon {:<6} mean power {:.4}", key[0], mean(&values));
        }
    }
    out
}
