//! Long-format plot data from a results table.

use crate::scenario::suggest;
use crate::table::{Table, METRIC_COLUMNS, NA};
use crate::CliError;

pub const PLOT_COLUMNS: &[&str] = &["scenario", "variant", "lambda", "n_nodes", "seed", "metric", "value"];

/// One row per successful run with a value for `metric`. With `group_by`,
/// rows are stably sorted by that column first (numerically when it
/// parses).
pub fn emit_plot_data(results: &Table, metric: &str, group_by: Option<&str>) -> Result<Table, CliError> {
    if !METRIC_COLUMNS.contains(&metric) {
        let hint = suggest(metric, METRIC_COLUMNS)
            .map(|m| format!("did you mean `{m}`? "))
            .unwrap_or_default();
        return Err(CliError::Config(format!(
            "unknown metric `{metric}`; {hint}valid metrics: {}",
            METRIC_COLUMNS.join(", ")
        )));
    }
    let col = |name: &str| {
        results
            .column(name)
            .ok_or_else(|| CliError::Data(format!("results table has no `{name}` column")))
    };
    let keys = [col("scenario")?, col("variant")?, col("lambda")?, col("n_nodes")?, col("seed")?];
    let (c_status, c_metric) = (col("status")?, col(metric)?);

    let mut out = Table::new(PLOT_COLUMNS);
    for row in &results.rows {
        if row[c_status] != "ok" || row[c_metric] == NA || row[c_metric].is_empty() {
            continue;
        }
        let mut cells: Vec<String> = keys.iter().map(|&k| row[k].clone()).collect();
        cells.push(metric.to_string());
        cells.push(row[c_metric].clone());
        out.rows.push(cells);
    }
    if let Some(g) = group_by {
        let k = out.column(g).ok_or_else(|| {
            CliError::Config(format!(
                "cannot group by `{g}`; choose one of {}",
                PLOT_COLUMNS.join(", ")
            ))
        })?;
        out.rows.sort_by(|a, b| match (a[k].parse::<f64>(), b[k].parse::<f64>()) {
            (Ok(x), Ok(y)) => x.total_cmp(&y),
            _ => a[k].cmp(&b[k]),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn results() -> Table {
        let mut t = Table::new(&["scenario", "variant", "seed", "n_nodes", "lambda", "status", "pdr", "aeed", "altn"]);
        t.rows.push(["b", "lalarpl", "1", "100", "0.2", "ok", "0.9", "NA", "1"].map(String::from).to_vec());
        t.rows.push(["a", "minhop", "1", "50", "0.1", "ok", "0.8", "0.01", "0.5"].map(String::from).to_vec());
        t.rows.push(["a", "minhop", "2", "50", "0.1", "failed", "", "", ""].map(String::from).to_vec());
        t
    }

    #[test]
    fn long_format_rows() {
        let p = emit_plot_data(&results(), "pdr", None).unwrap();
        assert_eq!(p.header, PLOT_COLUMNS);
        assert_eq!(p.rows.len(), 2);
        assert_eq!(p.rows[1], ["a", "minhop", "0.1", "50", "1", "pdr", "0.8"]);
        assert_eq!(emit_plot_data(&results(), "aeed", None).unwrap().rows.len(), 1);
        let grouped = emit_plot_data(&results(), "altn", Some("n_nodes")).unwrap();
        assert_eq!(grouped.rows[0][3], "50");
    }

    #[test]
    fn unknown_metric_suggests() {
        let e = emit_plot_data(&results(), "pdq", None).unwrap_err().to_string();
        assert!(e.contains("did you mean `pdr`"), "{e}");
        assert!(e.contains("jfi_energy"));
    }
}
