//! Result tables and their CSV form.
//!
//! Every number goes through [`fmt_f64`] before it is written, and
//! aggregates are computed from the written strings, so re-reading a
//! results file and aggregating it again reproduces the aggregate file
//! byte for byte.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use lln_balance::metrics::MetricsReport;
use lln_balance::protocol::Variant;

use crate::CliError;

/// Marker for a value that does not exist, such as AEED with no deliveries.
pub const NA: &str = "NA";

/// Nine significant digits, written as the shortest string that parses
/// back to the rounded value.
pub fn fmt_f64(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let rounded: f64 = format!("{x:.8e}").parse().expect("formatted float parses");
    let a = rounded.abs();
    if (1e-5..1e15).contains(&a) {
        format!("{rounded}")
    } else {
        format!("{rounded:e}")
    }
}

pub fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| NA.to_string(), fmt_f64)
}

fn fmt_list(xs: &[f64]) -> String {
    xs.iter().map(|x| fmt_f64(*x)).collect::<Vec<_>>().join(";")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), CliError> {
        let mut out = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
        out.write_record(&self.header)?;
        for row in &self.rows {
            out.write_record(row)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv output is UTF-8")
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self, CliError> {
        let mut rdr = csv::Reader::from_reader(r);
        let header = rdr.headers()?.iter().map(str::to_owned).collect();
        let mut rows = Vec::new();
        for rec in rdr.records() {
            rows.push(rec?.iter().map(str::to_owned).collect());
        }
        Ok(Self { header, rows })
    }
}

/// Outcome of one (scenario, variant, seed) run.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub scenario: String,
    pub variant: Variant,
    pub seed: u64,
    pub n_nodes: usize,
    pub lambda: f64,
    pub outcome: Result<MetricsReport, String>,
}

pub const KEY_COLUMNS: &[&str] = &["scenario", "variant", "seed", "n_nodes", "lambda", "status", "error"];

/// Scalar metrics, usable with `plotdata`.
pub const METRIC_COLUMNS: &[&str] = &[
    "pdr",
    "packets_sent",
    "packets_received",
    "packets_dropped",
    "packets_in_flight",
    "drops_buffer_full",
    "drops_link_loss",
    "drops_no_route",
    "drops_node_dead",
    "mean_throughput",
    "mean_weighted_throughput",
    "jfi_throughput",
    "aeed",
    "mean_energy",
    "jfi_energy",
    "altn",
    "deaths",
];

pub const LIST_COLUMNS: &[&str] = &[
    "throughput_per_node",
    "weighted_throughput_per_node",
    "energy_per_node",
    "death_times",
];

/// Metrics summarized per scenario and variant.
pub const AGGREGATED: &[&str] = &[
    "pdr",
    "mean_throughput",
    "mean_weighted_throughput",
    "jfi_throughput",
    "aeed",
    "mean_energy",
    "jfi_energy",
    "altn",
];

fn metric_cells(r: &MetricsReport) -> Vec<String> {
    let d = &r.drops;
    vec![
        fmt_f64(r.pdr),
        r.packets_sent.to_string(),
        r.packets_received.to_string(),
        r.packets_dropped.to_string(),
        r.packets_in_flight.to_string(),
        d.buffer_full.to_string(),
        d.link_loss.to_string(),
        d.no_route.to_string(),
        d.node_dead.to_string(),
        fmt_f64(r.mean_throughput()),
        fmt_f64(r.mean_weighted_throughput()),
        fmt_f64(r.jfi_throughput),
        fmt_opt(r.aeed),
        fmt_f64(r.mean_energy()),
        fmt_f64(r.jfi_energy),
        fmt_f64(r.altn),
        r.death_times.len().to_string(),
        fmt_list(&r.throughput_per_node),
        fmt_list(&r.weighted_throughput_per_node),
        fmt_list(&r.energy_per_node),
        fmt_list(&r.death_times),
    ]
}

/// One row per run, in the order given.
pub fn results_table(records: &[RunRecord]) -> Table {
    let header: Vec<&str> = KEY_COLUMNS
        .iter()
        .chain(METRIC_COLUMNS)
        .chain(LIST_COLUMNS)
        .copied()
        .collect();
    let mut t = Table::new(&header);
    for rec in records {
        let mut row = vec![
            rec.scenario.clone(),
            rec.variant.to_string(),
            rec.seed.to_string(),
            rec.n_nodes.to_string(),
            fmt_f64(rec.lambda),
        ];
        match &rec.outcome {
            Ok(report) => {
                row.push("ok".into());
                row.push(String::new());
                row.extend(metric_cells(report));
            }
            Err(e) => {
                row.push("failed".into());
                row.push(e.clone());
                row.extend(std::iter::repeat_n(String::new(), METRIC_COLUMNS.len() + LIST_COLUMNS.len()));
            }
        }
        t.rows.push(row);
    }
    t
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

/// Per (scenario, variant): run counts plus median and mean of each
/// aggregated metric over successful runs, from the formatted cells.
pub fn aggregate_table(results: &Table) -> Result<Table, CliError> {
    let col = |name: &str| {
        results
            .column(name)
            .ok_or_else(|| CliError::Data(format!("results table has no `{name}` column")))
    };
    let (c_scen, c_var, c_n, c_l, c_status) =
        (col("scenario")?, col("variant")?, col("n_nodes")?, col("lambda")?, col("status")?);
    let metric_cols: Vec<usize> = AGGREGATED.iter().map(|m| col(m)).collect::<Result<_, _>>()?;

    let mut header = vec!["scenario", "variant", "n_nodes", "lambda", "runs", "failed"];
    let names: Vec<String> = AGGREGATED
        .iter()
        .flat_map(|m| [format!("median_{m}"), format!("mean_{m}")])
        .collect();
    header.extend(names.iter().map(String::as_str));
    let mut out = Table::new(&header);

    let mut groups: BTreeMap<(String, String), Vec<&Vec<String>>> = BTreeMap::new();
    for row in &results.rows {
        groups
            .entry((row[c_scen].clone(), row[c_var].clone()))
            .or_default()
            .push(row);
    }
    for ((scenario, variant), rows) in groups {
        let ok: Vec<&&Vec<String>> = rows.iter().filter(|r| r[c_status] == "ok").collect();
        let mut cells = vec![
            scenario,
            variant,
            rows[0][c_n].clone(),
            rows[0][c_l].clone(),
            rows.len().to_string(),
            (rows.len() - ok.len()).to_string(),
        ];
        for &c in &metric_cols {
            let mut values = Vec::new();
            for r in &ok {
                let cell = &r[c];
                if cell == NA {
                    continue;
                }
                let v: f64 = cell
                    .parse()
                    .map_err(|_| CliError::Data(format!("`{cell}` in column {} is not a number", results.header[c])))?;
                values.push(v);
            }
            if values.is_empty() {
                cells.push(NA.into());
                cells.push(NA.into());
                continue;
            }
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            values.sort_by(f64::total_cmp);
            cells.push(fmt_f64(median(&values)));
            cells.push(fmt_f64(mean));
        }
        out.rows.push(cells);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use lln_balance::metrics::DropCounts;

    fn report(pdr: f64, aeed: Option<f64>) -> MetricsReport {
        MetricsReport {
            pdr,
            packets_sent: 10,
            packets_received: 9,
            packets_dropped: 1,
            packets_in_flight: 0,
            drops: DropCounts {
                link_loss: 1,
                ..DropCounts::default()
            },
            throughput_per_node: vec![1.0 / 3.0, 2.0],
            weighted_throughput_per_node: vec![0.1, 0.2],
            jfi_throughput: 0.9,
            aeed,
            energy_per_node: vec![1.5, 1.25],
            jfi_energy: 0.99,
            altn: 1.0,
            death_times: vec![],
        }
    }

    #[test]
    fn float_format() {
        assert_eq!(fmt_f64(0.0), "0");
        assert_eq!(fmt_f64(0.1), "0.1");
        assert_eq!(fmt_f64(1.0 / 3.0), "0.333333333");
        assert_eq!(fmt_f64(2.0 / 3.0), "0.666666667");
        assert_eq!(fmt_f64(123456789012.0), "123456789000");
        assert_eq!(fmt_f64(1.6e-6), "1.6e-6");
        assert_eq!(fmt_f64(-0.25), "-0.25");
        assert_eq!(fmt_f64(1e20), "1e20");
        assert_eq!(fmt_opt(None), "NA");
    }

    #[test]
    fn formatting_is_idempotent() {
        for x in [1.0 / 7.0, 1e-9 / 3.0, 12345.678901234, 0.999999999999, 5e300, -3.3e-12] {
            let once = fmt_f64(x);
            let back: f64 = once.parse().unwrap();
            assert_eq!(fmt_f64(back), once);
            assert!((back - x).abs() <= 5e-9 * x.abs());
        }
    }

    #[test]
    fn failed_rows_keep_their_shape() {
        let recs = vec![
            RunRecord {
                scenario: "a".into(),
                variant: Variant::Lalarpl,
                seed: 1,
                n_nodes: 50,
                lambda: 0.1,
                outcome: Ok(report(0.9, Some(0.01))),
            },
            RunRecord {
                scenario: "a".into(),
                variant: Variant::Lalarpl,
                seed: 2,
                n_nodes: 50,
                lambda: 0.1,
                outcome: Err("nodes unreachable, from the sink".into()),
            },
        ];
        let t = results_table(&recs);
        assert!(t.rows.iter().all(|r| r.len() == t.header.len()));
        let text = t.to_csv_string();
        assert!(text.contains("\"nodes unreachable, from the sink\""));
        assert!(text.contains("0.333333333;2"));
        assert_eq!(Table::read_csv(text.as_bytes()).unwrap(), t);

        let agg = aggregate_table(&t).unwrap();
        assert_eq!(agg.rows.len(), 1);
        let row = &agg.rows[0];
        assert_eq!(row[4], "2");
        assert_eq!(row[5], "1");
        assert_eq!(row[agg.column("median_pdr").unwrap()], "0.9");
    }

    #[test]
    fn aeed_na_is_skipped() {
        let recs: Vec<RunRecord> = [None, Some(0.02), Some(0.04)]
            .into_iter()
            .enumerate()
            .map(|(i, aeed)| RunRecord {
                scenario: "s".into(),
                variant: Variant::Random,
                seed: i as u64,
                n_nodes: 2,
                lambda: 0.2,
                outcome: Ok(report(0.5, aeed)),
            })
            .collect();
        let agg = aggregate_table(&results_table(&recs)).unwrap();
        assert_eq!(agg.rows[0][agg.column("median_aeed").unwrap()], "0.03");
        assert_eq!(agg.rows[0][agg.column("mean_aeed").unwrap()], "0.03");
    }
}
