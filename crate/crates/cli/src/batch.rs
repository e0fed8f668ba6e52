//! Batch manifests and the parallel runner.
//!
//! ```toml
//! out = "results"
//!
//! [[scenario]]
//! name = "n50-l0.2"
//! file = "default.scn"             # optional, relative to the manifest
//! overrides = { n_nodes = 50, lambda = 0.2 }
//! seeds = { first = 1, count = 10 } # or an explicit list: [1, 2, 3]
//! variants = ["lalarpl", "minhop", "random"]
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Deserialize;

use lln_balance::protocol::Variant;
use lln_balance::simcore::{run_scenario, ScenarioConfig};

use crate::scenario::{apply, parse_scenario};
use crate::table::{aggregate_table, results_table, RunRecord};
use crate::CliError;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestFile {
    out: Option<PathBuf>,
    #[serde(rename = "scenario", default)]
    scenarios: Vec<EntryFile>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum SeedSpec {
    List(Vec<u64>),
    Range { first: u64, count: u64 },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EntryFile {
    name: String,
    file: Option<PathBuf>,
    #[serde(default)]
    overrides: BTreeMap<String, toml::Value>,
    seeds: SeedSpec,
    #[serde(default)]
    variants: Vec<String>,
}

/// One named scenario with the seeds and variants to run it under.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub name: String,
    pub config: ScenarioConfig,
    pub seeds: Vec<u64>,
    pub variants: Vec<Variant>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub out: PathBuf,
    pub scenarios: Vec<ManifestEntry>,
}

impl RunManifest {
    pub fn job_count(&self) -> usize {
        self.scenarios
            .iter()
            .map(|s| s.seeds.len() * s.variants.len())
            .sum()
    }
}

fn value_text(v: &toml::Value) -> Option<String> {
    match v {
        toml::Value::String(s) => Some(s.clone()),
        toml::Value::Integer(i) => Some(i.to_string()),
        toml::Value::Float(f) => Some(f.to_string()),
        toml::Value::Boolean(b) => Some(b.to_string()),
        _ => None,
    }
}

/// Parses a manifest. Relative paths resolve against `base`.
pub fn parse_manifest_str(text: &str, base: &Path) -> Result<RunManifest, CliError> {
    let file: ManifestFile =
        toml::from_str(text).map_err(|e| CliError::Config(format!("manifest: {e}")))?;
    if file.scenarios.is_empty() {
        return Err(CliError::Config("manifest lists no [[scenario]]".into()));
    }
    let mut seen = BTreeSet::new();
    let mut scenarios = Vec::new();
    for entry in file.scenarios {
        let ctx = |m: String| CliError::Config(format!("scenario `{}`: {m}", entry.name));
        if !seen.insert(entry.name.clone()) {
            return Err(ctx("duplicate scenario name".into()));
        }
        let mut config = match &entry.file {
            Some(f) => parse_scenario(&base.join(f)).map_err(|e| ctx(e.to_string()))?,
            None => ScenarioConfig::default(),
        };
        for (key, value) in &entry.overrides {
            let text = value_text(value)
                .ok_or_else(|| ctx(format!("`{key}`: override must be a number, string or boolean")))?;
            apply(&mut config, key, &text).map_err(|m| ctx(format!("`{key}`: {m}")))?;
        }
        config.validate().map_err(|e| ctx(e.to_string()))?;
        let seeds: Vec<u64> = match entry.seeds {
            SeedSpec::List(v) => v,
            SeedSpec::Range { first, count } => (first..first + count).collect(),
        };
        if seeds.is_empty() {
            return Err(ctx("seed list is empty".into()));
        }
        if seeds.iter().collect::<BTreeSet<_>>().len() != seeds.len() {
            return Err(ctx("seed list has duplicates".into()));
        }
        let variants = if entry.variants.is_empty() {
            vec![config.variant()]
        } else {
            entry
                .variants
                .iter()
                .map(|v| v.parse::<Variant>().map_err(&ctx))
                .collect::<Result<Vec<_>, _>>()?
        };
        scenarios.push(ManifestEntry {
            name: entry.name,
            config,
            seeds,
            variants,
        });
    }
    Ok(RunManifest {
        out: base.join(file.out.unwrap_or_else(|| PathBuf::from("results"))),
        scenarios,
    })
}

pub fn parse_manifest(path: &Path) -> Result<RunManifest, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_manifest_str(&text, base)
}

/// Runs every (scenario, variant, seed) combination, in parallel, and
/// returns the records sorted by scenario name, variant and seed.
pub fn run_all(manifest: &RunManifest) -> Vec<RunRecord> {
    let jobs: Vec<(&ManifestEntry, Variant, u64)> = manifest
        .scenarios
        .iter()
        .flat_map(|s| {
            s.variants
                .iter()
                .flat_map(move |v| s.seeds.iter().map(move |seed| (s, *v, *seed)))
        })
        .collect();
    let mut records: Vec<RunRecord> = jobs
        .par_iter()
        .map(|(entry, variant, seed)| {
            let cfg = entry.config.clone().with_seed(*seed).with_variant(*variant);
            RunRecord {
                scenario: entry.name.clone(),
                variant: *variant,
                seed: *seed,
                n_nodes: cfg.n_nodes,
                lambda: cfg.lambda,
                outcome: run_scenario(&cfg).map(|o| o.report).map_err(|e| e.to_string()),
            }
        })
        .collect();
    records.sort_by(|a, b| {
        (&a.scenario, a.variant, a.seed).cmp(&(&b.scenario, b.variant, b.seed))
    });
    records
}

#[derive(Debug, Clone)]
pub struct BatchSummary {
    pub results_path: PathBuf,
    pub aggregate_path: PathBuf,
    pub runs: usize,
    /// (scenario, variant, seed, error) of each failed run.
    pub failures: Vec<(String, Variant, u64, String)>,
}

/// Runs the manifest and writes `results.csv` and `aggregate.csv` into
/// its output directory.
pub fn run_batch(manifest: &RunManifest) -> Result<BatchSummary, CliError> {
    let records = run_all(manifest);
    fs::create_dir_all(&manifest.out)?;
    let results = results_table(&records);
    let aggregate = aggregate_table(&results)?;
    let results_path = manifest.out.join("results.csv");
    let aggregate_path = manifest.out.join("aggregate.csv");
    fs::write(&results_path, results.to_csv_string())?;
    fs::write(&aggregate_path, aggregate.to_csv_string())?;
    let failures = records
        .iter()
        .filter_map(|r| {
            r.outcome
                .as_ref()
                .err()
                .map(|e| (r.scenario.clone(), r.variant, r.seed, e.clone()))
        })
        .collect();
    Ok(BatchSummary {
        results_path,
        aggregate_path,
        runs: records.len(),
        failures,
    })
}
