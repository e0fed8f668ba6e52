//! Flat `key: value` scenario files.
//!
//! One or more `key: value` pairs per line, separated by commas; `#`
//! starts a comment. Absent keys keep their defaults, unknown keys are an
//! error. See [`KEYS`] for the full list.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use lln_balance::netmodel::Placement;
use lln_balance::protocol::Variant;
use lln_balance::simcore::ScenarioConfig;

/// Every accepted key, in documentation order.
pub const KEYS: &[&str] = &[
    "n_nodes",
    "area_width",
    "area_height",
    "sim_time",
    "lambda",
    "data_rate",
    "radio_range",
    "data_size",
    "dio_size",
    "dao_size",
    "dis_size",
    "dao_ack_size",
    "initial_energy",
    "p_tx",
    "p_rx",
    "p_idle",
    "p_sleep",
    "queue_capacity",
    "proc_delay",
    "loss_scale",
    "metric_dt",
    "lifetime_cap",
    "seed",
    "placement",
    "lqi_override",
    "ti_tau",
    "start_jitter",
    "sleep_ratio",
    "variant",
    "zeta",
    "batch_p",
    "min_parents",
    "max_parents",
    "invert_traffic_term",
    "dio_period",
    "alpha1",
    "alpha2",
    "delta",
    "gamma",
    "eta",
    "xi",
    "c1",
    "c2",
    "clamp_min",
    "clamp_max",
];

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioError {
    pub file: Option<PathBuf>,
    pub line: Option<usize>,
    pub key: Option<String>,
    pub message: String,
}

impl fmt::Display for ScenarioError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (&self.file, self.line) {
            (Some(p), Some(l)) => write!(f, "{}:{l}: ", p.display())?,
            (Some(p), None) => write!(f, "{}: ", p.display())?,
            (None, Some(l)) => write!(f, "line {l}: ")?,
            (None, None) => {}
        }
        if let Some(k) = &self.key {
            write!(f, "`{k}`: ")?;
        }
        f.write_str(&self.message)
    }
}

impl std::error::Error for ScenarioError {}

fn num<T: FromStr>(v: &str) -> Result<T, String> {
    v.parse()
        .map_err(|_| format!("`{v}` is not a valid {}", std::any::type_name::<T>()))
}

fn positive(v: &str) -> Result<f64, String> {
    let x: f64 = num(v)?;
    if x.is_finite() && x > 0.0 {
        Ok(x)
    } else {
        Err(format!("must be positive, got {v}"))
    }
}

fn non_negative(v: &str) -> Result<f64, String> {
    let x: f64 = num(v)?;
    if x.is_finite() && x >= 0.0 {
        Ok(x)
    } else {
        Err(format!("must be non-negative, got {v}"))
    }
}

fn unit(v: &str) -> Result<f64, String> {
    let x: f64 = num(v)?;
    if (0.0..=1.0).contains(&x) {
        Ok(x)
    } else {
        Err(format!("must be in [0, 1], got {v}"))
    }
}

fn finite(v: &str) -> Result<f64, String> {
    let x: f64 = num(v)?;
    if x.is_finite() {
        Ok(x)
    } else {
        Err(format!("must be finite, got {v}"))
    }
}

fn count<T: FromStr + PartialOrd + From<u8>>(v: &str) -> Result<T, String> {
    let x: T = num(v)?;
    if x >= T::from(1) {
        Ok(x)
    } else {
        Err(format!("must be at least 1, got {v}"))
    }
}

fn optional(v: &str, inner: fn(&str) -> Result<f64, String>) -> Result<Option<f64>, String> {
    if v == "none" {
        Ok(None)
    } else {
        inner(v).map(Some)
    }
}

/// Closest known key, if any is reasonably close.
pub fn suggest<'a>(word: &str, candidates: &[&'a str]) -> Option<&'a str> {
    candidates
        .iter()
        .map(|c| (strsim::jaro_winkler(word, c), *c))
        .filter(|(score, _)| *score > 0.8)
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, c)| c)
}

/// Sets one key. The error message does not repeat the key.
pub fn apply(cfg: &mut ScenarioConfig, key: &str, value: &str) -> Result<(), String> {
    let p = &mut cfg.protocol;
    let a = &mut p.automaton;
    match key {
        "n_nodes" => {
            let n: usize = num(value)?;
            if n < 2 {
                return Err(format!("must be at least 2 (sink plus one sensor), got {value}"));
            }
            cfg.n_nodes = n;
        }
        "area_width" => cfg.area.width = positive(value)?,
        "area_height" => cfg.area.height = positive(value)?,
        "sim_time" => cfg.sim_time = positive(value)?,
        "lambda" => cfg.lambda = positive(value)?,
        "data_rate" => cfg.data_rate = positive(value)?,
        "radio_range" => cfg.radio_range = positive(value)?,
        "data_size" => cfg.sizes.data = count(value)?,
        "dio_size" => cfg.sizes.dio = count(value)?,
        "dao_size" => cfg.sizes.dao = count(value)?,
        "dis_size" => cfg.sizes.dis = count(value)?,
        "dao_ack_size" => cfg.sizes.dao_ack = count(value)?,
        "initial_energy" => cfg.initial_energy = positive(value)?,
        "p_tx" => cfg.power.tx = non_negative(value)?,
        "p_rx" => cfg.power.rx = non_negative(value)?,
        "p_idle" => cfg.power.idle = non_negative(value)?,
        "p_sleep" => cfg.power.sleep = non_negative(value)?,
        "queue_capacity" => cfg.queue_capacity = count(value)?,
        "proc_delay" => cfg.proc_delay = non_negative(value)?,
        "loss_scale" => cfg.loss_scale = unit(value)?,
        "metric_dt" => cfg.metric_dt = positive(value)?,
        "lifetime_cap" => cfg.lifetime_cap = optional(value, positive)?,
        "seed" => cfg.seed = num(value)?,
        "placement" => {
            cfg.placement = match value {
                "connected" => Placement::Connected,
                "uniform" => Placement::Uniform,
                _ => return Err(format!("expected connected or uniform, got `{value}`")),
            }
        }
        "lqi_override" => cfg.lqi_override = optional(value, unit)?,
        "ti_tau" => cfg.ti_tau = positive(value)?,
        "start_jitter" => cfg.start_jitter = non_negative(value)?,
        "sleep_ratio" => cfg.sleep_ratio = unit(value)?,
        "variant" => p.variant = value.parse::<Variant>()?,
        "zeta" => p.zeta = unit(value)?,
        "batch_p" => p.batch_p = count(value)?,
        "min_parents" => p.min_parents = count(value)?,
        "max_parents" => p.max_parents = count(value)?,
        "invert_traffic_term" => p.invert_traffic_term = num(value)?,
        "dio_period" => p.dio_period = positive(value)?,
        "alpha1" => a.alpha1 = finite(value)?,
        "alpha2" => a.alpha2 = finite(value)?,
        "delta" => a.delta = finite(value)?,
        "gamma" => a.gamma = finite(value)?,
        "eta" => a.eta = finite(value)?,
        "xi" => a.xi = finite(value)?,
        "c1" => a.c1 = finite(value)?,
        "c2" => a.c2 = finite(value)?,
        "clamp_min" => a.clamp_min = unit(value)?,
        "clamp_max" => a.clamp_max = unit(value)?,
        _ => {
            let hint = suggest(key, KEYS)
                .map(|k| format!("; did you mean `{k}`?"))
                .unwrap_or_default();
            return Err(format!("unknown key{hint}"));
        }
    }
    Ok(())
}

/// Parses scenario text on top of the defaults.
pub fn parse_str(text: &str) -> Result<ScenarioConfig, ScenarioError> {
    let mut cfg = ScenarioConfig::default();
    let mut last_line = None;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        for pair in content.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let err = |key: Option<&str>, message: String| ScenarioError {
                file: None,
                line: Some(line_no),
                key: key.map(str::to_owned),
                message,
            };
            let Some((key, value)) = pair.split_once(':') else {
                return Err(err(None, format!("expected `key: value`, got `{pair}`")));
            };
            let (key, value) = (key.trim(), value.trim());
            if value.is_empty() {
                return Err(err(Some(key), "missing value".into()));
            }
            apply(&mut cfg, key, value).map_err(|m| err(Some(key), m))?;
            last_line = Some(line_no);
        }
    }
    cfg.validate().map_err(|e| ScenarioError {
        file: None,
        line: last_line,
        key: None,
        message: e.to_string(),
    })?;
    Ok(cfg)
}

pub fn parse_scenario(path: &Path) -> Result<ScenarioConfig, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|e| ScenarioError {
        file: Some(path.to_owned()),
        line: None,
        key: None,
        message: e.to_string(),
    })?;
    parse_str(&text).map_err(|e| ScenarioError {
        file: Some(path.to_owned()),
        ..e
    })
}

/// Applies `key=value` overrides, as given on the command line.
pub fn apply_overrides(cfg: &mut ScenarioConfig, sets: &[String]) -> Result<(), ScenarioError> {
    for s in sets {
        let err = |key: Option<&str>, message: String| ScenarioError {
            file: None,
            line: None,
            key: key.map(str::to_owned),
            message,
        };
        let (key, value) = s
            .split_once('=')
            .ok_or_else(|| err(None, format!("expected key=value, got `{s}`")))?;
        apply(cfg, key.trim(), value.trim()).map_err(|m| err(Some(key.trim()), m))?;
    }
    cfg.validate().map_err(|e| ScenarioError {
        file: None,
        line: None,
        key: None,
        message: e.to_string(),
    })
}

/// Renders every key with its current value, one per line, in a form
/// [`parse_str`] accepts.
pub fn render(cfg: &ScenarioConfig) -> String {
    let p = &cfg.protocol;
    let a = &p.automaton;
    let opt = |v: Option<f64>| v.map_or("none".to_string(), |x| x.to_string());
    let placement = match cfg.placement {
        Placement::Connected => "connected",
        Placement::Uniform => "uniform",
    };
    let values: Vec<String> = vec![
        cfg.n_nodes.to_string(),
        cfg.area.width.to_string(),
        cfg.area.height.to_string(),
        cfg.sim_time.to_string(),
        cfg.lambda.to_string(),
        cfg.data_rate.to_string(),
        cfg.radio_range.to_string(),
        cfg.sizes.data.to_string(),
        cfg.sizes.dio.to_string(),
        cfg.sizes.dao.to_string(),
        cfg.sizes.dis.to_string(),
        cfg.sizes.dao_ack.to_string(),
        cfg.initial_energy.to_string(),
        cfg.power.tx.to_string(),
        cfg.power.rx.to_string(),
        cfg.power.idle.to_string(),
        cfg.power.sleep.to_string(),
        cfg.queue_capacity.to_string(),
        cfg.proc_delay.to_string(),
        cfg.loss_scale.to_string(),
        cfg.metric_dt.to_string(),
        opt(cfg.lifetime_cap),
        cfg.seed.to_string(),
        placement.to_string(),
        opt(cfg.lqi_override),
        cfg.ti_tau.to_string(),
        cfg.start_jitter.to_string(),
        cfg.sleep_ratio.to_string(),
        p.variant.to_string(),
        p.zeta.to_string(),
        p.batch_p.to_string(),
        p.min_parents.to_string(),
        p.max_parents.to_string(),
        p.invert_traffic_term.to_string(),
        p.dio_period.to_string(),
        a.alpha1.to_string(),
        a.alpha2.to_string(),
        a.delta.to_string(),
        a.gamma.to_string(),
        a.eta.to_string(),
        a.xi.to_string(),
        a.c1.to_string(),
        a.c2.to_string(),
        a.clamp_min.to_string(),
        a.clamp_max.to_string(),
    ];
    debug_assert_eq!(values.len(), KEYS.len());
    KEYS.iter()
        .zip(values)
        .map(|(k, v)| format!("{k}: {v}\n"))
        .collect()
}
