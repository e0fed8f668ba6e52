//! Convergence harness: fixed-step L_R-P against a stationary environment.

use std::fmt::Write;

use lln_balance::automaton::{run_stationary_trial, StationaryEnvironment};
use lln_balance::rng::{rng_for, Stream};

use crate::table::fmt_f64;
use crate::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergeParams {
    pub alpha: f64,
    pub beta: f64,
    pub reward_probs: Vec<f64>,
    pub iterations: usize,
    pub first_seed: u64,
    pub seeds: u64,
    pub threshold: f64,
}

impl Default for ConvergeParams {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            beta: 0.05,
            reward_probs: vec![0.9, 0.2],
            iterations: 10_000,
            first_seed: 1,
            seeds: 100,
            threshold: 0.95,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedResult {
    pub seed: u64,
    pub terminal: Vec<f64>,
    pub p_optimal: f64,
    pub p_max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergeSummary {
    pub optimal_action: usize,
    pub per_seed: Vec<SeedResult>,
    pub passed: usize,
}

impl ConvergeSummary {
    pub fn pass_fraction(&self) -> f64 {
        self.passed as f64 / self.per_seed.len() as f64
    }

    pub fn median_p_optimal(&self) -> f64 {
        let mut v: Vec<f64> = self.per_seed.iter().map(|s| s.p_optimal).collect();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        if n % 2 == 1 {
            v[n / 2]
        } else {
            (v[n / 2 - 1] + v[n / 2]) / 2.0
        }
    }
}

pub fn validate(p: &ConvergeParams) -> Result<(), CliError> {
    for (name, v) in [("alpha", p.alpha), ("beta", p.beta), ("threshold", p.threshold)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(CliError::Config(format!("{name} must be in [0, 1], got {v}")));
        }
    }
    if p.seeds == 0 {
        return Err(CliError::Config("seeds must be at least 1".into()));
    }
    StationaryEnvironment::new(p.reward_probs.clone())
        .map_err(|e| CliError::Config(format!("reward_probs: {e}")))?;
    Ok(())
}

/// One stationary trial per seed, each on its own automaton stream.
pub fn converge(p: &ConvergeParams) -> Result<ConvergeSummary, CliError> {
    validate(p)?;
    let env = StationaryEnvironment::new(p.reward_probs.clone())
        .map_err(|e| CliError::Config(e.to_string()))?;
    let best = env.optimal_action();
    let mut per_seed = Vec::new();
    for seed in p.first_seed..p.first_seed + p.seeds {
        let mut rng = rng_for(seed, Stream::Automaton);
        let trial = run_stationary_trial(&env, p.alpha, p.beta, p.iterations, &mut rng)
            .map_err(|e| CliError::Config(e.to_string()))?;
        let terminal = trial.terminal.entries().to_vec();
        per_seed.push(SeedResult {
            seed,
            p_optimal: terminal[best],
            p_max: terminal.iter().copied().fold(0.0, f64::max),
            terminal,
        });
    }
    let passed = per_seed.iter().filter(|s| s.p_optimal > p.threshold).count();
    Ok(ConvergeSummary {
        optimal_action: best,
        per_seed,
        passed,
    })
}

pub fn render(p: &ConvergeParams, s: &ConvergeSummary) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "# alpha={} beta={} reward_probs=[{}] iterations={} optimal_action={}",
        fmt_f64(p.alpha),
        fmt_f64(p.beta),
        p.reward_probs.iter().map(|x| fmt_f64(*x)).collect::<Vec<_>>().join(", "),
        p.iterations,
        s.optimal_action
    );
    let _ = writeln!(out, "seed\tp_optimal\tp_max\tterminal");
    for r in &s.per_seed {
        let terminal: Vec<String> = r.terminal.iter().map(|x| fmt_f64(*x)).collect();
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t[{}]",
            r.seed,
            fmt_f64(r.p_optimal),
            fmt_f64(r.p_max),
            terminal.join(", ")
        );
    }
    let _ = writeln!(
        out,
        "above {}: {}/{} (fraction {}), median p_optimal {}",
        fmt_f64(p.threshold),
        s.passed,
        s.per_seed.len(),
        fmt_f64(s.pass_fraction()),
        fmt_f64(s.median_p_optimal())
    );
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_action_is_certain() {
        let p = ConvergeParams {
            reward_probs: vec![1.0],
            seeds: 3,
            iterations: 50,
            ..ConvergeParams::default()
        };
        let s = converge(&p).unwrap();
        assert!(s.per_seed.iter().all(|r| r.p_optimal == 1.0));
        assert_eq!(s.pass_fraction(), 1.0);
    }

    #[test]
    fn zero_iterations_report_uniform() {
        let p = ConvergeParams {
            reward_probs: vec![0.9, 0.2, 0.1, 0.5],
            iterations: 0,
            seeds: 2,
            ..ConvergeParams::default()
        };
        let s = converge(&p).unwrap();
        assert!(s.per_seed.iter().all(|r| r.terminal == vec![0.25; 4]));
        assert!(render(&p, &s).contains("[0.25, 0.25, 0.25, 0.25]"));
    }

    #[test]
    fn deterministic_reward_converges() {
        let p = ConvergeParams {
            reward_probs: vec![1.0, 0.0],
            seeds: 20,
            ..ConvergeParams::default()
        };
        assert_eq!(converge(&p).unwrap().passed, 20);
    }

    #[test]
    fn bad_parameters() {
        let bad = [
            ConvergeParams { alpha: 1.5, ..ConvergeParams::default() },
            ConvergeParams { reward_probs: vec![], ..ConvergeParams::default() },
            ConvergeParams { reward_probs: vec![0.5, 1.2], ..ConvergeParams::default() },
            ConvergeParams { seeds: 0, ..ConvergeParams::default() },
        ];
        for p in bad {
            assert!(matches!(converge(&p), Err(CliError::Config(_))));
        }
    }
}
