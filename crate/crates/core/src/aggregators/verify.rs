//! Empirical robustness checker: randomized adversarial trials evaluating
//! the aggregation bound with each rule's tabulated coefficient.
//!
//! Each trial draws a Gaussian honest cohort with a random mean and spread,
//! crafts the Byzantine inputs with one of the attack strategies, and
//! evaluates both sides of the robustness inequality. Violations are counted
//! and a few witnesses are kept for inspection. Trials are independent, so
//! they fan out across workers.

use serde::Serialize;

use crate::aggregators::{
    cc_precondition_holds, check_robustness, AggregatorConfig, Rule,
};
use crate::attacks::{craft, AttackConfig, AttackKind, RoundContext};
use crate::rng::CounterRng;
use crate::util::exec;
use crate::Result;

#[derive(Debug, Clone)]
pub struct TrialConfig {
    pub rules: Vec<Rule>,
    /// Randomized trials per rule.
    pub trials: usize,
    /// Cohort size and honest count.
    pub nodes: usize,
    pub honest: usize,
    /// Estimated Byzantine fraction handed to the rules.
    pub delta: f64,
    pub seed: u64,
    /// Kept violation witnesses per rule.
    pub max_witnesses: usize,
}

impl Default for TrialConfig {
    fn default() -> Self {
        TrialConfig {
            rules: Rule::ROBUST.to_vec(),
            trials: 100_000,
            nodes: 10,
            honest: 8,
            delta: 0.2,
            seed: 0xA66,
            max_witnesses: 8,
        }
    }
}

/// A failed trial, kept for diagnosis.
#[derive(Debug, Clone, Serialize)]
pub struct Witness {
    pub trial: usize,
    pub attack: &'static str,
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RuleReport {
    pub rule: &'static str,
    pub trials: usize,
    pub violations: usize,
    /// Trials where the clipping starting point failed its derivation
    /// precondition (logged, not asserted).
    pub cc_precondition_violations: usize,
    pub witnesses: Vec<Witness>,
}

impl RuleReport {
    pub fn hold_fraction(&self) -> f64 {
        1.0 - self.violations as f64 / self.trials as f64
    }
}

struct TrialOutcome {
    violated: bool,
    cc_precondition_violated: bool,
    lhs: f64,
    rhs: f64,
    attack: &'static str,
}

fn run_one_trial(cfg: &TrialConfig, rule: Rule, trial: usize) -> Result<TrialOutcome> {
    let mut rng = CounterRng::from_key(&[cfg.seed, rule as u64, trial as u64]);
    let dim = 1 + rng.gen_range(8);
    let byz = cfg.nodes - cfg.honest;

    // Honest cohort: Gaussian with random mean and log-uniform spread.
    let scale = 10f64.powf(rng.next_f64() * 2.0 - 1.0); // [0.1, 10)
    let center: Vec<f64> = (0..dim).map(|_| 3.0 * scale * rng.next_normal()).collect();
    let honest: Vec<Vec<f64>> = (0..cfg.honest)
        .map(|_| {
            center
                .iter()
                .map(|&mu| mu + scale * rng.next_normal())
                .collect()
        })
        .collect();

    let kind = AttackKind::ALL[trial % AttackKind::ALL.len()];
    let mut attack = AttackConfig::new(kind);
    attack.params.gaussian_std = 3.0 * scale;
    // Stand-in poison for the data-driven attack: reversed honest uploads.
    let poisoned: Vec<Vec<f64>> = honest
        .iter()
        .take(byz)
        .map(|v| v.iter().map(|x| -x).collect())
        .collect();
    let ctx = RoundContext {
        round: trial as u64,
        seed: cfg.seed ^ 0x5eed,
        stream: rule as u64,
        byz_count: byz,
        total_nodes: cfg.nodes,
        poisoned: Some(&poisoned),
    };
    let byz_msgs = craft(&attack, &honest, &ctx)?;

    let agg = AggregatorConfig::new(rule, cfg.delta);
    let chk = check_robustness(&agg, &honest, &byz_msgs)?;

    let cc_precondition_violated = if rule == Rule::CenteredClipping {
        let mut all = honest.clone();
        all.extend_from_slice(&byz_msgs);
        !cc_precondition_holds(&honest, &all)
    } else {
        false
    };

    Ok(TrialOutcome {
        violated: !chk.holds,
        cc_precondition_violated,
        lhs: chk.lhs,
        rhs: chk.rhs,
        attack: kind.name(),
    })
}

fn summarize(cfg: &TrialConfig, rule: Rule, outcomes: Vec<Result<TrialOutcome>>) -> Result<RuleReport> {
    let mut report = RuleReport {
        rule: rule.name(),
        trials: cfg.trials,
        violations: 0,
        cc_precondition_violations: 0,
        witnesses: Vec::new(),
    };
    for (trial, outcome) in outcomes.into_iter().enumerate() {
        let o = outcome?;
        if o.violated {
            report.violations += 1;
            if report.witnesses.len() < cfg.max_witnesses {
                report.witnesses.push(Witness {
                    trial,
                    attack: o.attack,
                    lhs: o.lhs,
                    rhs: o.rhs,
                });
            }
        }
        if o.cc_precondition_violated {
            report.cc_precondition_violations += 1;
        }
    }
    Ok(report)
}

/// Run the randomized robustness suite (parallel when enabled).
pub fn run_trials(cfg: &TrialConfig) -> Result<Vec<RuleReport>> {
    cfg.rules
        .iter()
        .map(|&rule| {
            let outcomes = exec::map_indexed(cfg.trials, |t| run_one_trial(cfg, rule, t));
            summarize(cfg, rule, outcomes)
        })
        .collect()
}

/// Sequential variant of [`run_trials`], kept as the benchmark baseline.
pub fn run_trials_serial(cfg: &TrialConfig) -> Result<Vec<RuleReport>> {
    cfg.rules
        .iter()
        .map(|&rule| {
            let outcomes = exec::map_indexed_serial(cfg.trials, |t| run_one_trial(cfg, rule, t));
            summarize(cfg, rule, outcomes)
        })
        .collect()
}
