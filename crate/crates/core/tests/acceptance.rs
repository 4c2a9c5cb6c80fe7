//! Acceptance suite: one test per release criterion, each printing a
//! PASS/FAIL line (run with `--nocapture` to see them).

use std::time::Instant;

use byzopt::aggregators::verify::{run_trials, TrialConfig};
use byzopt::aggregators::{AggregatorConfig, Rule};
use byzopt::attacks::{AttackConfig, AttackKind};
use byzopt::harness::config::{
    AggregatorCfg, AttackCfg, ExperimentConfig, MetricsCfg, OptimizerCfg, OracleCfg, ProblemCfg,
};
use byzopt::harness::metrics::{MetricsRow, RunMetrics};
use byzopt::harness::execute_run;
use byzopt::lowerbound::{
    escape_threshold, mc_stuck_certificate, paired_floor_check, ChainInstance,
    IndistinguishablePair, StuckGadget,
};
use byzopt::optimizers::{
    nonconvex_defaults, restart_schedule, run_nesterov, run_restarted_nesterov,
    strongly_convex_defaults, MethodSpec, NesterovParams, OutputMode, RateConstants,
};
use byzopt::oracles::{minibatch_gradient, NoiseKind, OracleSpec};
use byzopt::problems::{conditioned_quadratic, hetero_shift_family, ProblemSpec};
use byzopt::rng::CounterRng;
use byzopt::util;

fn pass(name: &str, detail: String) {
    println!("criterion {name}: PASS — {detail}");
}

#[test]
fn criterion_01_aggregator_robustness_suite() {
    let started = Instant::now();
    let cfg = TrialConfig::default(); // 100k trials, n = 10, |H| = 8, delta = 0.2
    let reports = run_trials(&cfg).expect("trial suite");
    let mut detail = String::new();
    for r in &reports {
        assert!(
            r.hold_fraction() >= 0.999,
            "{}: only {:.5} of trials hold ({} violations); witnesses {:?}",
            r.rule,
            r.hold_fraction(),
            r.violations,
            r.witnesses
        );
        detail.push_str(&format!(
            "{}={:.4}% (cc_precond_viol={}) ",
            r.rule,
            100.0 * r.hold_fraction(),
            r.cc_precondition_violations
        ));
    }
    let elapsed = started.elapsed();
    assert!(
        elapsed.as_secs_f64() < 120.0,
        "suite took {elapsed:?}, budget is 2 min"
    );
    pass("01 aggregator robustness", format!("{detail}in {elapsed:?}"));
}

/// 50-dim homogeneous quadratic with condition number 100 and known optimum.
fn kappa100_problem() -> (ProblemSpec, Vec<f64>) {
    let dim = 50;
    let problem = conditioned_quadratic(8, dim, 1.0, 0.01, &vec![0.0; dim]).unwrap();
    let mut rng = CounterRng::from_key(&[0xacc, 2]);
    let x0: Vec<f64> = (0..dim).map(|_| 2.0 * rng.next_normal()).collect();
    (problem, x0)
}

#[test]
fn criterion_02_linear_rate_envelope() {
    let (problem, x0) = kappa100_problem();
    let x0_gap = problem.gap(&x0).unwrap();
    let c = RateConstants::from_problem(&problem, 0.0, 0.0, &x0).unwrap();
    let mut params = strongly_convex_defaults(&c, 1e-3).unwrap();
    params.t_max = 500;
    let agg = AggregatorConfig::new(Rule::Mean, 0.0);
    let run = run_nesterov(
        &problem,
        &OracleSpec::exact(4),
        &agg,
        None,
        &params,
        &x0,
        OutputMode::StronglyConvex,
    )
    .unwrap();

    let q = params.q;
    let rate = 1.0 - 1.0 / (2.0 * q.sqrt());
    let mut envelope = 2.0 * x0_gap;
    for t in 1..=500usize {
        envelope *= rate;
        let gap = problem.gap(&run.xs[t]).unwrap();
        assert!(
            gap <= envelope * (1.0 + 1e-12),
            "round {t}: gap {gap:.3e} exceeds envelope {envelope:.3e}"
        );
    }
    let g50 = problem.gap(&run.xs[50]).unwrap();
    let g500 = problem.gap(&run.xs[500]).unwrap();
    let avg_contraction = (g500 / g50).powf(1.0 / 450.0);
    let limit = 1.0 - 1.0 / (4.0 * q.sqrt());
    assert!(
        avg_contraction <= limit,
        "average contraction {avg_contraction:.5} above {limit:.5}"
    );
    pass(
        "02 linear-rate envelope",
        format!("500 rounds under 2(1-1/(2vq))^t, avg contraction {avg_contraction:.4} <= {limit:.4}"),
    );
}

#[test]
fn criterion_03_acceleration_separation() {
    let (problem, x0) = kappa100_problem();
    let oracle = OracleSpec::exact(9);
    let agg = AggregatorConfig::new(Rule::Mean, 0.0);
    let target = 1e-6;
    let cap = 6000;

    let c = RateConstants::from_problem(&problem, 0.0, 0.0, &x0).unwrap();
    let mut params = strongly_convex_defaults(&c, 1e-4).unwrap();
    params.t_max = cap;
    let accel = run_nesterov(&problem, &oracle, &agg, None, &params, &x0, OutputMode::StronglyConvex)
        .unwrap();
    let hit = |xs: &[Vec<f64>]| {
        xs.iter()
            .position(|x| problem.gap(x).unwrap() <= target)
            .expect("target not reached")
    };
    let t_accel = hit(&accel.xs);

    let base = byzopt::optimizers::run_method(
        &MethodSpec::Dsgd {
            eta: 1.0 / problem.smoothness,
            batch: 1,
        },
        &problem,
        &oracle,
        &agg,
        None,
        &x0,
        cap,
    )
    .unwrap();
    let t_base = hit(&base.xs);

    assert!(
        3 * t_accel <= t_base,
        "accelerated {t_accel} vs baseline {t_base}: separation below 3x"
    );
    pass(
        "03 acceleration separation",
        format!("accelerated {t_accel} iterations vs DSGD {t_base} ({}x)", t_base / t_accel),
    );
}

/// Floor of a DSGD run on the shifted family under sign-flip + trimmed mean.
fn shifted_family_floor(zeta: f64) -> f64 {
    let problem = hetero_shift_family(8, 0.25, zeta)
        .unwrap()
        .with_total_nodes(10, 0.2)
        .unwrap();
    let agg = AggregatorConfig::new(Rule::TrimmedMean, 0.2);
    let attack = AttackConfig::new(AttackKind::SignFlip);
    let run = byzopt::optimizers::run_method(
        &MethodSpec::Dsgd { eta: 0.5, batch: 1 },
        &problem,
        &OracleSpec::exact(6),
        &agg,
        Some(&attack),
        &[1.0],
        300,
    )
    .unwrap();
    let rows: Vec<MetricsRow> = run
        .xs
        .iter()
        .enumerate()
        .skip(1)
        .map(|(t, x)| MetricsRow {
            round: t as u64,
            oracle_queries: t as u64,
            grad_norm: util::norm(&problem.full_gradient(x).unwrap()),
            f_gap: f64::NAN,
            agg_deviation: run.rounds[t - 1].agg_deviation,
            accuracy: f64::NAN,
        })
        .collect();
    let metrics = RunMetrics {
        rows,
        ..RunMetrics::default()
    };
    byzopt::harness::estimate_byzantine_floor(&metrics, 0.25)
}

#[test]
fn criterion_04_byzantine_floor_scaling() {
    let floors: Vec<f64> = [0.5, 1.0, 2.0].iter().map(|&z| shifted_family_floor(z)).collect();
    for (z, f) in [0.5, 1.0, 2.0].iter().zip(&floors) {
        assert!(*f > 0.0, "zeta {z}: floor {f} not positive");
    }
    assert!(floors[0] <= floors[1] && floors[1] <= floors[2], "{floors:?}");
    let ratio = floors[2] / floors[0];
    assert!(
        (2.0..=8.0).contains(&ratio),
        "floor ratio {ratio} outside [2, 8]; floors {floors:?}"
    );
    let homogeneous = shifted_family_floor(0.0);
    assert!(homogeneous <= 1e-8, "zeta = 0 floor {homogeneous}");
    pass(
        "04 byzantine floor scaling",
        format!("floors {floors:?}, ratio {ratio:.3}, zeta=0 floor {homogeneous:.2e}"),
    );
}

#[test]
fn criterion_05_indistinguishable_pair() {
    let pair = IndistinguishablePair::new(8, 0.25, 1.0, 4.0, 1.0).unwrap();
    let methods = [
        ("dsgd", MethodSpec::Dsgd { eta: 0.5, batch: 1 }),
        (
            "dsgdm",
            MethodSpec::Dsgdm {
                eta: 0.5,
                batch: 1,
                momentum: 0.5,
            },
        ),
        (
            "nesterov",
            MethodSpec::Nesterov(NesterovParams {
                eta: 0.5,
                theta: 0.5,
                beta: 0.5,
                alpha: 0.5,
                m: 1,
                m0: 1,
                t_max: 1,
                q: 1.0,
                clamped: false,
            }),
        ),
    ];
    let mut detail = String::new();
    for (name, method) in &methods {
        let report = paired_floor_check(&pair, method, &[0.0], 200, 17)
            .unwrap_or_else(|e| panic!("{name}: {e}"));
        assert!(
            report.floor >= report.bound,
            "{name}: floor {} below bound {}",
            report.floor,
            report.bound
        );
        assert!(report.best_floor >= report.bound);
        assert!(report.min_certificate_margin >= 0.0);
        detail.push_str(&format!("{name} floor={:.3} ", report.floor));
    }
    pass(
        "05 indistinguishability",
        format!("{detail}>= bound {:.3} over 200 bit-identical rounds", pair.floor_bound()),
    );
}

#[test]
fn criterion_06_stuck_aggregator_threshold() {
    let (nodes, l, eps, sigma_sq, delta, rho) = (9usize, 1.0, 0.5, 4.0, 0.2, 40.0);
    let gadget = StuckGadget::new(nodes, l, eps, sigma_sq, delta, rho, 3).unwrap();
    let m_star = gadget.threshold();
    assert_eq!(m_star, escape_threshold(l, eps, sigma_sq, nodes, delta, rho));

    // Below the threshold the zero aggregator pins the method bit-exactly.
    let xs = gadget.run_stuck(0.1, m_star - 1, 200).unwrap();
    assert!(xs.iter().all(|x| x == &vec![0.0]));
    let grad = gadget.problem.full_gradient(&[0.0]).unwrap();
    assert_eq!(util::norm(&grad), 2.0 * eps);

    // Monte-Carlo flip of the certificate within +-10% of m*.
    let rho_delta = rho * delta;
    let lo = ((m_star as f64) * 0.85).floor() as usize;
    let hi = ((m_star as f64) * 1.15).ceil() as usize;
    let mut flip = None;
    for m in lo..=hi {
        let (lhs, rhs) = mc_stuck_certificate(eps, sigma_sq, nodes, rho_delta, m, 100_000, 12);
        if lhs > rhs {
            flip = Some(m);
            break;
        }
    }
    let flip = flip.expect("no flip inside the scanned window");
    let tol = (0.1 * m_star as f64).ceil() as usize;
    assert!(
        flip.abs_diff(m_star) <= tol,
        "flip at {flip}, computed m* = {m_star}"
    );
    pass(
        "06 stuck threshold",
        format!("m* = {m_star}, 200 stuck rounds at m*-1, MC flip at {flip}"),
    );
}

#[test]
fn criterion_07_chain_instance_properties() {
    let inst = ChainInstance::with_dim(32, 1.0, 0.05, 4.0);
    let d = inst.d;

    // (a) gradient norm above eps whenever the last coordinate is zero.
    let mut rng = CounterRng::from_key(&[0xc4a1]);
    for k in 0..1000 {
        let mut x: Vec<f64> = (0..d)
            .map(|_| (rng.next_f64() * 6.0 - 3.0) * inst.nu)
            .collect();
        x[d - 1] = 0.0;
        if k % 3 == 0 {
            // Stress the switching region too.
            for v in x.iter_mut().take(4) {
                *v = (rng.next_f64() - 0.5) * 1.2 * inst.nu;
            }
        }
        let (_, g) = inst.value_and_gradient(&x).unwrap();
        assert!(
            util::norm(&g) > inst.eps,
            "sample {k}: ||grad|| = {} <= eps",
            util::norm(&g)
        );
    }

    // (b) prog is non-decreasing along an optimizer trajectory.
    let problem = inst.as_problem(8).unwrap();
    let oracle = OracleSpec {
        sigma_sq: inst.sigma_sq,
        noise: NoiseKind::BernoulliChain,
        seed: 21,
    };
    let agg = AggregatorConfig::new(Rule::Mean, 0.0);
    let run = byzopt::optimizers::run_method(
        &MethodSpec::Dsgd { eta: 2.0, batch: 4 },
        &problem,
        &oracle,
        &agg,
        None,
        &vec![0.0; d],
        400,
    )
    .unwrap();
    let mut prev = 0usize;
    for x in &run.xs {
        let p = inst.prog_half(x);
        assert!(p >= prev, "prog decreased from {prev} to {p}");
        prev = p;
    }
    assert!(prev >= 1, "trajectory never discovered a coordinate");

    // (c) per-coordinate unbiasedness within four standard errors.
    let mut x = vec![0.0; d];
    x[0] = 0.8 * inst.nu;
    x[1] = 0.3 * inst.nu;
    let (_, exact) = inst.value_and_gradient(&x).unwrap();
    let n = 10_000usize;
    let mut mean = vec![0.0; d];
    let mut successes = 0u64;
    let prog = inst.prog_half(&x);
    for k in 0..n {
        let mut draw_rng = CounterRng::from_key(&[0xdead, k as u64]);
        let g = inst.stochastic_gradient(&x, &mut draw_rng).unwrap();
        util::axpy(&mut mean, 1.0 / n as f64, &g);
        // (d) undiscovered-coordinate success = nonzero draw beyond prog.
        let live = (prog..d).find(|&j| exact[j] != 0.0).unwrap();
        if g[live] != 0.0 {
            successes += 1;
        }
    }
    let per_coord_sd = ((1.0 - inst.p) / inst.p).sqrt();
    for j in 0..d {
        let se = if (j + 1) > prog {
            exact[j].abs() * per_coord_sd / (n as f64).sqrt()
        } else {
            0.0
        };
        let err = (mean[j] - exact[j]).abs();
        assert!(
            err <= 4.0 * se + 1e-12,
            "coordinate {}: |{} - {}| > 4se = {}",
            j + 1,
            mean[j],
            exact[j],
            4.0 * se
        );
    }
    let freq = successes as f64 / n as f64;
    let se = (inst.p * (1.0 - inst.p) / n as f64).sqrt();
    assert!(
        (freq - inst.p).abs() <= 4.0 * se,
        "success frequency {freq} vs p {} (se {se})",
        inst.p
    );
    pass(
        "07 chain instance",
        format!(
            "1000 frontier points above eps, prog {} monotone, oracle unbiased, freq {freq:.4} ~ p {:.4}",
            prev, inst.p
        ),
    );
}

#[test]
fn criterion_08_query_accounting() {
    let mut rng = CounterRng::from_key(&[0x8acc]);
    let agg = AggregatorConfig::new(Rule::Mean, 0.0);
    for trial in 0..20 {
        let kappa = 1.2 + 8.0 * rng.next_f64();
        let l = 0.5 + 2.0 * rng.next_f64();
        let mu = l / kappa;
        let sigma_sq = if trial % 4 == 0 { 0.0 } else { 0.05 * rng.next_f64() };
        let rho_delta = rng.next_f64();
        let dim = 2 + rng.gen_range(4);
        let problem = conditioned_quadratic(8, dim, l, mu, &vec![0.0; dim]).unwrap();
        let x0: Vec<f64> = (0..dim).map(|_| rng.next_normal()).collect();
        let mut c = RateConstants::from_problem(&problem, sigma_sq, rho_delta, &x0).unwrap();
        c.query_cap = u64::MAX;
        let eps = 0.3 + 0.7 * rng.next_f64();
        let oracle = OracleSpec::gaussian(sigma_sq, 1000 + trial);

        // Uncapped single run: exactly m0 + m T queries.
        let params = strongly_convex_defaults(&c, eps).unwrap();
        assert!(!params.clamped);
        let run = run_nesterov(&problem, &oracle, &agg, None, &params, &x0, OutputMode::StronglyConvex)
            .unwrap();
        assert_eq!(
            run.ledger.count(),
            (params.m0 + params.m * params.t_max) as u64,
            "trial {trial}: single-run ledger"
        );

        // Restarted run: exactly sum m(p) T(p).
        let schedule = restart_schedule(&c, eps).unwrap();
        let restarted = run_restarted_nesterov(&problem, &oracle, &agg, None, eps, &c, &x0).unwrap();
        assert_eq!(
            restarted.ledger.count(),
            schedule.total_queries(),
            "trial {trial}: restart ledger"
        );
    }
    pass(
        "08 query accounting",
        "20 random uncapped parameterizations: ledgers equal m0 + mT and sum m(p)T(p)".into(),
    );
}

#[test]
fn criterion_09_variance_reduction() {
    let sigma_sq = 4.0;
    let dim = 2;
    let reps = 10_000usize;
    let mut detail = String::new();
    for &honest in &[4usize, 8] {
        let problem = conditioned_quadratic(honest, dim, 2.0, 1.0, &[0.3, -0.7]).unwrap();
        let x = vec![0.5, 0.25];
        let exact = problem.full_gradient(&x).unwrap();
        for &m in &[1usize, 4, 16, 64] {
            let oracle = OracleSpec::gaussian(sigma_sq, 77 + m as u64 + honest as u64);
            let mut acc = 0.0;
            for rep in 0..reps {
                let grads: Vec<Vec<f64>> = (0..honest)
                    .map(|node| {
                        minibatch_gradient(&oracle, &problem, node, &x, m, rep as u64).unwrap()
                    })
                    .collect();
                let avg = util::mean(&grads);
                acc += util::dist_sq(&avg, &exact);
            }
            let empirical = acc / reps as f64;
            let want = sigma_sq / (honest * m) as f64;
            assert!(
                (empirical - want).abs() <= 0.25 * want,
                "|H| = {honest}, m = {m}: variance {empirical:.5} vs sigma^2/(Hm) = {want:.5}"
            );
            detail.push_str(&format!("H{honest}m{m}:{:.0}% ", 100.0 * empirical / want));
        }
    }
    pass("09 variance reduction", detail);
}

fn logistic_cfg(
    optimizer: OptimizerCfg,
    aggregator: AggregatorCfg,
    attack: AttackCfg,
) -> ExperimentConfig {
    ExperimentConfig {
        schema: 1,
        seed: 0x55,
        nodes: 10,
        byzantine: 2,
        rounds: None,
        epochs: 45,
        batch: 32,
        problem: ProblemCfg::SyntheticClasses {
            classes: 10,
            features: 784,
            train: 6000,
            test: 1000,
            noise: 0.32,
            l2: 1e-3,
        },
        optimizer,
        aggregator,
        attack,
        oracle: OracleCfg::default(),
        metrics: MetricsCfg {
            grad_norm_every: usize::MAX,
            tail_fraction: 0.25,
        },
    }
}

#[test]
fn criterion_10_logistic_protocol() {
    let started = Instant::now();
    let optimizers = [
        OptimizerCfg::Dsgd { eta: 0.1 },
        OptimizerCfg::Dsgdm {
            eta: 0.1,
            momentum: 0.9,
        },
        OptimizerCfg::Nesterov {
            eta: 0.1,
            beta: 0.9,
            theta: None,
            alpha: 0.0,
            m0: None,
        },
    ];

    // Ideal aggregator, no attack: every optimizer exceeds 85% accuracy.
    let mut ideal = Vec::new();
    for opt in &optimizers {
        let cfg = logistic_cfg(
            opt.clone(),
            AggregatorCfg {
                rule: Rule::Mean,
                delta: None,
            },
            AttackCfg::None,
        );
        let out = execute_run(&cfg, None, "ideal").unwrap();
        let acc = out.summary.max_accuracy.unwrap();
        assert!(acc > 0.85, "{}: ideal accuracy {acc}", opt.name());
        ideal.push(format!("{}={acc:.3}", opt.name()));
    }

    // {Med, CC, GM, TM} x {BF, LF, IPM, ALIE}: compare the per-cell maximum
    // accuracy of the accelerated method against DSGD.
    let aggregators = [
        Rule::Median,
        Rule::CenteredClipping,
        Rule::GeometricMedian,
        Rule::TrimmedMean,
    ];
    let attacks = [
        AttackCfg::BitFlip,
        AttackCfg::LabelFlip,
        AttackCfg::Ipm { scale: 0.1 },
        AttackCfg::Alie { z: None },
    ];
    let cells: Vec<(Rule, AttackCfg)> = aggregators
        .iter()
        .flat_map(|&r| attacks.iter().map(move |a| (r, a.clone())))
        .collect();
    let outcomes = byzopt::util::exec::map_indexed(cells.len(), |i| {
        let (rule, attack) = &cells[i];
        let run_one = |opt: OptimizerCfg| {
            let cfg = logistic_cfg(
                opt,
                AggregatorCfg {
                    rule: *rule,
                    delta: None,
                },
                attack.clone(),
            );
            execute_run(&cfg, None, "cell")
                .unwrap()
                .summary
                .max_accuracy
                .unwrap()
        };
        let accel = run_one(OptimizerCfg::Nesterov {
            eta: 0.1,
            beta: 0.9,
            theta: None,
            alpha: 0.0,
            m0: None,
        });
        let base = run_one(OptimizerCfg::Dsgd { eta: 0.1 });
        (rule.name(), attack.name(), accel, base)
    });

    let mut wins = 0;
    for (rule, attack, accel, base) in &outcomes {
        let won = accel >= base;
        wins += usize::from(won);
        println!(
            "  cell {rule}+{attack}: accel {accel:.4} vs dsgd {base:.4} {}",
            if won { "(>=)" } else { "(<)" }
        );
    }
    assert!(
        wins >= 10,
        "accelerated method matched or beat DSGD in only {wins}/16 cells"
    );
    let elapsed = started.elapsed();
    assert!(
        elapsed.as_secs_f64() < 900.0,
        "protocol took {elapsed:?}, budget is 15 min"
    );
    pass(
        "10 logistic protocol",
        format!(
            "ideal {:?}; accel >= dsgd in {wins}/16 attack cells; {elapsed:?}",
            ideal
        ),
    );
}

#[test]
fn criterion_11_nonconvex_defaults_sanity() {
    let mut rng = CounterRng::from_key(&[0x11acc]);
    for trial in 0..100 {
        let l = 0.1 + 20.0 * rng.next_f64();
        let t = 1 + rng.gen_range(100_000);
        let sigma_sq = rng.next_f64() * 9.0;
        let n = 2 + rng.gen_range(30);
        let delta = rng.next_f64() * 0.45;
        let rho_delta = rng.next_f64() * 10.0;
        let c = RateConstants {
            smoothness: l,
            strong_convexity: 0.0,
            sigma_sq,
            rho_delta,
            delta,
            nodes: n,
            radius: 1.0,
            delta_f: 0.1 + rng.next_f64() * 5.0,
            query_cap: u64::MAX,
        };
        let p = nonconvex_defaults(&c, t, 1).unwrap();
        assert!(
            (p.beta - (1.0 - 12.0 * l * p.eta)).abs() < 1e-12,
            "trial {trial}: beta identity"
        );
        assert!(
            (p.theta - (1.0 - p.beta)).abs() < 1e-12,
            "trial {trial}: theta identity"
        );
        assert!(p.beta >= 0.5 - 1e-12, "trial {trial}: beta {}", p.beta);
        assert!(
            p.eta <= 1.0 / (24.0 * l) + 1e-18,
            "trial {trial}: eta {}",
            p.eta
        );
    }
    pass(
        "11 nonconvex defaults",
        "100 random tuples satisfy beta = 1-12Leta, theta = 1-beta, beta >= 1/2, eta <= 1/(24L)"
            .into(),
    );
}
