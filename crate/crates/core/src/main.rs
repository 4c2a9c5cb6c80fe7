//! Command-line front end for the Byzantine-robust optimization simulator.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use byzopt::aggregators::verify::{run_trials, TrialConfig};
use byzopt::aggregators::{AggregatorConfig, Rule};
use byzopt::harness::{run_grid, synth, worst_case_max_accuracy, ExperimentConfig, GridConfig};
use byzopt::lowerbound::{
    mc_stuck_certificate, paired_floor_check, ChainInstance, FrontierZero, IndistinguishablePair,
    StuckGadget,
};
use byzopt::optimizers::MethodSpec;
use byzopt::oracles::{NoiseKind, OracleSpec};
use byzopt::util;

#[derive(Parser)]
#[command(
    name = "byzopt",
    about = "Simulator for Byzantine-robust distributed stochastic optimization",
    version
)]
struct Cli {
    /// Master seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for metrics and summaries.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Worker threads (0 = library default).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute one experiment cell from a JSON config.
    Run {
        /// Path to the experiment config (schema 1).
        config: PathBuf,
    },
    /// Randomized robustness trials for every robust aggregation rule.
    VerifyAggregators {
        #[arg(long, default_value_t = 100_000)]
        trials: usize,
        #[arg(long, default_value_t = 10)]
        nodes: usize,
        #[arg(long, default_value_t = 8)]
        honest: usize,
        #[arg(long, default_value_t = 0.2)]
        delta: f64,
    },
    /// Executable worst-case constructions.
    Lowerbound {
        #[command(subcommand)]
        gadget: LowerboundCmd,
    },
    /// Execute an optimizer x aggregator x attack grid from a JSON config.
    Sweep {
        /// Path to the grid config (schema 1).
        config: PathBuf,
    },
    /// Generate a synthetic classification dataset as IDX files.
    GenData {
        #[arg(long, default_value_t = 10)]
        classes: usize,
        #[arg(long, default_value_t = 784)]
        features: usize,
        #[arg(long, default_value_t = 6000)]
        train: usize,
        #[arg(long, default_value_t = 1000)]
        test: usize,
        #[arg(long, default_value_t = 0.25)]
        noise: f64,
        #[arg(long)]
        gzip: bool,
        /// Target directory.
        #[arg(long, default_value = "data")]
        dir: PathBuf,
    },
}

#[derive(Subcommand)]
enum LowerboundCmd {
    /// Indistinguishable problem pair: paired runs and the gradient floor.
    Lemma1(Lemma1Args),
    /// Stuck-aggregator escape threshold and its Monte-Carlo certificate.
    Lemma6(Lemma6Args),
    /// Chain-function instance: properties and the frontier-zeroing stall.
    Chain(ChainArgs),
}

#[derive(Args)]
struct Lemma1Args {
    #[arg(long, default_value_t = 8)]
    nodes: usize,
    #[arg(long, default_value_t = 0.25)]
    delta: f64,
    #[arg(long, default_value_t = 1.0)]
    zeta: f64,
    #[arg(long, default_value_t = 4.0)]
    rho: f64,
    #[arg(long, default_value_t = 1.0)]
    alpha_min: f64,
    #[arg(long, default_value_t = 200)]
    rounds: usize,
}

#[derive(Args)]
struct Lemma6Args {
    #[arg(long, default_value_t = 9)]
    nodes: usize,
    #[arg(long, default_value_t = 1.0)]
    l: f64,
    #[arg(long, default_value_t = 0.5)]
    eps: f64,
    #[arg(long, default_value_t = 4.0)]
    sigma_sq: f64,
    #[arg(long, default_value_t = 0.2)]
    delta: f64,
    #[arg(long, default_value_t = 40.0)]
    rho: f64,
    #[arg(long, default_value_t = 200)]
    rounds: usize,
    #[arg(long, default_value_t = 100_000)]
    draws: usize,
}

#[derive(Args)]
struct ChainArgs {
    #[arg(long, default_value_t = 32)]
    dim: usize,
    #[arg(long, default_value_t = 1.0)]
    l: f64,
    #[arg(long, default_value_t = 0.05)]
    eps: f64,
    #[arg(long, default_value_t = 64.0)]
    sigma_sq: f64,
    #[arg(long, default_value_t = 8)]
    nodes: usize,
    #[arg(long, default_value_t = 100)]
    rounds: usize,
    #[arg(long, default_value_t = 4.0)]
    rho_delta: f64,
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cli = Cli::parse();
    if cli.threads > 0 {
        byzopt::util::exec::configure_threads(cli.threads).map_err(std::io::Error::other)?;
    }
    match cli.command {
        Command::Run { config } => {
            let text = std::fs::read_to_string(&config)?;
            let mut cfg = ExperimentConfig::from_json(&text)?;
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
            }
            let name = config
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "run".into());
            let outcome = byzopt::harness::execute_run(&cfg, cli.out_dir.as_deref(), &name)?;
            let s = &outcome.summary;
            println!(
                "{name}: rounds={} queries={} grad_norm={:.3e} floor={:.3e}{}{}",
                s.total_rounds,
                s.total_queries,
                s.final_grad_norm,
                s.floor_estimate,
                s.max_accuracy
                    .map(|a| format!(" max_acc={a:.4}"))
                    .unwrap_or_default(),
                if cli.out_dir.is_some() {
                    " (metrics written)"
                } else {
                    ""
                },
            );
        }
        Command::VerifyAggregators {
            trials,
            nodes,
            honest,
            delta,
        } => {
            let cfg = TrialConfig {
                trials,
                nodes,
                honest,
                delta,
                seed: cli.seed.unwrap_or(0xA66),
                ..TrialConfig::default()
            };
            let reports = run_trials(&cfg)?;
            println!("rule                 trials   violations  hold%     cc_precond_viol");
            for r in &reports {
                println!(
                    "{:<20} {:<8} {:<11} {:<9.4} {}",
                    r.rule,
                    r.trials,
                    r.violations,
                    100.0 * r.hold_fraction(),
                    r.cc_precondition_violations
                );
                for w in &r.witnesses {
                    println!(
                        "    witness: trial {} attack {} lhs {:.4e} rhs {:.4e}",
                        w.trial, w.attack, w.lhs, w.rhs
                    );
                }
            }
            if let Some(dir) = &cli.out_dir {
                byzopt::harness::metrics::write_summary(&dir.join("verify.summary.json"), &reports)?;
            }
        }
        Command::Lowerbound { gadget } => match gadget {
            LowerboundCmd::Lemma1(a) => {
                let pair =
                    IndistinguishablePair::new(a.nodes, a.delta, a.zeta, a.rho, a.alpha_min)?;
                println!(
                    "pair: shift={} floor bound={}",
                    pair.shift,
                    pair.floor_bound()
                );
                for (label, method) in [
                    ("dsgd", MethodSpec::Dsgd { eta: 0.5, batch: 1 }),
                    (
                        "dsgdm",
                        MethodSpec::Dsgdm {
                            eta: 0.5,
                            batch: 1,
                            momentum: 0.5,
                        },
                    ),
                ] {
                    let report =
                        paired_floor_check(&pair, &method, &[0.0], a.rounds, cli.seed.unwrap_or(1))?;
                    println!(
                        "{label}: {} rounds bit-identical; floor={:.6} best_floor={:.6} \
                         bound={:.6} cert_margin={:.3e}",
                        report.rounds,
                        report.floor,
                        report.best_floor,
                        report.bound,
                        report.min_certificate_margin
                    );
                }
            }
            LowerboundCmd::Lemma6(a) => {
                let gadget = StuckGadget::new(
                    a.nodes,
                    a.l,
                    a.eps,
                    a.sigma_sq,
                    a.delta,
                    a.rho,
                    cli.seed.unwrap_or(2),
                )?;
                let m_star = gadget.threshold();
                println!("escape threshold m* = {m_star}");
                let xs = gadget.run_stuck(0.1, m_star.saturating_sub(1).max(1), a.rounds)?;
                println!(
                    "zero-aggregator run: {} rounds, final x = {:?}, grad norm = {}",
                    a.rounds,
                    xs.last().unwrap(),
                    util::norm(&gadget.problem.full_gradient(xs.last().unwrap())?)
                );
                for m in [m_star / 2, m_star, 2 * m_star] {
                    let m = m.max(1);
                    let (lhs, rhs) = mc_stuck_certificate(
                        a.eps,
                        a.sigma_sq,
                        a.nodes,
                        a.rho * a.delta,
                        m,
                        a.draws,
                        cli.seed.unwrap_or(2),
                    );
                    println!(
                        "m={m}: E[lhs]={lhs:.5} E[rhs]={rhs:.5} escaped={}",
                        lhs > rhs
                    );
                }
            }
            LowerboundCmd::Chain(a) => {
                let inst = ChainInstance::with_dim(a.dim, a.l, a.eps, a.sigma_sq);
                println!(
                    "chain: d={} (formula {}), nu={:.4}, p={:.6}",
                    inst.d, inst.d_formula, inst.nu, inst.p
                );
                let problem = inst.as_problem(a.nodes)?;
                let oracle = OracleSpec {
                    sigma_sq: a.sigma_sq,
                    noise: NoiseKind::BernoulliChain,
                    seed: cli.seed.unwrap_or(3),
                };
                // Honest baseline: the plain mean lets the method discover
                // coordinates; the frontier-zeroing adversary stalls it.
                let mean = AggregatorConfig::new(Rule::Mean, 0.0);
                let x0 = vec![0.0; inst.d];
                let spec = MethodSpec::Dsgd { eta: 2.0, batch: 4 };
                let run = byzopt::optimizers::run_method(
                    &spec, &problem, &oracle, &mean, None, &x0, a.rounds,
                )?;
                let progs: Vec<usize> = run.xs.iter().map(|x| inst.prog_half(x)).collect();
                println!(
                    "mean aggregator: prog {} -> {}",
                    progs.first().unwrap(),
                    progs.last().unwrap()
                );
                let adversary = FrontierZero::new(a.rho_delta);
                let stalled = byzopt::optimizers::run_method(
                    &spec, &problem, &oracle, &adversary, None, &x0, a.rounds,
                )?;
                let final_prog = inst.prog_half(stalled.xs.last().unwrap());
                let recs = adversary.records();
                let violated = recs.iter().filter(|r| r.lhs > r.rhs).count();
                println!(
                    "frontier-zeroing aggregator: prog stays {final_prog}; certificate \
                     violated in {violated}/{} rounds (in-expectation bound)",
                    recs.len()
                );
            }
        },
        Command::Sweep { config } => {
            let text = std::fs::read_to_string(&config)?;
            let mut grid = GridConfig::from_json(&text)?;
            if let Some(seed) = cli.seed {
                grid.seed = seed;
            }
            let report = run_grid(&grid, cli.out_dir.as_deref())?;
            println!(
                "{} cells, {} failed{}",
                report.cells.len(),
                report.failed(),
                if cli.out_dir.is_some() {
                    " (outputs written)"
                } else {
                    ""
                }
            );
            for cell in &report.cells {
                match (&cell.summary, &cell.error) {
                    (Some(s), _) => println!(
                        "  {:<40} floor={:.3e}{}{}",
                        cell.name,
                        s.floor_estimate,
                        s.max_accuracy
                            .map(|a| format!(" max_acc={a:.4}"))
                            .unwrap_or_default(),
                        if cell.skipped { " [resumed]" } else { "" },
                    ),
                    (None, Some(e)) => println!("  {:<40} FAILED: {e}", cell.name),
                    _ => {}
                }
            }
            // Worst-case maximum accuracy per optimizer/aggregator combo,
            // when the grid produced accuracy series.
            let mut combos: Vec<(String, Vec<Vec<f64>>)> = Vec::new();
            for cell in &report.cells {
                if let Some(s) = &cell.summary {
                    if let Some(acc) = s.max_accuracy {
                        let key = format!("{}+{}", cell.optimizer, cell.aggregator);
                        match combos.iter_mut().find(|(k, _)| *k == key) {
                            Some((_, v)) => v.push(vec![acc]),
                            None => combos.push((key, vec![vec![acc]])),
                        }
                    }
                }
            }
            for (key, series) in &combos {
                if let Ok(w) = worst_case_max_accuracy(series) {
                    println!("  worst-case max accuracy {key}: {w:.4}");
                }
            }
        }
        Command::GenData {
            classes,
            features,
            train,
            test,
            noise,
            gzip,
            dir,
        } => {
            std::fs::create_dir_all(&dir)?;
            let seed = cli.seed.unwrap_or(2024);
            let (tr, te) = synth::generate_split(classes, features, train, test, noise, seed);
            let ext = if gzip { ".gz" } else { "" };
            tr.write_idx(
                &dir.join(format!("train-images-idx3-ubyte{ext}")),
                &dir.join(format!("train-labels-idx1-ubyte{ext}")),
                gzip,
            )?;
            te.write_idx(
                &dir.join(format!("t10k-images-idx3-ubyte{ext}")),
                &dir.join(format!("t10k-labels-idx1-ubyte{ext}")),
                gzip,
            )?;
            println!(
                "wrote {train}+{test} samples ({classes} classes, {features} features) to {}",
                dir.display()
            );
        }
    }
    Ok(())
}
