//! Command-line front end: threshold analysis, map evolution, schedule
//! planning, Monte Carlo simulation, and feasibility sweeps, with flat
//! key=value / CSV artifacts (or `--json`) that embed enough to replay.

use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use sixstate::maps::{ep_map, pec_predict, steane_threshold};
use sixstate::planner::{
    asymptotic_feasible, depolarizing_threshold, plan_schedule, threshold_sweep, PlannerConfig,
    SchedulePlan,
};
use sixstate::sim::{run_trials, SimConfig, SimReport};
use sixstate::{depolarizing, PauliRates};

const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser)]
#[command(name = "sixstate", version, about = "Six-state QKD post-processing toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the closed-form feasibility thresholds (and optionally verify
    /// them by bisection).
    Threshold(ThresholdArgs),
    /// Evolve a rate vector through EP rounds, optionally followed by a PEC
    /// prediction.
    Evolve(EvolveArgs),
    /// Plan a distillation schedule for a channel.
    Plan(PlanArgs),
    /// Run the full protocol by Monte Carlo.
    Simulate(SimulateArgs),
    /// Sweep depolarizing bit errors and report feasibility, plans, and
    /// optional Monte Carlo statistics as CSV.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct ThresholdArgs {
    /// Also locate the threshold by feasibility bisection.
    #[arg(long)]
    numeric: bool,
    /// Bisection tolerance.
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    /// Also print the Steane concatenation threshold.
    #[arg(long)]
    steane: bool,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct EvolveArgs {
    /// Input rates as p_i,p_x,p_y,p_z (must sum to 1).
    #[arg(long, value_parser = parse_rates)]
    rates: PauliRates,
    /// Number of EP rounds to evolve through.
    #[arg(long)]
    k: u32,
    /// Append a PEC prediction at this odd width.
    #[arg(long)]
    pec_r: Option<u64>,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct ChannelArgs {
    /// Depolarizing channel with this bit error rate.
    #[arg(long, conflicts_with = "rates")]
    bit_error: Option<f64>,
    /// Explicit rates p_i,p_x,p_y,p_z.
    #[arg(long, value_parser = parse_rates)]
    rates: Option<PauliRates>,
}

impl ChannelArgs {
    fn resolve(&self) -> Result<PauliRates, String> {
        match (self.bit_error, self.rates) {
            (Some(b), None) => depolarizing(b).map_err(|e| e.to_string()),
            (None, Some(r)) => Ok(r),
            (None, None) => Err("one of --bit-error or --rates is required".to_string()),
            (Some(_), Some(_)) => unreachable!("clap conflicts_with"),
        }
    }
}

#[derive(Args)]
struct PlannerArgs {
    /// Post-PEC error target.
    #[arg(long, default_value_t = 0.05)]
    target: f64,
    /// Key fidelity budget (expected surviving logical errors per run).
    #[arg(long, default_value_t = 1e-3)]
    epsilon: f64,
    /// Maximum number of EP rounds to consider.
    #[arg(long, default_value_t = 30)]
    max_k: u32,
}

impl PlannerArgs {
    fn config(&self, n_sifted: u64) -> Result<PlannerConfig, String> {
        PlannerConfig::new(self.target, self.epsilon, n_sifted, self.max_k)
            .map_err(|e| e.to_string())
    }
}

#[derive(Args)]
struct PlanArgs {
    #[command(flatten)]
    channel: ChannelArgs,
    #[command(flatten)]
    planner: PlannerArgs,
    /// Sifted bits available to the plan (planning is pure arithmetic, so
    /// this may be far beyond simulation scale).
    #[arg(long, default_value_t = 10_000_000_000_000_000)]
    n_sifted: u64,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    channel: ChannelArgs,
    #[command(flatten)]
    planner: PlannerArgs,
    /// Qubits sent (one third survive sifting on average).
    #[arg(long, default_value_t = 3_000_000)]
    n_sent: u64,
    /// Test bits sacrificed per basis.
    #[arg(long, default_value_t = 10_000)]
    test_bits: u64,
    #[arg(long, default_value_t = 1)]
    trials: u32,
    /// Master seed (every stage derives independent sub-streams).
    #[arg(long, env = "SIXSTATE_SEED", default_value_t = 1)]
    seed: u64,
    /// Plan on the true channel rates instead of the estimate.
    #[arg(long)]
    plan_on_true_rates: bool,
    /// Symmetrize the estimate (enforce p_x = p_y = p_z) before planning.
    #[arg(long)]
    symmetrize_estimate: bool,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    from: f64,
    #[arg(long)]
    to: f64,
    #[arg(long)]
    step: f64,
    #[command(flatten)]
    planner: PlannerArgs,
    /// Sifted-bit budget used for the plan columns.
    #[arg(long, default_value_t = 10_000_000_000_000_000)]
    n_sifted: u64,
    /// Monte Carlo trials per sweep point (0 = analytic columns only).
    #[arg(long, default_value_t = 0)]
    trials: u32,
    /// Qubits sent per trial when trials > 0.
    #[arg(long, default_value_t = 3_000_000)]
    n_sent: u64,
    /// Test bits sacrificed per basis when trials > 0.
    #[arg(long, default_value_t = 10_000)]
    test_bits: u64,
    #[arg(long, env = "SIXSTATE_SEED", default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    json: bool,
}

fn parse_rates(text: &str) -> Result<PauliRates, String> {
    let parts: Vec<&str> = text.split(',').collect();
    if parts.len() != 4 {
        return Err("expected four comma-separated probabilities".to_string());
    }
    let mut values = [0.0f64; 4];
    for (slot, part) in values.iter_mut().zip(&parts) {
        *slot = part.trim().parse::<f64>().map_err(|e| e.to_string())?;
    }
    PauliRates::new(values[0], values[1], values[2], values[3]).map_err(|e| e.to_string())
}

fn artifact_header(config_echo: &str) {
    println!("# sixstate {VERSION}");
    println!("# config: {config_echo}");
}

fn cmd_threshold(args: &ThresholdArgs) -> Result<(), String> {
    let t = depolarizing_threshold();
    let numeric = if args.numeric {
        let config = PlannerConfig::default();
        Some(threshold_sweep(0.2, 0.35, args.tol, &config).map_err(|e| e.to_string())?)
    } else {
        None
    };
    let steane = args.steane.then(steane_threshold);
    if args.json {
        let mut body = json!({
            "version": VERSION,
            "bit_error_threshold": t.bit_error,
            "channel_error_threshold": t.channel_error,
            "p_i_min": t.p_i_min,
        });
        if let Some(n) = numeric {
            body["numeric_bisection"] = json!(n);
            body["tol"] = json!(args.tol);
        }
        if let Some(s) = steane {
            body["steane_threshold"] = json!(s);
        }
        println!("{}", serde_json::to_string_pretty(&body).expect("serializable"));
        return Ok(());
    }
    artifact_header(&format!("threshold numeric={} tol={} steane={}", args.numeric, args.tol, args.steane));
    println!("bit_error_threshold={:.9}", t.bit_error);
    println!("channel_error_threshold={:.9}", t.channel_error);
    println!("p_i_min={:.9}", t.p_i_min);
    if let Some(n) = numeric {
        println!("numeric_bisection={n:.9}");
    }
    if let Some(s) = steane {
        println!("steane_threshold={s:.6}");
    }
    Ok(())
}

fn cmd_evolve(args: &EvolveArgs) -> Result<(), String> {
    let mut rows = Vec::new();
    let mut current = args.rates;
    rows.push((current, 1.0));
    for _ in 0..args.k {
        let (next, survival) = ep_map(&current);
        rows.push((next, survival));
        current = next;
    }
    let pec = match args.pec_r {
        Some(r) => Some((r, pec_predict(&current, r).map_err(|e| e.to_string())?)),
        None => None,
    };

    if args.json {
        let rounds: Vec<_> = rows
            .iter()
            .enumerate()
            .map(|(round, (rates, survival))| {
                json!({
                    "round": round,
                    "p_i": rates.p_i(),
                    "p_x": rates.p_x(),
                    "p_y": rates.p_y(),
                    "p_z": rates.p_z(),
                    "survival": survival,
                })
            })
            .collect();
        let mut body = json!({ "version": VERSION, "rounds": rounds });
        if let Some((r, p)) = &pec {
            body["pec"] = json!({
                "r": r,
                "bit_error_bound": p.bit_error_bound,
                "phase_error_bound": p.phase_error_bound,
                "phase_error_exp_bound": p.phase_error_exp_bound,
                "bit_error_exact": p.bit_error_exact,
                "phase_error_exact": p.phase_error_exact,
                "p_i": p.exact_rates.p_i(),
                "p_x": p.exact_rates.p_x(),
                "p_y": p.exact_rates.p_y(),
                "p_z": p.exact_rates.p_z(),
            });
        }
        println!("{}", serde_json::to_string_pretty(&body).expect("serializable"));
        return Ok(());
    }

    artifact_header(&format!(
        "evolve rates={:?} k={} pec_r={:?}",
        args.rates.as_array(),
        args.k,
        args.pec_r
    ));
    println!("round,p_i,p_x,p_y,p_z,survival");
    for (round, (rates, survival)) in rows.iter().enumerate() {
        println!(
            "{round},{:.12},{:.12},{:.12},{:.12},{:.12}",
            rates.p_i(),
            rates.p_x(),
            rates.p_y(),
            rates.p_z(),
            survival
        );
    }
    if let Some((r, p)) = pec {
        println!();
        println!("pec_r={r}");
        println!("pec_bit_error_bound={:.12}", p.bit_error_bound);
        println!("pec_phase_error_bound={:.12e}", p.phase_error_bound);
        println!("pec_phase_error_exp_bound={:.12e}", p.phase_error_exp_bound);
        println!("pec_bit_error_exact={:.12}", p.bit_error_exact);
        println!("pec_phase_error_exact={:.12}", p.phase_error_exact);
        println!(
            "pec_rates={:.12},{:.12},{:.12},{:.12}",
            p.exact_rates.p_i(),
            p.exact_rates.p_x(),
            p.exact_rates.p_y(),
            p.exact_rates.p_z()
        );
    }
    Ok(())
}

fn plan_to_json(plan: &SchedulePlan) -> serde_json::Value {
    json!({
        "feasible": plan.feasible,
        "k": plan.k,
        "r": plan.r,
        "levels": plan.levels,
        "predicted_final_error": plan.predicted_final_error,
        "predicted_yield": plan.predicted_yield,
        "predicted_key_length": plan.predicted_key_length,
        "stage_rates": plan.stage_rates.iter().map(|r| r.as_array()).collect::<Vec<_>>(),
        "stage_survivals": plan.stage_survivals,
    })
}

fn print_plan_flat(prefix: &str, plan: &SchedulePlan) {
    println!("{prefix}feasible={}", plan.feasible);
    if plan.feasible {
        println!("{prefix}k={}", plan.k);
        println!("{prefix}r={}", plan.r);
        println!("{prefix}levels={}", plan.levels);
        println!("{prefix}predicted_final_error={:.9}", plan.predicted_final_error);
        println!("{prefix}predicted_yield={:.6e}", plan.predicted_yield);
        println!("{prefix}predicted_key_length={}", plan.predicted_key_length);
        for (j, (rates, survival)) in plan
            .stage_rates
            .iter()
            .zip(plan.stage_survivals.iter().chain(std::iter::repeat(&f64::NAN)))
            .enumerate()
        {
            let stage = if j < plan.k as usize {
                format!("after_ep_{}", j + 1)
            } else {
                "after_pec".to_string()
            };
            let survival_text = if j < plan.k as usize {
                format!("{survival:.9}")
            } else {
                String::new()
            };
            println!(
                "{prefix}stage_{stage}={:.12},{:.12},{:.12},{:.12}{}",
                rates.p_i(),
                rates.p_x(),
                rates.p_y(),
                rates.p_z(),
                if survival_text.is_empty() {
                    String::new()
                } else {
                    format!(" survival={survival_text}")
                }
            );
        }
    }
}

fn cmd_plan(args: &PlanArgs) -> Result<(), String> {
    let rates = args.channel.resolve()?;
    let config = args.planner.config(args.n_sifted)?;
    let plan = plan_schedule(&rates, &config);
    if args.json {
        let body = json!({
            "version": VERSION,
            "rates": rates.as_array(),
            "n_sifted": args.n_sifted,
            "error_target": config.error_target,
            "key_fidelity_epsilon": config.key_fidelity_epsilon,
            "plan": plan_to_json(&plan),
        });
        println!("{}", serde_json::to_string_pretty(&body).expect("serializable"));
        return Ok(());
    }
    artifact_header(&format!(
        "plan rates={:?} n_sifted={} target={} epsilon={} max_k={}",
        rates.as_array(),
        args.n_sifted,
        config.error_target,
        config.key_fidelity_epsilon,
        config.max_k
    ));
    print_plan_flat("", &plan);
    Ok(())
}

fn report_to_json(report: &SimReport) -> serde_json::Value {
    json!({
        "sifted_count": report.sifted_count,
        "tested_count": report.tested_count,
        "estimated_rates": report.estimated_rates.as_array(),
        "plan": plan_to_json(&report.plan),
        "post_ep_counts": report.post_ep_counts,
        "post_pec_count": report.post_pec_count,
        "final_key_length": report.final_key_length,
        "key_mismatch_count": report.key_mismatch_count,
        "residual_phase_error_rate": report.residual_phase_error_rate,
        "aborted": report.aborted.map(|r| r.as_str()),
    })
}

fn print_report_flat(prefix: &str, report: &SimReport) {
    println!("{prefix}sifted_count={}", report.sifted_count);
    println!("{prefix}tested_count={}", report.tested_count);
    let e = report.estimated_rates;
    println!(
        "{prefix}estimated_rates={:.9},{:.9},{:.9},{:.9}",
        e.p_i(),
        e.p_x(),
        e.p_y(),
        e.p_z()
    );
    println!(
        "{prefix}aborted={}",
        report.aborted.map(|r| r.as_str()).unwrap_or("none")
    );
    print_plan_flat(&format!("{prefix}plan_"), &report.plan);
    if report.aborted.is_none() {
        println!(
            "{prefix}post_ep_counts={}",
            report
                .post_ep_counts
                .iter()
                .map(|c| c.to_string())
                .collect::<Vec<_>>()
                .join(",")
        );
        println!("{prefix}post_pec_count={}", report.post_pec_count);
        println!("{prefix}final_key_length={}", report.final_key_length);
        println!("{prefix}key_mismatch_count={}", report.key_mismatch_count);
        println!(
            "{prefix}residual_phase_error_rate={:.9}",
            report.residual_phase_error_rate
        );
    }
}

fn build_sim_config(args: &SimulateArgs) -> Result<SimConfig, String> {
    let rates = args.channel.resolve()?;
    Ok(SimConfig {
        n_sent: args.n_sent,
        rates,
        test_bits_per_basis: args.test_bits,
        planner: args.planner.config(0)?,
        seed: args.seed,
        trials: args.trials,
        plan_on_true_rates: args.plan_on_true_rates,
        symmetrize_estimate: args.symmetrize_estimate,
    })
}

fn cmd_simulate(args: &SimulateArgs) -> Result<(), String> {
    let config = build_sim_config(args)?;
    let reports = run_trials(&config);
    if args.json {
        let body = json!({
            "version": VERSION,
            "n_sent": config.n_sent,
            "rates": config.rates.as_array(),
            "test_bits_per_basis": config.test_bits_per_basis,
            "seed": config.seed,
            "trials": config.trials,
            "reports": reports.iter().map(report_to_json).collect::<Vec<_>>(),
        });
        println!("{}", serde_json::to_string_pretty(&body).expect("serializable"));
        return Ok(());
    }
    artifact_header(&format!(
        "simulate rates={:?} n_sent={} test_bits={} trials={} seed={}",
        config.rates.as_array(),
        config.n_sent,
        config.test_bits_per_basis,
        config.trials,
        config.seed
    ));
    println!("seed={}", config.seed);
    println!("trials={}", config.trials);
    for (t, report) in reports.iter().enumerate() {
        print_report_flat(&format!("trial_{t}_"), report);
    }
    let completed: Vec<&SimReport> = reports.iter().filter(|r| r.aborted.is_none()).collect();
    println!("completed_trials={}", completed.len());
    if !completed.is_empty() {
        let key_bits: u64 = completed.iter().map(|r| r.final_key_length).sum();
        let mismatches: u64 = completed.iter().map(|r| r.key_mismatch_count).sum();
        println!("total_key_bits={key_bits}");
        println!("total_mismatches={mismatches}");
    }
    Ok(())
}

fn cmd_sweep(args: &SweepArgs) -> Result<(), String> {
    if args.step.is_nan() || args.step <= 0.0 || args.from.is_nan() || args.to.is_nan() || args.from > args.to {
        return Err("sweep requires from <= to and a positive step".to_string());
    }
    let planner_probe = args.planner.config(args.n_sifted)?;
    let mut points = Vec::new();
    let mut b = args.from;
    while b <= args.to + 1e-12 {
        points.push(b);
        b += args.step;
    }

    type SweepRow = (f64, bool, SchedulePlan, Option<(f64, f64)>);
    let evaluate = |b: f64| -> Result<SweepRow, String> {
        let rates = depolarizing(b).map_err(|e| e.to_string())?;
        let feasible = asymptotic_feasible(&rates, planner_probe.error_target);
        let plan = plan_schedule(&rates, &planner_probe);
        let mc = if args.trials > 0 {
            // Trials parallelize inside run_trials.
            let config = SimConfig {
                n_sent: args.n_sent,
                rates,
                test_bits_per_basis: args.test_bits,
                planner: args.planner.config(0)?,
                seed: args.seed,
                trials: args.trials,
                plan_on_true_rates: false,
                symmetrize_estimate: false,
            };
            let reports = run_trials(&config);
            let completed: Vec<&SimReport> =
                reports.iter().filter(|r| r.aborted.is_none()).collect();
            if completed.is_empty() {
                Some((0.0, f64::NAN))
            } else {
                let key_bits: u64 = completed.iter().map(|r| r.final_key_length).sum();
                let mismatches: u64 = completed.iter().map(|r| r.key_mismatch_count).sum();
                let key_rate = key_bits as f64 / (args.n_sent as f64 * completed.len() as f64);
                let mismatch_rate = if key_bits == 0 {
                    f64::NAN
                } else {
                    mismatches as f64 / key_bits as f64
                };
                Some((key_rate, mismatch_rate))
            }
        } else {
            None
        };
        Ok((b, feasible, plan, mc))
    };

    // Analytic-only sweeps evaluate the points concurrently; rows always
    // come out in parameter order.
    let rows: Vec<_> = if args.trials == 0 && points.len() > 1 {
        let workers = std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1)
            .min(points.len());
        let chunk_size = points.len().div_ceil(workers);
        let collected: Vec<_> = std::thread::scope(|scope| {
            let handles: Vec<_> = points
                .chunks(chunk_size)
                .map(|chunk| scope.spawn(move || chunk.iter().map(|&b| evaluate(b)).collect::<Vec<_>>()))
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("sweep worker panicked"))
                .collect()
        });
        collected.into_iter().collect::<Result<_, _>>()?
    } else {
        points
            .iter()
            .map(|&b| evaluate(b))
            .collect::<Result<_, _>>()?
    };

    if args.json {
        let body: Vec<_> = rows
            .iter()
            .map(|(b, feasible, plan, mc)| {
                json!({
                    "bit_error": b,
                    "feasible": feasible,
                    "plan": plan_to_json(plan),
                    "mc_key_rate": mc.map(|m| m.0),
                    "mc_mismatch_rate": mc.map(|m| m.1),
                })
            })
            .collect();
        println!(
            "{}",
            serde_json::to_string_pretty(&json!({ "version": VERSION, "rows": body }))
                .expect("serializable")
        );
        return Ok(());
    }

    artifact_header(&format!(
        "sweep from={} to={} step={} n_sifted={} trials={} seed={}",
        args.from, args.to, args.step, args.n_sifted, args.trials, args.seed
    ));
    println!("bit_error,feasible,k,r,L,yield,mc_key_rate,mc_mismatch_rate");
    for (b, feasible, plan, mc) in rows {
        let (k, r, l, yield_) = if plan.feasible {
            (
                plan.k.to_string(),
                plan.r.to_string(),
                plan.levels.to_string(),
                format!("{:.6e}", plan.predicted_yield),
            )
        } else {
            (String::new(), String::new(), String::new(), "0".to_string())
        };
        let (key_rate, mismatch_rate) = match mc {
            Some((kr, mr)) => (format!("{kr:.6e}"), format!("{mr}")),
            None => ("nan".to_string(), "nan".to_string()),
        };
        println!("{b:.4},{feasible},{k},{r},{l},{yield_},{key_rate},{mismatch_rate}");
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let run = || match &cli.command {
        Command::Threshold(args) => cmd_threshold(args),
        Command::Evolve(args) => cmd_evolve(args),
        Command::Plan(args) => cmd_plan(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Sweep(args) => cmd_sweep(args),
    };
    match std::panic::catch_unwind(run) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(2)
        }
        Err(_) => {
            eprintln!("error: internal invariant violation");
            ExitCode::from(3)
        }
    }
}
