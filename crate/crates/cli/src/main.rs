use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use declqr::controller::{
    noise_response, policy_cost, realize, realize_steady, simulate_measured, stability_check,
    ControllerRealization,
};
use declqr::error::Error;
use declqr::infograph::{check_properties, InfoGraph};
use declqr::io::{
    fmt_float, gains_to_json, parse_gains, parse_graph, parse_problem, trajectory_csv,
};
use declqr::messaging::{build_plan, locality_violations, run_distributed, trace_log};
use declqr::netgraph::{delay_matrix, expand_relays, NetworkGraph};
use declqr::oracle::{brute_force_solve_with_cap, certify_with_cap, compare_policy};
use declqr::problem::{validate, Horizon, LqProblem, NoiseSampler};
use declqr::riccati::{
    check_ss_conditions, finite_horizon, optimal_cost, steady_state, trace_csv,
    DEFAULT_SS_MAX_ITER, DEFAULT_SS_TOL,
};

#[derive(Parser)]
#[command(name = "declqr", version, about = "Decentralized LQ synthesis over delay graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Output directory.
    #[arg(long, env = "DECLQR_OUT_DIR", default_value = "declqr-out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Dump the information graph (DOT and JSON) and check its properties.
    Infograph {
        /// Graph or problem file.
        file: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Synthesize gains and write traces of the value matrices.
    Synth {
        problem: PathBuf,
        /// Override the horizon of time-invariant data.
        #[arg(long, conflicts_with = "steady_state")]
        horizon: Option<usize>,
        /// Steady-state gains from the fixed-point iteration.
        #[arg(long)]
        steady_state: bool,
        /// Horizon of the finite recursion whose traces are written in steady-state mode.
        #[arg(long, default_value_t = 200)]
        trace_horizon: usize,
        #[arg(long, default_value_t = DEFAULT_SS_TOL)]
        tol: f64,
        #[arg(long, default_value_t = DEFAULT_SS_MAX_ITER)]
        max_iter: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Roll out the closed loop and report costs.
    Simulate {
        problem: PathBuf,
        /// Gains file from `synth`; synthesized on the fly when absent.
        #[arg(long)]
        gains: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
        rollouts: u64,
        /// Run the message-passing protocol instead of the centralized update.
        #[arg(long)]
        distributed: bool,
        #[arg(long)]
        horizon: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Compare the synthesized (or supplied) controller with the brute-force optimum.
    Verify {
        problem: PathBuf,
        #[arg(long)]
        gains: Option<PathBuf>,
        #[arg(long)]
        horizon: Option<usize>,
        #[arg(long, default_value_t = declqr::oracle::DEFAULT_TOL)]
        tol: f64,
        /// Largest number of decision variables the oracle will accept.
        #[arg(long, default_value_t = declqr::oracle::DEFAULT_DECISION_CAP)]
        cap: usize,
        #[command(flatten)]
        common: Common,
    },
}

enum Failure {
    Input(String),
    Condition(String),
    Guardrail(String),
    Internal(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::Assumption(_) | Error::Divergence { .. } => Failure::Condition(msg),
            Error::Guardrail { .. } => Failure::Guardrail(msg),
            Error::Protocol(_) => Failure::Internal(msg),
            _ => Failure::Input(msg),
        }
    }
}

type Outcome = Result<(), Failure>;

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn write(dir: &Path, name: &str, contents: &str) -> Outcome {
    fs::create_dir_all(dir)
        .and_then(|_| fs::write(dir.join(name), contents))
        .map_err(|e| Failure::Internal(format!("writing {}: {e}", dir.join(name).display())))
}

/// Parse, validate and expand relays.
fn load(path: &Path, horizon: Option<usize>) -> Result<(NetworkGraph, LqProblem), Failure> {
    let (graph, mut problem) = parse_problem(&read(path)?)?;
    let report = validate(&problem, &delay_matrix(&graph)?)?;
    report.into_result()?;
    if let Some(t) = horizon {
        problem = problem.with_horizon(t)?;
    }
    let (g2, p2) = expand_relays(&graph, &problem)?;
    if g2.node_count() > graph.node_count() {
        eprintln!(
            "expanded {} relay nodes for delays above one",
            g2.node_count() - graph.node_count()
        );
    }
    Ok((g2, p2))
}

fn cmd_infograph(file: &Path, out: &Path) -> Outcome {
    let text = read(file)?;
    let graph = match parse_graph(&text) {
        Ok(g) => g,
        Err(_) => parse_problem(&text)?.0,
    };
    let ig = InfoGraph::build(&delay_matrix(&graph)?);
    let ids = graph.nodes();
    write(out, "infograph.dot", &ig.to_dot(ids))?;
    let dump = serde_json::to_string_pretty(&ig.dump(ids)).expect("dump serializes");
    write(out, "infograph.json", &dump)?;
    let report = check_properties(&ig, graph.node_count());
    println!("{report}");
    if graph.max_delay() <= 1 {
        let plan = build_plan(&graph, &ig)?;
        write(out, "plan.dot", &plan.to_dot(ids, &ig))?;
        println!(
            "{} payloads per step; {:.1}% of stored memory entries never read",
            plan.payloads_per_step(),
            100.0 * plan.unread_fraction()
        );
    }
    if report.is_ok() {
        Ok(())
    } else {
        Err(Failure::Condition("information graph property violated".into()))
    }
}

fn cmd_synth(
    path: &Path,
    horizon: Option<usize>,
    steady: bool,
    trace_horizon: usize,
    tol: f64,
    max_iter: usize,
    out: &Path,
) -> Outcome {
    let (graph, problem) = load(path, horizon)?;
    let ids = problem.partition().node_ids().to_vec();
    let ig = InfoGraph::build(&delay_matrix(&graph)?);
    if steady {
        if !problem.is_time_invariant() {
            return Err(Failure::Input("steady state needs time-invariant data".into()));
        }
        let report = check_ss_conditions(&problem, &ig)?;
        write(out, "conditions.json", &serde_json::to_string_pretty(&report).unwrap())?;
        if !report.passed() {
            return Err(Failure::Condition(format!(
                "steady-state conditions fail: {}",
                serde_json::to_string(&report.self_loops).unwrap()
            )));
        }
        let ss = steady_state(&problem, &ig, tol, max_iter)?;
        let gains = ss.gains();
        let cr = realize_steady(&problem, &ig, &gains)?;
        let stab = stability_check(&cr);
        write(out, "gains.json", &gains_to_json(&gains, &ig, &ids, true))?;
        let (vs, _) = finite_horizon(&problem.with_horizon(trace_horizon)?, &ig)?;
        write(out, "traces.csv", &trace_csv(&vs, &ig, &ids))?;
        let summary = json!({
            "iterations": ss.iterations,
            "traces": ss.x.iter().map(|x| x.trace()).collect::<Vec<_>>(),
            "stability": stab,
        });
        write(out, "steady_state.json", &serde_json::to_string_pretty(&summary).unwrap())?;
        println!("steady state converged; closed loop stable: {}", stab.stable());
        if !stab.stable() {
            return Err(Failure::Condition("steady-state closed loop is unstable".into()));
        }
    } else {
        let (vs, gains) = finite_horizon(&problem, &ig)?;
        write(out, "gains.json", &gains_to_json(&gains, &ig, &ids, false))?;
        write(out, "traces.csv", &trace_csv(&vs, &ig, &ids))?;
        println!("V0 = {}", fmt_float(optimal_cost(&vs, &problem, &ig)));
    }
    Ok(())
}

fn controller(
    problem: &LqProblem,
    ig: &InfoGraph,
    gains: Option<&Path>,
) -> Result<ControllerRealization, Failure> {
    match gains {
        Some(path) => {
            let (ks, steady) = parse_gains(&read(path)?, ig, problem)?;
            if steady {
                Ok(realize_steady(&problem.with_horizon(1)?, ig, &ks)?)
            } else {
                Ok(realize(problem, ig, &ks)?)
            }
        }
        None => {
            let (_, ks) = finite_horizon(problem, ig)?;
            Ok(realize(problem, ig, &ks)?)
        }
    }
}

fn finite(problem: LqProblem) -> Result<LqProblem, Failure> {
    match problem.horizon() {
        Horizon::Finite(_) => Ok(problem),
        Horizon::Infinite => Err(Failure::Input(
            "problem has an infinite horizon; pass --horizon".into(),
        )),
    }
}

fn cmd_simulate(
    path: &Path,
    gains: Option<&Path>,
    seed: u64,
    rollouts: usize,
    distributed: bool,
    horizon: Option<usize>,
    out: &Path,
) -> Outcome {
    use rand::SeedableRng;
    let (graph, problem) = load(path, horizon)?;
    let problem = finite(problem)?;
    let ids = problem.partition().node_ids().to_vec();
    let ig = InfoGraph::build(&delay_matrix(&graph)?);
    let cr = controller(&problem, &ig, gains)?;
    let plan = if distributed { Some(build_plan(&graph, &ig)?) } else { None };
    let sampler = NoiseSampler::new(&problem)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut costs = String::from("rollout,cost\n");
    let mut samples = Vec::with_capacity(rollouts);
    for k in 0..rollouts {
        let dist = sampler.sample(&mut rng);
        let traj = match &plan {
            Some(plan) => {
                let run = run_distributed(&cr, &problem, plan, &dist)?;
                let bad = locality_violations(plan, &run);
                if !bad.is_empty() {
                    return Err(Failure::Internal(format!("{} out-of-plan reads", bad.len())));
                }
                if k == 0 {
                    write(out, "trace.jsonl", &trace_log(&run, &ids, &ig))?;
                }
                run.trajectory
            }
            None => simulate_measured(&cr, &problem, &dist)?,
        };
        if k == 0 {
            write(out, "trajectory.csv", &trajectory_csv(&traj, &cr))?;
        }
        samples.push(traj.cost());
        costs.push_str(&format!("{k},{}\n", fmt_float(traj.cost())));
    }
    write(out, "costs.csv", &costs)?;
    if rollouts > 1 {
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let stderr = (var / n).sqrt();
        let expected = policy_cost(&cr, &problem)?;
        println!(
            "mean cost {} +/- {} over {rollouts} rollouts; expected {} ({:.2} standard errors)",
            fmt_float(mean),
            fmt_float(stderr),
            fmt_float(expected),
            (mean - expected) / stderr.max(f64::MIN_POSITIVE)
        );
    } else {
        println!("cost {}", fmt_float(samples[0]));
    }
    Ok(())
}

fn cmd_verify(
    path: &Path,
    gains: Option<&Path>,
    horizon: Option<usize>,
    tol: f64,
    cap: usize,
    out: &Path,
) -> Outcome {
    let (graph, mut problem) = parse_problem(&read(path)?)?;
    validate(&problem, &delay_matrix(&graph)?)?.into_result()?;
    if let Some(t) = horizon {
        problem = problem.with_horizon(t)?;
    }
    let problem = finite(problem)?;
    let (mut report, cmp) = match gains {
        None => {
            let cert = certify_with_cap(&graph, &problem, cap)?;
            (serde_json::to_value(&cert).unwrap(), cert.comparison)
        }
        Some(path) => {
            let oracle = brute_force_solve_with_cap(&problem, &delay_matrix(&graph)?, cap)?;
            let (g2, p2) = expand_relays(&graph, &problem)?;
            let ig = InfoGraph::build(&delay_matrix(&g2)?);
            let cr = controller(&p2, &ig, Some(path))?;
            let resp = noise_response(&cr, &p2)?;
            let cmp = compare_policy(&problem, &resp, &oracle)?;
            (json!({ "comparison": cmp }), cmp)
        }
    };
    let pass = cmp.passes(tol);
    report["pass"] = json!(pass);
    report["tolerance"] = json!(tol);
    let text = serde_json::to_string_pretty(&report).unwrap();
    write(out, "verify.json", &text)?;
    println!(
        "{}: cost gap {:e} (relative {:e}), map deviation {:e}",
        if pass { "PASS" } else { "FAIL" },
        cmp.abs_gap,
        cmp.rel_gap,
        cmp.map_deviation
    );
    if pass {
        Ok(())
    } else {
        Err(Failure::Condition("synthesized controller disagrees with the oracle".into()))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Infograph { file, common } => cmd_infograph(&file, &common.out),
        Command::Synth {
            problem,
            horizon,
            steady_state,
            trace_horizon,
            tol,
            max_iter,
            common,
        } => cmd_synth(&problem, horizon, steady_state, trace_horizon, tol, max_iter, &common.out),
        Command::Simulate {
            problem,
            gains,
            seed,
            rollouts,
            distributed,
            horizon,
            common,
        } => cmd_simulate(
            &problem,
            gains.as_deref(),
            seed,
            rollouts as usize,
            distributed,
            horizon,
            &common.out,
        ),
        Command::Verify {
            problem,
            gains,
            horizon,
            tol,
            cap,
            common,
        } => cmd_verify(&problem, gains.as_deref(), horizon, tol, cap, &common.out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (code, msg) = match f {
                Failure::Input(m) => (2, m),
                Failure::Condition(m) => (3, m),
                Failure::Guardrail(m) => (4, m),
                Failure::Internal(m) => (1, m),
            };
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
