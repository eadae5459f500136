//! Batch CLI over the branchwave library: configure problems, run
//! estimators, law checks and moment tables, distill networks, and
//! persist results.
//!
//! Exit codes: 0 success, 2 configuration or precondition error,
//! 3 bound-audit failure, 4 numerical tolerance not reached.

mod builtins;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use branchwave::branching::{
    branch_count_pmf_table, dump_tree, simulate_chain, simulate_tree, BranchingConfig,
};
use branchwave::distill::{
    distill_linear, distill_nonlinear, distill_perturbative, DataNets, DistillConfig,
};
use branchwave::error::Error;
use branchwave::estimators::{
    check_wellposed, estimate_linear, estimate_nonlinear, estimate_perturbative, McConfig,
    WellPosedness,
};
use branchwave::kernels::Point;
use branchwave::moments::moment_table;
use branchwave::reference::{picard_nonlinear, PicardConfig};
use branchwave::relu::NeuralNet;

use crate::builtins::Builtin;
use crate::config::Config;

#[derive(Parser)]
#[command(name = "branchwave", version, about = "Branching Monte Carlo wave solver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate the solution on a (t, x) grid and write a CSV table.
    Solve(CommonArgs),
    /// Write the closed-form moment table with bound audits.
    Moments(CommonArgs),
    /// Compare the empirical branch-count law against the analytic pmf.
    Lawcheck(CommonArgs),
    /// Freeze an estimator run into an explicit ReLU network.
    Distill(CommonArgs),
    /// Run the audit battery (moments, law, well-posedness gate).
    Verify(CommonArgs),
    /// Re-emit artifacts: canonicalize a network file or dump a tree.
    Export(CommonArgs),
}

#[derive(clap::Args)]
struct CommonArgs {
    /// Configuration file (sections of key = value lines).
    #[arg(long)]
    config: PathBuf,
    /// Override the run seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the worker count.
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Additional overrides, section.key=value.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, args) = match &cli.command {
        Command::Solve(a) => ("solve", a),
        Command::Moments(a) => ("moments", a),
        Command::Lawcheck(a) => ("lawcheck", a),
        Command::Distill(a) => ("distill", a),
        Command::Verify(a) => ("verify", a),
        Command::Export(a) => ("export", a),
    };
    match run(name, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("branchwave {name}: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Domain(_) | Error::InvalidArgument(_) | Error::IllPosed(_) => 2,
        Error::AuditFailed(_) => 3,
        Error::Tolerance(_) => 4,
    }
}

fn run(name: &str, args: &CommonArgs) -> Result<(), Error> {
    let mut cfg = Config::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.set("run.seed", &seed.to_string());
    }
    if let Some(workers) = args.workers {
        cfg.set("run.workers", &workers.to_string());
    }
    for s in &args.sets {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| Error::invalid(format!("--set expects key=value, got {s}")))?;
        cfg.set(k.trim(), v.trim());
    }
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(cfg.get_or("run.out", "out")));
    std::fs::create_dir_all(&out)
        .map_err(|e| Error::invalid(format!("cannot create output directory: {e}")))?;
    write_text(&out.join("resolved_config.txt"), &cfg.resolved())?;

    match name {
        "solve" => cmd_solve(&cfg, &out),
        "moments" => cmd_moments(&cfg, &out),
        "lawcheck" => cmd_lawcheck(&cfg, &out),
        "distill" => cmd_distill(&cfg, &out),
        "verify" => cmd_verify(&cfg, &out),
        "export" => cmd_export(&cfg, &out),
        _ => unreachable!(),
    }
}

fn write_text(path: &Path, content: &str) -> Result<(), Error> {
    std::fs::write(path, content).map_err(|e| Error::invalid(format!("write {path:?}: {e}")))
}

fn parse_points(s: &str, d: usize) -> Result<Vec<Point>, Error> {
    s.split(';')
        .map(|p| {
            let coords: Vec<f64> = p
                .split(',')
                .map(|c| {
                    c.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::invalid(format!("bad coordinate {c:?}")))
                })
                .collect::<Result<_, _>>()?;
            if coords.len() != d {
                return Err(Error::invalid(format!(
                    "point {p:?} has {} coordinates, problem dimension is {d}",
                    coords.len()
                )));
            }
            let mut pt = [0.0; 3];
            pt[..d].copy_from_slice(&coords);
            Ok(pt)
        })
        .collect()
}

fn parse_times(s: &str) -> Result<Vec<f64>, Error> {
    s.split(',')
        .map(|c| {
            c.trim()
                .parse::<f64>()
                .map_err(|_| Error::invalid(format!("bad time {c:?}")))
        })
        .collect()
}

struct ProblemSetup {
    problem: branchwave::estimators::WaveProblem,
    f: Builtin,
    c: Builtin,
    source: Builtin,
    d: usize,
}

fn build_problem(cfg: &Config) -> Result<ProblemSetup, Error> {
    let d = cfg.get_usize("problem.dimension")?;
    let dim = branchwave::kernels::Dimension::new(d)?;
    let lambda = cfg.get_f64("problem.lambda")?;
    let horizon = cfg.get_f64("problem.horizon")?;
    let power = cfg.get_usize("problem.p")? as u32;
    let law = branchwave::kernels::LifetimeLaw::new(lambda)?;
    let f = Builtin::parse(&cfg.get_or("problem.f", "zero"))?;
    let c = Builtin::parse(&cfg.get_or("problem.c", "zero"))?;
    let source = Builtin::parse(&cfg.get_or("problem.source", "zero"))?;
    let problem = branchwave::estimators::WaveProblem::new(
        dim,
        horizon,
        law,
        power,
        f.space_fn(d),
        f.sup(),
        c.space_time_fn(d),
        c.sup(),
    )?
    .with_source(source.space_time_fn(d), source.sup());
    Ok(ProblemSetup {
        problem,
        f,
        c,
        source,
        d,
    })
}

fn mc_config(cfg: &Config) -> Result<McConfig, Error> {
    Ok(McConfig {
        samples: cfg.get_usize("run.samples")?,
        seed: cfg.get_u64("run.seed")?,
        workers: cfg.get_usize_or("run.workers", 1)?,
    })
}

fn cmd_solve(cfg: &Config, out: &Path) -> Result<(), Error> {
    let setup = build_problem(cfg)?;
    let mc = mc_config(cfg)?;
    let times = parse_times(&cfg.get("run.t")?)?;
    let points = parse_points(&cfg.get("run.x")?, setup.d)?;
    let mut csv = String::from("t");
    for i in 0..setup.d {
        csv.push_str(&format!(",x{}", i + 1));
    }
    csv.push_str(",estimate,std_error,samples,seed\n");
    for &t in &times {
        for &x in &points {
            let r = match setup.problem.power {
                0 => estimate_linear(&setup.problem, t, x, &mc)?,
                1 => estimate_perturbative(&setup.problem, t, x, &mc)?,
                _ => estimate_nonlinear(&setup.problem, t, x, &mc)?,
            };
            csv.push_str(&format!("{t}"));
            for coord in x.iter().take(setup.d) {
                csv.push_str(&format!(",{coord}"));
            }
            csv.push_str(&format!(
                ",{},{},{},{}\n",
                r.estimate, r.std_error, r.samples, r.seed
            ));
        }
    }
    write_text(&out.join("solve.csv"), &csv)
}

fn cmd_moments(cfg: &Config, out: &Path) -> Result<(), Error> {
    let p = cfg.get_usize("problem.p")? as u32;
    let lambda = cfg.get_f64("problem.lambda")?;
    let t = cfg.get_f64("moments.t")?;
    let n_max = cfg.get_usize("moments.n_max")?;
    let table = moment_table(p.max(2), lambda, t, n_max)?;
    let mut csv = String::from("n,i_chain,j_chain,a,b,i_tree,j_tree_bound,bound_audit\n");
    let mut all_pass = true;
    for n in 0..=n_max {
        let pass = table.bounds_pass[n];
        all_pass &= pass;
        csv.push_str(&format!(
            "{n},{},{},{},{},{},{},{}\n",
            table.i_chain[n],
            table.j_chain[n],
            table.a[n],
            table.b[n],
            table.i_tree[n],
            table.j_tree_bound[n],
            if pass { "pass" } else { "fail" }
        ));
    }
    write_text(&out.join("moments.csv"), &csv)?;
    if !all_pass {
        return Err(Error::AuditFailed(
            "a coefficient bound audit failed; see moments.csv".into(),
        ));
    }
    Ok(())
}

fn empirical_law(
    cfg: &Config,
    p: u32,
    lambda: f64,
    t: f64,
    trees: usize,
    n_cut: usize,
) -> Result<(Vec<f64>, Vec<f64>), Error> {
    let d = cfg.get_usize("problem.dimension")?;
    let dim = branchwave::kernels::Dimension::new(d)?;
    let law = branchwave::kernels::LifetimeLaw::new(lambda)?;
    let bc = BranchingConfig::new(p.max(1), t, [0.0; 3], law, dim)?;
    let mut counts = vec![0usize; n_cut + 1];
    for i in 0..trees {
        let mut rng = branchwave::estimators::sample_stream(cfg.get_u64("run.seed")?, i as u64);
        let tree = if p <= 1 {
            simulate_chain(&bc, &mut rng)?
        } else {
            simulate_tree(&bc, &mut rng)?
        };
        let n = tree.branch_count().min(n_cut);
        counts[n] += 1;
    }
    let empirical: Vec<f64> = counts.iter().map(|&c| c as f64 / trees as f64).collect();
    let analytic = if p <= 1 {
        let mut pmf = Vec::with_capacity(n_cut + 1);
        let mut v = (-lambda * t).exp();
        for n in 0..=n_cut {
            pmf.push(v);
            v *= lambda * t / (n as f64 + 1.0);
        }
        pmf
    } else {
        branch_count_pmf_table(n_cut, p, lambda, t)?
    };
    Ok((empirical, analytic))
}

fn cmd_lawcheck(cfg: &Config, out: &Path) -> Result<(), Error> {
    let p = cfg.get_usize("problem.p")? as u32;
    let lambda = cfg.get_f64("problem.lambda")?;
    let t = cfg.get_f64("moments.t")?;
    let trees = cfg.get_usize("lawcheck.trees")?;
    if trees == 0 {
        return Err(Error::invalid("lawcheck.trees must be >= 1"));
    }
    let n_cut = cfg.get_usize_or("lawcheck.n_cut", 64)?;
    let (empirical, analytic) = empirical_law(cfg, p, lambda, t, trees, n_cut)?;
    let tv: f64 = empirical
        .iter()
        .zip(analytic.iter())
        .map(|(e, a)| (e - a).abs())
        .sum::<f64>()
        * 0.5;
    let mut csv = String::from("n,empirical,analytic\n");
    for n in 0..=n_cut {
        csv.push_str(&format!("{n},{},{}\n", empirical[n], analytic[n]));
    }
    write_text(&out.join("lawcheck.csv"), &csv)?;
    write_text(
        &out.join("lawcheck_tv.txt"),
        &format!("tv {tv}\nthreshold 0.01\n{}\n", if tv < 0.01 { "pass" } else { "fail" }),
    )?;
    if tv >= 0.01 {
        return Err(Error::AuditFailed(format!(
            "total variation {tv} is not below 0.01"
        )));
    }
    Ok(())
}

fn build_data_nets(setup: &ProblemSetup, t: f64, delta: f64) -> Result<DataNets, Error> {
    let radius = (2.0 * t).max(0.5);
    let phi_f = setup.f.data_net(setup.d, radius, delta)?;
    let tx = if setup.problem.power == 0 {
        &setup.source
    } else {
        &setup.c
    };
    let phi_c = branchwave::distill::ignore_time(&tx.data_net(setup.d, radius, delta)?);
    Ok(DataNets {
        phi_f,
        phi_c,
        eps_data: delta,
        f_sup: setup.f.sup(),
        c_sup: tx.sup(),
    })
}

fn cmd_distill(cfg: &Config, out: &Path) -> Result<(), Error> {
    let setup = build_problem(cfg)?;
    if setup.d != 1 {
        return Err(Error::invalid(
            "distill needs the dimension-1 reference oracle; set problem.dimension = 1",
        ));
    }
    let eps_target = cfg.get_f64("distill.eps_target")?;
    if eps_target.is_nan() || eps_target <= 0.0 {
        return Err(Error::invalid("distill.eps_target must be positive"));
    }
    let t = parse_times(&cfg.get("run.t")?)?[0];
    let seed = cfg.get_u64("run.seed")?;
    let grid_n = cfg.get_usize_or("distill.grid", 101)?;
    let delta = eps_target / 2.0;
    let data = build_data_nets(&setup, t, delta)?;
    let dcfg = DistillConfig::new(eps_target, seed, grid_n)?;

    // dimension-1 oracle: retarded fixed-point grid solution
    let f = setup.f.clone();
    let c = if setup.problem.power == 0 {
        setup.source.clone()
    } else {
        setup.c.clone()
    };
    let pcfg = PicardConfig {
        x_radius: t + setup.problem.horizon + 0.5,
        ..PicardConfig::default()
    };
    let power = setup.problem.power;
    type Oracle = Box<dyn Fn(&[f64]) -> f64>;
    let oracle_fn: Oracle = if power == 0 {
        let qcfg = branchwave::reference::QuadratureConfig::default();
        Box::new(move |x: &[f64]| {
            branchwave::reference::dalembert(
                &|y: f64| f.eval1(y),
                Some(&|s: f64, y: f64| c.eval_st1(s, y)),
                t,
                x[0],
                &qcfg,
            )
            .unwrap_or(f64::NAN)
        })
    } else {
        let sol = picard_nonlinear(
            power.max(1),
            &|s, y| c.eval_st1(s, y),
            &|y| f.eval1(y),
            setup.problem.horizon.max(t),
            &pcfg,
            12,
            branchwave::kernels::Dimension::One,
        )?;
        Box::new(move |x: &[f64]| sol.eval(t, x[0]))
    };

    let result = match power {
        0 => distill_linear(&setup.problem, t, &data, &dcfg, &oracle_fn)?,
        1 => distill_perturbative(&setup.problem, t, &data, &dcfg, &oracle_fn)?,
        _ => distill_nonlinear(&setup.problem, t, &data, &dcfg, &oracle_fn)?,
    };
    let report_json = serde_json::to_string_pretty(&result.report)
        .map_err(|e| Error::invalid(format!("report serialization: {e}")))?;
    write_text(&out.join("distill_report.json"), &report_json)?;
    write_text(&out.join("network.json"), &result.net.to_json())?;
    if !result.report.audits_pass {
        return Err(Error::AuditFailed(
            "distillation audits failed; see distill_report.json".into(),
        ));
    }
    Ok(())
}

fn cmd_verify(cfg: &Config, out: &Path) -> Result<(), Error> {
    let setup = build_problem(cfg)?;
    let lambda = cfg.get_f64("problem.lambda")?;
    let t = cfg.get_f64("moments.t")?;
    let mut lines = Vec::new();
    let mut failed = false;

    // moment-table bound audits
    let table = moment_table(setup.problem.power.max(2), lambda, t, 30)?;
    let ok = table.bounds_pass.iter().all(|&x| x);
    failed |= !ok;
    lines.push(format!("moment-bounds {}", if ok { "pass" } else { "fail" }));

    // branch-count law at a reduced tree count
    let trees = cfg.get_usize_or("lawcheck.trees", 20_000)?;
    let (emp, ana) = empirical_law(cfg, setup.problem.power, lambda, t, trees, 64)?;
    let tv: f64 = emp
        .iter()
        .zip(ana.iter())
        .map(|(e, a)| (e - a).abs())
        .sum::<f64>()
        * 0.5;
    let ok = tv < 0.01;
    failed |= !ok;
    lines.push(format!("branch-law tv {tv} {}", if ok { "pass" } else { "fail" }));

    // well-posedness gate report
    match check_wellposed(&setup.problem) {
        WellPosedness::NotApplicable => lines.push("wellposed not-applicable".into()),
        WellPosedness::Checked { pass, margin, threshold } => {
            failed |= !pass;
            lines.push(format!(
                "wellposed margin {margin} threshold {threshold} {}",
                if pass { "pass" } else { "fail" }
            ));
        }
    }
    write_text(&out.join("verify.txt"), &(lines.join("\n") + "\n"))?;
    if failed {
        return Err(Error::AuditFailed("verification failed; see verify.txt".into()));
    }
    Ok(())
}

fn cmd_export(cfg: &Config, out: &Path) -> Result<(), Error> {
    match cfg.get_or("export.mode", "net").as_str() {
        "net" => {
            let path = cfg.get("export.net_in")?;
            let raw = std::fs::read_to_string(&path)
                .map_err(|e| Error::invalid(format!("read {path}: {e}")))?;
            let net = NeuralNet::from_json(&raw)?;
            let m = net.metrics();
            let meta = serde_json::json!({
                "params": m.params,
                "hidden": m.hidden,
                "width": m.width,
                "dims": m.dims,
            });
            write_text(&out.join("network_metrics.json"), &meta.to_string())?;
            write_text(&out.join("network_canonical.json"), &net.to_json())
        }
        "tree" => {
            let setup = build_problem(cfg)?;
            let t = cfg.get_f64("moments.t")?;
            let stream = cfg.get_u64_or("export.tree_stream", 0)?;
            let bc = BranchingConfig::new(
                setup.problem.power.max(1),
                t,
                [0.0; 3],
                setup.problem.law,
                setup.problem.dim,
            )?;
            let mut rng = branchwave::estimators::sample_stream(cfg.get_u64("run.seed")?, stream);
            let tree = if setup.problem.power <= 1 {
                simulate_chain(&bc, &mut rng)?
            } else {
                simulate_tree(&bc, &mut rng)?
            };
            write_text(&out.join("tree.txt"), &dump_tree(&tree))
        }
        other => Err(Error::invalid(format!("unknown export mode {other:?}"))),
    }
}
