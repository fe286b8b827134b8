use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;
use serde::Deserialize;

use kgz_core::harness::{
    check_eps_scale, fit_step, grid_for, preset_initial_data, run_sweep, write_snapshots, Case, SweepMode,
    SweepOutput, SweepSpec,
};
use kgz_core::mesh::norms;
use kgz_core::{fdm, KgzError, KgzParams, Result};

#[derive(Parser, Debug)]
#[command(name = "kgz", version, about = "Klein-Gordon-Zakharov finite difference solver and convergence harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Single run with snapshot output.
    Solve(SolveArgs),
    /// Spatial, temporal or eps-limit sweep written as a CSV table.
    Sweep(SweepArgs),
    /// eps-limit sweep (KGZ against the KG-OP limit).
    LimitStudy(SweepArgs),
    /// Runs the property suite.
    Check,
}

#[derive(Args, Deserialize, Debug, Default)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
struct SolveArgs {
    /// JSON file with any of these options; flags take precedence.
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long)]
    preset: Option<String>,
    /// I, II or custom
    #[arg(long)]
    case: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    alpha: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    beta: Option<f64>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    h: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long = "T")]
    #[serde(rename = "T")]
    t_final: Option<f64>,
    /// Comma-separated snapshot times (default: T).
    #[arg(long, value_delimiter = ',')]
    snapshots: Option<Vec<f64>>,
    /// Snapshot files are written to `<out>_t<time>.csv`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Allow eps below the desk-scale floor.
    #[arg(long)]
    #[serde(default)]
    paper_scale: bool,
}

#[derive(Args, Deserialize, Debug, Default)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
struct SweepArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// spatial, temporal or eps-limit
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    case: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    alpha: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    beta: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    eps_list: Option<Vec<f64>>,
    #[arg(long)]
    h0: Option<f64>,
    #[arg(long)]
    tau0: Option<f64>,
    #[arg(long)]
    levels: Option<usize>,
    #[arg(long = "T")]
    #[serde(rename = "T")]
    t_final: Option<f64>,
    /// Space refinement of the reference run (spatial mode).
    #[arg(long)]
    ref_space: Option<usize>,
    /// Time refinement of the reference run (temporal mode).
    #[arg(long)]
    ref_time: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    #[serde(default)]
    paper_scale: bool,
    #[arg(long)]
    workers: Option<usize>,
}

fn load_config<T: for<'de> Deserialize<'de> + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| KgzError::Io(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| KgzError::Parameter(format!("config {}: {e}", p.display())))
        }
    }
}

macro_rules! overlay {
    ($cli:ident, $file:ident; $($field:ident),*) => {
        $( if $cli.$field.is_none() { $cli.$field = $file.$field; } )*
        $cli.paper_scale |= $file.paper_scale;
    };
}

fn solve(mut args: SolveArgs) -> Result<()> {
    let file: SolveArgs = load_config(args.config.as_deref())?;
    overlay!(args, file; preset, case, alpha, beta, eps, h, tau, t_final, snapshots, out);

    let preset = args.preset.as_deref().unwrap_or("gauss_sech");
    let data = preset_initial_data(preset)?;
    let case = Case::parse(args.case.as_deref().unwrap_or("I"), args.alpha, args.beta)?;
    let eps = args.eps.ok_or_else(|| KgzError::Parameter("--eps is required".into()))?;
    check_eps_scale(eps, args.paper_scale)?;
    let t_final = args.t_final.unwrap_or(1.0);
    let grid = grid_for(eps, args.h.unwrap_or(0.05))?;
    let tau_req = args.tau.unwrap_or(1e-3);
    if !(tau_req > 0.0) || !(t_final > 0.0) {
        return Err(KgzError::Parameter("tau and T must be positive".into()));
    }
    let (tau, _) = fit_step(t_final, tau_req);
    if tau != tau_req {
        info!("tau adjusted from {tau_req} to {tau}");
    }
    let params = KgzParams::new(eps, case.alpha(), case.beta(), grid, tau, t_final)?;
    let times = args.snapshots.clone().unwrap_or_else(|| vec![t_final]);
    info!(
        "solve: preset={preset} case={} eps={eps} domain=[{}, {}] M={} tau={tau} K={}",
        case.label(),
        params.grid.a(),
        params.grid.b(),
        params.grid.cells(),
        params.steps()
    );
    let snaps = fdm::run(&params, &data, &times)?;
    for s in &snaps {
        let ne = norms(&s.e, &params.grid)?;
        let nn = norms(&s.n, &params.grid)?;
        println!(
            "t={} |E|_l2={:.6e} |E|_max={:.6e} |N|_l2={:.6e} |N|_max={:.6e}",
            s.t, ne.l2, ne.inf, nn.l2, nn.inf
        );
    }
    if let Some(out) = &args.out {
        for p in write_snapshots(out, &params.grid, &snaps)? {
            println!("wrote {}", p.display());
        }
    }
    Ok(())
}

fn sweep(mut args: SweepArgs, forced: Option<SweepMode>) -> Result<()> {
    let file: SweepArgs = load_config(args.config.as_deref())?;
    overlay!(args, file; mode, preset, case, alpha, beta, eps_list, h0, tau0, levels, t_final, ref_space, ref_time, out, workers);

    let mode = match (forced, args.mode.as_deref()) {
        (Some(m), None) => m,
        (Some(m), Some(s)) => {
            let given: SweepMode = s.parse()?;
            if given != m {
                return Err(KgzError::Parameter(format!("limit-study does not accept --mode {s}")));
            }
            m
        }
        (None, Some(s)) => s.parse()?,
        (None, None) => return Err(KgzError::Parameter("--mode is required".into())),
    };
    let case = Case::parse(args.case.as_deref().unwrap_or("I"), args.alpha, args.beta)?;
    let eps_list = args.eps_list.unwrap_or_else(|| {
        if args.paper_scale {
            (0..=8).map(|i| 0.5f64.powi(i)).collect()
        } else if mode == SweepMode::EpsLimit {
            vec![0.25, 0.125, 1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0]
        } else {
            vec![1.0, 0.25, 1.0 / 16.0]
        }
    });
    let (h0, tau0, levels) = match mode {
        SweepMode::Spatial => (0.2, 1e-4, 4),
        SweepMode::Temporal => (0.005, 0.05, 6),
        SweepMode::EpsLimit => (0.05, 1e-3, 1),
    };
    let mut spec = SweepSpec::new(
        mode,
        args.preset.as_deref().unwrap_or("gauss_sech"),
        case,
        eps_list,
        args.h0.unwrap_or(h0),
        args.tau0.unwrap_or(tau0),
        args.levels.unwrap_or(levels),
    );
    spec.t_final = args.t_final.unwrap_or(1.0);
    if let Some(r) = args.ref_space {
        spec.ref_space = r;
    }
    if let Some(r) = args.ref_time {
        spec.ref_time = r;
    }
    spec.paper_scale = args.paper_scale;
    spec.workers = args.workers;
    spec.out_path = args.out.clone();

    let output = run_sweep(&spec)?;
    match &args.out {
        Some(p) => println!("wrote {}", p.display()),
        None => print!("{}", output.to_csv()),
    }
    let failures = match &output {
        SweepOutput::Rates(t) => t.rows.iter().filter(|r| r.row.error.is_some()).count(),
        SweepOutput::EpsLimit(t) => t.rows.iter().filter(|r| r.error.is_some()).count(),
    };
    if failures > 0 {
        return Err(KgzError::Degenerate(format!("{failures} sweep run(s) failed; see row-error lines")));
    }
    Ok(())
}

fn check() -> Result<()> {
    let results = kgz_core::checks::run_property_suite();
    let mut failed = 0;
    for r in &results {
        println!("{} {}: {}", if r.passed { "ok  " } else { "FAIL" }, r.name, r.detail);
        failed += (!r.passed) as usize;
    }
    if failed > 0 {
        return Err(KgzError::Degenerate(format!("{failed} property check(s) failed")));
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Solve(a) => solve(a),
        Command::Sweep(a) => sweep(a, None),
        Command::LimitStudy(a) => sweep(a, Some(SweepMode::EpsLimit)),
        Command::Check => check(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
