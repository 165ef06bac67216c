//! Command-line front end: analytic solver, simulator, parameter
//! sweeps, the neighbor-list benchmark, signaling trace printing, and
//! config validation. Outputs are key-value text or CSV on stdout.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use femtosim::bench::{run_trials, summarize, BenchParams, TrialRow};
use femtosim::config::{load_config, ScenarioConfig};
use femtosim::signaling::{
    run_f2f, run_f2m, run_m2f, F2fContext, F2mContext, M2fContext, SignalReport, SignalingTrace,
};
use femtosim::sim::{self, Estimate};
use femtosim::traffic::{forced_termination, solve_fixed_point, ForcedTermination, TrafficSolution};

#[derive(Parser)]
#[command(name = "femtosim", version, about = "Femtocell/macrocell traffic model and simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve the analytical traffic model and print the solution
    Analytic(AnalyticArgs),
    /// Run one simulation and print its metrics report
    Simulate(SimulateArgs),
    /// Vary one scalar over a range; CSV with analytic and optional
    /// simulated columns per point
    Sweep(SweepArgs),
    /// Monte-Carlo neighbor-list benchmark across deployment densities
    NclBench(NclBenchArgs),
    /// Print a handover signaling flow step by step
    SignalingTrace(TraceArgs),
    /// Check a configuration file and report every violation
    Validate(ValidateArgs),
}

/// Traffic-model knobs exposed on the command line. A flag set here
/// wins over the config file, which wins over the built-in defaults.
#[derive(Args)]
struct Overrides {
    /// Number of femtocell access points
    #[arg(long)]
    n: Option<u32>,
    /// Total offered load, calls per second
    #[arg(long)]
    lambda_total: Option<f64>,
    /// Share of femto-area calls that start on a femtocell
    #[arg(long)]
    alpha: Option<f64>,
    /// Macrocell channel count
    #[arg(long)]
    n_channels: Option<u32>,
    /// Channels reserved for handover arrivals
    #[arg(long)]
    s_channels: Option<u32>,
}

impl Overrides {
    fn apply(&self, cfg: &mut ScenarioConfig) {
        if let Some(n) = self.n {
            cfg.topology.n_faps = n;
        }
        if let Some(l) = self.lambda_total {
            cfg.traffic.lambda_total = l;
        }
        if let Some(a) = self.alpha {
            cfg.traffic.alpha = a;
        }
        if let Some(c) = self.n_channels {
            cfg.traffic.n_channels = c;
        }
        if let Some(s) = self.s_channels {
            cfg.traffic.s_channels = s;
        }
    }
}

#[derive(Args)]
struct AnalyticArgs {
    /// Scenario configuration file; defaults apply when omitted
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Simulated horizon in seconds
    #[arg(long)]
    horizon: Option<f64>,
    /// Measurement warm-up in seconds
    #[arg(long)]
    warmup: Option<f64>,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum SweepParam {
    N,
    LambdaTotal,
    Alpha,
    NChannels,
    SChannels,
}

impl SweepParam {
    fn name(self) -> &'static str {
        match self {
            SweepParam::N => "n",
            SweepParam::LambdaTotal => "lambda_total",
            SweepParam::Alpha => "alpha",
            SweepParam::NChannels => "n_channels",
            SweepParam::SChannels => "s_channels",
        }
    }

    /// Integer-valued parameters are rounded before application so the
    /// reported grid value matches what actually ran.
    fn quantize(self, v: f64) -> f64 {
        match self {
            SweepParam::N | SweepParam::NChannels | SweepParam::SChannels => v.round(),
            _ => v,
        }
    }

    fn apply(self, cfg: &mut ScenarioConfig, v: f64) {
        match self {
            SweepParam::N => cfg.topology.n_faps = v as u32,
            SweepParam::LambdaTotal => cfg.traffic.lambda_total = v,
            SweepParam::Alpha => cfg.traffic.alpha = v,
            SweepParam::NChannels => cfg.traffic.n_channels = v as u32,
            SweepParam::SChannels => cfg.traffic.s_channels = v as u32,
        }
    }
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
    /// Which scalar to vary
    #[arg(long, value_enum)]
    param: SweepParam,
    #[arg(long)]
    from: f64,
    #[arg(long)]
    to: f64,
    /// Grid size including both endpoints
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    points: u32,
    /// Simulation seeds per grid point; 0 keeps the sweep analytic-only
    #[arg(long, default_value_t = 0)]
    seeds: u64,
    /// Bound on worker threads; default uses all cores
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    jobs: Option<u32>,
}

#[derive(Args)]
struct NclBenchArgs {
    /// Thresholds and radio come from this config when given
    #[arg(long)]
    config: Option<PathBuf>,
    /// Deployment densities (FAP counts) to benchmark
    #[arg(long, value_delimiter = ',', default_values_t = vec![100u32, 200, 400, 600, 800, 1000])]
    densities: Vec<u32>,
    #[arg(long, default_value_t = 30)]
    seeds: u64,
    /// Trials per seed at each density
    #[arg(long, default_value_t = 1000)]
    trials: u32,
    /// Emit one summary row per density instead of per-trial rows
    #[arg(long)]
    summary: bool,
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    jobs: Option<u32>,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum FlowArg {
    F2m,
    M2f,
    F2f,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum GateArg {
    Preauth,
    Auth,
    Cac,
    Interference,
}

#[derive(Args)]
struct TraceArgs {
    /// Which handover flow to print
    #[arg(long, value_enum)]
    flow: FlowArg,
    /// Fail this gate and print the aborted flow
    #[arg(long, value_enum)]
    fail: Option<GateArg>,
}

#[derive(Args)]
struct ValidateArgs {
    /// Configuration file to check
    config: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::Analytic(a) => cmd_analytic(a),
        Cmd::Simulate(a) => cmd_simulate(a),
        Cmd::Sweep(a) => cmd_sweep(a),
        Cmd::NclBench(a) => cmd_ncl_bench(a),
        Cmd::SignalingTrace(a) => cmd_trace(a),
        Cmd::Validate(a) => cmd_validate(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if is_broken_pipe(&e) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

/// A reader that stops consuming our output is not an error.
fn is_broken_pipe(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        if let Some(io) = c.downcast_ref::<std::io::Error>() {
            return io.kind() == std::io::ErrorKind::BrokenPipe;
        }
        if let Some(csv) = c.downcast_ref::<csv::Error>() {
            if let csv::ErrorKind::Io(io) = csv.kind() {
                return io.kind() == std::io::ErrorKind::BrokenPipe;
            }
        }
        false
    })
}

fn load_or_default(path: Option<&PathBuf>) -> anyhow::Result<ScenarioConfig> {
    match path {
        Some(p) => Ok(load_config(p)?),
        None => Ok(ScenarioConfig::default()),
    }
}

fn kv(out: &mut impl Write, name: &str, value: impl std::fmt::Display) -> anyhow::Result<()> {
    writeln!(out, "{name}: {value}")?;
    Ok(())
}

fn kv_est(out: &mut impl Write, name: &str, e: &Estimate) -> anyhow::Result<()> {
    match (e.value(), e.half_width_95()) {
        (Some(v), Some(h)) => writeln!(
            out,
            "{name}: {v:.6} ±{h:.6} ({}/{} trials)",
            e.successes, e.trials
        )?,
        _ => writeln!(out, "{name}: n/a (0 trials)")?,
    }
    Ok(())
}

fn cmd_analytic(a: AnalyticArgs) -> anyhow::Result<()> {
    let mut cfg = load_or_default(a.config.as_ref())?;
    a.overrides.apply(&mut cfg);
    let p = cfg.traffic_params();
    let sol = solve_fixed_point(&p, 1e-9, 1000)?;
    let ft = forced_termination(&sol, &p);

    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    kv(&mut out, "n", p.n)?;
    kv(&mut out, "lambda_f_o", p.lambda_f_o)?;
    kv(&mut out, "lambda_m_o", p.lambda_m_o)?;
    kv(&mut out, "alpha", p.alpha)?;
    kv(&mut out, "n_channels", p.n_channels)?;
    kv(&mut out, "s_channels", p.s_channels)?;
    kv(&mut out, "k_femto", p.k_femto)?;
    for (name, v) in solution_fields(&sol) {
        kv(&mut out, name, v)?;
    }
    kv(&mut out, "iterations", sol.iterations)?;
    kv(&mut out, "converged", sol.converged)?;
    kv(&mut out, "ft_macro_start", ft.starting_on_macro)?;
    kv(&mut out, "ft_femto_start", ft.starting_on_femto)?;
    kv(&mut out, "ft_overall", ft.overall)?;
    Ok(())
}

/// Scalar solution columns in stable order.
const SOLUTION_COLUMNS: [&str; 16] = [
    "lambda_h_mm",
    "lambda_h_mf",
    "lambda_h_ff",
    "lambda_h_fm",
    "lambda_t_f",
    "lambda_h_m",
    "p_b_f",
    "p_d_f",
    "p_b_m",
    "p_d_m",
    "p_h_mm",
    "p_h_mf",
    "p_h_ff",
    "p_h_fm",
    "mu_m",
    "mu_f",
];

fn solution_values(s: &TrafficSolution) -> [f64; 16] {
    [
        s.lambda_h_mm,
        s.lambda_h_mf,
        s.lambda_h_ff,
        s.lambda_h_fm,
        s.lambda_t_f,
        s.lambda_h_m,
        s.p_b_f,
        s.p_d_f,
        s.p_b_m,
        s.p_d_m,
        s.p_h_mm,
        s.p_h_mf,
        s.p_h_ff,
        s.p_h_fm,
        s.mu_m,
        s.mu_f,
    ]
}

fn solution_fields(s: &TrafficSolution) -> Vec<(&'static str, f64)> {
    SOLUTION_COLUMNS
        .into_iter()
        .zip(solution_values(s))
        .collect()
}

fn cmd_simulate(a: SimulateArgs) -> anyhow::Result<()> {
    let mut cfg = load_or_default(a.config.as_ref())?;
    a.overrides.apply(&mut cfg);
    if let Some(h) = a.horizon {
        cfg.sim.horizon_s = h;
    }
    if let Some(w) = a.warmup {
        cfg.sim.warmup_s = Some(w);
    }
    let r = sim::run(&cfg, a.seed)?;

    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    kv(&mut out, "seed", r.seed)?;
    kv(&mut out, "horizon_s", r.horizon_s)?;
    kv(&mut out, "warmup_s", r.warmup_s)?;
    kv(&mut out, "arrivals", r.totals.arrivals)?;
    kv(&mut out, "blocked", r.totals.blocked)?;
    kv(&mut out, "ended", r.totals.ended)?;
    kv(&mut out, "dropped", r.totals.dropped)?;
    kv(&mut out, "active_at_end", r.totals.active_at_end)?;
    kv_est(&mut out, "p_b_m", &r.p_b_m)?;
    kv_est(&mut out, "p_d_m", &r.p_d_m)?;
    kv_est(&mut out, "p_b_f", &r.p_b_f)?;
    kv_est(&mut out, "p_d_f", &r.p_d_f)?;
    kv_est(&mut out, "forced_termination", &r.forced_termination)?;
    kv_est(&mut out, "measured_alpha", &r.measured_alpha)?;
    kv_est(&mut out, "missing_target_rate", &r.missing_target_rate)?;
    kv(&mut out, "handover_f2m", r.dwell_outcomes.f2m)?;
    kv(&mut out, "handover_f2f", r.dwell_outcomes.f2f)?;
    kv(&mut out, "handover_m2f", r.dwell_outcomes.m2f)?;
    kv(&mut out, "handover_m2m", r.dwell_outcomes.m2m)?;
    kv(&mut out, "reentries", r.dwell_outcomes.reenter)?;
    kv(&mut out, "m2m_wrap_attempts", r.m2m.attempts)?;
    kv(&mut out, "m2m_wrap_drops", r.m2m.drops)?;
    for (name, f) in [
        ("f2m", &r.flows.f2m),
        ("m2f", &r.flows.m2f),
        ("f2f", &r.flows.f2f),
    ] {
        kv(&mut out, &format!("signaling_{name}_completed"), f.completed)?;
        kv(&mut out, &format!("signaling_{name}_aborted"), f.aborted)?;
        match f.mean_messages() {
            Some(m) => kv(
                &mut out,
                &format!("signaling_{name}_mean_messages"),
                format!("{m:.3}"),
            )?,
            None => kv(&mut out, &format!("signaling_{name}_mean_messages"), "n/a")?,
        }
    }
    match r.macro_release_rate_per_s {
        Some(v) => kv(&mut out, "macro_channel_release_rate_per_s", format!("{v:.6}"))?,
        None => kv(&mut out, "macro_channel_release_rate_per_s", "n/a")?,
    }
    match r.neighbor_list_size.mean() {
        Some(m) => kv(
            &mut out,
            "neighbor_list_size",
            format!(
                "mean {m:.3} min {} max {} ({} lists)",
                r.neighbor_list_size.min, r.neighbor_list_size.max, r.neighbor_list_size.count
            ),
        )?,
        None => kv(&mut out, "neighbor_list_size", "n/a (0 lists)")?,
    }
    Ok(())
}

struct PooledSim {
    p_b_m: Estimate,
    p_d_m: Estimate,
    p_b_f: Estimate,
    p_d_f: Estimate,
    ft: Estimate,
}

fn pool_sim(cfg: &ScenarioConfig, seeds: u64) -> anyhow::Result<PooledSim> {
    let reports: Vec<_> = (0..seeds)
        .into_par_iter()
        .map(|s| sim::run(cfg, s))
        .collect::<Result<_, _>>()?;
    let zero = Estimate {
        successes: 0,
        trials: 0,
    };
    let mut out = PooledSim {
        p_b_m: zero,
        p_d_m: zero,
        p_b_f: zero,
        p_d_f: zero,
        ft: zero,
    };
    for r in &reports {
        for (acc, part) in [
            (&mut out.p_b_m, &r.p_b_m),
            (&mut out.p_d_m, &r.p_d_m),
            (&mut out.p_b_f, &r.p_b_f),
            (&mut out.p_d_f, &r.p_d_f),
            (&mut out.ft, &r.forced_termination),
        ] {
            acc.successes += part.successes;
            acc.trials += part.trials;
        }
    }
    Ok(out)
}

fn est_cell(e: &Estimate) -> String {
    match e.value() {
        Some(v) => format!("{v}"),
        None => String::new(),
    }
}

fn cmd_sweep(a: SweepArgs) -> anyhow::Result<()> {
    let mut base = load_or_default(a.config.as_ref())?;
    a.overrides.apply(&mut base);

    let values: Vec<f64> = (0..a.points)
        .map(|i| {
            let f = if a.points == 1 {
                0.0
            } else {
                i as f64 / (a.points - 1) as f64
            };
            a.param.quantize(a.from + (a.to - a.from) * f)
        })
        .collect();

    let run_point = |&v: &f64| -> anyhow::Result<(f64, TrafficSolution, ForcedTermination, Option<PooledSim>)> {
        let mut cfg = base.clone();
        a.param.apply(&mut cfg, v);
        let p = cfg.traffic_params();
        let sol = solve_fixed_point(&p, 1e-9, 1000)
            .with_context(|| format!("{}={v}", a.param.name()))?;
        let ft = forced_termination(&sol, &p);
        let sim = if a.seeds > 0 {
            Some(pool_sim(&cfg, a.seeds)?)
        } else {
            None
        };
        Ok((v, sol, ft, sim))
    };

    let rows: Vec<_> = match a.jobs {
        Some(j) => rayon::ThreadPoolBuilder::new()
            .num_threads(j as usize)
            .build()?
            .install(|| values.par_iter().map(run_point).collect::<Result<_, _>>())?,
        None => values
            .par_iter()
            .map(run_point)
            .collect::<Result<_, _>>()?,
    };

    let stdout = std::io::stdout();
    let mut w = csv::Writer::from_writer(stdout.lock());
    let mut header = vec!["param".to_string(), "value".to_string()];
    header.extend(SOLUTION_COLUMNS.iter().map(|s| s.to_string()));
    header.extend(["iterations", "converged", "ft_macro_start", "ft_femto_start", "ft_overall"]
        .iter()
        .map(|s| s.to_string()));
    if a.seeds > 0 {
        header.extend(
            ["sim_seeds", "sim_p_b_m", "sim_p_d_m", "sim_p_b_f", "sim_p_d_f", "sim_ft_overall"]
                .iter()
                .map(|s| s.to_string()),
        );
    }
    w.write_record(&header)?;

    for (v, sol, ft, sim) in &rows {
        let mut rec = vec![a.param.name().to_string(), format!("{v}")];
        rec.extend(solution_values(sol).iter().map(|x| format!("{x}")));
        rec.push(format!("{}", sol.iterations));
        rec.push(format!("{}", sol.converged));
        rec.push(format!("{}", ft.starting_on_macro));
        rec.push(format!("{}", ft.starting_on_femto));
        rec.push(format!("{}", ft.overall));
        if let Some(s) = sim {
            rec.push(format!("{}", a.seeds));
            rec.push(est_cell(&s.p_b_m));
            rec.push(est_cell(&s.p_d_m));
            rec.push(est_cell(&s.p_b_f));
            rec.push(est_cell(&s.p_d_f));
            rec.push(est_cell(&s.ft));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_ncl_bench(a: NclBenchArgs) -> anyhow::Result<()> {
    let cfg = match a.config.as_ref() {
        Some(p) => Some(load_config(p)?),
        None => None,
    };
    let params_for = |n: u32| {
        let mut p = BenchParams::for_density(n);
        p.trials_per_seed = a.trials;
        if let Some(c) = &cfg {
            p.radio = c.radio_params();
            p.thresholds = c.ncl_thresholds();
        }
        p
    };

    let pairs: Vec<(u32, u64)> = a
        .densities
        .iter()
        .flat_map(|&n| (0..a.seeds).map(move |s| (n, s)))
        .collect();
    let run_all = || -> Vec<Vec<TrialRow>> {
        pairs
            .par_iter()
            .map(|&(n, s)| run_trials(&params_for(n), s))
            .collect()
    };
    let per_pair: Vec<Vec<TrialRow>> = match a.jobs {
        Some(j) => rayon::ThreadPoolBuilder::new()
            .num_threads(j as usize)
            .build()?
            .install(run_all),
        None => run_all(),
    };

    let stdout = std::io::stdout();
    let mut w = csv::Writer::from_writer(stdout.lock());
    if a.summary {
        w.write_record([
            "n",
            "trials",
            "missing_proposed",
            "missing_traditional",
            "mean_proposed_size",
            "mean_traditional_size",
            "hidden_complete",
            "dominance_violations",
        ])?;
        for &n in &a.densities {
            let rows: Vec<TrialRow> = pairs
                .iter()
                .zip(&per_pair)
                .filter(|((pn, _), _)| *pn == n)
                .flat_map(|(_, rows)| rows.iter().copied())
                .collect();
            let s = summarize(n, &rows);
            w.write_record([
                format!("{}", s.n),
                format!("{}", s.trials),
                format!("{}", s.missing_proposed),
                format!("{}", s.missing_traditional),
                format!("{}", s.mean_proposed_size),
                format!("{}", s.mean_traditional_size),
                format!("{}", s.hidden_complete),
                format!("{}", s.dominance_violations),
            ])?;
        }
    } else {
        w.write_record([
            "seed",
            "n",
            "traditional_size",
            "proposed_size",
            "target_in_proposed",
            "target_in_traditional",
            "hidden_eligible",
            "hidden_listed",
        ])?;
        for rows in &per_pair {
            for r in rows {
                w.write_record([
                    format!("{}", r.seed),
                    format!("{}", r.n),
                    format!("{}", r.traditional_size),
                    format!("{}", r.proposed_size),
                    format!("{}", r.target_in_proposed),
                    format!("{}", r.target_in_traditional),
                    format!("{}", r.hidden_eligible),
                    format!("{}", r.hidden_listed),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn usage_error(msg: String) -> ! {
    let mut cmd = Cli::command();
    cmd.error(clap::error::ErrorKind::InvalidValue, msg).exit()
}

fn cmd_trace(a: TraceArgs) -> anyhow::Result<()> {
    let fail = a.fail;
    let gate_off = |g: GateArg| fail != Some(g);
    let trace: SignalingTrace = match a.flow {
        FlowArg::F2m => {
            if matches!(fail, Some(GateArg::Auth) | Some(GateArg::Interference)) {
                usage_error("flow f2m gates are `preauth` and `cac`".into());
            }
            run_f2m(
                1,
                femtosim::topology::FapId(0),
                &F2mContext {
                    preauth_ok: gate_off(GateArg::Preauth),
                    cac_ok: gate_off(GateArg::Cac),
                    signal_report: SignalReport {
                        serving_rssi_dbm: -78.0,
                        target_rssi_dbm: -62.0,
                    },
                },
            )
        }
        FlowArg::M2f => {
            if matches!(fail, Some(GateArg::Preauth)) {
                usage_error("flow m2f gates are `auth`, `cac` and `interference`".into());
            }
            run_m2f(
                1,
                femtosim::topology::FapId(0),
                &M2fContext {
                    authorization_ok: gate_off(GateArg::Auth),
                    cac_ok: gate_off(GateArg::Cac),
                    interference_ok: gate_off(GateArg::Interference),
                },
            )
        }
        FlowArg::F2f => {
            if matches!(fail, Some(GateArg::Preauth) | Some(GateArg::Interference)) {
                usage_error("flow f2f gates are `auth` and `cac`".into());
            }
            run_f2f(
                1,
                femtosim::topology::FapId(0),
                femtosim::topology::FapId(1),
                &F2fContext {
                    authorization_ok: gate_off(GateArg::Auth),
                    cac_ok: gate_off(GateArg::Cac),
                },
            )
        }
    };
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    out.write_all(trace.render_csv().as_bytes())?;
    Ok(())
}

fn cmd_validate(a: ValidateArgs) -> anyhow::Result<()> {
    let cfg = load_config(&a.config)?;
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    writeln!(
        out,
        "ok: {} (schema_version {}, {} FAPs, {} macro channels)",
        a.config.display(),
        cfg.schema_version,
        cfg.topology.n_faps,
        cfg.traffic.n_channels
    )?;
    Ok(())
}
