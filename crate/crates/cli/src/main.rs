use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use priofd::calibration::{self, CalibrationConfig};
use priofd::config::{cartpole_system, SyncLqrWeights, System};
use priofd::dynamics::{AgentId, CartPoleParams};
use priofd::fd_dynamic::ThresholdTable;
use priofd::harness::{self, BatchConfig, CsvMeta, Detector, DetectorSet, RecordPolicy};
use priofd::scenarios::Scenario;

const SYSTEM_FILE: &str = "system.toml";

#[derive(Parser)]
#[command(name = "priofd", version, about = "Remote fault detection under priority-based event-triggered scheduling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a cart-pole system file with LQR synchronization gains.
    BuildConfig(BuildConfigArgs),
    /// Calibrate the quantization scale and both detectors' thresholds.
    Calibrate(CalibrateArgs),
    /// Run a Monte Carlo batch and write alarm statistics as CSV.
    Run(RunArgs),
    /// Time detector updates on a recorded trace.
    Bench(BenchArgs),
    /// Print a threshold table's header and coverage.
    InspectTable(InspectArgs),
}

#[derive(Args)]
struct BuildConfigArgs {
    #[arg(long, default_value_t = 6)]
    agents: usize,
    #[arg(long, default_value_t = 2)]
    bandwidth: usize,
    #[arg(long, default_value_t = 3e-4)]
    noise_variance: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CalibrateArgs {
    /// System file; defaults to the six-agent cart-pole system.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 0.01)]
    eta: f64,
    #[arg(long, default_value_t = 10)]
    d: usize,
    #[arg(long, default_value_t = 40)]
    b: usize,
    #[arg(long, default_value_t = 2000)]
    runs: usize,
    #[arg(long, default_value_t = 300)]
    run_length: usize,
    #[arg(long, default_value_t = 50)]
    warmup: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct RunArgs {
    /// Directory written by `calibrate`.
    #[arg(long)]
    calibration: PathBuf,
    /// System file overriding the calibrated one.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Preset name (fault-free, actuator-failure, bandwidth-loss,
    /// shaken-pendulum) or scenario file.
    #[arg(long, default_value = "fault-free")]
    scenario: String,
    #[arg(long, default_value_t = 10_000)]
    runs: usize,
    #[arg(long, default_value_t = 300)]
    run_length: usize,
    #[arg(long, default_value_t = 2)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
    /// Keep full per-round records of the first N runs.
    #[arg(long, default_value_t = 0)]
    record: usize,
    /// Agent whose state band is reported; defaults to the first faulty
    /// agent, else agent 1.
    #[arg(long)]
    band_agent: Option<u32>,
    /// Zero-based state component of the band.
    #[arg(long, default_value_t = 2)]
    band_component: usize,
}

#[derive(Args)]
struct BenchArgs {
    /// System file; defaults to the six-agent cart-pole system.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "5,10,20,40")]
    horizons: Vec<usize>,
    #[arg(long, default_value_t = 40)]
    b: usize,
    #[arg(long, default_value_t = 20_000)]
    rounds: usize,
    #[arg(long, default_value_t = 20)]
    repeats: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

#[derive(Args)]
struct InspectArgs {
    table: PathBuf,
    /// Also print every finite cell.
    #[arg(long)]
    cells: bool,
}

fn load_system(path: Option<&Path>) -> Result<System> {
    match path {
        Some(p) => System::load(p).with_context(|| format!("loading system file {}", p.display())),
        None => Ok(priofd::config::desk_system()?),
    }
}

fn build_config(args: BuildConfigArgs) -> Result<()> {
    let sys = cartpole_system(
        args.agents,
        args.bandwidth,
        CartPoleParams::default(),
        SyncLqrWeights::default(),
        args.noise_variance,
    )?;
    let rho = sys.check_stability(true)?;
    sys.save(&args.out)?;
    println!("wrote {} (closed-loop spectral radius {rho:.6})", args.out.display());
    Ok(())
}

fn calibrate(args: CalibrateArgs) -> Result<()> {
    let mut sys = load_system(args.config.as_deref())?;
    let cfg = CalibrationConfig {
        eta: args.eta,
        d: args.d,
        b: args.b,
        runs: args.runs,
        run_length: args.run_length,
        seed: args.seed,
        warmup_discard: args.warmup,
    };
    cfg.validate()?;
    if sys.quantization_scale.is_none() {
        let scale = calibration::calibrate_scale(&sys, &cfg)?;
        info!("quantization scale {scale}");
        sys.quantization_scale = Some(scale);
    }
    let cal = calibration::calibrate_with(&sys, &cfg, sys.quantizer()?)?;
    std::fs::create_dir_all(&args.out_dir).with_context(|| format!("creating {}", args.out_dir.display()))?;
    sys.save(&args.out_dir.join(SYSTEM_FILE))?;
    for g in &cal.groups {
        let tag = &hex::encode(g.signature)[..8];
        let table_path = args.out_dir.join(format!("thresholds-{tag}.pfdt"));
        g.table.save(&table_path)?;
        let report_path = args.out_dir.join(format!("coverage-{tag}.csv"));
        let mut f = std::io::BufWriter::new(
            std::fs::File::create(&report_path).with_context(|| format!("creating {}", report_path.display()))?,
        );
        calibration::write_coverage_report(g, &mut f)?;
        println!(
            "agents {:?}: sFD kappa {}, {} window samples -> {}",
            g.agents.iter().map(|a| a.0).collect::<Vec<_>>(),
            g.sfd_kappa(),
            g.bank.window.total(),
            table_path.display()
        );
    }
    println!("quantization scale {}", cal.scale);
    Ok(())
}

fn load_tables(dir: &Path) -> Result<Vec<ThresholdTable>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "pfdt"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        bail!("no threshold tables (*.pfdt) in {}", dir.display());
    }
    paths
        .iter()
        .map(|p| ThresholdTable::load(p).with_context(|| format!("loading {}", p.display())))
        .collect()
}

fn run(args: RunArgs) -> Result<()> {
    let config_path = args.config.unwrap_or_else(|| args.calibration.join(SYSTEM_FILE));
    let sys = load_system(Some(&config_path))?;
    let tables = load_tables(&args.calibration)?;
    let detectors = DetectorSet::new(&sys, tables)?;
    let scenario = Scenario::resolve(&args.scenario, &sys)?;
    let band_agent = match args.band_agent {
        Some(a) => AgentId(a),
        None => scenario.faulty.first().copied().unwrap_or(AgentId(1)),
    };
    let cfg = BatchConfig {
        runs: args.runs,
        run_length: args.run_length,
        seed: args.seed,
        record: if args.record > 0 { RecordPolicy::First(args.record) } else { RecordPolicy::None },
        band_agent,
        band_component: args.band_component,
        ..Default::default()
    };
    let out = harness::run_batch(&sys, &scenario, &detectors, &cfg)?;
    let meta = CsvMeta {
        config_hash: sys.config_hash(),
        seed: args.seed,
        runs: args.runs as u64,
        scenario: scenario.name.clone(),
    };
    let files = harness::write_outputs(&args.out_dir, &out.report, &out.records, &meta)?;
    let rep = &out.report;
    let all: Vec<AgentId> = (0..sys.n_agents()).map(AgentId::from_index).collect();
    let last = args.run_length.saturating_sub(1);
    for det in Detector::ALL {
        match rep.event_round {
            Some(e) if e > 50 && (e as usize) <= last => println!(
                "{}: alarm rate {:.5} before k={e}, {:.5} after",
                det.name(),
                rep.interval_rate(det, &all, 50..=e as usize - 1),
                rep.interval_rate(det, &all, e as usize..=last),
            ),
            _ => println!("{}: alarm rate {:.5} over k in [50, {last}]", det.name(), rep.interval_rate(det, &all, 50..=last)),
        }
    }
    for f in files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

fn bench(args: BenchArgs) -> Result<()> {
    let mut sys = load_system(args.config.as_deref())?;
    if sys.quantization_scale.is_none() {
        let cfg = CalibrationConfig {
            runs: 200,
            ..Default::default()
        };
        sys.quantization_scale = Some(calibration::calibrate_scale(&sys, &cfg)?);
    }
    let trace = harness::record_trace(&sys, AgentId(1), args.rounds, args.seed)?;
    println!("d;sfd_mean_ns;sfd_p99_ns;dfd_mean_ns;dfd_p99_ns");
    for &d in &args.horizons {
        let table = harness::synthetic_table(d, args.b, 1e9);
        let r = harness::bench_detectors(&table, &trace, args.repeats)?;
        println!(
            "{d};{:.1};{:.1};{:.1};{:.1}",
            r.sfd.mean_ns, r.sfd.p99_ns, r.dfd.mean_ns, r.dfd.p99_ns
        );
    }
    Ok(())
}

fn inspect(args: InspectArgs) -> Result<()> {
    let t = ThresholdTable::load(&args.table)?;
    let h = &t.header;
    println!("eta          {}", h.eta);
    println!("d, b         {}, {}", h.d, h.b);
    println!("N, M         {}, {}", h.n_agents, h.bandwidth);
    println!("scale        {}", h.scale);
    println!("seed         {}", h.seed);
    println!("samples      {}", h.sample_count);
    println!("sFD kappa    {}", h.sfd_kappa);
    println!("signature    {}", hex::encode(h.signature));
    println!("H;a;finite_cells");
    for hh in 1..=h.d as usize {
        for a in 0..2 {
            let finite = (1..=h.b)
                .flat_map(|t1| (t1..=h.b).map(move |t2| (t1, t2)))
                .filter(|&(t1, t2)| t.lookup(t1, t2, hh, a).is_ok_and(f64::is_finite))
                .count();
            println!("{hh};{a};{finite}");
        }
    }
    if args.cells {
        println!("t1;t2;h;a;kappa");
        for t1 in 1..=h.b {
            for t2 in t1..=h.b {
                for hh in 1..=h.d as usize {
                    for a in 0..2 {
                        let k = t.lookup(t1, t2, hh, a)?;
                        if k.is_finite() {
                            println!("{t1};{t2};{hh};{a};{k}");
                        }
                    }
                }
            }
        }
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::BuildConfig(a) => build_config(a),
        Command::Calibrate(a) => calibrate(a),
        Command::Run(a) => run(a),
        Command::Bench(a) => bench(a),
        Command::InspectTable(a) => inspect(a),
    }
}
