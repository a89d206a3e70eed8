use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use etmreg::accounting::MemOp;
use etmreg::fabric::{validate_config, EtmConfig};
use etmreg::harness::{
    build_point, calibrate_safe_floor, emit_outputs, parse_regulator, row_from_trace, run_sweep, BoardPreset,
    CalibrateOptions, ExperimentConfig, Point, RegulatorFile,
};
use etmreg::machine::{run_system, RegulatorAttachment, SystemConfig, SystemTrace};
use etmreg::regprog::{compile, to_json, to_text};
use etmreg::regulators::{build_config, Design};
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "etmreg", version, about = "ETM-based memory bandwidth regulation simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one simulation and print a summary
    Simulate(SimulateArgs),
    /// Run an experiment file and write CSV/SVG
    Sweep {
        config: PathBuf,
        /// Overrides `output.csv`; `-` prints to stdout
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Overrides `output.svg`
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// Compile a regulator file into a register program
    Compile {
        spec: PathBuf,
        #[arg(long)]
        json: bool,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Check a config file and report the resources it uses
    Validate { config: PathBuf },
    /// Search the smallest target a design holds within tolerance
    Calibrate {
        #[arg(long, default_value = "zcu102")]
        board: BoardPreset,
        #[arg(long, default_value = "pr")]
        design: Design,
        #[arg(long, default_value_t = 5.0)]
        period_us: f64,
        #[arg(long, default_value_t = 1000.0)]
        duration_us: f64,
        #[arg(long, default_value_t = 0.05)]
        tolerance: f64,
        /// Workloads the target must hold for, comma separated
        #[arg(long, value_delimiter = ',', default_value = "read,write")]
        ops: Vec<MemOp>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct SimulateArgs {
    /// Full system description (TOML); the flags below are ignored when given
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "zcu102")]
    board: BoardPreset,
    /// Design name or `none`
    #[arg(long, default_value = "pr")]
    regulator: String,
    #[arg(long, default_value = "read")]
    op: MemOp,
    #[arg(long, default_value_t = 500.0)]
    target_mbps: f64,
    #[arg(long, default_value_t = 5.0)]
    period_us: f64,
    #[arg(long, default_value_t = 1000.0)]
    duration_us: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the full trace as JSON
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Record the fabric state of every cycle into the trace
    #[arg(long)]
    record_fabric: bool,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn print_trace(sys: &SystemConfig, trace: &SystemTrace) {
    println!("cycles {}", trace.cycles);
    for (i, (setup, core)) in sys.cores.iter().zip(&trace.cores).enumerate() {
        let s = &core.stats;
        println!(
            "core {i}: {:.1} MB/s, {} lines, {} user events, {} irqs, throttled {} cycles, halted {} cycles",
            core.achieved_mbps(trace.cycles, &setup.model),
            s.lines,
            s.user_events,
            s.irq_count,
            s.cycles_throttled,
            s.cycles_halted
        );
    }
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let (mut sys, row_point) = match &a.config {
        Some(p) => (toml::from_str::<SystemConfig>(&read(p)?)?, None),
        None => {
            let regulator = parse_regulator(&a.regulator).map_err(anyhow::Error::msg)?;
            let mut cfg = ExperimentConfig::new(a.board, &[&a.regulator], &[a.op], &[a.target_mbps]);
            cfg.period_us = a.period_us;
            cfg.duration_us = a.duration_us;
            cfg.seed = a.seed;
            cfg.validate()?;
            let point = Point { regulator, op: a.op, target_mbps: a.target_mbps };
            let ps = build_point(&cfg, &point)?;
            (ps.system.clone(), Some((point, ps)))
        }
    };
    sys.record_fabric |= a.record_fabric;
    let trace = run_system(&sys)?;
    print_trace(&sys, &trace);
    if let Some((point, ps)) = row_point {
        let row = row_from_trace(&point, a.period_us, &ps, &trace);
        println!(
            "throttle fraction {:.4}, {:.1} irqs/ms, max overshoot {} events, accounted/actual {:.3}",
            row.throttle_fraction, row.irqs_per_ms, row.max_window_overshoot_events, row.accounted_vs_actual_ratio
        );
    }
    if let Some(p) = a.trace {
        fs::write(&p, serde_json::to_string(&trace)?).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn sweep(config: &Path, csv: Option<PathBuf>, svg: Option<PathBuf>) -> Result<()> {
    let mut cfg = ExperimentConfig::from_toml(&read(config)?)?;
    if csv.is_some() {
        cfg.output.csv = csv;
    }
    if svg.is_some() {
        cfg.output.svg = svg;
    }
    let result = run_sweep(&cfg)?;
    for f in &result.failures {
        eprintln!("failed: {} {} {} MB/s: {}", f.regulator, f.op_type, f.target_mbps, f.error);
    }
    if result.rows.is_empty() {
        bail!("every point failed");
    }
    let to_stdout = cfg.output.csv.as_deref().is_none_or(|p| p == Path::new("-"));
    if to_stdout {
        cfg.output.csv = None;
    }
    emit_outputs(&result.rows, &cfg.output)?;
    if to_stdout {
        let mut w = csv::Writer::from_writer(std::io::stdout());
        for r in &result.rows {
            w.serialize(r)?;
        }
        w.flush()?;
    } else if let Some(p) = &cfg.output.csv {
        eprintln!("{} rows written to {}", result.rows.len(), p.display());
    }
    Ok(())
}

fn validate(path: &Path) -> Result<()> {
    let text = read(path)?;
    let table: toml::Table = toml::from_str(&text)?;
    let report = |c: &EtmConfig| -> Result<()> {
        let r = validate_config(c)?;
        println!("{r}");
        Ok(())
    };
    if table.contains_key("targets_mbps") {
        let cfg = ExperimentConfig::from_toml(&text)?;
        cfg.validate()?;
        let points = cfg.points()?;
        println!("experiment: {} points on {}", points.len(), cfg.board);
        // one resource report per design, the budgets listed after it
        let mut seen: Vec<Design> = Vec::new();
        for p in points.iter().filter(|p| p.regulator.is_some_and(Design::is_etm)) {
            let ps = build_point(&cfg, p)?;
            let RegulatorAttachment::Etm(spec) = &ps.system.cores[0].regulator else { continue };
            let config = build_config(spec)?;
            if !seen.contains(&spec.design) {
                seen.push(spec.design);
                println!("{}:", spec.design);
                report(&config)?;
                print!("  budgets:");
            }
            print!(" {}", spec.budget_events);
            if points.iter().rev().find(|q| q.regulator == p.regulator) == Some(p) {
                println!();
            }
        }
    } else if table.contains_key("regulator") {
        let f = RegulatorFile::from_toml(&text)?;
        let model = f.core_model();
        if !f.regulator.design.is_etm() {
            bail!("{} is a software regulator, nothing to program", f.regulator.design);
        }
        let program = compile(&f.regulator, &model)?;
        report(&build_config(&f.regulator)?)?;
        println!("{} register writes", program.writes.len());
        for w in &program.warnings {
            println!("warning: {w}");
        }
    } else if table.contains_key("cores") {
        let sys: SystemConfig = toml::from_str(&text)?;
        println!("system: {} cores, {} cycles", sys.cores.len(), sys.duration_cycles);
        for (i, c) in sys.cores.iter().enumerate() {
            c.model.validate().map_err(anyhow::Error::msg).with_context(|| format!("core {i}"))?;
            c.workload
                .validate(c.model.cacheline_bytes)
                .map_err(anyhow::Error::msg)
                .with_context(|| format!("core {i}"))?;
            match &c.regulator {
                RegulatorAttachment::Etm(spec) => {
                    print!("core {i} {}: ", spec.design);
                    report(&build_config(spec)?)?;
                }
                RegulatorAttachment::EtmRaw { config, .. } => {
                    print!("core {i} raw fabric: ");
                    report(config)?;
                }
                other => println!("core {i}: {}", serde_json::to_string(other)?),
            }
        }
    } else {
        let c: EtmConfig = toml::from_str(&text).context("not an experiment, regulator, system or fabric file")?;
        report(&c)?;
    }
    println!("ok");
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::Simulate(a) => simulate(a),
        Cmd::Sweep { config, csv, svg } => sweep(&config, csv, svg),
        Cmd::Compile { spec, json, output } => {
            let f = RegulatorFile::from_toml(&read(&spec)?)?;
            let program = compile(&f.regulator, &f.core_model())?;
            let text = if json { to_json(&program) + "\n" } else { to_text(&program) };
            match output {
                Some(p) => fs::write(&p, text).with_context(|| format!("writing {}", p.display()))?,
                None => print!("{text}"),
            }
            for w in &program.warnings {
                eprintln!("warning: {w}");
            }
            Ok(())
        }
        Cmd::Validate { config } => validate(&config),
        Cmd::Calibrate { board, design, period_us, duration_us, tolerance, ops, seed } => {
            let opts = CalibrateOptions { ops, tolerance, duration_us, seed, ..Default::default() };
            let floor = calibrate_safe_floor(board, design, period_us, &opts)?;
            println!("{board} {design} {period_us} µs: safe floor {floor:.1} MB/s");
            Ok(())
        }
    }
}
