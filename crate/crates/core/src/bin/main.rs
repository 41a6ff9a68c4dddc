use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use intermit_sim::config::{
    CompareEnvelope, ConfigError, ExperimentConfig, ProfileEnvelope, SimulateReport, CONFIG_ENV,
};
use intermit_sim::engine::{self, SimError};
use intermit_sim::experiments::{self, Placement};
use intermit_sim::power::CapacitanceConfig;
use intermit_sim::strategies::StrategyKind;
use intermit_sim::vtt::VttMode;
use intermit_sim::workloads::{self, WorkloadKind, WorkloadSpec};

#[derive(Parser)]
#[command(
    name = "intermit-sim",
    version,
    about = "Intermittent-power MCU simulator with differential checkpointing"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one workload under one strategy and print a JSON report.
    Simulate(SimulateArgs),
    /// Checkpoint copy cost against block size.
    ProfileBlocks(ProfileArgs),
    /// Sweep capacitances x strategies x workloads.
    Compare(CompareArgs),
}

#[derive(Parser)]
struct SimulateArgs {
    #[arg(long)]
    workload: Option<WorkloadKind>,
    #[arg(long)]
    strategy: Option<StrategyKind>,
    /// C1..C4, a cycle budget, or NAME=BUDGET.
    #[arg(long, value_parser = parse_cap)]
    cap: Option<CapacitanceConfig>,
    #[arg(long)]
    block_size: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Workload size parameter.
    #[arg(long)]
    size: Option<u32>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Write a CSV trace of supply voltage, threshold and dirty count.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Parser)]
struct ProfileArgs {
    #[arg(long, value_delimiter = ',')]
    sizes: Option<Vec<u32>>,
    #[arg(long, value_delimiter = ',')]
    dirty_bytes: Option<Vec<u32>>,
    #[arg(long)]
    placement: Option<Placement>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Parser)]
struct CompareArgs {
    #[arg(long, value_delimiter = ',', value_parser = parse_cap)]
    caps: Option<Vec<CapacitanceConfig>>,
    #[arg(long, value_delimiter = ',')]
    strategies: Option<Vec<StrategyKind>>,
    #[arg(long, value_delimiter = ',')]
    workloads: Option<Vec<WorkloadKind>>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Faithful,
    Exact,
}

impl From<ModeArg> for VttMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Faithful => VttMode::Faithful,
            ModeArg::Exact => VttMode::Exact,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
    Jsonl,
}

fn parse_cap(s: &str) -> Result<CapacitanceConfig, String> {
    if let Some(c) = CapacitanceConfig::defaults()
        .into_iter()
        .find(|c| c.name.eq_ignore_ascii_case(s))
    {
        return Ok(c);
    }
    let (name, budget) = match s.split_once('=') {
        Some((n, b)) => (n.to_string(), b),
        None => (s.to_string(), s),
    };
    let budget: u64 = budget
        .parse()
        .map_err(|_| format!("`{s}` is not C1..C4, a cycle budget or NAME=BUDGET"))?;
    CapacitanceConfig::new(name, budget).map_err(|e| e.to_string())
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig, ConfigError> {
    match path {
        Some(p) => ExperimentConfig::load(p),
        None => match std::env::var_os(CONFIG_ENV) {
            Some(p) if !p.is_empty() => ExperimentConfig::load(Path::new(&p)),
            _ => Ok(ExperimentConfig::default()),
        },
    }
}

fn emit(out: Option<&Path>, text: &str) -> io::Result<()> {
    match out {
        Some(p) => fs::write(p, text),
        None => io::stdout().lock().write_all(text.as_bytes()),
    }
}

fn fail(msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(1)
}

fn simulate(args: SimulateArgs) -> ExitCode {
    let mut config = match load_config(args.config.as_deref()) {
        Ok(c) => c,
        Err(e) => return fail(e),
    };
    let sim = &mut config.sim;
    if let Some(w) = args.workload {
        sim.workload = WorkloadSpec {
            kind: w,
            size: None,
        };
    }
    if let Some(n) = args.size {
        sim.workload.size = Some(n);
    }
    if let Some(s) = args.strategy {
        sim.strategy = s;
    }
    if let Some(c) = args.cap {
        sim.cap = c;
    }
    if let Some(b) = args.block_size {
        match sim.layout.with_block_size(b) {
            Ok(l) => sim.layout = l,
            Err(e) => return fail(e),
        }
    }
    if let Some(s) = args.seed {
        sim.seed = s;
    }
    if let Some(m) = args.mode {
        sim.vtt_mode = m.into();
    }
    if let Err(e) = config.validate() {
        return fail(e);
    }

    let sim = &config.sim;
    let workload = match workloads::build(&sim.workload, sim.seed, &sim.layout) {
        Ok(w) => w,
        Err(e) => return fail(e),
    };
    let (outcome, rows) = match &args.trace {
        Some(_) => match engine::run_with_trace(sim, &workload) {
            Ok((r, rows)) => (Ok(r), Some(rows)),
            Err(e) => (Err(e), None),
        },
        None => (engine::run(sim, &workload), None),
    };
    if let (Some(path), Some(rows)) = (&args.trace, rows) {
        let written = fs::File::create(path)
            .and_then(|f| engine::write_trace_csv(&rows, io::BufWriter::new(f)));
        if let Err(e) = written {
            return fail(format!("cannot write trace {}: {e}", path.display()));
        }
    }
    let code = match &outcome {
        Ok(r) if r.completed && r.output_matches_oracle => 0,
        Ok(_) => {
            eprintln!("error: output does not match the uninterrupted run");
            1
        }
        Err(SimError::Livelock(_)) => {
            eprintln!("error: {}", outcome.as_ref().unwrap_err());
            2
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    };
    let report = SimulateReport::new(config.clone(), &outcome);
    let mut text = serde_json::to_string_pretty(&report).expect("report serializes");
    text.push('\n');
    if let Err(e) = emit(args.out.as_deref(), &text) {
        return fail(e);
    }
    ExitCode::from(code)
}

fn profile(args: ProfileArgs) -> ExitCode {
    let mut config = match load_config(args.config.as_deref()) {
        Ok(c) => c,
        Err(e) => return fail(e),
    };
    if let Some(s) = args.sizes {
        config.profile.sizes = s;
    }
    if let Some(d) = args.dirty_bytes {
        config.profile.dirty_bytes = d;
    }
    if let Some(p) = args.placement {
        config.profile.placement = p;
    }
    if let Err(e) = config.validate() {
        return fail(e);
    }
    let p = &config.profile;
    let report = match experiments::profile_blocks(
        &config.sim.layout,
        &config.sim.checkpoint_costs,
        &p.sizes,
        &p.dirty_bytes,
        p.placement,
    ) {
        Ok(r) => r,
        Err(e) => return fail(e),
    };
    for a in &report.argmin {
        eprintln!(
            "argmin dirty_bytes={} block_size={} copy_cycles={:.2}",
            a.dirty_bytes, a.block_size, a.copy_cycles
        );
    }
    let text = match args.format {
        Format::Csv => report.to_csv(),
        Format::Json => {
            let env = ProfileEnvelope::new(config, report);
            serde_json::to_string_pretty(&env).expect("report serializes") + "\n"
        }
        Format::Jsonl => report
            .rows
            .iter()
            .map(|r| serde_json::to_string(r).expect("row serializes") + "\n")
            .collect(),
    };
    match emit(args.out.as_deref(), &text) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e),
    }
}

fn compare(args: CompareArgs) -> ExitCode {
    let mut config = match load_config(args.config.as_deref()) {
        Ok(c) => c,
        Err(e) => return fail(e),
    };
    if let Some(c) = args.caps {
        config.sweep.caps = c;
    }
    if let Some(s) = args.strategies {
        config.sweep.strategies = s;
    }
    if let Some(w) = args.workloads {
        config.sweep.workloads = w.into_iter().map(WorkloadSpec::new).collect();
    }
    if let Some(m) = args.mode {
        config.sim.vtt_mode = m.into();
    }
    if let Some(s) = args.seed {
        config.sim.seed = s;
    }
    if let Err(e) = config.validate() {
        return fail(e);
    }
    let sw = &config.sweep;
    let report = experiments::compare(&config.sim, &sw.caps, &sw.strategies, &sw.workloads);
    for r in report.rows.iter().filter(|r| r.error.is_some()) {
        eprintln!(
            "cell {} {} {}: {}",
            r.cap,
            r.strategy,
            r.workload,
            r.error.as_deref().unwrap_or("")
        );
    }
    let s = &report.summary;
    let verdict = |ok: bool| if ok { "pass" } else { "fail" };
    eprintln!("all cells ran: {}", verdict(report.all_cells_ran));
    eprintln!(
        "ordering dica <= full: {} ({} comparable cells, {} violations)",
        verdict(s.ordering_holds),
        s.comparable_cells,
        s.ordering_violations.len()
    );
    eprintln!(
        "gap widens as capacitance shrinks: {} ({} of {} workloads)",
        verdict(s.gap_trend_holds),
        s.gap_non_decreasing_count,
        s.gap_series.len()
    );
    let passed = report.passed();
    let text = match args.format {
        Format::Csv => report.to_csv(),
        Format::Json => {
            let env = CompareEnvelope::new(config, report);
            serde_json::to_string_pretty(&env).expect("report serializes") + "\n"
        }
        Format::Jsonl => {
            let mut t: String = report
                .rows
                .iter()
                .map(|r| serde_json::to_string(r).expect("row serializes") + "\n")
                .collect();
            t.push_str(&serde_json::to_string(&report.summary).expect("summary serializes"));
            t.push('\n');
            t
        }
    };
    if let Err(e) = emit(args.out.as_deref(), &text) {
        return fail(e);
    }
    if passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::ProfileBlocks(a) => profile(a),
        Command::Compare(a) => compare(a),
    }
}
