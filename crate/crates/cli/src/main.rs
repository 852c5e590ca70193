use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use twinguard::campaign::{
    classify_outcome, golden_run, overhead_csv, run_campaign, CampaignConfig, CampaignSummary,
    FaultSource, OutcomeClass,
};
use twinguard::criticality::{
    analyze_program, CriticalityWeights, ReportDocument, SelectionOptions,
};
use twinguard::dependence::analyze;
use twinguard::fault::{
    enumerate_fault_space, flip_bit, msb_position_to_index, sample_faults, FaultSpec, TriggerRange,
};
use twinguard::hardener::{harden, verify_backup, HardenedProgram, HardeningMode};
use twinguard::ir::{build_cfg, decode, encode, parse_text, BlockId, Program, MAGIC};
use twinguard::vm::{run, run_traced, TraceEvent, DEFAULT_STEP_LIMIT};

#[derive(Parser)]
#[command(
    name = "twinguard",
    version,
    about = "Selective soft-error hardening and fault-injection campaigns",
    arg_required_else_help = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a text program and optionally write its binary image.
    Parse {
        input: PathBuf,
        /// Write the encoded image here.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Score variables and select critical blocks; prints JSON.
    Analyze {
        input: PathBuf,
        #[command(flatten)]
        select: SelectArgs,
        /// Also write the dependence graph in Graphviz format.
        #[arg(long)]
        dot: Option<PathBuf>,
    },
    /// Build a hardened container.
    Harden {
        input: PathBuf,
        /// none, critical or full
        #[arg(long, value_parser = parse_mode)]
        mode: HardeningMode,
        #[arg(short, long)]
        output: PathBuf,
        #[command(flatten)]
        select: SelectArgs,
    },
    /// Execute a container; prints the run result as JSON.
    Run {
        container: PathBuf,
        /// segment:byte:bit@trigger, e.g. code:17:3@42
        #[arg(long, value_parser = parse_fault)]
        fault: Option<FaultSpec>,
        #[arg(long, default_value_t = DEFAULT_STEP_LIMIT, value_parser = clap::value_parser!(u64).range(1..))]
        step_limit: u64,
        /// Write one JSON object per executed instruction.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Flip a bit in a byte, run one injected trial, or list fault specs.
    Inject(InjectArgs),
    /// Run a fault-injection campaign and write CSV and JSON results.
    Campaign(CampaignArgs),
    /// Summarize a campaign directory.
    Report { dir: PathBuf },
    /// Print a container or binary image as program text.
    Disasm {
        input: PathBuf,
        /// Disassemble the working image instead of the backup.
        #[arg(long)]
        working: bool,
    },
}

#[derive(Args)]
struct SelectArgs {
    /// Weights for control, fan-out and loop depth.
    #[arg(long, value_name = "WC,WF,WL", value_parser = parse_weights)]
    weights: Option<[f64; 3]>,
    /// Score threshold for critical variables.
    #[arg(long)]
    theta: Option<f64>,
    /// Keep at most this many critical variables.
    #[arg(long)]
    top_k: Option<usize>,
    /// Also protect blocks that define critical variables.
    #[arg(long)]
    protect_defs: bool,
}

#[derive(Args)]
struct InjectArgs {
    container: Option<PathBuf>,
    #[arg(long, value_parser = parse_fault, conflicts_with_all = ["enumerate", "sample", "byte"])]
    fault: Option<FaultSpec>,
    /// List the whole fault space.
    #[arg(long, requires = "container", conflicts_with_all = ["sample", "byte"])]
    enumerate: bool,
    /// List this many faults drawn from the fault space.
    #[arg(long, requires = "container", conflicts_with = "byte")]
    sample: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "0..0", value_parser = parse_triggers)]
    triggers: TriggerRange,
    /// A byte to flip, as 0b..., 0x... or decimal.
    #[arg(long, value_parser = parse_byte, conflicts_with = "container")]
    byte: Option<u8>,
    /// Bit to flip, 0 = least significant.
    #[arg(long, value_parser = clap::value_parser!(u8).range(0..8), requires = "byte", conflicts_with = "paper_bit")]
    bit: Option<u8>,
    /// Bit position counted 1..8 from the most significant bit.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..9), requires = "byte")]
    paper_bit: Option<u8>,
    #[arg(long, default_value_t = DEFAULT_STEP_LIMIT, value_parser = clap::value_parser!(u64).range(1..))]
    step_limit: u64,
}

#[derive(Args)]
struct CampaignArgs {
    container: PathBuf,
    /// Comma-separated hardening modes to compare.
    #[arg(long, value_delimiter = ',', default_value = "none,critical,full", value_parser = parse_mode)]
    modes: Vec<HardeningMode>,
    /// Every code and data bit at every trigger.
    #[arg(long, conflicts_with = "sample", required_unless_present = "sample")]
    exhaustive: bool,
    /// Number of faults drawn uniformly from the fault space.
    #[arg(long)]
    sample: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Inclusive trigger range; defaults to the golden run's length.
    #[arg(long, value_parser = parse_triggers)]
    triggers: Option<TriggerRange>,
    /// Worker threads (0 = one per core).
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    #[arg(long, default_value_t = DEFAULT_STEP_LIMIT, value_parser = clap::value_parser!(u64).range(1..))]
    step_limit: u64,
    #[arg(short, long)]
    output: PathBuf,
}

fn parse_mode(s: &str) -> Result<HardeningMode, String> {
    s.parse()
}

fn parse_fault(s: &str) -> Result<FaultSpec, String> {
    s.parse()
        .map_err(|e: twinguard::fault::FaultError| e.to_string())
}

fn parse_triggers(s: &str) -> Result<TriggerRange, String> {
    s.parse()
        .map_err(|e: twinguard::fault::FaultError| e.to_string())
}

fn parse_weights(s: &str) -> Result<[f64; 3], String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("`{p}`: {e}")))
        .collect::<Result<_, _>>()?;
    parts
        .try_into()
        .map_err(|_| "expected three comma-separated weights".to_string())
}

fn parse_byte(s: &str) -> Result<u8, String> {
    let parsed = if let Some(bits) = s.strip_prefix("0b") {
        u8::from_str_radix(bits, 2)
    } else if let Some(hex) = s.strip_prefix("0x") {
        u8::from_str_radix(hex, 16)
    } else {
        s.parse()
    };
    parsed.map_err(|e| format!("`{s}` is not a byte: {e}"))
}

/// Exit 1 for domain failures, 2 for bad arguments.
enum Failure {
    Domain(String),
    Usage(String),
}

type CliResult = Result<(), Failure>;

fn domain(e: impl std::fmt::Display) -> Failure {
    Failure::Domain(e.to_string())
}

fn read(path: &Path) -> Result<Vec<u8>, Failure> {
    fs::read(path).map_err(|e| Failure::Domain(format!("{}: {e}", path.display())))
}

fn write(path: &Path, bytes: &[u8]) -> CliResult {
    fs::write(path, bytes).map_err(|e| Failure::Domain(format!("{}: {e}", path.display())))
}

fn load_program(path: &Path) -> Result<Program, Failure> {
    let bytes = read(path)?;
    let text = String::from_utf8(bytes)
        .map_err(|_| Failure::Domain(format!("{}: not UTF-8 text", path.display())))?;
    parse_text(&text).map_err(|e| Failure::Domain(format!("{}:{e}", path.display())))
}

fn load_container(path: &Path) -> Result<HardenedProgram, Failure> {
    let h = HardenedProgram::from_bytes(&read(path)?)
        .map_err(|e| Failure::Domain(format!("{}: {e}", path.display())))?;
    verify_backup(&h).map_err(|e| Failure::Domain(format!("{}: {e}", path.display())))?;
    Ok(h)
}

fn options(select: &SelectArgs) -> Result<SelectionOptions, Failure> {
    let mut weights = CriticalityWeights::default();
    if let Some([wc, wf, wl]) = select.weights {
        (weights.control, weights.fanout, weights.loop_depth) = (wc, wf, wl);
    }
    if let Some(t) = select.theta {
        weights.threshold = t;
    }
    weights
        .validate()
        .map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(SelectionOptions {
        weights,
        top_k: select.top_k,
        protect_defs: select.protect_defs,
    })
}

/// Writes to stdout; a closed pipe just ends the output.
fn emit(text: &str) -> CliResult {
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|()| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(domain(e)),
        _ => Ok(()),
    }
}

fn print_json(value: &impl serde::Serialize) -> CliResult {
    let text = serde_json::to_string_pretty(value).map_err(domain)?;
    emit(&(text + "\n"))
}

fn validate_fault(h: &HardenedProgram, fault: Option<&FaultSpec>) -> CliResult {
    match fault {
        Some(f) => f.validate(h).map_err(|e| Failure::Usage(e.to_string())),
        None => Ok(()),
    }
}

fn cmd_parse(input: &Path, output: Option<&Path>) -> CliResult {
    let p = load_program(input)?;
    emit(&format!(
        "{} variables, {} instructions, {} blocks\n",
        p.var_count(),
        p.len(),
        build_cfg(&p).len()
    ))?;
    if let Some(out) = output {
        write(out, encode(&p).as_bytes())?;
    }
    Ok(())
}

fn cmd_analyze(input: &Path, select: &SelectArgs, dot: Option<&Path>) -> CliResult {
    let p = load_program(input)?;
    let (report, blocks) = analyze_program(&p, &options(select)?).map_err(domain)?;
    let cfg = build_cfg(&p);
    if let Some(path) = dot {
        write(path, analyze(&p, &cfg).to_dot(&p).as_bytes())?;
    }
    print_json(&ReportDocument::new(&p, &cfg, &report, &blocks))
}

fn cmd_harden(input: &Path, mode: HardeningMode, output: &Path, select: &SelectArgs) -> CliResult {
    let p = load_program(input)?;
    let (_, blocks) = analyze_program(&p, &options(select)?).map_err(domain)?;
    let critical: BTreeSet<BlockId> = blocks.keys().copied().collect();
    let h = harden(&p, &critical, mode).map_err(domain)?;
    write(output, &h.to_bytes())?;
    eprintln!(
        "{}: mode {}, {} protected block(s)",
        output.display(),
        mode,
        h.manifest().protected_blocks.len()
    );
    Ok(())
}

fn cmd_run(
    container: &Path,
    fault: Option<FaultSpec>,
    step_limit: u64,
    trace: Option<&Path>,
) -> CliResult {
    let h = load_container(container)?;
    validate_fault(&h, fault.as_ref())?;
    let result = match trace {
        None => run(&h, fault.as_ref(), step_limit).map_err(domain)?,
        Some(path) => {
            let file = fs::File::create(path)
                .map_err(|e| Failure::Domain(format!("{}: {e}", path.display())))?;
            let mut out = std::io::BufWriter::new(file);
            let mut failed = None;
            let mut sink = |e: &TraceEvent| {
                if failed.is_none() {
                    let line = serde_json::to_string(e).expect("trace events serialize");
                    if let Err(err) = writeln!(out, "{line}") {
                        failed = Some(err);
                    }
                }
            };
            let r = run_traced(&h, fault.as_ref(), step_limit, &mut sink).map_err(domain)?;
            if let Some(err) = failed {
                return Err(Failure::Domain(format!("{}: {err}", path.display())));
            }
            out.flush().map_err(domain)?;
            r
        }
    };
    print_json(&result)
}

fn cmd_inject(args: &InjectArgs) -> CliResult {
    if let Some(byte) = args.byte {
        let (bit, position) = match (args.bit, args.paper_bit) {
            (Some(b), _) => (b, 8 - b),
            (None, Some(k)) => (
                msb_position_to_index(k).map_err(|e| Failure::Usage(e.to_string()))?,
                k,
            ),
            (None, None) => return Err(Failure::Usage("--byte needs --bit or --paper-bit".into())),
        };
        let flipped = flip_bit(byte, bit);
        return emit(&format!(
            "{byte:08b} -> {flipped:08b} (bit_index {bit}, msb position {position})\n"
        ));
    }
    let Some(path) = &args.container else {
        return Err(Failure::Usage("inject needs a container or --byte".into()));
    };
    let h = load_container(path)?;
    if args.enumerate || args.sample.is_some() {
        let faults = match args.sample {
            Some(n) => sample_faults(&h, args.triggers, n, args.seed),
            None => enumerate_fault_space(&h, args.triggers),
        };
        let listing: String = faults.iter().map(|f| format!("{f}\n")).collect();
        return emit(&listing);
    }
    let Some(fault) = args.fault else {
        return Err(Failure::Usage(
            "inject needs --fault, --enumerate, --sample or --byte".into(),
        ));
    };
    validate_fault(&h, Some(&fault))?;
    let program = h.program().map_err(domain)?;
    let golden = golden_run(&program, args.step_limit).map_err(domain)?;
    let result = run(&h, Some(&fault), args.step_limit).map_err(domain)?;
    print_json(&serde_json::json!({
        "fault": fault.to_string(),
        "outcome": classify_outcome(&result, &golden),
        "golden_tape": golden.output_tape,
        "result": result,
    }))
}

fn cmd_campaign(args: &CampaignArgs) -> CliResult {
    let h = load_container(&args.container)?;
    let triggers = match args.triggers {
        Some(t) => t,
        None => {
            let golden =
                golden_run(&h.program().map_err(domain)?, args.step_limit).map_err(domain)?;
            TriggerRange::new(0, golden.dyn_instr_count.saturating_sub(1))
        }
    };
    let source = match args.sample {
        Some(n) => FaultSource::Sample { n, seed: args.seed },
        None => FaultSource::Exhaustive,
    };
    let config = CampaignConfig {
        modes: args.modes.clone(),
        source,
        triggers,
        step_limit: args.step_limit,
        jobs: args.jobs,
    };
    let result = run_campaign(&h, &config).map_err(domain)?;
    fs::create_dir_all(&args.output)
        .map_err(|e| Failure::Domain(format!("{}: {e}", args.output.display())))?;
    write(&args.output.join("trials.csv"), result.to_csv().as_bytes())?;
    let summary = serde_json::to_string_pretty(&result.summary).map_err(domain)?;
    write(&args.output.join("summary.json"), summary.as_bytes())?;
    write(
        &args.output.join("overhead.csv"),
        overhead_csv(&result.summary.overhead).as_bytes(),
    )?;
    eprintln!(
        "{} trials written to {}",
        result.rows.len(),
        args.output.display()
    );
    Ok(())
}

fn cmd_report(dir: &Path) -> CliResult {
    let path = dir.join("summary.json");
    let summary: CampaignSummary = serde_json::from_slice(&read(&path)?)
        .map_err(|e| Failure::Domain(format!("{}: {e}", path.display())))?;
    let mut out = String::new();
    out.push_str(&format!("{:<9} {:>7}", "mode", "trials"));
    for c in OutcomeClass::ALL {
        out.push_str(&format!(" {:>w$}", c.as_str(), w = c.as_str().len().max(6)));
    }
    out.push_str("  coverage\n");
    for m in &summary.modes {
        out.push_str(&format!("{:<9} {:>7}", m.mode.as_str(), m.trials));
        for c in OutcomeClass::ALL {
            out.push_str(&format!(
                " {:>w$}",
                m.counts.get(&c).copied().unwrap_or(0),
                w = c.as_str().len().max(6)
            ));
        }
        match m.coverage {
            Some(c) => out.push_str(&format!(
                "  {:.4} ({} non-benign)\n",
                c, m.coverage_denominator
            )),
            None => out.push_str("  n/a (no non-benign trials)\n"),
        }
    }
    out.push_str(&format!(
        "\n{:<9} {:>10} {:>13} {:>17}\n",
        "mode", "dyn_instr", "shadow_bytes", "protected_blocks"
    ));
    for r in &summary.overhead {
        out.push_str(&format!(
            "{:<9} {:>10} {:>13} {:>17}\n",
            r.mode.as_str(),
            r.dyn_instr,
            r.shadow_bytes,
            r.protected_blocks
        ));
    }
    emit(&out)
}

fn cmd_disasm(input: &Path, working: bool) -> CliResult {
    let bytes = read(input)?;
    if bytes.len() < 4 || bytes[..4] != MAGIC {
        return Err(Failure::Domain(format!(
            "{}: not a binary image or container",
            input.display()
        )));
    }
    let program = match HardenedProgram::from_bytes(&bytes) {
        Ok(h) if working => decode(h.working_image())
            .and_then(|p| {
                p.with_names(&h.manifest().symbols)
                    .map_err(twinguard::ir::DecodeError::Structure)
            })
            .map_err(|e| Failure::Domain(format!("working image: {e}")))?,
        Ok(h) => h.program().map_err(domain)?,
        Err(_) if working => return Err(Failure::Usage("--working needs a container".into())),
        Err(_) => {
            decode(&bytes).map_err(|e| Failure::Domain(format!("{}: {e}", input.display())))?
        }
    };
    emit(&program.to_string())
}

fn dispatch(command: Command) -> CliResult {
    match command {
        Command::Parse { input, output } => cmd_parse(&input, output.as_deref()),
        Command::Analyze { input, select, dot } => cmd_analyze(&input, &select, dot.as_deref()),
        Command::Harden {
            input,
            mode,
            output,
            select,
        } => cmd_harden(&input, mode, &output, &select),
        Command::Run {
            container,
            fault,
            step_limit,
            trace,
        } => cmd_run(&container, fault, step_limit, trace.as_deref()),
        Command::Inject(args) => cmd_inject(&args),
        Command::Campaign(args) => cmd_campaign(&args),
        Command::Report { dir } => cmd_report(&dir),
        Command::Disasm { input, working } => cmd_disasm(&input, working),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Domain(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(2)
        }
    }
}
