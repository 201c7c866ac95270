//! Command-line front end. Exit codes: 0 success, 1 violation or mismatch
//! found, 2 usage or input error.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::cce::{TxnClass, TxnRecord, WbKind};
use crate::checker::{explore, CheckConfig, Mutation};
use crate::harness::compare::compare_engines;
use crate::harness::config::{EngineKind, SimConfig};
use crate::harness::occupancy::{sweep, OccupancyRow};
use crate::harness::overhead::{format_percent, overhead_calc, EntryLayout, Scheme};
use crate::harness::system::{SimError, System};
use crate::harness::trace::{parse_trace, write_trace, TraceOp};
use crate::harness::workload::{random_workload, WorkloadParams};
use crate::protocol::Protocol;
use crate::ucode::asm::{assemble, disassemble, listing, MicroProgram};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FOUND: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "bedrock",
    version,
    about = "Directory coherence simulator, microcode assembler and model checker"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a trace and report statistics and monitor verdicts.
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        engine: Option<EngineKind>,
        /// Microcode program (.s source or assembled .bin).
        #[arg(long)]
        ucode: Option<PathBuf>,
        /// Memory preload image.
        #[arg(long)]
        image: Option<PathBuf>,
        /// Per-transaction CSV.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Assemble microcode source into a binary image.
    Assemble {
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Print an address/encoding listing to stdout.
        #[arg(long)]
        listing: bool,
    },
    /// Disassemble a binary image.
    Disasm { input: PathBuf },
    /// Exhaustively explore the single-block protocol model.
    Check {
        #[arg(long, default_value = "moesif")]
        protocol: Protocol,
        #[arg(long, default_value_t = 2)]
        caches: usize,
        #[arg(long)]
        mutation: Option<Mutation>,
        #[arg(long)]
        max_states: Option<usize>,
        /// Disable cache-id symmetry reduction.
        #[arg(long)]
        no_symmetry: bool,
    },
    /// Measure request occupancy against the closed forms, as CSV.
    Occupancy {
        #[arg(long, default_value = "fsm")]
        engine: EngineKind,
        #[arg(long, default_value_t = 8)]
        cores: usize,
        /// Also cover 8-beat blocks.
        #[arg(long)]
        sweep: bool,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Run a trace on both engines and compare the outcome.
    Compare {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        trace: PathBuf,
    },
    /// Directory storage overhead.
    Overhead {
        #[arg(long, default_value = "dup")]
        scheme: Scheme,
        #[arg(long, default_value_t = 2)]
        caches: u32,
        /// Entry padding granularity in bits.
        #[arg(long, default_value_t = 32)]
        pad: u32,
    },
    /// Generate a seeded random trace.
    Tracegen {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        ops: usize,
        #[arg(long, default_value_t = 2)]
        lces: usize,
        #[arg(long, default_value_t = 256)]
        footprint: usize,
        #[arg(long, default_value_t = 0.3)]
        write_ratio: f64,
        #[arg(long, default_value_t = 0.5)]
        sharing: f64,
        #[arg(long, default_value_t = 0.02)]
        atomic_ratio: f64,
        #[arg(long, default_value_t = 0.01)]
        uncached_ratio: f64,
        #[arg(long, default_value_t = 0.005)]
        fence_ratio: f64,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

#[derive(Debug)]
struct Failure {
    code: i32,
    msg: String,
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_USAGE,
        msg: msg.into(),
    }
}

fn found(msg: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_FOUND,
        msg: msg.into(),
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Config(_) | SimError::NoSuchLce(_) => usage(e.to_string()),
            _ => found(e.to_string()),
        }
    }
}

type Res = Result<i32, Failure>;

fn read_text(p: &Path) -> Result<String, Failure> {
    fs::read_to_string(p).map_err(|e| usage(format!("{}: {e}", p.display())))
}

fn write_out(p: &Path, bytes: &[u8]) -> Result<(), Failure> {
    fs::write(p, bytes).map_err(|e| usage(format!("{}: {e}", p.display())))
}

fn emit(out: &mut dyn Write, s: &str) -> Result<(), Failure> {
    out.write_all(s.as_bytes())
        .map_err(|e| usage(format!("stdout: {e}")))
}

fn load_config(p: &Option<PathBuf>) -> Result<SimConfig, Failure> {
    match p {
        None => Ok(SimConfig::default()),
        Some(p) => {
            SimConfig::parse(&read_text(p)?).map_err(|e| usage(format!("{}: {e}", p.display())))
        }
    }
}

fn load_trace(p: &Path) -> Result<Vec<TraceOp>, Failure> {
    parse_trace(&read_text(p)?).map_err(|e| usage(format!("{}: {e}", p.display())))
}

fn class_name(c: TxnClass) -> String {
    match c {
        TxnClass::Coherent(k) => format!("{k:?}"),
        other => format!("{other:?}"),
    }
}

fn wb_name(w: Option<WbKind>) -> &'static str {
    match w {
        None => "none",
        Some(WbKind::Null) => "clean",
        Some(WbKind::Dirty) => "dirty",
    }
}

pub const TXN_CSV_HEADER: &str =
    "class,addr,lce,lce_state,dir_state,sharers,replacement,owner_wb,start,end,busy,stall,backpressure";

fn txn_csv(r: &TxnRecord) -> String {
    format!(
        "{},{:#x},{},{},{},{},{},{},{},{},{},{},{}",
        class_name(r.class),
        r.addr,
        r.lce,
        r.lce_state,
        r.dir_state,
        r.sharers,
        wb_name(r.replacement),
        wb_name(r.owner_wb),
        r.start,
        r.end,
        r.busy_cycles,
        r.stall_cycles,
        r.backpressure_cycles
    )
}

fn summary(sys: &System) -> String {
    let mut s = String::new();
    let st = &sys.stats;
    s += &format!("engine: {}\n", sys.cfg.engine);
    s += &format!("cycles: {}\n", sys.now);
    s += &format!(
        "ops: {}\nhits: {}\nmisses: {}\nsc failures: {}\n",
        st.ops, st.hits, st.misses, st.sc_failures
    );
    let recs = sys.records();
    let mut classes: Vec<(String, u64, u64, u64)> = Vec::new();
    for r in &recs {
        let name = class_name(r.class);
        match classes.iter_mut().find(|c| c.0 == name) {
            Some(c) => {
                c.1 += 1;
                c.2 += r.busy_cycles;
                c.3 += r.stall_cycles;
            }
            None => classes.push((name, 1, r.busy_cycles, r.stall_cycles)),
        }
    }
    classes.sort();
    s += &format!("transactions: {}\n", recs.len());
    for (name, n, busy, stall) in classes {
        s += &format!("  {name}: count {n}, busy {busy}, stall {stall}\n");
    }
    s += "messages:\n";
    for (k, n) in sys.net_counts() {
        s += &format!("  {k:?}: {n}\n");
    }
    s += &format!(
        "monitors: loads checked {}, stores applied {}, violations 0\n",
        sys.monitors.loads_checked, sys.monitors.stores_applied
    );
    s
}

fn simulate(
    out: &mut dyn Write,
    config: &Option<PathBuf>,
    trace: &Path,
    engine: Option<EngineKind>,
    ucode: &Option<PathBuf>,
    image: &Option<PathBuf>,
    report: &Option<PathBuf>,
) -> Res {
    let mut cfg = load_config(config)?;
    if let Some(e) = engine {
        cfg.engine = e;
    }
    if let Some(u) = ucode {
        cfg.ucode = Some(u.clone());
    }
    let ops = load_trace(trace)?;
    let mut sys = System::new(cfg)?;
    if let Some(p) = image {
        let bytes = fs::read(p).map_err(|e| usage(format!("{}: {e}", p.display())))?;
        sys.load_image(&bytes)
            .map_err(|e| usage(format!("{}: {e}", p.display())))?;
    }
    sys.load_trace(&ops)?;
    sys.run()?;
    emit(out, &summary(&sys))?;
    if let Some(p) = report {
        let mut csv = String::from(TXN_CSV_HEADER);
        csv.push('\n');
        for r in sys.records() {
            csv += &txn_csv(&r);
            csv.push('\n');
        }
        write_out(p, csv.as_bytes())?;
    }
    Ok(EXIT_OK)
}

fn occupancy(
    out: &mut dyn Write,
    engine: EngineKind,
    cores: usize,
    full: bool,
    output: &Option<PathBuf>,
) -> Res {
    if cores < 2 || !cores.is_power_of_two() {
        return Err(usage(format!(
            "--cores must be a power of two of at least 2, got {cores}"
        )));
    }
    let beats: &[usize] = if full { &[1, 8] } else { &[1] };
    let rows = sweep(engine, &[cores], beats)?;
    let mut csv = String::from(OccupancyRow::CSV_HEADER);
    csv.push('\n');
    for r in &rows {
        csv += &r.csv();
        csv.push('\n');
    }
    match output {
        Some(p) => write_out(p, csv.as_bytes())?,
        None => emit(out, &csv)?,
    }
    let bad = rows.iter().filter(|r| !r.matches()).count();
    if bad > 0 {
        return Err(found(format!(
            "{bad} of {} rows differ from the model",
            rows.len()
        )));
    }
    Ok(EXIT_OK)
}

fn execute(cli: &Cli, out: &mut dyn Write) -> Res {
    match &cli.command {
        Command::Simulate {
            config,
            trace,
            engine,
            ucode,
            image,
            report,
        } => simulate(out, config, trace, *engine, ucode, image, report),
        Command::Assemble {
            input,
            output,
            listing: list,
        } => {
            let prog = assemble(&read_text(input)?)
                .map_err(|e| usage(format!("{}: {e}", input.display())))?;
            write_out(output, &prog.to_binary())?;
            if *list {
                emit(out, &listing(&prog))?;
            }
            Ok(EXIT_OK)
        }
        Command::Disasm { input } => {
            let bytes = fs::read(input).map_err(|e| usage(format!("{}: {e}", input.display())))?;
            let prog = MicroProgram::from_binary(&bytes)
                .map_err(|e| usage(format!("{}: {e}", input.display())))?;
            emit(out, &disassemble(&prog))?;
            Ok(EXIT_OK)
        }
        Command::Check {
            protocol,
            caches,
            mutation,
            max_states,
            no_symmetry,
        } => {
            let cfg = CheckConfig {
                mutation: *mutation,
                max_states: *max_states,
                symmetry: !no_symmetry,
                ..CheckConfig::new(*protocol, *caches)
            };
            let r = explore(&cfg).map_err(|e| usage(e.to_string()))?;
            emit(out, &format!("{r}\n"))?;
            Ok(if r.violation().is_some() {
                EXIT_FOUND
            } else {
                EXIT_OK
            })
        }
        Command::Occupancy {
            engine,
            cores,
            sweep,
            output,
        } => occupancy(out, *engine, *cores, *sweep, output),
        Command::Compare { config, trace } => {
            let cfg = load_config(config)?;
            let ops = load_trace(trace)?;
            let r = compare_engines(&cfg, &ops)?;
            emit(out, &r.to_string())?;
            Ok(if r.equivalent() { EXIT_OK } else { EXIT_FOUND })
        }
        Command::Overhead {
            scheme,
            caches,
            pad,
        } => {
            if *pad == 0 {
                return Err(usage("--pad must be positive"));
            }
            let layout = EntryLayout {
                pad: *pad,
                ..Default::default()
            };
            let p = overhead_calc(*scheme, *caches, &layout).map_err(usage)?;
            emit(out, &format!("{}\n", format_percent(p)))?;
            Ok(EXIT_OK)
        }
        Command::Tracegen {
            seed,
            ops,
            lces,
            footprint,
            write_ratio,
            sharing,
            atomic_ratio,
            uncached_ratio,
            fence_ratio,
            output,
        } => {
            for (name, v) in [
                ("write-ratio", write_ratio),
                ("sharing", sharing),
                ("atomic-ratio", atomic_ratio),
                ("uncached-ratio", uncached_ratio),
                ("fence-ratio", fence_ratio),
            ] {
                if !(0.0..=1.0).contains(v) {
                    return Err(usage(format!("--{name} must lie in [0, 1], got {v}")));
                }
            }
            if *lces == 0 || *footprint == 0 {
                return Err(usage("--lces and --footprint must be positive"));
            }
            let p = WorkloadParams {
                lces: *lces,
                ops: *ops,
                footprint: *footprint,
                write_ratio: *write_ratio,
                sharing: *sharing,
                atomic_ratio: *atomic_ratio,
                uncached_ratio: *uncached_ratio,
                fence_ratio: *fence_ratio,
                ..Default::default()
            };
            let text = write_trace(&random_workload(*seed, &p));
            match output {
                Some(path) => write_out(path, text.as_bytes())?,
                None => emit(out, &text)?,
            }
            Ok(EXIT_OK)
        }
    }
}

/// Parses `args` (program name first), runs the command and returns the exit
/// code. Reports go to `out`, diagnostics to `err`.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                err.write_all(text.as_bytes())
            } else {
                out.write_all(text.as_bytes())
            };
            return code;
        }
    };
    match execute(&cli, out) {
        Ok(c) => c,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.msg);
            f.code
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn call(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let mut argv = vec!["bedrock"];
        argv.extend_from_slice(args);
        let code = run(argv, &mut out, &mut err);
        (
            code,
            String::from_utf8(out).unwrap(),
            String::from_utf8(err).unwrap(),
        )
    }

    #[test]
    fn overhead_prints_percent() {
        assert_eq!(
            call(&["overhead", "--scheme", "dup", "--caches", "64"]),
            (0, "6.25%\n".into(), String::new())
        );
        assert_eq!(
            call(&["overhead", "--scheme", "complete", "--caches", "64", "--pad", "1"]).1,
            "18.55%\n"
        );
        assert_eq!(call(&["overhead", "--caches", "1"]).0, EXIT_USAGE);
        assert_eq!(call(&["overhead", "--scheme", "fancy"]).0, EXIT_USAGE);
    }

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(call(&[]).0, EXIT_USAGE);
        assert_eq!(call(&["frobnicate"]).0, EXIT_USAGE);
        assert_eq!(call(&["check", "--caches", "9"]).0, EXIT_USAGE);
        assert_eq!(call(&["check", "--mutation", "nope"]).0, EXIT_USAGE);
        assert_eq!(call(&["tracegen", "--sharing", "2"]).0, EXIT_USAGE);
        assert_eq!(call(&["occupancy", "--cores", "3"]).0, EXIT_USAGE);
        let (code, out, _) = call(&["--help"]);
        assert_eq!(code, EXIT_OK);
        assert!(out.contains("simulate"));
    }

    #[test]
    fn check_exit_codes() {
        let (code, out, _) = call(&["check", "--protocol", "mesi", "--caches", "2"]);
        assert_eq!(code, EXIT_OK);
        assert!(out.starts_with("Verified"), "{out}");
        let (code, out, _) = call(&[
            "check",
            "--protocol",
            "mesi",
            "--caches",
            "2",
            "--mutation",
            "drop-invalidations",
        ]);
        assert_eq!(code, EXIT_FOUND);
        assert!(out.contains("Violation"), "{out}");
    }

    #[test]
    fn tracegen_is_stable() {
        let a = call(&["tracegen", "--seed", "4", "--ops", "50"]);
        assert_eq!(a.0, 0);
        assert_eq!(a, call(&["tracegen", "--seed", "4", "--ops", "50"]));
        assert_eq!(parse_trace(&a.1).unwrap().len(), 50);
    }
}
