//! End-to-end runs of the `bedrock` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use bedrock::memory::encode_image_record;

fn bedrock(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bedrock"))
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn leak(p: PathBuf) -> &'static str {
    Box::leak(p.to_str().unwrap().to_string().into_boxed_str())
}

fn moesif_source() -> &'static str {
    leak(Path::new(env!("CARGO_MANIFEST_DIR")).join("src/ucode/programs/moesif.s"))
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        std::fs::write(
            root.join("sys.cfg"),
            "cores = 2\nsets = 64\nassoc = 8\nmem_latency = 20\nseed = 3\n",
        )
        .unwrap();
        std::fs::write(
            root.join("t.trace"),
            "# ping-pong\n0 ST 0x80000000 11\n1 LD 0x80000000\n1 ST 0x80000000 22\n0 LD 0x80000000\n0 LDU 0x80000040\n",
        )
        .unwrap();
        Fixture { _dir: dir, root }
    }

    fn path(&self, name: &str) -> &'static str {
        leak(self.root.join(name))
    }
}

#[test]
fn simulate_reports_and_writes_csv() {
    let f = Fixture::new();
    let csv = f.path("txn.csv");
    let args = [
        "simulate",
        "--config",
        f.path("sys.cfg"),
        "--trace",
        f.path("t.trace"),
        "--report",
        csv,
    ];
    let o = bedrock(&args);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let out = stdout(&o);
    assert!(out.contains("engine: fsm"));
    assert!(out.contains("violations 0"));
    let report = std::fs::read_to_string(csv).unwrap();
    assert!(report.starts_with("class,addr,lce"));
    assert!(report.lines().count() >= 4);
    assert_eq!(stdout(&bedrock(&args)), out);
}

#[test]
fn simulate_with_assembled_microcode_and_image() {
    let f = Fixture::new();
    let bin = f.path("moesif.bin");
    let o = bedrock(&["assemble", moesif_source(), "-o", bin]);
    assert_eq!(o.status.code(), Some(0));
    let img = f.path("mem.img");
    std::fs::write(img, encode_image_record(0x8000_0080, &[0xab; 8])).unwrap();
    std::fs::write(f.path("ld.trace"), "0 LD 0x80000080\n1 LD 0x80000080\n").unwrap();
    let o = bedrock(&[
        "simulate",
        "--trace",
        f.path("ld.trace"),
        "--engine",
        "ucode",
        "--ucode",
        bin,
        "--image",
        img,
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let out = stdout(&o);
    assert!(out.contains("engine: ucode"));
    assert!(out.contains("loads checked 2"), "{out}");
}

#[test]
fn simulate_rejects_bad_inputs() {
    let f = Fixture::new();
    std::fs::write(f.path("bad.trace"), "0 JUMP 0x0\n").unwrap();
    let o = bedrock(&["simulate", "--trace", f.path("bad.trace")]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 1"));
    std::fs::write(f.path("far.trace"), "5 LD 0x80000000\n").unwrap();
    assert_eq!(
        bedrock(&["simulate", "--trace", f.path("far.trace")])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(bedrock(&["simulate"]).status.code(), Some(2));
}

#[test]
fn assemble_listing_and_disassemble_round_trip() {
    let f = Fixture::new();
    let bin = f.path("p.bin");
    let o = bedrock(&["assemble", moesif_source(), "-o", bin, "--listing"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).lines().count() >= 126);
    let text = stdout(&bedrock(&["disasm", bin]));
    let src = f.path("again.s");
    std::fs::write(src, &text).unwrap();
    let bin2 = f.path("again.bin");
    assert_eq!(
        bedrock(&["assemble", src, "-o", bin2]).status.code(),
        Some(0)
    );
    assert_eq!(std::fs::read(bin).unwrap(), std::fs::read(bin2).unwrap());

    std::fs::write(f.path("bad.s"), "top: bogus r0\n").unwrap();
    let o = bedrock(&["assemble", f.path("bad.s"), "-o", f.path("x.bin")]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(
        bedrock(&["disasm", f.path("t.trace")]).status.code(),
        Some(2)
    );
}

#[test]
fn check_verifies_and_finds_mutations() {
    let o = bedrock(&["check", "--protocol", "mesi", "--caches", "2"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).starts_with("Verified"));
    let o = bedrock(&[
        "check",
        "--protocol",
        "moesif",
        "--caches",
        "3",
        "--mutation",
        "skip-writeback",
    ]);
    assert_eq!(o.status.code(), Some(1));
    let out = stdout(&o);
    assert!(out.starts_with("Violation of"), "{out}");
    assert!(out.contains("\n  1. "), "{out}");
    let o = bedrock(&["check", "--caches", "4", "--max-states", "10"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).starts_with("Bounded"));
}

#[test]
fn occupancy_sweep_all_match() {
    let o = bedrock(&["occupancy", "--engine", "fsm", "--cores", "8", "--sweep"]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    let mut lines = out.lines();
    assert!(lines.next().unwrap().ends_with(",match"));
    let rows: Vec<&str> = lines.collect();
    assert!(rows.len() > 100);
    assert!(rows.iter().all(|r| r.ends_with(",true")));
    let f = Fixture::new();
    let csv = f.path("occ.csv");
    let o = bedrock(&["occupancy", "--engine", "ucode", "--cores", "4", "-o", csv]);
    assert_eq!(o.status.code(), Some(0));
    assert!(std::fs::read_to_string(csv)
        .unwrap()
        .lines()
        .skip(1)
        .all(|r| r.ends_with(",true")));
}

#[test]
fn compare_reports_equivalence() {
    let f = Fixture::new();
    let o = bedrock(&[
        "compare",
        "--config",
        f.path("sys.cfg"),
        "--trace",
        f.path("t.trace"),
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let out = stdout(&o);
    assert!(out.contains("equivalent: yes"));
    assert!(out.contains("cycle ratio (ucode/fsm): "));
}

#[test]
fn overhead_values() {
    assert_eq!(
        stdout(&bedrock(&["overhead", "--scheme", "dup", "--caches", "64"])),
        "6.25%\n"
    );
    assert_eq!(
        stdout(&bedrock(&[
            "overhead", "--scheme", "coarse:8", "--caches", "16", "--pad", "8"
        ])),
        "7.81%\n"
    );
    assert_eq!(
        bedrock(&["overhead", "--scheme", "dup", "--caches", "1"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn tracegen_feeds_simulate() {
    let f = Fixture::new();
    let t = f.path("gen.trace");
    let args = [
        "tracegen", "--seed", "7", "--ops", "300", "--lces", "4", "-o", t,
    ];
    assert_eq!(bedrock(&args).status.code(), Some(0));
    let first = std::fs::read(t).unwrap();
    assert_eq!(bedrock(&args).status.code(), Some(0));
    assert_eq!(std::fs::read(t).unwrap(), first);
    std::fs::write(f.path("four.cfg"), "cores = 4\n").unwrap();
    let o = bedrock(&["compare", "--config", f.path("four.cfg"), "--trace", t]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    assert!(stdout(&o).contains("equivalent: yes"));
}
