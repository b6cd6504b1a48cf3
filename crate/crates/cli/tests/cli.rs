use std::path::Path;
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

fn structattn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_structattn"))
        .args(args)
        .env_remove("STRUCTATTN_SEED")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn digest(p: &Path) -> Vec<u8> {
    Sha256::digest(std::fs::read(p).unwrap()).to_vec()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn init_is_deterministic_and_writes_73_tensors() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.saiw"), dir.path().join("b.saiw"));
    let out = structattn(&["init", "--seed", "7", "--out", p(&a)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).starts_with("impulse init, seed 7, 73 tensors"));
    assert_eq!(code(&structattn(&["init", "--seed", "7", "--out", p(&b)])), 0);
    assert_eq!(digest(&a), digest(&b));
}

#[test]
fn seed_falls_back_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.saiw"), dir.path().join("b.saiw"));
    let small = ["--grid", "4", "4", "--dim", "24", "--heads", "2", "--layers", "1", "--dhead", "8"];
    let mut args = vec!["init", "--out", p(&a)];
    args.extend(small);
    let env = Command::new(env!("CARGO_BIN_EXE_structattn"))
        .args(&args)
        .env("STRUCTATTN_SEED", "42")
        .output()
        .unwrap();
    assert!(stdout(&env).contains("seed 42"));
    let mut args = vec!["init", "--seed", "42", "--out", p(&b)];
    args.extend(small);
    assert_eq!(code(&structattn(&args)), 0);
    assert_eq!(digest(&a), digest(&b));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "grid = 4x4\ndim = 24\nheads = 2\nlayers = 1\ndhead = 8\nseed = 3\n").unwrap();
    let out = structattn(&["init", "--config", p(&cfg), "--seed", "5", "--out", p(&dir.path().join("m.saiw"))]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).starts_with("impulse init, seed 5, 5 tensors"));

    std::fs::write(&cfg, "colour = blue\n").unwrap();
    let out = structattn(&["init", "--config", p(&cfg), "--out", p(&dir.path().join("x.saiw"))]);
    assert_eq!(code(&out), 2);
}

fn summary_numbers(line: &str) -> (usize, usize, f64, f64) {
    // "<n> heads, <method> method; offsets agree A/T; mean row entropy E (ln N = L)"
    let agree = line.split("agree ").nth(1).unwrap().split(';').next().unwrap();
    let (a, t) = agree.split_once('/').unwrap();
    let entropy: f64 = line.split("entropy ").nth(1).unwrap().split(' ').next().unwrap().parse().unwrap();
    let ln_n: f64 = line.split("= ").nth(1).unwrap().trim_end_matches(')').parse().unwrap();
    (a.parse().unwrap(), t.parse().unwrap(), entropy, ln_n)
}

#[test]
fn inspect_reports_per_method_structure() {
    let dir = tempfile::tempdir().unwrap();
    for method in ["impulse", "default", "mimetic"] {
        let file = dir.path().join(format!("{method}.saiw"));
        let out_dir = dir.path().join(method);
        assert_eq!(code(&structattn(&["init", "--method", method, "--seed", "1", "--out", p(&file)])), 0);
        let out = structattn(&["inspect", p(&file), "--out", p(&out_dir)]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        let (agree, targeted, entropy, ln_n) = summary_numbers(stdout(&out).trim());
        assert!(out_dir.join("layer0_head0.pgm").exists());
        assert!(out_dir.join("layer11_head2_zoom.pgm").exists());
        let csv = std::fs::read_to_string(out_dir.join("fidelity.csv")).unwrap();
        assert_eq!(csv.lines().count(), 37);
        match method {
            "impulse" => {
                assert_eq!(targeted, 36);
                assert!(agree as f64 >= 0.9 * targeted as f64);
            }
            "default" => assert!(entropy >= 0.99 * ln_n, "{entropy} vs {ln_n}"),
            _ => {
                for row in csv.lines().skip(1) {
                    let cells: Vec<&str> = row.split(',').collect();
                    assert_eq!((cells[5], cells[6]), ("0", "0"), "{row}");
                }
            }
        }
    }
}

#[test]
fn inspect_can_select_heads() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("m.saiw");
    assert_eq!(code(&structattn(&["init", "--out", p(&file)])), 0);
    let out_dir = dir.path().join("sel");
    let out = structattn(&["inspect", p(&file), "--out", p(&out_dir), "--layer", "2", "--head", "1", "--zoom", "0"]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).starts_with("1 heads"));
    let files: Vec<_> = std::fs::read_dir(&out_dir).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(files.len(), 2);
}

#[test]
fn verify_prop1_writes_csv_and_excludes_small_d() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("p.csv");
    let out = structattn(&["verify-prop1", "--dims", "9,18", "--ks", "2", "--seeds", "0,1", "--out", p(&csv)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("4 outside D >= k f^2"));
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "D,k,f,bank_kind,rel_residual,satisfied,seed");
    for line in lines {
        let cells: Vec<&str> = line.split(',').collect();
        let r: f64 = cells[4].parse().unwrap();
        match (cells[0], cells[3]) {
            ("18", "random" | "impulse") => assert!(r <= 1e-6, "{line}"),
            (_, "box") => assert!(r > 1e-3, "{line}"),
            _ => {}
        }
    }
}

#[test]
fn verify_span_matches_expectations() {
    assert_eq!(code(&structattn(&["verify-span", "--kind", "box", "--dim", "18"])), 0);
    assert_eq!(code(&structattn(&["verify-span", "--kind", "impulse", "--dim", "18"])), 0);
    let seeds: Vec<String> = (0..50).map(|s| s.to_string()).collect();
    let out = structattn(&["verify-span", "--kind", "random", "--dim", "20", "--seeds", &seeds.join(",")]);
    assert_eq!(code(&out), 0);
    assert_eq!(String::from_utf8_lossy(&out.stderr).matches("spanned = true").count(), 50);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&structattn(&["init", "--dhead", "300", "--out", p(&dir.path().join("x"))])), 2);
    assert_eq!(code(&structattn(&["init", "--method", "bogus", "--out", p(&dir.path().join("x"))])), 2);
    assert_eq!(code(&structattn(&["inspect", p(&dir.path().join("missing.saiw")), "--out", p(dir.path())])), 3);
    let junk = dir.path().join("junk.saiw");
    std::fs::write(&junk, b"not a container at all").unwrap();
    assert_eq!(code(&structattn(&["inspect", p(&junk), "--out", p(dir.path())])), 4);
    assert_eq!(code(&structattn(&["verify-span", "--kind", "hexagon", "--dim", "9"])), 2);
}
