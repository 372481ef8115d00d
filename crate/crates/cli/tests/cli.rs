use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn quasitrack(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_quasitrack"))
        .args(args)
        .env("QUASITRACK_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn value(out: &str, key: &str) -> String {
    let prefix = format!("{key}=");
    out.lines()
        .find_map(|l| l.strip_prefix(&prefix))
        .unwrap_or_else(|| panic!("no `{key}` in:\n{out}"))
        .to_string()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write(dir: &TempDir, name: &str, text: &str) -> std::path::PathBuf {
    let path = dir.path().join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn synth(dir: &TempDir, config: &Path, seed: u64, out: &str) -> std::path::PathBuf {
    let out = dir.path().join(out);
    let o = quasitrack(&[
        "synth",
        "--config",
        p(config),
        "--seed",
        &seed.to_string(),
        "--out",
        p(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    out
}

fn mot_line(frame: usize, id: u64, x: f64) -> String {
    format!("{frame},{id},{x:?},0.0,10.0,10.0,1.0,1,1.0\n")
}

#[test]
fn minimal_spec_writes_one_record_per_frame() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "s.toml", "frames = 5\nobjects = 1\nmin_lifespan = 1.0\n");
    let out = synth(&dir, &cfg, 1, "out");
    let gt = std::fs::read_to_string(out.join("gt.txt")).unwrap();
    assert_eq!(gt.lines().count(), 5);
    assert!(out.join("detections.jsonl").exists());
}

#[test]
fn synth_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        &dir,
        "s.toml",
        "frames = 30\nobjects = 4\nfp_rate = 0.5\nmiss_rate = 0.2\n",
    );
    let a = synth(&dir, &cfg, 9, "a");
    let b = synth(&dir, &cfg, 9, "b");
    for f in ["gt.txt", "detections.jsonl"] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    let c = synth(&dir, &cfg, 10, "c");
    assert_ne!(
        std::fs::read(a.join("detections.jsonl")).unwrap(),
        std::fs::read(c.join("detections.jsonl")).unwrap()
    );
}

#[test]
fn clutter_count_is_poisson() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "s.toml", "frames = 100\nobjects = 2\nfp_rate = 2.0\n");
    let out = synth(&dir, &cfg, 4, "out");
    let text = std::fs::read_to_string(out.join("detections.jsonl")).unwrap();
    let clutter = text.lines().skip(1).filter(|l| !l.contains("\"identity\"")).count() as f64;
    assert!((clutter - 200.0).abs() <= 3.0 * 200f64.sqrt(), "clutter {clutter}");
}

#[test]
fn missing_seed_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let o = quasitrack(&["synth", "--out", p(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--seed"));
}

#[test]
fn bad_config_is_a_data_error() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "s.toml", "frames = 5\nwobble = 3\n");
    let o = quasitrack(&[
        "synth",
        "--config",
        p(&cfg),
        "--seed",
        "0",
        "--out",
        p(&dir.path().join("o")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("wobble"), "{}", stderr(&o));
}

#[test]
fn perfect_detections_track_without_switches() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "s.toml", "frames = 60\nobjects = 6\n");
    let out = synth(&dir, &cfg, 2, "out");
    let results = dir.path().join("r.txt");
    let o = quasitrack(&[
        "track",
        "--detections",
        p(&out.join("detections.jsonl")),
        "--out",
        p(&results),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = quasitrack(&["eval", "--gt", p(&out.join("gt.txt")), "--results", p(&results)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let s = stdout(&o);
    assert_eq!(value(&s, "idsw"), "0");
    assert_eq!(value(&s, "mota"), "1.0");
}

#[test]
fn backdrops_reduce_clutter_associations() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        &dir,
        "s.toml",
        "frames = 200\nobjects = 10\ndim = 64\nmin_lifespan = 0.5\nmiss_rate = 0.1\nfp_rate = 1.0\n\
         jitter_sigma = 2.0\nscore_tp_lo = 0.6\nscore_tp_hi = 1.0\nscore_fp_lo = 0.3\nscore_fp_hi = 0.9\n\
         embed_sigma = 0.15\nfp_embed_mode = \"near-object\"\nfp_embed_sigma = 0.3\ndup_rate = 0.1\n",
    );
    let (mut with, mut without) = (0usize, 0usize);
    for seed in 0..5 {
        let out = synth(&dir, &cfg, seed, &format!("s{seed}"));
        let dets = out.join("detections.jsonl");
        let run = |extra: &[&str]| {
            let mut args = vec!["track", "--detections", p(&dets), "--out"];
            let r = dir.path().join(format!("r{seed}.txt"));
            let r = r.to_str().unwrap().to_string();
            args.push(&r);
            args.extend_from_slice(extra);
            let o = quasitrack(&args);
            assert!(o.status.success(), "{}", stderr(&o));
            value(&stdout(&o), "fp_associations").parse::<usize>().unwrap()
        };
        with += run(&[]);
        without += run(&["--no-backdrops"]);
    }
    assert!(without > with, "with {with} without {without}");
}

#[test]
fn empty_detections_give_empty_results() {
    let dir = TempDir::new().unwrap();
    let dets = write(&dir, "d.jsonl", "");
    let results = dir.path().join("r.txt");
    let o = quasitrack(&["track", "--detections", p(&dets), "--out", p(&results)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(std::fs::read_to_string(results).unwrap(), "");
}

#[test]
fn dimension_mismatch_fails() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "s.toml", "frames = 5\nobjects = 2\ndim = 8\n");
    let out = synth(&dir, &cfg, 0, "out");
    let o = quasitrack(&[
        "track",
        "--detections",
        p(&out.join("detections.jsonl")),
        "--out",
        p(&dir.path().join("r.txt")),
        "--dim",
        "16",
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unknown_similarity_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let dets = write(&dir, "d.jsonl", "");
    let o = quasitrack(&[
        "track",
        "--detections",
        p(&dets),
        "--out",
        p(&dir.path().join("r.txt")),
        "--similarity",
        "euclid",
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn eval_identical_files() {
    let dir = TempDir::new().unwrap();
    let gt: String = (1..=10).map(|f| mot_line(f, 1, f as f64)).collect();
    let gt = write(&dir, "gt.txt", &gt);
    let o = quasitrack(&["eval", "--gt", p(&gt), "--results", p(&gt)]);
    assert!(o.status.success());
    let s = stdout(&o);
    assert_eq!(value(&s, "mota"), "1.0");
    assert!(s.lines().any(|l| l.starts_with("overall")));
}

#[test]
fn eval_toy_switch() {
    let dir = TempDir::new().unwrap();
    let gt: String = (1..=10).map(|f| mot_line(f, 1, f as f64)).collect();
    let pred: String = (1..=10)
        .map(|f| mot_line(f, if f <= 5 { 1 } else { 2 }, f as f64))
        .collect();
    let gt = write(&dir, "gt.txt", &gt);
    let pred = write(&dir, "pred.txt", &pred);
    let o = quasitrack(&["eval", "--gt", p(&gt), "--results", p(&pred)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let s = stdout(&o);
    assert_eq!(value(&s, "mota"), "0.9");
    assert_eq!(value(&s, "idsw"), "1");
    assert_eq!(value(&s, "idf1"), "0.5");
}

#[test]
fn eval_missing_file_names_the_path() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("absent.txt");
    let o = quasitrack(&["eval", "--gt", p(&missing), "--results", p(&missing)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("absent.txt"));
}

#[test]
fn eval_frame_mismatch_fails() {
    let dir = TempDir::new().unwrap();
    let gt: String = (1..=3).map(|f| mot_line(f, 1, f as f64)).collect();
    let pred: String = (1..=5).map(|f| mot_line(f, 1, f as f64)).collect();
    let gt = write(&dir, "gt.txt", &gt);
    let pred = write(&dir, "pred.txt", &pred);
    let o = quasitrack(&["eval", "--gt", p(&gt), "--results", p(&pred)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("frame"));
}

#[test]
fn ablate_tiny_grid() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        &dir,
        "b.toml",
        "frames = 20\nobjects = 3\nmin_lifespan = 1.0\nfp_rate = 0.5\n",
    );
    let o = quasitrack(&[
        "ablate",
        "--config",
        p(&cfg),
        "--seeds",
        "0",
        "--steps",
        "20",
        "--train-frames",
        "2",
        "--oracle",
        "detection",
        "--oracle",
        "tracking",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let s = stdout(&o);
    let rows: Vec<&str> = s.lines().filter(|l| l.starts_with("row ")).collect();
    assert_eq!(rows.len(), 24);
    for row in &rows {
        for field in row.split(' ').filter(|f| f.contains("_mean=") || f.contains("_sd=")) {
            let v: f64 = field.split('=').nth(1).unwrap().parse().unwrap();
            assert!(v.is_finite(), "{row}");
        }
    }
    let oracles: Vec<&str> = s.lines().filter(|l| l.starts_with("oracle mode=")).collect();
    assert_eq!(oracles.len(), 3);
    assert!(oracles[1].contains("mode=detection") && oracles[2].contains("mode=tracking"));
}

#[test]
fn ablate_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "b.toml", "frames = 15\nobjects = 2\nmin_lifespan = 1.0\n");
    let args = [
        "ablate",
        "--config",
        p(&cfg),
        "--seeds",
        "1,0",
        "--steps",
        "10",
        "--train-frames",
        "2",
    ];
    let a = quasitrack(&args);
    let b = quasitrack(&args);
    assert!(a.status.success(), "{}", stderr(&a));
    assert_eq!(a.stdout, b.stdout);
    let seeds: Vec<String> = stdout(&a)
        .lines()
        .filter(|l| l.starts_with("run ") && l.contains("kind=single similarity=cosine backdrops=off dedup=off"))
        .map(|l| value(&l.replace(' ', "\n"), "seed"))
        .collect();
    assert_eq!(seeds, ["0", "1"]);
}

#[test]
fn losscheck_passes() {
    let o = quasitrack(&["losscheck", "--seed", "0", "--trials", "20"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let s = stdout(&o);
    assert_eq!(s.lines().next(), Some("PASS"));
    let err: f64 = value(&s, "max_gradient_error").parse().unwrap();
    assert!(err < 1e-5);
}

#[test]
fn losscheck_single_trial() {
    let o = quasitrack(&["losscheck", "--seed", "3", "--trials", "1"]);
    assert!(o.status.success());
    assert_eq!(value(&stdout(&o), "trials"), "1");
}

#[test]
fn losscheck_catches_injected_fault() {
    let o = quasitrack(&["losscheck", "--seed", "0", "--trials", "3", "--inject-fault", "0.001"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stdout(&o).contains("failure trial="));
}

#[test]
fn losscheck_zero_trials_is_rejected() {
    let o = quasitrack(&["losscheck", "--seed", "0", "--trials", "0"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn bad_thread_count_is_a_usage_error() {
    let o = Command::new(env!("CARGO_BIN_EXE_quasitrack"))
        .args(["losscheck", "--seed", "0", "--trials", "1"])
        .env("QUASITRACK_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
}
