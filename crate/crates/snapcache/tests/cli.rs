//! Black-box tests of the `snapcache` binary: exit codes, artifact
//! shapes and output determinism.

use std::process::{Command, Output};

fn snapcache(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_snapcache"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn even_kernel_exits_2_without_running_suites() {
    let out = snapcache(&["verify", "--compression.kernel_size", "4"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!stdout(&out).contains("oracle case"));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("kernel"), "{err}");
}

#[test]
fn unknown_flag_exits_2() {
    let out = snapcache(&["bench", "--model.dmodel", "64"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn verify_runs_exactly_the_requested_cases_and_is_deterministic() {
    let args = ["verify", "--seed", "42", "--cases", "10"];
    let a = snapcache(&args);
    assert_eq!(a.status.code(), Some(0), "{}", stdout(&a));
    let text = stdout(&a);
    let oracle_lines = text.lines().filter(|l| l.starts_with("oracle case")).count();
    assert_eq!(oracle_lines, 10);
    let b = snapcache(&args);
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn bench_emits_one_csv_row_per_grid_point() {
    let dir = tempfile::tempdir().unwrap();
    let out = snapcache(&[
        "bench",
        "--out",
        dir.path().to_str().unwrap(),
        "--sweep.prompt_lengths",
        "64,96,128",
        "--sweep.batch_sizes",
        "1,2",
        "--sweep.gen_len",
        "4",
        "--model.d_model",
        "32",
        "--model.head_dim",
        "16",
        "--model.layers",
        "2",
        "--model.mlp_hidden",
        "64",
        "--compression.max_capacity_prompt",
        "96",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("bench.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "mode,prompt_len,batch,median_ms_per_token,p90_ms_per_token,cache_bytes,oom"
    );
    // |prompt_lengths| * |batch_sizes| * |modes|
    assert_eq!(lines.count(), 3 * 2 * 2);
    assert!(!dir.path().join("bench_prefill.csv").exists());
}

#[test]
fn bench_include_prefill_writes_the_side_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = snapcache(&[
        "bench",
        "--out",
        dir.path().to_str().unwrap(),
        "--include-prefill",
        "--sweep.prompt_lengths",
        "64",
        "--sweep.gen_len",
        "4",
        "--model.d_model",
        "32",
        "--model.head_dim",
        "16",
        "--model.layers",
        "1",
        "--model.mlp_hidden",
        "64",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("bench_prefill.csv")).unwrap();
    assert!(csv.starts_with("mode,prompt_len,batch,prefill_ms\n"));
    assert_eq!(csv.lines().count(), 1 + 2);
}

#[test]
fn bench_rejects_multithreaded_env() {
    let out = Command::new(env!("CARGO_BIN_EXE_snapcache"))
        .args(["bench", "--sweep.prompt_lengths", "64", "--sweep.gen_len", "4"])
        .env("SNAPCACHE_THREADS", "4")
        .output()
        .expect("binary runs");
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn hitrate_with_full_planted_mass_reports_perfect_recovery() {
    let dir = tempfile::tempdir().unwrap();
    let out = snapcache(&[
        "hitrate",
        "--out",
        dir.path().to_str().unwrap(),
        "--hitrate.planted_mass",
        "1.0",
        "--hitrate.seeds",
        "10",
        "--model.d_model",
        "32",
        "--model.head_dim",
        "16",
        "--model.layers",
        "1",
        "--model.mlp_hidden",
        "64",
        "--hitrate.prompt_len",
        "96",
        "--hitrate.gen_len",
        "8",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let recovery = std::fs::read_to_string(dir.path().join("recovery.csv")).unwrap();
    assert!(recovery.lines().nth(1).unwrap().ends_with("1.000000"), "{recovery}");
    let overlap = std::fs::read_to_string(dir.path().join("overlap.csv")).unwrap();
    assert!(overlap.starts_with("layer,head,window_index,overlap\n"));
}

#[test]
fn demo_prints_lossless_marker_when_prompt_fits() {
    let out = snapcache(&[
        "demo",
        "--demo.prompt_len",
        "64",
        "--demo.gen_len",
        "2",
        "--compression.max_capacity_prompt",
        "128",
        "--model.d_model",
        "32",
        "--model.head_dim",
        "16",
        "--model.layers",
        "1",
        "--model.mlp_hidden",
        "64",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert!(text.contains("lossless"), "{text}");
    assert!(text.contains("kept 64/64"), "{text}");
}

#[test]
fn demo_metadata_only_reports_the_exact_ratio() {
    let out = snapcache(&[
        "demo",
        "--demo.metadata_only",
        "true",
        "--demo.prompt_len",
        "389120",
        "--compression.max_capacity_prompt",
        "1024",
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).contains("compression_ratio=380"), "{}", stdout(&out));
}
