//! End-to-end tests of the `eim` binary: artifact layout, output formats,
//! and bit-for-bit reproducibility of every command.

use std::path::Path;
use std::process::{Command, Output};

fn eim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_eim"))
        .args(args)
        .output()
        .expect("spawning the eim binary")
}

fn run_ok(args: &[&str]) -> String {
    let out = eim(args);
    assert!(
        out.status.success(),
        "command {args:?} failed:\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).expect("utf-8 stdout")
}

fn tiny_train(dir: &Path, seed: &str) -> String {
    run_ok(&[
        "train",
        "--model",
        "snis",
        "--k",
        "16",
        "--target",
        "nine_gaussians",
        "--steps",
        "12",
        "--eval-interval",
        "6",
        "--eval-samples",
        "32",
        "--eval-points",
        "16",
        "--lr",
        "1e-2",
        "--batch-size",
        "16",
        "--seed",
        seed,
        "--out",
        dir.to_str().unwrap(),
        "--execution",
        "sequential",
    ])
}

/// metrics.csv with the wall-clock column blanked out.
fn metrics_without_seconds(dir: &Path) -> String {
    let text = std::fs::read_to_string(dir.join("metrics.csv")).unwrap();
    text.lines()
        .map(|line| line.rsplit_once(',').map(|(rest, _)| rest.to_string()).unwrap())
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn train_writes_config_metrics_and_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let stdout = tiny_train(&run, "5");
    assert!(stdout.contains("\"kind\": \"snis\""), "resolved config echoed:\n{stdout}");
    assert!(stdout.contains("final eval_bound="), "{stdout}");
    for artifact in ["config.json", "metrics.csv", "model.ckpt"] {
        assert!(run.join(artifact).exists(), "missing {artifact}");
    }
    let metrics = std::fs::read_to_string(run.join("metrics.csv")).unwrap();
    let mut lines = metrics.lines();
    assert_eq!(lines.next(), Some("step,objective,eval_bound,eval_se,grad_norm,seconds"));
    assert_eq!(lines.count(), 12, "one row per step");
}

#[test]
fn repeated_runs_reproduce_all_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    tiny_train(&a, "7");
    tiny_train(&b, "7");
    assert_eq!(
        metrics_without_seconds(&a),
        metrics_without_seconds(&b),
        "metrics must be bit-identical apart from wall-clock"
    );
    let (ca, cb) =
        (std::fs::read(a.join("model.ckpt")).unwrap(), std::fs::read(b.join("model.ckpt")).unwrap());
    assert_eq!(ca, cb, "checkpoints must be byte-identical");
}

#[test]
fn different_seeds_change_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    tiny_train(&a, "7");
    tiny_train(&b, "8");
    assert_ne!(metrics_without_seconds(&a), metrics_without_seconds(&b));
}

#[test]
fn eval_is_deterministic_and_matches_train_final_eval() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let train_stdout = tiny_train(&run, "9");
    let config = run.join("config.json");
    let args =
        ["eval", "--config", config.to_str().unwrap(), "--execution", "sequential"];
    let first = run_ok(&args);
    let second = run_ok(&args);
    assert_eq!(first, second, "eval must reproduce byte-for-byte");
    let value = first.lines().nth(1).unwrap().split(',').next().unwrap();
    assert!(
        train_stdout.contains(&format!("final eval_bound={value}")),
        "eval ({value}) must agree with training's final evaluation:\n{train_stdout}"
    );
}

#[test]
fn sample_emits_the_requested_rows_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    tiny_train(&run, "10");
    let config = run.join("config.json");
    let args = ["sample", "--config", config.to_str().unwrap(), "--n", "50"];
    let first = run_ok(&args);
    assert_eq!(first, run_ok(&args));
    let mut lines = first.lines();
    assert_eq!(lines.next(), Some("x,y"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 50);
    for row in rows {
        let parts: Vec<&str> = row.split(',').collect();
        assert_eq!(parts.len(), 2);
        for p in parts {
            p.parse::<f64>().expect("numeric sample coordinate");
        }
    }
}

#[test]
fn grid_writes_target_and_model_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    tiny_train(&run, "11");
    let out = dir.path().join("grid");
    let config = run.join("config.json");
    let args = [
        "grid",
        "--config",
        config.to_str().unwrap(),
        "--resolution",
        "12",
        "--samples",
        "3000",
        "--bounds",
        "-2,2,-2,2",
        "--out",
        out.to_str().unwrap(),
    ];
    run_ok(&args);
    for stem in ["target", "model"] {
        let bytes = std::fs::read(out.join(format!("{stem}.pgm"))).unwrap();
        let header = "P5\n12 12\n255\n";
        assert!(bytes.starts_with(header.as_bytes()), "PGM header for {stem}");
        assert_eq!(bytes.len(), header.len() + 144, "pixel payload size for {stem}");
        assert!(bytes[header.len()..].contains(&255u8), "max cell maps to white");
        let csv = std::fs::read_to_string(out.join(format!("{stem}.csv"))).unwrap();
        assert_eq!(csv.lines().count(), 12);
        assert!(csv.lines().all(|l| l.split(',').count() == 12));
    }
    let counts: u64 = std::fs::read_to_string(out.join("model.csv"))
        .unwrap()
        .lines()
        .flat_map(|l| l.split(',').map(|c| c.parse::<u64>().unwrap()))
        .sum();
    assert!(counts <= 3000, "cannot bin more points than drawn");
    assert!(counts > 2000, "most unit-Gaussian mass lies inside [-2,2]^2: {counts}");

    // identical seeds rebin identically
    let first = std::fs::read_to_string(out.join("model.csv")).unwrap();
    run_ok(&args);
    assert_eq!(first, std::fs::read_to_string(out.join("model.csv")).unwrap());
}

#[test]
fn grid_resolution_two_pins_headers_and_checkerboard_values() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("g");
    run_ok(&[
        "grid",
        "--target",
        "checkerboard",
        "--resolution",
        "2",
        "--bounds",
        "0,1,0,1",
        "--out",
        out.to_str().unwrap(),
    ]);
    // every cell center of the 2x2 grid lands on a dark square of density 2
    let pgm = std::fs::read(out.join("target.pgm")).unwrap();
    assert_eq!(pgm, b"P5\n2 2\n255\n\xff\xff\xff\xff");
    let csv = std::fs::read_to_string(out.join("target.csv")).unwrap();
    assert_eq!(csv, "2.0,2.0\n2.0,2.0\n");
}

#[test]
fn grid_finds_nine_density_peaks() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("g");
    run_ok(&[
        "grid",
        "--target",
        "nine_gaussians",
        "--resolution",
        "65",
        "--bounds",
        "-1.625,1.625,-1.625,1.625",
        "--out",
        out.to_str().unwrap(),
    ]);
    let grid: Vec<Vec<f64>> = std::fs::read_to_string(out.join("target.csv"))
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(|c| c.parse().unwrap()).collect())
        .collect();
    let res = 65;
    let mut peaks = Vec::new();
    for r in 1..res - 1 {
        for c in 1..res - 1 {
            let v = grid[r][c];
            if v > grid[r - 1][c] && v > grid[r + 1][c] && v > grid[r][c - 1] && v > grid[r][c + 1]
            {
                peaks.push((r, c));
            }
        }
    }
    // cell centers sit at -1.6 + 0.05 i, so the modes {-1,0,1}^2 are exactly
    // the cells with index 12, 32, 52 on each axis
    assert_eq!(peaks.len(), 9, "{peaks:?}");
    for (r, c) in peaks {
        assert!([12, 32, 52].contains(&r) && [12, 32, 52].contains(&c), "peak at ({r},{c})");
    }
}

#[test]
fn grid_histogram_of_an_untrained_model_is_standard_normal() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    // zero training steps keep the energy identically zero, so the model
    // samples exactly from its unit-Gaussian proposal
    run_ok(&[
        "train", "--model", "snis", "--k", "16", "--steps", "0", "--eval-samples", "8",
        "--eval-points", "8", "--seed", "3", "--out", run.to_str().unwrap(),
        "--execution", "sequential",
    ]);
    let out = dir.path().join("g");
    let n = 60_000u64;
    run_ok(&[
        "grid",
        "--config",
        run.join("config.json").to_str().unwrap(),
        "--resolution",
        "4",
        "--bounds",
        "-1,1,-1,1",
        "--samples",
        "60000",
        "--seed",
        "5",
        "--out",
        out.to_str().unwrap(),
    ]);
    let counts: Vec<u64> = std::fs::read_to_string(out.join("model.csv"))
        .unwrap()
        .lines()
        .flat_map(|l| l.split(',').map(|c| c.parse().unwrap()).collect::<Vec<u64>>())
        .collect();
    assert_eq!(counts.len(), 16);

    // standard normal probability of [a, b] by Simpson's rule
    let phi_interval = |a: f64, b: f64| {
        let m = 400;
        let h = (b - a) / m as f64;
        let pdf = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let mut s = pdf(a) + pdf(b);
        for i in 1..m {
            s += pdf(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    };
    let edge = |i: usize| -1.0 + 0.5 * i as f64;
    let q: Vec<f64> = (0..4).map(|i| phi_interval(edge(i), edge(i + 1))).collect();

    // Pearson statistic over the 16 cells plus the out-of-window remainder
    let mut chi2 = 0.0;
    let mut inside = 0u64;
    for (idx, &c) in counts.iter().enumerate() {
        let expect = q[idx / 4] * q[idx % 4] * n as f64;
        chi2 += (c as f64 - expect).powi(2) / expect;
        inside += c;
    }
    let p_out = 1.0 - q.iter().sum::<f64>().powi(2);
    let expect_out = p_out * n as f64;
    chi2 += ((n - inside) as f64 - expect_out).powi(2) / expect_out;
    // 1% critical value for 16 degrees of freedom
    assert!(chi2 < 32.0, "chi-square {chi2:.1} rejects the proposal law");
}

#[test]
fn grid_rejects_ambiguous_sources_and_oversized_grids() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("g");
    let res = eim(&["grid", "--out", out.to_str().unwrap()]);
    assert!(!res.status.success(), "either --config or --target is required");
    let res = eim(&[
        "grid", "--target", "checkerboard", "--resolution", "4096",
        "--out", out.to_str().unwrap(),
    ]);
    assert!(!res.status.success(), "resolution cap enforced");
    let err = String::from_utf8_lossy(&res.stderr).to_string();
    assert!(err.contains("2048"), "{err}");
}

#[test]
fn bounds_reports_every_estimator_against_its_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let csv_path = dir.path().join("bounds.csv");
    let args = [
        "bounds",
        "--seed",
        "3",
        "--n-outer",
        "400",
        "--out",
        csv_path.to_str().unwrap(),
    ];
    run_ok(&args);
    let first = std::fs::read_to_string(&csv_path).unwrap();
    run_ok(&args);
    assert_eq!(first, std::fs::read_to_string(&csv_path).unwrap(), "bounds must reproduce");

    let mut lines = first.lines();
    assert_eq!(lines.next(), Some("bound,k,estimate,se,oracle,gap"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 16, "four bounds at four sample counts each");
    for name in ["iwae", "avvi_snis", "sivi", "infonce"] {
        assert_eq!(rows.iter().filter(|r| r[0] == name).count(), 4);
    }
    // estimates are lower bounds: gap = oracle - estimate stays above noise
    for row in &rows {
        let (est, se, oracle): (f64, f64, f64) =
            (row[2].parse().unwrap(), row[3].parse().unwrap(), row[4].parse().unwrap());
        assert!(est <= oracle + 3.0 * se, "{row:?}");
    }
    // the importance-weighted chain tightens: K = 512 lands close to exact
    let iwae_large: f64 = rows
        .iter()
        .find(|r| r[0] == "iwae" && r[1] == "512")
        .map(|r| r[5].parse().unwrap())
        .unwrap();
    assert!(iwae_large.abs() < 0.2, "K=512 gap {iwae_large}");
}

#[test]
fn aborted_training_reports_failure_but_keeps_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let out = eim(&[
        "train",
        "--model",
        "his",
        "--t",
        "3",
        "--steps",
        "10",
        "--lr",
        "1e12",
        "--batch-size",
        "8",
        "--eval-interval",
        "100",
        "--eval-samples",
        "8",
        "--eval-points",
        "8",
        "--seed",
        "1",
        "--out",
        run.to_str().unwrap(),
        "--execution",
        "sequential",
    ]);
    assert!(!out.status.success(), "divergent run must exit nonzero");
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("aborted"), "{stderr}");
    assert!(run.join("model.ckpt").exists(), "last good state still checkpointed");
    assert!(run.join("metrics.csv").exists());
}

fn parse_summary(root: &Path) -> Vec<(String, f64, f64, f64)> {
    let summary = std::fs::read_to_string(root.join("summary.csv")).unwrap();
    let mut lines = summary.lines();
    assert_eq!(lines.next(), Some("setting,eval_bound,eval_se,seconds"));
    lines
        .map(|l| {
            let p: Vec<&str> = l.split(',').collect();
            (p[0].to_string(), p[1].parse().unwrap(), p[2].parse().unwrap(), p[3].parse().unwrap())
        })
        .collect()
}

#[test]
fn sweep_single_setting_yields_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("sweep");
    let stdout = run_ok(&[
        "sweep", "--k-list", "8", "--steps", "8", "--batch-size", "8",
        "--eval-samples", "16", "--eval-points", "8", "--seed", "4",
        "--out", root.to_str().unwrap(), "--execution", "sequential",
    ]);
    assert!(stdout.contains("k8: eval_bound="), "{stdout}");
    let rows = parse_summary(&root);
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].0, "k8");
    for artifact in ["config.json", "metrics.csv", "model.ckpt"] {
        assert!(root.join("k8").join(artifact).exists());
    }
}

#[test]
fn sweep_wall_clock_grows_with_leapfrog_steps() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("sweep");
    run_ok(&[
        "sweep", "--t-list", "1,5,20", "--steps", "40", "--batch-size", "16",
        "--eval-samples", "8", "--eval-points", "8", "--seed", "4",
        "--out", root.to_str().unwrap(), "--execution", "sequential",
    ]);
    let rows = parse_summary(&root);
    let names: Vec<&str> = rows.iter().map(|r| r.0.as_str()).collect();
    assert_eq!(names, ["t1", "t5", "t20"]);
    assert!(
        rows[0].3 < rows[1].3 && rows[1].3 < rows[2].3,
        "leapfrog work should dominate run time: {:?}",
        rows.iter().map(|r| r.3).collect::<Vec<_>>()
    );
}

#[test]
fn sweep_bound_is_nondecreasing_in_k() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("sweep");
    run_ok(&[
        "sweep", "--k-list", "2,16,128", "--steps", "400", "--batch-size", "32",
        "--eval-samples", "300", "--eval-points", "64", "--seed", "0",
        "--out", root.to_str().unwrap(), "--execution", "sequential",
    ]);
    let rows = parse_summary(&root);
    assert_eq!(rows.len(), 3);
    for w in rows.windows(2) {
        let (lo, hi) = (&w[0], &w[1]);
        let se = (lo.2 * lo.2 + hi.2 * hi.2).sqrt();
        assert!(
            lo.1 <= hi.1 + 2.0 * se,
            "more importance samples should not hurt: {} {:.4} vs {} {:.4} (se {se:.4})",
            lo.0, lo.1, hi.0, hi.1
        );
    }
}

#[test]
fn sweep_requires_exactly_one_axis() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("sweep");
    let neither = eim(&["sweep", "--out", root.to_str().unwrap()]);
    assert!(!neither.status.success());
    let both = eim(&[
        "sweep", "--k-list", "4", "--t-list", "2", "--out", root.to_str().unwrap(),
    ]);
    assert!(!both.status.success());
    for bad in [neither, both] {
        let err = String::from_utf8_lossy(&bad.stderr).to_string();
        assert!(err.contains("exactly one of"), "{err}");
    }
}
