use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lagp::bench::{eval_gramacy2d, gramacy_grid, lhs, GRAMACY_DOMAIN};
use lagp::io::{read_predictions, read_numeric};
use lagp::DesignSet;
use tempfile::TempDir;

fn lagp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lagp"))
        .args(args)
        .env_remove("LAGP_THREADS")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn write_design(dir: &Path, d: &DesignSet) -> PathBuf {
    let mut s = String::from("x1,x2,y\n");
    for i in 0..d.len() {
        let x = d.x(i);
        s += &format!("{:e},{:e},{:e}\n", x[0], x[1], d.y(i));
    }
    let p = dir.join("design.csv");
    fs::write(&p, s).unwrap();
    p
}

fn write_grid(dir: &Path, name: &str, pts: &[f64]) -> PathBuf {
    let mut s = String::from("x1,x2\n");
    for x in pts.chunks(2) {
        s += &format!("{:e},{:e}\n", x[0], x[1]);
    }
    let p = dir.join(name);
    fs::write(&p, s).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn predictions(p: &Path) -> Vec<lagp::io::PredictionRow> {
    read_predictions(fs::File::open(p).unwrap(), p).unwrap()
}

#[test]
fn predict_interpolates_at_design_sites() {
    let dir = TempDir::new().unwrap();
    let d = gramacy_grid(21).unwrap();
    let design = write_design(dir.path(), &d);
    let sites: Vec<f64> = (0..d.len()).step_by(23).flat_map(|i| d.x(i).to_vec()).collect();
    let grid = write_grid(dir.path(), "grid.csv", &sites);
    let out = dir.path().join("pred.csv");
    ok(&lagp(&[
        "predict", "--design", s(&design), "--grid", s(&grid), "--method", "nn", "--nugget", "1e-10", "--stages", "1",
        "--out", s(&out),
    ]));
    let rows = predictions(&out);
    assert_eq!(rows.len(), sites.len() / 2);
    for (k, r) in rows.iter().enumerate() {
        let y = d.y(k * 23);
        assert!((r.mean - y).abs() <= 1e-6, "row {k}: {} vs {y}", r.mean);
        assert_eq!(r.coords, d.x(k * 23));
        assert_eq!(r.n_used, 50);
    }
}

#[test]
fn predict_is_identical_across_thread_counts() {
    let dir = TempDir::new().unwrap();
    let design = write_design(dir.path(), &gramacy_grid(41).unwrap());
    let grid = write_grid(dir.path(), "grid.csv", &lhs(200, &GRAMACY_DOMAIN, 3));
    let run = |threads: &str| {
        let out = dir.path().join(format!("pred{threads}.csv"));
        ok(&lagp(&[
            "predict", "--design", s(&design), "--grid", s(&grid), "--theta0", "0.7", "--threads", threads, "--out",
            s(&out),
        ]));
        fs::read(out).unwrap()
    };
    let one = run("1");
    assert_eq!(one, run("8"));
    assert_eq!(one, run("3"));
}

#[test]
fn threads_env_is_honoured() {
    let dir = TempDir::new().unwrap();
    let design = write_design(dir.path(), &gramacy_grid(21).unwrap());
    let grid = write_grid(dir.path(), "grid.csv", &lhs(20, &GRAMACY_DOMAIN, 5));
    let out = Command::new(env!("CARGO_BIN_EXE_lagp"))
        .args(["predict", "--design", s(&design), "--grid", s(&grid), "--stages", "1", "--method", "nn"])
        .env("LAGP_THREADS", "2")
        .output()
        .unwrap();
    ok(&out);
    assert!(String::from_utf8_lossy(&out.stderr).contains("2 workers"));
}

#[test]
fn second_stage_changes_lengthscales() {
    let dir = TempDir::new().unwrap();
    let design = write_design(dir.path(), &gramacy_grid(41).unwrap());
    let grid = write_grid(dir.path(), "grid.csv", &lhs(150, &GRAMACY_DOMAIN, 11));
    let run = |stages: &str| {
        let out = dir.path().join(format!("stages{stages}.csv"));
        ok(&lagp(&[
            "predict", "--design", s(&design), "--grid", s(&grid), "--theta0", "0.7", "--stages", stages, "--out",
            s(&out),
        ]));
        predictions(&out)
    };
    let (one, two) = (run("1"), run("2"));
    let differ = one
        .iter()
        .zip(&two)
        .filter(|(a, b)| (a.theta_hat - b.theta_hat).abs() > 1e-6 * a.theta_hat.abs())
        .count();
    assert!(differ * 10 >= one.len(), "{differ} of {} rows differ", one.len());
}

#[test]
fn alc_trace_starts_from_nearest_neighbours() {
    let dir = TempDir::new().unwrap();
    let d = gramacy_grid(41).unwrap();
    let design = write_design(dir.path(), &d);
    let x = [-0.513, 0.377];
    let out = dir.path().join("trace.csv");
    let args = [
        "design", "--design", s(&design), "--x=-0.513,0.377", "--method", "alc", "--theta0", "0.7", "--out", s(&out),
    ];
    ok(&lagp(&args));
    let first = fs::read(&out).unwrap();
    ok(&lagp(&args));
    assert_eq!(first, fs::read(&out).unwrap());

    let t = read_numeric(first.as_slice(), &out).unwrap();
    assert_eq!(t.header, ["step", "row_id", "x1", "x2", "criterion_value", "vx_after"]);
    assert_eq!(t.rows(), 50);
    let rows: Vec<usize> = t.values.chunks(6).map(|r| r[1] as usize).collect();
    let nn: Vec<usize> = d.nearest(&x, 6).unwrap().iter().map(|n| n.row).collect();
    assert_eq!(&rows[..6], &nn[..]);
    for (k, r) in t.values.chunks(6).enumerate() {
        assert_eq!(r[0] as usize, k + 1);
        assert_eq!(&r[2..4], d.x(rows[k]));
    }
}

#[test]
fn nn_trace_is_sorted_by_distance() {
    let dir = TempDir::new().unwrap();
    let d = gramacy_grid(31).unwrap();
    let design = write_design(dir.path(), &d);
    let out = lagp(&["design", "--design", s(&design), "--x", "0.21,-1.3", "--method", "nn", "--end", "40"]);
    ok(&out);
    let t = read_numeric(out.stdout.as_slice(), Path::new("stdout")).unwrap();
    assert_eq!(t.rows(), 40);
    let vals: Vec<f64> = t.values.chunks(6).map(|r| r[4]).collect();
    assert!(vals.windows(2).all(|w| w[0] <= w[1]));
    for r in t.values.chunks(6) {
        let d2 = (r[2] - 0.21).powi(2) + (r[3] + 1.3).powi(2);
        assert!((r[4] - d2).abs() <= 1e-12);
    }
}

#[test]
fn nnbig_uses_two_hundred_points() {
    let dir = TempDir::new().unwrap();
    let design = write_design(dir.path(), &gramacy_grid(31).unwrap());
    let out = lagp(&["design", "--design", s(&design), "--x", "0.2,0.1", "--method", "nnbig"]);
    ok(&out);
    assert_eq!(read_numeric(out.stdout.as_slice(), Path::new("stdout")).unwrap().rows(), 200);
}

#[test]
fn exit_codes() {
    let dir = TempDir::new().unwrap();
    let d = gramacy_grid(11).unwrap();
    let design = write_design(dir.path(), &d);
    let grid3 = dir.path().join("grid3.csv");
    fs::write(&grid3, "a,b,c\n0,0,0\n").unwrap();
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "x1,x2,y\n0,0,1\n0,zero,1\n").unwrap();

    let code = |args: &[&str]| lagp(args).status.code().unwrap();
    assert_eq!(code(&["predict", "--design", s(&design)]), 2);
    assert_eq!(code(&["design", "--design", s(&design), "--x", "0,0", "--method", "kriging"]), 2);
    assert_eq!(code(&["design", "--design", s(&design), "--x", "0,0", "--theta0", "-1"]), 2);
    assert_eq!(code(&["design", "--design", s(&design), "--x", "0,0", "--start", "60"]), 2);
    assert_eq!(code(&["design", "--design", "/nonexistent/d.csv", "--x", "0,0"]), 3);
    assert_eq!(code(&["design", "--design", s(&design), "--x", "0,0,0"]), 3);
    assert_eq!(code(&["predict", "--design", s(&design), "--grid", s(&grid3)]), 3);
    let out = lagp(&["design", "--design", s(&bad), "--x", "0,0"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains(":3:"), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn failure_threshold_exit_writes_predictions() {
    let dir = TempDir::new().unwrap();
    // Every row sits on the same site, so no local design beyond one point factors.
    let n = 60;
    let d = DesignSet::new(vec![0.5; 2 * n], (0..n).map(|i| i as f64).collect(), 2).unwrap();
    let design = write_design(dir.path(), &d);
    let grid = write_grid(dir.path(), "grid.csv", &[0.1, 0.2, 0.3, 0.4]);
    let out = dir.path().join("pred.csv");
    let res = lagp(&[
        "predict", "--design", s(&design), "--grid", s(&grid), "--nugget", "0", "--theta0", "1", "--stages", "1",
        "--out", s(&out),
    ]);
    assert_eq!(res.status.code(), Some(4), "{}", String::from_utf8_lossy(&res.stderr));
    let rows = predictions(&out);
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r.mean.is_nan() && r.status != "ok"));
}

#[test]
fn bench_reruns_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("metrics.csv");
    let args = [
        "bench", "--problem", "borehole", "--n-train", "300", "--n-pred", "40", "--reps", "2", "--seed", "4",
        "--methods", "nn,alc", "--no-timing", "--out", s(&out),
    ];
    ok(&lagp(&args));
    let first = fs::read(&out).unwrap();
    ok(&lagp(&args));
    assert_eq!(first, fs::read(&out).unwrap());

    let t = read_numeric_text(&first);
    assert_eq!(t[0], "problem,method,rep,rmse,sqrt_one_minus_nse,coverage95,mean_sd,seconds,failures");
    assert_eq!(t.len(), 1 + 2 * 2 + 2);
    assert!(t[1..].iter().all(|l| l.starts_with("borehole,")));
}

#[test]
fn bench_rejects_unknown_method() {
    let out = lagp(&["bench", "--problem", "borehole", "--methods", "alc,sparse"]);
    assert_eq!(out.status.code(), Some(2));
    let out = lagp(&["bench", "--problem", "branin"]);
    assert_eq!(out.status.code(), Some(2));
}

fn read_numeric_text(bytes: &[u8]) -> Vec<String> {
    String::from_utf8(bytes.to_vec()).unwrap().lines().map(str::to_string).collect()
}

#[test]
fn predictions_match_library_truth_scale() {
    // Sanity check that the binary's output is in the response's units.
    let dir = TempDir::new().unwrap();
    let design = write_design(dir.path(), &gramacy_grid(41).unwrap());
    let pts = lhs(30, &GRAMACY_DOMAIN, 21);
    let grid = write_grid(dir.path(), "grid.csv", &pts);
    let out = dir.path().join("pred.csv");
    ok(&lagp(&["predict", "--design", s(&design), "--grid", s(&grid), "--theta0", "0.7", "--out", s(&out)]));
    let rows = predictions(&out);
    let err = rows
        .iter()
        .zip(pts.chunks(2))
        .map(|(r, x)| (r.mean - eval_gramacy2d(x)).powi(2))
        .sum::<f64>()
        / rows.len() as f64;
    assert!(err.sqrt() < 0.01, "rmse {}", err.sqrt());
    assert!(rows.iter().all(|r| r.status == "ok" || r.status == "boundary"));
}
