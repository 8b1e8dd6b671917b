// SPDX-License-Identifier: Apache-2.0

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use axmul_core::metrics::{heatmap, ErrorMetrics};
use axmul_core::netlist::simulate_exhaustive;
use axmul_core::seeds::{gen_bam, BamConfig};

fn axmul(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_axmul"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = axmul(args, cwd);
    assert!(
        out.status.success(),
        "axmul {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn field(report: &str, key: &str) -> String {
    report
        .lines()
        .find_map(|l| l.strip_prefix(key).map(|v| v.trim().to_string()))
        .unwrap_or_else(|| panic!("no `{key}` in {report}"))
}

#[test]
fn characterize_matches_library_and_oracles() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(&["seed-gen", "--kind", "exact", "--out", "exact.gl"], d);
    let r = ok(&["characterize", "exact.gl", "--out", "maps/exact"], d);
    assert_eq!((field(&r, "wce"), field(&r, "mae"), field(&r, "ep")), ("0".into(), "0".into(), "0".into()));
    assert!(d.join("maps/exact.obfx").is_file() && d.join("maps/exact.pgm").is_file());

    ok(&["seed-gen", "--v", "5", "--h", "3", "--out", "bam.gl"], d);
    let r = ok(&["characterize", "bam.gl"], d);
    let lib = ErrorMetrics::from_table(&simulate_exhaustive(&gen_bam(8, BamConfig::new(5, 3)).unwrap()));
    assert_eq!(field(&r, "wce"), lib.wce.to_string());
    assert_eq!(field(&r, "mae"), lib.mae.to_string());
    assert_eq!(field(&r, "ep"), lib.ep.to_string());

    // dropping every row leaves the constant-0 circuit
    ok(&["seed-gen", "--h", "8", "--format", "v", "--out", "zero.v"], d);
    let r = ok(&["characterize", "zero.v"], d);
    let mut sum = 0u64;
    for i in 0..256u64 {
        for j in 0..256u64 {
            sum += i * j;
        }
    }
    assert_eq!(field(&r, "mae"), (sum as f64 / 65536.0).to_string());
    assert_eq!(field(&r, "mae"), "16256.25");

    ok(&["import", "zero.v", "--out", "zero.gl"], d);
    ok(&["render", "zero.gl", "--out", "zero.pgm", "--fraction", "0.1"], d);
    let pgm = fs::read(d.join("zero.pgm")).unwrap();
    let pixels = &pgm[pgm.len() - 65536..];
    // masked cells plus the observed zero-error cells of row 0 and column 0
    let gray = pixels.iter().filter(|&&p| p == 128).count();
    assert!((65536 - 6553..=65536 - 6553 + 511).contains(&gray), "{gray}");
    let map = heatmap(&simulate_exhaustive(&gen_bam(8, BamConfig::new(0, 8)).unwrap()));
    assert_eq!(map.max_abs(), 65025);
}

#[test]
fn exit_codes_follow_categories() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(d.join("bad.gl"), "this is not a netlist\n").unwrap();
    assert_eq!(axmul(&["characterize", "bad.gl"], d).status.code(), Some(2));
    assert_eq!(axmul(&["characterize", "missing.gl"], d).status.code(), Some(4));
    ok(&["seed-gen", "--out", "exact.gl"], d);
    let neg = axmul(&["obfuscate", "exact.gl", "--tau=-1", "--gmax", "5", "--out", "run"], d);
    assert_eq!(neg.status.code(), Some(3));
    assert_eq!(axmul(&["obfuscate", "exact.gl", "--metrics", "area", "--out", "run"], d).status.code(), Some(2));
    assert_eq!(axmul(&["seed-gen", "--v", "40", "--out", "x.gl"], d).status.code(), Some(3));
    fs::write(d.join("c.cfg"), "seed = exact\nbogus\n").unwrap();
    assert_eq!(axmul(&["campaign", "c.cfg"], d).status.code(), Some(2));
    assert_eq!(axmul(&["no-such-command"], d).status.code(), Some(2));
}

#[test]
fn obfuscate_writes_run_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(&["seed-gen", "--v", "6", "--h", "2", "--out", "s.gl"], d);
    let out = ok(&["obfuscate", "s.gl", "--tau", "0.05", "--gmax", "300", "--rng-seed", "4", "--out", "run"], d);
    assert!(out.contains("steps"), "{out}");
    for f in ["trajectory.jsonl", "beta.gl", "summary.json", "ssim.csv", "done"] {
        assert!(d.join("run").join(f).is_file(), "missing {f}");
    }
    ok(&["characterize", "run/beta.gl"], d);
}

#[test]
fn campaign_resumes() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(d.join("c.cfg"), "output = out\ntaus = 0.02\nruns = 2\ngmax = 100\nseed = bam 4 1\n").unwrap();
    let first = ok(&["campaign", "c.cfg"], d);
    assert!(first.contains("2 runs: 2 executed, 0 already complete"), "{first}");
    let runs = fs::read(d.join("out/runs.csv")).unwrap();
    let second = ok(&["campaign", "c.cfg"], d);
    assert!(second.contains("2 runs: 0 executed, 2 already complete"), "{second}");
    assert_eq!(fs::read(d.join("out/runs.csv")).unwrap(), runs);
}

fn report_files(work: &Path) -> Vec<(String, Vec<u8>)> {
    [
        "dataset/summary.csv",
        "dataset/baseline.json",
        "dataset/swapped.json",
        "models/calibration.csv",
        "models/baseline_forest.txt",
        "reports/detection.csv",
        "reports/detection.txt",
        "reports/sweep.csv",
        "reports/sweep.txt",
        "tensors/baseline/test.obft",
        "tensors/swapped/test.index.csv",
    ]
    .iter()
    .map(|f| (f.to_string(), fs::read(work.join(f)).unwrap_or_else(|_| panic!("missing {f}"))))
    .collect()
}

#[test]
fn end_to_end_smoke_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(
        d.join("smoke.cfg"),
        "output = camp\nrng_seed = 5\ntaus = 0.01, 0.02, 0.05\nruns = 5\ngmax = 500\n\
         seed = bam 4 1\nseed = bam 6 2\nseed = bam 8 3\n",
    )
    .unwrap();
    let out = ok(&["campaign", "smoke.cfg"], d);
    assert!(out.contains("45 runs: 45 executed"), "{out}");
    assert!(out.contains("uniqueness bam"), "{out}");
    let trajectories = fs::read_to_string(d.join("camp/runs.csv")).unwrap().lines().count() - 1;
    assert_eq!(trajectories, 3 * 3 * 5);

    for work in ["w1", "w2"] {
        let stage = |cmd: &str, extra: &[&str]| {
            let mut args = vec![cmd, "--campaign", "camp", "--work", work, "--rng-seed", "9"];
            args.extend_from_slice(extra);
            ok(&args, d)
        };
        let ds = stage("dataset", &["--negatives-per", "2", "--fractions", "0.34,0.33,0.33"]);
        assert!(ds.contains(&format!("baseline {} samples, swapped {} samples", 45 * 3, 45 * 12)), "{ds}");
        stage("train", &["--trees", "10"]);
        let table = stage("eval", &[]);
        assert!(table.contains("forest"), "{table}");
        stage("sweep", &[]);
        stage("export-tensors", &[]);
    }
    assert_eq!(report_files(&d.join("w1")), report_files(&d.join("w2")));

    let csv = fs::read_to_string(d.join("w1/reports/detection.csv")).unwrap();
    for row in csv.lines().skip(1) {
        let f: Vec<&str> = row.split(',').collect();
        let n: Vec<f64> = f[4..8].iter().map(|v| v.parse().unwrap()).collect();
        let acc: f64 = f[8].parse().unwrap();
        assert!((acc - (n[0] + n[2]) / (n[0] + n[1] + n[2] + n[3])).abs() < 1e-6, "{row}");
    }

    // an external model's predictions are scored against the tensor index
    let index = d.join("w1/tensors/baseline/test.index.csv");
    let mut preds = String::from("idx,score,label\n");
    for line in fs::read_to_string(&index).unwrap().lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        preds.push_str(&format!("{},{},{}\n", f[0], if f[1] == "1" { 0.9 } else { 0.1 }, f[1]));
    }
    fs::write(d.join("preds.csv"), preds).unwrap();
    let r = ok(
        &["eval", "--campaign", "camp", "--work", "w1", "--predictions", "preds.csv", "--index", index.to_str().unwrap()],
        d,
    );
    assert!(r.contains("acc 100.00%"), "{r}");
}
