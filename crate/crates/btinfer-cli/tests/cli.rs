//! End-to-end behavior of the `btinfer` binary: artifact layout,
//! deterministic replay, and machine-parsable failures.

use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_btinfer"))
}

fn small_heat_config(dir: &Path, out: &Path) -> std::path::PathBuf {
    let path = dir.join("config.toml");
    let text = format!(
        r#"
[benchmark]
name = "heat_small"
source = "generated_heat"
d = 24
output_fraction = 0.6666666666666666
target_abscissa = -0.1

[schedule]
kind = "equispaced"
h = 0.2
n = 40

[noise]
sigma = [0.008]

[prior]
kind = "spin_up_identity"

[ranks]
values = [1, 2, 3, 4, 6, 8, 12, 24]

[methods]
enabled = ["bt-q", "bt-h", "olr", "olru", "full"]

[seeds]
truth_seed = 5
noise_seed = 6

[output]
dir = "{}"
"#,
        out.display()
    );
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn gen_heat_writes_expected_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("heat");
    let status = bin()
        .args(["gen-heat", "--d", "40", "--out"])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    for name in ["A.mtx", "B.mtx", "C.mtx", "manifest.toml"] {
        assert!(out.join(name).exists(), "{name} missing");
    }
    let a = btinfer::mm::read_matrix(&out.join("A.mtx")).unwrap();
    assert_eq!(a.nrows(), 40);
}

#[test]
fn experiment_replay_is_bit_identical_across_runs_and_threads() {
    let dir = tempfile::tempdir().unwrap();
    let out1 = dir.path().join("run1");
    let out2 = dir.path().join("run2");
    let out3 = dir.path().join("run3");
    let config = small_heat_config(dir.path(), &out1);

    let run = |out: &Path, threads: &str| {
        let status = bin()
            .args(["experiment", "--config"])
            .arg(&config)
            .args(["--out"])
            .arg(out)
            .args(["--threads", threads])
            .status()
            .unwrap();
        assert!(status.success());
    };
    run(&out1, "2");
    run(&out2, "2");
    run(&out3, "1");

    for name in ["results.csv", "spectra.csv"] {
        let a = std::fs::read(out1.join(name)).unwrap();
        let b = std::fs::read(out2.join(name)).unwrap();
        let c = std::fs::read(out3.join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
        assert_eq!(a, c, "{name} differs across thread counts");
    }
    assert!(out1.join("manifest.toml").exists());
    assert!(out1.join("plot.py").exists());
}

#[test]
fn experiment_results_satisfy_reporting_invariants() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let config = small_heat_config(dir.path(), &out);
    let status = bin()
        .args(["experiment", "--config"])
        .arg(&config)
        .status()
        .unwrap();
    assert!(status.success());

    let results = std::fs::read_to_string(out.join("results.csv")).unwrap();
    let mut olru: std::collections::HashMap<usize, f64> = Default::default();
    let mut btq: std::collections::HashMap<usize, f64> = Default::default();
    let mut full_max: f64 = 0.0;
    for line in results.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        let r: usize = fields[0].parse().unwrap();
        let mean: f64 = fields[2].parse().unwrap();
        assert!(mean.is_finite() && mean >= 0.0);
        match fields[1] {
            "olru" => {
                olru.insert(r, fields[3].parse().unwrap());
            }
            "bt-q" => {
                btq.insert(r, fields[3].parse().unwrap());
                let abscissa: f64 = fields[4].parse().unwrap();
                assert!(abscissa < 0.0, "reduced dynamics unstable at r = {r}");
            }
            "full" => {
                full_max = full_max.max(mean).max(fields[3].parse::<f64>().unwrap());
            }
            _ => {}
        }
    }
    // Self-comparison rows are exact; the reduced-model covariance never
    // beats the optimal update.
    assert!(full_max <= 1e-8);
    for (r, q) in &btq {
        let o = olru[r];
        assert!(*q >= o - 1e-8, "r={r}: bt-q {q} below olru {o}");
    }

    // The reported optimal-update distances equal the closed form.
    let sys = btinfer::bench::gen_heat(24, 2.0 / 3.0, -0.1)
        .unwrap()
        .with_noise_cov(nalgebra::DMatrix::from_element(1, 1, 0.008f64.powi(2)))
        .unwrap();
    let prior =
        btinfer::prior::spin_up_prior(sys.a(), &nalgebra::DMatrix::identity(24, 24), None)
            .unwrap();
    let sched = btinfer::inference::sample_schedule(
        btinfer::inference::ScheduleKind::Equispaced,
        0.2,
        40,
        0,
    )
    .unwrap();
    let h = btinfer::inference::fisher_information(&sys, &sched).unwrap();
    let pencil = btinfer::optimal::spantini_eigenpairs(&h, &prior).unwrap();
    for (r, reported) in &olru {
        let closed = btinfer::optimal::olru_optimal_distance(&pencil, *r);
        assert!(
            (reported - closed).abs() <= 1e-7 * closed + 1e-13,
            "r={r}: reported {reported:.6e} vs closed {closed:.6e}"
        );
    }

    // Normalized spectra start at one.
    let spectra = std::fs::read_to_string(out.join("spectra.csv")).unwrap();
    let first = spectra.lines().nth(1).unwrap();
    let fields: Vec<&str> = first.split(',').collect();
    assert_eq!(fields[0], "1");
    assert_eq!(fields[1].parse::<f64>().unwrap(), 1.0);
    assert_eq!(fields[2].parse::<f64>().unwrap(), 1.0);
}

#[test]
fn infer_on_empty_measurements_reports_category() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let config = small_heat_config(dir.path(), &out);
    let csv = dir.path().join("empty.csv");
    std::fs::write(&csv, "time,y_1\n").unwrap();
    let output = bin()
        .args(["infer", "--config"])
        .arg(&config)
        .args(["--measurements"])
        .arg(&csv)
        .args(["--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(
        stderr.starts_with("empty-measurements:"),
        "stderr was: {stderr}"
    );
}

#[test]
fn infer_round_trip_recovers_posterior() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let config = small_heat_config(dir.path(), &out);

    // Simulate measurements with the library, write the CSV, then infer.
    let sys = btinfer::bench::gen_heat(24, 2.0 / 3.0, -0.1)
        .unwrap()
        .with_noise_cov(nalgebra::DMatrix::from_element(1, 1, 0.008f64.powi(2)))
        .unwrap();
    let prior =
        btinfer::prior::spin_up_prior(sys.a(), &nalgebra::DMatrix::identity(24, 24), None)
            .unwrap();
    let sched = btinfer::inference::sample_schedule(
        btinfer::inference::ScheduleKind::Equispaced,
        0.2,
        40,
        0,
    )
    .unwrap();
    let x0 = prior.sample(5);
    let mset = btinfer::inference::simulate_measurements(
        &sys,
        &sched,
        &x0,
        btinfer::inference::NoiseSetting::Seeded(6),
    )
    .unwrap();
    let csv = dir.path().join("m.csv");
    mset.write_csv(&csv).unwrap();
    let expected = btinfer::inference::full_posterior(&prior, &sys, &mset).unwrap();

    let status = bin()
        .args(["infer", "--config"])
        .arg(&config)
        .args(["--measurements"])
        .arg(&csv)
        .status()
        .unwrap();
    assert!(status.success());
    let mean = btinfer::mm::read_matrix(&out.join("posterior_mean.mtx")).unwrap();
    let cov = btinfer::mm::read_matrix(&out.join("posterior_cov.mtx")).unwrap();
    let mean = nalgebra::DVector::from_fn(mean.nrows(), |i, _| mean[(i, 0)]);
    assert!((&mean - &expected.mean).norm() <= 1e-9 * expected.mean.norm());
    assert!((&cov - &expected.cov).norm() <= 1e-9 * expected.cov.norm());
}

#[test]
fn reduce_and_gramian_and_make_prior_write_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let config = small_heat_config(dir.path(), &out);

    let status = bin()
        .args(["reduce", "--method", "bt-q", "--rank", "4", "--config"])
        .arg(&config)
        .args(["--out"])
        .arg(out.join("red"))
        .status()
        .unwrap();
    assert!(status.success());
    for name in ["t_r.mtx", "s_r.mtx", "a_r.mtx", "c_r.mtx", "hankel.mtx", "manifest"] {
        assert!(out.join("red").join(name).exists(), "{name} missing");
    }

    let status = bin()
        .args(["gramian", "--config"])
        .arg(&config)
        .args(["--out"])
        .arg(out.join("gram"))
        .status()
        .unwrap();
    assert!(status.success());
    for name in ["p_inf.mtx", "q_m.mtx", "h.mtx", "manifest.toml"] {
        assert!(out.join("gram").join(name).exists(), "{name} missing");
    }

    let status = bin()
        .args(["make-prior", "--config"])
        .arg(&config)
        .args(["--out"])
        .arg(out.join("prior"))
        .status()
        .unwrap();
    assert!(status.success());
    for name in ["gamma_pr.mtx", "prior_factor.mtx", "manifest.toml"] {
        assert!(out.join("prior").join(name).exists(), "{name} missing");
    }
}

#[test]
fn usage_errors_exit_two() {
    let output = bin().arg("no-such-subcommand").output().unwrap();
    assert_eq!(output.status.code(), Some(2));
    let output = bin().args(["experiment", "--bogus-flag"]).output().unwrap();
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let config = small_heat_config(dir.path(), &out);
    let mut text = std::fs::read_to_string(&config).unwrap();
    text.push_str("\n[mystery]\nkey = 1\n");
    std::fs::write(&config, text).unwrap();
    let output = bin()
        .args(["experiment", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.starts_with("config:"), "stderr was: {stderr}");
}
