use abcmix_cli::artifact::{ParticleTable, PARTICLES_FILE, SUMMARY_FILE, TELEMETRY_FILE};
use abcmix_cli::ingest::{parse_data, read_data, write_data};
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn abcmix(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_abcmix"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "stderr:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("run.toml");
    fs::write(&path, body).unwrap();
    path.display().to_string()
}

const SMALL_RUN: &str = r#"
preset = "example-3.1-two-component"
n_particles = 100
n_init = 500
max_iterations = 4
grid_size = 128
"#;

#[test]
fn galaxy_file_keeps_errors() {
    let raw = read_data(Path::new(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/../core/data/galaxy.csv"
    )))
    .unwrap();
    assert_eq!(raw.values.len(), 82);
    let data = raw.into_dataset(512).unwrap();
    assert_eq!(data.measurement_errors().map(<[f64]>::len), Some(82));
}

#[test]
fn forty_value_file_has_no_errors() {
    let text: String = std::iter::once("value".to_string())
        .chain((0..40).map(|i| format!("{}", i as f64 * 0.5 - 10.0)))
        .collect::<Vec<_>>()
        .join("\n");
    let raw = parse_data(&text, "forty").unwrap();
    assert_eq!(raw.values.len(), 40);
    assert!(raw.errors.is_none());
}

#[test]
fn write_then_ingest_round_trips_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.csv");
    let values = vec![0.1 + 0.2, -1e-300, 12345.678901234567, std::f64::consts::PI];
    let errors = vec![0.0, 1.0 / 3.0, 2.5e-8, 7.0];
    write_data(&path, &values, Some(&errors)).unwrap();
    let raw = read_data(&path).unwrap();
    assert_eq!(raw.values, values);
    assert_eq!(raw.errors, Some(errors));
}

#[test]
fn empty_file_fails_ingest_and_fit() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("empty.csv");
    fs::write(&data, "").unwrap();
    let out = abcmix(&[
        "fit",
        "--data",
        data.to_str().unwrap(),
        "--seed",
        "1",
        "--out",
        dir.path().join("run").to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("empty"));
}

#[test]
fn fit_writes_artifacts_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL_RUN);
    let run = |name: &str| {
        let out_dir = dir.path().join(name);
        let out = abcmix(&[
            "fit",
            "--config",
            &config,
            "--seed",
            "11",
            "--quiet",
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        ok(&out);
        out_dir
    };
    let a = run("a");
    let b = run("b");
    let particles = fs::read(a.join(PARTICLES_FILE)).unwrap();
    assert_eq!(particles, fs::read(b.join(PARTICLES_FILE)).unwrap());

    let header = String::from_utf8(particles).unwrap();
    assert!(header
        .starts_with("weight_1,weight_2,mean_1,mean_2,var_1,var_2,importance_weight,distance\n"));
    let table = ParticleTable::read(&a.join(PARTICLES_FILE)).unwrap();
    assert_eq!(table.params.len(), 100);

    let telemetry = fs::read_to_string(a.join(TELEMETRY_FILE)).unwrap();
    assert!(telemetry.starts_with("iteration,tolerance,acceptance_rate,ess,chosen_relabel_key"));
    assert_eq!(telemetry.lines().count(), 5);

    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(a.join(SUMMARY_FILE)).unwrap()).unwrap();
    assert_eq!(summary["seed"], 11);
    assert_eq!(summary["n_particles"], 100);
    for name in ["weight_1", "weight_2", "mean_1", "mean_2"] {
        assert!(
            a.join("marginals").join(format!("{name}.csv")).exists(),
            "{name}"
        );
    }
    assert!(!a.join("marginals").join("var_1.csv").exists());
}

#[test]
fn summarize_matches_particle_table() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL_RUN);
    let run_dir = dir.path().join("run");
    ok(&abcmix(&[
        "fit",
        "--config",
        &config,
        "--seed",
        "3",
        "--quiet",
        "--out",
        run_dir.to_str().unwrap(),
    ]));
    let out = abcmix(&["summarize", run_dir.to_str().unwrap()]);
    ok(&out);
    let text = String::from_utf8(out.stdout).unwrap();
    let table = ParticleTable::read(&run_dir.join(PARTICLES_FILE)).unwrap();
    for row in table.posterior() {
        if row.parameter.starts_with("var") {
            assert!(!text.contains(&row.parameter));
            continue;
        }
        let line = text
            .lines()
            .find(|l| l.starts_with(&row.parameter))
            .unwrap_or_else(|| panic!("{} missing from\n{text}", row.parameter));
        let fields: Vec<f64> = line
            .split_whitespace()
            .skip(1)
            .map(|x| x.parse().unwrap())
            .collect();
        assert!((fields[0] - row.mean).abs() < 1e-4 && (fields[1] - row.sd).abs() < 1e-4);
    }
}

#[test]
fn summarize_rejects_empty_directory() {
    let dir = tempfile::tempdir().unwrap();
    let out = abcmix(&["summarize", dir.path().to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("summary.json"));
}

#[test]
fn missing_seed_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = abcmix(&[
        "fit",
        "--preset",
        "example-3.1-two-component",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("seed"));
}

#[test]
fn engine_abort_writes_diagnostic_and_fails() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        &format!("{SMALL_RUN}\nmax_attempts_per_particle = 1\nquantile = 0.01\n"),
    );
    let run_dir = dir.path().join("run");
    let out = abcmix(&[
        "fit",
        "--config",
        &config,
        "--seed",
        "2",
        "--quiet",
        "--out",
        run_dir.to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    let diagnostic = fs::read_to_string(run_dir.join("error.json")).unwrap();
    assert!(diagnostic.contains("attempts"), "{diagnostic}");
}

#[test]
fn marin_fit_writes_loglik_matrix() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "preset = \"example-3.2-marin\"\nn_particles = 50\nn_init = 200\nmax_iterations = 1\ngrid_size = 64\n",
    );
    let run_dir = dir.path().join("run");
    ok(&abcmix(&[
        "fit",
        "--config",
        &config,
        "--seed",
        "1",
        "--quiet",
        "--loglik-grid",
        "--out",
        run_dir.to_str().unwrap(),
    ]));
    let text = fs::read_to_string(run_dir.join("loglik_grid.csv")).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows.len(), 202);
    assert!(rows.iter().all(|r| r.split(',').count() == 202));
}

#[test]
fn loglik_subcommand_finds_two_modes() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ll.csv");
    ok(&abcmix(&[
        "loglik-grid",
        "--preset",
        "example-3.2-marin",
        "--points",
        "61",
        "--range",
        "-2,4",
        "--out",
        path.to_str().unwrap(),
    ]));
    let text = fs::read_to_string(&path).unwrap();
    let mut rows = text.lines();
    let axis: Vec<f64> = rows
        .next()
        .unwrap()
        .split(',')
        .skip(1)
        .map(|x| x.parse().unwrap())
        .collect();
    let grid: Vec<Vec<f64>> = rows
        .map(|r| r.split(',').skip(1).map(|x| x.parse().unwrap()).collect())
        .collect();
    let n = axis.len();
    let mut maxima = 0;
    for i in 1..n - 1 {
        for j in 1..n - 1 {
            let v = grid[i][j];
            if (i - 1..=i + 1).all(|a| (j - 1..=j + 1).all(|b| (a, b) == (i, j) || grid[a][b] < v))
            {
                maxima += 1;
            }
        }
    }
    assert_eq!(maxima, 2);
}

#[test]
fn simulate_writes_requested_draws() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sim.csv");
    ok(&abcmix(&[
        "simulate",
        "--weights",
        "0.5,0.5",
        "--means",
        "-20,20",
        "--variances",
        "1,1",
        "-n",
        "40",
        "--seed",
        "5",
        "--out",
        path.to_str().unwrap(),
    ]));
    let raw = read_data(&path).unwrap();
    assert_eq!(raw.values.len(), 40);
    assert!(raw.values.iter().all(|v| v.abs() > 10.0 && v.abs() < 30.0));

    let preset = dir.path().join("galaxy.csv");
    ok(&abcmix(&[
        "simulate",
        "--preset",
        "galaxy",
        "--seed",
        "0",
        "--out",
        preset.to_str().unwrap(),
    ]));
    assert_eq!(
        read_data(&preset).unwrap().errors.map(|e| e.len()),
        Some(82)
    );
}
