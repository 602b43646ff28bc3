use std::fs;
use std::process::Command;

use xlmimo::experiments::{self, read_csv, read_json, run_scenario, write_csv, MetricsTable, OutputFormat, ScenarioConfig};
use xlmimo::parallel::Parallelism;

const SMALL: &str = "experiment = mean-se\nL = 4\nM = 4\nK = 6\nmodes = centralized, distributed\n\
                     selections = lsf\nweightings = optimal, equal\ntau_p = 3\ntau_c = 12\n\
                     sweep = L_k: 1, 2\ntrials = 8\ndrops = 2\n";

fn run(text: &str, par: Parallelism) -> MetricsTable {
    run_scenario(&ScenarioConfig::parse(text).unwrap(), par).unwrap()
}

fn csv_bytes(t: &MetricsTable) -> Vec<u8> {
    let mut buf = Vec::new();
    write_csv(t, &mut buf).unwrap();
    buf
}

#[test]
fn output_is_identical_across_runs_and_parallelism() {
    let a = run(SMALL, Parallelism::Parallel);
    let b = run(SMALL, Parallelism::Parallel);
    let c = run(SMALL, Parallelism::Sequential);
    assert!(a.same_as(&b) && a.same_as(&c));
    assert_eq!(csv_bytes(&a), csv_bytes(&c));
}

#[test]
fn seed_changes_the_output() {
    let a = run(SMALL, Parallelism::Parallel);
    let b = run(&format!("{SMALL}seed = 99\n"), Parallelism::Parallel);
    assert!(!a.same_as(&b));
}

#[test]
fn standard_error_shrinks_with_trials() {
    let base = "experiment = mean-se\nL = 4\nM = 4\nK = 6\nmodes = centralized\nselections = lsf\n\
                tau_p = 3\ntau_c = 12\nsweep = L_k: 2\ndrops = 1\n";
    let se = |trials: usize| {
        let t = run(&format!("{base}trials = {trials}\n"), Parallelism::Parallel);
        t.get(2.0, "se_min/centralized/lsf").unwrap().stderr
    };
    let ratio = se(25) / se(400);
    assert!((2.5..=6.0).contains(&ratio), "stderr ratio {ratio} for 16x the trials");
}

#[test]
fn csv_and_json_files_round_trip() {
    let t = run(SMALL, Parallelism::Parallel);
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("out.csv");
    let json = dir.path().join("out.json");
    experiments::emit(&t, OutputFormat::Csv, Some(&csv)).unwrap();
    experiments::emit(&t, OutputFormat::Json, Some(&json)).unwrap();
    assert!(read_csv(fs::File::open(&csv).unwrap()).unwrap().same_as(&t));
    assert!(read_json(fs::File::open(&json).unwrap()).unwrap().same_as(&t));
}

#[test]
fn full_selection_mean_se_matches_reference_level() {
    // All 16 subarrays per UE, optimal weights, each pilot shared by two UEs.
    let t = run(
        "experiment = mean-se\nL = 16\nM = 16\nK = 16\ncorrelation = correlated\nmodes = distributed\n\
         selections = lsf\nweightings = optimal\ntau_p = 8\ntau_c = 16\npilot_assignment = balanced\n\
         sweep = L_k: 16\ntrials = 20\ndrops = 10\n",
        Parallelism::Parallel,
    );
    let se = t.get(16.0, "se_mean/distributed/lsf/optimal").unwrap().mean;
    assert!((se - 4.7).abs() <= 0.15 * 4.7, "mean SE {se}");
}

#[test]
fn complexity_scenario_counts_agree() {
    let t = run_scenario(&ScenarioConfig::preset("complexity").unwrap(), Parallelism::Sequential).unwrap();
    let formula: Vec<_> = t.rows.iter().filter(|r| r.metric.starts_with("mults_formula/")).collect();
    assert!(!formula.is_empty());
    for r in formula {
        let counted = r.metric.replace("mults_formula/", "mults_counted/");
        assert_eq!(t.get(r.sweep, &counted).unwrap().mean, r.mean, "{}", r.metric);
    }
}

fn cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_xlmimo")).args(args).output().unwrap()
}

#[test]
fn cli_exit_codes() {
    let out = cli(&["list-presets"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).lines().any(|l| l == "fig1a"));

    assert_eq!(cli(&[]).status.code(), Some(1));
    assert_eq!(cli(&["run", "--preset", "nope"]).status.code(), Some(1));
    assert_eq!(cli(&["run", "--preset", "complexity", "--format", "xml"]).status.code(), Some(1));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.cfg");
    fs::write(&bad, "experiment = mean-se\nL = 0\nsweep = L_k: 1\n").unwrap();
    assert_eq!(cli(&["validate", "--config", bad.to_str().unwrap()]).status.code(), Some(1));
    let missing = dir.path().join("missing.cfg");
    assert_ne!(cli(&["validate", "--config", missing.to_str().unwrap()]).status.code(), Some(0));

    let good = dir.path().join("good.cfg");
    fs::write(&good, SMALL).unwrap();
    assert!(cli(&["validate", "--config", good.to_str().unwrap()]).status.success());
    let out = cli(&["run", "--config", good.to_str().unwrap(), "--format", "json", "--threads", "1", "--trials", "2"]);
    assert!(out.status.success());
    let t = read_json(out.stdout.as_slice()).unwrap();
    assert!(t.get(2.0, "se_mean/centralized/lsf").is_some());
}
