use std::path::Path;
use std::process::{Command, Output};

fn spikebench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spikebench")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, noise: &str, estimators: &str, t_max: usize) -> String {
    let cfg = format!(
        r#"{{"version":1,"noise":{noise},"aspect":0.6,"m":200,"lambda_star_grid":[2.0,4.0],
"mismatch_rule":{{"rule":"matched"}},"estimators":{estimators},"trials":2,"base_seed":7,
"amp":{{"t_max":{t_max},"init_corr":0.2,"denoiser":"linear_assumed_model"}},"output_dir":"{}"}}"#,
        dir.join("out").display()
    );
    let p = dir.join("cfg.json");
    std::fs::write(&p, cfg).unwrap();
    p.to_string_lossy().into_owned()
}

const ALL: &str = r#"["bayes_theory","amp","se","optspec","gauspec"]"#;
const POISSON: &str = r#"{"kind":"rect_poisson","c":1.0}"#;

#[test]
fn single_run_subcommands_write_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), POISSON, ALL, 3);
    for (cmd, file, header, rows) in [
        ("theory", "theory.csv", "lambda_star,lambda,regime,m,q,mse,overlap", 2),
        ("amp", "amp.csv", "lambda_star,lambda,t,overlap_u,overlap_v,overlap,mse", 6),
        ("se", "se.csv", "lambda_star,lambda,t,overlap,mse,nu,mu", 6),
        ("spectral", "spectral.csv", "lambda_star,lambda,sigma1,bbp,j_optspec,j_gauspec,overlap,mse_optspec,mse_gauspec", 2),
    ] {
        let out = spikebench(&[cmd, "--config", &cfg]);
        assert!(out.status.success(), "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
        let text = std::fs::read_to_string(dir.path().join("out").join(file)).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], header);
        assert_eq!(lines.len(), rows + 1, "{cmd}");
    }
}

#[test]
fn theory_rows_name_the_regime() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"kind":"gaussian"}"#, ALL, 2);
    let out = spikebench(&["theory", "--config", &cfg]);
    assert!(out.status.success());
    let text = std::fs::read_to_string(dir.path().join("out/theory.csv")).unwrap();
    assert!(text.lines().nth(2).unwrap().contains("SpikeLowTemp"), "{text}");
}

#[test]
fn experiment_writes_outputs_and_honours_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), POISSON, ALL, 3);
    let other = dir.path().join("elsewhere");
    let out = spikebench(&["experiment", "--config", &cfg, "--out", other.to_str().unwrap(), "--seed", "11", "--format", "csv"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(other.join("results.csv")).unwrap();
    assert!(csv.starts_with("estimator,lambda_star,lambda,metric,value,stderr,n,m,trials,seed\n"));
    assert!(csv.lines().skip(1).all(|l| l.ends_with(",11")));
    assert!(other.join("metadata.json").exists());
    assert!(!other.join("results.svg").exists());

    let again = dir.path().join("again");
    let out = spikebench(&["experiment", "--config", &cfg, "--out", again.to_str().unwrap(), "--seed", "11", "--format", "csv"]);
    assert!(out.status.success());
    assert_eq!(std::fs::read(other.join("results.csv")).unwrap(), std::fs::read(again.join("results.csv")).unwrap());
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(spikebench(&["experiment"]).status.code(), Some(2));
    assert_eq!(spikebench(&["theory", "--bogus"]).status.code(), Some(2));
    assert_eq!(spikebench(&["theory", "--config", "/nonexistent/cfg.json"]).status.code(), Some(2));
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"version":1,"unexpected":true}"#).unwrap();
    assert_eq!(spikebench(&["experiment", "--config", bad.to_str().unwrap()]).status.code(), Some(2));
    let cfg = write_config(dir.path(), POISSON, "[]", 3);
    let out = spikebench(&["experiment", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no estimators"));
}

#[test]
fn numerical_failures_exit_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let law = r#"{"kind":"from_law","law":{"aspect":0.6,"law":{"kind":"atomic","atoms":[10000.0],"weights":[1.0]}}}"#;
    let cfg = write_config(dir.path(), law, r#"["se"]"#, 200);
    let out = spikebench(&["se", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn help_lists_subcommands() {
    let out = spikebench(&["--help"]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    for cmd in ["theory", "amp", "se", "spectral", "experiment", "fig1"] {
        assert!(text.contains(cmd), "{cmd}");
    }
}
