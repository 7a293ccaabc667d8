use std::process::Command;

fn mlo() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mlo"))
}

const SHORT: &str = "scenario = \"custom\"\nhorizon_s = 30.0\neval_episodes = 1\nseeds = [1, 2]\n\
                     [network]\nnum_aps = 2\n[network.stations_per_ap]\nmin = 5\nmax = 6\n";

#[test]
fn run_then_compare_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("short.toml");
    std::fs::write(&cfg, SHORT).unwrap();
    for policy in ["slci", "mcaa"] {
        let out = mlo()
            .args(["run", "--config", cfg.to_str().unwrap(), "--policy", policy, "--out"])
            .arg(dir.path())
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let text = String::from_utf8(out.stdout).unwrap();
        assert!(text.contains(&format!("policy      {policy}")), "{text}");
        assert!(dir.path().join(format!("{policy}_report.json")).exists());
        assert!(dir.path().join(format!("{policy}_seed2_ep0_decisions.csv")).exists());
    }
    let out = mlo()
        .arg("compare")
        .arg("--reports")
        .arg(dir.path().join("slci_report.json"))
        .arg(dir.path().join("mcaa_report.json"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = String::from_utf8(out.stdout).unwrap();
    assert!(table.contains("slci") && table.contains("mcaa"), "{table}");
}

#[test]
fn single_seed_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("short.toml");
    std::fs::write(&cfg, SHORT).unwrap();
    let out = mlo()
        .args(["run", "--config", cfg.to_str().unwrap(), "--policy", "slci", "--seed", "9", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("seed 9"));
    assert!(!text.contains("seed 1 "));
}

#[test]
fn curves_smooths_a_training_log() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("train.csv");
    std::fs::write(&log, "step,reward,d_avg\n1,1.0,0.0\n2,0.0,0.5\n3,-1.0,1.0\n").unwrap();
    let out = mlo().args(["curves", "--window", "2", "--log"]).arg(&log).output().unwrap();
    assert!(out.status.success());
    assert_eq!(String::from_utf8(out.stdout).unwrap(), "step,reward,tdr\n1,1,0\n2,0.5,0.25\n3,-0.5,0.75\n");
}

#[test]
fn bad_config_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "seeds = []\n").unwrap();
    let out = mlo().args(["run", "--config", cfg.to_str().unwrap()]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("seed"));
}
