use std::path::Path;

use mlo_core::harness::{run_experiment, ScenarioConfig};
use mlo_core::policy::PolicyKind;

fn load(name: &str) -> ScenarioConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(format!("{name}.toml"));
    ScenarioConfig::from_toml(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn shipped_configs_match_presets() {
    assert_eq!(load("u1"), ScenarioConfig::u1());
    assert_eq!(load("u2"), ScenarioConfig::u2());
    assert_eq!(load("desk"), ScenarioConfig::desk());
}

#[test]
fn desk_preset_is_overloaded() {
    let mut cfg = ScenarioConfig::desk().with_policy(PolicyKind::Slci);
    cfg.seeds = vec![2];
    cfg.eval_episodes = 1;
    let slci = run_experiment(&cfg).unwrap();
    let mcaa = run_experiment(&cfg.clone().with_policy(PolicyKind::Mcaa)).unwrap();
    assert!(slci.tdr_median > 0.05, "desk preset drops too little: {}", slci.tdr_median);
    assert!(mcaa.tdr_median < slci.tdr_median);
}

#[test]
fn default_radio_has_headroom() {
    let mut cfg = ScenarioConfig::u1().with_policy(PolicyKind::Mcaa);
    cfg.seeds = vec![1];
    cfg.eval_episodes = 1;
    cfg.horizon_s = 60.0;
    assert!(run_experiment(&cfg).unwrap().tdr_median < 0.01);
}
