use std::path::Path;
use std::process::Command;

const TINY: &str = "\
ris.rows = 2
ris.cols = 2
antennas = 1
slots = 4
envs.count = 2
dm.k = 8
dm.width = 16
dm.heads = 2
dm.layers = 1
dm.steps = 4
dm.batch = 4
dm.train_slots = 40
dt.width = 16
dt.heads = 2
dt.blocks = 1
dt.iters = 4
dt.batch = 4
dt.window = 2
dt.expert_episodes = 2
finetune.episodes = 2
finetune.steps = 5
ao.restarts = 1
nmse.slots = 6
eval.episodes = 3
rate.rho = 0, 0.5
ppo.rollout = 16
ppo.envs = 2
ppo.minibatch = 8
ppo.hidden = 8
ppo.total_steps = 32
";

const COMMANDS: [&str; 10] = [
    "gen-data",
    "train-dm",
    "eval-nmse",
    "collect-expert",
    "train-dt",
    "finetune",
    "rollout",
    "train-ppo",
    "eval-rate",
    "plot",
];

fn dedt(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_dedt"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn run_all(config: &Path, out: &Path) {
    for c in COMMANDS {
        let o = dedt(&[c, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", "11"]);
        assert!(o.status.success(), "{c} failed: {}", String::from_utf8_lossy(&o.stderr));
        assert!(out.join(format!("manifest-{c}.json")).exists());
    }
}

fn read(dir: &Path, rel: &str) -> Vec<u8> {
    std::fs::read(dir.join(rel)).unwrap_or_else(|e| panic!("{rel}: {e}"))
}

#[test]
fn every_command_reruns_bit_identically() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("tiny.conf");
    std::fs::write(&config, TINY).unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run_all(&config, &a);
    run_all(&config, &b);
    for rel in [
        "metrics/nmse.csv",
        "metrics/finetune.csv",
        "metrics/rollout.csv",
        "metrics/ppo.csv",
        "metrics/rate.csv",
        "plots/metrics.csv",
        "plots/nmse_vs_snr.svg",
        "plots/effective_rate_vs_rho.svg",
        "plots/convergence.svg",
        "data/train0.bin",
        "data/expert.bin",
        "data/rollout.bin",
        "models/dm.safetensors",
        "models/dt-finetuned.safetensors",
    ] {
        assert_eq!(read(&a, rel), read(&b, rel), "{rel} differs between reruns");
    }
    let header = String::from_utf8(read(&a, "metrics/rate.csv")).unwrap();
    assert!(header.starts_with("experiment,env,method,rho,snr_db,nmse,raw_rate,effective_rate,step,seed\n"));
    for m in ["DEDT", "PCDT", "RCDT", "AO", "RANDOM"] {
        assert!(header.contains(&format!(",{m},")), "rate metrics lack {m}");
    }
    let manifest: serde_json::Value = serde_json::from_slice(&read(&a, "manifest-eval-rate.json")).unwrap();
    assert_eq!(manifest["seed"], 11);
    assert!(manifest["config"].as_str().unwrap().contains("seed = 11"));
    assert_eq!(manifest["inputs"].as_array().unwrap().len(), 3);
}

#[test]
fn exit_codes() {
    assert_eq!(dedt(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(dedt(&["gen-data", "--override", "not.a.key=1"]).status.code(), Some(1));
    assert_eq!(dedt(&["gen-data", "--override", "seed"]).status.code(), Some(1));
    assert_eq!(dedt(&["--help"]).status.code(), Some(0));
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = dedt(&["train-dm", "--out", out]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("train0.bin"));
    let o = dedt(&["plot", "--out", out]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nothing to plot"));
}
