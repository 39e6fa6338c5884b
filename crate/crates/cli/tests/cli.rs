use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TOY: &str = r#"
name = "toy"
method = "SBFL_LEO"
rounds = 3
seed = 5

[constellation]
orbits = 4
sats_per_orbit = 4

[training]
epochs = 3
batch_size = 16

[protocol]
clusters = 2

[dataset]
source = "synthetic"
classes = 4
dim = 5
per_class = 40
spread = 0.5
seed = 5

[attack]
kind = "sign_flip"
malicious_fraction = 0.2
active_rounds = "2-3"
seed = 5
"#;

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sbfl-leo"))
        .args(args)
        .output()
        .unwrap()
}

fn text(o: &Output) -> String {
    format!(
        "{}{}",
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    )
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn run_writes_artifacts_and_the_chain_verifies() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "toy.toml", TOY);
    let out = tmp.path().join("out");
    let o = cli(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", text(&o));
    assert_eq!(text(&o).lines().filter(|l| l.starts_with("round")).count(), 3);
    for f in [
        "metrics.csv",
        "metrics.json",
        "config.toml",
        "manifest.json",
        "chain/index.json",
    ] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let csv = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);

    let chain = out.join("chain");
    let o = cli(&["verify-chain", "--dump", chain.to_str().unwrap()]);
    assert!(o.status.success(), "{}", text(&o));
    assert!(text(&o).starts_with("ok:"));

    let block = chain.join("blocks/model/000001.bin");
    let mut bytes = fs::read(&block).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x10;
    fs::write(&block, &bytes).unwrap();
    let o = cli(&["verify-chain", "--dump", chain.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(text(&o).contains("verification failed"));
}

#[test]
fn overrides_apply() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "toy.toml", TOY);
    let out = tmp.path().join("fedavg");
    let o = cli(&[
        "run",
        "--config",
        &cfg,
        "--out",
        out.to_str().unwrap(),
        "--method",
        "FEDAVG",
        "--rounds",
        "2",
        "--seed",
        "9",
        "--sequential",
    ]);
    assert!(o.status.success(), "{}", text(&o));
    assert!(text(&o).contains("toy FEDAVG seed 9"));
    assert!(!out.join("chain").exists());
    let written = fs::read_to_string(out.join("config.toml")).unwrap();
    assert!(written.contains("rounds = 2"));
}

#[test]
fn sweep_and_compare() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "toy.toml", TOY);
    let sparse = TOY.replace(
        "seed = 5\n\n[attack]",
        "seed = 5\nsamples_per_satellite = 4\n\n[attack]",
    );
    let small = write_config(tmp.path(), "sweep.toml", &sparse);
    let out = tmp.path().join("sweep");
    let o = cli(&[
        "sweep",
        "--config",
        &small,
        "--satellites",
        "16,24",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", text(&o));
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);

    let other = write_config(tmp.path(), "efl.toml", &TOY.replace("\"SBFL_LEO\"", "\"EFL\""));
    let out = tmp.path().join("cmp");
    let o = cli(&[
        "compare",
        "--configs",
        &format!("{cfg},{other}"),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", text(&o));
    assert!(text(&o).contains("EFL"));
    let csv = fs::read_to_string(out.join("compare.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn bad_config_is_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "bad.toml", &format!("bogus = 1\n{TOY}"));
    let o = cli(&["run", "--config", &cfg, "--out", tmp.path().join("x").to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(text(&o).starts_with("error:"));
}
