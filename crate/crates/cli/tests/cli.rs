use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
equation = "pendulum"
architecture = "koopman"
seeds = [0]
[data]
n_trajectories = 10
[data.ode]
h = 0.01
t_final = 0.5
n_store = 5
[model]
koopman_hidden = 8
koopman_encoding = 4
[train]
epochs = 2
batch_size = 4
"#;

fn oplab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_oplab")).args(args).output().unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("exp.toml");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn generate_train_report_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out = dir.path().join("out");
    let out_s = out.to_str().unwrap();

    let o = oplab(&["generate", "--config", &cfg, "--out", out_s]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let data = out.join("data/pendulum/koopman/0.opds");
    let first = fs::read(&data).unwrap();
    assert!(oplab(&["generate", "--config", &cfg, "--out", out_s]).status.success());
    assert_eq!(fs::read(&data).unwrap(), first);

    let o = oplab(&["train", "--config", &cfg, "--out", out_s, "--seed", "0"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("test_mse="));

    let o = oplab(&["report", "--out", out_s]);
    assert!(o.status.success());
    let md = String::from_utf8_lossy(&o.stdout);
    assert!(md.contains("| base | 1 |"), "{md}");
    assert!(out.join("report/rows.csv").exists());
}

#[test]
fn sweep_emits_a_table_per_axis() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out = dir.path().join("out");
    let o = oplab(&["sweep", "--config", &cfg, "--out", out.to_str().unwrap(), "--axis", "dropout", "--auto-generate"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8_lossy(&o.stdout);
    for rate in ["0", "0.05", "0.1", "0.15"] {
        assert!(text.contains(&format!("| dropout={rate} | 1 |")), "{text}");
    }
}

#[test]
fn exit_codes_separate_config_data_and_numeric_failures() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let out_s = out.to_str().unwrap();

    let bad = write_config(dir.path(), "equation = \"heat\"\n");
    let o = oplab(&["generate", "--config", &bad, "--out", out_s]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("equation"));

    let cfg = write_config(dir.path(), TINY);
    assert_eq!(oplab(&["train", "--config", &cfg, "--out", out_s]).status.code(), Some(3));
    assert_eq!(oplab(&["report", "--out", out_s]).status.code(), Some(3));
    assert_eq!(oplab(&["train", "--config", &cfg, "--precision", "16", "--out", out_s]).status.code(), Some(2));

    let blowup = format!("{TINY}base_lr = 1e30\nclip_norm = 1e30\n");
    let cfg = write_config(dir.path(), &blowup);
    let o = oplab(&["train", "--config", &cfg, "--out", out_s, "--precision", "32", "--auto-generate"]);
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn precision_flag_selects_single_precision_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out = dir.path().join("out");
    let o = oplab(&["generate", "--config", &cfg, "--out", out.to_str().unwrap(), "--precision", "32"]);
    assert!(o.status.success());
    let text = fs::read(out.join("data/pendulum/koopman/0.f32.opds")).unwrap();
    assert!(String::from_utf8_lossy(&text[..200]).contains("dtype = f32"));
}
