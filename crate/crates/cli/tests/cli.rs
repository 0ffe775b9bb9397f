//! Runs the built `macsim` binary against temporary configs and CSVs.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const HEADER: &str =
    "protocol,interarrival_s,seed,delivery_ratio,avg_node_energy_mj,total_energy_mj,avg_latency_ms,originated,delivered,dropped";

fn macsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_macsim"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, protocol: &str) -> String {
    let path = dir.join(name);
    fs::write(
        &path,
        format!(
            "[protocol]\nname = \"{protocol}\"\n\n[topology]\nrows = 3\ncols = 3\n\n\
             [traffic]\ninterarrival_s = 5.0\nstart_s = 1.0\n\n[sim]\nduration_s = 15.0\nseeds = [1, 2]\n"
        ),
    )
    .unwrap();
    path.to_str().unwrap().to_owned()
}

fn write_csv(dir: &Path, rows: &[(&str, f64)]) -> String {
    let mut text = format!("{HEADER}\n");
    for (seed, (proto, energy)) in rows.iter().enumerate() {
        text.push_str(&format!("{proto},10,{seed},1,{energy},{},0,0,0,0\n", energy * 25.0));
    }
    let path = dir.join("in.csv");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_owned()
}

#[test]
fn run_prints_one_row_per_seed() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "x.toml", "xmac");
    let out = macsim(&["run", &cfg]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], HEADER);
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("xmac,5,1,"));
}

#[test]
fn sweep_appends_configs_in_order_to_the_output_file() {
    let dir = TempDir::new().unwrap();
    let a = write_config(dir.path(), "a.toml", "smac");
    let b = write_config(dir.path(), "b.toml", "bmac+");
    let csv = dir.path().join("out.csv");
    let out = macsim(&[
        "sweep", &a, &b, "--values", "2,8", "--seeds", "2", "-o", csv.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(&csv).unwrap();
    let keys: Vec<String> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').take(3).collect::<Vec<_>>().join(","))
        .collect();
    assert_eq!(
        keys,
        ["smac,2,1", "smac,2,2", "smac,8,1", "smac,8,2", "bmac+,2,1", "bmac+,2,2", "bmac+,8,1", "bmac+,8,2"]
    );
}

#[test]
fn sweep_ta_rejects_other_protocols() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "s.toml", "smac");
    let out = macsim(&["sweep-ta", &cfg, "--values", "5,10"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn check_ordering_exit_code_follows_the_verdict() {
    let dir = TempDir::new().unwrap();
    let csv = write_csv(
        dir.path(),
        &[("dmac", 10.0), ("dmac", 11.0), ("dmac", 12.0), ("tmac", 30.0), ("tmac", 31.0), ("tmac", 32.0)],
    );
    let good = macsim(&["check-ordering", &csv, "--expect", "dmac,tmac"]);
    assert_eq!(good.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&good.stdout).contains("PASS"));
    let bad = macsim(&["check-ordering", &csv, "--expect", "tmac,dmac"]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stdout).contains("FAIL"));
}

#[test]
fn unknown_config_keys_are_errors() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, "[protocol]\nname = \"smac\"\n\n[sim]\nduraton_s = 10.0\n").unwrap();
    let out = macsim(&["run", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("duraton_s"));
}

#[test]
fn plot_data_summarizes_and_rejects_unknown_columns() {
    let dir = TempDir::new().unwrap();
    let csv = write_csv(dir.path(), &[("xmac", 3.0), ("xmac", 1.0), ("xmac", 2.0)]);
    let out = macsim(&[
        "plot-data", &csv, "--x", "interarrival_s", "--y", "avg_node_energy_mj", "--group", "protocol",
    ]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[1], "xmac,10,2,1,3,3");
    let bad = macsim(&["plot-data", &csv, "--x", "load", "--y", "avg_node_energy_mj", "--group", "protocol"]);
    assert_eq!(bad.status.code(), Some(2));
}
