//! Harness behavior end to end: shipped configs, sweep shape, CSV round trip.

use std::path::PathBuf;

use macsim_core::harness::{
    check_ordering, emit_plot_data, sweep_interarrival, write_metrics_csv, ExperimentConfig, HarnessError,
    ProtocolKind, Table, CSV_HEADER,
};

fn configs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn short(mut cfg: ExperimentConfig) -> ExperimentConfig {
    cfg.sim.duration_s = 20.0;
    cfg.traffic.start_s = 2.0;
    cfg.topology.rows = 3;
    cfg.topology.cols = 3;
    cfg
}

#[test]
fn every_shipped_config_loads_and_names_its_protocol() {
    let mut seen = Vec::new();
    for entry in std::fs::read_dir(configs_dir()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let cfg = ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            cfg.validate().unwrap();
            seen.push(cfg.kind());
        }
    }
    for kind in ProtocolKind::ALL {
        assert!(seen.contains(&kind), "no shipped config for {kind}");
    }
}

#[test]
fn full_grid_sweep_has_one_row_per_protocol_value_and_seed() {
    let values = [1.0, 2.0, 5.0, 10.0, 20.0];
    let seeds = [1, 2, 3, 4, 5];
    let mut rows = Vec::new();
    for kind in ProtocolKind::ALL {
        rows.extend(sweep_interarrival(&short(ExperimentConfig::default_for(kind)), &values, &seeds).unwrap());
    }
    assert_eq!(rows.len(), 7 * 5 * 5);
    for (i, row) in rows.iter().enumerate() {
        assert_eq!(row.protocol, ProtocolKind::ALL[i / 25].name());
        assert_eq!(row.interarrival_s, values[(i / 5) % 5]);
        assert_eq!(row.seed, seeds[i % 5]);
    }
}

#[test]
fn csv_output_is_reproducible_and_readable() {
    let cfg = short(ExperimentConfig::default_for(ProtocolKind::Xmac));
    let render = || {
        let rows = sweep_interarrival(&cfg, &[2.0, 10.0], &[7, 8]).unwrap();
        let mut buf = Vec::new();
        write_metrics_csv(&rows, &mut buf).unwrap();
        String::from_utf8(buf).unwrap()
    };
    let first = render();
    assert_eq!(first, render());
    assert_eq!(first.lines().next().unwrap(), CSV_HEADER.join(","));
    let table = Table::read(first.as_bytes()).unwrap();
    assert_eq!(table.rows.len(), 4);
    let points = emit_plot_data(&table, "interarrival_s", "avg_node_energy_mj", "protocol").unwrap();
    assert_eq!(points.len(), 2);
    assert!(points.iter().all(|p| p.n == 2 && p.min <= p.median && p.median <= p.max));
}

#[test]
fn ordering_check_reads_back_a_sweep() {
    let mut rows = Vec::new();
    for kind in [ProtocolKind::Dmac, ProtocolKind::Smac] {
        rows.extend(sweep_interarrival(&short(ExperimentConfig::default_for(kind)), &[5.0], &[1, 2, 3]).unwrap());
    }
    let mut buf = Vec::new();
    write_metrics_csv(&rows, &mut buf).unwrap();
    let table = Table::read(buf.as_slice()).unwrap();
    let report = check_ordering(&table, &["dmac", "smac"]).unwrap();
    assert_eq!(report.checks.len(), 1);
    assert!(matches!(
        check_ordering(&table, &["dmac", "xmac"]),
        Err(HarnessError::MissingData(_))
    ));
}

#[test]
fn readme_config_example_parses() {
    let readme = std::fs::read_to_string(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../README.md")).unwrap();
    let section = &readme[readme.find("## Configuration").unwrap()..];
    let start = section.find("```toml\n").unwrap() + "```toml\n".len();
    let body = &section[start..start + section[start..].find("```").unwrap()];
    let cfg = ExperimentConfig::from_toml_str(body).unwrap();
    cfg.validate().unwrap();
    assert_eq!(cfg.kind(), ProtocolKind::Tmac);
}
