//! End-to-end runs of the `dfsim` binary.

use std::path::PathBuf;
use std::process::{Command, Output};

fn dfsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dfsim")).args(args).output().expect("binary runs")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("dfsim-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn compile_then_simulate_program_file() {
    let prog = scratch("prog.json");
    let trace = scratch("trace.txt");
    let p = prog.to_str().unwrap();
    let o = dfsim(&["compile", "--layer", "2x9x9/k3/f2/s2/transposed", "--dataflow", "ecoflow", "--out", p]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&prog).unwrap();
    assert!(text.contains("\"format\":\"dfsim-program/1\""));

    let o = dfsim(&["simulate", "--program", p, "--trace", trace.to_str().unwrap(), "--format", "json"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = dataflow_sim::harness::Report::from_json(&stdout(&o)).unwrap();
    assert_eq!(report.layers[0].results[0].gated_macs, 0);
    let lines = std::fs::read_to_string(&trace).unwrap();
    assert!(lines.lines().next().unwrap().starts_with("0 PASS 0 begin"));
}

#[test]
fn compare_csv_has_one_row_per_dataflow() {
    let o = dfsim(&["compare", "--layer", "2x8x8/k3/f2/s1/dilated", "--format", "csv"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    let rows: Vec<&str> = out.lines().collect();
    assert_eq!(rows.len(), 4);
    assert!(rows[0].starts_with("version,variant,layer"));
    assert!(rows[3].contains(",matmul,"));
}

#[test]
fn sweep_and_report_round_trip() {
    let saved = scratch("sweep.json");
    let o = dfsim(&[
        "sweep", "--layer", "1x9x9/k3/f1/s2/transposed", "--param", "noc.gon_bits", "--values", "16,64",
        "--dataflows", "ecoflow", "--baseline", "ecoflow", "--format", "json", "--out", saved.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = dfsim(&["report", "--from", saved.to_str().unwrap(), "--format", "table"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("[noc.gon_bits=64]"));
}

#[test]
fn config_layers_are_addressable_and_errors_exit_nonzero() {
    let cfg = scratch("cfg.toml");
    std::fs::write(
        &cfg,
        "[array]\nrows = 10\n\n[[layers]]\nname = \"mine\"\nconv_type = \"direct\"\nchannels = 1\nin_h = 6\nin_w = 6\nk = 3\nnum_filters = 1\nstride = 1\n",
    )
    .unwrap();
    let c = cfg.to_str().unwrap();
    let o = dfsim(&["--config", c, "compare", "--layer", "mine", "--dataflows", "rs", "--baseline", "rs"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    std::fs::write(&cfg, "[array]\nrows = 0\n").unwrap();
    let o = dfsim(&["--config", c, "validate"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("array.rows"));

    let o = dfsim(&["compare", "--layer", "no-such-layer"]);
    assert_eq!(o.status.code(), Some(2));
}
