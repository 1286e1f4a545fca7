//! Command-line front end over the `dataflow_sim` library.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dataflow_sim::harness::{
    cmd_compare, cmd_report, cmd_simulate, cmd_sweep, cmd_validate, emit_report, find_layer, find_network, load_config,
    CompareOptions, Config, Format, Report, ValidateOptions,
};
use dataflow_sim::{compile, CompiledLayer, Dataflow, Error, Result};

#[derive(Parser)]
#[command(name = "dfsim", version, about = "Dataflow compiler and PE-array simulator")]
struct Cli {
    /// TOML configuration file; built-in defaults when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output format for reports.
    #[arg(long, global = true, default_value = "table")]
    format: Format,
    /// Write the report (or program) here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed of the random operand tensors.
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct LayerArg {
    /// Config layer name, corpus name (`resnet50-conv3/transposed`) or
    /// inline spec `CxHxW/kK/fF/sS/type[/bB]`.
    #[arg(long)]
    layer: String,
}

#[derive(Args)]
struct DataflowSet {
    /// Dataflows to run, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = Dataflow::ALL.to_vec())]
    dataflows: Vec<Dataflow>,
    /// Dataflow that speedups and energy ratios are relative to.
    #[arg(long, default_value_t = Dataflow::Matmul)]
    baseline: Dataflow,
}

#[derive(Subcommand)]
enum Cmd {
    /// Compile a layer into a program file.
    Compile {
        #[command(flatten)]
        layer: LayerArg,
        #[arg(long, default_value_t = Dataflow::EcoFlow)]
        dataflow: Dataflow,
    },
    /// Run a program file, or compile and run a layer.
    Simulate {
        #[arg(long, conflicts_with_all = ["layer", "dataflow"])]
        program: Option<PathBuf>,
        #[arg(long, required_unless_present = "program")]
        layer: Option<String>,
        #[arg(long)]
        dataflow: Option<Dataflow>,
        /// Write a per-cycle trace to this file.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Run several dataflows on one layer and normalize to a baseline.
    Compare {
        #[command(flatten)]
        layer: LayerArg,
        #[command(flatten)]
        set: DataflowSet,
    },
    /// Compare one layer across values of a config parameter.
    Sweep {
        #[command(flatten)]
        layer: LayerArg,
        /// Parameter as `section.key`, e.g. `noc.gon_bits`.
        #[arg(long)]
        param: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[command(flatten)]
        set: DataflowSet,
    },
    /// Run the acceptance criteria; exits nonzero when any fails.
    Validate {
        /// Random geometries for the equivalence checks.
        #[arg(long, default_value_t = ValidateOptions::default().random_layers)]
        random_layers: usize,
    },
    /// Per-layer and end-to-end network report, or re-render a saved one.
    Report {
        #[arg(long, conflicts_with_all = ["network", "layer"])]
        from: Option<PathBuf>,
        /// Shipped network name; repeatable.
        #[arg(long)]
        network: Vec<String>,
        /// Extra layer; repeatable.
        #[arg(long)]
        layer: Vec<String>,
        #[command(flatten)]
        set: DataflowSet,
    },
}

fn options(set: &DataflowSet, seed: u64) -> CompareOptions {
    CompareOptions {
        dataflows: set.dataflows.clone(),
        baseline: set.baseline,
        seed,
    }
}

fn run(cli: Cli) -> Result<bool> {
    let config = match &cli.config {
        Some(p) => load_config(p)?,
        None => Config::default(),
    };
    let out = cli.out.as_deref();
    let report: Report = match cli.cmd {
        Cmd::Compile { layer, dataflow } => {
            let l = find_layer(&layer.layer, &config)?;
            let c = compile(&l, dataflow, &config.array)?;
            match out {
                Some(p) => c.save(p)?,
                None => println!("{}", c.to_json()?),
            }
            eprintln!(
                "{} on {}: {} passes, {} MACs, {} zero MACs",
                dataflow.name(),
                l.label(),
                c.passes.len(),
                c.stats.total_macs,
                c.stats.structural_zero_macs
            );
            return Ok(true);
        }
        Cmd::Simulate { program, layer, dataflow, trace } => {
            let compiled = match program {
                Some(p) => CompiledLayer::load(&p)?,
                None => {
                    let l = find_layer(layer.as_deref().expect("clap requires a layer"), &config)?;
                    compile(&l, dataflow.unwrap_or(Dataflow::EcoFlow), &config.array)?
                }
            };
            match trace {
                Some(p) => {
                    let f = File::create(&p).map_err(|e| Error::Io(format!("{}: {e}", p.display())))?;
                    let mut w = BufWriter::new(f);
                    let r = cmd_simulate(&compiled, cli.seed, &config, Some(&mut w as &mut dyn Write))?;
                    w.flush()?;
                    r
                }
                None => cmd_simulate(&compiled, cli.seed, &config, None)?,
            }
        }
        Cmd::Compare { layer, set } => cmd_compare(&find_layer(&layer.layer, &config)?, &options(&set, cli.seed), &config)?,
        Cmd::Sweep { layer, param, values, set } => {
            cmd_sweep(&find_layer(&layer.layer, &config)?, &param, &values, &options(&set, cli.seed), &config)?
        }
        Cmd::Validate { random_layers } => {
            let opts = ValidateOptions {
                random_layers,
                seed: ValidateOptions::default().seed,
                inject_mismatch: false,
            };
            let outcomes = cmd_validate(&config, &opts);
            for o in &outcomes {
                println!("{}", o.line());
            }
            return Ok(outcomes.iter().all(|o| o.passed));
        }
        Cmd::Report { from, network, layer, set } => match from {
            Some(p) => Report::from_json(&std::fs::read_to_string(&p).map_err(|e| Error::Io(format!("{}: {e}", p.display())))?)?,
            None => {
                let layers = layer.iter().map(|l| find_layer(l, &config)).collect::<Result<Vec<_>>>()?;
                let nets = network.iter().map(|n| find_network(n)).collect::<Result<Vec<_>>>()?;
                if layers.is_empty() && nets.is_empty() {
                    return Err(Error::Config("report needs --network, --layer or --from".into()));
                }
                cmd_report(&layers, &nets, &options(&set, cli.seed), &config)?
            }
        },
    };
    emit_report(&report, cli.format, out)?;
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("dfsim: {e}");
            ExitCode::from(2)
        }
    }
}
