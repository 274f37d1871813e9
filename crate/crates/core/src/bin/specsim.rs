//! Command-line front end.
//!
//! Output directory precedence for `run`: `--out`, then `$SPECSIM_OUT`, then
//! the experiment file's `[output] dir`, then `./specsim-out`.
//!
//! Config precedence for `security` and `sim`: the preset or TOML file named
//! by `--config`, then each `--set key=value` in order.
//!
//! Exit status: 0 on success, 1 when a secure scheme is distinguishable in a
//! security check, 2 on any error.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use specsim::config::PRESET_NAMES;
use specsim::experiment::{
    load_program, report, run_experiment, secret_variants, write_outputs, ReportKind, ResultTable,
    SecurityRow,
};
use specsim::observe::{write_jsonl, STATS_CSV_VERSION};
use specsim::timing::{timing_sweep, write_sweep_csv};
use specsim::{
    check_noninterference, collect_stats, gen_workload, simulate, CoreConfig, SchemeKind,
    WorkloadKind,
};

const OUT_ENV: &str = "SPECSIM_OUT";

#[derive(Parser)]
#[command(
    name = "specsim",
    version,
    about = "Out-of-order core model for comparing secure speculation schemes"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run an experiment file and write CSV results.
    Run {
        spec: PathBuf,
        /// Output directory (overrides $SPECSIM_OUT and the file's setting).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also print the text reports.
        #[arg(long)]
        print: bool,
    },
    /// Non-interference check of a program over secret variants.
    Security {
        /// Assembly file, or `spectre-v1` for the built-in gadget.
        program: String,
        /// Scheme token; repeat for several. Defaults to all four.
        #[arg(long = "scheme")]
        schemes: Vec<SchemeKind>,
        /// Preset name or TOML file; repeat for several. Defaults to all presets.
        #[arg(long = "config")]
        configs: Vec<String>,
        /// Config overrides as TOML `key=value`, applied after `--config`.
        #[arg(long = "set")]
        sets: Vec<String>,
        #[arg(long, default_value_t = 8)]
        variants: usize,
    },
    /// Logic cost of each scheme over widths 1..=N, as CSV.
    TimingSweep {
        #[arg(long, default_value_t = 8)]
        max_width: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print a generated workload as assembly.
    Gen {
        kind: WorkloadKind,
        #[arg(long, default_value_t = 5000)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate one program and print its statistics row.
    Sim {
        /// Assembly file, or `spectre-v1`.
        program: String,
        #[arg(long, default_value = "baseline")]
        scheme: SchemeKind,
        #[arg(long, default_value = "medium")]
        config: String,
        #[arg(long = "set")]
        sets: Vec<String>,
        /// Write observation events as JSON lines.
        #[arg(long)]
        observations: Option<PathBuf>,
        /// Write per-cycle reports as JSON lines.
        #[arg(long)]
        cycles: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    match real_main() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn real_main() -> Result<ExitCode> {
    match Cli::parse().cmd {
        Cmd::Run { spec, out, print } => cmd_run(&spec, out, print),
        Cmd::Security {
            program,
            schemes,
            configs,
            sets,
            variants,
        } => cmd_security(&program, schemes, configs, &sets, variants),
        Cmd::TimingSweep { max_width, out } => {
            if max_width == 0 {
                bail!("--max-width must be at least 1");
            }
            let rows = timing_sweep(max_width);
            match out {
                Some(p) => write_sweep_csv(
                    &rows,
                    fs::File::create(&p).with_context(|| p.display().to_string())?,
                )?,
                None => write_sweep_csv(&rows, io::stdout().lock())?,
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Gen {
            kind,
            size,
            seed,
            out,
        } => {
            let text = specsim::isa::disassemble(&gen_workload(kind, size, seed)?);
            write_or_print(out.as_deref(), text.as_bytes())?;
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Sim {
            program,
            scheme,
            config,
            sets,
            observations,
            cycles,
        } => {
            let cfg = resolve_config(&config, &sets)?;
            let (_, p) = load_program(&program, Path::new("."))?;
            let run = simulate(&cfg, scheme, &p)?;
            if let Some(path) = observations {
                write_jsonl(
                    &run.observations,
                    fs::File::create(&path).with_context(|| path.display().to_string())?,
                )?;
            }
            if let Some(path) = cycles {
                write_jsonl(
                    &run.reports,
                    fs::File::create(&path).with_context(|| path.display().to_string())?,
                )?;
            }
            let stats = collect_stats(&run);
            let mut w = csv::Writer::from_writer(io::stdout().lock());
            w.serialize(&stats)?;
            w.flush()?;
            eprintln!("stats csv v{STATS_CSV_VERSION}");
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn write_or_print(path: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match path {
        Some(p) => fs::write(p, bytes).with_context(|| p.display().to_string()),
        None => Ok(io::stdout().lock().write_all(bytes)?),
    }
}

fn resolve_config(arg: &str, sets: &[String]) -> Result<CoreConfig> {
    let base = if PRESET_NAMES.contains(&arg) {
        CoreConfig::preset(arg)?
    } else {
        CoreConfig::from_file(Path::new(arg))?
    };
    let mut overrides = toml::Table::new();
    for s in sets {
        let (k, v) = s
            .split_once('=')
            .with_context(|| format!("--set {s:?}: expected key=value"))?;
        let value: toml::Value = format!("v = {v}")
            .parse::<toml::Table>()
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(v.to_string()));
        overrides.insert(k.trim().to_string(), value);
    }
    let cfg = base.with_overrides(&overrides)?;
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_run(spec_path: &Path, out: Option<PathBuf>, print: bool) -> Result<ExitCode> {
    let spec = specsim::experiment::ExperimentSpec::from_file(spec_path)?;
    let dir = out
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .or_else(|| spec.output.dir.clone())
        .unwrap_or_else(|| PathBuf::from("specsim-out"));
    let table = run_experiment(&spec)?;
    for p in write_outputs(&table, &spec.output, &dir)? {
        eprintln!("wrote {}", p.display());
    }
    if print {
        for &k in &spec.output.reports {
            println!("== {k}");
            print!("{}", report(&table, k).to_text());
        }
    }
    Ok(exit_for(&table))
}

fn cmd_security(
    program: &str,
    schemes: Vec<SchemeKind>,
    configs: Vec<String>,
    sets: &[String],
    variants: usize,
) -> Result<ExitCode> {
    let (name, p) = load_program(program, Path::new("."))?;
    if p.secret_cells.is_empty() {
        bail!("{program}: no secret cells declared");
    }
    let schemes = if schemes.is_empty() {
        SchemeKind::ALL.to_vec()
    } else {
        schemes
    };
    let configs = if configs.is_empty() {
        PRESET_NAMES.iter().map(|s| s.to_string()).collect()
    } else {
        configs
    };
    let vars = secret_variants(&p, variants);
    let mut table = ResultTable::default();
    for c in &configs {
        let cfg = resolve_config(c, sets)?;
        for &scheme in &schemes {
            let verdict = check_noninterference(&p, &vars, scheme, &cfg)?;
            table.security.push(SecurityRow {
                program: name.clone(),
                config: cfg.name.clone(),
                scheme,
                verdict,
            });
        }
    }
    report(&table, ReportKind::Security).write_csv(io::stdout().lock())?;
    Ok(exit_for(&table))
}

fn exit_for(table: &ResultTable) -> ExitCode {
    if table.has_violation() {
        for r in table.security.iter().filter(|r| r.is_violation()) {
            eprintln!(
                "LEAK: {} distinguishable under {} on {}",
                r.program, r.scheme, r.config
            );
        }
        ExitCode::from(1)
    } else {
        ExitCode::SUCCESS
    }
}
