//! Experiment matrices: (config × workload × seed × scheme) runs, normalized
//! IPC summaries, the security table and report rendering.
//!
//! An experiment file is TOML:
//!
//! ```toml
//! schemes = ["baseline", "stt-rename", "stt-issue", "nda"]
//! configs = ["small", "mega", { preset = "mega", name = "mega-slow", mem_latency_cycles = 40 }]
//! seeds = [1, 2, 3]
//!
//! [[workloads]]
//! kind = "mixed"
//! size = 5000
//!
//! [[workloads]]
//! file = "kernels/spill.s"   # relative to the experiment file
//!
//! [[security]]
//! program = "spectre-v1"
//! variants = 8
//!
//! [output]
//! dir = "out"
//! format = "csv+text"
//! reports = ["normalized_ipc", "width_trend"]
//! ```
//!
//! Output files are byte-for-byte reproducible: cells run in parallel but
//! rows are sorted into declaration order before anything is written.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ConfigError, CoreConfig};
use crate::isa::{assemble, gen_spectre_v1, gen_workload, Program, WorkloadKind};
use crate::observe::{
    check_noninterference, collect_stats, NonInterferenceError, RunStats, Verdict,
};
use crate::pipeline::{simulate, SimError};
use crate::schemes::SchemeKind;
use crate::timing::{timing_sweep, write_sweep_csv};

/// Bumped whenever a column is added, removed or reordered in `runs.csv`,
/// `summary.csv` or `security.csv`.
pub const RESULTS_CSV_VERSION: u32 = 1;

/// Where the Spectre-v1 gadget keeps its secret byte, and the probe stride.
pub const SPECTRE_SECRET_ADDR: u64 = 0x3000;
pub const SPECTRE_PROBE_STRIDE: u64 = 64;

const RUN_COLUMNS: [&str; 18] = [
    "config",
    "workload",
    "seed",
    "scheme",
    "cycles",
    "committed_instrs",
    "ipc",
    "loads_forwarded",
    "forwarding_errors",
    "squashes",
    "taint_delays",
    "nop_issues",
    "partial_store_issues",
    "pending_broadcast_peak",
    "replays",
    "executed_slots",
    "idle_slots",
    "normalized_ipc",
];

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("experiment file: {0}")]
    Parse(String),
    #[error("config {name}: {source}")]
    Config { name: String, source: ConfigError },
    #[error("duplicate config name {0:?}; give inline configs a distinct `name`")]
    DuplicateConfig(String),
    #[error("workload {index}: {message}")]
    Workload { index: usize, message: String },
    #[error("`{0}` must not be empty")]
    Empty(&'static str),
    #[error(
        "no baseline cell for {config} / {workload} / seed {seed}; add \"baseline\" to `schemes`"
    )]
    MissingBaseline {
        config: String,
        workload: String,
        seed: u64,
    },
    #[error("unknown report kind {0:?}")]
    UnknownReport(String),
    #[error("run {config} / {workload} / seed {seed} / {scheme}: {source}")]
    Sim {
        config: String,
        workload: String,
        seed: u64,
        scheme: SchemeKind,
        source: SimError,
    },
    #[error("security check {program} on {config} / {scheme}: {source}")]
    Security {
        program: String,
        config: String,
        scheme: SchemeKind,
        source: NonInterferenceError,
    },
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportKind {
    NormalizedIpc,
    WidthTrend,
    TimingSweep,
    Security,
}

impl ReportKind {
    pub const ALL: [ReportKind; 4] = [
        ReportKind::NormalizedIpc,
        ReportKind::WidthTrend,
        ReportKind::TimingSweep,
        ReportKind::Security,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ReportKind::NormalizedIpc => "normalized_ipc",
            ReportKind::WidthTrend => "width_trend",
            ReportKind::TimingSweep => "timing_sweep",
            ReportKind::Security => "security",
        }
    }
}

impl fmt::Display for ReportKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ReportKind {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| ExperimentError::UnknownReport(s.to_string()))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum OutputFormat {
    #[default]
    Csv,
    /// CSV plus a plain-text rendering of each report.
    CsvText,
}

#[derive(Clone, Debug)]
pub struct OutputSpec {
    pub dir: Option<PathBuf>,
    pub format: OutputFormat,
    pub reports: Vec<ReportKind>,
}

#[derive(Clone, Debug)]
pub enum WorkloadSource {
    Generated { kind: WorkloadKind, size: usize },
    File(Program),
}

#[derive(Clone, Debug)]
pub struct Workload {
    pub name: String,
    pub source: WorkloadSource,
}

impl Workload {
    pub fn program(&self, seed: u64) -> Program {
        match &self.source {
            WorkloadSource::Generated { kind, size } => {
                gen_workload(*kind, *size, seed).expect("size checked at parse")
            }
            WorkloadSource::File(p) => p.clone(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SecurityCheck {
    pub program_name: String,
    pub program: Program,
    pub variants: Vec<BTreeMap<u64, u64>>,
    pub configs: Vec<CoreConfig>,
    pub schemes: Vec<SchemeKind>,
}

#[derive(Clone, Debug)]
pub struct ExperimentSpec {
    pub schemes: Vec<SchemeKind>,
    pub configs: Vec<CoreConfig>,
    pub workloads: Vec<Workload>,
    pub seeds: Vec<u64>,
    pub output: OutputSpec,
    pub security: Vec<SecurityCheck>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    schemes: Vec<SchemeKind>,
    configs: Vec<RawConfig>,
    #[serde(default)]
    workloads: Vec<RawWorkload>,
    #[serde(default = "default_seeds")]
    seeds: Vec<u64>,
    #[serde(default)]
    output: RawOutput,
    #[serde(default)]
    security: Vec<RawSecurity>,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawConfig {
    Preset(String),
    Inline(toml::Table),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawWorkload {
    kind: Option<String>,
    size: Option<usize>,
    file: Option<PathBuf>,
    name: Option<String>,
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    dir: Option<PathBuf>,
    format: Option<String>,
    reports: Option<Vec<String>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSecurity {
    program: String,
    #[serde(default = "default_variants")]
    variants: usize,
    configs: Option<Vec<RawConfig>>,
    schemes: Option<Vec<SchemeKind>>,
}

fn default_variants() -> usize {
    8
}

fn resolve_configs(raw: Vec<RawConfig>) -> Result<Vec<CoreConfig>, ExperimentError> {
    let mut out: Vec<CoreConfig> = Vec::with_capacity(raw.len());
    for rc in raw {
        let cfg = match rc {
            RawConfig::Preset(name) => {
                CoreConfig::preset(&name).map_err(|source| ExperimentError::Config {
                    name: name.clone(),
                    source,
                })?
            }
            RawConfig::Inline(mut table) => {
                let preset = match table.remove("preset") {
                    Some(toml::Value::String(p)) => p,
                    Some(_) => {
                        return Err(ExperimentError::Parse(
                            "inline config `preset` must be a string".into(),
                        ))
                    }
                    None => "medium".to_string(),
                };
                let name = table
                    .get("name")
                    .and_then(|v| v.as_str())
                    .unwrap_or(&preset)
                    .to_string();
                let wrap = |source| ExperimentError::Config {
                    name: name.clone(),
                    source,
                };
                let cfg = CoreConfig::preset(&preset)
                    .and_then(|b| b.with_overrides(&table))
                    .map_err(wrap)?;
                cfg.validate()
                    .map_err(|source| ExperimentError::Config { name, source })?;
                cfg
            }
        };
        if out.iter().any(|c| c.name == cfg.name) {
            return Err(ExperimentError::DuplicateConfig(cfg.name));
        }
        out.push(cfg);
    }
    Ok(out)
}

/// Loads a program argument: `spectre-v1` names the built-in gadget,
/// anything else is an assembly file.
pub fn load_program(arg: &str, base_dir: &Path) -> Result<(String, Program), ExperimentError> {
    if arg == "spectre-v1" {
        let p = gen_spectre_v1(SPECTRE_SECRET_ADDR, SPECTRE_PROBE_STRIDE).expect("nonzero stride");
        return Ok((arg.to_string(), p));
    }
    let path = base_dir.join(arg);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let p =
        assemble(&text).map_err(|e| ExperimentError::Parse(format!("{}: {e}", path.display())))?;
    let name = path
        .file_stem()
        .map_or_else(|| arg.to_string(), |s| s.to_string_lossy().into_owned());
    Ok((name, p))
}

/// `n` secret assignments: variant `k` stores `k` in every secret cell.
pub fn secret_variants(program: &Program, n: usize) -> Vec<BTreeMap<u64, u64>> {
    (0..n as u64)
        .map(|k| program.secret_cells.iter().map(|&a| (a, k)).collect())
        .collect()
}

impl ExperimentSpec {
    /// Parses an experiment file. Relative workload and program paths are
    /// resolved against `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, ExperimentError> {
        let raw: RawSpec =
            toml::from_str(text).map_err(|e| ExperimentError::Parse(e.to_string()))?;
        if raw.schemes.is_empty() {
            return Err(ExperimentError::Empty("schemes"));
        }
        if raw.seeds.is_empty() {
            return Err(ExperimentError::Empty("seeds"));
        }
        let configs = resolve_configs(raw.configs)?;
        if configs.is_empty() {
            return Err(ExperimentError::Empty("configs"));
        }
        let mut workloads = Vec::with_capacity(raw.workloads.len());
        for (index, w) in raw.workloads.into_iter().enumerate() {
            let bad = |message: &str| ExperimentError::Workload {
                index,
                message: message.to_string(),
            };
            let (default_name, source) = match (w.kind, w.file) {
                (Some(k), None) => {
                    let kind: WorkloadKind =
                        k.parse().map_err(|_| bad(&format!("unknown kind {k:?}")))?;
                    let size = w
                        .size
                        .ok_or_else(|| bad("generated workloads need `size`"))?;
                    if size == 0 {
                        return Err(bad("`size` must be positive"));
                    }
                    (
                        kind.name().to_string(),
                        WorkloadSource::Generated { kind, size },
                    )
                }
                (None, Some(f)) => {
                    let (name, p) = load_program(&f.to_string_lossy(), base_dir)?;
                    p.validate().map_err(|e| bad(&e.to_string()))?;
                    (name, WorkloadSource::File(p))
                }
                _ => return Err(bad("give exactly one of `kind` or `file`")),
            };
            let name = w.name.unwrap_or(default_name);
            if workloads.iter().any(|x: &Workload| x.name == name) {
                return Err(bad(&format!("duplicate workload name {name:?}")));
            }
            workloads.push(Workload { name, source });
        }
        let format = match raw.output.format.as_deref() {
            None | Some("csv") => OutputFormat::Csv,
            Some("csv+text") | Some("text") => OutputFormat::CsvText,
            Some(other) => {
                return Err(ExperimentError::Parse(format!(
                    "unknown output format {other:?}"
                )))
            }
        };
        let mut security = Vec::with_capacity(raw.security.len());
        for s in raw.security {
            let (program_name, program) = load_program(&s.program, base_dir)?;
            let configs = match s.configs {
                Some(c) => resolve_configs(c)?,
                None => configs.clone(),
            };
            let variants = secret_variants(&program, s.variants);
            security.push(SecurityCheck {
                program_name,
                program,
                variants,
                configs,
                schemes: s.schemes.unwrap_or_else(|| raw.schemes.clone()),
            });
        }
        let reports = match raw.output.reports {
            Some(names) => names
                .iter()
                .map(|n| n.parse())
                .collect::<Result<Vec<ReportKind>, _>>()?,
            None => {
                let mut r = vec![ReportKind::NormalizedIpc, ReportKind::WidthTrend];
                if !security.is_empty() {
                    r.push(ReportKind::Security);
                }
                r
            }
        };
        Ok(ExperimentSpec {
            schemes: raw.schemes,
            configs,
            workloads,
            seeds: raw.seeds,
            output: OutputSpec {
                dir: raw.output.dir.map(|d| base_dir.join(d)),
                format,
                reports,
            },
            security,
        })
    }

    pub fn from_file(path: &Path) -> Result<Self, ExperimentError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    /// Number of simulation cells in the matrix.
    pub fn cells(&self) -> usize {
        self.configs.len() * self.workloads.len() * self.seeds.len() * self.schemes.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunRow {
    pub config: String,
    pub workload: String,
    pub seed: u64,
    pub scheme: SchemeKind,
    pub stats: RunStats,
    /// IPC over the Baseline cell of the same config, workload and seed.
    /// `None` for Baseline rows.
    pub normalized_ipc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub config: String,
    pub workload: String,
    pub scheme: SchemeKind,
    pub runs: u64,
    pub mean_cycles: f64,
    pub mean_instrs: f64,
    /// Mean instructions over mean cycles.
    pub ipc: f64,
    pub normalized_ipc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SecurityRow {
    pub program: String,
    pub config: String,
    pub scheme: SchemeKind,
    pub verdict: Verdict,
}

impl SecurityRow {
    /// A secure scheme that leaks.
    pub fn is_violation(&self) -> bool {
        self.scheme.is_secure() && self.verdict.is_distinguishable()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ResultTable {
    pub runs: Vec<RunRow>,
    pub summary: Vec<SummaryRow>,
    pub security: Vec<SecurityRow>,
    /// `(name, width)` in declaration order, for trend reports.
    pub configs: Vec<(String, usize)>,
}

impl ResultTable {
    pub fn has_violation(&self) -> bool {
        self.security.iter().any(SecurityRow::is_violation)
    }

    pub fn summary_for(
        &self,
        config: &str,
        workload: &str,
        scheme: SchemeKind,
    ) -> Option<&SummaryRow> {
        self.summary
            .iter()
            .find(|r| r.config == config && r.workload == workload && r.scheme == scheme)
    }
}

/// Runs every (config, workload, seed, scheme) cell and computes per-cell
/// and summary normalized IPC.
pub fn run_matrix(spec: &ExperimentSpec) -> Result<ResultTable, ExperimentError> {
    let mut cells = Vec::with_capacity(spec.cells());
    for ci in 0..spec.configs.len() {
        for wi in 0..spec.workloads.len() {
            for si in 0..spec.seeds.len() {
                for ki in 0..spec.schemes.len() {
                    cells.push((ci, wi, si, ki));
                }
            }
        }
    }
    let mut done: Vec<((usize, usize, usize, usize), RunStats)> = cells
        .into_par_iter()
        .map(|(ci, wi, si, ki)| {
            let (c, w, seed, scheme) = (
                &spec.configs[ci],
                &spec.workloads[wi],
                spec.seeds[si],
                spec.schemes[ki],
            );
            let run =
                simulate(c, scheme, &w.program(seed)).map_err(|source| ExperimentError::Sim {
                    config: c.name.clone(),
                    workload: w.name.clone(),
                    seed,
                    scheme,
                    source,
                })?;
            Ok(((ci, wi, si, ki), collect_stats(&run)))
        })
        .collect::<Result<_, ExperimentError>>()?;
    done.sort_by_key(|(k, _)| *k);

    let mut runs: Vec<RunRow> = done
        .into_iter()
        .map(|((ci, wi, si, ki), stats)| RunRow {
            config: spec.configs[ci].name.clone(),
            workload: spec.workloads[wi].name.clone(),
            seed: spec.seeds[si],
            scheme: spec.schemes[ki],
            stats,
            normalized_ipc: None,
        })
        .collect();
    normalize_runs(&mut runs)?;
    let summary = summarize(&runs);
    Ok(ResultTable {
        runs,
        summary,
        security: Vec::new(),
        configs: spec
            .configs
            .iter()
            .map(|c| (c.name.clone(), c.width))
            .collect(),
    })
}

fn normalize_runs(runs: &mut [RunRow]) -> Result<(), ExperimentError> {
    let base: BTreeMap<(String, String, u64), f64> = runs
        .iter()
        .filter(|r| r.scheme == SchemeKind::Baseline)
        .map(|r| ((r.config.clone(), r.workload.clone(), r.seed), r.stats.ipc))
        .collect();
    for r in runs.iter_mut().filter(|r| r.scheme != SchemeKind::Baseline) {
        let Some(&b) = base.get(&(r.config.clone(), r.workload.clone(), r.seed)) else {
            return Err(ExperimentError::MissingBaseline {
                config: r.config.clone(),
                workload: r.workload.clone(),
                seed: r.seed,
            });
        };
        r.normalized_ipc = Some(r.stats.ipc / b);
    }
    Ok(())
}

/// Per (config, workload, scheme): mean cycles and mean instructions taken
/// separately, then their ratio. Rows keep the order of first appearance.
pub fn summarize(runs: &[RunRow]) -> Vec<SummaryRow> {
    let mut order: Vec<(String, String, SchemeKind)> = Vec::new();
    let mut sums: BTreeMap<(String, String, SchemeKind), (u64, u64, u64)> = BTreeMap::new();
    for r in runs {
        let key = (r.config.clone(), r.workload.clone(), r.scheme);
        let e = sums.entry(key.clone()).or_insert_with(|| {
            order.push(key);
            (0, 0, 0)
        });
        e.0 += 1;
        e.1 += r.stats.cycles;
        e.2 += r.stats.committed_instrs;
    }
    let mut out: Vec<SummaryRow> = order
        .into_iter()
        .map(|key| {
            let (n, cycles, instrs) = sums[&key];
            let mean_cycles = cycles as f64 / n as f64;
            let mean_instrs = instrs as f64 / n as f64;
            SummaryRow {
                config: key.0,
                workload: key.1,
                scheme: key.2,
                runs: n,
                mean_cycles,
                mean_instrs,
                ipc: if mean_cycles == 0.0 {
                    0.0
                } else {
                    mean_instrs / mean_cycles
                },
                normalized_ipc: None,
            }
        })
        .collect();
    let base: BTreeMap<(String, String), f64> = out
        .iter()
        .filter(|r| r.scheme == SchemeKind::Baseline)
        .map(|r| ((r.config.clone(), r.workload.clone()), r.ipc))
        .collect();
    for r in out.iter_mut().filter(|r| r.scheme != SchemeKind::Baseline) {
        r.normalized_ipc = base
            .get(&(r.config.clone(), r.workload.clone()))
            .map(|b| r.ipc / b);
    }
    out
}

/// Runs every security check of the spec.
pub fn run_security(spec: &ExperimentSpec) -> Result<Vec<SecurityRow>, ExperimentError> {
    let mut jobs = Vec::new();
    for check in &spec.security {
        for c in &check.configs {
            for &s in &check.schemes {
                jobs.push((check, c, s));
            }
        }
    }
    jobs.into_par_iter()
        .map(|(check, c, scheme)| {
            let verdict = check_noninterference(&check.program, &check.variants, scheme, c)
                .map_err(|source| ExperimentError::Security {
                    program: check.program_name.clone(),
                    config: c.name.clone(),
                    scheme,
                    source,
                })?;
            Ok(SecurityRow {
                program: check.program_name.clone(),
                config: c.name.clone(),
                scheme,
                verdict,
            })
        })
        .collect()
}

/// Matrix plus security checks.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ResultTable, ExperimentError> {
    let mut table = run_matrix(spec)?;
    table.security = run_security(spec)?;
    Ok(table)
}

fn fmt_f(v: f64) -> String {
    format!("{v:.6}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f).unwrap_or_default()
}

pub fn write_runs_csv(runs: &[RunRow], out: impl Write) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RUN_COLUMNS)?;
    for r in runs {
        let s = &r.stats;
        w.write_record([
            r.config.clone(),
            r.workload.clone(),
            r.seed.to_string(),
            r.scheme.token().to_string(),
            s.cycles.to_string(),
            s.committed_instrs.to_string(),
            fmt_f(s.ipc),
            s.loads_forwarded.to_string(),
            s.forwarding_errors.to_string(),
            s.squashes.to_string(),
            s.taint_delays.to_string(),
            s.nop_issues.to_string(),
            s.partial_store_issues.to_string(),
            s.pending_broadcast_peak.to_string(),
            s.replays.to_string(),
            s.executed_slots.to_string(),
            s.idle_slots.to_string(),
            fmt_opt(r.normalized_ipc),
        ])?;
    }
    w.flush().map_err(|e| ExperimentError::Io {
        path: "runs.csv".into(),
        source: e,
    })?;
    Ok(())
}

/// Reads back a `runs.csv`. Float columns are ignored; IPC and normalized
/// IPC are recomputed from the integer counters.
pub fn read_runs_csv(input: impl io::Read) -> Result<Vec<RunRow>, ExperimentError> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    if header.iter().ne(RUN_COLUMNS) {
        return Err(ExperimentError::Parse(format!(
            "unexpected runs.csv header: {header:?}"
        )));
    }
    let mut runs = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let int = |i: usize| -> Result<u64, ExperimentError> {
            rec[i].parse().map_err(|_| {
                ExperimentError::Parse(format!("column {} = {:?}", RUN_COLUMNS[i], &rec[i]))
            })
        };
        let cycles = int(4)?;
        let committed = int(5)?;
        let stats = RunStats {
            cycles,
            committed_instrs: committed,
            ipc: if cycles == 0 {
                0.0
            } else {
                committed as f64 / cycles as f64
            },
            loads_forwarded: int(7)?,
            forwarding_errors: int(8)?,
            squashes: int(9)?,
            taint_delays: int(10)?,
            nop_issues: int(11)?,
            partial_store_issues: int(12)?,
            pending_broadcast_peak: int(13)?,
            replays: int(14)?,
            executed_slots: int(15)?,
            idle_slots: int(16)?,
        };
        runs.push(RunRow {
            config: rec[0].to_string(),
            workload: rec[1].to_string(),
            seed: int(2)?,
            scheme: rec[3]
                .parse()
                .map_err(|_| ExperimentError::Parse(format!("scheme {:?}", &rec[3])))?,
            stats,
            normalized_ipc: None,
        });
    }
    normalize_runs(&mut runs)?;
    Ok(runs)
}

pub fn write_summary_csv(summary: &[SummaryRow], out: impl Write) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "config",
        "workload",
        "scheme",
        "runs",
        "mean_cycles",
        "mean_instrs",
        "ipc",
        "normalized_ipc",
    ])?;
    for r in summary {
        w.write_record([
            r.config.clone(),
            r.workload.clone(),
            r.scheme.token().to_string(),
            r.runs.to_string(),
            fmt_f(r.mean_cycles),
            fmt_f(r.mean_instrs),
            fmt_f(r.ipc),
            fmt_opt(r.normalized_ipc),
        ])?;
    }
    w.flush().map_err(|e| ExperimentError::Io {
        path: "summary.csv".into(),
        source: e,
    })?;
    Ok(())
}

fn secure_schemes(table: &ResultTable) -> Vec<SchemeKind> {
    let mut seen = BTreeSet::new();
    table
        .summary
        .iter()
        .map(|r| r.scheme)
        .filter(|s| *s != SchemeKind::Baseline && seen.insert(*s))
        .collect()
}

fn workloads(table: &ResultTable) -> Vec<String> {
    let mut seen = BTreeSet::new();
    table
        .summary
        .iter()
        .map(|r| r.workload.clone())
        .filter(|w| seen.insert(w.clone()))
        .collect()
}

/// A report as a header plus rows of cells.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Report {
    pub kind: ReportKind,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

/// Builds a report from a result table.
///
/// - `normalized_ipc`: one row per (workload, config), one column per
///   non-baseline scheme
/// - `width_trend`: the same values grouped by workload with configs in
///   declaration order, plus the width and the change from the previous
///   config
/// - `timing_sweep`: logic costs over widths 1..8 (ignores the table)
/// - `security`: one row per check with its verdict
pub fn report(table: &ResultTable, kind: ReportKind) -> Report {
    let schemes = secure_schemes(table);
    let (header, rows) = match kind {
        ReportKind::NormalizedIpc => {
            let mut header = vec![
                "workload".to_string(),
                "config".to_string(),
                "baseline_ipc".to_string(),
            ];
            header.extend(schemes.iter().map(|s| s.token().to_string()));
            let mut rows = Vec::new();
            for w in workloads(table) {
                for (c, _) in &table.configs {
                    let Some(base) = table.summary_for(c, &w, SchemeKind::Baseline) else {
                        continue;
                    };
                    let mut row = vec![w.clone(), c.clone(), fmt_f(base.ipc)];
                    row.extend(schemes.iter().map(|&s| {
                        fmt_opt(table.summary_for(c, &w, s).and_then(|r| r.normalized_ipc))
                    }));
                    rows.push(row);
                }
            }
            (header, rows)
        }
        ReportKind::WidthTrend => {
            let mut header = vec![
                "workload".to_string(),
                "config".to_string(),
                "width".to_string(),
            ];
            for s in &schemes {
                header.push(s.token().to_string());
                header.push(format!("{}_step", s.token()));
            }
            let mut rows = Vec::new();
            for w in workloads(table) {
                let mut prev: BTreeMap<SchemeKind, f64> = BTreeMap::new();
                for (c, width) in &table.configs {
                    if table.summary_for(c, &w, SchemeKind::Baseline).is_none() {
                        continue;
                    }
                    let mut row = vec![w.clone(), c.clone(), width.to_string()];
                    for &s in &schemes {
                        let v = table.summary_for(c, &w, s).and_then(|r| r.normalized_ipc);
                        row.push(fmt_opt(v));
                        let step = v.zip(prev.get(&s).copied()).map(|(v, p)| v - p);
                        row.push(fmt_opt(step));
                        if let Some(v) = v {
                            prev.insert(s, v);
                        }
                    }
                    rows.push(row);
                }
            }
            (header, rows)
        }
        ReportKind::TimingSweep => {
            let header = [
                "width",
                "scheme",
                "depth",
                "comparators",
                "muxes",
                "storage_bits",
            ]
            .map(String::from)
            .to_vec();
            let rows = timing_sweep(8)
                .into_iter()
                .map(|r| {
                    vec![
                        r.width.to_string(),
                        r.scheme.token().to_string(),
                        r.depth.to_string(),
                        r.comparators.to_string(),
                        r.muxes.to_string(),
                        r.storage_bits.to_string(),
                    ]
                })
                .collect();
            (header, rows)
        }
        ReportKind::Security => {
            let header = [
                "program", "config", "scheme", "verdict", "variant", "index", "cycle",
            ]
            .map(String::from)
            .to_vec();
            let rows = table
                .security
                .iter()
                .map(|r| {
                    let (verdict, variant, index, cycle) = match &r.verdict {
                        Verdict::Indistinguishable => (
                            "indistinguishable",
                            String::new(),
                            String::new(),
                            String::new(),
                        ),
                        Verdict::Distinguishable {
                            variant,
                            index,
                            reference,
                            observed,
                        } => {
                            let cycle = reference
                                .or(*observed)
                                .map(|e| e.cycle.to_string())
                                .unwrap_or_default();
                            (
                                "distinguishable",
                                variant.to_string(),
                                index.to_string(),
                                cycle,
                            )
                        }
                    };
                    vec![
                        r.program.clone(),
                        r.config.clone(),
                        r.scheme.token().to_string(),
                        verdict.into(),
                        variant,
                        index,
                        cycle,
                    ]
                })
                .collect();
            (header, rows)
        }
    };
    Report { kind, header, rows }
}

impl Report {
    pub fn write_csv(&self, out: impl Write) -> Result<(), ExperimentError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush().map_err(|e| ExperimentError::Io {
            path: format!("{}.csv", self.kind),
            source: e,
        })?;
        Ok(())
    }

    /// Aligned columns; normalized-IPC reports get a bar per value.
    pub fn to_text(&self) -> String {
        let bars = matches!(
            self.kind,
            ReportKind::NormalizedIpc | ReportKind::WidthTrend
        );
        let mut widths: Vec<usize> = self.header.iter().map(String::len).collect();
        for r in &self.rows {
            for (i, c) in r.iter().enumerate() {
                widths[i] = widths[i].max(c.len());
            }
        }
        let mut s = String::new();
        let line = |cells: &[String], s: &mut String| {
            let parts: Vec<String> = cells
                .iter()
                .enumerate()
                .map(|(i, c)| format!("{c:<w$}", w = widths[i]))
                .collect();
            s.push_str(parts.join("  ").trim_end());
            s.push('\n');
        };
        line(&self.header, &mut s);
        for r in &self.rows {
            line(r, &mut s);
            if bars {
                for (i, c) in r.iter().enumerate() {
                    let h = &self.header[i];
                    if SchemeKind::from_str(h).is_err() {
                        continue;
                    }
                    if let Ok(v) = c.parse::<f64>() {
                        let n = (v.clamp(0.0, 1.5) * 40.0).round() as usize;
                        s.push_str(&format!("    {h:<10} {} {v:.3}\n", "#".repeat(n)));
                    }
                }
            }
        }
        s
    }
}

/// Writes `runs.csv`, `summary.csv` and one `<report>.csv` per requested
/// report (plus `.txt` renderings when asked) into `dir`. Returns the paths
/// written, in order.
pub fn write_outputs(
    table: &ResultTable,
    output: &OutputSpec,
    dir: &Path,
) -> Result<Vec<PathBuf>, ExperimentError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut written = Vec::new();
    let mut put = |name: String, bytes: Vec<u8>| -> Result<(), ExperimentError> {
        let path = dir.join(name);
        fs::write(&path, bytes).map_err(io_err(&path))?;
        written.push(path);
        Ok(())
    };
    let mut buf = Vec::new();
    write_runs_csv(&table.runs, &mut buf)?;
    put("runs.csv".into(), buf)?;
    let mut buf = Vec::new();
    write_summary_csv(&table.summary, &mut buf)?;
    put("summary.csv".into(), buf)?;
    for &kind in &output.reports {
        let r = report(table, kind);
        let mut buf = Vec::new();
        if kind == ReportKind::TimingSweep {
            write_sweep_csv(&timing_sweep(8), &mut buf)?;
        } else {
            r.write_csv(&mut buf)?;
        }
        put(format!("{kind}.csv"), buf)?;
        if output.format == OutputFormat::CsvText {
            put(format!("{kind}.txt"), r.to_text().into_bytes())?;
        }
    }
    Ok(written)
}
