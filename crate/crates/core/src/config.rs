//! Core configuration and the four width presets.
//!
//! Config files are TOML. A file may start from a preset and override any
//! field:
//!
//! ```toml
//! preset = "mega"
//! mem_latency_cycles = 60
//! predictor = { scripted = [true, false, true] }
//! ```

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::isa::FAR_BASE;

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Predictor {
    AlwaysTaken,
    NeverTaken,
    /// Outcomes for conditional branches in fetch order (wrong-path fetches
    /// included). Once the list runs out, predicts taken.
    Scripted(Vec<bool>),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoreConfig {
    pub name: String,
    pub width: usize,
    pub rob_entries: usize,
    pub phys_regs: usize,
    pub mem_ports: usize,
    pub iq_entries: usize,
    pub l1_latency_cycles: u64,
    pub mem_latency_cycles: u64,
    pub predictor: Predictor,
    /// Wake load dependents at the predicted L1-hit latency. Only honoured
    /// by schemes that allow it.
    pub speculative_wakeup: bool,
    pub checkpoints: usize,
    pub fetch_buffer: usize,
    /// STT-Rename only: keep separate address and data taints for stores
    /// instead of one joined taint.
    pub stt_split_store_taint: bool,
    /// Cap on untaint broadcasts per cycle for the STT variants. `None` is
    /// unlimited.
    pub untaint_bandwidth: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConfigError {
    #[error("unknown preset `{0}` (expected small, medium, large or mega)")]
    UnknownPreset(String),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
}

pub const PRESET_NAMES: [&str; 4] = ["small", "medium", "large", "mega"];

impl CoreConfig {
    fn sized(name: &str, width: usize, mem_ports: usize, rob_entries: usize) -> Self {
        CoreConfig {
            name: name.to_string(),
            width,
            rob_entries,
            phys_regs: 32 + rob_entries + 8,
            mem_ports,
            iq_entries: rob_entries / 2,
            l1_latency_cycles: 3,
            mem_latency_cycles: 14,
            predictor: Predictor::AlwaysTaken,
            speculative_wakeup: true,
            checkpoints: 16,
            fetch_buffer: 2 * width,
            stt_split_store_taint: false,
            untaint_bandwidth: None,
        }
    }

    pub fn small() -> Self {
        Self::sized("small", 1, 1, 32)
    }

    pub fn medium() -> Self {
        Self::sized("medium", 2, 1, 64)
    }

    pub fn large() -> Self {
        Self::sized("large", 3, 1, 96)
    }

    pub fn mega() -> Self {
        Self::sized("mega", 4, 2, 128)
    }

    pub fn presets() -> Vec<CoreConfig> {
        vec![Self::small(), Self::medium(), Self::large(), Self::mega()]
    }

    pub fn preset(name: &str) -> Result<Self, ConfigError> {
        match name.to_ascii_lowercase().as_str() {
            "small" => Ok(Self::small()),
            "medium" => Ok(Self::medium()),
            "large" => Ok(Self::large()),
            "mega" => Ok(Self::mega()),
            _ => Err(ConfigError::UnknownPreset(name.to_string())),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if !(1..=8).contains(&self.width) {
            return bad("width must be in 1..=8");
        }
        if self.mem_ports == 0 || self.rob_entries == 0 || self.iq_entries == 0 {
            return bad("mem_ports, rob_entries and iq_entries must be at least 1");
        }
        if self.l1_latency_cycles == 0 || self.mem_latency_cycles == 0 {
            return bad("latencies must be at least 1");
        }
        if self.phys_regs < 32 + self.rob_entries {
            return bad("phys_regs must be at least 32 + rob_entries");
        }
        if self.checkpoints == 0 {
            return bad("checkpoints must be at least 1");
        }
        if self.fetch_buffer < self.width {
            return bad("fetch_buffer must hold at least one full group");
        }
        if self.untaint_bandwidth == Some(0) {
            return bad("untaint_bandwidth must be at least 1 when set");
        }
        Ok(())
    }

    /// Access latency for a (non-forwarded) load from `addr`.
    pub fn load_latency(&self, addr: u64) -> u64 {
        if addr >= FAR_BASE {
            self.mem_latency_cycles
        } else {
            self.l1_latency_cycles
        }
    }

    /// Parses a TOML config. An optional `preset` key supplies defaults for
    /// every field not given.
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        let base = match table.remove("preset") {
            Some(toml::Value::String(p)) => Self::preset(&p)?,
            Some(_) => return Err(ConfigError::Parse("`preset` must be a string".into())),
            None => Self::medium(),
        };
        let cfg = base.with_overrides(&table)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_toml_str(&text)
    }

    /// Applies TOML key overrides on top of `self`.
    pub fn with_overrides(&self, overrides: &toml::Table) -> Result<Self, ConfigError> {
        let mut merged =
            toml::Table::try_from(self).map_err(|e| ConfigError::Parse(e.to_string()))?;
        for (k, v) in overrides {
            merged.insert(k.clone(), v.clone());
        }
        // Resizing a preset's ROB without touching phys_regs should keep the
        // no-deadlock margin.
        if overrides.contains_key("rob_entries") && !overrides.contains_key("phys_regs") {
            if let Some(rob) = merged.get("rob_entries").and_then(|v| v.as_integer()) {
                merged.insert("phys_regs".into(), toml::Value::Integer(32 + rob + 8));
            }
        }
        let cfg: CoreConfig = toml::Value::Table(merged)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

impl fmt::Display for CoreConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

impl FromStr for CoreConfig {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::preset(s)
    }
}
