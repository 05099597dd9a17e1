//! Run configuration: a flat sectioned `key = value` file plus command-line
//! overrides.
//!
//! Grammar, one item per line:
//!
//! ```text
//! # comment            (also after a value: `seed = 7  # note`)
//! [section]            (run, tolerances, flow)
//! key = value
//! ```
//!
//! Keys before any section header belong to `[run]`. A flag `--key value`
//! sets a `[run]` key; `--section.key value` sets a key in another section.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::Serialize;
use solitonlab::flow::{FlowConfig, Stepper};
use solitonlab::{BackendKind, Tolerances};

#[derive(Debug)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub key: Option<String>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (&self.line, &self.key) {
            (Some(line), Some(key)) => write!(f, "line {line}, key `{key}`: {}", self.message),
            (Some(line), None) => write!(f, "line {line}: {}", self.message),
            (None, Some(key)) => write!(f, "key `{key}`: {}", self.message),
            (None, None) => write!(f, "{}", self.message),
        }
    }
}

fn error(line: Option<usize>, key: Option<&str>, message: impl Into<String>) -> ConfigError {
    ConfigError {
        line,
        key: key.map(str::to_owned),
        message: message.into(),
    }
}

/// Raw entries keyed by `(section, key)`, each with the line it came from
/// (`None` for command-line flags).
#[derive(Debug, Default, Clone)]
pub struct RawConfig {
    entries: BTreeMap<(String, String), (String, Option<usize>)>,
}

const SECTIONS: [&str; 3] = ["run", "tolerances", "flow"];

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut raw = RawConfig::default();
        let mut section = "run".to_string();
        for (idx, line) in text.lines().enumerate() {
            let number = idx + 1;
            let content = match line.find('#') {
                Some(at) => &line[..at],
                None => line,
            }
            .trim();
            if content.is_empty() {
                continue;
            }
            if let Some(rest) = content.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| error(Some(number), None, "unterminated section header"))?
                    .trim();
                if !SECTIONS.contains(&name) {
                    return Err(error(Some(number), None, format!("unknown section [{name}]")));
                }
                section = name.to_string();
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| error(Some(number), None, "expected `key = value`"))?;
            let key = key.trim();
            let value = value.trim();
            if key.is_empty() {
                return Err(error(Some(number), None, "empty key"));
            }
            if value.is_empty() {
                return Err(error(Some(number), Some(key), "empty value"));
            }
            let slot = (section.clone(), key.to_string());
            if raw.entries.contains_key(&slot) {
                return Err(error(Some(number), Some(key), "duplicate key"));
            }
            raw.entries.insert(slot, (value.to_string(), Some(number)));
        }
        Ok(raw)
    }

    /// Applies `--key value` pairs.
    pub fn apply_flags(&mut self, flags: &[(String, String)]) -> Result<(), ConfigError> {
        for (flag, value) in flags {
            let (section, key) = match flag.split_once('.') {
                Some((s, k)) => (s.to_string(), k.to_string()),
                None => ("run".to_string(), flag.clone()),
            };
            if !SECTIONS.contains(&section.as_str()) {
                return Err(error(None, Some(flag), format!("unknown section `{section}`")));
            }
            self.entries.insert((section, key), (value.clone(), None));
        }
        Ok(())
    }

    fn take(&mut self, section: &str, key: &str) -> Option<(String, Option<usize>)> {
        self.entries.remove(&(section.to_string(), key.to_string()))
    }
}

fn parse_value<T: std::str::FromStr>(
    value: &str,
    line: Option<usize>,
    key: &str,
    what: &str,
) -> Result<T, ConfigError> {
    value
        .parse()
        .map_err(|_| error(line, Some(key), format!("expected {what}, got `{value}`")))
}

#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub backend: BackendKind,
    /// `None` picks the experiment's default resolution.
    pub resolution: Option<usize>,
    pub seed: u64,
    /// Random states per experiment; `None` picks the experiment's default.
    pub states: Option<usize>,
    /// Eigenpairs reported by the spectrum experiment.
    pub eigenpairs: usize,
    /// Not part of the config hash.
    #[serde(skip)]
    pub output: PathBuf,
    pub tolerances: Tolerances,
    pub flow: FlowSettings,
}

/// Flow overrides; unset fields keep the backend defaults.
#[derive(Debug, Clone, Default, Serialize)]
pub struct FlowSettings {
    pub dt_initial: Option<f64>,
    pub dt_max: Option<f64>,
    pub t_end: Option<f64>,
    pub stepper: Option<Stepper>,
    pub monitor_stride: Option<usize>,
    pub safety: Option<f64>,
    pub dh_target: Option<f64>,
    pub runs: Option<usize>,
}

impl FlowSettings {
    pub fn apply(&self, mut cfg: FlowConfig) -> FlowConfig {
        if let Some(v) = self.dt_initial {
            cfg.dt_initial = v;
            cfg.dt_max = cfg.dt_max.max(v);
        }
        if let Some(v) = self.dt_max {
            cfg.dt_max = v;
        }
        if let Some(v) = self.t_end {
            cfg.t_end = v;
        }
        if let Some(v) = self.stepper {
            cfg.stepper = v;
        }
        if let Some(v) = self.monitor_stride {
            cfg.monitor_stride = v;
        }
        if let Some(v) = self.safety {
            cfg.safety = v;
        }
        if let Some(v) = self.dh_target {
            cfg.dh_target = v;
        }
        cfg
    }
}

impl RunConfig {
    pub fn from_raw(mut raw: RawConfig) -> Result<Self, ConfigError> {
        let backend = match raw.take("run", "backend") {
            Some((v, line)) => match v.as_str() {
                "torus" => BackendKind::Torus,
                "sphere" => BackendKind::Sphere,
                other => {
                    return Err(error(
                        line,
                        Some("backend"),
                        format!("unknown backend `{other}` (torus or sphere)"),
                    ))
                }
            },
            None => BackendKind::Torus,
        };
        let resolution = match raw.take("run", "resolution") {
            Some((v, line)) => Some(parse_value(&v, line, "resolution", "a positive integer")?),
            None => None,
        };
        let seed = match raw.take("run", "seed") {
            Some((v, line)) => parse_value(&v, line, "seed", "an unsigned integer")?,
            None => 7,
        };
        let states = match raw.take("run", "states") {
            Some((v, line)) => Some(parse_value(&v, line, "states", "a count")?),
            None => None,
        };
        let eigenpairs = match raw.take("run", "eigenpairs") {
            Some((v, line)) => parse_value(&v, line, "eigenpairs", "a count")?,
            None => 6,
        };
        let output = match raw.take("run", "output") {
            Some((v, _)) => PathBuf::from(v),
            None => PathBuf::from("solitonlab-out"),
        };

        let mut tolerances = Tolerances::default();
        for key in Tolerances::keys() {
            if let Some((v, line)) = raw.take("tolerances", &key) {
                let value: f64 = parse_value(&v, line, &key, "a number")?;
                tolerances
                    .set(&key, value)
                    .map_err(|e| error(line, Some(&key), e.to_string()))?;
            }
        }

        let mut flow = FlowSettings::default();
        let mut real = |key: &str| -> Result<Option<f64>, ConfigError> {
            match raw.take("flow", key) {
                Some((v, line)) => Ok(Some(parse_value(&v, line, key, "a number")?)),
                None => Ok(None),
            }
        };
        flow.dt_initial = real("dt_initial")?;
        flow.dt_max = real("dt_max")?;
        flow.t_end = real("t_end")?;
        flow.safety = real("safety")?;
        flow.dh_target = real("dh_target")?;
        if let Some((v, line)) = raw.take("flow", "stepper") {
            flow.stepper = Some(Stepper::parse(&v).ok_or_else(|| {
                error(
                    line,
                    Some("stepper"),
                    format!("unknown stepper `{v}` (explicit-rk or semi-implicit-spectral)"),
                )
            })?);
        }
        if let Some((v, line)) = raw.take("flow", "monitor_stride") {
            flow.monitor_stride = Some(parse_value(&v, line, "monitor_stride", "a count")?);
        }
        if let Some((v, line)) = raw.take("flow", "runs") {
            flow.runs = Some(parse_value(&v, line, "runs", "a count")?);
        }

        if let Some(((section, key), (_, line))) = raw.entries.into_iter().next() {
            return Err(error(line, Some(&key), format!("unknown key in [{section}]")));
        }
        Ok(RunConfig {
            backend,
            resolution,
            seed,
            states,
            eigenpairs,
            output,
            tolerances,
            flow,
        })
    }

    pub fn load(path: Option<&Path>, flags: &[(String, String)]) -> Result<Self, ConfigError> {
        let mut raw = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| error(None, None, format!("cannot read {}: {e}", p.display())))?;
                RawConfig::parse(&text)?
            }
            None => RawConfig::default(),
        };
        raw.apply_flags(flags)?;
        Self::from_raw(raw)
    }
}
