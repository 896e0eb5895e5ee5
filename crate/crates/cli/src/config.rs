//! Layered run settings. Each key resolves, highest first, from a command-line
//! flag, the config file, the `GKV_SEED` environment variable (seed only) and
//! the built-in defaults.
//!
//! Config files are flat `key = value` lines; `#` and `;` start comment
//! lines, and ` #` starts a trailing comment. Keys use the flag spelling
//! without the leading dashes.

use std::collections::BTreeMap;
use std::fmt::{self, Display};
use std::path::Path;
use std::str::FromStr;

use crate::Failure;

pub const SEED_ENV: &str = "GKV_SEED";

/// Every key a config file may set.
pub const KEYS: &[&str] = &[
    "bank",
    "bank-seed",
    "codebook",
    "episodes",
    "format",
    "m",
    "n",
    "noise-seed",
    "out",
    "precision",
    "quantize-query",
    "queries",
    "r",
    "r-max",
    "r-max-factor",
    "readout",
    "scaling",
    "seed",
    "snr",
    "spread",
    "variation",
    "workers",
];

const DEFAULTS: &[(&str, &str)] = &[
    ("bank-seed", "0"),
    ("codebook", "auto"),
    ("episodes", "1000"),
    ("format", "csv"),
    ("m", "20"),
    ("n", "5"),
    ("noise-seed", "0"),
    ("precision", "real"),
    ("quantize-query", "true"),
    ("queries", "15"),
    ("r-max-factor", "20"),
    ("readout", "centered"),
    ("seed", "0"),
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Source {
    Default,
    Env,
    File { path: String, line: usize },
    Flag,
}

impl Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Source::Default => f.write_str("built-in default"),
            Source::Env => write!(f, "environment variable {SEED_ENV}"),
            Source::File { path, line } => write!(f, "{path}:{line}"),
            Source::Flag => f.write_str("command line"),
        }
    }
}

/// Parses config text into `(key, value, line)` entries. Unknown keys,
/// duplicates, sections and lines without `=` are rejected.
pub fn parse_config(text: &str, path: &str) -> Result<Vec<(String, String, usize)>, String> {
    let mut entries: Vec<(String, String, usize)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = match raw.find(" #").or_else(|| raw.find("\t#")) {
            Some(at) => &raw[..at],
            None => raw,
        };
        let trimmed = content.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') || trimmed.starts_with(';') {
            continue;
        }
        if trimmed.starts_with('[') {
            return Err(format!(
                "{path}:{line}: sections are not supported, one experiment per file"
            ));
        }
        let Some((key, value)) = trimmed.split_once('=') else {
            return Err(format!("{path}:{line}: expected `key = value`, got `{trimmed}`"));
        };
        let key = key.trim().replace('_', "-");
        let value = value.trim();
        if !KEYS.contains(&key.as_str()) {
            return Err(format!("{path}:{line}: unknown key `{key}`"));
        }
        if value.is_empty() {
            return Err(format!("{path}:{line}: key `{key}` has no value"));
        }
        if let Some((_, _, first)) = entries.iter().find(|(k, _, _)| *k == key) {
            return Err(format!("{path}:{line}: key `{key}` already set on line {first}"));
        }
        entries.push((key, value.to_string(), line));
    }
    Ok(entries)
}

#[derive(Debug, Clone, Default)]
pub struct Settings {
    values: BTreeMap<String, (String, Source)>,
}

impl Settings {
    /// Defaults (`command_defaults` over the shared ones), then `env_seed`,
    /// then the config file at `config` if any.
    pub fn load(
        config: Option<&Path>,
        env_seed: Option<String>,
        command_defaults: &[(&str, &str)],
    ) -> Result<Self, Failure> {
        let mut settings = Settings::default();
        for (k, v) in DEFAULTS.iter().chain(command_defaults) {
            settings.set(k, v.to_string(), Source::Default);
        }
        if let Some(seed) = env_seed {
            settings.set("seed", seed, Source::Env);
        }
        if let Some(path) = config {
            let shown = path.display().to_string();
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::Runtime(anyhow::anyhow!("cannot read config {shown}: {e}")))?;
            let entries = parse_config(&text, &shown).map_err(|e| Failure::Runtime(anyhow::anyhow!(e)))?;
            for (k, v, line) in entries {
                settings.set(
                    &k,
                    v,
                    Source::File {
                        path: shown.clone(),
                        line,
                    },
                );
            }
        }
        Ok(settings)
    }

    pub fn set(&mut self, key: &str, value: String, source: Source) {
        debug_assert!(KEYS.contains(&key), "unregistered key {key}");
        self.values.insert(key.to_string(), (value, source));
    }

    /// Applies a flag value when the flag was given.
    pub fn flag<T: ToString>(&mut self, key: &str, value: Option<T>) {
        if let Some(v) = value {
            self.set(key, v.to_string(), Source::Flag);
        }
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|(v, _)| v.as_str())
    }

    /// Parses `key` with `parse`. Bad flag values are usage errors; bad file
    /// values are runtime errors pointing at the offending line.
    pub fn parse_with<T>(
        &self,
        key: &str,
        parse: impl FnOnce(&str) -> Result<T, String>,
    ) -> Result<Option<T>, Failure> {
        let Some((value, source)) = self.values.get(key) else {
            return Ok(None);
        };
        parse(value).map(Some).map_err(|e| {
            let message = format!("invalid value `{value}` for `{key}` ({source}): {e}");
            match source {
                Source::Flag => Failure::Usage(message),
                _ => Failure::Runtime(anyhow::anyhow!(message)),
            }
        })
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, Failure>
    where
        T::Err: Display,
    {
        self.parse_with(key, |v| v.parse::<T>().map_err(|e| e.to_string()))
    }

    /// Like [`Settings::get`], but a missing key is a usage error.
    pub fn require<T: FromStr>(&self, key: &str) -> Result<T, Failure>
    where
        T::Err: Display,
    {
        self.get(key)?
            .ok_or_else(|| Failure::Usage(format!("missing `--{key}` (flag or config key)")))
    }

    /// The resolved settings in config-file syntax, with the source of each value.
    pub fn render(&self) -> String {
        self.values
            .iter()
            .map(|(k, (v, s))| format!("{k} = {v}  # {s}\n"))
            .collect()
    }
}
