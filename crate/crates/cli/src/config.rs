//! Structured text config files (`key = value` per line, `#` comments) and
//! the flag-over-file resolution used by every subcommand. The fully
//! resolved configuration is echoed to the output directory before any
//! computation runs.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::CmdError;

#[derive(Default)]
pub struct FileConfig(BTreeMap<String, String>);

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CmdError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path)
            .map_err(|e| CmdError::Core(deformreg::Error::io(path, e)))?;
        let mut map = BTreeMap::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(CmdError::Usage(format!(
                    "config line without '=': {line:?}"
                )));
            };
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(Self(map))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, CmdError> {
        match self.0.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse::<T>().map(Some).map_err(|_| {
                CmdError::Usage(format!("config key {key} has unparseable value {raw:?}"))
            }),
        }
    }

    /// flag > file > default.
    pub fn resolve<T: FromStr>(
        &self,
        flag: Option<T>,
        key: &str,
        default: T,
    ) -> Result<T, CmdError> {
        Ok(flag.or(self.get(key)?).unwrap_or(default))
    }
}

/// Accumulates the resolved configuration and writes `config.txt`.
pub struct ConfigEcho {
    lines: Vec<(String, String)>,
}

impl ConfigEcho {
    pub fn new(command: &str) -> Self {
        Self {
            lines: vec![("command".to_string(), command.to_string())],
        }
    }

    pub fn set(&mut self, key: &str, value: impl std::fmt::Display) -> &mut Self {
        self.lines.push((key.to_string(), value.to_string()));
        self
    }

    pub fn write(&self, out_dir: &Path) -> Result<(), CmdError> {
        let mut text = String::new();
        for (k, v) in &self.lines {
            text.push_str(&format!("{k} = {v}\n"));
        }
        let path = out_dir.join("config.txt");
        fs::write(&path, text).map_err(|e| CmdError::Core(deformreg::Error::io(path, e)))
    }
}

pub fn ensure_out_dir(path: &Path) -> Result<(), CmdError> {
    fs::create_dir_all(path).map_err(|e| CmdError::Core(deformreg::Error::io(path, e)))
}
