//! Run settings resolved from three layers: built-in default < config file
//! (`key = value` lines) < command-line flag. Every value actually read is
//! recorded, so the fingerprint covers the full effective configuration.

use denscore::{Error, Result};
use std::cell::RefCell;
use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

pub struct Settings {
    map: BTreeMap<String, String>,
    resolved: RefCell<BTreeMap<String, String>>,
}

impl Settings {
    pub fn new(config: Option<&Path>) -> Result<Self> {
        let mut map = BTreeMap::new();
        if let Some(path) = config {
            let text = std::fs::read_to_string(path)?;
            for (ln, raw) in text.lines().enumerate() {
                let line = raw.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (k, v) = line.split_once('=').ok_or_else(|| {
                    Error::config(format!("{}:{}: expected key = value", path.display(), ln + 1))
                })?;
                let key = k.trim().to_string();
                if map.insert(key.clone(), v.trim().to_string()).is_some() {
                    return Err(Error::config(format!(
                        "{}:{}: duplicate key '{key}'",
                        path.display(),
                        ln + 1
                    )));
                }
            }
        }
        Ok(Settings { map, resolved: RefCell::new(BTreeMap::new()) })
    }

    /// A present flag overrides any file value for `key`.
    pub fn flag(&mut self, key: &str, v: Option<impl Display>) {
        if let Some(v) = v {
            self.map.insert(key.to_string(), v.to_string());
        }
    }

    pub fn get<T: FromStr + Display>(&self, key: &str, default: T) -> Result<T> {
        let out = match self.map.get(key) {
            Some(raw) => raw
                .parse::<T>()
                .map_err(|_| Error::config(format!("bad value '{raw}' for '{key}'")))?,
            None => default,
        };
        self.resolved.borrow_mut().insert(key.to_string(), out.to_string());
        Ok(out)
    }

    pub fn get_list<T: FromStr + Display>(&self, key: &str, default: &[T]) -> Result<Vec<T>>
    where
        T: Clone,
    {
        let out = match self.map.get(key) {
            Some(raw) => raw
                .split(',')
                .map(|p| {
                    p.trim()
                        .parse::<T>()
                        .map_err(|_| Error::config(format!("bad value '{p}' in list '{key}'")))
                })
                .collect::<Result<Vec<T>>>()?,
            None => default.to_vec(),
        };
        let shown: Vec<String> = out.iter().map(|v| v.to_string()).collect();
        self.resolved.borrow_mut().insert(key.to_string(), shown.join(","));
        Ok(out)
    }

    /// Record a derived value (e.g. a loaded model fingerprint) so it enters
    /// the configuration hash.
    pub fn note(&self, key: &str, value: impl Display) {
        self.resolved.borrow_mut().insert(key.to_string(), value.to_string());
    }

    /// FNV-1a over `command` plus every resolved key=value pair.
    pub fn fingerprint(&self, command: &str) -> u64 {
        let mut text = String::from(command);
        for (k, v) in self.resolved.borrow().iter() {
            text.push('\n');
            text.push_str(k);
            text.push('=');
            text.push_str(v);
        }
        denscore::model::checkpoint::fnv1a(text.as_bytes())
    }
}
