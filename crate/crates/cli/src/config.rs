//! Layered settings: built-in defaults < `VITFIELD_SEED` < config file < flags.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::CliError;

pub const SEED_ENV: &str = "VITFIELD_SEED";
pub const DEFAULT_SEED: u64 = 7;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Source {
    Default,
    Env,
    File,
    Flag,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Default => "default",
            Source::Env => "env",
            Source::File => "config",
            Source::Flag => "flag",
        })
    }
}

pub struct Settings {
    command: &'static str,
    values: BTreeMap<&'static str, (String, Source)>,
}

impl Settings {
    pub fn new(command: &'static str, defaults: &[(&'static str, String)]) -> Self {
        Self {
            command,
            values: defaults
                .iter()
                .map(|(k, v)| (*k, (v.clone(), Source::Default)))
                .collect(),
        }
    }

    /// `VITFIELD_SEED` replaces the built-in seed; a config file or flag still wins.
    pub fn seed_from_env(mut self) -> Result<Self, CliError> {
        if let (Ok(raw), Some(slot)) = (std::env::var(SEED_ENV), self.values.get_mut("seed")) {
            raw.trim()
                .parse::<u64>()
                .map_err(|_| CliError::Usage(format!("{SEED_ENV}={raw} is not an unsigned integer")))?;
            *slot = (raw.trim().to_string(), Source::Env);
        }
        Ok(self)
    }

    pub fn file(mut self, path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else { return Ok(self) };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let map = vitfield::kv::parse(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        for (k, v) in map {
            match self.values.get_mut(k.as_str()) {
                Some(slot) => *slot = (v, Source::File),
                None => {
                    return Err(CliError::Usage(format!(
                        "{}: unknown key `{k}` for `{}`",
                        path.display(),
                        self.command
                    )))
                }
            }
        }
        Ok(self)
    }

    pub fn flag(&mut self, key: &'static str, value: Option<impl ToString>) {
        if let Some(v) = value {
            self.values.insert(key, (v.to_string(), Source::Flag));
        }
    }

    pub fn raw(&self, key: &str) -> &str {
        &self
            .values
            .get(key)
            .unwrap_or_else(|| panic!("setting `{key}` is declared"))
            .0
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T, CliError> {
        let raw = self.raw(key);
        raw.parse()
            .map_err(|_| CliError::Usage(format!("invalid value `{raw}` for `{key}`")))
    }

    pub fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>, CliError> {
        let raw = self.raw(key);
        raw.split(',')
            .map(|v| {
                v.trim()
                    .parse()
                    .map_err(|_| CliError::Usage(format!("invalid entry `{v}` in `{key}={raw}`")))
            })
            .collect()
    }

    /// A path-valued setting that must be present.
    pub fn path(&self, key: &str) -> Result<std::path::PathBuf, CliError> {
        match self.raw(key) {
            "" => Err(CliError::Usage(format!("`--{}` is required", key.replace('_', "-")))),
            p => Ok(p.into()),
        }
    }

    /// The effective configuration; it parses back as a config file.
    pub fn render(&self) -> String {
        let mut out = format!(
            "# vitfield {} effective configuration\n# precedence: default < env ({SEED_ENV}) < config < flag\n",
            self.command
        );
        for (k, (v, src)) in &self.values {
            out.push_str(&format!("{k}={v}  # {src}\n"));
        }
        out
    }
}

/// Accepts `0.25` or `1/6`.
pub fn fraction(raw: &str) -> Result<f64, CliError> {
    let bad = || CliError::Usage(format!("invalid fraction `{raw}`"));
    let v = match raw.split_once('/') {
        Some((a, b)) => {
            let (a, b): (f64, f64) = (
                a.trim().parse().map_err(|_| bad())?,
                b.trim().parse().map_err(|_| bad())?,
            );
            a / b
        }
        None => raw.trim().parse().map_err(|_| bad())?,
    };
    if v > 0.0 && v < 1.0 {
        Ok(v)
    } else {
        Err(CliError::Usage(format!("fraction `{raw}` must lie in (0, 1)")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_override_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.txt");
        std::fs::write(&cfg, "lr=0.5\nbatch=4\n").unwrap();
        let mut s = Settings::new(
            "t",
            &[("lr", "1".into()), ("batch", "8".into()), ("epochs", "3".into())],
        )
        .file(Some(&cfg))
        .unwrap();
        s.flag("batch", Some(2));
        assert_eq!(s.get::<f64>("lr").unwrap(), 0.5);
        assert_eq!(s.get::<usize>("batch").unwrap(), 2);
        assert_eq!(s.get::<usize>("epochs").unwrap(), 3);
        let text = s.render();
        assert!(
            text.contains("lr=0.5  # config")
                && text.contains("batch=2  # flag")
                && text.contains("epochs=3  # default")
        );
        let back = vitfield::kv::parse(&text).unwrap();
        assert_eq!(back["batch"], "2");
        std::fs::write(&cfg, "bogus=1\n").unwrap();
        assert!(Settings::new("t", &[]).file(Some(&cfg)).is_err());
    }

    #[test]
    fn fractions() {
        assert!((fraction("1/6").unwrap() - 1.0 / 6.0).abs() < 1e-15);
        assert_eq!(fraction("0.2").unwrap(), 0.2);
        assert!(fraction("1").is_err() && fraction("x").is_err());
    }
}
