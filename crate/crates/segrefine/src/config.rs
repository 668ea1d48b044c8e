//! Flat key=value config files and flag/file/default precedence.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use segrefine_core::model::RefineMode;

/// Parsed `key=value` config file. Blank lines and `#` comments are
/// skipped; later duplicate keys win.
#[derive(Debug, Default, Clone)]
pub struct FileConfig {
    values: HashMap<String, String>,
}

impl FileConfig {
    pub fn load(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(Self::parse(&text))
    }

    pub fn parse(text: &str) -> Self {
        let mut values = HashMap::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some((k, v)) = line.split_once('=') {
                values.insert(k.trim().to_string(), v.trim().to_string());
            }
        }
        FileConfig { values }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|s| s.as_str())
    }

    /// Command-line flag > config file > default.
    pub fn resolve<T: FromStr + Clone>(
        &self,
        flag: Option<T>,
        key: &str,
        default: T,
    ) -> Result<T, String> {
        if let Some(v) = flag {
            return Ok(v);
        }
        match self.get(key) {
            Some(raw) => raw
                .parse()
                .map_err(|_| format!("config key {key}: cannot parse {raw:?}")),
            None => Ok(default),
        }
    }

    /// Same precedence for values with no default (paths, templates).
    pub fn resolve_opt(&self, flag: Option<String>, key: &str) -> Option<String> {
        flag.or_else(|| self.get(key).map(|s| s.to_string()))
    }

    pub fn resolve_path(&self, flag: Option<PathBuf>, key: &str) -> Option<PathBuf> {
        flag.or_else(|| self.get(key).map(PathBuf::from))
    }
}

pub fn parse_mode(s: &str) -> Result<RefineMode, String> {
    match s {
        "direct" => Ok(RefineMode::Direct),
        "residual" => Ok(RefineMode::Residual),
        other => Err(format!("mode must be 'direct' or 'residual', got {other:?}")),
    }
}

/// `A:B`, 1-based inclusive.
pub fn parse_range(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once(':').ok_or_else(|| format!("range must be A:B, got {s:?}"))?;
    let a: usize = a.parse().map_err(|_| format!("bad range start {a:?}"))?;
    let b: usize = b.parse().map_err(|_| format!("bad range end {b:?}"))?;
    if a == 0 || b < a {
        return Err(format!("range {a}:{b} is empty or zero-based"));
    }
    Ok((a, b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence_flag_over_file_over_default() {
        let cfg = FileConfig::parse("rho = 25\n# comment\nepochs=4\n");
        assert_eq!(cfg.resolve(Some(10usize), "rho", 50).unwrap(), 10);
        assert_eq!(cfg.resolve(None::<usize>, "rho", 50).unwrap(), 25);
        assert_eq!(cfg.resolve(None::<usize>, "seed", 7).unwrap(), 7);
        assert!(cfg.resolve(None::<usize>, "epochs", 1).unwrap() == 4);
    }

    #[test]
    fn bad_values_are_reported() {
        let cfg = FileConfig::parse("rho=abc\n");
        assert!(cfg.resolve(None::<usize>, "rho", 50).is_err());
    }

    #[test]
    fn range_parsing() {
        assert_eq!(parse_range("51:100").unwrap(), (51, 100));
        assert!(parse_range("0:5").is_err());
        assert!(parse_range("9:5").is_err());
        assert!(parse_range("5").is_err());
    }

    #[test]
    fn mode_parsing() {
        assert_eq!(parse_mode("direct").unwrap(), RefineMode::Direct);
        assert_eq!(parse_mode("residual").unwrap(), RefineMode::Residual);
        assert!(parse_mode("both").is_err());
    }
}
