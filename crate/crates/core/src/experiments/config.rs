use crate::error::{Error, Result};

/// Ordered `key=value` pairs.
pub type ConfigMap = Vec<(String, String)>;

/// Parses `key=value` lines. Blank lines and lines starting with `#` are
/// skipped; keys may carry a leading `--`.
pub fn parse_config(text: &str) -> Result<ConfigMap> {
    let mut out = ConfigMap::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("line {}: expected key=value", no + 1)))?;
        let k = k.trim().trim_start_matches("--");
        if k.is_empty() {
            return Err(Error::Parse(format!("line {}: empty key", no + 1)));
        }
        out.push((k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}
