//! Plain `key=value` files: one pair per line, `#` starts a comment, blank
//! lines are ignored, later keys override earlier ones.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{read_file, Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KeyValues {
    pub entries: BTreeMap<String, String>,
}

impl KeyValues {
    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| format!("line {}: expected key=value, got {raw:?}", i + 1))?;
            let k = k.trim();
            if k.is_empty() {
                return Err(format!("line {}: empty key", i + 1));
            }
            entries.insert(k.to_string(), v.trim().to_string());
        }
        Ok(KeyValues { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = read_file(path)?;
        let text = String::from_utf8(bytes).map_err(|_| Error::format(path, "config is not UTF-8"))?;
        Self::parse(&text).map_err(|m| Error::format(path, m))
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn parse_as<T: std::str::FromStr>(&self, key: &str) -> std::result::Result<Option<T>, String> {
        self.get(key)
            .map(|v| v.parse::<T>().map_err(|_| format!("key {key}: cannot parse {v:?}")))
            .transpose()
    }

    pub fn floats(&self, key: &str) -> std::result::Result<Option<Vec<f64>>, String> {
        self.get(key)
            .map(|v| v.split(',').map(|x| x.trim().parse::<f64>().map_err(|_| format!("key {key}: cannot parse {x:?} as a number"))).collect())
            .transpose()
    }

    /// The pairs as `--key value` command-line arguments. `true` becomes a
    /// bare switch and `false` is dropped.
    pub fn to_args(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (k, v) in &self.entries {
            match v.as_str() {
                "true" => out.push(format!("--{k}")),
                "false" => {}
                _ => {
                    out.push(format!("--{k}"));
                    out.push(v.clone());
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_overrides() {
        let kv = KeyValues::parse("# header\nname = cifar\n\nmean=0.1, 0.2,0.3 # trailing\nname=svhn\n").unwrap();
        assert_eq!(kv.get("name"), Some("svhn"));
        assert_eq!(kv.floats("mean").unwrap(), Some(vec![0.1, 0.2, 0.3]));
        assert_eq!(kv.parse_as::<usize>("n").unwrap(), None);
        assert!(KeyValues::parse("novalue\n").is_err());
        assert!(KeyValues::parse("=3\n").is_err());
    }

    #[test]
    fn argument_form() {
        let kv = KeyValues::parse("epochs=3\nfirst-k=true\nquiet=false\n").unwrap();
        assert_eq!(kv.to_args(), vec!["--epochs", "3", "--first-k"]);
    }
}
