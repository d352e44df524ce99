//! Flat `key = value` configuration files.
//!
//! One setting per line; `#` starts a comment; blank lines are ignored.
//! Recognised keys:
//!
//! | key            | applies to                         |
//! |----------------|------------------------------------|
//! | `theta_rel`    | [`PreprocessConfig::theta_rel`]    |
//! | `sigma_rel`    | [`PreprocessConfig::sigma_rel`]    |
//! | `margin_cells` | [`PreprocessConfig::margin_cells`] |
//! | `delta`        | [`SolverConfig::delta`]            |
//! | `epsilon`      | [`SolverConfig::epsilon_filter`]   |
//! | `tol`          | [`SolverConfig::newton_tol`]       |
//! | `max_iters`    | [`SolverConfig::max_newton_iters`] |
//! | `filtered`     | [`SolverConfig::use_filtered`]     |
//! | `fixed_node`   | [`SolverConfig::fixed_node`], as `i,j` |

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::preprocess::PreprocessConfig;
use crate::solver::SolverConfig;

pub const KEYS: [&str; 9] =
    ["theta_rel", "sigma_rel", "margin_cells", "delta", "epsilon", "tol", "max_iters", "filtered", "fixed_node"];

/// Parsed settings with the line each came from.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct KeyValues {
    entries: BTreeMap<String, (String, usize)>,
}

impl FromStr for KeyValues {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (k, raw) in text.lines().enumerate() {
            let line = k + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(Error::Parse { line, msg: format!("expected key = value, got {content:?}") });
            };
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                return Err(Error::Parse { line, msg: format!("unknown key {key:?}") });
            }
            if entries.insert(key.to_string(), (value.to_string(), line)).is_some() {
                return Err(Error::Parse { line, msg: format!("duplicate key {key:?}") });
            }
        }
        Ok(KeyValues { entries })
    }
}

impl KeyValues {
    pub fn read(path: &Path) -> Result<Self> {
        std::fs::read_to_string(path)?.parse()
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(v, _)| v.as_str())
    }

    fn parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        let Some((v, line)) = self.entries.get(key) else { return Ok(None) };
        v.parse()
            .map(Some)
            .map_err(|_| Error::Parse { line: *line, msg: format!("bad value {v:?} for {key}") })
    }

    pub fn apply_preprocess(&self, cfg: &mut PreprocessConfig) -> Result<()> {
        if let Some(v) = self.parsed("theta_rel")? {
            cfg.theta_rel = v;
        }
        if let Some(v) = self.parsed("sigma_rel")? {
            cfg.sigma_rel = v;
        }
        if let Some(v) = self.parsed("margin_cells")? {
            cfg.margin_cells = v;
        }
        cfg.validate()
    }

    pub fn apply_solver(&self, cfg: &mut SolverConfig) -> Result<()> {
        if let Some(v) = self.parsed("delta")? {
            cfg.delta = Some(v);
        }
        if let Some(v) = self.parsed("epsilon")? {
            cfg.epsilon_filter = Some(v);
        }
        if let Some(v) = self.parsed("tol")? {
            cfg.newton_tol = v;
        }
        if let Some(v) = self.parsed("max_iters")? {
            cfg.max_newton_iters = v;
        }
        if let Some(v) = self.parsed("filtered")? {
            cfg.use_filtered = v;
        }
        if let Some((v, line)) = self.entries.get("fixed_node") {
            cfg.fixed_node = Some(
                parse_node(v).ok_or_else(|| Error::Parse { line: *line, msg: format!("bad node {v:?}, expected i,j") })?,
            );
        }
        cfg.validate()
    }
}

/// Parse a node index written `i,j`.
pub fn parse_node(s: &str) -> Option<(usize, usize)> {
    let (i, j) = s.split_once(',')?;
    Some((i.trim().parse().ok()?, j.trim().parse().ok()?))
}
