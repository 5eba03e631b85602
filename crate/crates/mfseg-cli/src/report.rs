//! Structured text records with stable key order.
//!
//! Every report, manifest, score record, and reproduction table is a
//! plain-text sequence of `key: value` lines, one per key, in the order
//! the keys were pushed. Two runs with the same inputs render the same
//! bytes, so tests can diff artifacts directly.
//!
//! Wall-clock entries are the one intentional exception to replay
//! equality: their keys always start with `timing-`, so a comparison can
//! drop them with [`strip_timings`] and require byte identity on the
//! rest.

use std::fmt::Display;
use std::fs;
use std::path::Path;

use mfseg::{MfError, Result};

#[derive(Clone, Debug, Default)]
pub struct Record {
    lines: Vec<(String, String)>,
}

impl Record {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, key: impl Into<String>, value: impl Display) {
        self.lines.push((key.into(), value.to_string()));
    }

    /// Push a float rounded to `prec` decimals (fixed notation keeps the
    /// rendering stable across runs).
    pub fn push_f(&mut self, key: impl Into<String>, value: f64, prec: usize) {
        self.lines.push((key.into(), format!("{value:.prec$}")));
    }

    /// Push a wall-clock duration in seconds under a `timing-` key.
    pub fn push_timing(&mut self, phase: &str, seconds: f64) {
        self.lines
            .push((format!("timing-{phase}"), format!("{seconds:.3}")));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.lines
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.lines {
            out.push_str(k);
            out.push_str(": ");
            out.push_str(v);
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.render())
            .map_err(|e| MfError::Config(format!("{}: cannot write: {e}", path.display())))
    }
}

/// Parse a rendered record back into key/value pairs (used by parity
/// checks; the renderer never emits malformed lines).
pub fn parse(text: &str) -> Vec<(String, String)> {
    text.lines()
        .filter_map(|l| {
            l.split_once(": ")
                .map(|(k, v)| (k.to_string(), v.to_string()))
        })
        .collect()
}

/// Drop `timing-` lines so replay comparisons ignore wall-clock noise.
pub fn strip_timings(text: &str) -> String {
    text.lines()
        .filter(|l| !l.starts_with("timing-"))
        .map(|l| format!("{l}\n"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_preserves_push_order() {
        let mut r = Record::new();
        r.push("command", "segment");
        r.push_f("error-pct", 13.25, 4);
        r.push_timing("total", 1.5);
        let text = r.render();
        assert_eq!(
            text,
            "command: segment\nerror-pct: 13.2500\ntiming-total: 1.500\n"
        );
        assert_eq!(r.get("command"), Some("segment"));
        assert_eq!(r.get("missing"), None);
    }

    #[test]
    fn parse_inverts_render_and_timings_strip() {
        let mut r = Record::new();
        r.push("a", 1);
        r.push_timing("fit", 0.25);
        r.push("b", "x y");
        let text = r.render();
        let pairs = parse(&text);
        assert_eq!(pairs.len(), 3);
        assert_eq!(pairs[2], ("b".to_string(), "x y".to_string()));
        assert_eq!(strip_timings(&text), "a: 1\nb: x y\n");
    }
}
