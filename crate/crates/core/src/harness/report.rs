use crate::error::Result;
use std::fmt::Write as _;
use std::path::Path;

/// A CSV table with a `# config_hash=<hex> seed=<u64>` footer.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvReport {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub config_hash: String,
    pub seed: u64,
}

impl CsvReport {
    pub fn new(header: &[&str], config_hash: String, seed: u64) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
            config_hash,
            seed,
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    pub fn render(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        let _ = writeln!(out, "# config_hash={} seed={}", self.config_hash, self.seed);
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.render())?;
        Ok(())
    }
}

/// Shortest round-trip text: plain decimal for moderate magnitudes,
/// scientific otherwise; `-inf`, `inf` and `NaN` spelled out.
pub fn num(x: f64) -> String {
    let m = x.abs();
    if x == 0.0 || !x.is_finite() || (1e-4..1e15).contains(&m) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}
