//! Deterministic file output.
//!
//! Numbers are written with Rust's shortest round-trip formatting, so the
//! same inputs always give byte-identical CSVs and a reader recovers the
//! exact `f64` that was computed.

use std::path::{Path, PathBuf};

use obscaling::{Error, Result};

pub fn num(v: f64) -> String {
    format!("{v}")
}

pub fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

/// File-name-safe version of a task name.
pub fn slug(name: &str) -> String {
    let s: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
        .collect();
    if s.is_empty() { "task".into() } else { s }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
    .in_stage("write")
}

pub struct OutDir {
    root: PathBuf,
    written: Vec<PathBuf>,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root).map_err(io_err(root))?;
        Ok(OutDir {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn write_text(&mut self, name: &str, text: &str) -> Result<PathBuf> {
        let path = self.root.join(name);
        std::fs::write(&path, text).map_err(io_err(&path))?;
        self.written.push(path.clone());
        Ok(path)
    }

    pub fn write_csv<I>(&mut self, name: &str, header: &[&str], rows: I) -> Result<PathBuf>
    where
        I: IntoIterator<Item = Vec<String>>,
    {
        let mut wtr = csv::Writer::from_writer(Vec::new());
        let csv_err = |source| {
            Error::Csv {
                origin: name.to_string(),
                source,
            }
            .in_stage("write")
        };
        wtr.write_record(header).map_err(csv_err)?;
        for row in rows {
            wtr.write_record(&row).map_err(csv_err)?;
        }
        let bytes = wtr
            .into_inner()
            .map_err(|e| Error::Config(format!("{name}: {e}")).in_stage("write"))?;
        self.write_text(name, &String::from_utf8_lossy(&bytes))
    }

    /// Paths written so far, in order.
    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_round_trip() {
        for v in [0.1, 1.0 / 3.0, 8.4e22, -2.5e-12] {
            assert_eq!(num(v).parse::<f64>().unwrap(), v);
        }
        assert_eq!(opt(None), "");
    }

    #[test]
    fn slugs_are_file_safe() {
        assert_eq!(slug("GSM CoT + SC"), "GSM_CoT___SC");
        assert_eq!(slug("3-Digit"), "3-Digit");
        assert_eq!(slug(""), "task");
    }

    #[test]
    fn csv_quotes_when_needed() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = OutDir::create(dir.path()).unwrap();
        let p = out
            .write_csv("a.csv", &["x", "y"], vec![vec!["a,b".into(), num(0.5)]])
            .unwrap();
        assert_eq!(std::fs::read_to_string(p).unwrap(), "x,y\n\"a,b\",0.5\n");
        assert_eq!(out.written().len(), 1);
    }
}
