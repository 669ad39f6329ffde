//! CSV and JSON writers. Floats use Rust's shortest round-trip formatting, so
//! identical runs give identical bytes.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::CliError;

pub struct OutputDir {
    root: PathBuf,
    written: Vec<PathBuf>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root).map_err(|e| CliError::Io(format!("{}: {e}", root.display())))?;
        Ok(OutputDir {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }

    fn write(&mut self, name: &str, bytes: Vec<u8>) -> Result<(), CliError> {
        let path = self.root.join(name);
        fs::write(&path, bytes).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        self.written.push(path);
        Ok(())
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut bytes =
            serde_json::to_vec_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
        bytes.push(b'\n');
        self.write(name, bytes)
    }

    /// Header row then data rows.
    pub fn csv(
        &mut self,
        name: &str,
        header: &[String],
        rows: &[Vec<String>],
    ) -> Result<(), CliError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| CliError::Io(e.to_string());
        w.write_record(header).map_err(io)?;
        for r in rows {
            w.write_record(r).map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::Io(e.to_string()))?;
        self.write(name, bytes)
    }

    /// Square grid with bin labels on both axes (rows signal, columns idler).
    pub fn grid(
        &mut self,
        name: &str,
        corner: &str,
        labels: &[i64],
        value: impl Fn(usize, usize) -> f64,
    ) -> Result<(), CliError> {
        let mut header = vec![corner.to_string()];
        header.extend(labels.iter().map(|l| l.to_string()));
        let rows: Vec<Vec<String>> = labels
            .iter()
            .enumerate()
            .map(|(r, l)| {
                let mut row = vec![l.to_string()];
                row.extend((0..labels.len()).map(|c| value(r, c).to_string()));
                row
            })
            .collect();
        self.csv(name, &header, &rows)
    }
}

pub fn header(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

pub fn row(values: &[f64]) -> Vec<String> {
    values.iter().map(|v| v.to_string()).collect()
}
