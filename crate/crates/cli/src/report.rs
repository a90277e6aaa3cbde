//! Output files: CSV tables, JSON documents and the digest inventory.

use std::fs;
use std::path::{Path, PathBuf};

use isaacs_core::pde::{ConvergenceReport, ValueField};
use serde::Serialize;
use sha2::{Digest, Sha256};

/// Decimal scientific notation with 17 significant digits.
pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FileEntry {
    pub name: String,
    pub sha256: String,
    pub bytes: usize,
}

/// Output directory that records every file it writes.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    files: Vec<FileEntry>,
}

impl OutputDir {
    pub fn create(root: &Path) -> std::io::Result<Self> {
        fs::create_dir_all(root)?;
        Ok(Self {
            root: root.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> std::io::Result<()> {
        fs::write(self.root.join(name), bytes)?;
        self.files.retain(|f| f.name != name);
        self.files.push(FileEntry {
            name: name.to_string(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len(),
        });
        Ok(())
    }

    pub fn write_json<S: Serialize>(&mut self, name: &str, value: &S) -> std::io::Result<()> {
        let mut text = serde_json::to_string_pretty(value).map_err(std::io::Error::other)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    pub fn files(&self) -> &[FileEntry] {
        &self.files
    }
}

/// `t,x,value,mask`, time-major then space-ascending.
pub fn values_csv(field: &ValueField<f64>) -> String {
    let grid = &field.grid;
    let mut out = String::with_capacity(field.values.len() * 64);
    out.push_str("t,x,value,mask\n");
    for k in field.levels() {
        let t = num(grid.t(k));
        let vals = field.slice(k);
        let mask = field.mask_slice(k);
        for i in 0..grid.nx() {
            out.push_str(&t);
            out.push(',');
            out.push_str(&num(grid.x(i)));
            out.push(',');
            out.push_str(&num(vals[i]));
            out.push(',');
            out.push_str(mask[i].as_str());
            out.push('\n');
        }
    }
    out
}

/// `m,sup_gap_above,sup_gap_below,diagonal_gap,monotone_above,monotone_below`.
pub fn sweep_csv(report: &ConvergenceReport<f64>) -> String {
    let mut out =
        String::from("m,sup_gap_above,sup_gap_below,diagonal_gap,monotone_above,monotone_below\n");
    for (i, &m) in report.levels.iter().enumerate() {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            num(m),
            num(report.sup_gap_above[i]),
            num(report.sup_gap_below[i]),
            num(report.diagonal_gap[i]),
            report.monotone_above,
            report.monotone_below
        ));
    }
    out
}
