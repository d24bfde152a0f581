use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::CliError;

/// Provenance stamped on every artifact: config hash and crate versions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Header {
    pub config_sha256: String,
    pub korn_shell: &'static str,
    pub korn_shell_cli: &'static str,
}

impl Header {
    pub fn new(config_hash: String) -> Self {
        Self { config_sha256: config_hash, korn_shell: korn_shell::VERSION, korn_shell_cli: env!("CARGO_PKG_VERSION") }
    }

    pub fn line(&self) -> String {
        format!(
            "# config_sha256={} korn-shell={} korn-shell-cli={}",
            self.config_sha256, self.korn_shell, self.korn_shell_cli
        )
    }
}

/// Output directory writer. Files are written whole, after all results
/// are in.
pub struct OutDir {
    root: PathBuf,
    header: Header,
}

impl OutDir {
    pub fn create(root: &Path, header: Header) -> Result<Self, CliError> {
        fs::create_dir_all(root)?;
        Ok(Self { root: root.to_path_buf(), header })
    }

    pub fn path(&self) -> &Path {
        &self.root
    }

    pub fn header(&self) -> &Header {
        &self.header
    }

    /// A header line, the column line, then the rows and `#` footer lines.
    pub fn csv(&self, name: &str, columns: &[&str], rows: &[Vec<String>], footer: &[String]) -> Result<PathBuf, CliError> {
        let mut buf = Vec::new();
        writeln!(buf, "{}", self.header.line())?;
        writeln!(buf, "{}", columns.join(","))?;
        for r in rows {
            writeln!(buf, "{}", r.join(","))?;
        }
        for f in footer {
            writeln!(buf, "# {f}")?;
        }
        self.write(name, &buf)
    }

    /// Raw text after the header line.
    pub fn text(&self, name: &str, body: &[u8]) -> Result<PathBuf, CliError> {
        let mut buf = Vec::new();
        writeln!(buf, "{}", self.header.line())?;
        buf.extend_from_slice(body);
        self.write(name, &buf)
    }

    /// `{"header": ..., "result": ...}`
    pub fn json<T: Serialize>(&self, name: &str, result: &T) -> Result<PathBuf, CliError> {
        #[derive(Serialize)]
        struct Doc<'a, T> {
            header: &'a Header,
            result: &'a T,
        }
        let mut buf = serde_json::to_vec_pretty(&Doc { header: &self.header, result })
            .map_err(|e| CliError::Io(std::io::Error::other(e)))?;
        buf.push(b'\n');
        self.write(name, &buf)
    }

    /// Two-column `log h  log value` file under `plots/`; skips nonpositive values.
    pub fn plot(&self, name: &str, h: &[f64], values: &[f64]) -> Result<PathBuf, CliError> {
        let mut buf = Vec::new();
        writeln!(buf, "{}", self.header.line())?;
        writeln!(buf, "# log_h log_{name}")?;
        for (x, y) in h.iter().zip(values) {
            if *x > 0.0 && *y > 0.0 {
                writeln!(buf, "{:e} {:e}", x.ln(), y.ln())?;
            }
        }
        fs::create_dir_all(self.root.join("plots"))?;
        self.write(&format!("plots/{name}.dat"), &buf)
    }

    fn write(&self, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        let p = self.root.join(name);
        fs::write(&p, bytes)?;
        Ok(p)
    }
}

/// Shortest round-trip float formatting.
pub fn num(v: f64) -> String {
    format!("{v:e}")
}
