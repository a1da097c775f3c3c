use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::{json, Value};

use crate::settings::{Format, RunConfig};

pub const TOOL: &str = "prefagg";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// A flat table for CSV export.
#[derive(Debug, Clone, Default)]
pub struct Table {
    pub name: String,
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: &str, headers: &[&str]) -> Table {
        Table {
            name: name.to_string(),
            headers: headers.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.headers.len());
        self.rows.push(row);
    }

    fn to_csv(&self, preamble: &str) -> Result<Vec<u8>> {
        let mut buf = preamble.as_bytes().to_vec();
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(&self.headers)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush()?;
        drop(w);
        Ok(buf)
    }
}

pub fn num(x: f64) -> String {
    x.to_string()
}

pub fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

/// Everything a command produces.
pub struct Artifact {
    pub command: &'static str,
    pub corpus_hash: String,
    pub result: Value,
    pub tables: Vec<Table>,
    /// Extra files written verbatim (name, bytes), e.g. JSONL exports.
    pub files: Vec<(String, Vec<u8>)>,
}

impl Artifact {
    pub fn new(command: &'static str, corpus_hash: String, result: &impl Serialize) -> Result<Artifact> {
        Ok(Artifact {
            command,
            corpus_hash,
            result: serde_json::to_value(result).context("serializing result")?,
            tables: Vec::new(),
            files: Vec::new(),
        })
    }

    pub fn with_table(mut self, table: Table) -> Artifact {
        self.tables.push(table);
        self
    }

    fn envelope(&self, config: &RunConfig) -> Result<Vec<u8>> {
        let doc = json!({
            "tool": TOOL,
            "version": VERSION,
            "command": self.command,
            "config": config,
            "corpus_hash": self.corpus_hash,
            "result": self.result,
        });
        let mut bytes = serde_json::to_vec_pretty(&doc)?;
        bytes.push(b'\n');
        Ok(bytes)
    }

    fn csv_preamble(&self, config: &RunConfig) -> Result<String> {
        Ok(format!(
            "# {TOOL} {VERSION} {} corpus_hash={} config={}\n",
            self.command,
            self.corpus_hash,
            serde_json::to_string(config)?
        ))
    }

    /// Writes to `config.out`, or to stdout when no directory is set.
    pub fn emit(&self, config: &RunConfig) -> Result<()> {
        let mut outputs: Vec<(String, Vec<u8>)> = Vec::new();
        if config.wants(Format::Json) {
            outputs.push((format!("{}.json", self.command), self.envelope(config)?));
        }
        if config.wants(Format::Csv) {
            let preamble = self.csv_preamble(config)?;
            for t in &self.tables {
                outputs.push((format!("{}.csv", t.name), t.to_csv(&preamble)?));
            }
        }
        outputs.extend(self.files.iter().cloned());
        match &config.out {
            Some(dir) => write_all_atomic(dir, &outputs),
            None => {
                let mut out = std::io::stdout().lock();
                for (_, bytes) in outputs.iter().filter(|(n, _)| !self.files.iter().any(|(f, _)| f == n)) {
                    out.write_all(bytes)?;
                }
                Ok(())
            }
        }
    }
}

/// Stages every file in `dir` before renaming any into place, so a failure
/// leaves no partial output behind.
pub fn write_all_atomic(dir: &Path, files: &[(String, Vec<u8>)]) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut staged = Vec::with_capacity(files.len());
    for (name, bytes) in files {
        let mut tmp = tempfile::NamedTempFile::new_in(dir).with_context(|| format!("staging {name}"))?;
        tmp.write_all(bytes)?;
        tmp.as_file().sync_all()?;
        staged.push((tmp, dir.join(name)));
    }
    for (tmp, path) in staged {
        tmp.persist(&path)
            .with_context(|| format!("writing {}", path.display()))?;
        log::info!("wrote {}", path.display());
    }
    Ok(())
}
