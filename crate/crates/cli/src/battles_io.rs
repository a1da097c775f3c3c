use std::path::Path;

use anyhow::{bail, Context, Result};

use prefagg_core::scoring::Battle;

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

/// Reads battles from CSV (by extension) or JSONL.
pub fn read_battles(path: &Path) -> Result<Vec<Battle>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if is_csv(path) {
        let mut r = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_reader(text.as_bytes());
        return r
            .deserialize()
            .enumerate()
            .map(|(i, row)| row.with_context(|| format!("{}: record {}", path.display(), i + 1)))
            .collect();
    }
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let b: Battle = serde_json::from_str(line).with_context(|| format!("{}:{}", path.display(), i + 1))?;
        out.push(b);
    }
    if out.is_empty() {
        bail!("{}: no battles", path.display());
    }
    Ok(out)
}

pub fn battles_csv(battles: &[Battle]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for b in battles {
        w.serialize(b)?;
    }
    w.into_inner().context("flushing battle CSV")
}

pub fn battles_jsonl(battles: &[Battle]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for b in battles {
        serde_json::to_writer(&mut out, b)?;
        out.push(b'\n');
    }
    Ok(out)
}
