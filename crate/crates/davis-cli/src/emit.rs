//! Artifact emission: the summary JSON on standard output or disk, CSV
//! tables beside the summary, and the staging that keeps the writes atomic.

use std::fs;
use std::path::{Path, PathBuf};

use davis_core::{Error, Result};
use serde_json::{json, Value};

use crate::config::ExperimentConfig;

/// Version tag of the JSON summary layout.
pub const SUMMARY_SCHEMA: &str = "davis-lab summary v1";
/// First line of every CSV artifact.
pub const CSV_SCHEMA_LINE: &str = "# davis-lab schema v1";

/// Plot-ready table: a header row plus stringified records.
pub struct Table {
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

/// Formats a float so it round-trips and stays readable: plain notation in
/// the mid range, scientific outside it (plain `{}` would print 1e-12 as a
/// dozen zeros).
pub fn num(v: f64) -> String {
    if v == 0.0 || (v.abs() >= 1e-4 && v.abs() < 1e15) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

fn render_csv(t: &Table) -> String {
    let mut s = String::from(CSV_SCHEMA_LINE);
    s.push('\n');
    s.push_str(&t.columns.join(","));
    s.push('\n');
    for row in &t.rows {
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

/// Emits one run's artifacts. Without an output path the summary goes to
/// standard output and the table is skipped (its rows are all in the
/// summary anyway); with one, the summary lands at the path and the table
/// beside it under extension `csv`, both written atomically.
pub fn deliver(cfg: &ExperimentConfig, result: Value, table: Option<Table>) -> Result<()> {
    let summary = json!({ "schema": SUMMARY_SCHEMA, "config": cfg, "result": result });
    let mut text =
        serde_json::to_string_pretty(&summary).expect("summary serialization cannot fail");
    text.push('\n');
    let Some(out) = &cfg.out else {
        print!("{text}");
        return Ok(());
    };
    let mut files = vec![(out.clone(), text)];
    if let Some(t) = &table {
        files.push((csv_sibling(out)?, render_csv(t)));
    }
    write_atomically(&files)?;
    for (path, _) in &files {
        eprintln!("wrote {}", path.display());
    }
    Ok(())
}

fn csv_sibling(out: &Path) -> Result<PathBuf> {
    let sibling = out.with_extension("csv");
    if sibling == *out {
        return Err(Error::InvalidArgument(
            "the output path ends in .csv, which the table would overwrite; pick a .json path"
                .into(),
        ));
    }
    Ok(sibling)
}

/// Writes every file through a temporary sibling and renames only once all
/// content is on disk, so a failure never leaves partial artifacts behind.
pub fn write_atomically(files: &[(PathBuf, String)]) -> Result<()> {
    let mut staged: Vec<(PathBuf, &Path)> = Vec::new();
    for (path, text) in files {
        if let Err(e) = stage(path, text, &mut staged) {
            for (tmp, _) in &staged {
                let _ = fs::remove_file(tmp);
            }
            return Err(e);
        }
    }
    // Rename is the commit point; done last, in one pass.
    for i in 0..staged.len() {
        let (tmp, path) = &staged[i];
        if let Err(e) = fs::rename(tmp, path) {
            for (left, _) in &staged[i..] {
                let _ = fs::remove_file(left);
            }
            return Err(Error::InvalidArgument(format!(
                "cannot move {} into place: {e}",
                path.display()
            )));
        }
    }
    Ok(())
}

fn stage<'a>(path: &'a Path, text: &str, staged: &mut Vec<(PathBuf, &'a Path)>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)
            .map_err(|e| Error::InvalidArgument(format!("cannot create {}: {e}", dir.display())))?;
    }
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = path.with_file_name(format!("{name}.tmp.{}", std::process::id()));
    fs::write(&tmp, text)
        .map_err(|e| Error::InvalidArgument(format!("cannot write {}: {e}", tmp.display())))?;
    staged.push((tmp, path));
    Ok(())
}
