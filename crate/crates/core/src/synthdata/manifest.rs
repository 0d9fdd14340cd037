//! Plain-text dataset manifest.
//!
//! One record per line, four tab-separated fields:
//!
//! ```text
//! image<TAB>mask<TAB>pair_id<TAB>change_mask
//! ```
//!
//! `pair_id` and `change_mask` are `-` when absent. Lines starting with `#`
//! and blank lines are ignored. Relative paths are resolved against the
//! manifest's directory.
//!
//! A change pair is two records sharing a `pair_id`: the earlier image has
//! no change mask, the later image carries the ground-truth change mask and
//! its own class mask.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestRecord {
    pub image: PathBuf,
    pub mask: PathBuf,
    pub pair_id: Option<String>,
    pub change_mask: Option<PathBuf>,
}

const HEADER: &str = "# image\tmask\tpair_id\tchange_mask";

fn field(v: Option<&str>) -> Option<&str> {
    v.filter(|s| *s != "-")
}

fn check_field(s: &str) -> Result<&str> {
    if s.is_empty() || s.contains(['\t', '\n', '\r']) {
        return Err(Error::Format(format!("manifest field {s:?} is empty or contains a tab/newline")));
    }
    Ok(s)
}

fn path_field(p: &Path) -> Result<String> {
    let s = p
        .to_str()
        .ok_or_else(|| Error::Format(format!("path {} is not UTF-8", p.display())))?;
    check_field(s).map(str::to_owned)
}

pub fn write_manifest(path: impl AsRef<Path>, records: &[ManifestRecord]) -> Result<()> {
    let mut out = String::new();
    out.push_str(HEADER);
    out.push('\n');
    for r in records {
        let pair = match &r.pair_id {
            Some(id) => check_field(id)?.to_owned(),
            None => "-".into(),
        };
        let change = match &r.change_mask {
            Some(p) => path_field(p)?,
            None => "-".into(),
        };
        out.push_str(&format!("{}\t{}\t{pair}\t{change}\n", path_field(&r.image)?, path_field(&r.mask)?));
    }
    let mut f = fs::File::create(path)?;
    f.write_all(out.as_bytes())?;
    Ok(())
}

/// Parses a manifest; relative paths come back joined to its directory.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 4 {
            return Err(Error::Format(format!(
                "{}:{}: expected 4 tab-separated fields, found {}",
                path.display(),
                i + 1,
                cols.len()
            )));
        }
        records.push(ManifestRecord {
            image: base.join(cols[0]),
            mask: base.join(cols[1]),
            pair_id: field(Some(cols[2])).map(str::to_owned),
            change_mask: field(Some(cols[3])).map(|p| base.join(p)),
        });
    }
    Ok(records)
}
