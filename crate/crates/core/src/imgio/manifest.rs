//! CSV manifests listing bilateral pairs.
//!
//! Required columns: `pair_id,right_path,left_path,view,y_r,y_l`. Optional:
//! `y_asy`, `mask_r_path`, `mask_l_path`, `split`. Relative paths resolve
//! against the manifest's directory.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::{asymmetry_label, View};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Validation(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    pub pair_id: String,
    pub right_path: PathBuf,
    pub left_path: PathBuf,
    pub view: View,
    pub y_r: bool,
    pub y_l: bool,
    pub y_asy: bool,
    pub mask_r_path: Option<PathBuf>,
    pub mask_l_path: Option<PathBuf>,
    pub split: Option<Split>,
}

impl ManifestRow {
    pub fn has_masks(&self) -> bool {
        self.mask_r_path.is_some() || self.mask_l_path.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    pub rows: Vec<ManifestRow>,
    /// Directory relative paths are resolved against.
    pub base_dir: PathBuf,
}

impl Manifest {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Rows of one split; rows without a split column belong to every split.
    pub fn split(&self, split: Split) -> Manifest {
        Manifest {
            rows: self.rows.iter().filter(|r| r.split.map_or(true, |s| s == split)).cloned().collect(),
            base_dir: self.base_dir.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for row in &self.rows {
            if !seen.insert((row.split, row.pair_id.as_str())) {
                return Err(Error::Validation(format!("duplicate pair_id `{}`", row.pair_id)));
            }
            if row.y_asy != asymmetry_label(row.y_r, row.y_l) {
                return Err(Error::Validation(format!("{}: y_asy inconsistent with side labels", row.pair_id)));
            }
        }
        Ok(())
    }
}

fn parse_bit(s: &str) -> std::result::Result<bool, String> {
    match s.trim() {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(format!("expected 0 or 1, got `{other}`")),
    }
}

fn opt_path(s: Option<&str>) -> Option<PathBuf> {
    s.map(str::trim).filter(|s| !s.is_empty()).map(PathBuf::from)
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |row: usize, msg: String| Error::Parse { path: path.to_path_buf(), row, msg };
    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| parse_err(0, e.to_string()))?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let required = ["pair_id", "right_path", "left_path", "view", "y_r", "y_l"];
    let mut idx = [0usize; 6];
    for (k, name) in required.iter().enumerate() {
        idx[k] = col(name).ok_or_else(|| parse_err(0, format!("missing column `{name}`")))?;
    }
    let (c_asy, c_mr, c_ml, c_split) = (col("y_asy"), col("mask_r_path"), col("mask_l_path"), col("split"));
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut manifest = Manifest { rows: Vec::new(), base_dir };
    for (i, record) in reader.records().enumerate() {
        let row_no = i + 1;
        let rec = record.map_err(|e| parse_err(row_no, e.to_string()))?;
        let field = |k: usize| rec.get(k).ok_or_else(|| parse_err(row_no, format!("missing field `{}`", headers.get(k).unwrap_or("?"))));
        let pair_id = field(idx[0])?.to_string();
        if pair_id.is_empty() {
            return Err(parse_err(row_no, "empty pair_id".into()));
        }
        let view = View::from_str(field(idx[3])?).map_err(|e| parse_err(row_no, e.to_string()))?;
        let y_r = parse_bit(field(idx[4])?).map_err(|m| parse_err(row_no, format!("y_r: {m}")))?;
        let y_l = parse_bit(field(idx[5])?).map_err(|m| parse_err(row_no, format!("y_l: {m}")))?;
        let derived = asymmetry_label(y_r, y_l);
        let y_asy = match c_asy.and_then(|c| rec.get(c)).filter(|s| !s.is_empty()) {
            Some(s) => {
                let v = parse_bit(s).map_err(|m| parse_err(row_no, format!("y_asy: {m}")))?;
                if v != derived {
                    return Err(Error::Validation(format!(
                        "{}: row {row_no}: y_asy={} contradicts y_r={}, y_l={}",
                        path.display(),
                        v as u8,
                        y_r as u8,
                        y_l as u8
                    )));
                }
                v
            }
            None => derived,
        };
        let split = match c_split.and_then(|c| rec.get(c)).filter(|s| !s.is_empty()) {
            Some(s) => Some(Split::from_str(s).map_err(|e| parse_err(row_no, e.to_string()))?),
            None => None,
        };
        manifest.rows.push(ManifestRow {
            pair_id,
            right_path: PathBuf::from(field(idx[1])?),
            left_path: PathBuf::from(field(idx[2])?),
            view,
            y_r,
            y_l,
            y_asy,
            mask_r_path: opt_path(c_mr.and_then(|c| rec.get(c))),
            mask_l_path: opt_path(c_ml.and_then(|c| rec.get(c))),
            split,
        });
    }
    manifest.validate()?;
    for row in &manifest.rows {
        let paths = [Some(&row.right_path), Some(&row.left_path), row.mask_r_path.as_ref(), row.mask_l_path.as_ref()];
        for p in paths.into_iter().flatten() {
            let full = manifest.resolve(p);
            if !full.is_file() {
                return Err(Error::io(full, std::io::Error::new(std::io::ErrorKind::NotFound, "referenced file does not exist")));
            }
        }
    }
    Ok(manifest)
}

pub fn write_manifest(path: impl AsRef<Path>, manifest: &Manifest) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))?;
    let io = |e: csv::Error| Error::io(path, std::io::Error::other(e.to_string()));
    w.write_record(["pair_id", "right_path", "left_path", "view", "y_r", "y_l", "y_asy", "mask_r_path", "mask_l_path", "split"])
        .map_err(io)?;
    let s = |p: &Option<PathBuf>| p.as_ref().map(|p| p.to_string_lossy().into_owned()).unwrap_or_default();
    let b = |v: bool| if v { "1".to_string() } else { "0".to_string() };
    for r in &manifest.rows {
        w.write_record([
            r.pair_id.clone(),
            r.right_path.to_string_lossy().into_owned(),
            r.left_path.to_string_lossy().into_owned(),
            r.view.to_string(),
            b(r.y_r),
            b(r.y_l),
            b(r.y_asy),
            s(&r.mask_r_path),
            s(&r.mask_l_path),
            r.split.map(|s| s.to_string()).unwrap_or_default(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
