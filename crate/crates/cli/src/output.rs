//! All-or-nothing output directories and CSV rendering.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use setrans::matrix::Matrix;
use tempfile::TempDir;

/// Files are written into a hidden sibling of the target and moved into
/// place only by [`Staging::commit`]; dropping it uncommitted removes them.
pub struct Staging {
    target: PathBuf,
    dir: TempDir,
}

impl Staging {
    pub fn new(target: &Path) -> Result<Self> {
        if target.exists() && !target.is_dir() {
            anyhow::bail!("{} exists and is not a directory", target.display());
        }
        let parent = match target.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        fs::create_dir_all(&parent).with_context(|| format!("cannot create {}", parent.display()))?;
        let dir = tempfile::Builder::new()
            .prefix(".setrans-staging-")
            .tempdir_in(&parent)
            .with_context(|| format!("cannot write to {}", parent.display()))?;
        Ok(Staging {
            target: target.to_path_buf(),
            dir,
        })
    }

    /// Where `rel` lives until commit.
    pub fn path(&self, rel: impl AsRef<Path>) -> PathBuf {
        self.dir.path().join(rel)
    }

    pub fn root(&self) -> &Path {
        self.dir.path()
    }

    pub fn write(&self, rel: impl AsRef<Path>, bytes: impl AsRef<[u8]>) -> Result<()> {
        let path = self.path(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, bytes).with_context(|| format!("cannot write {}", path.display()))
    }

    /// Moves every staged file into the target, replacing same-named files.
    pub fn commit(self) -> Result<()> {
        fs::create_dir_all(&self.target).with_context(|| format!("cannot create {}", self.target.display()))?;
        move_tree(self.dir.path(), &self.target)
    }
}

fn move_tree(from: &Path, to: &Path) -> Result<()> {
    let mut entries: Vec<_> = fs::read_dir(from)?.collect::<std::io::Result<_>>()?;
    entries.sort_by_key(|e| e.file_name());
    for entry in entries {
        let dest = to.join(entry.file_name());
        if entry.file_type()?.is_dir() {
            fs::create_dir_all(&dest)?;
            move_tree(&entry.path(), &dest)?;
        } else {
            fs::rename(entry.path(), &dest).with_context(|| format!("cannot move into {}", dest.display()))?;
        }
    }
    Ok(())
}

/// Rows are frames; the header names the columns `<col_prefix>0..`.
pub fn matrix_csv(m: &Matrix, row_name: &str, col_prefix: &str) -> String {
    let mut s = String::from(row_name);
    for c in 0..m.cols() {
        write!(s, ",{col_prefix}{c}").unwrap();
    }
    s.push('\n');
    for r in 0..m.rows() {
        write!(s, "{r}").unwrap();
        for v in m.row(r) {
            write!(s, ",{v}").unwrap();
        }
        s.push('\n');
    }
    s
}

/// Inverse of [`matrix_csv`], ignoring the row-index column.
pub fn parse_matrix_csv(text: &str) -> Result<Matrix> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let row = line
            .split(',')
            .skip(1)
            .map(|t| t.parse::<f64>().with_context(|| format!("line {}: bad value {t:?}", i + 1)))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(Matrix::from_rows(&rows)?)
}

/// Makes a flat, filesystem-safe stem from a manifest path.
pub fn clip_stem(path: &Path) -> String {
    let no_ext = path.with_extension("");
    no_ext
        .to_string_lossy()
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}
