//! Output bookkeeping: every file a command writes is registered so a failed
//! command can remove what it left behind.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

pub struct Outputs {
    created_dirs: Vec<PathBuf>,
    files: Vec<PathBuf>,
    committed: bool,
}

impl Outputs {
    pub fn new() -> Self {
        Outputs {
            created_dirs: Vec::new(),
            files: Vec::new(),
            committed: false,
        }
    }

    /// Creates `dir` (and missing parents), remembering which ones are new.
    pub fn dir(&mut self, dir: &Path) -> Result<PathBuf> {
        let mut missing = Vec::new();
        let mut cur = Some(dir);
        while let Some(d) = cur {
            if d.as_os_str().is_empty() || d.exists() {
                break;
            }
            missing.push(d.to_path_buf());
            cur = d.parent();
        }
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        missing.reverse();
        self.created_dirs.extend(missing);
        Ok(dir.to_path_buf())
    }

    /// Registers `path` as an output and makes sure its directory exists.
    pub fn file(&mut self, path: &Path) -> Result<PathBuf> {
        if let Some(parent) = path.parent() {
            self.dir(parent)?;
        }
        self.files.push(path.to_path_buf());
        Ok(path.to_path_buf())
    }

    pub fn json<T: Serialize>(&mut self, path: &Path, value: &T) -> Result<()> {
        let p = self.file(path)?;
        mta_core::data::write_json(&p, value)?;
        Ok(())
    }

    pub fn csv<S: AsRef<str>>(&mut self, path: &Path, header: &[&str], rows: &[Vec<S>]) -> Result<()> {
        let p = self.file(path)?;
        let mut w = csv::Writer::from_path(&p).with_context(|| format!("writing {}", p.display()))?;
        w.write_record(header)?;
        for row in rows {
            w.write_record(row.iter().map(|s| s.as_ref()))?;
        }
        w.flush().with_context(|| format!("writing {}", p.display()))?;
        Ok(())
    }

    pub fn commit(mut self) {
        self.committed = true;
    }
}

impl Drop for Outputs {
    fn drop(&mut self) {
        if self.committed {
            return;
        }
        for f in &self.files {
            let _ = fs::remove_file(f);
        }
        for d in self.created_dirs.iter().rev() {
            let _ = fs::remove_dir(d);
        }
    }
}
