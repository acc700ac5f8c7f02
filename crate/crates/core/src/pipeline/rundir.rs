use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::{Error, Result};

/// A run directory held under an exclusive lock file for its lifetime.
///
/// Layout:
/// ```text
/// config.toml        snapshot of the effective configuration
/// manifest.txt       every artifact file, relative paths, sorted
/// checkpoints/<stage>/...
/// logs/<stage>.csv, logs/<stage>_disc.csv
/// replays/
/// report.json, summary.csv, heatmaps/
/// ```
#[derive(Debug)]
pub struct RunDir {
    root: PathBuf,
    lock: PathBuf,
}

impl RunDir {
    pub const LOCK: &'static str = ".lock";

    pub fn open(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        let lock = root.join(Self::LOCK);
        match OpenOptions::new().write(true).create_new(true).open(&lock) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                return Err(Error::InvalidState(format!(
                    "{} is locked by another command (remove {} if it is stale)",
                    root.display(),
                    lock.display()
                )))
            }
            Err(e) => return Err(Error::io(&lock, e)),
        }
        Ok(Self { root: root.to_path_buf(), lock })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, rel: impl AsRef<Path>) -> PathBuf {
        self.root.join(rel)
    }

    pub fn stage_dir(&self, stage: &str) -> Result<PathBuf> {
        let d = self.root.join("checkpoints").join(stage);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        Ok(d)
    }

    pub fn write(&self, rel: impl AsRef<Path>, contents: impl AsRef<[u8]>) -> Result<PathBuf> {
        let p = self.root.join(rel);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(&p, contents).map_err(|e| Error::io(&p, e))?;
        Ok(p)
    }

    /// Rewrites `manifest.txt` with every file currently under the root.
    pub fn write_manifest(&self) -> Result<()> {
        let mut files = Vec::new();
        collect_files(&self.root, &self.root, &mut files)?;
        files.retain(|f| f != Self::LOCK && f != "manifest.txt");
        files.sort();
        let mut text = files.join("\n");
        text.push('\n');
        self.write("manifest.txt", text)?;
        Ok(())
    }
}

impl Drop for RunDir {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.lock);
    }
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<String>) -> Result<()> {
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else if let Ok(rel) = path.strip_prefix(root) {
            out.push(rel.to_string_lossy().replace('\\', "/"));
        }
    }
    Ok(())
}

/// Append-only CSV file. The header is written only when the file is new.
#[derive(Debug)]
pub struct CsvLog {
    path: PathBuf,
    file: File,
}

impl CsvLog {
    pub fn open(path: &Path, header: &str) -> Result<Self> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let fresh = !path.exists() || fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
        let mut file = OpenOptions::new().create(true).append(true).open(path).map_err(|e| Error::io(path, e))?;
        if fresh {
            writeln!(file, "{header}").map_err(|e| Error::io(path, e))?;
        }
        Ok(Self { path: path.to_path_buf(), file })
    }

    pub fn row(&mut self, line: &str) -> Result<()> {
        writeln!(self.file, "{line}").map_err(|e| Error::io(&self.path, e))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lock_is_exclusive_and_released() {
        let tmp = tempfile::tempdir().unwrap();
        let a = RunDir::open(tmp.path()).unwrap();
        assert!(RunDir::open(tmp.path()).is_err());
        drop(a);
        assert!(RunDir::open(tmp.path()).is_ok());
    }

    #[test]
    fn csv_appends_without_repeating_header() {
        let tmp = tempfile::tempdir().unwrap();
        let p = tmp.path().join("logs/x.csv");
        CsvLog::open(&p, "a,b").unwrap().row("1,2").unwrap();
        CsvLog::open(&p, "a,b").unwrap().row("3,4").unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "a,b\n1,2\n3,4\n");
    }

    #[test]
    fn manifest_lists_files() {
        let tmp = tempfile::tempdir().unwrap();
        let run = RunDir::open(tmp.path()).unwrap();
        run.write("b/c.txt", "x").unwrap();
        run.write("a.txt", "y").unwrap();
        run.write_manifest().unwrap();
        assert_eq!(fs::read_to_string(run.path("manifest.txt")).unwrap(), "a.txt\nb/c.txt\n");
    }
}
