//! Output directory handling: exclusive lock and CSV files stamped with the
//! config hash.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::exit::Failure;

pub const LOCK_FILE: &str = ".pathquant.lock";

/// Held for the lifetime of a command; removes the lock file on drop.
#[derive(Debug)]
pub struct OutputDir {
    dir: PathBuf,
    lock: PathBuf,
    hash: String,
}

impl OutputDir {
    pub fn acquire(dir: &Path, hash: &str) -> Result<Self, Failure> {
        fs::create_dir_all(dir).map_err(|e| Failure::io(format!("cannot create {}: {e}", dir.display())))?;
        let lock = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&lock) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                return Err(Failure::io(format!(
                    "{} is in use by another run (remove {} if stale)",
                    dir.display(),
                    lock.display()
                )))
            }
            Err(e) => return Err(Failure::io(format!("cannot lock {}: {e}", dir.display()))),
        }
        Ok(Self { dir: dir.to_path_buf(), lock, hash: hash.to_string() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Writes `name` as a `# config-hash` line followed by whatever `body` emits.
    pub fn write_csv<F>(&self, name: &str, body: F) -> anyhow::Result<PathBuf>
    where
        F: FnOnce(&mut BufWriter<File>) -> anyhow::Result<()>,
    {
        let path = self.path(name);
        let io = |e: std::io::Error| Failure::io(format!("cannot write {}: {e}", path.display()));
        let mut out = BufWriter::new(File::create(&path).map_err(io)?);
        writeln!(out, "# config-hash: {}", self.hash).map_err(io)?;
        body(&mut out)?;
        out.flush().map_err(io)?;
        Ok(path)
    }
}

impl Drop for OutputDir {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.lock);
    }
}
