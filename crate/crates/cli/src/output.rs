use std::path::{Path, PathBuf};

use crate::error::CliResult;

/// File sink that honors `--dry-run`: writes are recorded but skipped.
#[derive(Debug)]
pub struct Output {
    dry_run: bool,
    written: Vec<PathBuf>,
}

impl Output {
    pub fn new(dry_run: bool) -> Self {
        Output {
            dry_run,
            written: Vec::new(),
        }
    }

    pub fn write(&mut self, path: &Path, bytes: impl AsRef<[u8]>) -> CliResult<()> {
        if !self.dry_run {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| tongue_ema::Error::io(dir, e))?;
            }
            std::fs::write(path, bytes).map_err(|e| tongue_ema::Error::io(path, e))?;
        }
        self.written.push(path.to_path_buf());
        Ok(())
    }

    pub fn write_json<T: serde::Serialize>(&mut self, path: &Path, value: &T) -> CliResult<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(path, text)
    }

    pub fn dry_run(&self) -> bool {
        self.dry_run
    }

    pub fn paths(&self) -> &[PathBuf] {
        &self.written
    }
}
