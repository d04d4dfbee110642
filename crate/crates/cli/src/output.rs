use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use evfuse::analysis::ReportRecord;
use evfuse::{Error, Result};

pub const LOG_FILE: &str = "run.log";

/// Output files held in memory until the command has fully succeeded, so a
/// failing command leaves nothing behind.
#[derive(Default)]
pub struct Staged {
    files: Vec<(String, String)>,
}

impl Staged {
    pub fn add(&mut self, name: &str, contents: String) {
        self.files.push((name.to_string(), contents));
    }

    pub fn report(&mut self, stem: &str, report: &ReportRecord) -> Result<()> {
        report.validate()?;
        self.add(&format!("{stem}.tsv"), report.to_tsv());
        self.add(&format!("{stem}.json"), report.manifest_json(&format!("{stem}.tsv")));
        Ok(())
    }

    /// Writes every staged file into `dir` and appends a timestamped entry
    /// to the sidecar log.
    pub fn commit(self, dir: &Path, command: &str) -> Result<Vec<PathBuf>> {
        let io = |path: &Path, source| Error::Io {
            path: path.to_path_buf(),
            source,
        };
        fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
        let mut written = Vec::new();
        for (name, contents) in &self.files {
            let p = dir.join(name);
            fs::write(&p, contents).map_err(|e| io(&p, e))?;
            written.push(p);
        }
        let log = dir.join(LOG_FILE);
        let stamp = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
        let names: Vec<&str> = self.files.iter().map(|(n, _)| n.as_str()).collect();
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log)
            .map_err(|e| io(&log, e))?;
        writeln!(f, "{stamp}\t{command}\t{}", names.join(",")).map_err(|e| io(&log, e))?;
        Ok(written)
    }
}
