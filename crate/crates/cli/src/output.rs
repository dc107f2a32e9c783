//! Report and data-file writing. Every file is written to a temporary name
//! in the output directory and renamed into place.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

pub struct Outputs {
    dir: PathBuf,
    csv: bool,
    files: Vec<String>,
}

impl Outputs {
    pub fn new(dir: PathBuf, csv: bool) -> Result<Self> {
        fs::create_dir_all(&dir).with_context(|| format!("creating output directory {}", dir.display()))?;
        Ok(Outputs {
            dir,
            csv,
            files: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Files written so far, in order.
    pub fn files(&self) -> &[String] {
        &self.files
    }

    /// Writes a CSV unless CSV output is switched off.
    pub fn csv(&mut self, name: &str, contents: &str) -> Result<()> {
        if self.csv {
            self.write(name, contents.as_bytes())?;
        }
        Ok(())
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value).context("serializing report")?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    /// Writes without recording the name in `files`.
    pub fn json_unlisted<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value).context("serializing report")?;
        text.push('\n');
        write_atomic(&self.dir.join(name), text.as_bytes())
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        write_atomic(&self.dir.join(name), bytes)?;
        self.files.push(name.to_string());
        Ok(())
    }
}

pub fn write_atomic(dest: &Path, bytes: &[u8]) -> Result<()> {
    let name = dest.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dest.with_file_name(format!(".{name}.tmp"));
    fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, dest).with_context(|| format!("renaming {} to {}", tmp.display(), dest.display()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn writes_leave_no_temporaries() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = Outputs::new(dir.path().join("nested"), false).unwrap();
        out.csv("skipped.csv", "a\n").unwrap();
        out.json("r.json", &serde_json::json!({"x": 1})).unwrap();
        let names: Vec<_> = fs::read_dir(out.dir())
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .collect();
        assert_eq!(names, ["r.json"]);
        assert_eq!(out.files(), ["r.json"]);
        assert_eq!(fs::read_to_string(out.dir().join("r.json")).unwrap(), "{\n  \"x\": 1\n}\n");
    }
}
