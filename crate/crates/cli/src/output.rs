use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use tempfile::NamedTempFile;

use crate::Failure;

/// Files staged next to their destinations and renamed into place together,
/// so a failed run leaves no partial output behind.
#[derive(Default)]
pub struct Staged {
    files: Vec<(NamedTempFile, PathBuf)>,
}

impl Staged {
    pub fn add(&mut self, path: &Path, contents: &str) -> Result<(), Failure> {
        let dir = match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p,
            _ => Path::new("."),
        };
        let mut tmp = NamedTempFile::new_in(dir)
            .with_context(|| format!("cannot create a file in {}", dir.display()))
            .map_err(Failure::Runtime)?;
        tmp.write_all(contents.as_bytes())
            .and_then(|_| tmp.flush())
            .with_context(|| format!("cannot write {}", path.display()))
            .map_err(Failure::Runtime)?;
        self.files.push((tmp, path.to_path_buf()));
        Ok(())
    }

    pub fn commit(self) -> Result<(), Failure> {
        let mut done: Vec<PathBuf> = Vec::new();
        for (tmp, path) in self.files {
            if let Err(e) = tmp.persist(&path) {
                for p in &done {
                    let _ = std::fs::remove_file(p);
                }
                return Err(Failure::Runtime(
                    anyhow::Error::new(e.error).context(format!("cannot write {}", path.display())),
                ));
            }
            done.push(path);
        }
        Ok(())
    }
}

/// Writes `json` to `path` atomically, or to standard output when no path is given.
/// The summary goes to standard output, or to standard error when the JSON is there.
pub fn emit(json: &str, path: Option<&Path>, summary: &str) -> Result<(), Failure> {
    match path {
        Some(path) => {
            let mut staged = Staged::default();
            staged.add(path, json)?;
            staged.commit()?;
            print!("{summary}");
        }
        None => {
            print!("{json}");
            eprint!("{summary}");
        }
    }
    Ok(())
}

pub fn to_json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("reports serialize") + "\n"
}
