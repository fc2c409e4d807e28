//! Output staging: everything is written to a temporary sibling first and
//! renamed into place once complete.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use dynregion::detections::FrameId;
use tempfile::{NamedTempFile, TempDir};

use crate::error::{CliError, Context};

fn parent_of(path: &Path) -> &Path {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    }
}

/// Writes `path` through a temporary file in the same directory.
pub fn write_atomic(
    path: &Path,
    body: impl FnOnce(&mut dyn Write) -> Result<(), CliError>,
) -> Result<(), CliError> {
    let dir = parent_of(path);
    fs::create_dir_all(dir).context(|| format!("creating {}", dir.display()))?;
    let mut tmp = NamedTempFile::new_in(dir).context(|| format!("staging {}", path.display()))?;
    {
        let mut w = BufWriter::new(tmp.as_file_mut());
        body(&mut w)?;
        w.flush().context(|| format!("writing {}", path.display()))?;
    }
    tmp.persist(path)
        .map_err(|e| e.error)
        .context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    write_atomic(path, |w| w.write_all(text.as_bytes()).context(|| format!("writing {}", path.display())))
}

/// A directory filled under a temporary name and swapped in by [`StagedDir::commit`].
/// Dropping it uncommitted removes the partial output.
pub struct StagedDir {
    tmp: TempDir,
    target: PathBuf,
}

impl StagedDir {
    pub fn new(target: &Path) -> Result<Self, CliError> {
        let dir = parent_of(target);
        fs::create_dir_all(dir).context(|| format!("creating {}", dir.display()))?;
        let name = target.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let tmp = tempfile::Builder::new()
            .prefix(&format!(".{name}."))
            .tempdir_in(dir)
            .context(|| format!("staging {}", target.display()))?;
        Ok(Self {
            tmp,
            target: target.to_path_buf(),
        })
    }

    pub fn path(&self) -> &Path {
        self.tmp.path()
    }

    pub fn commit(self) -> Result<(), CliError> {
        let staged = self.tmp.keep();
        if self.target.exists() {
            fs::remove_dir_all(&self.target).context(|| format!("replacing {}", self.target.display()))?;
        }
        fs::rename(&staged, &self.target).context(|| format!("renaming into {}", self.target.display()))?;
        Ok(())
    }
}

/// File stem shared by every per-frame artifact.
pub fn frame_stem(id: FrameId) -> String {
    format!("{id:06}")
}

/// `<dir>/<stem>.ppm` or `<dir>/<stem>.pgm`, whichever exists.
pub fn frame_image(dir: &Path, id: FrameId) -> Result<PathBuf, CliError> {
    let stem = frame_stem(id);
    ["ppm", "pgm", "pnm"]
        .iter()
        .map(|ext| dir.join(format!("{stem}.{ext}")))
        .find(|p| p.exists())
        .ok_or_else(|| CliError::Input(format!("no image for frame {id} in {}", dir.display())))
}

/// Creates `dir` and checks it is writable before a stage does any work.
pub fn prepare_output(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Config(format!("cannot create output {}: {e}", dir.display())))
}
