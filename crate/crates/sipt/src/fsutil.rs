//! Filesystem helpers shared by artifact writers.

use std::fs;
use std::io;
use std::path::Path;

/// Writes `bytes` to `path` atomically: the content lands in a sibling
/// temporary file first and is renamed into place, so readers never observe a
/// partially written artifact.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = Path::new(&tmp);
    fs::write(tmp, bytes)?;
    fs::rename(tmp, path)
}
