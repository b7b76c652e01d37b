//! Atomic file output: write to a sibling temp file, then rename.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    // Temp files are created owner-only; outputs should look like plain files.
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        tmp.as_file()
            .set_permissions(std::fs::Permissions::from_mode(0o644))
            .map_err(|e| Error::io(path, e))?;
    }
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

/// Fills a sibling temp directory with `fill`, then swaps it in for `dir`.
/// On failure `dir` is left as it was.
pub fn write_dir_atomic(dir: &Path, fill: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    let parent = match dir.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    let tmp = tempfile::Builder::new()
        .prefix(".phase-tmp")
        .tempdir_in(parent)
        .map_err(|e| Error::io(parent, e))?;
    fill(tmp.path())?;
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        std::fs::set_permissions(tmp.path(), std::fs::Permissions::from_mode(0o755))
            .map_err(|e| Error::io(tmp.path(), e))?;
    }
    if dir.exists() {
        let old = tempfile::Builder::new()
            .prefix(".phase-old")
            .tempdir_in(parent)
            .map_err(|e| Error::io(parent, e))?;
        let stash = old.path().join("prev");
        std::fs::rename(dir, &stash).map_err(|e| Error::io(dir, e))?;
        if let Err(e) = std::fs::rename(tmp.path(), dir) {
            let _ = std::fs::rename(&stash, dir);
            return Err(Error::io(dir, e));
        }
    } else {
        std::fs::rename(tmp.path(), dir).map_err(|e| Error::io(dir, e))?;
    }
    // The temp directory has moved; disarm its cleanup.
    let _ = tmp.keep();
    Ok(())
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

pub fn read_to_vec(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = read_to_vec(path)?;
    serde_json::from_slice(&bytes).map_err(|e| Error::format(path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn directory_swap_replaces_or_keeps() {
        let root = tempfile::tempdir().unwrap();
        let out = root.path().join("out");
        write_dir_atomic(&out, |d| write_atomic(&d.join("a"), b"1")).unwrap();
        assert_eq!(std::fs::read(out.join("a")).unwrap(), b"1");
        write_dir_atomic(&out, |d| write_atomic(&d.join("b"), b"2")).unwrap();
        assert!(!out.join("a").exists());
        let failed = write_dir_atomic(&out, |_| Err(Error::Config("stop".into())));
        assert!(failed.is_err());
        assert_eq!(std::fs::read(out.join("b")).unwrap(), b"2");
        let leftovers = std::fs::read_dir(root.path()).unwrap().count();
        assert_eq!(leftovers, 1);
    }
}
